"""Depth-wise scaling of task vectors.

Deeper residual blocks keep more of a fine-tuning residual than shallow
ones: block d out of L gets the factor

    factor(d) = alpha + beta * g(d / (L - 1))

with g the identity for the 'linear' shape, square root for 'sqrt', and
square for 'quadratic'. The endpoints are exact: depth 0 scales by alpha
and depth L-1 by alpha + beta. Parameters outside any block follow the
configured policy (the alpha factor by default); excluded parameters pass
through untouched.

The single-knob form keeps the deepest block whole: gamma_form(g) uses
alpha = g, beta = 1 - g, so g = 1 is the identity and g = 0 keeps only the
base model's shallow weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateMergeError, ScheduleError, ToolkitError
from .topology import DepthMap
from .vectors import TaskVector, combine, norm

SHAPES = ("linear", "sqrt", "quadratic")


@dataclass(frozen=True)
class ScalingSchedule:
    """Scaling profile over normalized depth: alpha + beta * g(t)."""

    alpha: float
    beta: float = 0.0
    shape: str = "linear"

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ScheduleError("schedule parameters must be finite")
        if self.alpha < 0:
            raise ScheduleError(f"alpha must be non-negative, got {self.alpha}")
        if self.shape not in SHAPES:
            raise ScheduleError(f"shape must be one of {SHAPES}, got {self.shape!r}")

    @classmethod
    def gamma_form(cls, gamma: float, shape: str = "linear") -> "ScalingSchedule":
        """Single-knob schedule: alpha = gamma, beta = 1 - gamma."""
        if not 0.0 <= gamma <= 1.0:
            raise ScheduleError(f"gamma must lie in [0, 1], got {gamma}")
        return cls(alpha=gamma, beta=1.0 - gamma, shape=shape)


def factor(schedule: ScalingSchedule, depth: int, num_blocks: int) -> float:
    """Scaling factor for 0-based depth in a num_blocks-deep stack."""
    if num_blocks < 2:
        raise ScheduleError(f"depth-wise scaling needs at least 2 blocks, got {num_blocks}")
    if not 0 <= depth <= num_blocks - 1:
        raise ScheduleError(f"depth {depth} outside [0, {num_blocks - 1}]")
    t = depth / (num_blocks - 1)
    if schedule.shape == "sqrt":
        g = math.sqrt(t)
    elif schedule.shape == "quadratic":
        g = t * t
    else:
        g = t
    return schedule.alpha + schedule.beta * g


def scale(
    vector: TaskVector,
    depths: DepthMap,
    schedule: ScalingSchedule,
    out_of_block_policy: str = "alpha",
) -> TaskVector:
    """Apply the depth-wise schedule to a task vector.

    Every entry must be classified by the depth map: in-block entries scale
    by factor(depth), out-of-block entries by alpha/1/0 per policy, and
    excluded entries pass through unchanged.
    """
    if out_of_block_policy not in ("alpha", "one", "zero"):
        raise ScheduleError(f"unknown out_of_block_policy {out_of_block_policy!r}")
    classified = depths.all_names()
    unknown = sorted(set(vector.entries) - classified)
    if unknown:
        raise ToolkitError(f"task vector entries not classified by depth map: {unknown}")
    if out_of_block_policy == "alpha":
        oob_factor = schedule.alpha
    elif out_of_block_policy == "one":
        oob_factor = 1.0
    else:
        oob_factor = 0.0
    entries = {}
    for name, arr in vector.entries.items():
        if name in depths.depths:
            entries[name] = arr * factor(schedule, depths.depths[name], depths.num_blocks)
        elif name in depths.out_of_block:
            entries[name] = arr * oob_factor
        else:
            entries[name] = arr.copy()
    return TaskVector(entries=entries, base_fingerprint=vector.base_fingerprint)


def alpha_heuristic(vectors: list[TaskVector], merged: TaskVector) -> float:
    """Data-free base scaling for a merged vector.

    alpha = (1 / N) * ||sum of raw vectors|| / ||merged vector||, computed
    on the vectors before any depth-wise scaling. A merged vector with zero
    norm has no usable scale and raises DegenerateMergeError.
    """
    if not vectors:
        raise ToolkitError("alpha_heuristic needs at least one task vector")
    summed = combine([(1.0, v) for v in vectors])
    merged_norm = norm(merged)
    if merged_norm == 0.0:
        raise DegenerateMergeError("merged vector has zero norm; cannot derive a scaling")
    return (1.0 / len(vectors)) * (norm(summed) / merged_norm)


@dataclass(frozen=True)
class TradeoffCandidate:
    """One point on a target-vs-control trade-off curve."""

    gamma: float
    target_metric: float
    control_metric: float


def select_gamma(candidates: list[TradeoffCandidate], target_weight: float = 2.0) -> TradeoffCandidate:
    """Pick the candidate maximizing target_weight * target + control.

    Ties go to the larger gamma (the lighter edit).
    """
    if not candidates:
        raise ToolkitError("select_gamma needs at least one candidate")
    best = None
    best_score = -math.inf
    for cand in candidates:
        score = target_weight * cand.target_metric + cand.control_metric
        if score > best_score or (score == best_score and best is not None and cand.gamma > best.gamma):
            best, best_score = cand, score
    return best
