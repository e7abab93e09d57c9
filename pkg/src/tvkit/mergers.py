"""Merging multiple fine-tuned checkpoints into one.

Three families live here:

* residual mergers that fold several task vectors into one (plain sum,
  magnitude-trimmed sign election, consensus masking) plus a pipeline that
  composes any of them with depth-wise scaling;
* soups that average whole checkpoints (uniform and greedy);
* two-model interpolations (robustness interpolation against the base and
  a convex blend of two preference residuals over a shared starting point).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ToolkitError
from .schedule import ScalingSchedule, alpha_heuristic, scale
from .store import NamedTensorMap
from .topology import DepthMap
from .vectors import TaskVector, apply, combine, extract

logger = logging.getLogger(__name__)


def _check_vectors(vectors: list[TaskVector], what: str) -> None:
    if not vectors:
        raise ToolkitError(f"{what} needs at least one task vector")
    first = vectors[0]
    for v in vectors[1:]:
        if set(v.entries) != set(first.entries):
            raise ToolkitError(f"{what}: task vectors disagree on tensor names")
        for name in first.entries:
            if v.entries[name].shape != first.entries[name].shape:
                raise ToolkitError(f"{what}: shape mismatch for {name!r}")


def task_arithmetic_merge(vectors: list[TaskVector]) -> TaskVector:
    """Plain sum of task vectors."""
    _check_vectors(vectors, "task_arithmetic_merge")
    return combine([(1.0, v) for v in vectors])


def _trim_to_top_fraction(vector: TaskVector, keep_fraction: float) -> dict[str, np.ndarray]:
    """Zero all but the top keep_fraction of coordinates by global magnitude.

    The count kept is k = ceil(keep_fraction * n) over the concatenation of
    all entries; coordinates whose magnitude ties the k-th largest are all
    kept, so the result does not depend on tensor ordering.
    """
    magnitudes = np.concatenate(
        [np.abs(np.asarray(vector.entries[name], dtype=np.float64)).ravel() for name in sorted(vector.entries)]
    )
    n = magnitudes.size
    k = math.ceil(keep_fraction * n)
    if k >= n:
        return {name: np.asarray(arr) for name, arr in vector.entries.items()}
    threshold = np.partition(magnitudes, n - k)[n - k]
    return {
        name: np.where(np.abs(arr) >= threshold, arr, np.zeros_like(arr))
        for name, arr in vector.entries.items()
    }


def ties_merge(vectors: list[TaskVector], keep_fraction: float = 0.2) -> TaskVector:
    """Trim, elect a sign per coordinate, then average the agreeing entries.

    Each vector is first trimmed to its top keep_fraction coordinates by
    magnitude (globally over the whole vector). Each coordinate's sign is
    elected from the sum of trimmed values (exact zero with surviving
    entries counts as positive; these ties are logged). The output is the
    mean of sign-agreeing nonzero entries, zero where no entry agrees.
    """
    _check_vectors(vectors, "ties_merge")
    if not 0.0 < keep_fraction <= 1.0:
        raise ToolkitError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    trimmed = [_trim_to_top_fraction(v, keep_fraction) for v in vectors]
    entries = {}
    tie_count = 0
    for name in vectors[0].entries:
        stack = np.stack([t[name] for t in trimmed])
        total = stack.sum(axis=0)
        has_signal = np.abs(stack).sum(axis=0) > 0
        tie_count += int(np.count_nonzero((total == 0) & has_signal))
        positive_elected = total >= 0
        agree = np.where(positive_elected, stack > 0, stack < 0)
        count = agree.sum(axis=0)
        summed = (stack * agree).sum(axis=0)
        entries[name] = np.where(count > 0, summed / np.maximum(count, 1), np.zeros_like(total))
    if tie_count:
        logger.info("ties_merge: %d coordinate sign ties resolved to positive", tie_count)
    fingerprints = {v.base_fingerprint for v in vectors}
    shared = fingerprints.pop() if len(fingerprints) == 1 else None
    return TaskVector(entries=entries, base_fingerprint=shared)


def consensus_merge(
    vectors: list[TaskVector],
    mask_lambda: float = 0.4,
    prune_threshold: int = 2,
) -> TaskVector:
    """Sum the vectors, then keep only coordinates enough tasks rely on.

    Task t considers coordinate j important when |tau_t[j]| is at least
    mask_lambda times |sum[j] - tau_t[j]| (its weight vs everyone else's).
    Coordinates important to fewer than prune_threshold tasks are zeroed.
    """
    _check_vectors(vectors, "consensus_merge")
    if len(vectors) < 2:
        raise ToolkitError("consensus_merge needs at least two task vectors")
    if mask_lambda < 0:
        raise ToolkitError(f"mask_lambda must be non-negative, got {mask_lambda}")
    if prune_threshold not in (1, 2):
        raise ToolkitError(f"prune_threshold must be 1 or 2, got {prune_threshold}")
    entries = {}
    for name in vectors[0].entries:
        stack = np.stack([v.entries[name] for v in vectors])
        total = stack.sum(axis=0)
        counts = np.zeros(total.shape, dtype=np.int64)
        for t in range(stack.shape[0]):
            counts += np.abs(stack[t]) >= mask_lambda * np.abs(total - stack[t])
        entries[name] = np.where(counts >= prune_threshold, total, np.zeros_like(total))
    fingerprints = {v.base_fingerprint for v in vectors}
    shared = fingerprints.pop() if len(fingerprints) == 1 else None
    return TaskVector(entries=entries, base_fingerprint=shared)


MERGE_METHODS = {
    "ta": task_arithmetic_merge,
    "ties": ties_merge,
    "consensus": consensus_merge,
}


@dataclass
class MergeResult:
    model: NamedTensorMap
    merged_vector: TaskVector
    alpha: float
    schedule: ScalingSchedule


def merge_pipeline(
    base: NamedTensorMap,
    vectors: list[TaskVector],
    depths: DepthMap,
    method: str = "ta",
    beta: float = 0.0,
    shape: str = "linear",
    out_of_block_policy: str = "alpha",
    method_kwargs: dict | None = None,
) -> MergeResult:
    """Merge residuals, derive alpha from norms, scale depth-wise, apply.

    The merged vector's base factor comes from alpha_heuristic on the raw
    (pre-scaling) vectors; beta and shape set how much extra the deeper
    blocks keep.
    """
    if method not in MERGE_METHODS:
        raise ToolkitError(f"unknown merge method {method!r}; choose from {sorted(MERGE_METHODS)}")
    merged = MERGE_METHODS[method](vectors, **(method_kwargs or {}))
    alpha = alpha_heuristic(vectors, merged)
    schedule = ScalingSchedule(alpha=alpha, beta=beta, shape=shape)
    scaled = scale(merged, depths, schedule, out_of_block_policy=out_of_block_policy)
    model = apply(base, scaled)
    return MergeResult(model=model, merged_vector=merged, alpha=alpha, schedule=schedule)


def uniform_soup(
    members: list[NamedTensorMap],
    base: NamedTensorMap,
    include_base: bool = False,
) -> NamedTensorMap:
    """Average of member checkpoints, expressed as base + mean residual.

    include_base adds the base itself as one more (zero-residual) member.
    """
    if not members:
        raise ToolkitError("uniform_soup needs at least one member")
    residuals = [extract(m, base) for m in members]
    divisor = len(members) + (1 if include_base else 0)
    mean = combine([(1.0 / divisor, r) for r in residuals])
    return apply(base, mean)


@dataclass
class SoupResult:
    model: NamedTensorMap
    selected: list[int]
    history: list[tuple[int, float, bool]] = field(default_factory=list)
    final_metric: float | None = None


def greedy_soup(
    members: list[NamedTensorMap],
    base: NamedTensorMap,
    evaluator: Callable[[NamedTensorMap], float],
    strict_improvement: bool = False,
    depths: DepthMap | None = None,
    lines_beta: float | None = None,
    out_of_block_policy: str = "alpha",
) -> SoupResult:
    """Greedily grow a checkpoint average, keeping members that help.

    Members are visited in order of descending individual metric (stable on
    ties); a candidate stays if the tentative average's metric does not
    drop (strictly improves, with strict_improvement). When lines_beta is
    given, the final soup's residual against the base is rescaled with the
    schedule (alpha=1, beta=lines_beta) before the result is assembled.
    """
    if not members:
        raise ToolkitError("greedy_soup needs at least one member")
    try:
        individual = [float(evaluator(m)) for m in members]
    except ToolkitError:
        raise
    except Exception as exc:
        raise ToolkitError(f"evaluator failed on an individual member: {exc}") from exc
    order = sorted(range(len(members)), key=lambda i: -individual[i])

    selected = [order[0]]
    current_metric = individual[order[0]]
    history: list[tuple[int, float, bool]] = []
    for idx in order[1:]:
        tentative = uniform_soup([members[i] for i in selected + [idx]], base)
        try:
            metric = float(evaluator(tentative))
        except ToolkitError:
            raise
        except Exception as exc:
            raise ToolkitError(f"evaluator failed on the soup extended with member {idx}: {exc}") from exc
        accepted = metric > current_metric if strict_improvement else metric >= current_metric
        history.append((idx, metric, accepted))
        if accepted:
            selected.append(idx)
            current_metric = metric

    model = uniform_soup([members[i] for i in selected], base)
    final_metric = current_metric
    if lines_beta is not None:
        if depths is None:
            raise ToolkitError("greedy_soup needs a depth map to rescale the final soup")
        residual = extract(model, base)
        schedule = ScalingSchedule(alpha=1.0, beta=lines_beta)
        model = apply(base, scale(residual, depths, schedule, out_of_block_policy=out_of_block_policy))
        try:
            final_metric = float(evaluator(model))
        except ToolkitError:
            raise
        except Exception as exc:
            raise ToolkitError(f"evaluator failed on the rescaled final soup: {exc}") from exc
    return SoupResult(model=model, selected=selected, history=history, final_metric=final_metric)


def wiseft_interpolate(
    base: NamedTensorMap,
    vector: TaskVector,
    gamma: float,
    depths: DepthMap | None = None,
    schedule: ScalingSchedule | None = None,
    out_of_block_policy: str = "alpha",
) -> NamedTensorMap:
    """Interpolate between the base and a fine-tuned direction.

    result = base + gamma * tau, with tau optionally rescaled depth-wise
    first. gamma=0 returns the base; gamma=1 returns the (possibly
    rescaled) fine-tuned model.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ToolkitError(f"gamma must lie in [0, 1], got {gamma}")
    if schedule is not None:
        if depths is None:
            raise ToolkitError("a schedule requires a depth map")
        vector = scale(vector, depths, schedule, out_of_block_policy=out_of_block_policy)
    return apply(base, vector, gamma)


def rewarded_interpolate(
    start: NamedTensorMap,
    first: TaskVector,
    second: TaskVector,
    weight: float,
    depths: DepthMap | None = None,
    apply_lines: bool = False,
    out_of_block_policy: str = "alpha",
) -> NamedTensorMap:
    """Convex blend of two preference residuals over a shared start.

    result = start + S(weight * first + (1 - weight) * second), where S is
    the identity, or the depth-wise schedule (alpha=1, beta=1) when
    apply_lines is set. weight in {0, 1} reproduces the respective
    single-residual model exactly when no rescaling is applied.
    """
    if not 0.0 <= weight <= 1.0:
        raise ToolkitError(f"weight must lie in [0, 1], got {weight}")
    blended = combine([(weight, first), (1.0 - weight, second)])
    if apply_lines:
        if depths is None:
            raise ToolkitError("apply_lines requires a depth map")
        blended = scale(blended, depths, ScalingSchedule(alpha=1.0, beta=1.0), out_of_block_policy=out_of_block_policy)
    return apply(start, blended)
