"""Coefficient grids and evaluator plumbing.

A grid search builds a candidate model per coefficient, hands it to an
evaluator, and returns the best point plus the full trace. Evaluators are
either in-process callables or external commands speaking a one-line JSON
protocol over stdout (see run_evaluator).
"""

from __future__ import annotations

import json
import math
import os
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .errors import EvaluatorError, SearchError
from .store import NamedTensorMap, write_checkpoint

TEMP_DIR_ENV = "TVKIT_TMPDIR"
SPLITS = ("val", "test")


@dataclass(frozen=True)
class Grid:
    """Non-empty, strictly increasing sequence of coefficients."""

    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise SearchError("grid must contain at least one value")
        if any(not math.isfinite(v) for v in self.values):
            raise SearchError("grid values must be finite")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise SearchError("grid values must be strictly increasing")

    @classmethod
    def from_string(cls, text: str) -> "Grid":
        """Parse 'start:stop:step' (inclusive endpoints) or 'a,b,c'."""
        text = text.strip()
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise SearchError(f"range grid must be start:stop:step, got {text!r}")
            try:
                start, stop, step = (float(p) for p in parts)
            except ValueError as exc:
                raise SearchError(f"bad number in grid {text!r}") from exc
            if step <= 0:
                raise SearchError("grid step must be positive")
            count = int(round((stop - start) / step))
            values = [round(start + i * step, 12) for i in range(count + 1)]
            values = [v for v in values if v <= stop + 1e-12]
            return cls(tuple(values))
        try:
            return cls(tuple(float(p) for p in text.split(",") if p.strip()))
        except ValueError as exc:
            raise SearchError(f"bad number in grid {text!r}") from exc

    @classmethod
    def regular(cls, start: float, stop: float, step: float) -> "Grid":
        return cls.from_string(f"{start}:{stop}:{step}")


# Default grids for coefficient tuning. Merging methods search their
# residual coefficient; soups search the applied-vector coefficient and the
# depth-slope separately.
TA_GRID = Grid.regular(0.1, 1.0, 0.1)
TIES_GRID = Grid.regular(0.1, 1.5, 0.1)
CONSENSUS_GRID = Grid.regular(0.1, 1.0, 0.1)
SOUP_COEFF_GRID = Grid.regular(1.0, 2.0, 0.1)
SOUP_SLOPE_GRID = Grid.regular(0.0, 1.0, 0.1)
CONSENSUS_PRUNE_CHOICES = (1, 2)


@dataclass(frozen=True)
class EvalResult:
    """A scalar validation metric plus optional per-task breakdown."""

    metric: float
    per_task: dict[str, float] | None = None

    def __post_init__(self):
        if not math.isfinite(self.metric):
            raise EvaluatorError(f"evaluator metric must be finite, got {self.metric}")


class GridSearchResult(NamedTuple):
    best_coefficient: float
    best: EvalResult
    trace: list[tuple[float, EvalResult]]


def grid_search(
    builder: Callable[[float], NamedTensorMap],
    grid: Grid,
    evaluator: Callable[[NamedTensorMap], EvalResult],
    jobs: int = 1,
) -> GridSearchResult:
    """Evaluate builder(c) for every c in the grid and keep the argmax.

    Ties prefer the smaller coefficient. The trace lists every grid point
    in order regardless of which won. jobs > 1 evaluates points in a
    thread pool; results are still reported in grid order.
    """

    def run_point(coefficient: float) -> EvalResult:
        try:
            model = builder(coefficient)
            result = evaluator(model)
        except EvaluatorError:
            raise
        except Exception as exc:
            raise EvaluatorError(f"evaluation failed at coefficient {coefficient}: {exc}") from exc
        if not isinstance(result, EvalResult):
            result = EvalResult(metric=float(result))
        return result

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_point, grid.values))
    else:
        results = [run_point(c) for c in grid.values]

    trace = list(zip(grid.values, results))
    best_coefficient, best = trace[0]
    for coefficient, result in trace[1:]:
        if result.metric > best.metric:
            best_coefficient, best = coefficient, result
    return GridSearchResult(best_coefficient, best, trace)


def _parse_protocol_output(stdout: str, context: str) -> EvalResult:
    try:
        payload = json.loads(stdout.strip())
    except json.JSONDecodeError as exc:
        raise EvaluatorError(f"{context}: output is not a JSON object: {exc}; got {stdout!r}") from exc
    if not isinstance(payload, dict):
        raise EvaluatorError(f"{context}: output must be a JSON object, got {type(payload).__name__}")
    if "metric" not in payload:
        raise EvaluatorError(f"{context}: output is missing the 'metric' field")
    metric = payload["metric"]
    if isinstance(metric, bool) or not isinstance(metric, (int, float)):
        raise EvaluatorError(f"{context}: 'metric' must be a number, got {metric!r}")
    per_task = payload.get("per_task")
    if per_task is not None:
        if not isinstance(per_task, dict) or not all(
            isinstance(k, str) and isinstance(v, (int, float)) and not isinstance(v, bool)
            for k, v in per_task.items()
        ):
            raise EvaluatorError(f"{context}: 'per_task' must map task names to numbers")
        per_task = {k: float(v) for k, v in per_task.items()}
    return EvalResult(metric=float(metric), per_task=per_task)


def run_evaluator(spec: str, checkpoint_path: str | os.PathLike, split: str) -> EvalResult:
    """Evaluate a checkpoint file through an evaluator spec.

    'cmd:<command>' runs the command with '--checkpoint PATH --split SPLIT'
    appended; it must print one JSON object {"metric": number, optional
    "per_task": {name: number}} to stdout and exit 0.
    'toy:<config.json>' evaluates with the built-in toy harness.
    """
    if split not in SPLITS:
        raise EvaluatorError(f"split must be one of {SPLITS}, got {split!r}")
    if spec.startswith("toy:"):
        from .toy import evaluate_checkpoint

        return evaluate_checkpoint(spec[len("toy:"):], checkpoint_path, split)
    if spec.startswith("cmd:"):
        command = spec[len("cmd:"):].strip()
        if not command:
            raise EvaluatorError("empty evaluator command")
        argv = shlex.split(command) + ["--checkpoint", os.fspath(checkpoint_path), "--split", split]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True)
        except OSError as exc:
            raise EvaluatorError(f"could not launch evaluator {argv[0]!r}: {exc}") from exc
        context = f"evaluator {argv[0]!r}"
        if proc.returncode != 0:
            detail = (proc.stderr or proc.stdout or "").strip()
            raise EvaluatorError(f"{context} exited with status {proc.returncode}: {detail}")
        return _parse_protocol_output(proc.stdout, context)
    raise EvaluatorError(f"unknown evaluator spec {spec!r}; expected 'cmd:...' or 'toy:...'")


def make_checkpoint_evaluator(spec: str, split: str, workdir: str | None = None) -> Callable[[NamedTensorMap], EvalResult]:
    """Wrap an evaluator spec as an in-process callable on tensor maps.

    Each call writes the candidate to a temporary checkpoint (under
    workdir, $TVKIT_TMPDIR, or the system temp dir) and runs the spec on it.
    """
    base_dir = workdir or os.environ.get(TEMP_DIR_ENV) or None

    def evaluate(model: NamedTensorMap) -> EvalResult:
        with tempfile.TemporaryDirectory(dir=base_dir, prefix="tvkit-eval-") as tmp:
            path = os.path.join(tmp, "candidate.safetensors")
            write_checkpoint(model, path)
            return run_evaluator(spec, path, split)

    return evaluate
