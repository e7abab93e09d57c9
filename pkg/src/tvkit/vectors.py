"""Task-vector algebra.

A task vector is the parameter-space residual of a fine-tuned model against
the checkpoint it started from: tau = theta_finetuned - theta_base. All
arithmetic here is exact elementwise numpy; reductions accumulate in
float64 in sorted name order so results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CompatibilityError, ToolkitError
from .store import NamedTensorMap, content_hash, read_checkpoint, validate_compatibility, write_checkpoint

RESIDUAL_KIND = "residual"


@dataclass
class TaskVector:
    """Named residual arrays plus the fingerprint of the base they came from."""

    entries: dict[str, np.ndarray]
    base_fingerprint: str | None = None

    def __post_init__(self):
        if not self.entries:
            raise ToolkitError("task vector must contain at least one tensor")
        for arr in self.entries.values():
            arr.flags.writeable = False

    def names(self) -> list[str]:
        return sorted(self.entries)


def _require_same_structure(entries_a: dict, entries_b: dict, what: str) -> None:
    if set(entries_a) != set(entries_b):
        missing = sorted(set(entries_a) - set(entries_b))
        extra = sorted(set(entries_b) - set(entries_a))
        raise CompatibilityError(f"{what}: name sets differ (missing {missing}, extra {extra})")
    for name in entries_a:
        if entries_a[name].shape != entries_b[name].shape:
            raise CompatibilityError(
                f"{what}: shape mismatch for {name!r}: {entries_a[name].shape} vs {entries_b[name].shape}"
            )


def extract(finetuned: NamedTensorMap, base: NamedTensorMap) -> TaskVector:
    """tau = finetuned - base. Both maps must agree on names and shapes."""
    report = validate_compatibility(base, finetuned)
    if not report.compatible:
        raise CompatibilityError(report)
    entries = {name: finetuned.entries[name] - base.entries[name] for name in base.entries}
    fingerprint = base.fingerprint if base.fingerprint is not None else content_hash(base)
    return TaskVector(entries=entries, base_fingerprint=fingerprint)


def apply(base: NamedTensorMap, vector: TaskVector, coefficient: float = 1.0) -> NamedTensorMap:
    """theta = base + coefficient * tau."""
    _require_same_structure(base.entries, vector.entries, "apply")
    entries = {
        name: base.entries[name] + coefficient * vector.entries[name] for name in base.entries
    }
    return NamedTensorMap(entries=entries, original_dtypes=dict(base.original_dtypes))


def combine(terms: list[tuple[float, TaskVector]]) -> TaskVector:
    """Weighted sum of task vectors, accumulated left to right."""
    if not terms:
        raise ToolkitError("combine needs at least one (coefficient, vector) term")
    first = terms[0][1]
    for _, vector in terms[1:]:
        _require_same_structure(first.entries, vector.entries, "combine")
    entries = {}
    for name in first.entries:
        acc = terms[0][0] * terms[0][1].entries[name]
        for coeff, vector in terms[1:]:
            acc = acc + coeff * vector.entries[name]
        entries[name] = acc
    fingerprints = {v.base_fingerprint for _, v in terms}
    shared = fingerprints.pop() if len(fingerprints) == 1 else None
    return TaskVector(entries=entries, base_fingerprint=shared)


def norm(vector: TaskVector) -> float:
    """Euclidean norm over the concatenation of all entries (float64)."""
    total = 0.0
    for name in sorted(vector.entries):
        flat = np.ascontiguousarray(vector.entries[name], dtype=np.float64).ravel()
        total += float(np.dot(flat, flat))
    return math.sqrt(total)


def zeros_like(vector: TaskVector) -> TaskVector:
    entries = {name: np.zeros_like(arr) for name, arr in vector.entries.items()}
    return TaskVector(entries=entries, base_fingerprint=vector.base_fingerprint)


def save_task_vector(
    vector: TaskVector,
    path,
    dtype_policy: str = "force_f32",
    extra_metadata: dict[str, str] | None = None,
) -> None:
    """Write a task vector as a checkpoint file tagged as a residual."""
    metadata = {"kind": RESIDUAL_KIND}
    if vector.base_fingerprint:
        metadata["base_fingerprint"] = vector.base_fingerprint
    if extra_metadata:
        metadata.update(extra_metadata)
    as_map = NamedTensorMap.from_arrays(dict(vector.entries), metadata=metadata)
    write_checkpoint(as_map, path, dtype_policy=dtype_policy)


def load_task_vector(path, working_dtype: str = "float32", strict: bool = True) -> TaskVector:
    """Read a residual file back. The residual tag is advisory, not enforced."""
    loaded = read_checkpoint(path, working_dtype=working_dtype, strict=strict)
    return TaskVector(
        entries=dict(loaded.entries),
        base_fingerprint=loaded.metadata.get("base_fingerprint"),
    )
