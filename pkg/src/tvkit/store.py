"""Checkpoint storage.

Files use the safetensors layout: an 8-byte little-endian header length,
a UTF-8 JSON header mapping tensor names to dtype/shape/byte-ranges, then
the raw row-major little-endian tensor payload. Reading and writing are
deterministic so equal inputs produce byte-identical files.

Tensors are held in memory as a NamedTensorMap of float arrays (float32 by
default, float64 on request); original storage dtypes are remembered so a
file can round-trip without silent widening.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ByteRangeError,
    MalformedHeaderError,
    NonFiniteTensorError,
    StoreError,
    UnknownDtypeError,
)

# dtype tag -> (numpy storage dtype, bytes per element). BF16 has no numpy
# dtype; it is handled by bit manipulation and stored as uint16 on disk.
_DTYPE_WIDTHS = {"F64": 8, "F32": 4, "F16": 2, "BF16": 2}
_NUMPY_FOR_TAG = {"F64": "<f8", "F32": "<f4", "F16": "<f2", "BF16": "<u2"}

SUPPORTED_DTYPES = tuple(_DTYPE_WIDTHS)


def _bf16_bits_to_f32(bits: np.ndarray) -> np.ndarray:
    """Widen bfloat16 (as uint16 bit patterns) to float32. Exact."""
    widened = bits.astype(np.uint32) << 16
    return widened.view(np.float32).astype(np.float32)


def _f32_to_bf16_bits(values: np.ndarray) -> np.ndarray:
    """Narrow float32 to bfloat16 bit patterns, rounding to nearest even."""
    u = values.astype("<f4").view(np.uint32)
    # Round half to even on the 16 bits being dropped.
    rounding_bias = np.uint32(0x7FFF) + ((u >> 16) & np.uint32(1))
    return ((u + rounding_bias) >> 16).astype("<u2")


@dataclass
class NamedTensorMap:
    """An ordered collection of named float arrays plus storage bookkeeping.

    entries and original_dtypes share the same key set; arrays are marked
    read-only on construction. Treat instances as immutable: operations
    return new maps rather than editing one in place.
    """

    entries: dict[str, np.ndarray]
    original_dtypes: dict[str, str]
    fingerprint: str | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise StoreError("tensor map must contain at least one tensor")
        if set(self.entries) != set(self.original_dtypes):
            raise StoreError("entries and original_dtypes disagree on names")
        for name, tag in self.original_dtypes.items():
            if tag not in _DTYPE_WIDTHS:
                raise UnknownDtypeError(f"tensor {name!r}: unsupported dtype tag {tag!r}")
        for arr in self.entries.values():
            arr.flags.writeable = False

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], metadata: dict[str, str] | None = None) -> "NamedTensorMap":
        """Build a map from plain arrays, inferring storage tags from dtypes."""
        entries, tags = {}, {}
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype == np.float64:
                tags[name] = "F64"
            elif arr.dtype == np.float16:
                tags[name] = "F16"
                arr = arr.astype(np.float32)
            else:
                tags[name] = "F32"
                arr = np.ascontiguousarray(arr, dtype=np.float32) if arr.dtype != np.float32 else arr
            entries[name] = np.ascontiguousarray(arr)
        return cls(entries=entries, original_dtypes=tags, metadata=dict(metadata or {}))

    def names(self) -> list[str]:
        return sorted(self.entries)

    def total_parameters(self) -> int:
        return sum(int(a.size) for a in self.entries.values())


def content_hash(tensors: NamedTensorMap | dict[str, np.ndarray]) -> str:
    """Order-invariant sha256 over names, shapes, and float64 values.

    Computed on the in-memory values widened to float64, so the digest does
    not depend on iteration order or on whether the map was loaded in
    float32 or float64 working precision from the same stored bytes.
    """
    entries = tensors.entries if isinstance(tensors, NamedTensorMap) else tensors
    digest = hashlib.sha256()
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(",".join(str(int(s)) for s in arr.shape).encode("ascii"))
        digest.update(b"\x00")
        digest.update(arr.tobytes())
    return digest.hexdigest()


@dataclass
class CompatibilityReport:
    """Outcome of comparing two tensor maps key by key."""

    compatible: bool
    missing: list[str]
    unexpected: list[str]
    shape_mismatches: list[tuple[str, tuple, tuple]]
    dtype_mismatches: list[tuple[str, str, str]]

    def __str__(self):
        if self.compatible:
            return "maps are compatible"
        parts = []
        if self.missing:
            parts.append(f"missing from second map: {self.missing}")
        if self.unexpected:
            parts.append(f"unexpected in second map: {self.unexpected}")
        for name, a, b in self.shape_mismatches:
            parts.append(f"shape mismatch for {name!r}: {a} vs {b}")
        for name, a, b in self.dtype_mismatches:
            parts.append(f"dtype mismatch for {name!r}: {a} vs {b}")
        return "; ".join(parts)


def validate_compatibility(first: NamedTensorMap, second: NamedTensorMap) -> CompatibilityReport:
    """Compare names and shapes (and stored dtypes, informationally)."""
    first_names, second_names = set(first.entries), set(second.entries)
    missing = sorted(first_names - second_names)
    unexpected = sorted(second_names - first_names)
    shapes, dtypes = [], []
    for name in sorted(first_names & second_names):
        a, b = first.entries[name], second.entries[name]
        if a.shape != b.shape:
            shapes.append((name, a.shape, b.shape))
        ta, tb = first.original_dtypes[name], second.original_dtypes[name]
        if ta != tb:
            dtypes.append((name, ta, tb))
    compatible = not (missing or unexpected or shapes)
    return CompatibilityReport(compatible, missing, unexpected, shapes, dtypes)


def _parse_header(raw: bytes):
    if len(raw) < 8:
        raise MalformedHeaderError("truncated header: file shorter than the 8-byte length prefix")
    header_len = int.from_bytes(raw[:8], "little")
    if 8 + header_len > len(raw):
        raise MalformedHeaderError(
            f"truncated header: declared header length {header_len} exceeds file size {len(raw)}"
        )
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError("header must be a JSON object")
    return header, raw[8 + header_len :]


def read_checkpoint(
    path: str | os.PathLike,
    working_dtype: str = "float32",
    strict: bool = True,
) -> NamedTensorMap:
    """Load a checkpoint file into a NamedTensorMap.

    working_dtype is 'float32' (default) or 'float64'. With strict=True
    (the default) any non-finite value fails the load and names the tensor.
    """
    if working_dtype not in ("float32", "float64"):
        raise StoreError(f"working_dtype must be 'float32' or 'float64', got {working_dtype!r}")
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload = _parse_header(raw)

    metadata = {}
    meta_entry = header.pop("__metadata__", None)
    if meta_entry is not None:
        if not isinstance(meta_entry, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in meta_entry.items()
        ):
            raise MalformedHeaderError("__metadata__ must map strings to strings")
        metadata = dict(meta_entry)
    if not header:
        raise MalformedHeaderError("header declares no tensors")

    ranges = []
    for name, entry in header.items():
        if not isinstance(entry, dict) or not {"dtype", "shape", "data_offsets"} <= set(entry):
            raise MalformedHeaderError(f"tensor {name!r}: entry missing dtype/shape/data_offsets")
        tag = entry["dtype"]
        if tag not in _DTYPE_WIDTHS:
            raise UnknownDtypeError(f"tensor {name!r}: unsupported dtype tag {tag!r}")
        shape = entry["shape"]
        if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
            raise MalformedHeaderError(f"tensor {name!r}: shape must be a list of non-negative ints")
        offsets = entry["data_offsets"]
        if not (isinstance(offsets, list) and len(offsets) == 2 and all(isinstance(o, int) for o in offsets)):
            raise MalformedHeaderError(f"tensor {name!r}: data_offsets must be [begin, end]")
        begin, end = offsets
        expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE_WIDTHS[tag]
        if begin < 0 or end < begin or end > len(payload):
            raise ByteRangeError(
                f"tensor {name!r}: offsets [{begin}, {end}) fall outside the {len(payload)}-byte payload"
            )
        if end - begin != expected:
            raise ByteRangeError(
                f"tensor {name!r}: byte range [{begin}, {end}) holds {end - begin} bytes "
                f"but shape {shape} with dtype {tag} needs {expected}"
            )
        ranges.append((begin, end, name, tag, tuple(shape)))

    # Byte ranges must tile the payload exactly: no gaps, no overlap.
    ranges.sort()
    cursor = 0
    for begin, end, name, _, _ in ranges:
        if begin != cursor:
            kind = "overlaps previous data" if begin < cursor else f"leaves a gap at byte {cursor}"
            raise ByteRangeError(f"tensor {name!r}: byte range [{begin}, {end}) {kind}")
        cursor = end
    if cursor != len(payload):
        raise ByteRangeError(f"payload has {len(payload) - cursor} trailing bytes not claimed by any tensor")

    target = np.float32 if working_dtype == "float32" else np.float64
    entries, tags = {}, {}
    for begin, end, name, tag, shape in ranges:
        chunk = np.frombuffer(payload[begin:end], dtype=_NUMPY_FOR_TAG[tag])
        if tag == "BF16":
            values = _bf16_bits_to_f32(chunk)
        else:
            values = chunk
        arr = values.astype(target).reshape(shape)
        if strict and not np.all(np.isfinite(arr)):
            raise NonFiniteTensorError(f"tensor {name!r} contains non-finite values")
        entries[name] = arr
        tags[name] = tag
    result = NamedTensorMap(entries=entries, original_dtypes=tags, metadata=metadata)
    result.fingerprint = content_hash(result)
    return result


def write_checkpoint(
    tensors: NamedTensorMap,
    path: str | os.PathLike,
    dtype_policy: str = "force_f32",
    metadata: dict[str, str] | None = None,
) -> None:
    """Write a checkpoint file atomically (temp file in place, then rename).

    dtype_policy 'force_f32' (default) stores everything as F32;
    'preserve' keeps each tensor's original storage dtype. Narrowing
    conversions round to nearest even. Output bytes are deterministic:
    names are laid out in sorted order with a canonical JSON header.
    """
    if dtype_policy not in ("force_f32", "preserve"):
        raise StoreError(f"dtype_policy must be 'force_f32' or 'preserve', got {dtype_policy!r}")
    meta = dict(tensors.metadata)
    if metadata:
        meta.update(metadata)

    header: dict[str, object] = {}
    if meta:
        header["__metadata__"] = {str(k): str(v) for k, v in sorted(meta.items())}
    blobs = []
    offset = 0
    for name in sorted(tensors.entries):
        arr = tensors.entries[name]
        tag = "F32" if dtype_policy == "force_f32" else tensors.original_dtypes[name]
        if tag == "BF16":
            data = _f32_to_bf16_bits(arr.astype(np.float32)).tobytes()
        else:
            data = np.ascontiguousarray(arr, dtype=_NUMPY_FOR_TAG[tag]).tobytes()
        header[name] = {
            "dtype": tag,
            "shape": [int(s) for s in arr.shape],
            "data_offsets": [offset, offset + len(data)],
        }
        offset += len(data)
        blobs.append(data)

    header_bytes = json.dumps(header, separators=(",", ":"), sort_keys=False).encode("utf-8")
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tvkit-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(len(header_bytes).to_bytes(8, "little"))
            fh.write(header_bytes)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
