"""Checkpoint file format: round-trips, narrowing, header validation, hashing."""

import json
import struct
from pathlib import Path

import numpy as np
import pytest

from tvkit import (
    ByteRangeError,
    MalformedHeaderError,
    NamedTensorMap,
    NonFiniteTensorError,
    UnknownDtypeError,
    content_hash,
    read_checkpoint,
    validate_compatibility,
    write_checkpoint,
)
from tvkit.store import _f32_to_bf16_bits

from conftest import random_map

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def f16_bits_reference(value):
    """Scalar float32 -> float16 bits, round to nearest even.

    Written against the IEEE-754 layout directly (shift/mask on the u32
    pattern) so it shares no code with the vectorized write path.
    """
    (u,) = struct.unpack("<I", struct.pack("<f", np.float32(value)))
    sign = (u >> 16) & 0x8000
    exp = (u >> 23) & 0xFF
    mant = u & 0x7FFFFF
    if exp == 255:
        return sign | 0x7C00 | (0x200 if mant else 0)
    if exp == 0:
        return sign  # f32 subnormals sit far below half-precision resolution
    unbiased = exp - 127
    if unbiased >= 16:
        return sign | 0x7C00
    if unbiased >= -14:
        shifted = mant >> 13
        rest = mant & 0x1FFF
        half = ((unbiased + 15) << 10) | shifted
        if rest > 0x1000 or (rest == 0x1000 and (shifted & 1)):
            half += 1  # carry may bump the exponent; that is correct rounding
        return sign | half
    full = mant | 0x800000
    shift = -unbiased - 1
    kept = full >> shift
    rest = full & ((1 << shift) - 1)
    halfway = 1 << (shift - 1)
    if rest > halfway or (rest == halfway and (kept & 1)):
        kept += 1
    return sign | kept


def bf16_bits_reference(value):
    """Scalar float32 -> bfloat16 bits, round to nearest even."""
    (u,) = struct.unpack("<I", struct.pack("<f", np.float32(value)))
    low = u & 0xFFFF
    high = u >> 16
    if low > 0x8000 or (low == 0x8000 and (high & 1)):
        high += 1
    return high & 0xFFFF


def build_file(path, header_obj, payload=b""):
    blob = json.dumps(header_obj, separators=(",", ":")).encode("utf-8")
    path.write_bytes(len(blob).to_bytes(8, "little") + blob + payload)


def parse_raw(path):
    """Re-parse a written file with stdlib tools only."""
    raw = Path(path).read_bytes()
    length = int.from_bytes(raw[:8], "little")
    header = json.loads(raw[8 : 8 + length])
    payload = raw[8 + length :]
    return header, payload


def test_identity_payload_round_trip(tmp_path):
    eye = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    path = tmp_path / "w.safetensors"
    build_file(
        path,
        {"w": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}},
        eye.tobytes(),
    )
    loaded = read_checkpoint(path)
    assert loaded.names() == ["w"]
    assert np.array_equal(loaded.entries["w"], eye)
    assert loaded.original_dtypes["w"] == "F32"


def test_header_length_beyond_file_is_truncated_header(tmp_path):
    path = tmp_path / "bad.safetensors"
    path.write_bytes((10_000).to_bytes(8, "little") + b"{}")
    with pytest.raises(MalformedHeaderError) as err:
        read_checkpoint(path)
    assert "truncated header" in str(err.value)


def test_file_shorter_than_length_prefix(tmp_path):
    path = tmp_path / "tiny.safetensors"
    path.write_bytes(b"\x01\x02\x03")
    with pytest.raises(MalformedHeaderError) as err:
        read_checkpoint(path)
    assert "truncated header" in str(err.value)


def test_committed_fixture_hash_matches_record():
    recorded = (FIXTURES / "toy_l6.sha256").read_text().strip()
    loaded = read_checkpoint(FIXTURES / "toy_l6.safetensors")
    blocks = [n for n in loaded.names() if ".layer" in n]
    assert len(blocks) == 12  # 6 blocks, weight + bias each
    assert any(n.startswith("embed.") for n in loaded.names())
    assert any(n.startswith("head.") for n in loaded.names())
    assert loaded.fingerprint == recorded
    assert content_hash(loaded) == recorded


def test_write_then_read_f32_bit_identical(tmp_path):
    rng = np.random.default_rng(11)
    for case in range(100):
        tensors = random_map(rng, scale=1.0 + case * 0.1)
        path = tmp_path / f"m{case}.safetensors"
        write_checkpoint(tensors, path)
        loaded = read_checkpoint(path)
        for name in tensors.entries:
            assert loaded.entries[name].tobytes() == tensors.entries[name].tobytes()
        assert content_hash(loaded) == content_hash(tensors)


def test_content_hash_ignores_key_order():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 3)).astype(np.float32)
    b = rng.normal(size=(2,)).astype(np.float32)
    forward_order = NamedTensorMap.from_arrays({"a": a, "b": b})
    reverse_order = NamedTensorMap.from_arrays({"b": b, "a": a})
    assert content_hash(forward_order) == content_hash(reverse_order)


def test_content_hash_sees_names_shapes_values():
    a = np.arange(6, dtype=np.float32)
    base = content_hash({"w": a.reshape(2, 3)})
    assert content_hash({"w": a.reshape(3, 2)}) != base
    assert content_hash({"v": a.reshape(2, 3)}) != base
    bumped = a.copy()
    bumped[0] += 1e-3
    assert content_hash({"w": bumped.reshape(2, 3)}) != base


def test_f16_preserve_matches_scalar_rounding_reference(tmp_path):
    rng = np.random.default_rng(23)
    values = np.concatenate(
        [
            rng.normal(0, 1, 400).astype(np.float32),
            (rng.normal(0, 1, 400) * 10.0 ** rng.uniform(-8, 5, 400)).astype(np.float32),
            np.array([0.1, 1 / 3, 2049.0, 2051.0, 65504.0, 65519.9, -0.0, 6e-8, 3e-8], dtype=np.float32),
        ]
    )
    tensors = NamedTensorMap(entries={"w": values}, original_dtypes={"w": "F16"})
    path = tmp_path / "half.safetensors"
    with np.errstate(over="ignore"):  # some draws overflow the f16 range
        write_checkpoint(tensors, path, dtype_policy="preserve")

    header, payload = parse_raw(path)
    assert header["w"]["dtype"] == "F16"
    stored = np.frombuffer(payload, dtype="<u2")
    expected = np.array([f16_bits_reference(v) for v in values], dtype=np.uint16)
    mismatches = np.nonzero(stored != expected)[0]
    assert mismatches.size == 0, f"first mismatch at {mismatches[:5]}"

    # Large draws may overflow to f16 infinity; read permissively.
    loaded = read_checkpoint(path, strict=False)
    assert loaded.original_dtypes["w"] == "F16"
    assert np.array_equal(loaded.entries["w"], stored.view(np.float16).astype(np.float32), equal_nan=True)


def test_bf16_narrowing_matches_scalar_reference():
    rng = np.random.default_rng(29)
    values = np.concatenate(
        [
            rng.normal(0, 1, 2000).astype(np.float32),
            (rng.normal(0, 1, 2000) * 10.0 ** rng.uniform(-30, 30, 2000)).astype(np.float32),
            np.array([1.0039062, 1.0, -1.0, 0.0, 3.0e38, 1e-40], dtype=np.float32),
        ]
    )
    got = _f32_to_bf16_bits(values)
    expected = np.array([bf16_bits_reference(v) for v in values], dtype=np.uint16)
    assert np.array_equal(got, expected)


def test_bf16_preserve_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    raw = rng.normal(0, 2, (5, 7)).astype(np.float32)
    tensors = NamedTensorMap(entries={"w": raw}, original_dtypes={"w": "BF16"})
    first = tmp_path / "one.safetensors"
    write_checkpoint(tensors, first, dtype_policy="preserve")
    loaded = read_checkpoint(first)
    assert loaded.original_dtypes["w"] == "BF16"
    # Loaded values are exactly representable, so a second write is stable.
    second = tmp_path / "two.safetensors"
    write_checkpoint(loaded, second, dtype_policy="preserve")
    _, payload_one = parse_raw(first)
    _, payload_two = parse_raw(second)
    assert payload_one == payload_two


def test_f64_preserve_round_trip(tmp_path):
    rng = np.random.default_rng(37)
    arr = rng.normal(size=(4, 3))
    tensors = NamedTensorMap.from_arrays({"w": arr})
    assert tensors.original_dtypes["w"] == "F64"
    path = tmp_path / "wide.safetensors"
    write_checkpoint(tensors, path, dtype_policy="preserve")
    loaded = read_checkpoint(path, working_dtype="float64")
    assert loaded.entries["w"].tobytes() == arr.tobytes()


def test_force_f32_policy_narrows_storage(tmp_path):
    tensors = NamedTensorMap.from_arrays({"w": np.arange(4, dtype=np.float64)})
    path = tmp_path / "forced.safetensors"
    write_checkpoint(tensors, path, dtype_policy="force_f32")
    header, _ = parse_raw(path)
    assert header["w"]["dtype"] == "F32"
    assert read_checkpoint(path).original_dtypes["w"] == "F32"


def test_empty_map_rejected(tmp_path):
    with pytest.raises(Exception) as err:
        NamedTensorMap(entries={}, original_dtypes={})
    assert "at least one tensor" in str(err.value)


def test_compatibility_identical_maps():
    rng = np.random.default_rng(41)
    tensors = random_map(rng)
    report = validate_compatibility(tensors, tensors)
    assert report.compatible
    assert not report.missing and not report.unexpected
    assert not report.shape_mismatches


def test_compatibility_extra_key():
    a = NamedTensorMap.from_arrays({"w": np.zeros(2), "head.bias": np.zeros(3)})
    b = NamedTensorMap.from_arrays({"w": np.zeros(2)})
    report = validate_compatibility(a, b)
    assert not report.compatible
    assert report.missing == ["head.bias"]
    assert "head.bias" in str(report)


def test_compatibility_shape_mismatch():
    a = NamedTensorMap.from_arrays({"w": np.zeros((2, 3))})
    b = NamedTensorMap.from_arrays({"w": np.zeros((3, 2))})
    report = validate_compatibility(a, b)
    assert not report.compatible
    assert [entry[0] for entry in report.shape_mismatches] == ["w"]


def test_header_not_json(tmp_path):
    path = tmp_path / "garbage.safetensors"
    blob = b"not json at all"
    path.write_bytes(len(blob).to_bytes(8, "little") + blob)
    with pytest.raises(MalformedHeaderError):
        read_checkpoint(path)


def test_header_not_object(tmp_path):
    path = tmp_path / "list.safetensors"
    build_file(path, [1, 2, 3])
    with pytest.raises(MalformedHeaderError) as err:
        read_checkpoint(path)
    assert "JSON object" in str(err.value)


def test_header_with_no_tensors(tmp_path):
    path = tmp_path / "meta-only.safetensors"
    build_file(path, {"__metadata__": {"k": "v"}})
    with pytest.raises(MalformedHeaderError) as err:
        read_checkpoint(path)
    assert "no tensors" in str(err.value)


def test_unknown_dtype_tag_names_tensor(tmp_path):
    path = tmp_path / "odd.safetensors"
    build_file(
        path,
        {"w": {"dtype": "I8", "shape": [4], "data_offsets": [0, 4]}},
        b"\x00\x00\x00\x00",
    )
    with pytest.raises(UnknownDtypeError) as err:
        read_checkpoint(path)
    assert "w" in str(err.value) and "I8" in str(err.value)


def test_byte_count_mismatch_names_tensor(tmp_path):
    path = tmp_path / "short.safetensors"
    build_file(
        path,
        {"w": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}},
        b"\x00" * 8,
    )
    with pytest.raises(ByteRangeError) as err:
        read_checkpoint(path)
    assert "w" in str(err.value)


def test_overlapping_ranges_rejected(tmp_path):
    path = tmp_path / "overlap.safetensors"
    build_file(
        path,
        {
            "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
            "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
        },
        b"\x00" * 12,
    )
    with pytest.raises(ByteRangeError) as err:
        read_checkpoint(path)
    assert "overlap" in str(err.value)


def test_gap_between_ranges_rejected(tmp_path):
    path = tmp_path / "gap.safetensors"
    build_file(
        path,
        {
            "a": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]},
            "b": {"dtype": "F32", "shape": [1], "data_offsets": [8, 12]},
        },
        b"\x00" * 12,
    )
    with pytest.raises(ByteRangeError) as err:
        read_checkpoint(path)
    assert "gap" in str(err.value)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "trailing.safetensors"
    build_file(
        path,
        {"a": {"dtype": "F32", "shape": [1], "data_offsets": [0, 4]}},
        b"\x00" * 8,
    )
    with pytest.raises(ByteRangeError) as err:
        read_checkpoint(path)
    assert "trailing" in str(err.value)


def test_nonfinite_strict_and_permissive(tmp_path):
    bad = np.array([1.0, np.nan], dtype=np.float32)
    path = tmp_path / "nan.safetensors"
    build_file(
        path,
        {"w": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]}},
        bad.tobytes(),
    )
    with pytest.raises(NonFiniteTensorError) as err:
        read_checkpoint(path)
    assert "w" in str(err.value)
    loaded = read_checkpoint(path, strict=False)
    assert np.isnan(loaded.entries["w"][1])


def test_metadata_round_trip(tmp_path):
    tensors = NamedTensorMap.from_arrays({"w": np.ones(3)}, metadata={"kind": "demo"})
    path = tmp_path / "meta.safetensors"
    write_checkpoint(tensors, path, metadata={"extra": "1"})
    loaded = read_checkpoint(path)
    assert loaded.metadata == {"kind": "demo", "extra": "1"}
    header, _ = parse_raw(path)
    assert list(header)[0] == "__metadata__"


def test_writes_are_deterministic_and_atomic(tmp_path):
    rng = np.random.default_rng(43)
    tensors = random_map(rng)
    path = tmp_path / "out.safetensors"
    path.write_bytes(b"stale contents")
    write_checkpoint(tensors, path)
    first = path.read_bytes()
    write_checkpoint(tensors, path)
    assert path.read_bytes() == first
    leftovers = [p for p in tmp_path.iterdir() if p.name != "out.safetensors"]
    assert leftovers == []


def test_offsets_partition_payload(tmp_path):
    rng = np.random.default_rng(47)
    tensors = random_map(rng)
    path = tmp_path / "tiled.safetensors"
    write_checkpoint(tensors, path)
    header, payload = parse_raw(path)
    spans = sorted(v["data_offsets"] for k, v in header.items() if k != "__metadata__")
    cursor = 0
    for begin, end in spans:
        assert begin == cursor
        cursor = end
    assert cursor == len(payload)


def test_cross_check_against_reference_library(tmp_path):
    st = pytest.importorskip("safetensors.numpy")
    rng = np.random.default_rng(53)
    ours = random_map(rng)
    here = tmp_path / "ours.safetensors"
    write_checkpoint(ours, here)
    theirs = st.load_file(str(here))
    assert set(theirs) == set(ours.entries)
    for name in theirs:
        assert np.array_equal(theirs[name], ours.entries[name])

    reverse = tmp_path / "theirs.safetensors"
    st.save_file({k: np.asarray(v) for k, v in theirs.items()}, str(reverse))
    loaded = read_checkpoint(reverse)
    for name in theirs:
        assert np.array_equal(loaded.entries[name], theirs[name])


def test_bf16_cross_check_against_torch(tmp_path):
    torch = pytest.importorskip("torch")
    st_torch = pytest.importorskip("safetensors.torch")
    rng = np.random.default_rng(59)
    raw = rng.normal(0, 3, 64).astype(np.float32)

    theirs = tmp_path / "torch.safetensors"
    st_torch.save_file({"w": torch.from_numpy(raw).to(torch.bfloat16)}, str(theirs))
    loaded = read_checkpoint(theirs)
    assert loaded.original_dtypes["w"] == "BF16"
    widened = torch.from_numpy(raw).to(torch.bfloat16).to(torch.float32).numpy()
    assert np.array_equal(loaded.entries["w"], widened)

    ours = tmp_path / "ours.safetensors"
    write_checkpoint(NamedTensorMap(entries={"w": raw.copy()}, original_dtypes={"w": "BF16"}), ours, dtype_policy="preserve")
    back = st_torch.load_file(str(ours))
    assert torch.equal(back["w"], torch.from_numpy(raw).to(torch.bfloat16))
