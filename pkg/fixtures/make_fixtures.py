"""Regenerate the committed reference fixtures.

Run from the repository root:

    python3 fixtures/make_fixtures.py

Produces, deterministically:
  - toy_l6.safetensors      freshly initialized 6-block toy model, seed 17
  - toy_l6.sha256           recorded content hash of that checkpoint
  - topo_l6.json            matching block topology
  - ties_base.safetensors   small 6-block base checkpoint
  - ties_a.safetensors      two task vectors against that base
  - ties_b.safetensors
  - ties_golden.safetensors expected output of
        tvkit merge --method ties --beta 1.4 --base ties_base.safetensors
              --tv ties_a.safetensors ties_b.safetensors
              --topology topo_l6.json --out ...

The golden file is computed here by straight-line scalar arithmetic, kept
deliberately independent of the library's vectorized merge code, so the
command-line test compares two separately written routes.
"""

import json
import math
import pathlib

import numpy as np

from tvkit import NamedTensorMap, TaskVector, content_hash, read_checkpoint, save_task_vector, write_checkpoint
from tvkit.toy import ToyModelConfig, init_params, params_to_map

HERE = pathlib.Path(__file__).resolve().parent

NUM_BLOCKS = 6
LAYOUT = {"embed.w": (4, 6), "embed.b": (6,)}
for d in range(NUM_BLOCKS):
    LAYOUT[f"blocks.layer{d}.w"] = (6, 6)
    LAYOUT[f"blocks.layer{d}.b"] = (6,)
LAYOUT["head.w"] = (6, 3)
LAYOUT["head.b"] = (3,)


def flatten(entries):
    """Name-sorted list of (name, flat index, value) over float values."""
    out = []
    for name in sorted(entries):
        for j, v in enumerate(np.asarray(entries[name], dtype=np.float64).ravel()):
            out.append((name, j, float(v)))
    return out


def trim_keep_top(entries, keep_fraction):
    """Zero everything below the global top-fraction magnitude threshold."""
    triples = flatten(entries)
    magnitudes = sorted(abs(v) for _, _, v in triples)
    n = len(magnitudes)
    k = math.ceil(keep_fraction * n)
    threshold = 0.0 if k >= n else magnitudes[n - k]
    return {
        name: [v if abs(v) >= threshold else 0.0 for v in np.asarray(arr, dtype=np.float64).ravel()]
        for name, arr in entries.items()
    }


def ties_reference(vector_entries, keep_fraction):
    """Per-coordinate trim / sign election / agreeing mean, scalar loops."""
    trimmed = [trim_keep_top(entries, keep_fraction) for entries in vector_entries]
    merged = {}
    for name in vector_entries[0]:
        length = len(trimmed[0][name])
        out = []
        for j in range(length):
            values = [t[name][j] for t in trimmed]
            total = 0.0
            for v in values:
                total += v
            agreeing = [v for v in values if (v > 0 if total >= 0 else v < 0)]
            out.append(sum(agreeing) / len(agreeing) if agreeing else 0.0)
        merged[name] = out
    return merged


def euclidean_norm(flat_lists):
    total = 0.0
    for values in flat_lists:
        for v in values:
            total += v * v
    return math.sqrt(total)


def make_ties_golden():
    rng = np.random.default_rng(170)
    base = {name: rng.normal(0.0, 1.0, shape).astype(np.float32) for name, shape in LAYOUT.items()}
    vec_a = {name: rng.normal(0.0, 0.5, shape).astype(np.float32) for name, shape in LAYOUT.items()}
    vec_b = {name: rng.normal(0.0, 0.5, shape).astype(np.float32) for name, shape in LAYOUT.items()}

    base_map = NamedTensorMap.from_arrays(base)
    write_checkpoint(base_map, HERE / "ties_base.safetensors")
    fingerprint = content_hash(base_map)
    save_task_vector(TaskVector(entries=dict(vec_a), base_fingerprint=fingerprint), HERE / "ties_a.safetensors")
    save_task_vector(TaskVector(entries=dict(vec_b), base_fingerprint=fingerprint), HERE / "ties_b.safetensors")

    merged = ties_reference([vec_a, vec_b], keep_fraction=0.2)

    summed = {
        name: [float(a) + float(b) for a, b in zip(vec_a[name].ravel(), vec_b[name].ravel())]
        for name in LAYOUT
    }
    alpha = (1.0 / 2.0) * euclidean_norm(summed.values()) / euclidean_norm(merged.values())

    beta = 1.4
    golden = {}
    for name, shape in LAYOUT.items():
        if ".layer" in name:
            depth = int(name.split(".layer")[1].split(".")[0])
            factor = alpha + beta * depth / (NUM_BLOCKS - 1)
        else:
            factor = alpha  # embed and head sit outside the blocks
        flat_base = np.asarray(base[name], dtype=np.float64).ravel()
        values = [b + factor * m for b, m in zip(flat_base, merged[name])]
        golden[name] = np.array(values, dtype=np.float64).reshape(shape)

    write_checkpoint(NamedTensorMap.from_arrays(golden), HERE / "ties_golden.safetensors")


def make_toy_fixture():
    params = init_params(ToyModelConfig(), seed=17)
    write_checkpoint(params_to_map(params), HERE / "toy_l6.safetensors")
    loaded = read_checkpoint(HERE / "toy_l6.safetensors")
    (HERE / "toy_l6.sha256").write_text(content_hash(loaded) + "\n")


def make_topology():
    config = {"block_pattern": ".layer{d}.", "num_blocks": NUM_BLOCKS}
    (HERE / "topo_l6.json").write_text(json.dumps(config, indent=2) + "\n")


if __name__ == "__main__":
    make_toy_fixture()
    make_topology()
    make_ties_golden()
    print("fixtures written to", HERE)
