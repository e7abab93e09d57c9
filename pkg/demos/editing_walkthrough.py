"""File-level tour: extract a residual, rescale it by depth, write it back.

Everything the command-line surface does is a thin wrapper over these
calls. The demo works on throwaway checkpoints in a temp directory and
prints what lands on disk at each step. Run it:

    python3 demos/editing_walkthrough.py
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from tvkit import (
    ScalingSchedule,
    TopologyConfig,
    apply,
    extract,
    infer_depths,
    load_task_vector,
    norm,
    read_checkpoint,
    save_task_vector,
    scale,
    write_checkpoint,
)
from tvkit.store import NamedTensorMap, content_hash

workdir = Path(tempfile.mkdtemp(prefix="tvkit-demo-"))
print(f"working in {workdir}")

# a four-block stand-in for a real checkpoint: embed, blocks, head
rng = np.random.default_rng(0)
layout = {"embed.weight": (8, 16), "head.weight": (16, 4)}
for d in range(4):
    layout[f"blocks.layer{d}.weight"] = (16, 16)

base = NamedTensorMap.from_arrays(
    {name: rng.normal(0.0, 0.1, shape).astype(np.float32) for name, shape in layout.items()}
)
finetuned = NamedTensorMap.from_arrays(
    {name: base.entries[name] + rng.normal(0.0, 0.02, shape).astype(np.float32)
     for name, shape in layout.items()}
)
write_checkpoint(base, workdir / "base.safetensors")
write_checkpoint(finetuned, workdir / "finetuned.safetensors")
print(f"base fingerprint      {content_hash(base)[:16]}...")
print(f"finetuned fingerprint {content_hash(finetuned)[:16]}...")

# step 1: the residual is just finetuned minus base, stored with the base
# fingerprint so later applies can verify they start from the same model
vector = extract(read_checkpoint(workdir / "finetuned.safetensors"),
                 read_checkpoint(workdir / "base.safetensors"))
save_task_vector(vector, workdir / "residual.safetensors")
print(f"\nresidual norm {norm(vector):.4f}, tied to base {vector.base_fingerprint[:16]}...")

# step 2: classify parameters by depth from their names
topology = TopologyConfig(block_pattern=".layer{d}.", num_blocks=4)
depths = infer_depths(sorted(layout), topology)
print("\ndepth assignment:")
for name in sorted(layout):
    where = depths.depths.get(name, "out of block")
    print(f"  {name:24} -> {where}")

# step 3: rescale. gamma form: factor ramps from gamma at block 0 up to 1
# at the deepest block, so shallow edits shrink and deep edits survive
schedule = ScalingSchedule.gamma_form(0.25)
scaled = scale(load_task_vector(workdir / "residual.safetensors"), depths, schedule)
print("\nper-block residual norms before and after scaling (gamma 0.25):")
for d in range(4):
    name = f"blocks.layer{d}.weight"
    before = float(np.linalg.norm(vector.entries[name]))
    after = float(np.linalg.norm(scaled.entries[name]))
    print(f"  block {d}: {before:.4f} -> {after:.4f} (factor {after / before:.3f})")

# step 4: apply the rescaled residual back onto the base and save the model
edited = apply(base, scaled)
write_checkpoint(edited, workdir / "edited.safetensors")
print(f"\nwrote edited model, fingerprint {content_hash(edited)[:16]}...")

# the file is plain safetensors: eight length bytes, a JSON header, tensors
blob = (workdir / "edited.safetensors").read_bytes()
header_len = int.from_bytes(blob[:8], "little")
header = json.loads(blob[8 : 8 + header_len])
print(f"header holds {len([k for k in header if k != '__metadata__'])} tensors, "
      f"payload {len(blob) - 8 - header_len} bytes")

# byte-identical on rewrite: same content, same file
write_checkpoint(edited, workdir / "edited2.safetensors")
same = (workdir / "edited2.safetensors").read_bytes() == blob
print(f"re-serialization is byte-identical: {same}")
