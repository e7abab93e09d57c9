"""Regenerate the bundled adapter fixtures.

Writes the adapter config, two plant checkpoints in the tool naming scheme,
and a sha256 manifest next to this script. The plants are pure constructions
(no training), so reruns are byte-stable.
"""

import dataclasses
import hashlib
import json
import os

from pyeval import ModelSpec, build_model, export_state, planted_state, shifted_state

HERE = os.path.dirname(os.path.abspath(__file__))

TASKS = [
    {"name": "maj-a", "dataset": "majority-token", "seed": 11, "samples_per_split": 192},
    {"name": "maj-b", "dataset": "majority-token", "seed": 23, "samples_per_split": 192},
]


def tool_name(runtime: str) -> str:
    """Map a runtime parameter name into the tool naming scheme."""
    if runtime == "tok_embed.weight":
        return "embeddings.token.weight"
    if runtime == "pos_embed":
        return "embeddings.position"
    if runtime.startswith("blocks."):
        _, index, rest = runtime.split(".", 2)
        return f"encoder.layer{index}.{rest}"
    return runtime


def main(out_dir=HERE):
    spec = ModelSpec()
    name_map = {name: tool_name(name) for name in build_model(spec).state_dict()}
    config = {
        "model": dataclasses.asdict(spec),
        "tasks": TASKS,
        "batch_size": 64,
        "device": "cpu",
        "name_map": name_map,
    }
    files = ["config.json", "tiny_base.safetensors", "tiny_shifted.safetensors"]
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    export_state(planted_state(spec), name_map, os.path.join(out_dir, "tiny_base.safetensors"))
    export_state(shifted_state(spec), name_map, os.path.join(out_dir, "tiny_shifted.safetensors"))
    lines = []
    for name in files:
        with open(os.path.join(out_dir, name), "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        lines.append(f"{digest}  {name}")
        print(lines[-1])
    with open(os.path.join(out_dir, "fixtures.sha256"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
