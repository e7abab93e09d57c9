"""Checkpoint loading through the name map, split evaluation, and export.

The adapter never does any merging or editing arithmetic. It fills the
runtime model from a tool-named tensor file, runs the evaluation data
through it, and reports accuracies. Export goes the other way: a runtime
state dict is written out under the tool names.
"""

import dataclasses

import numpy as np
import torch
from safetensors import SafetensorError, safe_open
from safetensors.torch import save_file

from .config import AdapterConfig
from .data import load_split
from .errors import CheckpointError, ConfigError, MappingError
from .model import build_model


@dataclasses.dataclass(frozen=True)
class EvalOutcome:
    """Headline metric plus the per-task accuracies behind it."""

    metric: float
    per_task: dict[str, float]

    def to_payload(self) -> dict:
        return {"metric": self.metric, "per_task": dict(self.per_task)}


def check_name_map(name_map, runtime_names):
    """The map must pair the given runtime names with tool names one to one."""
    names = set(runtime_names)
    mapped = set(name_map)
    missing = sorted(names - mapped)
    if missing:
        raise MappingError("name map misses runtime parameters: " + ", ".join(missing))
    extra = sorted(mapped - names)
    if extra:
        raise MappingError("name map names unknown runtime parameters: " + ", ".join(extra))
    counts = {}
    for tool in name_map.values():
        counts[tool] = counts.get(tool, 0) + 1
    dupes = sorted(name for name, k in counts.items() if k > 1)
    if dupes:
        raise MappingError("name map reuses tool names: " + ", ".join(dupes))


def load_mapped_checkpoint(model, name_map, path):
    """Fill the model from a tool-named tensor file.

    Tensors the map does not know, mapped tensors the file does not hold,
    and shape disagreements are all hard errors naming the tensors.
    """
    check_name_map(name_map, model.state_dict())
    try:
        with safe_open(str(path), framework="pt") as fh:
            stored = {name: fh.get_tensor(name) for name in fh.keys()}
    except (SafetensorError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    tool_to_runtime = {tool: runtime for runtime, tool in name_map.items()}
    unmapped = sorted(set(stored) - set(tool_to_runtime))
    if unmapped:
        raise MappingError("checkpoint holds unmapped tensors: " + ", ".join(unmapped))
    missing = sorted(set(tool_to_runtime) - set(stored))
    if missing:
        raise MappingError("checkpoint misses mapped tensors: " + ", ".join(missing))
    expected = model.state_dict()
    state = {}
    for tool, tensor in stored.items():
        runtime = tool_to_runtime[tool]
        want = tuple(expected[runtime].shape)
        if tuple(tensor.shape) != want:
            raise CheckpointError(f"{tool}: shape {tuple(tensor.shape)} does not match model shape {want}")
        state[runtime] = tensor.to(torch.float32)
    model.load_state_dict(state)
    return model


def _resolve_device(name):
    try:
        device = torch.device(name)
    except RuntimeError as exc:
        raise ConfigError(f"bad device '{name}': {exc}") from None
    if device.type == "cuda" and not torch.cuda.is_available():
        raise ConfigError(f"device '{name}' is not available")
    return device


def evaluate(config: AdapterConfig, checkpoint_path, split: str) -> EvalOutcome:
    """Accuracy of the checkpoint on one split of every configured task.

    The headline metric is the unweighted mean over tasks.
    """
    device = _resolve_device(config.device)
    model = build_model(config.model)
    load_mapped_checkpoint(model, config.name_map, checkpoint_path)
    model.to(device)
    per_task = {}
    with torch.no_grad():
        for task in config.tasks:
            tokens, labels = load_split(task, config.model, split)
            hits = 0
            for start in range(0, len(tokens), config.batch_size):
                batch = torch.from_numpy(tokens[start:start + config.batch_size]).to(device)
                pred = model(batch).argmax(dim=1).cpu().numpy()
                hits += int((pred == labels[start:start + config.batch_size]).sum())
            per_task[task.name] = hits / len(tokens)
    metric = sum(per_task.values()) / len(per_task)
    return EvalOutcome(metric=metric, per_task=per_task)


def export_state(state, name_map, path):
    """Write a runtime state dict as a tool-named tensor file.

    Tensors are stored as float32, ordered by tool name, so identical
    states produce identical bytes.
    """
    check_name_map(name_map, state)
    out = {}
    for runtime in sorted(state, key=lambda name: name_map[name]):
        array = np.ascontiguousarray(np.asarray(state[runtime], dtype=np.float32))
        out[name_map[runtime]] = torch.from_numpy(array)
    save_file(out, str(path))
