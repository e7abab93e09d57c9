"""Adapter configuration: model dimensions, evaluation tasks, and the name map.

The name map pairs runtime parameter names (as they appear in the torch
state dict) with tool tensor names (as they appear in checkpoint files).
It must be a bijection covering the whole evaluated parameter set; the
adapter refuses to guess.
"""

import dataclasses
import json

from .errors import ConfigError

KNOWN_MODELS = ("tiny-transformer",)


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """Dimensions of the runtime classifier."""

    name: str = "tiny-transformer"
    vocab_size: int = 12
    seq_len: int = 8
    dim: int = 16
    depth: int = 2
    hidden: int = 32
    classes: int = 4

    def __post_init__(self):
        if self.name not in KNOWN_MODELS:
            raise ConfigError(f"unknown model '{self.name}'; known: {', '.join(KNOWN_MODELS)}")
        for field in ("vocab_size", "seq_len", "dim", "depth", "hidden", "classes"):
            value = getattr(self, field)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"model {field} must be a positive integer, got {value!r}")
        if self.vocab_size % self.classes != 0:
            raise ConfigError("vocab_size must be a multiple of classes")


@dataclasses.dataclass(frozen=True)
class TaskSpec:
    """One evaluation task: a named, seeded slice of a builtin dataset."""

    name: str
    dataset: str = "majority-token"
    seed: int = 0
    samples_per_split: int = 192

    def __post_init__(self):
        if not self.name:
            raise ConfigError("task name must be non-empty")
        if self.samples_per_split < 1:
            raise ConfigError(f"task '{self.name}' samples_per_split must be positive")


@dataclasses.dataclass(frozen=True)
class AdapterConfig:
    model: ModelSpec
    tasks: tuple[TaskSpec, ...]
    name_map: dict[str, str]
    batch_size: int = 64
    device: str = "cpu"

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("config needs at least one task")
        names = [task.name for task in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError("task names must be unique")
        if not self.name_map:
            raise ConfigError("config needs a name_map")
        for runtime, tool in self.name_map.items():
            if not isinstance(runtime, str) or not isinstance(tool, str) or not runtime or not tool:
                raise ConfigError("name_map entries must be non-empty strings")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


def _build(cls, payload, where):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {field.name for field in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"{where} has unknown fields: {', '.join(unknown)}")
    return cls(**payload)


def load_config(path) -> AdapterConfig:
    """Read and validate an adapter config from a JSON file."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ConfigError("config must be a JSON object")
    known = {"model", "tasks", "name_map", "batch_size", "device"}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"config has unknown fields: {', '.join(unknown)}")
    for field in ("model", "tasks", "name_map"):
        if field not in payload:
            raise ConfigError(f"config misses required field '{field}'")
    model = _build(ModelSpec, payload["model"], "model")
    if not isinstance(payload["tasks"], list):
        raise ConfigError("tasks must be a JSON array")
    tasks = tuple(_build(TaskSpec, entry, f"tasks[{i}]") for i, entry in enumerate(payload["tasks"]))
    name_map = payload["name_map"]
    if not isinstance(name_map, dict):
        raise ConfigError("name_map must be a JSON object")
    return AdapterConfig(
        model=model,
        tasks=tasks,
        name_map=dict(name_map),
        batch_size=payload.get("batch_size", 64),
        device=payload.get("device", "cpu"),
    )
