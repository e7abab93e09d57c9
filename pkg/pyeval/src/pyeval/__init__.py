"""Evaluator adapter: loads tool-named checkpoints into a tiny transformer runtime.

Speaks the subprocess protocol expected by checkpoint search harnesses:
one JSON object {"metric": number, "per_task": {...}} on stdout, exit 0.
"""

from .adapter import EvalOutcome, check_name_map, evaluate, export_state, load_mapped_checkpoint
from .config import AdapterConfig, ModelSpec, TaskSpec, load_config
from .data import SPLITS, load_split
from .errors import AdapterError, CheckpointError, ConfigError, DatasetError, MappingError
from .model import TinyTransformer, build_model, planted_state, shifted_state

__all__ = [
    "AdapterConfig",
    "AdapterError",
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "EvalOutcome",
    "MappingError",
    "ModelSpec",
    "SPLITS",
    "TaskSpec",
    "TinyTransformer",
    "build_model",
    "check_name_map",
    "evaluate",
    "export_state",
    "load_config",
    "load_mapped_checkpoint",
    "load_split",
    "planted_state",
    "shifted_state",
]
