"""Self-contained toy harness: residual MLP, synthetic tasks, experiments."""

from .data import SyntheticTaskSpec, TaskData, generate_task, mixture
from .experiments import (
    ForgettingReport,
    MergingReport,
    ToyExperimentConfig,
    World,
    build_world,
    evaluate_checkpoint,
    format_forgetting_text,
    format_merging_text,
    run_forgetting,
    run_merging,
    write_eval_config,
)
from .model import (
    ToyModelConfig,
    accuracy,
    depth_map,
    forward,
    init_params,
    loss_and_grads,
    map_to_params,
    params_to_map,
    sgd_train,
    topology_config,
)

__all__ = [
    "ForgettingReport",
    "MergingReport",
    "SyntheticTaskSpec",
    "TaskData",
    "ToyExperimentConfig",
    "ToyModelConfig",
    "World",
    "accuracy",
    "build_world",
    "depth_map",
    "evaluate_checkpoint",
    "format_forgetting_text",
    "format_merging_text",
    "forward",
    "generate_task",
    "init_params",
    "loss_and_grads",
    "map_to_params",
    "mixture",
    "params_to_map",
    "run_forgetting",
    "run_merging",
    "sgd_train",
    "topology_config",
    "write_eval_config",
]
