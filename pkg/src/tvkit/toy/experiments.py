"""Desk-scale experiments on the toy harness.

Two experiments, both built on the same world: a pre-trained model (SGD on
a mixture of lightly relabeled tasks) and one fine-tuned model per target
task.

* run_forgetting edits each fine-tuned model with the single-knob
  depth-wise schedule over a gamma grid, trades target retention against
  control-task accuracy, and compares the standard schedule against its
  depth-reversed mirror.
* run_merging merges all task residuals into one model and compares plain
  residual addition against the same merge with depth-wise scaling on top,
  both tuned on validation data.

Reports are plain dataclasses with dict/JSON export so the CLI can print
them either way.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ToolkitError
from ..mergers import merge_pipeline
from ..schedule import ScalingSchedule, TradeoffCandidate, scale, select_gamma
from ..search import EvalResult
from ..store import NamedTensorMap, read_checkpoint
from ..topology import DepthMap
from ..vectors import apply, extract
from .data import SyntheticTaskSpec, TaskData, generate_task, mixture
from .model import (
    ToyModelConfig,
    accuracy,
    depth_map,
    init_params,
    map_to_params,
    params_to_map,
    sgd_train,
)

DEFAULT_GAMMAS = tuple(round(0.1 * i, 10) for i in range(11))
DEFAULT_BETA_GRID = tuple(round(0.1 * i, 10) for i in range(1, 11))
DEFAULT_COEFF_GRID = tuple(round(0.1 * i, 10) for i in range(1, 11))


@dataclass(frozen=True)
class ToyExperimentConfig:
    """Everything needed to build a world and run both experiments."""

    # model
    num_blocks: int = 6
    width: int = 32
    in_dim: int = 16
    num_classes: int = 4
    # shared task geometry: each task owns its own block of clusters
    clusters_per_task: int = 8
    cluster_spread: float = 0.28
    samples_per_split: tuple[int, int, int] = (600, 300, 300)
    # tasks: each swaps two classes inside its region (a coherent label
    # change) and individually relabels a further fraction of clusters
    num_tasks: int = 3
    task_relabel_fraction: float = 0.125
    task_class_swap: bool = True
    task_anchor_fraction: float = 0.0
    pretrain_tasks: int = 4
    pretrain_relabel_fraction: float = 0.08
    # optimization
    pretrain_epochs: int = 40
    pretrain_lr: float = 0.1
    finetune_epochs: int = 50
    finetune_lr: float = 0.045
    batch_size: int = 64
    # schedule search
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    target_weight: float = 2.0
    shape: str = "linear"
    # merging grids
    coefficient_grid: tuple[float, ...] = DEFAULT_COEFF_GRID
    beta_grid: tuple[float, ...] = DEFAULT_BETA_GRID

    def model_config(self) -> ToyModelConfig:
        return ToyModelConfig(
            num_blocks=self.num_blocks,
            width=self.width,
            in_dim=self.in_dim,
            num_classes=self.num_classes,
        )

    @property
    def num_clusters(self) -> int:
        return self.num_tasks * self.clusters_per_task

    def task_spec(self, seed: int, task_index: int) -> SyntheticTaskSpec:
        """Target task: owns one block of clusters with edited labels."""
        start = task_index * self.clusters_per_task
        swap = None
        if self.task_class_swap:
            rng = np.random.default_rng([seed, task_index, 7])
            swap = tuple(int(c) for c in rng.choice(self.num_classes, size=2, replace=False))
        return SyntheticTaskSpec(
            seed=1000 * seed + task_index,
            num_classes=self.num_classes,
            samples_per_split=tuple(self.samples_per_split),
            cluster_spread=self.cluster_spread,
            in_dim=self.in_dim,
            num_clusters=self.num_clusters,
            cluster_subset=tuple(range(start, start + self.clusters_per_task)),
            relabel_fraction=self.task_relabel_fraction,
            class_swap=swap,
            anchor_fraction=self.task_anchor_fraction,
            layout_seed=100 + seed,
        )

    def pretrain_spec(self, seed: int, task_index: int) -> SyntheticTaskSpec:
        """Pre-training task: spans every cluster, lightly relabeled."""
        return SyntheticTaskSpec(
            seed=1000 * seed + 500 + task_index,
            num_classes=self.num_classes,
            samples_per_split=tuple(self.samples_per_split),
            cluster_spread=self.cluster_spread,
            in_dim=self.in_dim,
            num_clusters=self.num_clusters,
            cluster_subset=None,
            relabel_fraction=self.pretrain_relabel_fraction,
            layout_seed=100 + seed,
        )

    @classmethod
    def from_json(cls, source) -> "ToyExperimentConfig":
        if isinstance(source, (str, os.PathLike)):
            with open(source, "r", encoding="utf-8") as fh:
                source = json.load(fh)
        if not isinstance(source, dict):
            raise ToolkitError("toy experiment config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(source) - known
        if unknown:
            raise ToolkitError(f"unknown toy config fields: {sorted(unknown)}")
        coerced = dict(source)
        for name in ("samples_per_split", "gammas", "coefficient_grid", "beta_grid"):
            if name in coerced:
                coerced[name] = tuple(coerced[name])
        return cls(**coerced)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class World:
    """A pre-trained base plus one fine-tuned model per task."""

    seed: int
    config: ToyExperimentConfig
    base: NamedTensorMap
    tasks: list[TaskData]
    finetuned: list[NamedTensorMap]
    depths: DepthMap

    def finetuned_accuracy(self, task_index: int, split: str) -> float:
        params = map_to_params(self.finetuned[task_index])
        task = self.tasks[task_index]
        return accuracy(params, task.x(split), task.y(split))

    def base_accuracy(self, task_index: int, split: str) -> float:
        params = map_to_params(self.base)
        task = self.tasks[task_index]
        return accuracy(params, task.x(split), task.y(split))


def build_world(config: ToyExperimentConfig, seed: int) -> World:
    """Pre-train on a coarse mixture, then fine-tune once per target task."""
    model_cfg = config.model_config()
    init = init_params(model_cfg, seed=7000 + seed)

    coarse = [generate_task(config.pretrain_spec(seed, j)) for j in range(config.pretrain_tasks)]
    x, y = mixture(coarse, "train", seed=seed)
    base_params = sgd_train(
        init, x, y,
        epochs=config.pretrain_epochs, lr=config.pretrain_lr,
        batch_size=config.batch_size, seed=9000 + seed,
    )

    tasks = [generate_task(config.task_spec(seed, i)) for i in range(config.num_tasks)]
    finetuned = []
    for i, task in enumerate(tasks):
        tuned = sgd_train(
            base_params, task.x("train"), task.y("train"),
            epochs=config.finetune_epochs, lr=config.finetune_lr,
            batch_size=config.batch_size, seed=9100 + 10 * seed + i,
        )
        finetuned.append(params_to_map(tuned))
    return World(
        seed=seed,
        config=config,
        base=params_to_map(base_params),
        tasks=tasks,
        finetuned=finetuned,
        depths=depth_map(model_cfg),
    )


def _model_accuracy(model: NamedTensorMap, task: TaskData, split: str) -> float:
    return accuracy(map_to_params(model), task.x(split), task.y(split))


@dataclass
class ForgettingTaskReport:
    task_index: int
    selected_gamma: float
    target_norm_val: dict[float, float]
    control_norm_val: dict[float, float]
    target_norm_test: dict[float, float]
    control_norm_test: dict[float, float]
    reversed_target_norm_test: dict[float, float]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ForgettingReport:
    seed: int
    per_task: list[ForgettingTaskReport] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "per_task": [t.to_dict() for t in self.per_task]}


def run_forgetting(config: ToyExperimentConfig, seed: int, world: World | None = None) -> ForgettingReport:
    """Gamma-sweep each fine-tuned model and pick the trade-off point.

    Accuracies are normalized: target by the fine-tuned model's own
    accuracy, controls by the pre-trained model's accuracy on them.
    """
    world = world or build_world(config, seed)
    depths = world.depths
    reversed_depths = depths.reversed()
    report = ForgettingReport(seed=seed)

    for t in range(config.num_tasks):
        controls = [u for u in range(config.num_tasks) if u != t]
        residual = extract(world.finetuned[t], world.base)
        target_denoms = {s: world.finetuned_accuracy(t, s) for s in ("val", "test")}
        control_denoms = {(u, s): world.base_accuracy(u, s) for u in controls for s in ("val", "test")}

        target_val, control_val = {}, {}
        target_test, control_test, reversed_test = {}, {}, {}
        for gamma in config.gammas:
            if gamma == 1.0:
                # identity schedule: reuse the fine-tuned checkpoint so the
                # gamma=1 row matches the plain fine-tuned evaluation exactly
                edited = mirrored = world.finetuned[t]
            else:
                schedule = ScalingSchedule.gamma_form(gamma, shape=config.shape)
                edited = apply(world.base, scale(residual, depths, schedule))
                mirrored = apply(world.base, scale(residual, reversed_depths, schedule))
            target_val[gamma] = _model_accuracy(edited, world.tasks[t], "val") / target_denoms["val"]
            target_test[gamma] = _model_accuracy(edited, world.tasks[t], "test") / target_denoms["test"]
            reversed_test[gamma] = _model_accuracy(mirrored, world.tasks[t], "test") / target_denoms["test"]
            for split, store_ in (("val", control_val), ("test", control_test)):
                ratios = [
                    _model_accuracy(edited, world.tasks[u], split) / control_denoms[(u, split)]
                    for u in controls
                ]
                store_[gamma] = float(np.mean(ratios))

        candidates = [
            TradeoffCandidate(gamma=g, target_metric=target_val[g], control_metric=control_val[g])
            for g in config.gammas
        ]
        chosen = select_gamma(candidates, target_weight=config.target_weight)
        report.per_task.append(
            ForgettingTaskReport(
                task_index=t,
                selected_gamma=chosen.gamma,
                target_norm_val=target_val,
                control_norm_val=control_val,
                target_norm_test=target_test,
                control_norm_test=control_test,
                reversed_target_norm_test=reversed_test,
            )
        )
    return report


@dataclass
class MergingMethodReport:
    method: str
    baseline_coefficient: float
    baseline_val: float
    baseline_test: float
    scaled_alpha: float
    scaled_beta: float
    scaled_val: float
    scaled_test: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MergingReport:
    seed: int
    methods: list[MergingMethodReport] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "methods": [m.to_dict() for m in self.methods]}


def _normalized_average(model: NamedTensorMap, world: World, split: str) -> float:
    ratios = [
        _model_accuracy(model, world.tasks[t], split) / world.finetuned_accuracy(t, split)
        for t in range(len(world.tasks))
    ]
    return float(np.mean(ratios))


def run_merging(
    config: ToyExperimentConfig,
    seed: int,
    methods: tuple[str, ...] = ("ta",),
    world: World | None = None,
) -> MergingReport:
    """Compare a tuned plain merge against the same merge with depth scaling."""
    from ..mergers import MERGE_METHODS

    world = world or build_world(config, seed)
    residuals = [extract(m, world.base) for m in world.finetuned]
    report = MergingReport(seed=seed)

    for method in methods:
        if method not in MERGE_METHODS:
            raise ToolkitError(f"unknown merge method {method!r}")
        merged = MERGE_METHODS[method](residuals)

        best_coeff, best_val = None, -np.inf
        for coeff in config.coefficient_grid:
            candidate = apply(world.base, merged, coeff)
            val = _normalized_average(candidate, world, "val")
            if val > best_val:
                best_coeff, best_val = coeff, val
        baseline_model = apply(world.base, merged, best_coeff)
        baseline_test = _normalized_average(baseline_model, world, "test")

        best_beta, best_scaled_val, best_alpha = None, -np.inf, None
        for beta in config.beta_grid:
            result = merge_pipeline(
                world.base, residuals, world.depths, method=method, beta=beta, shape=config.shape
            )
            val = _normalized_average(result.model, world, "val")
            if val > best_scaled_val:
                best_beta, best_scaled_val, best_alpha = beta, val, result.alpha
        final = merge_pipeline(
            world.base, residuals, world.depths, method=method, beta=best_beta, shape=config.shape
        )
        scaled_test = _normalized_average(final.model, world, "test")

        report.methods.append(
            MergingMethodReport(
                method=method,
                baseline_coefficient=best_coeff,
                baseline_val=best_val,
                baseline_test=baseline_test,
                scaled_alpha=best_alpha,
                scaled_beta=best_beta,
                scaled_val=best_scaled_val,
                scaled_test=scaled_test,
            )
        )
    return report


def evaluate_checkpoint(config_path, checkpoint_path, split: str) -> EvalResult:
    """Built-in evaluator for 'toy:<config.json>' specs.

    The config names a model shape and a list of task specs; the metric is
    mean accuracy over the tasks, with a per-task breakdown.
    """
    with open(config_path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict) or "tasks" not in config:
        raise ToolkitError("toy evaluator config must be a JSON object with a 'tasks' list")
    tensors = read_checkpoint(checkpoint_path, working_dtype="float64")
    params = map_to_params(tensors)
    per_task = {}
    for index, entry in enumerate(config["tasks"]):
        coerced = dict(entry)
        if "samples_per_split" in coerced:
            coerced["samples_per_split"] = tuple(coerced["samples_per_split"])
        task = generate_task(SyntheticTaskSpec(**coerced))
        per_task[f"task{index}"] = accuracy(params, task.x(split), task.y(split))
    if not per_task:
        raise ToolkitError("toy evaluator config lists no tasks")
    return EvalResult(metric=float(np.mean(list(per_task.values()))), per_task=per_task)


def write_eval_config(path, config: ToyExperimentConfig, seed: int, task_indices=None) -> None:
    """Emit an evaluator config usable as 'toy:<path>' for the target tasks."""
    indices = list(task_indices) if task_indices is not None else list(range(config.num_tasks))
    tasks = [dataclasses.asdict(config.task_spec(seed, i)) for i in indices]
    payload = {"model": dataclasses.asdict(config.model_config()), "tasks": tasks}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=list)
        fh.write("\n")


def format_forgetting_text(report: ForgettingReport) -> str:
    """Fixed-width table of one forgetting run: one block per task."""
    lines = [f"forgetting report (seed {report.seed})"]
    for tr in report.per_task:
        lines.append(f"task {tr.task_index} (selected gamma {tr.selected_gamma:.2f})")
        lines.append(f"  {'gamma':>6} {'tgt val':>8} {'ctl val':>8} {'tgt test':>9} {'ctl test':>9} {'rev test':>9}")
        for g in sorted(tr.target_norm_val):
            mark = " *" if g == tr.selected_gamma else ""
            lines.append(
                f"  {g:6.2f} {tr.target_norm_val[g]:8.4f} {tr.control_norm_val[g]:8.4f}"
                f" {tr.target_norm_test[g]:9.4f} {tr.control_norm_test[g]:9.4f}"
                f" {tr.reversed_target_norm_test[g]:9.4f}{mark}"
            )
    return "\n".join(lines) + "\n"


def format_merging_text(report: MergingReport) -> str:
    """Fixed-width table of one merging run: one row per method."""
    lines = [
        f"merging report (seed {report.seed})",
        f"  {'method':<10} {'coeff':>6} {'base val':>9} {'base test':>10} {'alpha':>7} {'beta':>5} {'scl val':>8} {'scl test':>9}",
    ]
    for m in report.methods:
        lines.append(
            f"  {m.method:<10} {m.baseline_coefficient:6.2f} {m.baseline_val:9.4f} {m.baseline_test:10.4f}"
            f" {m.scaled_alpha:7.4f} {m.scaled_beta:5.2f} {m.scaled_val:8.4f} {m.scaled_test:9.4f}"
        )
    return "\n".join(lines) + "\n"
