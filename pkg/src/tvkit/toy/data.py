"""Synthetic classification tasks over a shared Gaussian cluster layout.

The layout (fixed by layout_seed) holds many clusters with a balanced base
cluster-to-class labeling. Each task owns a subset of clusters (its input
region) and relabels a seeded fraction of them, so a fine-tuned model has
something real to learn on its own region while its behavior elsewhere is
unconstrained. Pre-training tasks span all clusters with only light
relabeling, standing in for broad general-purpose training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ToolkitError


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """One labeling of (a region of) the shared cluster layout.

    cluster_subset selects the task's input region (None means every
    cluster). relabel_fraction controls how much of the region's labeling
    disagrees with the shared base labeling.
    """

    seed: int
    num_classes: int = 4
    samples_per_split: tuple[int, int, int] = (600, 300, 300)
    cluster_spread: float = 0.35
    in_dim: int = 16
    num_clusters: int = 24
    cluster_subset: tuple[int, ...] | None = None
    relabel_fraction: float = 0.125
    class_swap: tuple[int, int] | None = None
    anchor_fraction: float = 0.0
    layout_seed: int = 7

    def __post_init__(self):
        if self.num_clusters < self.num_classes:
            raise ToolkitError("need at least one cluster per class")
        if not 0.0 <= self.relabel_fraction <= 1.0:
            raise ToolkitError("relabel_fraction must lie in [0, 1]")
        if not 0.0 <= self.anchor_fraction < 1.0:
            raise ToolkitError("anchor_fraction must lie in [0, 1)")
        if self.anchor_fraction > 0.0 and self.cluster_subset is None:
            raise ToolkitError("anchor_fraction needs a cluster_subset to anchor against")
        if self.class_swap is not None:
            a, b = self.class_swap
            if a == b or not all(0 <= c < self.num_classes for c in (a, b)):
                raise ToolkitError(f"class_swap must name two distinct classes, got {self.class_swap}")
        if self.cluster_subset is not None:
            subset = tuple(self.cluster_subset)
            if not subset:
                raise ToolkitError("cluster_subset must not be empty")
            if any(not 0 <= c < self.num_clusters for c in subset):
                raise ToolkitError("cluster_subset indices out of range")
            if len(set(subset)) != len(subset):
                raise ToolkitError("cluster_subset has duplicates")

    def region(self) -> np.ndarray:
        if self.cluster_subset is None:
            return np.arange(self.num_clusters)
        return np.asarray(self.cluster_subset, dtype=np.int64)


@dataclass
class TaskData:
    spec: SyntheticTaskSpec
    cluster_to_class: np.ndarray
    splits: dict[str, tuple[np.ndarray, np.ndarray]]

    def x(self, split: str) -> np.ndarray:
        return self.splits[split][0]

    def y(self, split: str) -> np.ndarray:
        return self.splits[split][1]


def cluster_centers(spec: SyntheticTaskSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.layout_seed)
    return rng.normal(0.0, 1.0, (spec.num_clusters, spec.in_dim))


def base_label_map(spec: SyntheticTaskSpec) -> np.ndarray:
    """Shared cluster-to-class assignment, balanced within blocks of clusters.

    Classes are dealt out in consecutive blocks of num_classes clusters
    (each block holds every class once, in seeded order), so any aligned
    subset of whole blocks is class-balanced.
    """
    rng = np.random.default_rng([spec.layout_seed, 1])
    labels = np.empty(spec.num_clusters, dtype=np.int64)
    for start in range(0, spec.num_clusters, spec.num_classes):
        block = rng.permutation(spec.num_classes)
        end = min(start + spec.num_classes, spec.num_clusters)
        labels[start:end] = block[: end - start]
    return labels


def task_label_map(spec: SyntheticTaskSpec) -> np.ndarray:
    """The task's labeling: base map edited inside the task's region.

    Two kinds of edit compose. class_swap exchanges two classes wholesale
    (every region cluster of one class takes the other, both ways), a
    coherent label change shared by several clusters. relabel_fraction then
    moves a seeded count of the untouched clusters to individually drawn
    new classes. Reassigned clusters always change class; redraws keep
    every class present inside the region.
    """
    labels = base_label_map(spec)
    region = spec.region()
    swapped = np.zeros(0, dtype=np.int64)
    if spec.class_swap is not None:
        a, b = spec.class_swap
        in_a = region[labels[region] == a]
        in_b = region[labels[region] == b]
        labels[in_a] = b
        labels[in_b] = a
        swapped = np.concatenate([in_a, in_b])
    count = int(round(spec.relabel_fraction * region.size))
    if count == 0:
        return labels
    free = np.setdiff1d(region, swapped)
    if free.size < count:
        raise ToolkitError("relabel_fraction leaves no room next to the class swap")
    rng = np.random.default_rng([spec.seed, spec.layout_seed, 2])
    for _ in range(100):
        candidate = labels.copy()
        chosen = rng.choice(free, size=count, replace=False)
        shifts = rng.integers(1, spec.num_classes, size=count)
        candidate[chosen] = (candidate[chosen] + shifts) % spec.num_classes
        if len(np.unique(candidate[region])) == spec.num_classes:
            return candidate
    raise ToolkitError(f"could not find a relabeling covering all classes for seed {spec.seed}")


def generate_task(spec: SyntheticTaskSpec) -> TaskData:
    """Sample train/val/test splits from the region, stratified by class.

    When anchor_fraction is set, that share of the train split is drawn
    from clusters outside the region and keeps the base labeling. Anchors
    pin the model's behavior off-region during fine-tuning, so label edits
    must be learned conditionally on the region instead of as a blanket
    output rule. Val and test stay pure region data.
    """
    centers = cluster_centers(spec)
    labels = task_label_map(spec)
    base = base_label_map(spec)
    region = spec.region()
    outside = np.setdiff1d(np.arange(spec.num_clusters), region)
    splits = {}
    for index, (split, size) in enumerate(zip(("train", "val", "test"), spec.samples_per_split)):
        rng = np.random.default_rng([spec.seed, spec.layout_seed, 3 + index])
        anchors = int(round(spec.anchor_fraction * size)) if split == "train" else 0
        if anchors > 0 and outside.size == 0:
            raise ToolkitError("anchor_fraction needs clusters outside the region")
        body = size - anchors
        xs, ys = [], []
        for cls in range(spec.num_classes):
            clusters = region[labels[region] == cls]
            quota = body // spec.num_classes + (1 if cls < body % spec.num_classes else 0)
            picks = rng.choice(clusters, size=quota)
            noise = rng.normal(0.0, spec.cluster_spread, (quota, spec.in_dim))
            xs.append(centers[picks] + noise)
            ys.append(np.full(quota, cls, dtype=np.int64))
        if anchors > 0:
            picks = rng.choice(outside, size=anchors)
            noise = rng.normal(0.0, spec.cluster_spread, (anchors, spec.in_dim))
            xs.append(centers[picks] + noise)
            ys.append(base[picks])
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = rng.permutation(x.shape[0])
        splits[split] = (x[order], y[order])
    return TaskData(spec=spec, cluster_to_class=labels, splits=splits)


def mixture(tasks: list[TaskData], split: str, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate one split of several tasks and shuffle once."""
    if not tasks:
        raise ToolkitError("mixture needs at least one task")
    x = np.concatenate([t.x(split) for t in tasks])
    y = np.concatenate([t.y(split) for t in tasks])
    order = np.random.default_rng([seed, 4]).permutation(x.shape[0])
    return x[order], y[order]
