"""Shared builders for randomized test instances."""

import numpy as np
import pytest

from tvkit import NamedTensorMap, TaskVector, TopologyConfig, infer_depths

# A small two-block layout exercised by most vector and schedule tests.
LAYOUT = {
    "embed.w": (3, 4),
    "blocks.layer0.w": (4, 4),
    "blocks.layer0.b": (4,),
    "blocks.layer1.w": (4, 4),
    "head.w": (4, 2),
}

TOPOLOGY = TopologyConfig(block_pattern=".layer{d}.", num_blocks=2)


def random_entries(rng, layout=LAYOUT, scale=1.0):
    return {name: rng.normal(0.0, scale, shape).astype(np.float32) for name, shape in layout.items()}


def random_map(rng, layout=LAYOUT, scale=1.0):
    return NamedTensorMap.from_arrays(random_entries(rng, layout, scale))


def random_vector(rng, layout=LAYOUT, scale=1.0):
    return TaskVector(entries=random_entries(rng, layout, scale))


@pytest.fixture
def depths():
    return infer_depths(sorted(LAYOUT), TOPOLOGY)
