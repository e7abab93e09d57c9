"""A small residual MLP classifier in plain numpy.

The network is an input projection, a stack of residual blocks
``h <- h + relu(h @ W + b)``, and a linear head. Parameters are named
``embed.*``, ``blocks.layer{d}.*``, ``head.*`` so the toolkit's block
pattern ``.layer{d}.`` applies directly. Training is plain SGD on softmax
cross-entropy with manual gradients; everything runs in float64 with
seeded numpy generators, so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..store import NamedTensorMap
from ..topology import DepthMap, TopologyConfig, infer_depths


@dataclass(frozen=True)
class ToyModelConfig:
    num_blocks: int = 6
    width: int = 32
    in_dim: int = 16
    num_classes: int = 4
    # Residual-branch init. Bias offsets are graded across depth, so shallow
    # blocks start mostly inactive and deep blocks mostly active. That tilts
    # both forward feature mass and gradient flow toward the deeper blocks,
    # giving fine-tuning updates a depth profile worth editing.
    block_weight_scale: float = 0.7
    block_bias_low: float = -1.5
    block_bias_high: float = 0.5


def parameter_names(config: ToyModelConfig) -> list[str]:
    names = ["embed.weight", "embed.bias"]
    for d in range(config.num_blocks):
        names += [f"blocks.layer{d}.weight", f"blocks.layer{d}.bias"]
    names += ["head.weight", "head.bias"]
    return names


def topology_config(config: ToyModelConfig) -> TopologyConfig:
    return TopologyConfig(block_pattern=".layer{d}.", num_blocks=config.num_blocks)


def depth_map(config: ToyModelConfig) -> DepthMap:
    return infer_depths(parameter_names(config), topology_config(config))


def init_params(config: ToyModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded random init with depth-graded residual biases."""
    rng = np.random.default_rng(seed)
    params = {
        "embed.weight": rng.normal(0.0, 1.0 / np.sqrt(config.in_dim), (config.in_dim, config.width)),
        "embed.bias": np.zeros(config.width),
        "head.weight": rng.normal(0.0, 1.0 / np.sqrt(config.width), (config.width, config.num_classes)),
        "head.bias": np.zeros(config.num_classes),
    }
    span = config.num_blocks - 1 if config.num_blocks > 1 else 1
    for d in range(config.num_blocks):
        offset = config.block_bias_low + (config.block_bias_high - config.block_bias_low) * d / span
        params[f"blocks.layer{d}.weight"] = rng.normal(
            0.0, config.block_weight_scale / np.sqrt(config.width), (config.width, config.width)
        )
        params[f"blocks.layer{d}.bias"] = np.full(config.width, offset)
    return params


def _num_blocks_of(params: dict[str, np.ndarray]) -> int:
    return sum(1 for name in params if name.endswith(".weight") and name.startswith("blocks.layer"))


def forward(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    """Logits for a batch of inputs."""
    h = x @ params["embed.weight"] + params["embed.bias"]
    for d in range(_num_blocks_of(params)):
        z = h @ params[f"blocks.layer{d}.weight"] + params[f"blocks.layer{d}.bias"]
        h = h + np.maximum(z, 0.0)
    return h @ params["head.weight"] + params["head.bias"]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def loss_and_grads(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient for every parameter."""
    num_blocks = _num_blocks_of(params)
    h = x @ params["embed.weight"] + params["embed.bias"]
    pre_acts, inputs = [], []
    for d in range(num_blocks):
        z = h @ params[f"blocks.layer{d}.weight"] + params[f"blocks.layer{d}.bias"]
        inputs.append(h)
        pre_acts.append(z)
        h = h + np.maximum(z, 0.0)
    logits = h @ params["head.weight"] + params["head.bias"]

    probs = _softmax(logits)
    batch = x.shape[0]
    loss = float(-np.log(probs[np.arange(batch), y] + 1e-12).mean())

    dlogits = probs.copy()
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch

    grads = {
        "head.weight": h.T @ dlogits,
        "head.bias": dlogits.sum(axis=0),
    }
    dh = dlogits @ params["head.weight"].T
    for d in reversed(range(num_blocks)):
        dz = dh * (pre_acts[d] > 0)
        grads[f"blocks.layer{d}.weight"] = inputs[d].T @ dz
        grads[f"blocks.layer{d}.bias"] = dz.sum(axis=0)
        dh = dh + dz @ params[f"blocks.layer{d}.weight"].T
    grads["embed.weight"] = x.T @ dh
    grads["embed.bias"] = dh.sum(axis=0)
    return loss, grads


def sgd_train(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
) -> dict[str, np.ndarray]:
    """Plain minibatch SGD with a seeded per-epoch shuffle."""
    params = {name: arr.astype(np.float64, copy=True) for name, arr in params.items()}
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grads = loss_and_grads(params, x[idx], y[idx])
            for name, grad in grads.items():
                params[name] -= lr * grad
    return params


def accuracy(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> float:
    predictions = forward(params, x).argmax(axis=1)
    return float((predictions == y).mean())


def params_to_map(params: dict[str, np.ndarray]) -> NamedTensorMap:
    """Wrap float64 training parameters as a tensor map (F64 originals)."""
    return NamedTensorMap.from_arrays({k: np.asarray(v, dtype=np.float64) for k, v in params.items()})


def map_to_params(tensors: NamedTensorMap) -> dict[str, np.ndarray]:
    return {name: np.asarray(arr, dtype=np.float64) for name, arr in tensors.entries.items()}
