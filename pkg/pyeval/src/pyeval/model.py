"""Tiny single-head transformer classifier plus hand-constructed parameter plants.

The plants exist so the bundled fixtures have a known, non-trivial behaviour
without any training: the clean plant classifies the builtin dataset exactly,
the shifted plant is maximally wrong, and blends of the two land in between.
"""

import math

import numpy as np
import torch
from torch import nn

from .config import ModelSpec


class Block(nn.Module):
    """Pre-norm residual block: single-head attention then a two-layer MLP."""

    def __init__(self, dim, hidden):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)
        self.mlp_norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        h = self.attn_norm(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        scores = q @ k.transpose(1, 2) / math.sqrt(q.shape[-1])
        x = x + self.attn_out(torch.softmax(scores, dim=-1) @ v)
        h = self.mlp_norm(x)
        return x + self.fc2(torch.relu(self.fc1(h)))


class TinyTransformer(nn.Module):
    """Token classifier: embed, run residual blocks, mean-pool, project."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.tok_embed = nn.Embedding(spec.vocab_size, spec.dim)
        self.pos_embed = nn.Parameter(torch.zeros(spec.seq_len, spec.dim))
        self.blocks = nn.ModuleList(Block(spec.dim, spec.hidden) for _ in range(spec.depth))
        self.final_norm = nn.LayerNorm(spec.dim)
        self.head = nn.Linear(spec.dim, spec.classes)

    def forward(self, tokens):
        x = self.tok_embed(tokens) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.head(self.final_norm(x.mean(dim=1)))


def build_model(spec: ModelSpec) -> TinyTransformer:
    """Construct the runtime model in eval mode with a fixed init seed."""
    torch.manual_seed(0)
    model = TinyTransformer(spec)
    model.eval()
    return model


def _sign_directions(dim, count):
    """First `count` non-constant rows of the Sylvester matrix, scaled to +-0.5.

    Rows are zero-mean and mutually orthogonal, so layer normalization keeps
    their mixtures pointing the same way.
    """
    if dim & (dim - 1) or dim <= count:
        raise ValueError(f"dim must be a power of two above {count}, got {dim}")
    h = np.array([[1.0]])
    while h.shape[0] < dim:
        h = np.block([[h, h], [h, -h]])
    return h[1:count + 1] * 0.5


def planted_state(spec: ModelSpec, seed: int = 5) -> dict:
    """State dict that classifies the majority token group exactly.

    Each token group gets its own sign pattern as embedding, every residual
    branch is silenced at its output projection, and the head reads the
    patterns back, so the pooled logits count group occurrences.
    """
    rng = np.random.default_rng(seed)
    directions = _sign_directions(spec.dim, spec.classes)
    groups = np.arange(spec.vocab_size) % spec.classes
    state = {
        "tok_embed.weight": directions[groups],
        "pos_embed": np.zeros((spec.seq_len, spec.dim)),
    }
    for i in range(spec.depth):
        p = f"blocks.{i}."
        state[p + "attn_norm.weight"] = np.ones(spec.dim)
        state[p + "attn_norm.bias"] = np.zeros(spec.dim)
        state[p + "qkv.weight"] = rng.normal(0.0, 0.02, (3 * spec.dim, spec.dim))
        state[p + "qkv.bias"] = np.zeros(3 * spec.dim)
        state[p + "attn_out.weight"] = np.zeros((spec.dim, spec.dim))
        state[p + "attn_out.bias"] = np.zeros(spec.dim)
        state[p + "mlp_norm.weight"] = np.ones(spec.dim)
        state[p + "mlp_norm.bias"] = np.zeros(spec.dim)
        state[p + "fc1.weight"] = rng.normal(0.0, 0.02, (spec.hidden, spec.dim))
        state[p + "fc1.bias"] = np.zeros(spec.hidden)
        state[p + "fc2.weight"] = np.zeros((spec.dim, spec.hidden))
        state[p + "fc2.bias"] = np.zeros(spec.dim)
    state["final_norm.weight"] = np.ones(spec.dim)
    state["final_norm.bias"] = np.zeros(spec.dim)
    state["head.weight"] = directions[:spec.classes]
    state["head.bias"] = np.zeros(spec.classes)
    return {name: np.asarray(value, dtype=np.float32) for name, value in state.items()}


def shifted_state(spec: ModelSpec, seed: int = 5) -> dict:
    """Planted state with head rows rotated one group over: a maximally wrong head."""
    state = planted_state(spec, seed)
    state["head.weight"] = np.roll(state["head.weight"], -1, axis=0)
    return state
