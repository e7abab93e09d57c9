"""Builtin evaluation datasets, generated deterministically from task seeds."""

import numpy as np

from .errors import DatasetError

SPLITS = ("val", "test")


def majority_token_split(task, spec, split):
    """Token sequences with a strict majority group; the label is that group.

    Tokens t belong to group t mod classes. A little over half of each
    sequence is drawn from one group, the rest from the others, so the
    majority is always unique. val and test are disjoint halves of a
    single seeded stream.
    """
    n = task.samples_per_split
    rng = np.random.default_rng(task.seed)
    groups = spec.classes
    per_group = spec.vocab_size // groups
    majority = spec.seq_len // 2 + 1
    rest = spec.seq_len - majority
    tokens = np.empty((2 * n, spec.seq_len), dtype=np.int64)
    labels = np.empty(2 * n, dtype=np.int64)
    for i in range(2 * n):
        label = int(rng.integers(groups))
        seq = np.empty(spec.seq_len, dtype=np.int64)
        seq[:majority] = label + groups * rng.integers(per_group, size=majority)
        others = rng.integers(groups - 1, size=rest)
        others = others + (others >= label)
        seq[majority:] = others + groups * rng.integers(per_group, size=rest)
        rng.shuffle(seq)
        tokens[i] = seq
        labels[i] = label
    start = 0 if split == "val" else n
    return tokens[start:start + n], labels[start:start + n]


DATASETS = {"majority-token": majority_token_split}


def load_split(task, spec, split):
    """Build (tokens, labels) for one task and split."""
    if split not in SPLITS:
        raise DatasetError(f"unknown split '{split}'; known: {', '.join(SPLITS)}")
    try:
        builder = DATASETS[task.dataset]
    except KeyError:
        known = ", ".join(sorted(DATASETS))
        raise DatasetError(f"task '{task.name}': unknown dataset '{task.dataset}'; known: {known}") from None
    return builder(task, spec, split)
