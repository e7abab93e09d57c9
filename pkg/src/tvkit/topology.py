"""Block-structure inference for parameter names.

Residual networks name their per-block parameters with an index embedded in
the key (e.g. ``blocks.layer3.weight``). A TopologyConfig describes where
that index sits; infer_depths turns a set of parameter names into a DepthMap
assigning each name to a block depth, to the out-of-block group (embeddings,
heads, norms), or to an excluded group that scaling never touches.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass

from .errors import TopologyError

OUT_OF_BLOCK_POLICIES = ("alpha", "one", "zero")


@dataclass(frozen=True)
class TopologyConfig:
    """How to recognise block indices inside parameter names.

    block_pattern contains the placeholder '{d}' exactly once, e.g.
    '.layer{d}.'. Keys matching the pattern belong to the block whose index
    the placeholder captured. include_prefixes, when non-empty, restricts
    participation: keys matching no prefix are excluded from scaling
    entirely. out_of_block_policy picks the factor for participating keys
    without a block index: 'alpha' (schedule start), 'one' (untouched), or
    'zero' (dropped).
    """

    block_pattern: str
    num_blocks: int
    include_prefixes: tuple[str, ...] = ()
    out_of_block_policy: str = "alpha"

    def __post_init__(self):
        if self.block_pattern.count("{d}") != 1:
            raise TopologyError(
                f"block_pattern must contain the placeholder '{{d}}' exactly once, got {self.block_pattern!r}"
            )
        if self.num_blocks < 2:
            raise TopologyError(
                f"num_blocks must be at least 2 (depth factors divide by num_blocks - 1), got {self.num_blocks}"
            )
        if self.out_of_block_policy not in OUT_OF_BLOCK_POLICIES:
            raise TopologyError(
                f"out_of_block_policy must be one of {OUT_OF_BLOCK_POLICIES}, got {self.out_of_block_policy!r}"
            )

    @classmethod
    def from_json(cls, source: str | os.PathLike | dict) -> "TopologyConfig":
        if isinstance(source, (str, os.PathLike)):
            with open(source, "r", encoding="utf-8") as fh:
                source = json.load(fh)
        if not isinstance(source, dict):
            raise TopologyError("topology config must be a JSON object")
        known = {"block_pattern", "num_blocks", "include_prefixes", "out_of_block_policy"}
        unknown = set(source) - known
        if unknown:
            raise TopologyError(f"unknown topology config fields: {sorted(unknown)}")
        try:
            return cls(
                block_pattern=source["block_pattern"],
                num_blocks=int(source["num_blocks"]),
                include_prefixes=tuple(source.get("include_prefixes", ())),
                out_of_block_policy=source.get("out_of_block_policy", "alpha"),
            )
        except KeyError as exc:
            raise TopologyError(f"topology config missing required field: {exc}") from exc


@dataclass(frozen=True)
class DepthMap:
    """Assignment of parameter names to block depths and side groups.

    depths maps in-block names to 0-based depth; out_of_block and excluded
    hold the remaining names. The three groups are disjoint and together
    cover every name that was classified.
    """

    depths: dict[str, int]
    out_of_block: frozenset[str]
    excluded: frozenset[str]
    num_blocks: int

    def all_names(self) -> set[str]:
        return set(self.depths) | set(self.out_of_block) | set(self.excluded)

    def reversed(self) -> "DepthMap":
        """Mirror the schedule: depth d becomes num_blocks - 1 - d."""
        flipped = {name: self.num_blocks - 1 - d for name, d in self.depths.items()}
        return DepthMap(flipped, self.out_of_block, self.excluded, self.num_blocks)


def _pattern_regex(block_pattern: str) -> re.Pattern:
    prefix, suffix = block_pattern.split("{d}")
    # Zero-width lookahead so overlapping occurrences (shared delimiters)
    # are still all seen when checking for ambiguity.
    return re.compile(f"(?=({re.escape(prefix)}(\\d+){re.escape(suffix)}))")


def infer_depths(names, config: TopologyConfig) -> DepthMap:
    """Classify parameter names into block depths / out-of-block / excluded.

    A name with more than one pattern occurrence is ambiguous and raises;
    so does a block index outside [0, num_blocks).
    """
    regex = _pattern_regex(config.block_pattern)
    depths: dict[str, int] = {}
    out_of_block: set[str] = set()
    excluded: set[str] = set()
    for name in names:
        if config.include_prefixes and not any(name.startswith(p) for p in config.include_prefixes):
            excluded.add(name)
            continue
        matches = [m.group(2) for m in regex.finditer(name)]
        if len(matches) > 1:
            raise TopologyError(
                f"parameter name {name!r} matches block pattern {config.block_pattern!r} "
                f"{len(matches)} times; block assignment is ambiguous"
            )
        if not matches:
            out_of_block.add(name)
            continue
        depth = int(matches[0])
        if not 0 <= depth < config.num_blocks:
            raise TopologyError(
                f"parameter name {name!r} has block index {depth}, outside [0, {config.num_blocks})"
            )
        depths[name] = depth
    return DepthMap(depths, frozenset(out_of_block), frozenset(excluded), config.num_blocks)
