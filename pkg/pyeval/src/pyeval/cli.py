"""Command line entry points.

`pyeval` speaks the evaluator subprocess protocol: given --config,
--checkpoint, and --split it prints exactly one JSON object
{"metric": number, "per_task": {name: number}} to stdout and exits 0.
Domain failures exit 1 with a one-line diagnostic on stderr.

`pyeval-export` writes a plant checkpoint in the tool naming scheme.
"""

import argparse
import json
import sys

from .adapter import evaluate, export_state
from .config import load_config
from .data import SPLITS
from .errors import AdapterError
from .model import planted_state, shifted_state


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pyeval", description="evaluate a tool-named checkpoint")
    parser.add_argument("--config", required=True, help="adapter config JSON")
    parser.add_argument("--checkpoint", required=True, help="tensor file to evaluate")
    parser.add_argument("--split", required=True, choices=SPLITS)
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        outcome = evaluate(config, args.checkpoint, args.split)
    except (AdapterError, OSError) as exc:
        print(f"pyeval: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(outcome.to_payload()))
    return 0


PLANTS = {"clean": planted_state, "shifted": shifted_state}


def export(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pyeval-export", description="write a plant checkpoint under tool names")
    parser.add_argument("--config", required=True, help="adapter config JSON")
    parser.add_argument("--plant", required=True, choices=sorted(PLANTS))
    parser.add_argument("--seed", type=int, default=5)
    parser.add_argument("--out", required=True, help="output tensor file")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        export_state(PLANTS[args.plant](config.model, args.seed), config.name_map, args.out)
    except (AdapterError, OSError) as exc:
        print(f"pyeval-export: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry():
    sys.exit(main())


def export_entry():
    sys.exit(export())
