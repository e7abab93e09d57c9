"""Command-line surface: every subcommand wraps exactly one library pipeline.

Exit codes: 0 on success, 1 on domain errors (reported on stderr), 2 on
usage errors (argparse's convention). File outputs are written atomically;
JSON and text reports go to --out when given, stdout otherwise.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .errors import ToolkitError
from .mergers import (
    MERGE_METHODS,
    greedy_soup,
    merge_pipeline,
    rewarded_interpolate,
    uniform_soup,
    wiseft_interpolate,
)
from .schedule import ScalingSchedule, scale
from .search import (
    CONSENSUS_GRID,
    SPLITS,
    TA_GRID,
    TIES_GRID,
    Grid,
    grid_search,
    make_checkpoint_evaluator,
)
from .store import NamedTensorMap, content_hash, read_checkpoint, write_checkpoint
from .topology import OUT_OF_BLOCK_POLICIES, TopologyConfig, infer_depths
from .vectors import apply, extract, load_task_vector, save_task_vector

DEFAULT_GRIDS = {"ta": TA_GRID, "ties": TIES_GRID, "consensus": CONSENSUS_GRID}


def _write_text(path: str | None, text: str) -> None:
    """Print to stdout, or write atomically when a path is given."""
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tvkit-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _depths_for(names, topology_path: str):
    return infer_depths(names, TopologyConfig.from_json(topology_path))


def _method_kwargs(args) -> dict:
    if args.method == "ties":
        return {"keep_fraction": args.keep_fraction}
    if args.method == "consensus":
        return {"mask_lambda": args.mask_lambda, "prune_threshold": args.prune_threshold}
    return {}


def _add_method_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=sorted(MERGE_METHODS), default="ta")
    parser.add_argument("--keep-fraction", type=float, default=0.2,
                        help="ties: fraction of largest-magnitude entries kept per vector")
    parser.add_argument("--mask-lambda", type=float, default=0.4,
                        help="consensus: relative-weight threshold")
    parser.add_argument("--prune-threshold", type=int, default=2, choices=(1, 2),
                        help="consensus: tasks that must claim a coordinate")


def _cmd_extract(args) -> int:
    base = read_checkpoint(args.base)
    finetuned = read_checkpoint(args.finetuned)
    vector = extract(finetuned, base)
    save_task_vector(vector, args.out)
    return 0


def _cmd_scale(args) -> int:
    vector = load_task_vector(args.tv)
    depths = _depths_for(vector.names(), args.topology)
    if args.gamma is not None:
        if args.alpha is not None or args.beta is not None:
            raise ToolkitError("--gamma replaces --alpha/--beta; give one or the other")
        schedule = ScalingSchedule.gamma_form(args.gamma, shape=args.shape)
    else:
        if args.alpha is None or args.beta is None:
            raise ToolkitError("need --alpha and --beta (or --gamma)")
        schedule = ScalingSchedule(alpha=args.alpha, beta=args.beta, shape=args.shape)
    scaled = scale(vector, depths, schedule, out_of_block_policy=args.out_of_block)
    save_task_vector(scaled, args.out)
    return 0


def _cmd_merge(args) -> int:
    base = read_checkpoint(args.base)
    vectors = [load_task_vector(p) for p in args.tv]
    if args.uniform_lambda is not None:
        merged = MERGE_METHODS[args.method](vectors, **_method_kwargs(args))
        model = apply(base, merged, args.uniform_lambda)
    else:
        depths = _depths_for(base.names(), args.topology)
        result = merge_pipeline(
            base, vectors, depths,
            method=args.method, beta=args.beta, shape=args.shape,
            out_of_block_policy=args.out_of_block, method_kwargs=_method_kwargs(args),
        )
        model = result.model
        print(f"alpha={result.alpha:.6f} beta={args.beta}", file=sys.stderr)
    write_checkpoint(model, args.out)
    return 0


def _cmd_soup(args) -> int:
    base = read_checkpoint(args.base)
    members = [read_checkpoint(p) for p in args.member]
    if args.mode == "uniform":
        model = uniform_soup(members, base, include_base=args.include_base)
        write_checkpoint(model, args.out)
        return 0
    if args.evaluator is None:
        raise ToolkitError("greedy soup needs --evaluator")
    evaluate = make_checkpoint_evaluator(args.evaluator, args.split)
    depths = None
    if args.lines_beta is not None:
        if args.topology is None:
            raise ToolkitError("--lines-beta needs --topology")
        depths = _depths_for(base.names(), args.topology)
    result = greedy_soup(
        members, base, lambda m: evaluate(m).metric,
        strict_improvement=args.strict, depths=depths, lines_beta=args.lines_beta,
    )
    write_checkpoint(result.model, args.out)
    report = {
        "selected": [args.member[i] for i in result.selected],
        "history": [
            {"member": args.member[i], "metric": metric, "accepted": accepted}
            for i, metric, accepted in result.history
        ],
        "final_metric": result.final_metric,
    }
    if args.format == "json":
        _write_text(args.report, json.dumps(report, indent=2) + "\n")
    else:
        lines = [f"greedy soup kept {len(result.selected)} of {len(members)} members"]
        for entry in report["history"]:
            verdict = "kept" if entry["accepted"] else "dropped"
            lines.append(f"  {verdict:<8} {entry['member']} (metric {entry['metric']:.6f})")
        lines.append(f"final metric {result.final_metric:.6f}")
        _write_text(args.report, "\n".join(lines) + "\n")
    return 0


def _cmd_interpolate(args) -> int:
    if args.mode == "wiseft":
        if args.base is None or args.finetuned is None or args.gamma is None:
            raise ToolkitError("wiseft needs --base, --finetuned, and --gamma")
        base = read_checkpoint(args.base)
        vector = extract(read_checkpoint(args.finetuned), base)
        schedule, depths = None, None
        if args.lines_alpha is not None or args.lines_beta is not None:
            if args.lines_alpha is None or args.lines_beta is None or args.topology is None:
                raise ToolkitError("depth-wise rescaling needs --lines-alpha, --lines-beta, and --topology")
            schedule = ScalingSchedule(alpha=args.lines_alpha, beta=args.lines_beta, shape=args.shape)
            depths = _depths_for(base.names(), args.topology)
        model = wiseft_interpolate(base, vector, args.gamma, depths=depths, schedule=schedule,
                                   out_of_block_policy=args.out_of_block)
        write_checkpoint(model, args.out)
        return 0
    if args.start is None or args.first is None or args.second is None or args.weight is None:
        raise ToolkitError("rewarded needs --start, --first, --second, and --weight")
    start = read_checkpoint(args.start)
    first = extract(read_checkpoint(args.first), start)
    second = extract(read_checkpoint(args.second), start)
    depths = None
    if args.apply_lines:
        if args.topology is None:
            raise ToolkitError("--apply-lines needs --topology")
        depths = _depths_for(start.names(), args.topology)
    model = rewarded_interpolate(start, first, second, args.weight, depths=depths,
                                 apply_lines=args.apply_lines, out_of_block_policy=args.out_of_block)
    write_checkpoint(model, args.out)
    return 0


def _cmd_search(args) -> int:
    base = read_checkpoint(args.base)
    vectors = [load_task_vector(p) for p in args.tv]
    grid = Grid.from_string(args.grid) if args.grid else DEFAULT_GRIDS[args.method]
    evaluate = make_checkpoint_evaluator(args.evaluator, args.split)
    kwargs = _method_kwargs(args)
    if args.lines:
        depths = _depths_for(base.names(), args.topology) if args.topology else None
        if depths is None:
            raise ToolkitError("--lines needs --topology")

        def builder(coefficient: float) -> NamedTensorMap:
            return merge_pipeline(
                base, vectors, depths,
                method=args.method, beta=coefficient, shape=args.shape,
                out_of_block_policy=args.out_of_block, method_kwargs=kwargs,
            ).model
    else:
        merged = MERGE_METHODS[args.method](vectors, **kwargs)

        def builder(coefficient: float) -> NamedTensorMap:
            return apply(base, merged, coefficient)

    result = grid_search(builder, grid, evaluate, jobs=args.jobs)
    payload = {
        "method": args.method,
        "tuned": "beta" if args.lines else "coefficient",
        "best_coefficient": result.best_coefficient,
        "best_metric": result.best.metric,
        "trace": [{"coefficient": c, "metric": r.metric} for c, r in result.trace],
    }
    if args.format == "json":
        _write_text(args.out, json.dumps(payload, indent=2) + "\n")
    else:
        lines = [f"{payload['tuned']} search over {args.method} ({len(result.trace)} points)"]
        for c, r in result.trace:
            mark = " *" if c == result.best_coefficient else ""
            lines.append(f"  {c:8.4f} -> {r.metric:.6f}{mark}")
        _write_text(args.out, "\n".join(lines) + "\n")
    if args.best_out:
        write_checkpoint(builder(result.best_coefficient), args.best_out)
    return 0


def _cmd_toy(args) -> int:
    from .toy import (
        ToyExperimentConfig,
        build_world,
        format_forgetting_text,
        format_merging_text,
        run_forgetting,
        run_merging,
        write_eval_config,
    )

    config = ToyExperimentConfig.from_json(args.config) if args.config else ToyExperimentConfig()
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [1, 2, 3, 4, 5]
    methods = tuple(args.methods.split(",")) if args.methods else ("ta",)
    payload, text_blocks = {"seeds": seeds, "forgetting": [], "merging": []}, []
    for seed in seeds:
        world = build_world(config, seed)
        if args.emit_checkpoints:
            os.makedirs(args.emit_checkpoints, exist_ok=True)
            write_checkpoint(world.base, os.path.join(args.emit_checkpoints, f"seed{seed}_base.safetensors"))
            for t, model in enumerate(world.finetuned):
                write_checkpoint(model, os.path.join(args.emit_checkpoints, f"seed{seed}_task{t}.safetensors"))
            write_eval_config(os.path.join(args.emit_checkpoints, f"eval_config_seed{seed}.json"), config, seed)
        if args.experiment in ("forgetting", "both"):
            report = run_forgetting(config, seed, world=world)
            payload["forgetting"].append(report.to_dict())
            text_blocks.append(format_forgetting_text(report))
        if args.experiment in ("merging", "both"):
            report = run_merging(config, seed, methods=methods, world=world)
            payload["merging"].append(report.to_dict())
            text_blocks.append(format_merging_text(report))
    if args.format == "json":
        _write_text(args.out, json.dumps(payload, indent=2) + "\n")
    else:
        _write_text(args.out, "\n".join(text_blocks))
    return 0


def _cmd_inspect(args) -> int:
    tensors = read_checkpoint(args.input)
    entries = tensors.entries
    kind = "checkpoint"
    if args.base is not None:
        vector = extract(tensors, read_checkpoint(args.base))
        entries = vector.entries
        kind = "residual"
    elif tensors.metadata.get("kind") == "residual":
        kind = "residual"
    payload = {
        "path": args.input,
        "kind": kind,
        "tensors": len(entries),
        "parameters": int(sum(v.size for v in entries.values())),
        "content_hash": content_hash(tensors if args.base is None else NamedTensorMap.from_arrays(dict(entries))),
        "global_norm": _entries_norm(entries.values()),
    }
    if args.topology:
        depths = _depths_for(entries.keys(), args.topology)
        per_block = {}
        for d in range(depths.num_blocks):
            names = [n for n, nd in depths.depths.items() if nd == d]
            per_block[str(d)] = _entries_norm(entries[n] for n in names)
        payload["per_block_norm"] = per_block
        payload["out_of_block_norm"] = _entries_norm(entries[n] for n in depths.out_of_block)
        payload["excluded_norm"] = _entries_norm(entries[n] for n in depths.excluded)
    if args.format == "json":
        _write_text(args.out, json.dumps(payload, indent=2) + "\n")
        return 0
    lines = [
        f"{payload['path']}: {payload['kind']}, {payload['tensors']} tensors, {payload['parameters']} parameters",
        f"content hash {payload['content_hash']}",
        f"global norm {payload['global_norm']:.6f}",
    ]
    if args.topology:
        for d, value in payload["per_block_norm"].items():
            lines.append(f"  block {d}: norm {value:.6f}")
        lines.append(f"  out of block: norm {payload['out_of_block_norm']:.6f}")
        if payload["excluded_norm"]:
            lines.append(f"  excluded: norm {payload['excluded_norm']:.6f}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _entries_norm(arrays) -> float:
    total = 0.0
    for value in arrays:
        flat = np.asarray(value, dtype=np.float64).ravel()
        total += float(np.dot(flat, flat))
    return math.sqrt(total)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tvkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="subtract a base checkpoint from a fine-tuned one")
    p.add_argument("--base", required=True)
    p.add_argument("--finetuned", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("scale", help="apply the depth-wise schedule to a residual")
    p.add_argument("--tv", required=True)
    p.add_argument("--topology", required=True, help="JSON with block_pattern/num_blocks")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float, help="single-knob form: alpha=g, beta=1-g")
    p.add_argument("--shape", choices=("linear", "sqrt", "quadratic"), default="linear")
    p.add_argument("--out-of-block", choices=OUT_OF_BLOCK_POLICIES, default="alpha")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_scale)

    p = sub.add_parser("merge", help="merge residuals onto a base, with depth-wise scaling")
    p.add_argument("--base", required=True)
    p.add_argument("--tv", required=True, nargs="+")
    p.add_argument("--topology", help="required unless --uniform-lambda is given")
    _add_method_flags(p)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--shape", choices=("linear", "sqrt", "quadratic"), default="linear")
    p.add_argument("--out-of-block", choices=OUT_OF_BLOCK_POLICIES, default="alpha")
    p.add_argument("--uniform-lambda", type=float,
                   help="skip the schedule; apply the merged residual at this single coefficient")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("soup", help="average checkpoints, uniformly or greedily")
    p.add_argument("--mode", choices=("uniform", "greedy"), required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--member", required=True, nargs="+")
    p.add_argument("--include-base", action="store_true")
    p.add_argument("--evaluator", help="greedy: 'toy:<config.json>' or 'cmd:<argv...>'")
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("--strict", action="store_true", help="greedy: require strict improvement")
    p.add_argument("--lines-beta", type=float, help="greedy: rescale the final soup depth-wise")
    p.add_argument("--topology")
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.add_argument("--report", help="greedy: write the acceptance history here instead of stdout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_soup)

    p = sub.add_parser("interpolate", help="two-endpoint or two-residual interpolation")
    p.add_argument("--mode", choices=("wiseft", "rewarded"), required=True)
    p.add_argument("--base")
    p.add_argument("--finetuned")
    p.add_argument("--gamma", type=float)
    p.add_argument("--start")
    p.add_argument("--first")
    p.add_argument("--second")
    p.add_argument("--weight", type=float)
    p.add_argument("--lines-alpha", type=float)
    p.add_argument("--lines-beta", type=float)
    p.add_argument("--apply-lines", action="store_true")
    p.add_argument("--shape", choices=("linear", "sqrt", "quadratic"), default="linear")
    p.add_argument("--out-of-block", choices=OUT_OF_BLOCK_POLICIES, default="alpha")
    p.add_argument("--topology")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_interpolate)

    p = sub.add_parser("search", help="grid-search a merge coefficient against an evaluator")
    p.add_argument("--base", required=True)
    p.add_argument("--tv", required=True, nargs="+")
    _add_method_flags(p)
    p.add_argument("--grid", help="'start:stop:step' or 'a,b,c' (default: the method's grid)")
    p.add_argument("--lines", action="store_true",
                   help="tune the schedule's beta at the heuristic alpha instead of a uniform coefficient")
    p.add_argument("--topology")
    p.add_argument("--shape", choices=("linear", "sqrt", "quadratic"), default="linear")
    p.add_argument("--out-of-block", choices=OUT_OF_BLOCK_POLICIES, default="alpha")
    p.add_argument("--evaluator", required=True)
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--best-out", help="also write the winning checkpoint")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("toy", help="run the desk-scale experiments")
    p.add_argument("--experiment", choices=("forgetting", "merging", "both"), default="both")
    p.add_argument("--seeds", help="comma list (default 1,2,3,4,5)")
    p.add_argument("--config", help="ToyExperimentConfig as JSON")
    p.add_argument("--methods", help="merging methods, comma list (default ta)")
    p.add_argument("--emit-checkpoints", help="directory for world checkpoints and per-seed evaluator configs")
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=_cmd_toy)

    p = sub.add_parser("inspect", help="summarize a checkpoint or residual")
    p.add_argument("--input", required=True)
    p.add_argument("--base", help="subtract this checkpoint first and inspect the residual")
    p.add_argument("--topology", help="also report per-block norms")
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ToolkitError, OSError) as exc:
        print(f"tvkit: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
