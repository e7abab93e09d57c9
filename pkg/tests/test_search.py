"""Grid definitions, argmax search, and the evaluator subprocess protocol."""

import json
import os
import stat
import sys

import numpy as np
import pytest

from tvkit import (
    EvalResult,
    EvaluatorError,
    Grid,
    NamedTensorMap,
    SearchError,
    grid_search,
    make_checkpoint_evaluator,
    read_checkpoint,
    run_evaluator,
    write_checkpoint,
)
from tvkit.search import CONSENSUS_GRID, SOUP_COEFF_GRID, SOUP_SLOPE_GRID, TA_GRID, TIES_GRID

from conftest import random_map


def build_nothing(coefficient):
    return NamedTensorMap.from_arrays({"w": np.array([coefficient], dtype=np.float32)})


# ------------------------------------------------------------------ grids


def test_grid_from_range_string():
    grid = Grid.from_string("0.1:0.3:0.1")
    assert grid.values == (0.1, 0.2, 0.3)


def test_grid_from_comma_list():
    assert Grid.from_string("0.5, 1.0, 1.5").values == (0.5, 1.0, 1.5)


def test_grid_validation():
    with pytest.raises(SearchError):
        Grid(())
    with pytest.raises(SearchError):
        Grid((0.1, 0.1))
    with pytest.raises(SearchError):
        Grid((0.3, 0.2))
    with pytest.raises(SearchError):
        Grid.from_string("0.1:0.5:-0.1")
    with pytest.raises(SearchError):
        Grid.from_string("0.1:0.5")
    with pytest.raises(SearchError):
        Grid.from_string("a,b")


def test_default_grids_have_documented_ranges():
    assert TA_GRID.values[0] == 0.1 and TA_GRID.values[-1] == 1.0 and len(TA_GRID.values) == 10
    assert TIES_GRID.values[-1] == 1.5 and len(TIES_GRID.values) == 15
    assert CONSENSUS_GRID.values == TA_GRID.values
    assert SOUP_COEFF_GRID.values[0] == 1.0 and SOUP_COEFF_GRID.values[-1] == 2.0
    assert SOUP_SLOPE_GRID.values[0] == 0.0 and SOUP_SLOPE_GRID.values[-1] == 1.0


# ------------------------------------------------------------ grid search


def test_grid_search_hand_table():
    table = {0.1: 0.5, 0.2: 0.9, 0.3: 0.7}
    result = grid_search(build_nothing, Grid((0.1, 0.2, 0.3)), lambda m: table[round(float(m.entries["w"][0]), 6)])
    assert result.best_coefficient == 0.2
    assert result.best.metric == 0.9


def test_grid_search_tie_takes_smaller_coefficient():
    result = grid_search(build_nothing, Grid((0.1, 0.2, 0.3)), lambda m: 0.5)
    assert result.best_coefficient == 0.1


def test_grid_search_single_point():
    result = grid_search(build_nothing, Grid((0.7,)), lambda m: 0.4)
    assert result.best_coefficient == 0.7
    assert len(result.trace) == 1


def test_grid_search_trace_is_complete_and_contains_best():
    grid = Grid.from_string("0.1:1.0:0.1")
    result = grid_search(build_nothing, grid, lambda m: float(m.entries["w"][0]) ** 2)
    assert len(result.trace) == len(grid.values)
    assert [c for c, _ in result.trace] == list(grid.values)
    assert (result.best_coefficient, result.best) in result.trace
    assert result.best_coefficient == 1.0


def test_grid_search_jobs_parity():
    grid = Grid.from_string("0.1:1.5:0.1")

    def evaluator(model):
        value = float(model.entries["w"][0])
        return EvalResult(metric=np.sin(value * 5.0), per_task={"t": value})

    serial = grid_search(build_nothing, grid, evaluator, jobs=1)
    threaded = grid_search(build_nothing, grid, evaluator, jobs=4)
    assert serial.best_coefficient == threaded.best_coefficient
    assert serial.best == threaded.best
    assert serial.trace == threaded.trace


def test_grid_search_wraps_failures_with_coefficient():
    def evaluator(model):
        value = float(model.entries["w"][0])
        if value > 0.25:
            raise ValueError("no metric here")
        return 0.5

    with pytest.raises(EvaluatorError) as err:
        grid_search(build_nothing, Grid((0.1, 0.2, 0.3)), evaluator)
    assert "0.3" in str(err.value)


def test_grid_search_coerces_float_returns():
    result = grid_search(build_nothing, Grid((0.1, 0.2)), lambda m: float(m.entries["w"][0]))
    assert isinstance(result.best, EvalResult)
    assert result.best_coefficient == 0.2


def test_eval_result_requires_finite_metric():
    with pytest.raises(EvaluatorError):
        EvalResult(metric=float("nan"))


# ------------------------------------------------- subprocess protocol


def write_script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text("#!/usr/bin/env python3\n" + body)
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return f"cmd:{sys.executable} {path}"


def test_cmd_evaluator_round_trip(tmp_path):
    spec = write_script(
        tmp_path,
        "ok.py",
        "import json, sys\n"
        "args = sys.argv[1:]\n"
        "assert args[0] == '--checkpoint' and args[2] == '--split'\n"
        "metric = 0.75 if args[3] == 'val' else 0.25\n"
        "print(json.dumps({'metric': metric, 'per_task': {'a': metric}}))\n",
    )
    checkpoint = tmp_path / "m.safetensors"
    write_checkpoint(NamedTensorMap.from_arrays({"w": np.ones(2)}), checkpoint)
    val = run_evaluator(spec, checkpoint, "val")
    test = run_evaluator(spec, checkpoint, "test")
    assert val == EvalResult(metric=0.75, per_task={"a": 0.75})
    assert test.metric == 0.25


def test_cmd_evaluator_nonzero_exit(tmp_path):
    spec = write_script(tmp_path, "fail.py", "import sys\nsys.stderr.write('dataset missing')\nsys.exit(1)\n")
    with pytest.raises(EvaluatorError) as err:
        run_evaluator(spec, tmp_path / "x.safetensors", "val")
    assert "status 1" in str(err.value)
    assert "dataset missing" in str(err.value)


def test_cmd_evaluator_malformed_outputs(tmp_path):
    cases = {
        "notjson.py": ("print('hello')\n", "not a JSON object"),
        "list.py": ("print('[1,2]')\n", "must be a JSON object"),
        "nometric.py": ("print('{}')\n", "missing the 'metric' field"),
        "badmetric.py": ("print('{\"metric\": \"high\"}')\n", "must be a number"),
        "badpertask.py": (
            "print('{\"metric\": 0.5, \"per_task\": {\"a\": \"x\"}}')\n",
            "per_task",
        ),
    }
    for name, (body, needle) in cases.items():
        spec = write_script(tmp_path, name, body)
        with pytest.raises(EvaluatorError) as err:
            run_evaluator(spec, tmp_path / "x.safetensors", "val")
        assert needle in str(err.value), name


def test_unknown_spec_and_split_rejected(tmp_path):
    with pytest.raises(EvaluatorError):
        run_evaluator("magic:x", tmp_path / "x.safetensors", "val")
    with pytest.raises(EvaluatorError):
        run_evaluator("cmd:true", tmp_path / "x.safetensors", "train")


def test_missing_command_is_launch_error(tmp_path):
    with pytest.raises(EvaluatorError) as err:
        run_evaluator("cmd:/nonexistent/evaluator", tmp_path / "x.safetensors", "val")
    assert "could not launch" in str(err.value)


def test_make_checkpoint_evaluator_writes_temp_checkpoint(tmp_path):
    spec = write_script(
        tmp_path,
        "norm.py",
        "import json, sys\n"
        "path = sys.argv[sys.argv.index('--checkpoint') + 1]\n"
        "import struct\n"
        "raw = open(path, 'rb').read()\n"
        "length = struct.unpack('<Q', raw[:8])[0]\n"
        "header = json.loads(raw[8:8 + length])\n"
        "print(json.dumps({'metric': float(len(header))}))\n",
    )
    rng = np.random.default_rng(61)
    evaluate = make_checkpoint_evaluator(spec, "val", workdir=str(tmp_path))
    model = random_map(rng)
    result = evaluate(model)
    assert result.metric == float(len(model.entries))
    leftovers = [p for p in tmp_path.iterdir() if p.name.startswith("tvkit-eval-")]
    assert leftovers == []


def test_toy_spec_yields_bounded_metric(tmp_path):
    from tvkit.toy import ToyExperimentConfig, write_eval_config

    config = ToyExperimentConfig(samples_per_split=(60, 40, 40))
    eval_config = tmp_path / "eval.json"
    write_eval_config(eval_config, config, seed=1)
    fixture = os.path.join(os.path.dirname(__file__), "..", "fixtures", "toy_l6.safetensors")
    result = run_evaluator(f"toy:{eval_config}", fixture, "val")
    assert 0.0 <= result.metric <= 1.0
    assert result.per_task and all(0.0 <= v <= 1.0 for v in result.per_task.values())
    again = run_evaluator(f"toy:{eval_config}", fixture, "val")
    assert result == again
    on_test = run_evaluator(f"toy:{eval_config}", fixture, "test")
    assert 0.0 <= on_test.metric <= 1.0
