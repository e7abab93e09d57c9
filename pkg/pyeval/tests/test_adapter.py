"""Adapter unit tests: config loading, builtin data, plants, mapped loading."""

import json
from pathlib import Path

import numpy as np
import pytest
import torch
from safetensors.torch import load_file, save_file

from pyeval import (
    AdapterConfig,
    CheckpointError,
    ConfigError,
    DatasetError,
    MappingError,
    ModelSpec,
    TaskSpec,
    build_model,
    check_name_map,
    evaluate,
    export_state,
    load_config,
    load_mapped_checkpoint,
    load_split,
    planted_state,
    shifted_state,
)
from pyeval.model import _sign_directions

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="module")
def config():
    return load_config(FIXTURES / "config.json")


# ---------------------------------------------------------------- config


def test_fixture_config_loads(config):
    assert config.model.name == "tiny-transformer"
    assert [task.name for task in config.tasks] == ["maj-a", "maj-b"]
    assert len(config.name_map) == 30
    assert config.device == "cpu"


def test_config_rejects_unknown_field(tmp_path):
    payload = json.loads((FIXTURES / "config.json").read_text())
    payload["banana"] = 1
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError, match="banana"):
        load_config(path)


def test_config_rejects_missing_field(tmp_path):
    payload = json.loads((FIXTURES / "config.json").read_text())
    del payload["name_map"]
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError, match="name_map"):
        load_config(path)


def test_config_rejects_bad_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="JSON"):
        load_config(path)


def test_model_spec_rejects_unknown_name():
    with pytest.raises(ConfigError, match="unknown model"):
        ModelSpec(name="giant-transformer")


def test_model_spec_rejects_bad_dimensions():
    with pytest.raises(ConfigError, match="positive"):
        ModelSpec(depth=0)
    with pytest.raises(ConfigError, match="multiple"):
        ModelSpec(vocab_size=13)


def test_adapter_config_rejects_duplicate_tasks(config):
    tasks = (TaskSpec(name="same", seed=1), TaskSpec(name="same", seed=2))
    with pytest.raises(ConfigError, match="unique"):
        AdapterConfig(model=config.model, tasks=tasks, name_map=config.name_map)


def test_adapter_config_rejects_empty_tasks(config):
    with pytest.raises(ConfigError, match="task"):
        AdapterConfig(model=config.model, tasks=(), name_map=config.name_map)


# ---------------------------------------------------------------- name map


def test_check_name_map_accepts_fixture_map(config):
    check_name_map(config.name_map, build_model(config.model).state_dict())


def test_check_name_map_reports_missing_runtime_name(config):
    broken = dict(config.name_map)
    del broken["head.bias"]
    with pytest.raises(MappingError, match="head.bias"):
        check_name_map(broken, build_model(config.model).state_dict())


def test_check_name_map_reports_unknown_runtime_name(config):
    broken = dict(config.name_map)
    broken["mystery.weight"] = "somewhere.else"
    with pytest.raises(MappingError, match="mystery.weight"):
        check_name_map(broken, build_model(config.model).state_dict())


def test_check_name_map_reports_reused_tool_name(config):
    broken = dict(config.name_map)
    broken["head.bias"] = broken["head.weight"]
    with pytest.raises(MappingError, match="head.weight"):
        check_name_map(broken, build_model(config.model).state_dict())


# ---------------------------------------------------------------- data


def test_split_generation_is_deterministic(config):
    task = config.tasks[0]
    first = load_split(task, config.model, "val")
    second = load_split(task, config.model, "val")
    assert np.array_equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])


def test_splits_are_disjoint(config):
    for task in config.tasks:
        val_tokens, _ = load_split(task, config.model, "val")
        test_tokens, _ = load_split(task, config.model, "test")
        assert len(val_tokens) == task.samples_per_split
        assert len(test_tokens) == task.samples_per_split
        val_rows = {tuple(row) for row in val_tokens}
        test_rows = {tuple(row) for row in test_tokens}
        assert not val_rows & test_rows


def test_sequences_have_a_strict_majority(config):
    for split in ("val", "test"):
        tokens, labels = load_split(config.tasks[0], config.model, split)
        groups = tokens % config.model.classes
        for row, label in zip(groups, labels):
            counts = np.bincount(row, minlength=config.model.classes)
            assert counts[label] == config.model.seq_len // 2 + 1
            others = np.delete(counts, label)
            assert others.max() < counts[label]


def test_task_seeds_give_different_data(config):
    first, _ = load_split(config.tasks[0], config.model, "val")
    second, _ = load_split(config.tasks[1], config.model, "val")
    assert not np.array_equal(first, second)


def test_unknown_dataset_is_an_error(config):
    task = TaskSpec(name="x", dataset="imagenet", seed=0)
    with pytest.raises(DatasetError, match="imagenet"):
        load_split(task, config.model, "val")


def test_unknown_split_is_an_error(config):
    with pytest.raises(DatasetError, match="train"):
        load_split(config.tasks[0], config.model, "train")


# ---------------------------------------------------------------- model and plants


def test_state_dict_names_match_fixture_map(config):
    model = build_model(config.model)
    assert set(model.state_dict()) == set(config.name_map)


def test_build_model_is_deterministic(config):
    first = build_model(config.model).state_dict()
    second = build_model(config.model).state_dict()
    for name in first:
        assert torch.equal(first[name], second[name])


def test_forward_shape(config):
    model = build_model(config.model)
    tokens = torch.zeros((7, config.model.seq_len), dtype=torch.int64)
    logits = model(tokens)
    assert logits.shape == (7, config.model.classes)
    assert torch.isfinite(logits).all()


def test_sign_directions_are_orthogonal_and_centered():
    directions = _sign_directions(16, 4)
    assert directions.shape == (4, 16)
    assert np.array_equal(np.abs(directions), np.full((4, 16), 0.5))
    assert np.array_equal(directions.sum(axis=1), np.zeros(4))
    gram = directions @ directions.T
    assert np.array_equal(gram, np.eye(4) * 4.0)


def test_sign_directions_reject_bad_dims():
    with pytest.raises(ValueError, match="power of two"):
        _sign_directions(12, 4)
    with pytest.raises(ValueError, match="power of two"):
        _sign_directions(4, 4)


def test_clean_plant_is_perfect(config):
    outcome = evaluate(config, FIXTURES / "tiny_base.safetensors", "val")
    assert outcome.metric == 1.0
    assert outcome.per_task == {"maj-a": 1.0, "maj-b": 1.0}
    assert evaluate(config, FIXTURES / "tiny_base.safetensors", "test").metric == 1.0


def test_shifted_plant_is_always_wrong(config):
    for split in ("val", "test"):
        assert evaluate(config, FIXTURES / "tiny_shifted.safetensors", split).metric == 0.0


def test_half_blend_lands_strictly_between(config, tmp_path):
    clean = planted_state(config.model)
    shifted = shifted_state(config.model)
    blend = {name: (clean[name] + shifted[name]) / 2.0 for name in clean}
    path = tmp_path / "blend.safetensors"
    export_state(blend, config.name_map, path)
    outcome = evaluate(config, path, "val")
    assert 0.0 < outcome.metric < 1.0


def test_evaluate_is_deterministic(config):
    first = evaluate(config, FIXTURES / "tiny_base.safetensors", "val")
    second = evaluate(config, FIXTURES / "tiny_base.safetensors", "val")
    assert first == second


def test_evaluate_rejects_unavailable_device(config):
    if torch.cuda.is_available():
        pytest.skip("cuda present")
    broken = AdapterConfig(
        model=config.model, tasks=config.tasks, name_map=config.name_map, device="cuda"
    )
    with pytest.raises(ConfigError, match="cuda"):
        evaluate(broken, FIXTURES / "tiny_base.safetensors", "val")


# ---------------------------------------------------------------- mapped loading


def test_loaded_fixture_matches_plant_bitwise(config):
    model = build_model(config.model)
    load_mapped_checkpoint(model, config.name_map, FIXTURES / "tiny_base.safetensors")
    plant = planted_state(config.model)
    state = model.state_dict()
    for runtime, array in plant.items():
        assert np.array_equal(state[runtime].numpy(), array)


def test_checkpoint_with_missing_tensor_is_named(config, tmp_path):
    stored = load_file(str(FIXTURES / "tiny_base.safetensors"))
    del stored["head.bias"]
    path = tmp_path / "missing.safetensors"
    save_file(stored, str(path))
    with pytest.raises(MappingError, match="head.bias"):
        load_mapped_checkpoint(build_model(config.model), config.name_map, path)


def test_checkpoint_with_extra_tensor_is_named(config, tmp_path):
    stored = load_file(str(FIXTURES / "tiny_base.safetensors"))
    stored["mystery.weight"] = torch.zeros(3)
    path = tmp_path / "extra.safetensors"
    save_file(stored, str(path))
    with pytest.raises(MappingError, match="mystery.weight"):
        load_mapped_checkpoint(build_model(config.model), config.name_map, path)


def test_checkpoint_shape_mismatch_is_named(config, tmp_path):
    stored = load_file(str(FIXTURES / "tiny_base.safetensors"))
    stored["head.bias"] = torch.zeros(9)
    path = tmp_path / "shapes.safetensors"
    save_file(stored, str(path))
    with pytest.raises(CheckpointError, match="head.bias"):
        load_mapped_checkpoint(build_model(config.model), config.name_map, path)


def test_unreadable_checkpoint_is_an_error(config, tmp_path):
    path = tmp_path / "garbage.safetensors"
    path.write_bytes(b"not a tensor file")
    with pytest.raises(CheckpointError, match="cannot read"):
        load_mapped_checkpoint(build_model(config.model), config.name_map, path)
    with pytest.raises(CheckpointError, match="cannot read"):
        load_mapped_checkpoint(build_model(config.model), config.name_map, tmp_path / "absent.safetensors")
