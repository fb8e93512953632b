import json

import pytest

from src.core.errors import ConfigInvalid
from src.utils.run_config import (PresetManager, RunConfig, deep_merge, parse_assignment,
                                  resolve_config, write_resolved_config)


def test_defaults_match_reference_settings(tmp_path):
    cfg = resolve_config(out=str(tmp_path), env={})
    assert cfg.preprocess.alpha == 0.63
    assert cfg.forest.n_trees == 500 and cfg.forest.mtry == 17
    assert cfg.stream.warmup == 30 and cfg.stream.window == 30
    assert cfg.fleet.n_machines == 23 and cfg.fleet.n_days == 1000


def test_precedence_file_env_flags(tmp_path):
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"seed": 1, "jobs": 2, "fleet": {"n_days": 300}}))
    env = {"PACKAUDIT_SEED": "5", "PACKAUDIT_OUT": str(tmp_path / "env_out")}

    cfg = resolve_config(config_path=str(config_file), env=env)
    assert cfg.seed == 5
    assert cfg.jobs == 2
    assert cfg.fleet.n_days == 300
    assert cfg.paths.out == str(tmp_path / "env_out")

    cfg = resolve_config(config_path=str(config_file), env=env, seed=9, days=50,
                         assignments=["stream.embed_dim=2", "forest.threshold_criterion=f1"])
    assert cfg.seed == 9
    assert cfg.fleet.n_days == 50
    assert cfg.stream.embed_dim == 2
    assert cfg.forest.threshold_criterion == "f1"


def test_config_path_from_environment(tmp_path):
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"fleet": {"n_machines": 4}}))
    cfg = resolve_config(env={"PACKAUDIT_CONFIG": str(config_file)}, out=str(tmp_path))
    assert cfg.fleet.n_machines == 4


def test_master_seed_reaches_every_component(tmp_path):
    cfg = resolve_config(seed=42, out=str(tmp_path), env={})
    assert cfg.fleet.seed == cfg.smote.seed == cfg.forest.seed == cfg.stream.mcd.seed == 42


def test_explicit_nested_seed_survives_master_seed(tmp_path):
    cfg = resolve_config(seed=9, assignments=["smote.seed=5"], out=str(tmp_path), env={})
    assert cfg.smote.seed == 5
    assert cfg.fleet.seed == cfg.forest.seed == cfg.stream.mcd.seed == 9
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"stream": {"mcd": {"seed": 11}}, "fleet": {"seed": 2}}))
    cfg = resolve_config(config_path=str(config_file), seed=9, out=str(tmp_path), env={})
    assert (cfg.stream.mcd.seed, cfg.fleet.seed) == (11, 2)
    assert cfg.smote.seed == cfg.forest.seed == 9


def test_presets(tmp_path):
    manager = PresetManager(tmp_path)
    assert {"full", "smoke"} <= set(manager.names())
    cfg = resolve_config(preset="smoke", out=str(tmp_path), env={}, presets=manager)
    assert cfg.fleet.n_machines == 3
    (tmp_path / "mine.json").write_text(json.dumps({"name": "mine", "stream": {"window_mode": "frozen"}}))
    cfg = resolve_config(preset="mine", out=str(tmp_path), env={}, presets=PresetManager(tmp_path))
    assert cfg.stream.window_mode == "frozen"
    with pytest.raises(ConfigInvalid):
        resolve_config(preset="nope", env={}, presets=manager)


def test_shipped_presets_resolve(tmp_path):
    manager = PresetManager()
    for name in manager.names():
        resolve_config(preset=name, out=str(tmp_path), env={}, presets=manager)


@pytest.mark.parametrize("assignment", [
    "fleet.colour=red",
    "stream.mcd.starts=3",
    "preprocess.alpha=1.5",
    "stream.window=40",
    "forest.mtry=0",
    "stream.mcd.h=5",
    "stream.mcd.h=30",
    "nonsense",
])
def test_invalid_settings_rejected(tmp_path, assignment):
    with pytest.raises(ConfigInvalid):
        resolve_config(assignments=[assignment], out=str(tmp_path / "never"), env={})
    assert not (tmp_path / "never").exists()


def test_bad_environment_value():
    with pytest.raises(ConfigInvalid):
        resolve_config(env={"PACKAUDIT_JOBS": "many"})


def test_out_path_must_be_a_directory(tmp_path):
    blocker = tmp_path / "file.txt"
    blocker.write_text("x")
    with pytest.raises(ConfigInvalid):
        resolve_config(out=str(blocker / "sub"), env={})


def test_assignment_parsing_and_merge():
    assert parse_assignment("stream.mcd.n_starts=7") == {"stream": {"mcd": {"n_starts": 7}}}
    assert parse_assignment("paths.alarms=data/a.csv") == {"paths": {"alarms": "data/a.csv"}}
    base = {"a": {"b": 1, "c": 2}}
    assert deep_merge(base, {"a": {"c": 3}}) == {"a": {"b": 1, "c": 3}}


def test_resolved_config_round_trips(tmp_path):
    cfg = resolve_config(seed=3, out=str(tmp_path), env={})
    path = write_resolved_config(cfg)
    again = RunConfig.from_dict(json.loads(path.read_text()))
    assert again.to_dict() == cfg.to_dict()
