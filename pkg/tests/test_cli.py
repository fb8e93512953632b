import csv
import json

import numpy as np
import pytest

from src.cli.main_app import (EXIT_CONFIG_INVALID, EXIT_MISSING_ARTIFACT, EXIT_OK, build_parser,
                              main)

SMALL = ["--machines", "3", "--days", "160",
         "--set", "fleet.positive_rate=0.08",
         "--set", "forest.n_trees=20",
         "--set", "stream.mcd.n_starts=5",
         "--set", "write_svg=false"]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("SEED", "JOBS", "OUT", "CONFIG", "LOG_LEVEL"):
        monkeypatch.delenv("PACKAUDIT_" + key, raising=False)


def test_parser_accepts_flags_on_either_side():
    parser = build_parser()
    before = parser.parse_args(["--seed", "3", "train"])
    after = parser.parse_args(["train", "--seed", "3"])
    assert before.seed == after.seed == 3
    assert before.command == after.command == "train"


def test_dry_run_prints_config_without_side_effects(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["fleetgen", "--out", str(out), "--seed", "4", "--dry-run"])
    assert code == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["seed"] == 4
    assert printed["fleet"]["seed"] == 4
    assert not out.exists()


def test_audit_without_model_is_missing_artifact(tmp_path, capsys):
    code = main(["audit", "--out", str(tmp_path)])
    assert code == EXIT_MISSING_ARTIFACT
    err = capsys.readouterr().err
    assert "ERROR code=MissingArtifact" in err


def test_invalid_config_writes_nothing(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["fleetgen", "--out", str(out), "--set", "fleet.colour=red"])
    assert code == EXIT_CONFIG_INVALID
    assert "ERROR code=ConfigInvalid" in capsys.readouterr().err
    assert not out.exists()


def test_mcd_h_outside_window_is_config_invalid(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["audit", "--out", str(out), "--set", "stream.mcd.h=5"])
    assert code == EXIT_CONFIG_INVALID
    assert "mcd.h must be in [15, 29]" in capsys.readouterr().err
    assert not out.exists()


def test_fleetgen_scale(tmp_path):
    out = tmp_path / "fleet"
    assert main(["fleetgen", "--out", str(out), "--machines", "23", "--days", "100"]) == EXIT_OK
    manifest = json.loads((out / "fleet_manifest.json").read_text())
    assert len(manifest["machines"]) == 23
    assert (out / "resolved_config.json").exists()


def _run_pipeline(out, *extra):
    return main(["pipeline", "--out", str(out), "--seed", "7", *SMALL, *extra])


def test_pipeline_end_to_end_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run_pipeline(a) == EXIT_OK
    assert _run_pipeline(b, "--jobs", "2") == EXIT_OK

    for name in ("alarms.csv", "work_orders.csv", "traces.csv", "report.csv", "boxplot.csv", "report.md"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name

    with open(a / "report.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["Machine", "Baseline", "OCSVM", "MCD", "Ensemble", "max % change"]
    assert [r[0] for r in rows[1:]] == ["M001", "M002", "M003", "Average"]

    with open(a / "traces.csv", newline="") as f:
        trace_rows = list(csv.DictReader(f))
    assert len(trace_rows) == 3 * 80
    for machine in ("M001", "M002", "M003"):
        statuses = [r["status"] for r in trace_rows if r["machine_id"] == machine]
        assert statuses.count("WARMUP") == 30
        assert statuses.count("ACTIVE") == 50
    for r in trace_rows:
        if r["ensemble_flag"] == "1":
            assert r["ocsvm_flag"] == "1" and r["mcd_flag"] == "1"

    audit_manifest = json.loads((a / "audit_manifest.json").read_text())
    assert 0.0 <= audit_manifest["threshold"] <= 1.0
    assert audit_manifest["stream"]["threshold"] == audit_manifest["threshold"]
    assert audit_manifest["model_meta"]["threshold_source"] in ("calibration", "oob", "default")


def test_stages_can_be_rerun(tmp_path):
    out = tmp_path / "run"
    assert _run_pipeline(out) == EXIT_OK
    first = (out / "report.csv").read_bytes()
    assert main(["eval", "--out", str(out), "--seed", "7", *SMALL]) == EXIT_OK
    assert (out / "report.csv").read_bytes() == first


@pytest.mark.slow
def test_full_fleet_detectors_beat_baseline(tmp_path):
    out = tmp_path / "full"
    assert main(["pipeline", "--preset", "full", "--out", str(out), "--jobs", "4"]) == EXIT_OK
    with open(out / "report.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    machines = [r for r in rows if r["Machine"] != "Average"]
    assert len(machines) == 23

    def mean(column):
        return float(np.mean([float(r[column]) for r in machines]))

    baseline = mean("Baseline")
    assert 0.15 <= baseline <= 0.35
    assert mean("Ensemble") >= 1.2 * baseline
    assert mean("OCSVM") > baseline
    assert mean("MCD") > baseline
