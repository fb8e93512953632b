import json

import numpy as np
import pytest

from src.core.errors import InvalidConfig
from src.core.fleet import FleetConfig, generate_fleet, generate_machine, machine_id_for, write_fleet
from src.core.telemetry import N_ALARMS, load_fleet


def test_machine_is_reproducible_and_independent_of_order():
    cfg = FleetConfig(n_machines=4, n_days=120, seed=11)
    a = generate_machine(cfg, 2)
    b = generate_machine(cfg, 2)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.labels, b.labels)

    fleet = generate_fleet(cfg)
    np.testing.assert_array_equal(fleet[2].counts, a.counts)
    assert [s.machine_id for s in fleet] == ["M001", "M002", "M003", "M004"]


def test_parallel_generation_matches_serial():
    cfg = FleetConfig(n_machines=3, n_days=90, seed=5)
    serial = generate_fleet(cfg, jobs=1)
    parallel = generate_fleet(cfg, jobs=2)
    for s, p in zip(serial, parallel):
        np.testing.assert_array_equal(s.counts, p.counts)
        np.testing.assert_array_equal(s.labels, p.labels)


def test_positive_rate_close_to_target():
    cfg = FleetConfig(n_machines=5, n_days=1000, positive_rate=0.013, seed=3)
    for series in generate_fleet(cfg):
        assert series.counts.shape == (1000, N_ALARMS)
        assert abs(series.labels.mean() - 0.013) <= 0.005


def test_minimum_one_event_per_machine():
    series = generate_machine(FleetConfig(n_machines=1, n_days=10, positive_rate=0.01), 0)
    assert series.labels.sum() == 1


def test_degradation_raises_alarms_before_events():
    cfg = FleetConfig(n_machines=1, n_days=2000, positive_rate=0.02, degradation_gain=6.0,
                      base_alarm_rates=[0.3] * N_ALARMS, seed=9)
    series = generate_machine(cfg, 0)
    totals = series.counts.sum(axis=1)
    events = np.flatnonzero(series.labels)
    before = np.zeros(len(totals), dtype=bool)
    near = np.zeros(len(totals), dtype=bool)
    for day in events:
        before[max(0, day - 3):day] = True
        near[max(0, day - 10):day] = True
    quiet = ~near & ~series.labels
    assert totals[before].mean() > 2 * totals[quiet].mean()
    # the window stops short of the maintenance day
    alone = [d for d in events if not near[d]]
    assert totals[alone].mean() < 1.5 * totals[quiet].mean()


def test_no_degradation_means_no_correlation():
    cfg = FleetConfig(n_machines=1, n_days=10000, degradation_gain=0.0, seed=13)
    series = generate_machine(cfg, 0)
    r = np.corrcoef(series.counts.sum(axis=1), series.labels.astype(float))[0, 1]
    assert abs(r) < 0.05


def test_seeds_give_different_fleets():
    a = generate_machine(FleetConfig(n_machines=1, n_days=200, seed=1), 0)
    b = generate_machine(FleetConfig(n_machines=1, n_days=200, seed=2), 0)
    assert not np.array_equal(a.counts, b.counts)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        FleetConfig(n_machines=0).validate()
    with pytest.raises(InvalidConfig):
        FleetConfig(base_alarm_rates=[0.1, 0.2]).validate()
    with pytest.raises(InvalidConfig):
        FleetConfig.from_dict({"n_machines": 2, "colour": "red"})


def test_write_fleet_round_trips_through_ingest(tmp_path):
    cfg = FleetConfig(n_machines=2, n_days=60, seed=1)
    fleet = generate_fleet(cfg)
    paths = write_fleet(cfg, fleet, tmp_path)

    manifest = json.loads(paths["manifest"].read_text())
    assert manifest["config"]["seed"] == 1
    assert [m["machine_id"] for m in manifest["machines"]] == [machine_id_for(0), machine_id_for(1)]

    loaded = load_fleet(paths["alarms"], paths["orders"])
    assert len(loaded) == 2
    for original, back in zip(fleet, loaded):
        offset = (back.start_date - original.start_date).days
        np.testing.assert_array_equal(back.labels, original.labels[offset:offset + len(back)])
