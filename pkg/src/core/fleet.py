#!/usr/bin/env python3
"""
Synthetic Fleet Generator for PackAudit
Simulates wrapping-machine alarm telemetry with rare maintenance days

Random streams come from numpy's PCG64 bit generator. Each machine gets its
own stream seeded by SeedSequence(seed, spawn_key=(machine_index,)), so a
machine's series depends only on (seed, index): generation order and worker
count never change the output. Both PCG64 and SeedSequence hashing are
specified by numpy and are platform independent.

The degradation model is invented for testing: in the D days (3-10, drawn per
event) before a maintenance day every alarm's Poisson rate is multiplied by
(1 + degradation_gain); the maintenance day keeps its base rate. Nothing here
is measured from real machines.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed

from .errors import InvalidConfig
from .telemetry import N_ALARMS, MachineSeries, write_alarm_csv, write_work_order_csv
from ..utils.log import get_logger

logger = get_logger(__name__)

RATE_RANGE = (0.01, 0.5)     # log-uniform default base rates, events/day
LEAD_DAYS = (3, 10)          # pre-failure degradation window, inclusive


@dataclass
class FleetConfig:
    """Synthetic fleet settings"""
    n_machines: int = 23
    n_days: int = 1000
    positive_rate: float = 0.013
    base_alarm_rates: Optional[List[float]] = None
    degradation_gain: float = 4.0
    seed: int = 0
    start_date: str = "2020-01-01"

    def validate(self) -> "FleetConfig":
        if not isinstance(self.n_machines, int) or self.n_machines < 1:
            raise InvalidConfig(f"n_machines must be a positive integer, got {self.n_machines}")
        if not isinstance(self.n_days, int) or self.n_days < 1:
            raise InvalidConfig(f"n_days must be a positive integer, got {self.n_days}")
        if not 0.0 < self.positive_rate < 1.0:
            raise InvalidConfig(f"positive_rate must be in (0,1), got {self.positive_rate}")
        if self.degradation_gain < 0:
            raise InvalidConfig("degradation_gain must be non-negative")
        if self.base_alarm_rates is not None:
            if len(self.base_alarm_rates) != N_ALARMS:
                raise InvalidConfig(f"base_alarm_rates needs {N_ALARMS} entries")
            if any(r < 0 for r in self.base_alarm_rates):
                raise InvalidConfig("alarm rates must be non-negative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")
        try:
            date.fromisoformat(self.start_date)
        except (TypeError, ValueError):
            raise InvalidConfig(f"start_date {self.start_date!r} is not YYYY-MM-DD")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FleetConfig":
        valid_keys = {f.name for f in fields(cls)}
        unknown = set(data) - valid_keys
        if unknown:
            raise InvalidConfig(f"unknown fleet keys: {sorted(unknown)}")
        return cls(**data)


def machine_id_for(index: int) -> str:
    return f"M{index + 1:03d}"


def machine_rng(seed: int, machine_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(machine_index),))
    return np.random.Generator(np.random.PCG64(ss))


def _machine_rates(config: FleetConfig, rng: np.random.Generator) -> np.ndarray:
    if config.base_alarm_rates is not None:
        return np.asarray(config.base_alarm_rates, dtype=float)
    lo, hi = np.log(RATE_RANGE[0]), np.log(RATE_RANGE[1])
    return np.exp(rng.uniform(lo, hi, size=N_ALARMS))


def generate_machine(config: FleetConfig, machine_index: int) -> MachineSeries:
    """
    Generate one machine's daily series

    Args:
        config: Fleet settings
        machine_index: 0-based machine index (< n_machines)

    Returns:
        MachineSeries with Poisson alarm counts and rare positive labels
    """
    config.validate()
    if not 0 <= machine_index < config.n_machines:
        raise InvalidConfig(f"machine_index {machine_index} outside [0, {config.n_machines})")

    rng = machine_rng(config.seed, machine_index)
    rates = _machine_rates(config, rng)
    n = config.n_days

    n_events = max(1, int(round(config.positive_rate * n)))
    n_events = min(n_events, n)
    event_days = np.sort(rng.choice(n, size=n_events, replace=False))
    labels = np.zeros(n, dtype=bool)
    labels[event_days] = True

    intensity = np.ones(n)
    leads = rng.integers(LEAD_DAYS[0], LEAD_DAYS[1] + 1, size=n_events)
    for day, lead in zip(event_days, leads):
        # the maintenance day itself keeps its base rate
        intensity[max(0, day - lead):day] = 1.0 + config.degradation_gain

    counts = rng.poisson(np.outer(intensity, rates))
    start = date.fromisoformat(config.start_date)
    return MachineSeries(machine_id_for(machine_index), start, counts, labels)


def generate_fleet(config: FleetConfig, jobs: int = 1) -> List[MachineSeries]:
    """Generate all machines; output is identical for any worker count"""
    config.validate()
    fleet = Parallel(n_jobs=jobs)(
        delayed(generate_machine)(config, i) for i in range(config.n_machines)
    )
    logger.info("fleet generated", machines=len(fleet), days=config.n_days,
                positives=int(sum(s.labels.sum() for s in fleet)), seed=config.seed)
    return list(fleet)


def fleet_manifest(config: FleetConfig, fleet: List[MachineSeries]) -> Dict[str, Any]:
    """Resolved config plus per-machine facts, recorded next to the CSVs"""
    machines = []
    for i, series in enumerate(fleet):
        rates = _machine_rates(config, machine_rng(config.seed, i))
        machines.append({
            "machine_id": series.machine_id,
            "positive_days": int(series.labels.sum()),
            "base_alarm_rates": [round(float(r), 6) for r in rates],
        })
    start = date.fromisoformat(config.start_date)
    return {
        "generator": "numpy PCG64, SeedSequence(seed, spawn_key=(machine_index,))",
        "config": config.to_dict(),
        "start_date": config.start_date,
        "end_date": (start + timedelta(days=config.n_days - 1)).isoformat(),
        "machines": machines,
    }


def write_fleet(config: FleetConfig, fleet: List[MachineSeries], output_dir: Path) -> Dict[str, Path]:
    """Write alarms.csv, work_orders.csv and fleet_manifest.json"""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "alarms": output_dir / "alarms.csv",
        "orders": output_dir / "work_orders.csv",
        "manifest": output_dir / "fleet_manifest.json",
    }
    n_alarm_rows = write_alarm_csv(fleet, paths["alarms"])
    n_order_rows = write_work_order_csv(fleet, paths["orders"])
    with open(paths["manifest"], "w", encoding="utf-8") as f:
        json.dump(fleet_manifest(config, fleet), f, indent=2)
        f.write("\n")
    logger.info("fleet written", output=output_dir, alarm_rows=n_alarm_rows, order_rows=n_order_rows)
    return paths
