#!/usr/bin/env python3
"""
Telemetry Ingest for PackAudit
Parses per-machine daily alarm and work-order CSVs and aligns them
onto a dense daily grid
"""

import csv
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import EmptyRange, MalformedRow, UnknownAlarmCode, UnparseableDate
from ..utils.log import get_logger

logger = get_logger(__name__)

# Alarm taxonomy of the wrapping machines (22 codes)
ALARM_DESCRIPTIONS: Dict[str, str] = {
    "A1": "Pulley failure",
    "A2": "Arm engine failure",
    "A3": "Maximum intensity in arm engine failure",
    "A4": "Offset position failure",
    "A5": "Communication failure",
    "A6": "Minimum battery level failure",
    "A7": "Maximum battery level failure",
    "A8": "Emergency button",
    "A9": "Pulley failure",
    "A10": "Carriage failure",
    "A11": "Carriage engine failure",
    "A12": "Vertical bar failure",
    "A13": "Horizontal bar failure",
    "A14": "Maintenance failure 1",
    "A15": "Maintenance failure 2",
    "A16": "Latch failure",
    "A17": "Brake communication system failure",
    "A18": "Plastic film broken",
    "A19": "Brake off",
    "A20": "Excess strain on plastic film",
    "A200": "Communication error with remote board",
    "A201": "Extended time without communication failure",
}
ALARM_CODES: Tuple[str, ...] = tuple(ALARM_DESCRIPTIONS)
N_ALARMS = len(ALARM_CODES)
_CODE_INDEX = {code: i for i, code in enumerate(ALARM_CODES)}

ALARM_HEADER = ["machine_id", "date", "alarm_code", "count"]
ORDER_HEADER = ["machine_id", "date", "action"]

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


@dataclass(frozen=True)
class AlarmRecord:
    """One (machine, day, alarm) occurrence count"""
    machine_id: str
    date: date
    alarm_code: str
    count: int


@dataclass(frozen=True)
class WorkOrderRecord:
    """Whether a maintenance action was performed on a machine that day"""
    machine_id: str
    date: date
    action_taken: bool


class DailyObservation(NamedTuple):
    alarm_counts: np.ndarray
    label: bool


@dataclass
class MachineSeries:
    """Dense daily series for one machine: alarm counts (n x 22) and labels"""
    machine_id: str
    start_date: date
    counts: np.ndarray
    labels: np.ndarray
    filled: np.ndarray = field(default=None)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1, N_ALARMS)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.filled is None:
            self.filled = np.zeros(len(self.labels), dtype=bool)
        else:
            self.filled = np.asarray(self.filled, dtype=bool)
        if len(self.labels) < 1:
            raise EmptyRange(f"series for {self.machine_id} is empty")
        if not (len(self.counts) == len(self.labels) == len(self.filled)):
            raise ValueError("counts, labels and filled flags must have equal length")
        if (self.counts < 0).any():
            raise ValueError("alarm counts must be non-negative")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dates(self) -> List[date]:
        return [self.start_date + timedelta(days=i) for i in range(len(self))]

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=len(self) - 1)

    @property
    def days(self) -> List[DailyObservation]:
        return [DailyObservation(self.counts[i], bool(self.labels[i])) for i in range(len(self))]

    @property
    def n_filled(self) -> int:
        """Days that had no record in either input (zero-filled)"""
        return int(self.filled.sum())


def parse_date(value: str, row_index: int = -1) -> date:
    value = value.strip()
    if not _DATE_RE.match(value):
        raise UnparseableDate(row_index, value)
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise UnparseableDate(row_index, value)


def _read_rows(path: Path, header: List[str]) -> Iterable[Tuple[int, List[str]]]:
    """Yield (data row index, fields) after checking the header"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != header:
            raise MalformedRow(0, f"header must be {','.join(header)}, got {first}")
        for i, row in enumerate(reader, 1):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(i, f"expected {len(header)} fields, got {len(row)}")
            yield i, [v.strip() for v in row]


def parse_alarm_csv(path) -> List[AlarmRecord]:
    """
    Parse an alarms CSV (machine_id,date,alarm_code,count)

    Args:
        path: CSV file path

    Returns:
        One AlarmRecord per data row, in file order
    """
    records: List[AlarmRecord] = []
    for i, (machine_id, day, code, count) in _read_rows(Path(path), ALARM_HEADER):
        if not machine_id:
            raise MalformedRow(i, "empty machine_id")
        parsed_day = parse_date(day, i)
        if code not in _CODE_INDEX:
            raise UnknownAlarmCode(i, code)
        try:
            n = int(count)
        except ValueError:
            raise MalformedRow(i, f"count {count!r} is not an integer")
        if n < 0:
            raise MalformedRow(i, f"negative count {n}")
        records.append(AlarmRecord(machine_id, parsed_day, code, n))
    return records


def parse_work_order_csv(path) -> List[WorkOrderRecord]:
    """Parse a work-orders CSV (machine_id,date,action with action in {0,1})"""
    records: List[WorkOrderRecord] = []
    seen = set()
    for i, (machine_id, day, action) in _read_rows(Path(path), ORDER_HEADER):
        if not machine_id:
            raise MalformedRow(i, "empty machine_id")
        parsed_day = parse_date(day, i)
        if action not in ("0", "1"):
            raise MalformedRow(i, f"action must be 0 or 1, got {action!r}")
        key = (machine_id, parsed_day)
        if key in seen:
            raise MalformedRow(i, f"duplicate work order for {machine_id} on {parsed_day}")
        seen.add(key)
        records.append(WorkOrderRecord(machine_id, parsed_day, action == "1"))
    return records


def align_daily(alarms: Sequence[AlarmRecord], orders: Sequence[WorkOrderRecord],
                machine_id: str, start: date, end: date) -> MachineSeries:
    """
    Build the dense daily series of one machine over [start, end]

    Records of other machines or outside the range are ignored. Counts of the
    same (day, code) are summed; days with no record at all are zero-filled
    and flagged.
    """
    if start > end:
        raise EmptyRange(f"start {start} is after end {end}")
    n_days = (end - start).days + 1
    counts = np.zeros((n_days, N_ALARMS), dtype=np.int64)
    labels = np.zeros(n_days, dtype=bool)
    seen = np.zeros(n_days, dtype=bool)

    for rec in alarms:
        if rec.machine_id != machine_id:
            continue
        offset = (rec.date - start).days
        if 0 <= offset < n_days:
            counts[offset, _CODE_INDEX[rec.alarm_code]] += rec.count
            seen[offset] = True

    for rec in orders:
        if rec.machine_id != machine_id:
            continue
        offset = (rec.date - start).days
        if 0 <= offset < n_days:
            labels[offset] = labels[offset] or rec.action_taken
            seen[offset] = True

    series = MachineSeries(machine_id, start, counts, labels, filled=~seen)
    if series.n_filled:
        logger.debug("zero-filled days", machine_id=machine_id, filled=series.n_filled, days=n_days)
    return series


def load_fleet(alarms_path, orders_path, start: Optional[date] = None,
               end: Optional[date] = None) -> List[MachineSeries]:
    """Parse both CSVs and align every machine found, sorted by machine id"""
    alarms = parse_alarm_csv(alarms_path)
    orders = parse_work_order_csv(orders_path)
    all_dates = [r.date for r in alarms] + [r.date for r in orders]
    if not all_dates:
        return []
    start = start or min(all_dates)
    end = end or max(all_dates)
    machines = sorted({r.machine_id for r in alarms} | {r.machine_id for r in orders})

    fleet = [align_daily(alarms, orders, m, start, end) for m in machines]
    logger.info("fleet loaded", machines=len(fleet), start=start, end=end,
                alarm_rows=len(alarms), order_rows=len(orders),
                filled_days=sum(s.n_filled for s in fleet))
    return fleet


def write_alarm_csv(fleet: Sequence[MachineSeries], path) -> int:
    """Write alarm counts back out; zero-count rows are omitted"""
    rows = []
    for series in fleet:
        day_idx, code_idx = np.nonzero(series.counts)
        dates = series.dates
        for d, c in zip(day_idx, code_idx):
            rows.append((series.machine_id, dates[d].isoformat(), ALARM_CODES[c],
                         int(series.counts[d, c])))
    pd.DataFrame(rows, columns=ALARM_HEADER).to_csv(path, index=False, lineterminator="\n")
    return len(rows)


def write_work_order_csv(fleet: Sequence[MachineSeries], path) -> int:
    """Write one action=1 row per maintenance day"""
    rows = []
    for series in fleet:
        dates = series.dates
        for d in np.flatnonzero(series.labels):
            rows.append((series.machine_id, dates[d].isoformat(), 1))
    pd.DataFrame(rows, columns=ORDER_HEADER).to_csv(path, index=False, lineterminator="\n")
    return len(rows)
