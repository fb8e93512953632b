#!/usr/bin/env python3
"""
Evaluation for PackAudit
Per-machine F1 of the baseline classifier and the audit detectors, relative
improvements, one-way ANOVA and the fleet report files
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import f as f_dist

from .audit_stream import ENSEMBLE, MCD, OCSVM, AuditTrace
from .errors import (LengthMismatch, MachineMismatch, TooFewGroups, TooFewValues,
                     ZeroBaseline)
from .forest import ProbSeries
from ..utils.log import get_logger

logger = get_logger(__name__)

BASELINE = "Baseline"
METHODS = (BASELINE, OCSVM, MCD, ENSEMBLE)
DETECTOR_METHODS = (OCSVM, MCD, ENSEMBLE)
METHOD_COLUMNS = {BASELINE: "Baseline", OCSVM: "OCSVM", MCD: "MCD", ENSEMBLE: "Ensemble"}
REPORT_HEADER = ["Machine", "Baseline", "OCSVM", "MCD", "Ensemble", "max % change"]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MachineRow:
    machine_id: str
    f1: Dict[str, float]
    max_pct_change: float
    n_active: int = 0

    @property
    def best(self) -> List[str]:
        top = max(self.f1.values())
        return [m for m in METHODS if self.f1[m] == top]


@dataclass
class MethodReport:
    """Table of per-machine F1 plus fleet statistics"""
    rows: List[MachineRow]
    means: Dict[str, float]
    sds: Dict[str, float]
    anova: Optional[Tuple[float, float]] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def column(self, method: str) -> np.ndarray:
        return np.array([r.f1[method] for r in self.rows], dtype=float)


def confusion(decisions, labels) -> ConfusionCounts:
    decisions = np.asarray(decisions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if decisions.shape != labels.shape:
        raise LengthMismatch(f"{len(decisions)} decisions vs {len(labels)} labels")
    return ConfusionCounts(
        tp=int(np.sum(decisions & labels)),
        fp=int(np.sum(decisions & ~labels)),
        tn=int(np.sum(~decisions & ~labels)),
        fn=int(np.sum(~decisions & labels)),
    )


def precision(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp
    return c.tp / denom if denom else 0.0


def recall(c: ConfusionCounts) -> float:
    denom = c.tp + c.fn
    return c.tp / denom if denom else 0.0


def f1(c: ConfusionCounts) -> float:
    """2tp / (2tp + fp + fn); 0 when nothing was predicted or present"""
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def pct_change(baseline: float, new: float) -> float:
    if not baseline > 0:
        raise ZeroBaseline(f"baseline must be positive, got {baseline}")
    return 100.0 * (new - baseline) / baseline


def anova_oneway(groups: Sequence[Sequence[float]]) -> Tuple[float, float]:
    """
    One-way ANOVA F statistic and its upper-tail p-value

    Zero within-group variance gives F = inf, p = 0 (or F = 0, p = 1 when
    every group mean is also equal).
    """
    if len(groups) < 2:
        raise TooFewGroups(f"need at least 2 groups, got {len(groups)}")
    arrays = [np.asarray(g, dtype=float).ravel() for g in groups]
    for i, g in enumerate(arrays):
        if len(g) < 2:
            raise TooFewValues(f"group {i} has {len(g)} values, need at least 2")

    k = len(arrays)
    n_total = sum(len(g) for g in arrays)
    grand = np.concatenate(arrays).mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in arrays)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in arrays)
    df_between, df_within = k - 1, n_total - k

    if ss_within == 0:
        if ss_between == 0:
            return 0.0, 1.0
        return math.inf, 0.0
    F = (ss_between / df_between) / (ss_within / df_within)
    return float(F), float(f_dist.sf(F, df_between, df_within))


def _machine_row(trace: AuditTrace, prob: ProbSeries) -> MachineRow:
    if trace.machine_id != prob.machine_id:
        raise MachineMismatch(f"trace {trace.machine_id} paired with series {prob.machine_id}")
    if len(trace) != len(prob):
        raise MachineMismatch(f"{trace.machine_id}: trace has {len(trace)} days, series {len(prob)}")

    threshold = float(trace.config.get("threshold", 0.5))
    active = np.array([d.is_active for d in trace.decisions], dtype=bool)
    labels = prob.labels[active]
    scores = {BASELINE: f1(confusion(prob.p[active] > threshold, labels))}
    for method in DETECTOR_METHODS:
        scores[method] = f1(confusion(trace.flags(method), labels))

    base = scores[BASELINE]
    if base > 0:
        max_change = max(pct_change(base, scores[m]) for m in DETECTOR_METHODS)
    else:
        max_change = math.nan
    return MachineRow(trace.machine_id, scores, max_change, int(active.sum()))


def _fleet_extras(report: MethodReport) -> Dict[str, Any]:
    extras: Dict[str, Any] = {"median": {}, "mean_pct_change": {}, "pct_change_of_mean": {},
                              "wins": {m: 0 for m in METHODS}, "ties": 0}
    base_mean = report.means[BASELINE]
    for method in METHODS:
        extras["median"][method] = float(np.median(report.column(method)))
    for method in DETECTOR_METHODS:
        changes = [pct_change(r.f1[BASELINE], r.f1[method]) for r in report.rows if r.f1[BASELINE] > 0]
        extras["mean_pct_change"][method] = float(np.mean(changes)) if changes else math.nan
        extras["pct_change_of_mean"][method] = pct_change(base_mean, report.means[method]) if base_mean > 0 else math.nan

    extremes = []
    for row in report.rows:
        best = row.best
        if len(best) == 1:
            extras["wins"][best[0]] += 1
        else:
            extras["ties"] += 1
        if row.f1[BASELINE] > 0:
            for method in DETECTOR_METHODS:
                extremes.append((pct_change(row.f1[BASELINE], row.f1[method]), row.machine_id, method))
    if extremes:
        lo = min(extremes, key=lambda e: e[0])
        hi = max(extremes, key=lambda e: e[0])
        extras["min_pct_change"] = {"value": lo[0], "machine_id": lo[1], "method": lo[2]}
        extras["max_pct_change"] = {"value": hi[0], "machine_id": hi[1], "method": hi[2]}
    return extras


def fleet_summary(traces: Sequence[AuditTrace], prob: Sequence[ProbSeries], jobs: int = 1) -> MethodReport:
    """
    Score every method on each machine's ACTIVE days

    The baseline decides p > threshold with the threshold recorded in the
    trace's config snapshot.
    """
    if len(traces) != len(prob):
        raise MachineMismatch(f"{len(traces)} traces vs {len(prob)} probability series")
    if not traces:
        raise MachineMismatch("no machines to summarise")
    rows = Parallel(n_jobs=jobs)(delayed(_machine_row)(t, p) for t, p in zip(traces, prob))

    means, sds = {}, {}
    for method in METHODS:
        values = np.array([r.f1[method] for r in rows], dtype=float)
        means[method] = float(values.mean())
        sds[method] = float(values.std(ddof=1)) if len(values) > 1 else math.nan

    anova = None
    try:
        anova = anova_oneway([[r.f1[m] for r in rows] for m in METHODS])
    except TooFewValues:
        logger.warning("anova skipped", machines=len(rows), reason="needs at least two machines")

    report = MethodReport(list(rows), means, sds, anova)
    report.extras = _fleet_extras(report)
    logger.info("fleet summarised", machines=len(rows),
                **{f"mean_{METHOD_COLUMNS[m].lower()}": means[m] for m in METHODS})
    return report


def _fmt(value: float, fmt: str) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, fmt)


def write_report_csv(report: MethodReport, path) -> Path:
    """Per-machine F1 table followed by an Average row"""
    path = Path(path)
    records = []
    for r in report.rows:
        records.append([r.machine_id] + [_fmt(r.f1[m], ".3f") for m in METHODS]
                       + [_fmt(r.max_pct_change, ".1f")])
    changes = [r.max_pct_change for r in report.rows if not math.isnan(r.max_pct_change)]
    avg_change = float(np.mean(changes)) if changes else math.nan
    records.append(["Average"] + [_fmt(report.means[m], ".3f") for m in METHODS]
                   + [_fmt(avg_change, ".1f")])
    pd.DataFrame(records, columns=REPORT_HEADER).to_csv(path, index=False, lineterminator="\n")
    return path


def write_boxplot_csv(report: MethodReport, path) -> Path:
    """Long format method,machine_id,f1 for external plotting"""
    path = Path(path)
    records = [(METHOD_COLUMNS[m], r.machine_id, _fmt(r.f1[m], ".6f")) for m in METHODS for r in report.rows]
    pd.DataFrame(records, columns=["method", "machine_id", "f1"]).to_csv(path, index=False, lineterminator="\n")
    return path


def write_report_markdown(report: MethodReport, path) -> Path:
    path = Path(path)
    ex = report.extras
    lines = ["# Fleet audit report", "",
             f"Machines: {len(report.rows)}", "",
             "| Method | Mean F1 | SD | Median F1 | Mean % change vs baseline | % change of mean F1 | Wins |",
             "|---|---|---|---|---|---|---|"]
    for m in METHODS:
        mean_change = ex["mean_pct_change"].get(m, math.nan)
        change_of_mean = ex["pct_change_of_mean"].get(m, math.nan)
        lines.append(f"| {METHOD_COLUMNS[m]} | {_fmt(report.means[m], '.3f')} | {_fmt(report.sds[m], '.3f')} "
                     f"| {_fmt(ex['median'][m], '.3f')} | {_fmt(mean_change, '+.1f') or '-'} "
                     f"| {_fmt(change_of_mean, '+.1f') or '-'} | {ex['wins'][m]} |")
    lines += ["", f"Rows with a tied best method: {ex['ties']}", ""]

    lines.append("## Ensemble improvement")
    lines.append(f"- mean of per-machine % changes: {_fmt(ex['mean_pct_change'][ENSEMBLE], '+.1f') or 'n/a'}")
    lines.append(f"- % change of the mean F1: {_fmt(ex['pct_change_of_mean'][ENSEMBLE], '+.1f') or 'n/a'}")
    lines.append("")
    for key, title in (("max_pct_change", "Largest change"), ("min_pct_change", "Smallest change")):
        if key in ex:
            e = ex[key]
            lines.append(f"- {title}: {_fmt(e['value'], '+.1f')}% ({e['method']} on {e['machine_id']})")
    lines.append("")

    lines.append("## One-way ANOVA over the four methods")
    if report.anova is None:
        lines.append("Not computed (needs at least two machines).")
    else:
        F, p = report.anova
        lines.append(f"F = {_fmt(F, '.4f')}, p = {_fmt(p, '.3g')}")
    lines += ["", "Normality of the F1 groups was not re-tested.", ""]
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


def write_boxplot_svg(report: MethodReport, path) -> Optional[Path]:
    """Box plot of per-machine F1 per method; skipped when matplotlib is absent"""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("boxplot svg skipped", reason="matplotlib not installed")
        return None

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "packaudit", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.boxplot([report.column(m) for m in METHODS])
        ax.set_xticks(range(1, len(METHODS) + 1))
        ax.set_xticklabels([METHOD_COLUMNS[m] for m in METHODS])
        ax.set_ylabel("Test F1")
        ax.set_ylim(0.0, 1.0)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
