#!/usr/bin/env python3
"""
Streaming Audit for PackAudit
Warms up on the first classifier outputs, then refits the detectors on a
window of recent probabilities each day and flags the newest one
"""

from collections import deque
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .detectors import (AnomalyScore, McdSettings, RbfParams, mcd_fit, mcd_raw,
                        ocsvm_fit, ocsvm_raw)
from .errors import (DegenerateData, DegenerateSubset, EmptyInput, EmptyWindow, InvalidConfig,
                     MalformedRow, MissingArtifact, NotConverged, ProbabilityOutOfRange,
                     SingularCovariance, TooFewSamples)
from .forest import ProbSeries
from .telemetry import parse_date
from ..utils.log import get_logger

logger = get_logger(__name__)

OCSVM = "OCSVM"
MCD = "MCD"
ENSEMBLE = "ENSEMBLE"
DETECTORS = (OCSVM, MCD, ENSEMBLE)
BASE_DETECTORS = (OCSVM, MCD)

WARMUP = "WARMUP"
ACTIVE = "ACTIVE"
WINDOW_MODES = ("sliding", "frozen")

TRACE_HEADER = ["machine_id", "date", "status", "p", "ocsvm_norm", "mcd_norm",
                "ocsvm_flag", "mcd_flag", "ensemble_flag", "label"]


@dataclass
class StreamConfig:
    """
    Streaming audit settings

    threshold is the classifier's calibrated cutoff, reused for the
    normalised anomaly scores.
    """
    warmup: int = 30
    window: int = 30
    embed_dim: int = 1
    threshold: float = 0.5
    detectors: List[str] = field(default_factory=lambda: list(DETECTORS))
    window_mode: str = "sliding"
    rbf: RbfParams = field(default_factory=RbfParams)
    mcd: McdSettings = field(default_factory=McdSettings)
    ocsvm_tol: float = 1e-6
    ocsvm_max_iter: int = 100000

    def validate(self) -> "StreamConfig":
        for name in ("warmup", "window", "embed_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value}")
        if not self.warmup >= self.window >= self.embed_dim:
            raise InvalidConfig("warmup >= window >= embed_dim must hold")
        if self.window == self.embed_dim:
            raise InvalidConfig("window must exceed embed_dim to leave vectors to fit on")
        if not 0.0 <= self.threshold <= 1.0:
            raise InvalidConfig(f"threshold must be in [0,1], got {self.threshold}")
        if not self.detectors or any(d not in DETECTORS for d in self.detectors):
            raise InvalidConfig(f"detectors must be a non-empty subset of {DETECTORS}")
        if self.window_mode not in WINDOW_MODES:
            raise InvalidConfig(f"window_mode must be one of {WINDOW_MODES}")
        if not self.ocsvm_tol > 0 or self.ocsvm_max_iter < 1:
            raise InvalidConfig("ocsvm_tol and ocsvm_max_iter must be positive")
        self.rbf.validate()
        self.mcd.validate()
        if self.mcd.h is not None:
            # each fit sees window - embed_dim lagged vectors of width embed_dim
            n, d = self.window - self.embed_dim, self.embed_dim
            h_min = (n + d + 1) // 2
            if not h_min <= self.mcd.h <= n:
                raise InvalidConfig(f"mcd.h must be in [{h_min}, {n}] for window={self.window} "
                                    f"and embed_dim={self.embed_dim}, got {self.mcd.h}")
        return self

    @property
    def active_detectors(self) -> Tuple[str, ...]:
        """Base detectors that must run (ENSEMBLE needs both)"""
        if ENSEMBLE in self.detectors:
            return BASE_DETECTORS
        return tuple(d for d in BASE_DETECTORS if d in self.detectors)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StreamConfig":
        data = dict(data)
        valid_keys = {f.name for f in fields(cls)}
        unknown = set(data) - valid_keys
        if unknown:
            raise InvalidConfig(f"unknown stream keys: {sorted(unknown)}")
        if isinstance(data.get("rbf"), dict):
            data["rbf"] = _sub_from_dict(RbfParams, data["rbf"], "rbf")
        if isinstance(data.get("mcd"), dict):
            data["mcd"] = _sub_from_dict(McdSettings, data["mcd"], "mcd")
        if "detectors" in data:
            data["detectors"] = list(data["detectors"])
        return cls(**data)


def _sub_from_dict(klass, data: Dict[str, Any], section: str):
    valid_keys = {f.name for f in fields(klass)}
    unknown = set(data) - valid_keys
    if unknown:
        raise InvalidConfig(f"unknown {section} keys: {sorted(unknown)}")
    return klass(**data)


@dataclass
class AuditDecision:
    date: Optional[date]
    p_classifier: float
    status: str
    scores: Dict[str, AnomalyScore] = field(default_factory=dict)
    decisions: Dict[str, bool] = field(default_factory=dict)
    ensemble: Optional[bool] = None
    label: Optional[bool] = None

    @property
    def is_active(self) -> bool:
        return self.status == ACTIVE

    def flag(self, detector: str) -> Optional[bool]:
        if detector == ENSEMBLE:
            return self.ensemble
        return self.decisions.get(detector)


@dataclass
class AuditTrace:
    machine_id: str
    decisions: List[AuditDecision]
    config: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.decisions)

    @property
    def active(self) -> List[AuditDecision]:
        return [d for d in self.decisions if d.is_active]

    def flags(self, detector: str) -> np.ndarray:
        """Boolean decisions of one method over the ACTIVE days"""
        return np.array([bool(d.flag(detector)) for d in self.active], dtype=bool)

    def positives(self, detector: str) -> int:
        return int(self.flags(detector).sum())


@dataclass
class _FittedWindow:
    """What a detector learned from one window: a scorer and its own raws"""
    kind: str
    model: Any
    window_raws: np.ndarray

    def score(self, vector: np.ndarray) -> float:
        if self.kind == "point":
            return float(np.linalg.norm(vector - self.model))
        if self.kind == OCSVM:
            return float(ocsvm_raw(self.model, vector[None, :])[0])
        return float(mcd_raw(self.model, vector[None, :])[0])


@dataclass
class StreamState:
    """Mutable per-machine stream: recent probabilities and step count"""
    machine_id: str
    buffer: Deque[float] = field(default_factory=deque)
    n_seen: int = 0
    frozen: Dict[str, _FittedWindow] = field(default_factory=dict)

    @classmethod
    def start(cls, machine_id: str, cfg: StreamConfig) -> "StreamState":
        return cls(machine_id=machine_id, buffer=deque(maxlen=cfg.window))


def normalize_score(raw: float, window_raws: Sequence[float]) -> float:
    """
    Min-max position of raw within window_raws plus raw itself

    Returns 0.5 when every value is equal.
    """
    window_raws = np.asarray(window_raws, dtype=float).ravel()
    if len(window_raws) == 0:
        raise EmptyWindow("normalisation needs at least one window score")
    lo = min(float(window_raws.min()), raw)
    hi = max(float(window_raws.max()), raw)
    if hi == lo:
        return 0.5
    return float(np.clip((raw - lo) / (hi - lo), 0.0, 1.0))


def vote(decisions: Sequence[bool]) -> bool:
    """Strict majority; with two voters both must agree"""
    decisions = list(decisions)
    if not decisions:
        raise EmptyInput("vote needs at least one decision")
    return sum(bool(d) for d in decisions) * 2 > len(decisions)


def lag_embed(values: Sequence[float], embed_dim: int) -> np.ndarray:
    """Rows (v[t-embed_dim+1], ..., v[t]) for every t with a full history"""
    values = np.asarray(values, dtype=float)
    if len(values) < embed_dim:
        raise EmptyWindow(f"need {embed_dim} values to embed, got {len(values)}")
    return np.lib.stride_tricks.sliding_window_view(values, embed_dim).copy()


def _point_mass(data: np.ndarray) -> _FittedWindow:
    centre = data.mean(axis=0)
    return _FittedWindow("point", centre, np.linalg.norm(data - centre, axis=1))


def _step_seed(seed: int, step: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(step),))
    return int(ss.generate_state(1)[0])


def _fit_ocsvm(data: np.ndarray, cfg: StreamConfig, machine_id: str) -> _FittedWindow:
    try:
        model = ocsvm_fit(data, cfg.rbf, tol=cfg.ocsvm_tol, max_iter=cfg.ocsvm_max_iter)
    except NotConverged as e:
        logger.warning("ocsvm not converged", machine_id=machine_id, kkt=e.kkt_violation)
        model = e.model
    except (DegenerateData, TooFewSamples):
        return _point_mass(data)
    return _FittedWindow(OCSVM, model, ocsvm_raw(model, data))


def _fit_mcd(data: np.ndarray, cfg: StreamConfig, step: int) -> _FittedWindow:
    settings = cfg.mcd
    seed = _step_seed(settings.seed, step)
    n = len(data)
    for h_try in (settings.h, n):
        try:
            model = mcd_fit(data, h=h_try, n_starts=settings.n_starts, seed=seed,
                            max_csteps=settings.max_csteps)
            return _FittedWindow(MCD, model, mcd_raw(model, data))
        except (DegenerateSubset, SingularCovariance):
            continue
        except TooFewSamples:
            break
    return _point_mass(data)


def _fit_window(detector: str, data: np.ndarray, cfg: StreamConfig, state: StreamState) -> _FittedWindow:
    if detector == OCSVM:
        return _fit_ocsvm(data, cfg, state.machine_id)
    return _fit_mcd(data, cfg, state.n_seen)


def stream_step(state: StreamState, p_new: float, cfg: StreamConfig,
                day: Optional[date] = None, label: Optional[bool] = None) -> AuditDecision:
    """
    Feed one classifier probability and audit it

    Args:
        state: Per-machine stream state (updated in place)
        p_new: Classifier probability for the day
        cfg: Stream settings
        day: Calendar date carried into the decision
        label: Observed work-order flag carried into the decision

    Returns:
        WARMUP decision until `warmup` values were seen, ACTIVE afterwards
    """
    p_new = float(p_new)
    if not 0.0 <= p_new <= 1.0:
        raise ProbabilityOutOfRange(f"probability {p_new} outside [0,1]")
    if state.buffer.maxlen != cfg.window:
        state.buffer = deque(state.buffer, maxlen=cfg.window)

    state.buffer.append(p_new)
    state.n_seen += 1
    if state.n_seen <= cfg.warmup:
        return AuditDecision(day, p_new, WARMUP, label=label)

    vectors = lag_embed(state.buffer, cfg.embed_dim)
    train, newest = vectors[:-1], vectors[-1]

    scores: Dict[str, AnomalyScore] = {}
    decisions: Dict[str, bool] = {}
    for detector in cfg.active_detectors:
        if cfg.window_mode == "frozen":
            if detector not in state.frozen:
                state.frozen[detector] = _fit_window(detector, train, cfg, state)
            fitted = state.frozen[detector]
        else:
            fitted = _fit_window(detector, train, cfg, state)
        raw = fitted.score(newest)
        norm = normalize_score(raw, fitted.window_raws)
        scores[detector] = AnomalyScore(raw=raw, normalized=norm)
        decisions[detector] = norm > cfg.threshold

    ensemble = None
    if ENSEMBLE in cfg.detectors:
        ensemble = vote([decisions[OCSVM], decisions[MCD]])
    return AuditDecision(day, p_new, ACTIVE, scores=scores, decisions=decisions,
                         ensemble=ensemble, label=label)


def audit_series(p: ProbSeries, cfg: StreamConfig) -> AuditTrace:
    """Run stream_step over a whole probability series"""
    cfg.validate()
    state = StreamState.start(p.machine_id, cfg)
    decisions = [stream_step(state, p.p[i], cfg, day=p.dates[i], label=bool(p.labels[i]))
                 for i in range(len(p))]
    trace = AuditTrace(p.machine_id, decisions, cfg.to_dict())
    logger.debug("series audited", machine_id=p.machine_id, days=len(p),
                 active=len(trace.active),
                 ensemble_positives=trace.positives(ENSEMBLE) if ENSEMBLE in cfg.detectors else "na")
    return trace


def audit_fleet(series: Sequence[ProbSeries], cfg: StreamConfig, jobs: int = 1) -> List[AuditTrace]:
    """Audit every machine; traces come back in input order for any jobs"""
    cfg.validate()
    traces = Parallel(n_jobs=jobs)(
        delayed(audit_series)(s, cfg) for s in tqdm(series, desc="audit", unit="machine", leave=False)
    )
    logger.info("fleet audited", machines=len(traces), jobs=jobs,
                active_days=sum(len(t.active) for t in traces))
    return list(traces)


def _fmt_norm(decision: AuditDecision, detector: str) -> str:
    score = decision.scores.get(detector)
    if score is None or score.normalized is None:
        return ""
    return f"{score.normalized:.10g}"


def _fmt_flag(value: Optional[bool]) -> str:
    return "" if value is None else str(int(value))


def trace_rows(trace: AuditTrace) -> List[List[str]]:
    rows = []
    for d in trace.decisions:
        rows.append([
            trace.machine_id,
            d.date.isoformat() if d.date else "",
            d.status,
            f"{d.p_classifier:.10g}",
            _fmt_norm(d, OCSVM),
            _fmt_norm(d, MCD),
            _fmt_flag(d.decisions.get(OCSVM)),
            _fmt_flag(d.decisions.get(MCD)),
            _fmt_flag(d.ensemble),
            _fmt_flag(d.label),
        ])
    return rows


def write_trace_csv(traces: Sequence[AuditTrace], path) -> Path:
    """One row per machine-day in TRACE_HEADER order"""
    path = Path(path)
    rows = [row for trace in traces for row in trace_rows(trace)]
    pd.DataFrame(rows, columns=TRACE_HEADER).to_csv(path, index=False, lineterminator="\n")
    return path


def _parse_flag(value: str, row_index: int) -> Optional[bool]:
    if value == "":
        return None
    if value not in ("0", "1"):
        raise MalformedRow(row_index, f"flag must be 0, 1 or empty, got {value!r}")
    return value == "1"


def read_trace_csv(path) -> List[AuditTrace]:
    """Rebuild traces (normalised scores only) from write_trace_csv output"""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"trace file not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(frame.columns) != TRACE_HEADER:
        raise MalformedRow(0, f"header must be {','.join(TRACE_HEADER)}")

    traces: Dict[str, AuditTrace] = {}
    for i, row in enumerate(frame.itertuples(index=False), 1):
        scores, decisions = {}, {}
        for detector, norm, flag in ((OCSVM, row.ocsvm_norm, row.ocsvm_flag),
                                     (MCD, row.mcd_norm, row.mcd_flag)):
            if norm != "":
                scores[detector] = AnomalyScore(raw=float("nan"), normalized=float(norm))
            parsed = _parse_flag(flag, i)
            if parsed is not None:
                decisions[detector] = parsed
        if row.status not in (WARMUP, ACTIVE):
            raise MalformedRow(i, f"unknown status {row.status!r}")
        decision = AuditDecision(
            date=parse_date(row.date, i) if row.date else None,
            p_classifier=float(row.p),
            status=row.status,
            scores=scores,
            decisions=decisions,
            ensemble=_parse_flag(row.ensemble_flag, i),
            label=_parse_flag(row.label, i),
        )
        traces.setdefault(row.machine_id, AuditTrace(row.machine_id, [])).decisions.append(decision)
    return list(traces.values())
