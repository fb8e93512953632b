#!/usr/bin/env python3
"""
Preprocessing for PackAudit
First-order IIR alarm memory, feature matrices, chronological split and SMOTE
"""

from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from imblearn.over_sampling import SMOTE
from scipy.signal import lfilter
from sklearn.neighbors import NearestNeighbors

from .errors import (AlphaOutOfRange, EmptySeries, InvalidConfig, LengthMismatch,
                     TooFewMinority)
from .telemetry import ALARM_CODES, MachineSeries
from ..utils.log import get_logger

logger = get_logger(__name__)

DEFAULT_ALPHA = 0.63


@dataclass
class IIRState:
    """Filter coefficient and previous output of one machine's filter"""
    alpha: float = DEFAULT_ALPHA
    y_prev: Optional[np.ndarray] = None

    def __post_init__(self):
        _check_alpha(self.alpha)

    def reset(self) -> None:
        """Forget the history, as after a work order"""
        self.y_prev = None

    def step(self, x_n) -> np.ndarray:
        """Consume one day's counts and return that day's filtered row"""
        x_n = np.asarray(x_n, dtype=float)
        y = x_n.copy() if self.y_prev is None else self.alpha * self.y_prev + x_n
        self.y_prev = y
        return y

    def run(self, x: np.ndarray) -> np.ndarray:
        """Filter a block of consecutive days, continuing from y_prev"""
        x = np.asarray(x, dtype=float)
        if len(x) == 0:
            return x.copy()
        if self.y_prev is None:
            y = lfilter([1.0], [1.0, -self.alpha], x, axis=0)
        else:
            zi = (self.alpha * np.asarray(self.y_prev, dtype=float))[None, ...]
            y, _ = lfilter([1.0], [1.0, -self.alpha], x, axis=0, zi=zi)
        self.y_prev = y[-1].copy()
        return y


@dataclass
class PreprocessConfig:
    alpha: float = DEFAULT_ALPHA
    reset_on_order: bool = True
    train_fraction: float = 0.5
    dump_features: bool = False

    def validate(self) -> "PreprocessConfig":
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig(f"alpha must be in (0,1), got {self.alpha}")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidConfig("train_fraction must be in (0,1)")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def validate(self) -> "SmoteConfig":
        if not isinstance(self.k_neighbors, int) or self.k_neighbors < 1:
            raise InvalidConfig(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not 0.0 < self.target_ratio <= 1.0:
            raise InvalidConfig(f"target_ratio must be in (0,1], got {self.target_ratio}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 32:
            raise InvalidConfig(f"smote seed must be an integer in [0, 2**32), got {self.seed}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class FeatureMatrix:
    """Filtered daily features with labels; synthetic marks SMOTE rows"""
    rows: np.ndarray
    labels: np.ndarray
    machine_id: str
    dates: List[date]
    synthetic: Optional[np.ndarray] = None
    machine_ids: Optional[List[str]] = None

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.labels = np.asarray(self.labels, dtype=bool)
        self.dates = list(self.dates)
        if self.synthetic is None:
            self.synthetic = np.zeros(len(self.labels), dtype=bool)
        if self.machine_ids is None:
            self.machine_ids = [self.machine_id] * len(self.labels)
        if not (len(self.rows) == len(self.labels) == len(self.dates)
                == len(self.synthetic) == len(self.machine_ids)):
            raise LengthMismatch("rows, labels and dates must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def take(self, index) -> "FeatureMatrix":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return FeatureMatrix(
            rows=self.rows[index],
            labels=self.labels[index],
            machine_id=self.machine_id,
            dates=[self.dates[i] for i in index],
            synthetic=self.synthetic[index],
            machine_ids=[self.machine_ids[i] for i in index],
        )

    @classmethod
    def concat(cls, parts: Sequence["FeatureMatrix"], machine_id: str = "fleet") -> "FeatureMatrix":
        """Pool several machines' matrices for joint training"""
        if not parts:
            raise EmptySeries("nothing to concatenate")
        return cls(
            rows=np.vstack([p.rows for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            machine_id=machine_id,
            dates=[d for p in parts for d in p.dates],
            synthetic=np.concatenate([p.synthetic for p in parts]),
            machine_ids=[m for p in parts for m in p.machine_ids],
        )


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(f"alpha must be in (0,1), got {alpha}")


def iir_filter(x, alpha: float = DEFAULT_ALPHA, reset_on_order: bool = False,
               labels: Optional[Sequence[bool]] = None) -> np.ndarray:
    """
    Apply y(n) = alpha * y(n-1) + x(n) along the time axis, with y(-1) = 0

    Args:
        x: Stream of shape (n,) or (n, d)
        alpha: Memory coefficient in (0, 1)
        reset_on_order: Zero the state before day n whenever labels[n-1] is set
        labels: Work-order flags, same length as x

    Returns:
        Filtered stream with the shape of x
    """
    _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    n = x.shape[0] if x.ndim else 0
    if labels is None:
        labels = np.zeros(n, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if len(labels) != n:
        raise LengthMismatch(f"x has {n} samples but labels has {len(labels)}")
    if n == 0:
        return x.copy()

    starts = [0]
    if reset_on_order:
        starts += [i + 1 for i in np.flatnonzero(labels[:-1])]
    bounds = starts + [n]

    state = IIRState(alpha)
    y = np.empty_like(x)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        state.reset()
        y[lo:hi] = state.run(x[lo:hi])
    return y


def build_feature_matrix(series: MachineSeries, alpha: float = DEFAULT_ALPHA,
                         reset_on_order: bool = True) -> FeatureMatrix:
    """Filter one machine's alarm counts into model-ready rows"""
    if series is None or len(series) == 0:
        raise EmptySeries("cannot build features from an empty series")
    rows = iir_filter(series.counts, alpha, reset_on_order=reset_on_order, labels=series.labels)
    return FeatureMatrix(rows=rows, labels=series.labels.copy(),
                         machine_id=series.machine_id, dates=series.dates)


def chronological_split(features: FeatureMatrix, fraction: float = 0.5) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """First `fraction` of the days for training, the rest for testing"""
    if not 0.0 < fraction < 1.0:
        raise InvalidConfig("split fraction must be in (0,1)")
    cut = int(round(len(features) * fraction))
    idx = np.arange(len(features))
    return features.take(idx[:cut]), features.take(idx[cut:])


def smote_oversample(features: FeatureMatrix, cfg: SmoteConfig) -> FeatureMatrix:
    """
    Add synthetic minority rows until minority = round(target_ratio * majority)

    Sampling is imblearn's SMOTE: each synthetic row interpolates between a
    minority row and one of its k nearest minority neighbours. Original rows
    are kept untouched and come first; imblearn appends the generated ones.
    Synthetic rows borrow date and machine from their nearest original
    minority row.
    """
    cfg.validate()
    positives = int(features.labels.sum())
    negatives = len(features) - positives
    minority_label = positives <= negatives
    minority_idx = np.flatnonzero(features.labels == minority_label)
    n_minority = len(minority_idx)
    n_majority = len(features) - n_minority

    if n_minority < 2:
        raise TooFewMinority(f"need at least 2 minority rows, got {n_minority}")
    if cfg.k_neighbors >= n_minority:
        raise TooFewMinority(f"k_neighbors={cfg.k_neighbors} needs more than {n_minority} minority rows")

    n_target = int(round(cfg.target_ratio * n_majority))
    if n_target <= n_minority:
        return features

    sampler = SMOTE(sampling_strategy={int(minority_label): n_target},
                    k_neighbors=cfg.k_neighbors, random_state=cfg.seed)
    rows, labels = sampler.fit_resample(features.rows, features.labels.astype(int))
    n_orig = len(features)
    synthetic_rows = rows[n_orig:]
    n_new = len(synthetic_rows)

    nearest = NearestNeighbors(n_neighbors=1).fit(features.rows[minority_idx])
    owner = minority_idx[nearest.kneighbors(synthetic_rows, return_distance=False)[:, 0]]
    out = FeatureMatrix(
        rows=rows,
        labels=labels.astype(bool),
        machine_id=features.machine_id,
        dates=features.dates + [features.dates[i] for i in owner],
        synthetic=np.concatenate([features.synthetic, np.ones(n_new, dtype=bool)]),
        machine_ids=features.machine_ids + [features.machine_ids[i] for i in owner],
    )
    logger.info("smote applied", minority=n_minority, majority=n_majority, synthetic=n_new,
                k=cfg.k_neighbors)
    return out


def dump_feature_csv(features: FeatureMatrix, path) -> None:
    """Write machine_id,date,f_A1..f_A201,label,synthetic"""
    frame = pd.DataFrame(features.rows, columns=[f"f_{c}" for c in ALARM_CODES[:features.n_features]])
    frame.insert(0, "date", [d.isoformat() for d in features.dates])
    frame.insert(0, "machine_id", features.machine_ids)
    frame["label"] = features.labels.astype(int)
    frame["synthetic"] = features.synthetic.astype(int)
    frame.to_csv(Path(path), index=False, float_format="%.10g", lineterminator="\n")
