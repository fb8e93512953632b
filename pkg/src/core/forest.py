#!/usr/bin/env python3
"""
Baseline Forest for PackAudit
Bagged Gini decision forest emitting per-day work-order probabilities,
plus ROC utilities for threshold calibration
"""

import hashlib
import warnings
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional

import joblib
import numpy as np
from scipy.stats import rankdata
from sklearn.ensemble import RandomForestClassifier

from .errors import InvalidConfig, MissingArtifact, SingleClassData, WidthMismatch
from .preprocess import FeatureMatrix
from ..utils.log import get_logger

logger = get_logger(__name__)

MODEL_FORMAT_VERSION = 1
THRESHOLD_CRITERIA = ("youden", "f1")


@dataclass
class ForestConfig:
    """Forest hyperparameters (500 trees, 17 predictors per split by default)"""
    n_trees: int = 500
    mtry: int = 17
    max_depth: Optional[int] = None
    min_leaf: int = 1
    seed: int = 0
    threshold_criterion: str = "youden"
    calibration_fraction: float = 0.25

    def validate(self) -> "ForestConfig":
        if not isinstance(self.n_trees, int) or self.n_trees < 1:
            raise InvalidConfig(f"n_trees must be a positive integer, got {self.n_trees}")
        if not isinstance(self.mtry, int) or self.mtry < 1:
            raise InvalidConfig(f"mtry must be a positive integer, got {self.mtry}")
        if self.max_depth is not None and (not isinstance(self.max_depth, int) or self.max_depth < 1):
            raise InvalidConfig("max_depth must be a positive integer or null")
        if not isinstance(self.min_leaf, int) or self.min_leaf < 1:
            raise InvalidConfig("min_leaf must be a positive integer")
        if self.threshold_criterion not in THRESHOLD_CRITERIA:
            raise InvalidConfig(f"threshold_criterion must be one of {THRESHOLD_CRITERIA}")
        if not 0.0 <= self.calibration_fraction < 1.0:
            raise InvalidConfig(f"calibration_fraction must be in [0,1), got {self.calibration_fraction}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ForestModel:
    """Fitted forest, calibrated cutoff and training metadata"""
    estimator: RandomForestClassifier
    threshold: float
    train_meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def trees(self) -> List[Any]:
        return list(self.estimator.estimators_)

    @property
    def n_features(self) -> int:
        return int(self.estimator.n_features_in_)


@dataclass
class ProbSeries:
    """Classifier probability per day for one machine"""
    machine_id: str
    dates: List[date]
    p: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.labels = np.asarray(self.labels, dtype=bool)
        self.dates = list(self.dates)
        if not (len(self.p) == len(self.labels) == len(self.dates)):
            raise ValueError("p, labels and dates must have equal length")
        if len(self.p) and (np.nanmin(self.p) < 0.0 or np.nanmax(self.p) > 1.0):
            raise ValueError("probabilities must lie in [0,1]")

    def __len__(self) -> int:
        return len(self.p)


def _require_both_classes(labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise SingleClassData("both classes must be present")


def data_fingerprint(rows: np.ndarray, labels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(rows, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    return h.hexdigest()[:16]


def train_forest(train: FeatureMatrix, cfg: ForestConfig, jobs: int = 1,
                 calibration: Optional[FeatureMatrix] = None) -> ForestModel:
    """
    Fit the bagged forest and calibrate its decision threshold

    Each tree sees a bootstrap sample of the training rows and draws `mtry`
    candidate features per split. The threshold is chosen on `calibration`,
    rows the forest never saw and SMOTE never touched. Without a usable
    calibration fold it falls back to out-of-bag probabilities of the
    original rows, which read optimistic when SMOTE children of a row were
    in-bag.

    Args:
        train: Training features (may contain SMOTE rows)
        cfg: Forest settings
        jobs: Worker count for tree fitting
        calibration: Held-out original rows for the threshold

    Returns:
        ForestModel
    """
    cfg.validate()
    _require_both_classes(train.labels)
    if calibration is not None and len(calibration) and calibration.n_features != train.n_features:
        raise WidthMismatch(f"calibration has {calibration.n_features} features, "
                            f"training has {train.n_features}")

    mtry = cfg.mtry
    if mtry > train.n_features:
        warnings.warn(f"mtry={mtry} capped at {train.n_features} features")
        logger.warning("mtry capped", requested=mtry, features=train.n_features)
        mtry = train.n_features

    estimator = RandomForestClassifier(
        n_estimators=cfg.n_trees,
        criterion="gini",
        max_features=mtry,
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_leaf,
        bootstrap=True,
        oob_score=cfg.n_trees > 1,
        random_state=cfg.seed,
        n_jobs=jobs,
    )
    with warnings.catch_warnings():
        # few trees leave some rows without OOB votes
        warnings.simplefilter("ignore", UserWarning)
        estimator.fit(train.rows, train.labels)

    pos = int(np.flatnonzero(estimator.classes_ == True)[0])
    original = ~train.synthetic
    if cfg.n_trees > 1:
        oob = estimator.oob_decision_function_[:, pos]
        usable = original & np.isfinite(oob)
    else:
        oob, usable = None, np.zeros(len(train), dtype=bool)

    oob_auc = None
    oob_labels = train.labels[usable]
    if usable.any() and oob_labels.any() and not oob_labels.all():
        oob_auc = auroc(oob[usable], oob_labels)

    threshold, source, calib_auc = 0.5, "default", None
    if calibration is not None and len(calibration):
        if calibration.labels.any() and not calibration.labels.all():
            p_cal = np.clip(estimator.predict_proba(calibration.rows)[:, pos], 0.0, 1.0)
            calib_auc = auroc(p_cal, calibration.labels)
            threshold = choose_threshold(p_cal, calibration.labels, criterion=cfg.threshold_criterion)
            source = "calibration"
        else:
            logger.warning("calibration fold unusable", rows=len(calibration), reason="one class only")
    if source == "default" and oob_auc is not None:
        threshold = choose_threshold(oob[usable], oob_labels, criterion=cfg.threshold_criterion)
        source = "oob"
    if source == "default":
        logger.warning("threshold left at 0.5", reason="no calibration rows with both classes")

    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "mtry_effective": mtry,
        "n_rows": len(train),
        "n_synthetic": int(train.synthetic.sum()),
        "n_calibration": 0 if calibration is None else len(calibration),
        "data_fingerprint": data_fingerprint(train.rows, train.labels),
        "threshold_source": source,
        "calibration_auroc": calib_auc,
        "oob_auroc": oob_auc,
    }
    logger.info("forest trained", trees=cfg.n_trees, mtry=mtry, rows=len(train),
                threshold=threshold, threshold_source=source,
                calibration_auroc=calib_auc if calib_auc is not None else "na",
                oob_auroc=oob_auc if oob_auc is not None else "na")
    return ForestModel(estimator=estimator, threshold=float(threshold), train_meta=meta)


def predict_proba(model: ForestModel, rows) -> np.ndarray:
    """Mean over trees of the leaf positive-class fraction"""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.n_features:
        raise WidthMismatch(f"expected {model.n_features} features, got {rows.shape[1]}")
    classes = model.estimator.classes_
    pos = np.flatnonzero(classes == True)
    if len(pos) == 0:
        return np.zeros(len(rows))
    p = model.estimator.predict_proba(rows)[:, pos[0]]
    return np.clip(p, 0.0, 1.0)


def predict_series(model: ForestModel, features: FeatureMatrix) -> ProbSeries:
    return ProbSeries(features.machine_id, features.dates,
                      predict_proba(model, features.rows), features.labels)


def auroc(p, labels) -> float:
    """
    Area under the ROC curve as the Mann-Whitney statistic

    P(p_pos > p_neg) + 0.5 * P(tie), from average ranks.
    """
    p = np.asarray(p, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if len(p) != len(labels):
        raise ValueError("p and labels must have equal length")
    _require_both_classes(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(p)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _rates_at_candidates(p: np.ndarray, labels: np.ndarray):
    """TP/FP/FN counts for predicting p > t at every midpoint candidate t"""
    uniq = np.unique(p)
    if len(uniq) < 2:
        candidates = uniq.copy()
    else:
        candidates = (uniq[:-1] + uniq[1:]) / 2.0
    pos_sorted = np.sort(p[labels])
    neg_sorted = np.sort(p[~labels])
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, candidates, side="right")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, candidates, side="right")
    fn = len(pos_sorted) - tp
    return candidates, tp, fp, fn


def youden_j(p, labels, threshold: float) -> float:
    p = np.asarray(p, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pred = p > threshold
    tpr = (pred & labels).sum() / labels.sum()
    fpr = (pred & ~labels).sum() / (~labels).sum()
    return float(tpr - fpr)


def choose_threshold(p, labels, criterion: str = "youden") -> float:
    """
    Pick the cutoff among midpoints of adjacent sorted unique scores

    criterion 'youden' maximises TPR - FPR, 'f1' maximises F1 of p > t.
    Ties go to the higher threshold.
    """
    p = np.asarray(p, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if len(p) != len(labels):
        raise ValueError("p and labels must have equal length")
    _require_both_classes(labels)
    if criterion not in THRESHOLD_CRITERIA:
        raise InvalidConfig(f"unknown threshold criterion {criterion!r}")

    candidates, tp, fp, fn = _rates_at_candidates(p, labels)
    if criterion == "youden":
        score = tp / labels.sum() - fp / (~labels).sum()
    else:
        denom = 2 * tp + fp + fn
        score = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    best = np.flatnonzero(score == score.max())[-1]
    return float(np.clip(candidates[best], 0.0, 1.0))


def save_model(model: ForestModel, path) -> Path:
    """Persist to the versioned forest.model artifact"""
    path = Path(path)
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "threshold": model.threshold,
        "train_meta": model.train_meta,
        "estimator": model.estimator,
    }
    joblib.dump(payload, path, compress=3)
    return path


def load_model(path) -> ForestModel:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"model file not found: {path}")
    payload = joblib.load(path)
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != MODEL_FORMAT_VERSION:
        raise MissingArtifact(f"{path} has model format {version}, expected {MODEL_FORMAT_VERSION}")
    return ForestModel(estimator=payload["estimator"], threshold=float(payload["threshold"]),
                       train_meta=payload["train_meta"])
