"""
PackAudit - Pipeline stages
Each cmd_* function runs one stage from a resolved RunConfig and returns the
paths it wrote
"""

import json
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..core.audit_stream import AuditTrace, audit_fleet, read_trace_csv, write_trace_csv
from ..core.errors import MissingArtifact, SingleClassData
from ..core.evaluate import (MethodReport, fleet_summary, write_boxplot_csv, write_boxplot_svg,
                             write_report_csv, write_report_markdown)
from ..core.fleet import generate_fleet, write_fleet
from ..core.forest import (ForestModel, ProbSeries, auroc, load_model, predict_series,
                           save_model, train_forest)
from ..core.preprocess import (FeatureMatrix, build_feature_matrix, chronological_split,
                               dump_feature_csv, smote_oversample)
from ..core.telemetry import MachineSeries, load_fleet
from ..utils.log import get_logger
from ..utils.run_config import RunConfig, write_resolved_config

logger = get_logger(__name__)


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return Path(path)


def _fleet_range(cfg: RunConfig) -> Tuple[Optional[date], Optional[date]]:
    """Date range from fleet_manifest.json when the CSVs came from fleetgen"""
    manifest = cfg.paths.manifest_path
    if not manifest.exists():
        return None, None
    with open(manifest, "r", encoding="utf-8") as f:
        data = json.load(f)
    return date.fromisoformat(data["start_date"]), date.fromisoformat(data["end_date"])


def _load_split_features(cfg: RunConfig) -> List[Tuple[FeatureMatrix, FeatureMatrix]]:
    alarms = _require(cfg.paths.alarms_path, "alarm CSV")
    orders = _require(cfg.paths.work_orders_path, "work-order CSV")
    start, end = _fleet_range(cfg)
    fleet: List[MachineSeries] = load_fleet(alarms, orders, start, end)
    if not fleet:
        raise MissingArtifact(f"no machines found in {alarms}")

    splits = []
    for series in tqdm(fleet, desc="features", unit="machine", leave=False):
        features = build_feature_matrix(series, cfg.preprocess.alpha, cfg.preprocess.reset_on_order)
        splits.append(chronological_split(features, cfg.preprocess.train_fraction))
    return splits


def cmd_fleetgen(cfg: RunConfig) -> Dict[str, Path]:
    """Generate the synthetic fleet CSVs and manifest"""
    write_resolved_config(cfg)
    fleet = generate_fleet(cfg.fleet, jobs=cfg.jobs)
    return write_fleet(cfg.fleet, fleet, cfg.paths.alarms_path.parent)


def cmd_train(cfg: RunConfig) -> Path:
    """
    Fit the baseline forest on the training half of every machine

    The last `forest.calibration_fraction` of each training half is held back
    untouched for the decision threshold. The rest of the training rows of all
    machines are pooled and rebalanced with SMOTE; the test halves are only
    used for the reported test AUROC.
    """
    splits = _load_split_features(cfg)
    write_resolved_config(cfg)
    fraction = cfg.forest.calibration_fraction
    fit_parts, calibration_parts = [], []
    for train_half, _ in splits:
        if fraction > 0:
            fit_part, calibration_part = chronological_split(train_half, 1.0 - fraction)
            calibration_parts.append(calibration_part)
        else:
            fit_part = train_half
        fit_parts.append(fit_part)
    train = FeatureMatrix.concat(fit_parts)
    calibration = FeatureMatrix.concat(calibration_parts) if calibration_parts else None
    test = FeatureMatrix.concat([s[1] for s in splits])
    balanced = smote_oversample(train, cfg.smote)

    if cfg.preprocess.dump_features:
        dump_feature_csv(balanced, cfg.paths.out_dir / "features_train.csv")

    model = train_forest(balanced, cfg.forest, jobs=cfg.jobs, calibration=calibration)
    try:
        test_p = predict_series(model, test).p
        model.train_meta["test_auroc"] = auroc(test_p, test.labels)
    except SingleClassData:
        model.train_meta["test_auroc"] = None
    meta = model.train_meta
    logger.info("baseline evaluated",
                test_auroc="na" if meta["test_auroc"] is None else meta["test_auroc"],
                calibration_auroc="na" if meta["calibration_auroc"] is None else meta["calibration_auroc"],
                threshold=model.threshold)
    return save_model(model, cfg.paths.model_path)


def cmd_audit(cfg: RunConfig) -> Dict[str, Path]:
    """Audit the classifier's test-half probabilities machine by machine"""
    model: ForestModel = load_model(cfg.paths.model_path)
    splits = _load_split_features(cfg)
    write_resolved_config(cfg)
    series = [predict_series(model, test) for _, test in splits]

    stream_cfg = cfg.stream
    stream_cfg.threshold = model.threshold
    traces = audit_fleet(series, stream_cfg, jobs=cfg.jobs)

    paths = {"traces": cfg.paths.traces_path, "manifest": cfg.paths.audit_manifest_path}
    write_trace_csv(traces, paths["traces"])
    manifest = {
        "threshold": model.threshold,
        "stream": stream_cfg.to_dict(),
        "model": str(cfg.paths.model_path),
        "model_meta": {k: v for k, v in model.train_meta.items() if k != "config"},
        "machines": [t.machine_id for t in traces],
    }
    with open(paths["manifest"], "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def load_audit(cfg: RunConfig) -> Tuple[List[AuditTrace], List[ProbSeries]]:
    """Traces plus the classifier series they were built from"""
    traces = read_trace_csv(_require(cfg.paths.traces_path, "audit traces"))
    with open(_require(cfg.paths.audit_manifest_path, "audit manifest"), "r", encoding="utf-8") as f:
        manifest = json.load(f)
    series = []
    for trace in traces:
        trace.config = dict(manifest["stream"])
        series.append(ProbSeries(
            trace.machine_id,
            [d.date for d in trace.decisions],
            np.array([d.p_classifier for d in trace.decisions]),
            np.array([bool(d.label) for d in trace.decisions]),
        ))
    return traces, series


def _summary(cfg: RunConfig) -> MethodReport:
    traces, series = load_audit(cfg)
    return fleet_summary(traces, series, jobs=cfg.jobs)


def cmd_eval(cfg: RunConfig) -> Dict[str, Path]:
    report = _summary(cfg)
    write_resolved_config(cfg)
    out = cfg.paths.out_dir
    return {
        "report": write_report_csv(report, out / "report.csv"),
        "boxplot": write_boxplot_csv(report, out / "boxplot.csv"),
    }


def cmd_report(cfg: RunConfig) -> Dict[str, Path]:
    report = _summary(cfg)
    write_resolved_config(cfg)
    out = cfg.paths.out_dir
    paths = {"markdown": write_report_markdown(report, out / "report.md")}
    if cfg.write_svg:
        svg = write_boxplot_svg(report, out / "boxplot.svg")
        if svg is not None:
            paths["svg"] = svg
    return paths


def cmd_pipeline(cfg: RunConfig) -> Dict[str, Any]:
    """fleetgen, train, audit, eval and report in sequence"""
    results: Dict[str, Any] = {}
    stages = (("fleetgen", cmd_fleetgen), ("train", cmd_train), ("audit", cmd_audit),
              ("eval", cmd_eval), ("report", cmd_report))
    for name, stage in stages:
        logger.info("stage started", stage=name)
        results[name] = stage(cfg)
    return results


COMMANDS = {
    "fleetgen": cmd_fleetgen,
    "train": cmd_train,
    "audit": cmd_audit,
    "eval": cmd_eval,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}
