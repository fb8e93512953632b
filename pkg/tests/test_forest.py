from copy import deepcopy
from datetime import date, timedelta
from itertools import product

import numpy as np
import pytest

from src.core.errors import InvalidConfig, MissingArtifact, SingleClassData, WidthMismatch
from src.core.forest import (ForestConfig, auroc, choose_threshold, load_model, predict_proba,
                             predict_series, save_model, train_forest, youden_j)
from src.core.fleet import FleetConfig, generate_fleet
from src.core.preprocess import FeatureMatrix, build_feature_matrix, chronological_split


def _pair_auc(p, labels):
    pos = [a for a, l in zip(p, labels) if l]
    neg = [b for b, l in zip(p, labels) if not l]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in product(pos, neg))
    return wins / (len(pos) * len(neg))


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.random(n) < 0.3
    labels[:2] = [True, False]
    rows = rng.normal(0, 1, (n, 4))
    rows[labels, 0] += 4.0
    dates = [date(2020, 1, 1) + timedelta(days=i) for i in range(n)]
    return FeatureMatrix(rows, labels, "M1", dates)


def test_auroc_matches_pair_counting():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(2, 201))
        p = np.round(rng.random(n), 1)
        labels = rng.random(n) < 0.4
        labels[0], labels[1] = True, False
        assert auroc(p, labels) == pytest.approx(_pair_auc(p, labels), abs=1e-12)


def test_auroc_extremes():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5, 0.5], [0, 1]) == 0.5
    with pytest.raises(SingleClassData):
        auroc([0.1, 0.2], [1, 1])


def test_threshold_is_youden_optimal_with_ties_high():
    p = np.array([0.1, 0.4, 0.35, 0.8])
    labels = np.array([0, 0, 1, 1], dtype=bool)
    # J = 0.5 at both 0.225 and 0.6; the higher cut wins
    assert choose_threshold(p, labels) == pytest.approx(0.6)
    assert youden_j(p, labels, 0.6) == pytest.approx(0.5)


def test_threshold_f1_criterion():
    p = np.array([0.1, 0.2, 0.3, 0.7, 0.9])
    labels = np.array([0, 0, 1, 1, 1], dtype=bool)
    assert choose_threshold(p, labels, "f1") == pytest.approx(0.25)


def test_trained_forest_separates_classes():
    fm = _separable()
    model = train_forest(fm, ForestConfig(n_trees=60, mtry=2, seed=1))
    p = predict_proba(model, fm.rows)
    assert np.all((p >= 0) & (p <= 1))
    assert auroc(p, fm.labels) > 0.95
    assert 0.0 <= model.threshold <= 1.0
    assert model.train_meta["oob_auroc"] > 0.9
    assert len(model.trees) == 60


def test_forest_is_deterministic_for_seed():
    fm = _separable()
    a = train_forest(fm, ForestConfig(n_trees=20, mtry=2, seed=4))
    b = train_forest(fm, ForestConfig(n_trees=20, mtry=2, seed=4))
    np.testing.assert_array_equal(predict_proba(a, fm.rows), predict_proba(b, fm.rows))
    assert a.threshold == b.threshold


def test_mtry_capped_with_warning():
    fm = _separable()
    with pytest.warns(UserWarning):
        model = train_forest(fm, ForestConfig(n_trees=10, mtry=17))
    assert model.train_meta["mtry_effective"] == 4


def test_forest_errors():
    fm = _separable()
    with pytest.raises(InvalidConfig):
        train_forest(fm, ForestConfig(mtry=0))
    single = FeatureMatrix(fm.rows, np.zeros(len(fm), bool), "M1", fm.dates)
    with pytest.raises(SingleClassData):
        train_forest(single, ForestConfig(n_trees=5))
    model = train_forest(fm, ForestConfig(n_trees=5, mtry=2))
    with pytest.raises(WidthMismatch):
        predict_proba(model, np.zeros((3, 5)))


def test_model_artifact_round_trip(tmp_path):
    fm = _separable()
    model = train_forest(fm, ForestConfig(n_trees=15, mtry=2, seed=2))
    path = save_model(model, tmp_path / "forest.model")
    loaded = load_model(path)
    assert loaded.threshold == model.threshold
    np.testing.assert_array_equal(predict_series(loaded, fm).p, predict_series(model, fm).p)
    with pytest.raises(MissingArtifact):
        load_model(tmp_path / "nothing.model")


def test_calibration_fold_sets_threshold():
    fm = _separable(n=300, seed=5)
    fit, calibration = fm.take(np.arange(200)), fm.take(np.arange(200, 300))
    model = train_forest(fit, ForestConfig(n_trees=40, mtry=2, seed=3), calibration=calibration)
    meta = model.train_meta
    assert meta["threshold_source"] == "calibration"
    assert meta["n_calibration"] == 100
    p_cal = predict_proba(model, calibration.rows)
    assert model.threshold == pytest.approx(choose_threshold(p_cal, calibration.labels))
    assert meta["calibration_auroc"] == pytest.approx(auroc(p_cal, calibration.labels))


def test_single_class_calibration_falls_back_to_oob():
    fm = _separable(n=300, seed=5)
    fit = fm.take(np.arange(200))
    negatives = fm.take(np.flatnonzero(~fm.labels[200:]) + 200)
    model = train_forest(fit, ForestConfig(n_trees=40, mtry=2, seed=3), calibration=negatives)
    assert model.train_meta["threshold_source"] == "oob"
    assert model.train_meta["calibration_auroc"] is None
    with pytest.raises(WidthMismatch):
        train_forest(fit, ForestConfig(n_trees=5, mtry=2),
                     calibration=FeatureMatrix(np.zeros((3, 5)), [0, 1, 0], "M1", fit.dates[:3]))


def test_prediction_ignores_tree_order():
    fm = _separable()
    model = train_forest(fm, ForestConfig(n_trees=30, mtry=2, seed=6))
    shuffled = deepcopy(model)
    shuffled.estimator.estimators_ = list(reversed(shuffled.estimator.estimators_))
    points = np.random.default_rng(1).normal(0, 2, (50, 4))
    np.testing.assert_allclose(predict_proba(shuffled, points), predict_proba(model, points),
                               rtol=0, atol=1e-12)


def test_noise_features_give_uninformative_probabilities():
    rng = np.random.default_rng(8)
    n = 400
    labels = np.zeros(n, dtype=bool)
    labels[rng.permutation(n)[:n // 2]] = True
    dates = [date(2020, 1, 1) + timedelta(days=i) for i in range(n)]
    fm = FeatureMatrix(rng.normal(size=(n, 4)), labels, "M1", dates)
    model = train_forest(fm, ForestConfig(n_trees=500, mtry=2, seed=2))
    p = predict_proba(model, rng.normal(size=(300, 4)))
    assert 0.4 <= p.mean() <= 0.6


def test_separable_points_are_classified_exactly():
    rng = np.random.default_rng(9)
    labels = np.arange(20) >= 10
    rows = np.column_stack([np.where(labels, 1.0, -1.0), rng.normal(size=20)])
    dates = [date(2020, 1, 1) + timedelta(days=i) for i in range(20)]
    fm = FeatureMatrix(rows, labels, "M1", dates)
    model = train_forest(fm, ForestConfig(n_trees=50, mtry=2, seed=0))
    assert np.array_equal(predict_proba(model, rows) > 0.5, labels)
    fresh = np.column_stack([np.where(labels, 1.5, -1.5), rng.normal(size=20)])
    assert np.array_equal(predict_proba(model, fresh) > 0.5, labels)


def test_held_out_auroc_beats_permutation_null():
    fleet = generate_fleet(FleetConfig(n_machines=2, n_days=600, positive_rate=0.05,
                                       degradation_gain=4.0, seed=3))
    splits = [chronological_split(build_feature_matrix(s)) for s in fleet]
    train = FeatureMatrix.concat([s[0] for s in splits])
    test = FeatureMatrix.concat([s[1] for s in splits])
    model = train_forest(train, ForestConfig(n_trees=100, mtry=17, seed=1))
    p = predict_proba(model, test.rows)
    observed = auroc(p, test.labels)

    rng = np.random.default_rng(0)
    null = np.array([auroc(p, rng.permutation(test.labels)) for _ in range(200)])
    assert observed > null.mean() + 3 * null.std()
