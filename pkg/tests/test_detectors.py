import json

import numpy as np
import pytest
from scipy.stats import chi2

from src.core.detectors import (McdModel, RbfParams, c_step, chi2_cutoff, mahalanobis,
                                mahalanobis_many, mcd_fit, mcd_score, median_sigma, model_to_json,
                                ocsvm_fit, ocsvm_raw, ocsvm_score, rbf_gram, rbf_kernel,
                                reweight_factor)
from src.core.errors import (DegenerateData, DegenerateSubset, DimensionMismatch, NonPositiveSigma,
                             NotConverged, SingularCovariance, TooFewSamples)


# kernel / one-class SVM

def test_rbf_kernel_values():
    assert rbf_kernel([1.0, 2.0], [1.0, 2.0], 0.7) == 1.0
    assert rbf_kernel([0.0], [2.0], 1.0) == pytest.approx(np.exp(-2.0))
    with pytest.raises(NonPositiveSigma):
        rbf_kernel([0.0], [1.0], 0.0)
    with pytest.raises(DimensionMismatch):
        rbf_kernel([0.0, 1.0], [1.0], 1.0)


def test_median_sigma_ignores_coincident_points():
    assert median_sigma([[0.0], [0.0], [3.0]]) == 3.0
    with pytest.raises(DegenerateData):
        median_sigma([[1.0, 1.0]] * 4)


def _project_capped_simplex(v, cap):
    """Euclidean projection onto {0 <= a <= cap, sum a = 1}

    clip(v - tau, 0, cap) sums to a piecewise-linear, non-increasing function
    of tau with kinks at v and v - cap; solve it exactly between two kinks.
    """
    kinks = np.sort(np.r_[v, v - cap])
    mass = np.clip(v[None, :] - kinks[:, None], 0.0, cap).sum(axis=1)
    k = np.flatnonzero(mass >= 1.0)[-1]
    if mass[k] == mass[k + 1]:
        tau = kinks[k]
    else:
        tau = kinks[k] + (mass[k] - 1.0) * (kinks[k + 1] - kinks[k]) / (mass[k] - mass[k + 1])
    return np.clip(v - tau, 0.0, cap)


def _oracle_objective(Q, cap, iters=5000):
    """Accelerated projected gradient on 1/2 a'Qa over the capped simplex"""
    n = len(Q)
    step = 1.0 / np.linalg.eigvalsh(Q)[-1]
    a = _project_capped_simplex(np.full(n, 1.0 / n), cap)
    y, t = a.copy(), 1.0
    for _ in range(iters):
        a_next = _project_capped_simplex(y - step * (Q @ y), cap)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = a_next + ((t - 1.0) / t_next) * (a_next - a)
        a, t = a_next, t_next
    return 0.5 * a @ Q @ a


def test_ocsvm_dual_matches_projected_gradient_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(3, 21))
        d = int(rng.integers(1, 4))
        X = rng.normal(size=(n, d))
        nu = float(rng.uniform(0.1, 0.9))
        model = ocsvm_fit(X, RbfParams(nu=nu))
        assert model.kkt_violation < 1e-6
        Q = rbf_gram(X, X, model.params.sigma)
        assert model.objective == pytest.approx(_oracle_objective(Q, 1.0 / (nu * n)), abs=1e-4)


def test_ocsvm_constraints_hold():
    X = np.random.default_rng(1).normal(size=(40, 2))
    model = ocsvm_fit(X, RbfParams(nu=0.3))
    cap = 1.0 / (0.3 * 40)
    assert model.alphas.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(model.alphas > 0)
    assert np.all(model.alphas <= cap + 1e-15)


def test_ocsvm_kkt_residual_below_tol_on_random_instances():
    rng = np.random.default_rng(13)
    for _ in range(100):
        n = int(rng.integers(2, 101))
        d = int(rng.integers(1, 4))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10.0)
        nu = float(rng.uniform(0.05, 1.0))
        model = ocsvm_fit(X, RbfParams(nu=nu), tol=1e-6)
        assert model.kkt_violation < 1e-6


def test_ocsvm_translation_equivariant():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(40, 2))
    points = rng.normal(scale=2.0, size=(15, 2))
    shift = np.array([5.0, -3.0])
    # a tight tolerance keeps both solves at the same optimum
    a = ocsvm_fit(X, RbfParams(nu=0.3), tol=1e-11)
    b = ocsvm_fit(X + shift, RbfParams(nu=0.3), tol=1e-11)
    assert b.params.sigma == pytest.approx(a.params.sigma, rel=1e-12)
    np.testing.assert_allclose(ocsvm_raw(b, points + shift), ocsvm_raw(a, points), rtol=0, atol=1e-9)
    np.testing.assert_allclose(ocsvm_raw(b, X + shift), ocsvm_raw(a, X), rtol=0, atol=1e-9)


@pytest.mark.parametrize("nu", [0.1, 0.3, 0.5])
def test_nu_bounds_outliers_and_support_vectors(nu):
    n = 200
    for seed in range(20):
        X = np.random.default_rng(seed).normal(size=(n, 2))
        model = ocsvm_fit(X, RbfParams(nu=nu))
        anomalous = np.mean(ocsvm_raw(model, X) > model.tol)
        assert anomalous <= nu + 2.0 / n
        assert len(model.alphas) / n >= nu - 2.0 / n


def test_margin_support_vectors_score_zero():
    X = np.random.default_rng(2).normal(size=(60, 2))
    model = ocsvm_fit(X, RbfParams(nu=0.4))
    free = model.alphas < model.upper_bound
    assert free.any()
    for sv in model.support_vectors[free]:
        assert abs(ocsvm_score(model, sv).raw) <= 1e-5


def test_far_point_scores_higher_than_centre():
    X = np.random.default_rng(3).normal(size=(50, 2))
    model = ocsvm_fit(X, RbfParams(nu=0.2))
    assert ocsvm_score(model, [8.0, 8.0]).raw > ocsvm_score(model, [0.0, 0.0]).raw
    assert ocsvm_score(model, [8.0, 8.0]).raw > 0


def test_ocsvm_errors():
    with pytest.raises(DegenerateData):
        ocsvm_fit(np.ones((5, 2)))
    with pytest.raises(TooFewSamples):
        ocsvm_fit(np.ones((1, 2)))
    X = np.random.default_rng(4).normal(size=(30, 2))
    with pytest.raises(NotConverged) as info:
        ocsvm_fit(X, RbfParams(nu=0.5), max_iter=1)
    assert info.value.kkt_violation > 1e-6
    assert info.value.model is not None
    model = ocsvm_fit(X)
    with pytest.raises(DimensionMismatch):
        ocsvm_score(model, [1.0, 2.0, 3.0])


# Mahalanobis / MCD

def test_mahalanobis_identity_is_euclidean():
    assert mahalanobis([3.0, 4.0], [0.0, 0.0], np.eye(2)) == 5.0


def test_mahalanobis_matches_explicit_inverse():
    rng = np.random.default_rng(5)
    for _ in range(100):
        d = int(rng.integers(1, 7))
        A = rng.normal(size=(d, d))
        S = A @ A.T + d * np.eye(d)
        m = rng.normal(size=d)
        x = rng.normal(size=d) * 3
        diff = x - m
        brute = np.sqrt(diff @ np.linalg.inv(S) @ diff)
        assert mahalanobis(x, m, S) == pytest.approx(brute, rel=1e-9, abs=1e-12)


def test_mahalanobis_many_matches_scalar_form():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(10, 3))
    S = np.diag([1.0, 2.0, 3.0])
    many = mahalanobis_many(X, np.zeros(3), S)
    for row, value in zip(X, many):
        assert value == pytest.approx(mahalanobis(row, np.zeros(3), S), rel=1e-12)


def test_singular_covariance_rejected():
    with pytest.raises(SingularCovariance):
        mahalanobis([1.0, 1.0], [0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularCovariance):
        mahalanobis([1.0, 1.0], [0.0, 0.0], [[1.0, 0.0], [0.0, 1e-14]])


def test_chi2_cutoff_value():
    assert chi2_cutoff(2) == pytest.approx(2.716203, abs=1e-5)
    assert chi2_cutoff(1) == pytest.approx(2.241403, abs=1e-5)


def _contaminated(seed=0, n=500, frac=0.1):
    rng = np.random.default_rng(seed)
    n_out = int(n * frac)
    inliers = rng.normal(size=(n - n_out, 2))
    angles = rng.uniform(0, 2 * np.pi, n_out)
    outliers = 10.0 * np.c_[np.cos(angles), np.sin(angles)] + rng.normal(scale=0.1, size=(n_out, 2))
    return np.vstack([inliers, outliers]), n - n_out


def test_mcd_flags_injected_outliers():
    X, n_in = _contaminated()
    model = mcd_fit(X, seed=0)
    rd = mahalanobis_many(X[n_in:], model.location, model.scatter)
    assert np.mean(rd > model.cutoff) >= 0.95
    assert model.cutoff == pytest.approx(np.sqrt(7.377759), abs=1e-5)


def test_mcd_determinant_traces_never_increase():
    X, _ = _contaminated(seed=1)
    model = mcd_fit(X, seed=3, n_starts=20)
    assert len(model.det_traces) == 20
    for trace in model.det_traces:
        assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_mcd_consistent_on_clean_gaussian():
    X = np.random.default_rng(7).normal(size=(500, 2))
    model = mcd_fit(X, seed=1)
    assert np.linalg.norm(model.location) <= 0.15
    eig = np.linalg.eigvalsh(model.scatter)
    assert 0.7 <= eig[0] and eig[-1] <= 1.4
    assert model.correction > 1.0
    assert 0.9 * len(X) <= model.n_reweighted < len(X)


def test_mcd_reweighting_drops_outliers_from_the_fit():
    X, n_in = _contaminated(seed=4)
    model = mcd_fit(X, seed=0)
    assert model.n_reweighted <= n_in
    np.testing.assert_allclose(model.location, X[:n_in].mean(axis=0), atol=0.1)
    np.testing.assert_allclose(model.raw_location, model.location, atol=0.3)
    assert reweight_factor(2) == pytest.approx(0.975 / chi2.cdf(chi2.ppf(0.975, 2), 4))


def test_mcd_translation_equivariant():
    X = np.random.default_rng(8).normal(size=(80, 2))
    shift = np.array([5.0, -3.0])
    a = mcd_fit(X, seed=2)
    b = mcd_fit(X + shift, seed=2)
    np.testing.assert_allclose(b.location, a.location + shift, atol=1e-9)
    np.testing.assert_allclose(b.scatter, a.scatter, atol=1e-9)


def test_mcd_full_subset_is_classical():
    X = np.random.default_rng(9).normal(size=(30, 2))
    model = mcd_fit(X, h=30)
    np.testing.assert_allclose(model.location, X.mean(axis=0))
    np.testing.assert_allclose(model.scatter, np.cov(X, rowvar=False, bias=True))
    assert model.correction == 1.0


def test_c_step_does_not_increase_determinant():
    X, _ = _contaminated(seed=2, n=200)
    subset = np.arange(101)
    S0 = np.cov(X[subset], rowvar=False, bias=True)
    new, mu, S, det = c_step(X, subset, 101)
    assert len(new) == 101
    assert det <= np.linalg.det(S0) + 1e-12
    assert det == pytest.approx(np.linalg.det(S))


def test_mcd_errors():
    with pytest.raises(TooFewSamples):
        mcd_fit(np.random.default_rng(0).normal(size=(3, 2)))
    with pytest.raises(DegenerateSubset):
        mcd_fit(np.ones((20, 2)))


def test_mcd_one_dimensional_scores():
    x = np.r_[np.random.default_rng(10).normal(size=40), 25.0]
    model = mcd_fit(x[:, None], seed=0)
    assert mcd_score(model, [25.0]).raw > model.cutoff
    assert mcd_score(model, [0.0]).raw < model.cutoff


def test_model_to_json_is_serialisable():
    X = np.random.default_rng(11).normal(size=(20, 2))
    for model in (ocsvm_fit(X), mcd_fit(X, n_starts=5)):
        dumped = json.dumps(model_to_json(model))
        assert json.loads(dumped)["detector"] in ("ocsvm", "mcd")
    assert isinstance(mcd_fit(X, n_starts=5), McdModel)
