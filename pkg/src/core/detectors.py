#!/usr/bin/env python3
"""
Anomaly Detectors for PackAudit
One-class SVM (RBF kernel, dual solved by SMO pair updates) and
Minimum Covariance Determinant (FastMCD random starts + C-steps)
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.spatial.distance import cdist, pdist
from scipy.stats import chi2

from .errors import (DegenerateData, DegenerateSubset, DimensionMismatch, InvalidConfig,
                     NonPositiveSigma, NotConverged, SingularCovariance, TooFewSamples)
from ..utils.log import get_logger

logger = get_logger(__name__)

MAX_CONDITION = 1e12
CUTOFF_QUANTILE = 0.975


@dataclass
class RbfParams:
    """Kernel bandwidth (None = median heuristic) and the nu trade-off"""
    sigma: Optional[float] = None
    nu: float = 0.5

    def validate(self) -> "RbfParams":
        if self.sigma is not None and not self.sigma > 0:
            raise NonPositiveSigma(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.nu <= 1.0:
            raise InvalidConfig(f"nu must be in (0,1], got {self.nu}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class McdSettings:
    """FastMCD search settings (h None = (n + d + 1) // 2)"""
    h: Optional[int] = None
    n_starts: int = 50
    max_csteps: int = 100
    seed: int = 0

    def validate(self) -> "McdSettings":
        if not isinstance(self.n_starts, int) or self.n_starts < 1:
            raise InvalidConfig("n_starts must be a positive integer")
        if not isinstance(self.max_csteps, int) or self.max_csteps < 1:
            raise InvalidConfig("max_csteps must be a positive integer")
        if self.h is not None and (not isinstance(self.h, int) or self.h < 1):
            raise InvalidConfig("h must be a positive integer or null")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    params: RbfParams
    kkt_violation: float = 0.0
    n_iter: int = 0
    tol: float = 1e-6
    n_train: int = 0
    objective: float = 0.0

    @property
    def upper_bound(self) -> float:
        return 1.0 / (self.params.nu * self.n_train)


@dataclass
class McdModel:
    location: np.ndarray
    scatter: np.ndarray
    h: int
    correction: float
    cutoff: float
    raw_location: Optional[np.ndarray] = None
    raw_scatter: Optional[np.ndarray] = None
    n_reweighted: int = 0
    determinant: float = 0.0
    best_start: int = 0
    det_traces: List[List[float]] = field(default_factory=list)


@dataclass
class AnomalyScore:
    """raw: larger means more anomalous; normalized set by the audit stream"""
    raw: float
    normalized: Optional[float] = None

    def __post_init__(self):
        if self.normalized is not None and not 0.0 <= self.normalized <= 1.0:
            raise ValueError(f"normalized score {self.normalized} outside [0,1]")


def _as_matrix(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D data matrix, got shape {X.shape}")
    return X


def _as_vector(x, d: int) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if v.shape[0] != d:
        raise DimensionMismatch(f"expected dimension {d}, got {v.shape[0]}")
    return v


# RBF kernel / one-class SVM

def rbf_kernel(x, z, sigma: float) -> float:
    """exp(-||x - z||^2 / (2 sigma^2))"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if x.shape != z.shape:
        raise DimensionMismatch(f"dimension mismatch {x.shape} vs {z.shape}")
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    diff = x - z
    return float(np.exp(-(diff @ diff) / (2.0 * sigma ** 2)))


def rbf_gram(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma ** 2))


def median_sigma(data) -> float:
    """Median pairwise distance, ignoring coincident pairs"""
    X = _as_matrix(data)
    if len(X) < 2:
        raise TooFewSamples("median heuristic needs at least two points")
    dists = pdist(X)
    dists = dists[dists > 0]
    if len(dists) == 0:
        raise DegenerateData("all points are identical")
    return float(np.median(dists))


def dual_objective(alphas: np.ndarray, Q: np.ndarray) -> float:
    return float(0.5 * alphas @ Q @ alphas)


def ocsvm_fit(data, params: RbfParams = None, tol: float = 1e-6, max_iter: int = 100000) -> OcsvmModel:
    """
    Solve the normalised one-class SVM dual

        min 1/2 a'Qa   s.t.  0 <= a_i <= 1/(nu n),  sum a_i = 1

    by repeatedly moving mass inside the maximal KKT-violating pair.

    Args:
        data: n x d training matrix
        params: Kernel bandwidth and nu
        tol: Stop once the maximal KKT violation is below this
        max_iter: Pair-update budget

    Returns:
        OcsvmModel holding only the points with a_i > 0

    Raises:
        NotConverged: budget exhausted; the model is attached to the error
    """
    params = (params or RbfParams()).validate()
    X = _as_matrix(data)
    n = len(X)
    if n < 2:
        raise TooFewSamples("one-class SVM needs at least two points")
    if np.all(X == X[0]):
        raise DegenerateData("all points are identical")

    sigma = params.sigma if params.sigma is not None else median_sigma(X)
    resolved = RbfParams(sigma=sigma, nu=params.nu)
    C = 1.0 / (params.nu * n)
    Q = rbf_gram(X, X, sigma)

    alpha = np.zeros(n)
    k = min(n, int(np.floor(params.nu * n + 1e-9)))
    while k > 0 and k * C > 1.0 + 1e-12:
        k -= 1
    alpha[:k] = C
    if k < n:
        alpha[k] = min(C, max(0.0, 1.0 - k * C))
    G = Q @ alpha

    violation = 0.0
    n_iter = 0
    converged = False
    while True:
        up = alpha < C
        low = alpha > 0
        if not up.any() or not low.any():
            violation = 0.0
            converged = True
            break
        i = int(np.argmin(np.where(up, G, np.inf)))
        j = int(np.argmax(np.where(low, G, -np.inf)))
        violation = float(G[j] - G[i])
        if violation < tol:
            converged = True
            break
        if n_iter >= max_iter:
            break

        eta = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
        if eta <= 0:
            eta = 1e-12
        room_i, room_j = C - alpha[i], alpha[j]
        delta = min(violation / eta, room_i, room_j)
        alpha[i] += delta
        alpha[j] -= delta
        if delta == room_i:
            alpha[i] = C
        if delta == room_j:
            alpha[j] = 0.0
        G += delta * (Q[:, i] - Q[:, j])
        n_iter += 1

    sv = alpha > 0
    free = sv & (alpha < C)
    if free.any():
        rho = float(np.mean(G[free]))
    else:
        rho = float(np.median(G[sv]))

    model = OcsvmModel(
        support_vectors=X[sv].copy(),
        alphas=alpha[sv].copy(),
        rho=rho,
        params=resolved,
        kkt_violation=max(violation, 0.0),
        n_iter=n_iter,
        tol=tol,
        n_train=n,
        objective=dual_objective(alpha, Q),
    )
    if not converged:
        raise NotConverged(violation, model)
    return model


def ocsvm_raw(model: OcsvmModel, X) -> np.ndarray:
    """rho - sum a_i k(x_i, x) for every row of X"""
    X = _as_matrix(X)
    if X.shape[1] != model.support_vectors.shape[1]:
        raise DimensionMismatch(f"expected dimension {model.support_vectors.shape[1]}, got {X.shape[1]}")
    K = rbf_gram(X, model.support_vectors, model.params.sigma)
    return model.rho - K @ model.alphas


def ocsvm_score(model: OcsvmModel, x) -> AnomalyScore:
    """Sign-flipped decision value: positive outside the learned region"""
    v = _as_vector(x, model.support_vectors.shape[1])
    return AnomalyScore(raw=float(ocsvm_raw(model, v[None, :])[0]))


# Mahalanobis / MCD

def _cholesky_checked(cov: np.ndarray) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise SingularCovariance("covariance is not symmetric")
    eig = np.linalg.eigvalsh(cov)
    if not np.all(np.isfinite(eig)) or eig[0] <= 0 or eig[-1] / eig[0] > MAX_CONDITION:
        raise SingularCovariance("covariance is singular or its condition number exceeds 1e12")
    try:
        return cholesky(cov, lower=True)
    except LinAlgError:
        raise SingularCovariance("covariance is not positive definite")


def mahalanobis_many(X, mean, cov) -> np.ndarray:
    """Distances of every row of X, via a Cholesky factor of cov"""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    X = _as_matrix(X)
    if X.shape[1] != mean.shape[0]:
        raise DimensionMismatch(f"expected dimension {mean.shape[0]}, got {X.shape[1]}")
    L = _cholesky_checked(cov)
    if L.shape[0] != mean.shape[0]:
        raise DimensionMismatch("mean and covariance dimensions differ")
    z = solve_triangular(L, (X - mean).T, lower=True)
    return np.sqrt(np.sum(z * z, axis=0))


def mahalanobis(x, mean, cov) -> float:
    """sqrt((x - mean)' cov^-1 (x - mean)) without forming the inverse"""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    v = _as_vector(x, mean.shape[0])
    return float(mahalanobis_many(v[None, :], mean, cov)[0])


def chi2_cutoff(d: int, quantile: float = CUTOFF_QUANTILE) -> float:
    """sqrt of the chi-square quantile with d degrees of freedom"""
    return float(np.sqrt(chi2.ppf(quantile, d)))


def consistency_factor(h: int, n: int, d: int) -> float:
    """Rescales the h-subset covariance to be consistent at the normal model"""
    if h >= n:
        return 1.0
    q = h / n
    return float(q / chi2.cdf(chi2.ppf(q, d), d + 2))


def _mean_cov(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    centered = X - mu
    return mu, (centered.T @ centered) / len(X)


def _usable(S: np.ndarray) -> bool:
    eig = np.linalg.eigvalsh(S)
    return bool(eig[0] > 0 and eig[-1] / eig[0] <= MAX_CONDITION)


def c_step(data, subset, h: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """
    One concentration step: fit mean/cov on subset, keep the h closest points

    Returns:
        (new subset indices sorted, mean, cov, det) where mean/cov/det belong
        to the new subset
    """
    X = _as_matrix(data)
    subset = np.asarray(subset)
    mu, S = _mean_cov(X[subset])
    dist = mahalanobis_many(X, mu, S)
    new = np.sort(np.argsort(dist, kind="stable")[:h])
    mu_new, S_new = _mean_cov(X[new])
    return new, mu_new, S_new, float(np.linalg.det(S_new))


def _initial_subset(X: np.ndarray, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Random (d+1)-subset, grown until its covariance is non-singular"""
    n, d = X.shape
    order = rng.permutation(n)
    size = d + 1
    while size <= n:
        idx = order[:size]
        _, S = _mean_cov(X[idx])
        if _usable(S):
            return idx
        size += 1
    return None


def _concentrate(X: np.ndarray, start: np.ndarray, h: int, max_csteps: int):
    """C-steps from an h-subset until the determinant stops decreasing"""
    H = np.sort(start)
    mu, S = _mean_cov(X[H])
    if not _usable(S):
        return None
    det = float(np.linalg.det(S))
    trace = [det]
    for _ in range(max_csteps):
        try:
            dist = mahalanobis_many(X, mu, S)
        except SingularCovariance:
            break
        new = np.sort(np.argsort(dist, kind="stable")[:h])
        if np.array_equal(new, H):
            break
        mu_new, S_new = _mean_cov(X[new])
        if not _usable(S_new):
            break
        det_new = float(np.linalg.det(S_new))
        if det_new > det:
            break
        H, mu, S, det = new, mu_new, S_new, det_new
        trace.append(det)
        if det_new == trace[-2]:
            break
    return H, mu, S, det, trace


def mcd_fit(data, h: Optional[int] = None, n_starts: int = 50, seed: int = 0,
            max_csteps: int = 100) -> McdModel:
    """
    FastMCD robust location and scatter

    The raw h-subset estimate is rescaled for consistency, then reweighted:
    mean and covariance are refitted on the points whose robust distance is
    within the cutoff. With h = n the classical estimate is returned as is.

    Args:
        data: n x d matrix (n > d + 1)
        h: Subset size, default (n + d + 1) // 2
        n_starts: Random (d+1)-subset starts
        seed: Seed for the start subsets
        max_csteps: C-step cap per start

    Returns:
        McdModel with the reweighted location and scatter, the raw h-subset
        estimate and the sqrt chi2 cutoff
    """
    X = _as_matrix(data)
    n, d = X.shape
    if n <= d + 1:
        raise TooFewSamples(f"MCD needs n > d + 1, got n={n}, d={d}")
    h_min = (n + d + 1) // 2
    if h is None:
        h = h_min
    if not h_min <= h <= n:
        raise InvalidConfig(f"h must be in [{h_min}, {n}], got {h}")
    if n_starts < 1:
        raise InvalidConfig("n_starts must be positive")

    rng = np.random.default_rng(seed)
    traces: List[List[float]] = []
    seen: Dict[bytes, Any] = {}
    best = None
    best_start = -1

    for s in range(n_starts):
        idx = _initial_subset(X, rng)
        if idx is None:
            traces.append([])
            continue
        mu0, S0 = _mean_cov(X[idx])
        try:
            dist = mahalanobis_many(X, mu0, S0)
        except SingularCovariance:
            traces.append([])
            continue
        first = np.sort(np.argsort(dist, kind="stable")[:h])
        key = first.tobytes()
        if key not in seen:
            seen[key] = _concentrate(X, first, h, max_csteps)
        result = seen[key]
        if result is None:
            traces.append([])
            continue
        H, mu, S, det, trace = result
        traces.append(list(trace))
        if best is None or det < best[3]:
            best = (H, mu, S, det)
            best_start = s

    if best is None:
        raise DegenerateSubset("scatter is singular for every start")

    H, mu, S, det = best
    correction = consistency_factor(h, n, d)
    cutoff = chi2_cutoff(d)
    location, scatter = mu.copy(), S * correction
    kept = n
    if h < n:
        location, scatter, kept = _reweight(X, location, scatter, cutoff)
    return McdModel(
        location=location,
        scatter=scatter,
        h=h,
        correction=correction,
        cutoff=cutoff,
        raw_location=mu.copy(),
        raw_scatter=S.copy(),
        n_reweighted=kept,
        determinant=det,
        best_start=best_start,
        det_traces=traces,
    )


def reweight_factor(d: int, quantile: float = CUTOFF_QUANTILE) -> float:
    """Undoes the shrinkage of keeping only points inside the chi2 quantile"""
    return float(quantile / chi2.cdf(chi2.ppf(quantile, d), d + 2))


def _reweight(X: np.ndarray, mu: np.ndarray, S: np.ndarray,
              cutoff: float) -> Tuple[np.ndarray, np.ndarray, int]:
    """Refit mean and covariance on the points the raw estimate calls regular"""
    n, d = X.shape
    keep = mahalanobis_many(X, mu, S) <= cutoff
    if keep.sum() <= d + 1:
        return mu, S, n
    mu_rw, S_rw = _mean_cov(X[keep])
    S_rw = S_rw * reweight_factor(d)
    if not _usable(S_rw):
        return mu, S, n
    return mu_rw, S_rw, int(keep.sum())


def mcd_raw(model: McdModel, X) -> np.ndarray:
    return mahalanobis_many(X, model.location, model.scatter)


def mcd_score(model: McdModel, x) -> AnomalyScore:
    """Robust distance; anomalous when above model.cutoff"""
    v = _as_vector(x, len(model.location))
    return AnomalyScore(raw=float(mcd_raw(model, v[None, :])[0]))


def model_to_json(model) -> Dict[str, Any]:
    """Plain-JSON view of a fitted detector for debugging dumps"""
    def _plain(value):
        if isinstance(value, np.ndarray):
            return value.tolist()
        if isinstance(value, (np.floating, np.integer)):
            return value.item()
        if isinstance(value, RbfParams):
            return value.to_dict()
        if isinstance(value, list):
            return [_plain(v) for v in value]
        return value

    kind = "ocsvm" if isinstance(model, OcsvmModel) else "mcd"
    body = {name: _plain(getattr(model, name)) for name in model.__dataclass_fields__}
    return {"detector": kind, **body}
