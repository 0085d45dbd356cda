"""2-Wasserstein distance between empirical measures.

Exact in 1-D (quantile coupling), exact by linear assignment for moderate n,
sliced for large n, and the Bures-Wasserstein formula for Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import rng as _rng

ASSIGNMENT_CAP = 4096
AUTO_ASSIGNMENT_MAX = 1024
N_BOOTSTRAP = 32


class W2Error(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud; weights default to uniform."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise W2Error(f"points must be a nonempty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise W2Error("points must be finite")
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.array(self.weights, dtype=float)
            if w.shape != (pts.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise W2Error("weights must be nonnegative, one per point, and sum to 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        c = self.points - self.mean()
        return (c * self.weights[:, None]).T @ c


@dataclass(frozen=True)
class W2Estimate:
    value: float
    method: str
    stderr: float | None = None

    def __post_init__(self):
        if not self.value >= 0:
            raise W2Error(f"W2 value must be nonnegative, got {self.value}")


def _measure(a) -> EmpiricalMeasure:
    return a if isinstance(a, EmpiricalMeasure) else EmpiricalMeasure(a)


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _measure(a), _measure(b)
    if a.n != b.n:
        raise W2Error(f"sample counts differ: {a.n} vs {b.n}")
    if a.dim != b.dim:
        raise W2Error(f"dimensions differ: {a.dim} vs {b.dim}")
    if not (a.uniform and b.uniform):
        raise W2Error("exact and sliced estimators need uniform weights")
    return a.points, b.points


def _percentile_se(values: np.ndarray) -> float:
    lo, hi = np.percentile(values, [15.865525393145708, 84.13447460685429])
    return float(0.5 * (hi - lo))


def _bootstrap(fn, A, B, n_boot, seed) -> float | None:
    if n_boot <= 0:
        return None
    gen = _rng.substream(seed, _rng.BOOTSTRAP)
    n = A.shape[0]
    vals = np.empty(n_boot)
    for i in range(n_boot):
        vals[i] = fn(A[gen.integers(0, n, n)], B[gen.integers(0, n, n)])
    return _percentile_se(vals)


def _w2_1d(A, B) -> float:
    return float(np.sqrt(np.mean((np.sort(A[:, 0]) - np.sort(B[:, 0])) ** 2)))


def w2_exact_1d(a, b, *, bootstrap: int = N_BOOTSTRAP, seed: int = 0) -> W2Estimate:
    """Quantile coupling: sort both samples and match order statistics."""
    A, B = _paired(a, b)
    if A.shape[1] != 1:
        raise W2Error(f"w2_exact_1d needs d = 1, got d = {A.shape[1]}")
    return W2Estimate(_w2_1d(A, B), "exact1d", _bootstrap(_w2_1d, A, B, bootstrap, seed))


def _lexsorted(P: np.ndarray) -> np.ndarray:
    return P[np.lexsort(P.T[::-1])]


def _w2_assignment(A, B) -> float:
    A, B = _lexsorted(A), _lexsorted(B)
    C = cdist(A, B, "sqeuclidean")
    r, c = linear_sum_assignment(C)
    return float(np.sqrt(max(C[r, c].mean(), 0.0)))


def w2_exact_assignment(a, b, *, bootstrap: int = 0, seed: int = 0) -> W2Estimate:
    """Exact discrete OT with squared-Euclidean cost via minimum-cost perfect matching."""
    A, B = _paired(a, b)
    if A.shape[0] > ASSIGNMENT_CAP:
        raise W2Error(
            f"n = {A.shape[0]} exceeds the assignment cap {ASSIGNMENT_CAP}; use w2_sliced instead"
        )
    return W2Estimate(_w2_assignment(A, B), "assignment", _bootstrap(_w2_assignment, A, B, bootstrap, seed))


def random_directions(d: int, n_projections: int, seed: int) -> np.ndarray:
    """Uniform unit vectors, shape (d, n_projections)."""
    g = _rng.substream(seed, _rng.PROJECTIONS).standard_normal((d, n_projections))
    return g / np.linalg.norm(g, axis=0, keepdims=True)


def sliced_squared_terms(a, b, n_projections: int = 128, seed: int = 0) -> np.ndarray:
    """Per-direction 1-D squared W2 of the projected clouds."""
    A, B = _paired(a, b)
    U = random_directions(A.shape[1], n_projections, seed)
    pa = np.sort(A @ U, axis=0)
    pb = np.sort(B @ U, axis=0)
    return np.mean((pa - pb) ** 2, axis=0)


def w2_sliced(a, b, n_projections: int = 128, seed: int = 0) -> W2Estimate:
    """sqrt of the mean over random directions of the 1-D squared W2.

    The standard error comes from the projection-wise spread, propagated
    through the square root.
    """
    if n_projections < 16:
        raise W2Error("n_projections must be at least 16")
    terms = sliced_squared_terms(a, b, n_projections, seed)
    sq = float(terms.mean())
    value = float(np.sqrt(sq))
    se_sq = float(terms.std(ddof=1) / np.sqrt(n_projections))
    stderr = se_sq / (2 * value) if value > 0 else 0.0
    return W2Estimate(value, f"sliced({n_projections})", stderr)


def _check_spd(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise W2Error(f"{name} must be symmetric")
    S = 0.5 * (S + S.T)
    if np.linalg.eigvalsh(S)[0] <= 0:
        raise W2Error(f"{name} must be positive definite")
    return S


def _sqrtm_spd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def w2_gaussian_closed_form(mean1, cov1, mean2, cov2) -> W2Estimate:
    """Bures-Wasserstein distance between N(mean1, cov1) and N(mean2, cov2)."""
    S1 = _check_spd(cov1, "cov1")
    S2 = _check_spd(cov2, "cov2")
    m1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    m2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    if not (m1.shape == m2.shape == S1.shape[:1] == S2.shape[:1]):
        raise W2Error("mean/covariance dimensions disagree")
    r1 = _sqrtm_spd(S1)
    cross = _sqrtm_spd(0.5 * (r1 @ S2 @ r1 + (r1 @ S2 @ r1).T))
    sq = float(np.sum((m1 - m2) ** 2) + np.trace(S1) + np.trace(S2) - 2.0 * np.trace(cross))
    return W2Estimate(float(np.sqrt(max(sq, 0.0))), "gaussian_closed_form", None)


def w2(a, b, method: str = "auto", *, n_projections: int = 128, seed: int = 0,
       bootstrap: int | None = None) -> W2Estimate:
    """Dispatch on ``method``: exact1d, assignment, sliced, or auto.

    ``auto`` picks exact1d in one dimension, assignment up to
    ``AUTO_ASSIGNMENT_MAX`` points, and sliced beyond.
    """
    a, b = _measure(a), _measure(b)
    if method == "auto":
        if a.dim == 1:
            method = "exact1d"
        elif a.n <= AUTO_ASSIGNMENT_MAX:
            method = "assignment"
        else:
            method = "sliced"
    if method == "exact1d":
        return w2_exact_1d(a, b, bootstrap=N_BOOTSTRAP if bootstrap is None else bootstrap, seed=seed)
    if method == "assignment":
        return w2_exact_assignment(a, b, bootstrap=N_BOOTSTRAP if bootstrap is None else bootstrap, seed=seed)
    if method == "sliced":
        return w2_sliced(a, b, n_projections, seed)
    raise W2Error(f"unknown W2 method {method!r}")
