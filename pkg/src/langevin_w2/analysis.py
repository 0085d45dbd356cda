"""Log-log rate fits and numerical checks of the convergence lemmas.

Every check returns a :class:`LemmaCheckReport` whose ``max_violation`` is the
worst signed margin ``lhs - rhs`` over all trials (negative means pass).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import rng as _rng
from .chain import step_transition
from .model import FiniteSumNoise, NoiseModel, Potential
from .wasserstein import EmpiricalMeasure, W2Estimate

ANALYTIC_TOL = 1e-8
FD_TOL = 1e-6


@dataclass(frozen=True)
class RateFit:
    log_x: tuple
    log_y: tuple
    slope: float
    intercept: float
    r_squared: float
    slope_ci: tuple

    @property
    def span_decades(self) -> float:
        return float((max(self.log_x) - min(self.log_x)) / math.log(10.0))

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "slope_ci": list(self.slope_ci),
            "log_x": list(self.log_x),
            "log_y": list(self.log_y),
        }


def fit_rate_slope(points: Iterable[tuple[float, W2Estimate | float]]) -> RateFit:
    """Ordinary least squares of log value on log scale, with a +-2 sigma slope interval.

    At least four points are required. The span of the scales is reported as
    ``span_decades`` rather than enforced, since an 8x grid is in common use.
    """
    pts = [(float(s), float(v.value if isinstance(v, W2Estimate) else v)) for s, v in points]
    if len(pts) < 4:
        raise ValueError("need at least 4 points for a rate fit")
    xs = np.array([s for s, _ in pts])
    ys = np.array([v for _, v in pts])
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("rate fit needs positive scales and values")
    lx, ly = np.log(xs), np.log(ys)
    X = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ np.array([slope, intercept])
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    syy = float(np.sum((ly - ly.mean()) ** 2))
    sse = float(resid @ resid)
    r2 = 1.0 if syy == 0 else float(min(max(1.0 - sse / syy, 0.0), 1.0))
    dof = len(pts) - 2
    se = math.sqrt(sse / dof / sxx) if dof > 0 and sxx > 0 else 0.0
    return RateFit(tuple(lx.tolist()), tuple(ly.tolist()), float(slope), float(intercept), r2,
                   (float(slope - 2 * se), float(slope + 2 * se)))


@dataclass
class LemmaCheckReport:
    lemma_id: str
    trials: int
    max_violation: float
    passed: bool
    tolerance: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LemmaCheckReport":
        return cls(**d)


def _report(lemma_id: str, margins, tol: float = 0.0, **details) -> LemmaCheckReport:
    margins = np.asarray(margins, dtype=float).ravel()
    worst = float(margins.max()) if margins.size else -math.inf
    return LemmaCheckReport(lemma_id, int(margins.size), worst, bool(worst <= tol), tol, details)


# ---------------------------------------------------------------------------
# contraction under synchronous coupling
# ---------------------------------------------------------------------------


def contraction_constants(potential: Potential, noise: NoiseModel) -> tuple[float, float]:
    """(m, L) governing the coupled step: per-component constants for SGD noise."""
    if isinstance(noise, FiniteSumNoise):
        return noise.spec.component_m, noise.spec.component_L
    return potential.m, potential.L


def check_contraction(potential: Potential, noise: NoiseModel, delta: float, n_pairs: int, steps: int,
                      seed: int, *, m: float | None = None) -> LemmaCheckReport:
    """Per-step squared-distance ratio of coupled pairs against 1 - m delta / 2.

    Pairs whose separation falls below a tenth of its starting size are
    rescaled back (keeping the first point), so every ratio is computed from
    well-conditioned differences.
    """
    m_true, L = contraction_constants(potential, noise)
    if delta > 1.0 / (2.0 * L) * (1 + 1e-12):
        raise ValueError(f"delta={delta} exceeds 1/(2L)={1 / (2 * L)}")
    m = m_true if m is None else float(m)
    bound = 1.0 - m * delta / 2.0
    gen = _rng.substream(seed, _rng.PAIRS)
    d = potential.dim
    x = 2.0 * gen.standard_normal((n_pairs, d))
    u = gen.standard_normal((n_pairs, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y = x + u
    worst = -math.inf
    ratio_min, ratio_max = math.inf, -math.inf
    for k in range(steps):
        eta = noise.draw(gen, n_pairs)
        before = np.sum((x - y) ** 2, axis=1)
        x = step_transition(potential, noise, delta, x, eta=eta, step=k + 1)
        y = step_transition(potential, noise, delta, y, eta=eta, step=k + 1)
        ratio = np.sum((x - y) ** 2, axis=1) / before
        worst = max(worst, float(np.max(ratio - bound)))
        ratio_min = min(ratio_min, float(ratio.min()))
        ratio_max = max(ratio_max, float(ratio.max()))
        sep = np.sqrt(np.sum((x - y) ** 2, axis=1))
        small = sep < 0.1
        if np.any(small):
            y[small] = x[small] + (y[small] - x[small]) / sep[small, None]
    return LemmaCheckReport(
        "discrete_contraction", n_pairs * steps, worst, worst <= 0.0, 0.0,
        {"bound": bound, "m": m, "delta": delta, "ratio_min": ratio_min, "ratio_max": ratio_max},
    )


# ---------------------------------------------------------------------------
# tails and moments of the invariant law
# ---------------------------------------------------------------------------


def subgaussian_tail_bound(t, m: float, c_sigma: float, d: int):
    return 8.0 * d * np.exp(-m * np.asarray(t, dtype=float) / (8.0 * c_sigma**2))


def check_subgaussian_tail(reference: EmpiricalMeasure, m: float, c_sigma: float, t_grid) -> LemmaCheckReport:
    """Empirical P(|x|^2 >= t) against 8 d exp(-m t / (8 c_sigma^2)) + 3 binomial stderr."""
    pts = reference.points if isinstance(reference, EmpiricalMeasure) else np.asarray(reference)
    n, d = pts.shape
    r2 = np.sum(pts**2, axis=1)
    t = np.asarray(t_grid, dtype=float)
    tail = np.array([(r2 >= ti).mean() for ti in t])
    se = np.sqrt(np.maximum(tail * (1 - tail), 1.0 / n) / n)
    bound = subgaussian_tail_bound(t, m, c_sigma, d)
    return _report("subgaussian_tail", tail - bound - 3 * se, 0.0,
                   t=t.tolist(), tail=tail.tolist(), bound=bound.tolist())


def moment_bound(k: int, m: float, c_sigma: float, d: int) -> float:
    """Envelope for E|x|^{2k}: max{(2^6 (k-1) c^2/m log(16 (k-1) c^2/m))^{k-1}, 128 k d c^2/m}."""
    r = c_sigma**2 / m
    first = 1.0 if k == 1 else max(64.0 * (k - 1) * r * math.log(16.0 * (k - 1) * r), 0.0) ** (k - 1)
    return max(first, 128.0 * k * d * r)


def check_moment_bound(reference: EmpiricalMeasure, m: float, c_sigma: float, ks=(1, 2, 3)) -> LemmaCheckReport:
    pts = reference.points if isinstance(reference, EmpiricalMeasure) else np.asarray(reference)
    n, d = pts.shape
    r2 = np.sum(pts**2, axis=1)
    margins, moments, bounds = [], [], []
    for k in ks:
        mk = r2**k
        est = float(mk.mean())
        se = float(mk.std(ddof=1) / math.sqrt(n))
        b = moment_bound(k, m, c_sigma, d)
        margins.append(est - 3 * se - b)
        moments.append(est)
        bounds.append(b)
    return _report("kth_moment_bound", margins, 0.0, ks=list(ks), moments=moments, bounds=bounds)


def gaussian_exponential_moment(cov, s: float) -> float:
    """E exp(s |x|^2) for x ~ N(0, cov); infinite unless 2 s lambda_max < 1."""
    lam = np.linalg.eigvalsh(np.asarray(cov, dtype=float))
    if 2 * s * lam.max() >= 1:
        return math.inf
    return float(np.prod(1.0 / np.sqrt(1.0 - 2.0 * s * lam)))


def check_exponential_moment(cov, m: float, c_sigma: float) -> LemmaCheckReport:
    """Closed-form E exp(m |x|^2 / (8 c_sigma^2)) <= 8 d for a Gaussian invariant law."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    val = gaussian_exponential_moment(cov, m / (8.0 * c_sigma**2))
    d = cov.shape[0]
    return _report("bounded_exponent", [val - 8.0 * d], 0.0, value=val, bound=8.0 * d)


def check_tail_second_moment(reference: EmpiricalMeasure, m: float, c_sigma: float, radii=None) -> LemmaCheckReport:
    """E[|x|^2 1{|x|^2 >= S}] <= 12 d exp(-m S / (16 c^2)) for admissible radii S."""
    pts = reference.points if isinstance(reference, EmpiricalMeasure) else np.asarray(reference)
    n, d = pts.shape
    r = c_sigma**2 / m
    s_min = 48.0 * r * max(math.log(16.0 * r), 1.0)
    radii = np.asarray([s_min * f for f in (1.0, 1.25, 1.5, 2.0)] if radii is None else radii, float)
    if np.any(radii < s_min):
        raise ValueError(f"radii must be at least {s_min}")
    r2 = np.sum(pts**2, axis=1)
    margins = []
    for S in radii:
        v = r2 * (r2 >= S)
        se = float(v.std(ddof=1) / math.sqrt(n))
        margins.append(float(v.mean()) - 3 * se - 12.0 * d * math.exp(-m * S / (16.0 * c_sigma**2)))
    return _report("bounded_variance_outside_radius", margins, 0.0, radii=radii.tolist())


# ---------------------------------------------------------------------------
# matrix and scalar inequalities
# ---------------------------------------------------------------------------


def _random_symmetric(gen, d: int, c: float) -> np.ndarray:
    M = gen.standard_normal((d, d))
    A = 0.5 * (M + M.T)
    nrm = np.linalg.norm(A, 2)
    return A * (c * gen.uniform(0.0, 1.0) / nrm) if nrm > 0 else A


def check_det_expansion(dims: Sequence[int], eps_grid: Sequence[float], trials: int, seed: int,
                        c: float = 1.0) -> LemmaCheckReport:
    """|det(I + eps A) - (1 + eps tr A + eps^2/2 (tr(A)^2 - tr(A^2)))| <= eps^3 c^3 d^3.

    ``eps_grid`` holds fractions of the admissible limit 1 / (2 c d).
    """
    gen = _rng.substream(seed, _rng.LEMMA, 1)
    margins = []
    for t in range(trials):
        d = int(dims[t % len(dims)])
        A = _random_symmetric(gen, d, c)
        trA, trA2 = np.trace(A), np.trace(A @ A)
        for frac in eps_grid:
            eps = float(frac) / (2 * c * d)
            det = np.linalg.det(np.eye(d) + eps * A)
            approx = 1 + eps * trA + 0.5 * eps**2 * (trA**2 - trA2)
            margins.append(abs(det - approx) - eps**3 * c**3 * d**3)
    return _report("determinant_taylor", margins, 0.0)


def check_trace_bound(dims: Sequence[int], trials: int, seed: int) -> LemmaCheckReport:
    """tr(A) <= d |A|_2 for random Gaussian (non-symmetric) matrices."""
    gen = _rng.substream(seed, _rng.LEMMA, 2)
    margins = []
    for t in range(trials):
        d = int(dims[t % len(dims)])
        A = gen.standard_normal((d, d))
        margins.append(np.trace(A) - d * np.linalg.norm(A, 2))
    return _report("trace_upper_bound", margins, 1e-9)


def xlogx_threshold(a: float, c: float) -> float:
    return 3.0 * max(math.log(a / c) / c, 0.0)


def check_xlogx(c_grid: Sequence[float], a_grid: Sequence[float], n_points: int = 200) -> LemmaCheckReport:
    """(1/c) log(a x) <= x on a grid of x above 3 max{(1/c) log(a/c), 0}."""
    rel = np.geomspace(1e-9, 1e6, n_points)
    margins = []
    for c in c_grid:
        for a in a_grid:
            if c <= 0 or a <= 0:
                raise ValueError("c and a must be positive")
            thr = xlogx_threshold(a, c)
            xs = thr * (1.0 + rel) if thr > 0 else rel
            margins.append(np.max(np.log(a * xs) / c - xs))
    return _report("xlogx_bound", margins, 0.0)


# ---------------------------------------------------------------------------
# noise derivative identity and Jacobian of the transition map
# ---------------------------------------------------------------------------


def _support(noise: NoiseModel, x):
    out = noise.outcomes(x)
    if out is None:
        raise ValueError(f"{noise.family} noise has no enumerable support")
    return out


def check_sigma_derivative(noise: NoiseModel, x_grid, h: float = 1e-4) -> LemmaCheckReport:
    """Divergence of the covariance (central differences) against E[G T + tr(G) T]."""
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    d = noise.dim
    margins = []
    for x in x_grid:
        fd = np.zeros(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            fd += (noise.covariance(x + e)[:, j] - noise.covariance(x - e)[:, j]) / (2 * h)
        if noise.homogeneous:
            exact = np.zeros(d)
        elif isinstance(noise, FiniteSumNoise):
            T, p = _support(noise, x)
            G = noise.jacobian(x, np.arange(noise.spec.S))
            exact = np.einsum("s,sij,sj->i", p, G, T) + np.einsum("s,s,si->i", p, np.trace(G, axis1=1, axis2=2), T)
        else:
            raise ValueError(f"{noise.family} noise has no analytic Jacobian")
        margins.append(np.max(np.abs(fd - exact)) - FD_TOL)
    return _report("sigma_derivative", margins, 0.0, h=h)


def check_jacobian_invertibility(potential: Potential, noise: NoiseModel, delta: float, x_grid) -> LemmaCheckReport:
    """Eigenvalues of I - delta hess U(x) + sqrt(2 delta) G_eta(x) all exceed 1/2."""
    L = potential.L
    if delta > 1.0 / (8.0 * L) * (1 + 1e-12):
        raise ValueError(f"delta={delta} exceeds 1/(8L)={1 / (8 * L)}")
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    d = potential.dim
    margins, lam_min = [], math.inf
    for x in x_grid:
        Hx = potential.hess(x)
        if isinstance(noise, FiniteSumNoise):
            Gs = noise.jacobian(x, np.arange(noise.spec.S))
        else:
            Gs = noise.jacobian(x)[None]
        for G in Gs:
            J = np.eye(d) - delta * Hx + math.sqrt(2 * delta) * G
            lam = np.linalg.eigvalsh(0.5 * (J + J.T))[0]
            lam_min = min(lam_min, float(lam))
            margins.append(0.5 - lam)
    # any margin of exactly 0 would mean an eigenvalue equal to 1/2, which fails
    rep = _report("F_invertible", margins, 0.0, lambda_min=lam_min, delta=delta)
    rep.passed = bool(rep.max_violation < 0.0)
    return rep


def check_one_step_displacement(potential: Potential, noise: NoiseModel, delta: float, n_samples: int,
                                seed: int = 0, x0=None) -> LemmaCheckReport:
    """|x' - x| <= 4 sqrt(delta L)(|x'| + 1) for forward steps x -> x' (bound at the arrival point).

    ``L`` is the effective constant max(potential L, noise norm^2) so that the
    noise satisfies |T| <= sqrt(L).
    """
    if not noise.homogeneous:
        raise ValueError("displacement bound needs position-independent noise")
    L = max(potential.L, noise.norm_bound**2)
    if delta > 1.0 / (16.0 * L) * (1 + 1e-12):
        raise ValueError(f"delta={delta} exceeds 1/(16L)={1 / (16 * L)}")
    gen = _rng.substream(seed, _rng.LEMMA, 3)
    d = potential.dim
    x = 3.0 * gen.standard_normal((n_samples, d)) if x0 is None else np.broadcast_to(x0, (n_samples, d))
    xn = step_transition(potential, noise, delta, x, gen)
    disp = np.linalg.norm(xn - x, axis=1)
    bound = 4.0 * math.sqrt(delta * L) * (np.linalg.norm(xn, axis=1) + 1.0)
    return _report("one_step_displacement", disp - bound, 0.0, L_effective=L, delta=delta,
                   violations=int(np.sum(disp > bound)))


# ---------------------------------------------------------------------------
# the stepsize schedule of the CLT sequence
# ---------------------------------------------------------------------------


def check_clt_schedule(k_max: int = 10**6, pairs: int = 2000, seed: int = 0) -> LemmaCheckReport:
    """|delta_k - 1/(2(k+1))| <= 1/k^2 for k >= 2 and |sum_a^b delta_i - log(b/a)/2| <= 2."""
    from .chain import StepSchedule

    deltas = StepSchedule("clt").values(k_max)  # deltas[k-1] = delta_k
    k = np.arange(1, k_max + 1, dtype=float)
    m1 = np.abs(deltas - 1.0 / (2 * (k + 1))) - 1.0 / k**2
    m1 = m1[1:]
    csum = np.concatenate([[0.0], np.cumsum(deltas)])
    gen = _rng.substream(seed, _rng.LEMMA, 4)
    a = gen.integers(1, k_max + 1, pairs)
    b = gen.integers(1, k_max + 1, pairs)
    a, b = np.minimum(a, b), np.maximum(a, b)
    s = csum[b] - csum[a - 1]
    m2 = np.abs(s - 0.5 * np.log(b / a)) - 2.0
    return _report("clt_schedule", np.concatenate([m1, m2]), 0.0, k_max=k_max)
