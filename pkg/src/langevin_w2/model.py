"""Potentials and noise maps for Langevin-like iterations.

All objects here are immutable. Array-valued methods accept a single point of
shape ``(d,)`` or a batch of shape ``(n, d)`` and return matching shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

SYM_TOL = 1e-12


class ModelError(ValueError):
    """Invalid potential or noise specification."""


def _as_spd(matrix, name="A") -> np.ndarray:
    A = np.array(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ModelError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, atol=SYM_TOL * max(1.0, np.abs(A).max())):
        raise ModelError(f"{name} is not symmetric")
    A = 0.5 * (A + A.T)
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= 0:
        raise ModelError(f"{name} is not positive definite (min eigenvalue {eig[0]:.3g})")
    return A


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


class Potential:
    """Strongly convex potential U with gradient and Hessian.

    Attributes ``m`` and ``L`` bound the Hessian spectrum: ``m I <= hess <= L I``.
    """

    dim: int
    m: float
    L: float
    kind: str

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class QuadraticPotential(Potential):
    """U(x) = x^T A x / 2 for symmetric positive definite A."""

    A: np.ndarray
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        A = _as_spd(self.A)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> float:
        return float(np.linalg.eigvalsh(self.A)[0])

    @property
    def L(self) -> float:
        return float(np.linalg.eigvalsh(self.A)[-1])

    @property
    def third_derivative_bound(self) -> float:
        return 0.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.A, x)

    def grad(self, x):
        return np.asarray(x, dtype=float) @ self.A

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape).copy()

    def to_config(self) -> dict:
        return {"kind": "quadratic", "matrix": self.A.tolist()}


@dataclass(frozen=True, eq=False)
class LogCoshPotential(Potential):
    """U(x) = |x|^2 / 2 + alpha * sum_i log cosh(x_i), with 0 < alpha <= 1.

    The Hessian is ``I + alpha diag(sech^2 x)`` so ``m = 1`` and ``L = 1 + alpha``.
    The third derivative ``-2 alpha sech^2 tanh`` is bounded by ``2 alpha``
    (a looser recorded constant; the exact sup is ``4 alpha / (3 sqrt 3)``).
    """

    dim: int
    alpha: float
    kind: str = field(default="logcosh", init=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ModelError(f"dim must be a positive integer, got {self.dim}")
        if not (0.0 < self.alpha <= 1.0):
            raise ModelError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def m(self) -> float:
        return 1.0

    @property
    def L(self) -> float:
        return 1.0 + self.alpha

    @property
    def third_derivative_bound(self) -> float:
        return 2.0 * self.alpha

    def value(self, x):
        x = np.asarray(x, dtype=float)
        # log cosh(t) = |t| + log1p(exp(-2|t|)) - log 2, stable for large |t|
        a = np.abs(x)
        lc = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
        return 0.5 * np.sum(x * x, axis=-1) + self.alpha * np.sum(lc, axis=-1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.alpha * np.tanh(x)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        diag = 1.0 + self.alpha / np.cosh(x) ** 2
        out = np.zeros(x.shape + (x.shape[-1],))
        idx = np.arange(x.shape[-1])
        out[..., idx, idx] = diag
        return out

    def to_config(self) -> dict:
        return {"kind": "logcosh", "dim": self.dim, "alpha": self.alpha}


def make_quadratic_potential(A) -> QuadraticPotential:
    return QuadraticPotential(np.asarray(A, dtype=float))


def make_logcosh_potential(d: int, alpha: float) -> LogCoshPotential:
    return LogCoshPotential(d, float(alpha))


# ---------------------------------------------------------------------------
# Finite-sum components
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FiniteSumSpec:
    """Quadratic components H_i(w) = (w - b_i)^T A_i (w - b_i) / 2.

    The offsets satisfy ``sum_i A_i b_i = 0`` so that the mean gradient
    vanishes at the origin.
    """

    hessians: np.ndarray  # (S, d, d)
    offsets: np.ndarray  # (S, d)
    seed: int | None = None

    def __post_init__(self):
        H = np.array(self.hessians, dtype=float)
        b = np.array(self.offsets, dtype=float)
        if H.ndim != 3 or H.shape[0] == 0:
            raise ModelError("finite sum needs at least one component")
        if b.shape != H.shape[:2]:
            raise ModelError(f"offsets shape {b.shape} does not match hessians {H.shape}")
        for i, Hi in enumerate(H):
            H[i] = _as_spd(Hi, name=f"A_{i}")
        H.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "hessians", H)
        object.__setattr__(self, "offsets", b)

    @property
    def S(self) -> int:
        return self.hessians.shape[0]

    @property
    def dim(self) -> int:
        return self.hessians.shape[1]

    @property
    def mean_hessian(self) -> np.ndarray:
        return self.hessians.mean(axis=0)

    @property
    def anchors(self) -> np.ndarray:
        """Vectors A_i b_i, shape (S, d)."""
        return np.einsum("sij,sj->si", self.hessians, self.offsets)

    @property
    def component_m(self) -> float:
        return float(min(np.linalg.eigvalsh(Hi)[0] for Hi in self.hessians))

    @property
    def component_L(self) -> float:
        return float(max(np.linalg.eigvalsh(Hi)[-1] for Hi in self.hessians))

    def component_grads(self, w):
        """All component gradients at w, shape (..., S, d)."""
        w = np.asarray(w, dtype=float)
        return np.einsum("sij,...j->...si", self.hessians, w) - self.anchors

    def mean_grad(self, w):
        w = np.asarray(w, dtype=float)
        return w @ self.mean_hessian - self.anchors.mean(axis=0)

    def potential(self) -> QuadraticPotential:
        """Rescaled mean potential U(x) = H(sqrt(delta) x) / delta (delta-free here)."""
        return QuadraticPotential(self.mean_hessian)

    def to_config(self) -> dict:
        return {"hessians": self.hessians.tolist(), "offsets": self.offsets.tolist()}


def random_quadratic_components(
    S: int, d: int, seed: int, eig_range=(1.0, 2.0), offset_scale: float = 1.0
) -> FiniteSumSpec:
    """Random SPD quadratic components with spectra in ``eig_range``."""
    if S < 1:
        raise ModelError("S must be at least 1")
    lo, hi = eig_range
    if not 0 < lo <= hi:
        raise ModelError(f"bad eigenvalue range {eig_range}")
    rng = np.random.default_rng(seed)
    H = np.empty((S, d, d))
    for i in range(S):
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        H[i] = (Q * rng.uniform(lo, hi, d)) @ Q.T
        H[i] = 0.5 * (H[i] + H[i].T)
    b = offset_scale * rng.standard_normal((S, d))
    c = np.einsum("sij,sj->i", H, b) / S
    b = b - np.linalg.solve(H, np.broadcast_to(c, (S, d))[..., None])[..., 0]
    return FiniteSumSpec(H, b, seed=seed)


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------


class NoiseModel:
    """Zero-mean noise map T_eta(x).

    Randomness is split from the map: :meth:`draw` produces outcomes ``eta``
    from a generator and :meth:`apply` evaluates ``T_eta(x)``. Sharing ``eta``
    between two states gives a synchronous coupling.
    """

    dim: int
    family: str
    homogeneous: bool

    def draw(self, rng: np.random.Generator, n: int):
        raise NotImplementedError

    def apply(self, x, eta):
        raise NotImplementedError

    def sample(self, x, rng: np.random.Generator):
        x = np.asarray(x, dtype=float)
        n = 1 if x.ndim == 1 else x.shape[0]
        eta = self.draw(rng, n)
        out = self.apply(x if x.ndim > 1 else x[None], eta)
        return out[0] if x.ndim == 1 else out

    def covariance(self, x):
        raise NotImplementedError

    def jacobian(self, x, eta):
        """G_eta(x) = dT_eta/dx, shape (..., d, d)."""
        raise NotImplementedError

    def outcomes(self, x):
        """Finite support at x: (values (K, d), probabilities (K,)), or None."""
        return None

    @property
    def c_sigma(self) -> float:
        raise NotImplementedError

    @property
    def norm_bound(self) -> float:
        """Almost-sure bound on |T_eta| (homogeneous families)."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class RademacherNoise(NoiseModel):
    """Independent +-1 coordinates: covariance I, norm exactly sqrt(d)."""

    dim: int
    family: str = field(default="rademacher", init=False)
    homogeneous: bool = field(default=True, init=False)

    def draw(self, rng, n):
        return 2.0 * rng.integers(0, 2, size=(n, self.dim)) - 1.0

    def apply(self, x, eta):
        return np.broadcast_to(np.asarray(eta, dtype=float), np.shape(x)).copy()

    def covariance(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    def jacobian(self, x, eta=None):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim, self.dim))

    def outcomes(self, x):
        d = self.dim
        if d > 16:
            return None
        grid = ((np.arange(2**d)[:, None] >> np.arange(d)) & 1) * 2.0 - 1.0
        return grid, np.full(2**d, 2.0**-d)

    @property
    def c_sigma(self) -> float:
        return 1.0

    @property
    def norm_bound(self) -> float:
        return float(np.sqrt(self.dim))

    def to_config(self) -> dict:
        return {"family": "rademacher"}


@dataclass(frozen=True)
class SphereNoise(NoiseModel):
    """Uniform on the sphere of radius r: covariance (r^2 / d) I."""

    dim: int
    radius: float
    family: str = field(default="sphere", init=False)
    homogeneous: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise ModelError("sphere radius must be positive")

    def draw(self, rng, n):
        g = rng.standard_normal((n, self.dim))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def apply(self, x, eta):
        return np.broadcast_to(self.radius * np.asarray(eta, dtype=float), np.shape(x)).copy()

    def covariance(self, x):
        x = np.asarray(x, dtype=float)
        c = self.radius**2 / self.dim * np.eye(self.dim)
        return np.broadcast_to(c, x.shape[:-1] + c.shape).copy()

    def jacobian(self, x, eta=None):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim, self.dim))

    @property
    def c_sigma(self) -> float:
        return float(self.radius / np.sqrt(self.dim))

    @property
    def norm_bound(self) -> float:
        return float(self.radius)

    def to_config(self) -> dict:
        return {"family": "sphere", "radius": self.radius}


@dataclass(frozen=True, eq=False)
class FiniteSumNoise(NoiseModel):
    """Minibatch residual noise of stochastic gradient descent.

    ``T_i(x) = (grad H(sqrt(delta) x) - grad H_i(sqrt(delta) x)) / sqrt(2)``
    with ``i`` uniform on the components. For quadratic components this is
    affine in x: ``(sqrt(delta) B_i x + A_i b_i) / sqrt(2)`` with
    ``B_i = mean(A) - A_i``.

    The covariance grows quadratically in |x|, so ``c_sigma`` is only a bound
    on the ball of radius ``radius``.
    """

    spec: FiniteSumSpec
    delta: float
    radius: float = 10.0
    family: str = field(default="finite_sum_sgd", init=False)
    homogeneous: bool = field(default=False, init=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise ModelError(f"stepsize must be positive, got {self.delta}")

    @property
    def dim(self) -> int:
        return self.spec.dim

    @cached_property
    def _B(self) -> np.ndarray:
        return self.spec.mean_hessian[None] - self.spec.hessians

    @cached_property
    def _cov_terms(self):
        # C(w) = (Q vec(w w^T) + P w + (P w)^T + K) / 2 with w = sqrt(delta) x
        B, a, S, d = self._B, self.spec.anchors, self.spec.S, self.dim
        Q = np.einsum("spj,sql->pqjl", B, B).reshape(d * d, d * d) / S
        P = np.einsum("spj,sq->jpq", B, a).reshape(d, d * d) / S
        K = a.T @ a / S
        return Q, P, K

    def residuals(self, x):
        """T_i(x) for every component, shape (..., S, d)."""
        x = np.asarray(x, dtype=float)
        w = np.sqrt(self.delta) * x
        grads = self.spec.component_grads(w)
        mean = grads.mean(axis=-2, keepdims=True)
        return (mean - grads) / np.sqrt(2.0)

    def draw(self, rng, n):
        return rng.integers(0, self.spec.S, size=n)

    def apply(self, x, eta):
        x = np.asarray(x, dtype=float)
        eta = np.asarray(eta)
        w = np.sqrt(self.delta) * x
        Bx = np.einsum("nij,nj->ni", self._B[eta], w)
        return (Bx + self.spec.anchors[eta]) / np.sqrt(2.0)

    def covariance(self, x):
        x = np.asarray(x, dtype=float)
        d = self.dim
        w = np.sqrt(self.delta) * x.reshape(-1, d)
        Q, P, K = self._cov_terms
        outer = (w[:, :, None] * w[:, None, :]).reshape(-1, d * d)
        lin = (w @ P).reshape(-1, d, d)
        C = (outer @ Q.T).reshape(-1, d, d) + lin + np.swapaxes(lin, 1, 2) + K
        return 0.5 * C.reshape(x.shape[:-1] + (d, d))

    def jacobian(self, x, eta):
        # x-independent for quadratic components
        return np.sqrt(self.delta / 2.0) * self._B[np.asarray(eta)]

    def outcomes(self, x):
        return self.residuals(x), np.full(self.spec.S, 1.0 / self.spec.S)

    @property
    def c_sigma(self) -> float:
        # |T_i(x)| <= (sqrt(delta) |B_i| R + |A_i b_i|) / sqrt(2) on |x| <= R
        Bn = np.linalg.norm(self._B, ord=2, axis=(1, 2))
        an = np.linalg.norm(self.spec.anchors, axis=1)
        bound = (np.sqrt(self.delta) * Bn * self.radius + an) / np.sqrt(2.0)
        return float(np.sqrt(np.mean(bound**2)))

    @property
    def norm_bound(self) -> float:
        raise ModelError("finite-sum noise has no uniform norm bound")

    def to_config(self) -> dict:
        return {"family": "finite_sum_sgd", "radius": self.radius, **self.spec.to_config()}


def make_sgd_noise(spec: FiniteSumSpec, delta: float, radius: float = 10.0) -> FiniteSumNoise:
    if spec.S == 0:
        raise ModelError("finite sum needs at least one component")
    return FiniteSumNoise(spec, float(delta), radius)


def noise_covariance(model: NoiseModel, x) -> np.ndarray:
    """E[T_eta(x) T_eta(x)^T], exact for every built-in family."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ModelError("x must be finite")
    return model.covariance(x)


# ---------------------------------------------------------------------------
# Config round-trip
# ---------------------------------------------------------------------------

_POTENTIAL_KEYS = {"quadratic": {"kind", "matrix"}, "logcosh": {"kind", "dim", "alpha"}}
_NOISE_KEYS = {
    "rademacher": {"family"},
    "sphere": {"family", "radius"},
    "finite_sum_sgd": {
        "family", "components", "component_seed", "eig_range", "offset_scale", "radius",
        "hessians", "offsets",
    },
}


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ModelError(f"unknown keys in {where}: {sorted(unknown)}")


def potential_from_config(cfg: dict[str, Any]) -> Potential:
    kind = cfg.get("kind")
    if kind not in _POTENTIAL_KEYS:
        raise ModelError(f"unknown potential kind {kind!r}")
    _check_keys(cfg, _POTENTIAL_KEYS[kind], "model.potential")
    if kind == "quadratic":
        return make_quadratic_potential(cfg["matrix"])
    return make_logcosh_potential(int(cfg["dim"]), float(cfg["alpha"]))


def finite_sum_from_config(cfg: dict[str, Any], dim: int) -> FiniteSumSpec:
    if "hessians" in cfg:
        return FiniteSumSpec(np.array(cfg["hessians"]), np.array(cfg["offsets"]))
    return random_quadratic_components(
        int(cfg.get("components", 8)),
        dim,
        int(cfg.get("component_seed", 0)),
        tuple(cfg.get("eig_range", (1.0, 2.0))),
        float(cfg.get("offset_scale", 1.0)),
    )


def noise_from_config(cfg: dict[str, Any], dim: int, delta: float | None = None) -> NoiseModel:
    family = cfg.get("family")
    if family not in _NOISE_KEYS:
        raise ModelError(f"unknown noise family {family!r}")
    _check_keys(cfg, _NOISE_KEYS[family], "model.noise")
    if family == "rademacher":
        return RademacherNoise(dim)
    if family == "sphere":
        return SphereNoise(dim, float(cfg.get("radius", np.sqrt(dim))))
    if delta is None:
        raise ModelError("finite-sum noise needs a stepsize")
    spec = finite_sum_from_config(cfg, dim)
    return make_sgd_noise(spec, delta, float(cfg.get("radius", 10.0)))
