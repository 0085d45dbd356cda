"""Reference samples for the invariant law of dx = -grad U dt + sqrt(2) sigma_x dB.

Exact Gaussian sampling for quadratic U with constant diffusion, fine-step
Euler-Maruyama otherwise, and a pointwise Fokker-Planck stationarity residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from . import rng as _rng
from .chain import ChainDivergence, _guard
from .model import NoiseModel, Potential, QuadraticPotential
from .wasserstein import EmpiricalMeasure

CLAMP_TOL = -1e-12


def psd_sqrt(C: np.ndarray) -> np.ndarray:
    """Symmetric square root of a (batch of) PSD matrices via eigendecomposition."""
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    w, V = np.linalg.eigh(C)
    if np.any(w < CLAMP_TOL * np.maximum(1.0, np.abs(w).max(axis=-1, keepdims=True))):
        raise ValueError(f"covariance is not PSD (min eigenvalue {w.min():.3g})")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def _noise_factor(C: np.ndarray) -> np.ndarray:
    """Any F with F F^T = C; F z has the same law as C^{1/2} z for Gaussian z."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return psd_sqrt(C)


@dataclass(frozen=True)
class SdeSystem:
    potential: Potential
    noise: NoiseModel

    @property
    def dim(self) -> int:
        return self.potential.dim

    def covariance(self, x):
        return self.noise.covariance(x)

    def diffusion(self, x):
        return psd_sqrt(self.noise.covariance(np.asarray(x, dtype=float)))

    @property
    def constant_diffusion(self) -> bool:
        return self.noise.homogeneous


def euler_maruyama_step(system: SdeSystem, delta: float, x, z, *, step: int | None = None):
    """x - delta grad U(x) + sqrt(2 delta) sigma_x z."""
    if not delta > 0:
        raise ValueError(f"stepsize must be positive, got {delta}")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    single = x.ndim == 1
    X, Z = (x[None], z[None]) if single else (x, z)
    if system.constant_diffusion:
        sig = system.diffusion(np.zeros(system.dim))
        noise = Z @ sig.T
    else:
        noise = (_noise_factor(system.covariance(X)) @ Z[:, :, None])[:, :, 0]
    out = X - delta * system.potential.grad(X) + np.sqrt(2.0 * delta) * noise
    _guard(out, step)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactGaussian:
    """Exact draws from the Ornstein-Uhlenbeck invariant law N(0, Sigma)."""

    kind: str = "exact_gaussian"


@dataclass(frozen=True)
class FineEuler:
    """Fine-step Euler-Maruyama reference.

    ``n_trajectories`` independent trajectories start at ``x0`` (origin by
    default), discard ``burn_in`` steps, then emit one sample each every
    ``thinning`` steps until ``n`` samples are collected. ``x0`` may also be
    one starting point per trajectory. One trajectory is
    the classical long-run estimator; ``n_trajectories = n`` gives one
    post-burn-in snapshot of an ensemble.
    """

    delta_ref: float
    burn_in: int | None = None
    thinning: int | None = None
    n_trajectories: int = 1
    delta_experiment: float | None = None
    kind: str = "fine_euler"

    def __post_init__(self):
        if not self.delta_ref > 0:
            raise ValueError("delta_ref must be positive")
        if self.delta_experiment is not None and self.delta_ref > self.delta_experiment / 50.0 * (1 + 1e-12):
            raise ValueError(
                f"delta_ref={self.delta_ref} exceeds delta/50 for delta={self.delta_experiment}"
            )
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be positive")

    def resolved(self, m: float) -> tuple[int, int]:
        burn = self.burn_in if self.burn_in is not None else math.ceil(10.0 / (m * self.delta_ref))
        thin = self.thinning if self.thinning is not None else math.ceil(1.0 / (m * self.delta_ref))
        return int(burn), max(1, int(thin))


def stationary_covariance(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Solve A Sigma + Sigma A = 2 C (invariant covariance of dx = -Ax dt + sqrt(2) C^{1/2} dB)."""
    S = linalg.solve_continuous_lyapunov(np.asarray(A, float), 2.0 * np.asarray(C, float))
    return 0.5 * (S + S.T)


def _exact_gaussian(system: SdeSystem, n: int, seed: int) -> np.ndarray:
    pot = system.potential
    if not isinstance(pot, QuadraticPotential) or not system.constant_diffusion:
        raise ValueError("exact_gaussian needs a quadratic potential and position-independent noise")
    Sigma = stationary_covariance(pot.A, system.covariance(np.zeros(system.dim)))
    root = psd_sqrt(Sigma)
    parts = [
        _rng.substream(seed, _rng.REFERENCE, b).standard_normal((s.stop - s.start, system.dim)) @ root
        for b, s in enumerate(_rng.blocks(n))
    ]
    return _rng.stack_blocks(parts)


def _fine_euler(system: SdeSystem, cfg: FineEuler, n: int, seed: int, x0, threads) -> np.ndarray:
    burn, thin = cfg.resolved(system.potential.m)
    n_traj = min(cfg.n_trajectories, n)
    per_traj = math.ceil(n / n_traj)
    start = np.zeros(system.dim) if x0 is None else np.asarray(x0, dtype=float)
    if start.ndim == 2 and start.shape != (n_traj, system.dim):
        raise ValueError(f"x0 has shape {start.shape}, expected ({n_traj}, {system.dim})")
    block_slices = _rng.blocks(n_traj)
    delta = cfg.delta_ref

    def run_block(b: int) -> np.ndarray:
        sl = block_slices[b]
        gen = _rng.substream(seed, _rng.REFERENCE, b)
        m = sl.stop - sl.start
        x = (start[sl] if start.ndim == 2 else np.broadcast_to(start, (m, system.dim))).copy()
        collected = []
        step = 0
        total = burn + thin * per_traj
        while step < total:
            z = gen.standard_normal((m, system.dim))
            try:
                x = euler_maruyama_step(system, delta, x, z, step=step + 1)
            except ChainDivergence as err:
                raise ChainDivergence(str(err), chain_id=sl.start + (err.chain_id or 0), step=step + 1) from None
            step += 1
            if step > burn and (step - burn) % thin == 0:
                collected.append(x.copy())
        # trajectory-major: (m, per_traj, d)
        return np.stack(collected, axis=1)

    parts = _rng.map_ordered(run_block, len(block_slices), threads)
    samples = np.concatenate(parts, axis=0).reshape(-1, system.dim)
    return samples[:n]


def sample_invariant(system: SdeSystem, sampler, n: int, seed: int, *, x0=None,
                     threads: int | None = None) -> EmpiricalMeasure:
    """Approximately independent draws from the invariant distribution."""
    if n < 100:
        raise ValueError("need at least 100 reference samples")
    if isinstance(sampler, ExactGaussian) or sampler == "exact_gaussian":
        pts = _exact_gaussian(system, n, seed)
    elif isinstance(sampler, FineEuler):
        pts = _fine_euler(system, sampler, n, seed, x0, threads)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return EmpiricalMeasure(pts)


# ---------------------------------------------------------------------------
# Fokker-Planck stationarity
# ---------------------------------------------------------------------------


def _fd_grad(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    d = x.size
    g = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _fd_hess(f: Callable, x: np.ndarray, h: float) -> np.ndarray:
    d = x.size
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def covariance_derivatives(system: SdeSystem, x, h: float = 1e-4):
    """Divergence sum_j d_j Sigma_ij and double divergence sum_ij d_i d_j Sigma_ij.

    Both vanish for position-independent noise; otherwise central differences.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    if system.constant_diffusion:
        return np.zeros(d), 0.0
    cov = system.covariance
    div = np.zeros(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        div += (cov(x + e)[:, j] - cov(x - e)[:, j]) / (2 * h)
    ddiv = 0.0
    for i in range(d):
        for j in range(d):
            ddiv += _fd_hess(lambda y: cov(y)[i, j], x, h)[i, j]
    return div, ddiv


def stationarity_operator(system: SdeSystem, p: float, grad_p, hess_p, x, h: float = 1e-4) -> float:
    """The stationary Fokker-Planck expression given density value and derivatives at x.

    p (sum_ij d_ij Sigma_ij + tr hess U) + <grad p, grad U> + 2 <grad p, div Sigma> + <hess p, Sigma>
    """
    x = np.asarray(x, dtype=float)
    div, ddiv = covariance_derivatives(system, x, h)
    Sigma = system.covariance(x)
    pot = system.potential
    return float(
        p * (ddiv + np.trace(pot.hess(x)))
        + np.dot(grad_p, pot.grad(x))
        + 2.0 * np.dot(grad_p, div)
        + np.sum(np.asarray(hess_p) * Sigma)
    )


def fokker_planck_residual(system: SdeSystem, log_density, x, *, grad_log=None, hess_log=None,
                           h: float = 1e-4) -> float:
    """Stationarity residual of the density exp(log_density) at x; zero iff stationary there.

    Derivatives of ``log_density`` come from ``grad_log``/``hess_log`` when given,
    otherwise from central differences with step ``h``.
    """
    x = np.asarray(x, dtype=float)
    f = float(log_density(x))
    g = np.asarray(grad_log(x)) if grad_log is not None else _fd_grad(log_density, x, h)
    H = np.asarray(hess_log(x)) if hess_log is not None else _fd_hess(log_density, x, h)
    p = math.exp(f)
    return stationarity_operator(system, p, p * g, p * (H + np.outer(g, g)), x, h)
