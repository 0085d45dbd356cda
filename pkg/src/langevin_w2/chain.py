"""The discrete chain x_{k+1} = x_k - delta grad U(x_k) + sqrt(2 delta) T_eta(x_k).

Ensembles, synchronously coupled pairs, and the variable-stepsize sequence
that matches normalized partial sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from . import rng as _rng
from .model import NoiseModel, Potential

DIVERGENCE_RADIUS = 1e12


class ChainDivergence(RuntimeError):
    """A chain left the finite region; carries the chain id and step index."""

    def __init__(self, message: str, chain_id: int | None = None, step: int | None = None):
        super().__init__(message)
        self.chain_id = chain_id
        self.step = step


@dataclass(frozen=True)
class StepSchedule:
    """Stepsize sequence indexed by the (1-based) step number.

    ``clt`` uses ``(sqrt(k+1) - sqrt(k)) / sqrt(k+1)``, which makes the chain
    drift ``1 - delta_k = sqrt(k / (k+1))`` identical to the partial-sum
    recursion. ``clt_harmonic`` is the cruder ``1 / (2k + 1)``.
    """

    kind: str = "constant"
    delta: float | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.delta is None or not self.delta > 0:
                raise ValueError(f"constant schedule needs delta > 0, got {self.delta}")
        elif self.kind not in ("clt", "clt_harmonic"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, delta: float) -> "StepSchedule":
        return cls("constant", float(delta))

    def value_at(self, k: int) -> float:
        if self.kind == "constant":
            return self.delta
        if k < 0:
            raise ValueError("step index must be nonnegative")
        if self.kind == "clt":
            r = np.sqrt(k + 1.0)
            # (r - sqrt k)/r written as 1/(r (r + sqrt k)) to avoid cancellation
            return float(1.0 / (r * (r + np.sqrt(float(k)))))
        return 1.0 / (2.0 * k + 1.0)

    def values(self, k_max: int) -> np.ndarray:
        return np.array([self.value_at(k) for k in range(1, k_max + 1)])


@dataclass
class ChainState:
    x: np.ndarray
    k: int = 0
    rng_stream: tuple = ()


@dataclass
class EnsembleSnapshot:
    k: int
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("snapshot points must be an (n, d) array")
        if not np.all(np.isfinite(self.points)):
            raise ChainDivergence(f"non-finite snapshot at k={self.k}", step=self.k)


NoiseFactory = Union[NoiseModel, Callable[[float], NoiseModel]]


def _factory(noise: NoiseFactory) -> Callable[[float], NoiseModel]:
    if isinstance(noise, NoiseModel):
        return lambda _delta: noise
    cache: dict[float, NoiseModel] = {}

    def get(delta):
        if delta not in cache:
            cache[delta] = noise(delta)
        return cache[delta]

    return get


def _check_delta(delta):
    if not delta > 0:
        raise ValueError(f"stepsize must be positive, got {delta}")


def _guard(x: np.ndarray, step: int | None, offset: int = 0):
    bad = ~np.isfinite(x).all(axis=-1) | (np.linalg.norm(x, axis=-1) > DIVERGENCE_RADIUS)
    if np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0]) + offset
        raise ChainDivergence(f"chain {i} diverged at step {step}", chain_id=i, step=step)


def step_transition(potential: Potential, noise: NoiseModel, delta: float, x, rng=None, *, eta=None,
                    step: int | None = None):
    """One application of F_eta. Accepts a point (d,) or a batch (n, d).

    Pass ``eta`` to force the noise outcome; otherwise it is drawn from ``rng``.
    """
    _check_delta(delta)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None] if single else x
    if eta is None:
        if rng is None:
            raise ValueError("need either rng or eta")
        eta = noise.draw(rng, X.shape[0])
    elif single:
        eta = np.asarray(eta)[None]
    out = X - delta * potential.grad(X) + np.sqrt(2.0 * delta) * noise.apply(X, eta)
    _guard(out, step)
    return out[0] if single else out


def coupled_step(potential: Potential, noise: NoiseModel, delta: float, x, y, rng=None, *, eta=None):
    """Advance x and y with the same noise outcome (synchronous coupling)."""
    x = np.asarray(x, dtype=float)
    n = 1 if x.ndim == 1 else x.shape[0]
    if eta is None:
        if rng is None:
            raise ValueError("need either rng or eta")
        eta = noise.draw(rng, n)
        if x.ndim == 1:
            eta = eta[0]
    return (step_transition(potential, noise, delta, x, eta=eta),
            step_transition(potential, noise, delta, y, eta=eta))


def _checkpoints(checkpoints: Sequence[int]) -> list[int]:
    cps = [int(c) for c in checkpoints]
    if not cps:
        raise ValueError("need at least one checkpoint")
    if cps[0] < 0 or any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError(f"checkpoints must be nonnegative and strictly increasing: {cps}")
    return cps


def initial_cloud(x0, n_chains: int, dim: int, seed: int) -> np.ndarray:
    """Starting points: None (point mass at 0), a point, an (n, d) array,
    or ``{"kind": "gaussian", "scale": s}``."""
    if x0 is None:
        return np.zeros((n_chains, dim))
    if isinstance(x0, dict):
        if x0.get("kind") != "gaussian":
            raise ValueError(f"unknown initial distribution {x0!r}")
        scale = float(x0.get("scale", 1.0))
        parts = [
            scale * _rng.substream(seed, _rng.INIT, b).standard_normal((s.stop - s.start, dim))
            for b, s in enumerate(_rng.blocks(n_chains))
        ]
        return _rng.stack_blocks(parts)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (dim,):
        return np.broadcast_to(x0, (n_chains, dim)).copy()
    if x0.shape == (n_chains, dim):
        return x0.copy()
    raise ValueError(f"initial cloud has shape {x0.shape}, expected ({n_chains}, {dim})")


def run_ensemble(potential: Potential, noise_factory: NoiseFactory, schedule: StepSchedule,
                 n_chains: int, checkpoints: Sequence[int], seed: int, x0=None,
                 threads: int | None = None) -> list[EnsembleSnapshot]:
    """Evolve ``n_chains`` independent chains and snapshot them at ``checkpoints``."""
    if n_chains < 2:
        raise ValueError("n_chains must be at least 2")
    cps = _checkpoints(checkpoints)
    if schedule.kind == "constant":
        _check_delta(schedule.delta)
    get_noise = _factory(noise_factory)
    X0 = initial_cloud(x0, n_chains, potential.dim, seed)
    deltas = schedule.values(cps[-1])
    block_slices = _rng.blocks(n_chains)

    def run_block(b: int) -> list[np.ndarray]:
        sl = block_slices[b]
        gen = _rng.substream(seed, _rng.CHAIN, b)
        x = X0[sl].copy()
        out, k = [], 0
        for target in cps:
            while k < target:
                delta = deltas[k]
                k += 1
                noise = get_noise(delta)
                eta = noise.draw(gen, x.shape[0])
                x = x - delta * potential.grad(x) + np.sqrt(2.0 * delta) * noise.apply(x, eta)
                _guard(x, k, sl.start)
            out.append(x.copy())
        return out

    per_block = _rng.map_ordered(run_block, len(block_slices), threads)
    return [
        EnsembleSnapshot(k, _rng.stack_blocks([blk[i] for blk in per_block]))
        for i, k in enumerate(cps)
    ]


def dyadic_checkpoints(k_max: int) -> list[int]:
    out, k = [], 1
    while k <= k_max:
        out.append(k)
        k *= 2
    return out


def _clt_runs(noise: NoiseModel, k_max: int, n_chains: int, seed: int, checkpoints, schedule: str,
              threads: int | None):
    if not noise.homogeneous or not np.allclose(noise.covariance(np.zeros(noise.dim)), np.eye(noise.dim),
                                                atol=1e-12):
        raise ValueError("CLT sequences need homogeneous noise with identity covariance")
    if n_chains < 2:
        raise ValueError("n_chains must be at least 2")
    cps = _checkpoints(dyadic_checkpoints(k_max) if checkpoints is None else checkpoints)
    sched = StepSchedule(schedule)
    deltas = sched.values(cps[-1])
    block_slices = _rng.blocks(n_chains)
    d = noise.dim

    def run_block(b: int):
        sl = block_slices[b]
        gen = _rng.substream(seed, _rng.CHAIN, b)
        n = sl.stop - sl.start
        x = np.zeros((n, d))
        s = np.zeros((n, d))
        zero = np.zeros((n, d))
        xs, ss, k = [], [], 0
        for target in cps:
            while k < target:
                delta = deltas[k]
                k += 1
                T = noise.apply(zero, noise.draw(gen, n))
                x = (1.0 - delta) * x + np.sqrt(2.0 * delta) * T
                s = np.sqrt((k - 1.0) / k) * s + T / np.sqrt(k)
                _guard(x, k, sl.start)
            xs.append(x.copy())
            ss.append(s.copy())
        return xs, ss

    per_block = _rng.map_ordered(run_block, len(block_slices), threads)
    chain = [EnsembleSnapshot(k, _rng.stack_blocks([blk[0][i] for blk in per_block])) for i, k in enumerate(cps)]
    sums = [EnsembleSnapshot(k, _rng.stack_blocks([blk[1][i] for blk in per_block])) for i, k in enumerate(cps)]
    return chain, sums


def run_clt_sequence(noise: NoiseModel, k_max: int, n_chains: int, seed: int, checkpoints=None,
                     schedule: str = "clt", threads: int | None = None) -> list[EnsembleSnapshot]:
    """x_k = (1 - delta_k) x_{k-1} + sqrt(2 delta_k) eta_k from x_0 = 0, quadratic U = |x|^2/2."""
    return _clt_runs(noise, k_max, n_chains, seed, checkpoints, schedule, threads)[0]


def run_partial_sums(noise: NoiseModel, k_max: int, n_chains: int, seed: int, checkpoints=None,
                     threads: int | None = None) -> list[EnsembleSnapshot]:
    """Normalized partial sums S_k = (eta_1 + ... + eta_k) / sqrt(k).

    Uses the same noise draws as :func:`run_clt_sequence` for the same seed.
    """
    return _clt_runs(noise, k_max, n_chains, seed, checkpoints, "clt", threads)[1]


def run_clt_pair(noise: NoiseModel, k_max: int, n_chains: int, seed: int, checkpoints=None,
                 schedule: str = "clt", threads: int | None = None):
    """Both sequences from one pass over shared noise: (chain snapshots, partial-sum snapshots)."""
    return _clt_runs(noise, k_max, n_chains, seed, checkpoints, schedule, threads)
