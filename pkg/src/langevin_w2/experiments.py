"""Config-driven experiments: rate sweeps, the CLT sequence, coupling, lemma suite.

A config is one TOML (or JSON) document with named sections; unknown keys and
all other validation problems are collected and raised together.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import rng as _rng
from .analysis import (
    LemmaCheckReport,
    RateFit,
    check_clt_schedule,
    check_contraction,
    check_det_expansion,
    check_exponential_moment,
    check_jacobian_invertibility,
    check_moment_bound,
    check_one_step_displacement,
    check_sigma_derivative,
    check_subgaussian_tail,
    check_tail_second_moment,
    check_trace_bound,
    check_xlogx,
    contraction_constants,
    fit_rate_slope,
)
from .chain import StepSchedule, run_clt_pair, run_ensemble
from .model import (
    LogCoshPotential,
    ModelError,
    QuadraticPotential,
    RademacherNoise,
    make_sgd_noise,
    noise_from_config,
    potential_from_config,
    random_quadratic_components,
)
from .sde import (
    ExactGaussian,
    FineEuler,
    SdeSystem,
    fokker_planck_residual,
    psd_sqrt,
    sample_invariant,
    stationary_covariance,
)
from .wasserstein import EmpiricalMeasure, w2

EXPERIMENTS = ("homog_rate", "inhomog_rate", "clt", "contraction", "lemmas", "simulate")
RATE_EXPERIMENTS = ("homog_rate", "inhomog_rate", "clt")
MIN_RATE_CHAINS = 100
FIT_MIN_POINTS = 4

_SECTIONS = {
    "grid": {"deltas", "checkpoints", "k_max"},
    "chain": {"x0", "schedule", "epsilon_scale"},
    "w2": {"method", "n_projections"},
    "reference": {"ratio", "burn_in_time", "bootstrap"},
    "expect": {"slope", "r_squared"},
    "contraction": {"n_pairs", "steps"},
    "lemmas": {"contraction_m_scale", "trials", "points", "samples"},
}
_TOP = {"experiment", "seed", "n_chains", "output", "model"} | set(_SECTIONS)

DEFAULTS = {
    "n_chains": 20000,
    "chain": {"x0": None, "schedule": "clt", "epsilon_scale": 1.0},
    "w2": {"method": "auto", "n_projections": 128},
    "reference": {"ratio": 50.0, "burn_in_time": None, "bootstrap": 32},
    "contraction": {"n_pairs": 1000, "steps": 1000},
    "lemmas": {"contraction_m_scale": 1.0, "trials": 1000, "points": 1000, "samples": 100000},
}


class ConfigError(ValueError):
    """All validation problems of one config, reported together."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.problems))


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    n_chains: int
    model: dict
    grid: dict
    output: str | None = None
    chain: dict = field(default_factory=dict)
    w2: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)
    contraction: dict = field(default_factory=dict)
    lemmas: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        problems = []
        raw = copy.deepcopy(raw)
        for k in sorted(set(raw) - _TOP):
            problems.append(f"unknown top-level key {k!r}")
        exp = raw.get("experiment")
        if exp not in EXPERIMENTS:
            problems.append(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
        seed = raw.get("seed")
        if seed is None:
            problems.append("seed is mandatory")
        elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            problems.append(f"seed must be an unsigned 64-bit integer, got {seed!r}")
        n_chains = raw.get("n_chains", DEFAULTS["n_chains"])
        if not isinstance(n_chains, int) or n_chains < 2:
            problems.append(f"n_chains must be an integer >= 2, got {n_chains!r}")
        elif exp in RATE_EXPERIMENTS and n_chains < MIN_RATE_CHAINS:
            problems.append(f"rate experiments need n_chains >= {MIN_RATE_CHAINS}, got {n_chains}")
        sections = {}
        for name, allowed in _SECTIONS.items():
            sec = raw.get(name, {})
            if not isinstance(sec, dict):
                problems.append(f"[{name}] must be a table")
                sec = {}
            for k in sorted(set(sec) - allowed):
                problems.append(f"unknown key {k!r} in [{name}]")
            sections[name] = {**DEFAULTS.get(name, {}), **{k: v for k, v in sec.items() if k in allowed}}
        model = raw.get("model", {})
        if exp != "lemmas":
            problems.extend(_check_model(model))
        grid = sections["grid"]
        if exp in ("homog_rate", "inhomog_rate", "contraction", "simulate"):
            deltas = grid.get("deltas")
            if not deltas:
                problems.append("grid.deltas must be a nonempty list")
            elif any(not isinstance(v, (int, float)) or not v > 0 for v in deltas):
                problems.append(f"grid.deltas must be positive numbers, got {deltas}")
        if exp == "simulate":
            if len(grid.get("deltas") or []) != 1:
                problems.append("simulate takes exactly one value in grid.deltas")
            if not grid.get("checkpoints"):
                problems.append("simulate needs grid.checkpoints")
        if exp == "clt" and not (grid.get("checkpoints") or grid.get("k_max")):
            problems.append("clt needs grid.checkpoints or grid.k_max")
        if grid.get("checkpoints") is not None:
            cps = grid["checkpoints"]
            if not all(isinstance(c, int) for c in cps) or any(b <= a for a, b in zip(cps, cps[1:])) \
                    or (cps and cps[0] < 1):
                problems.append(f"grid.checkpoints must be strictly increasing positive integers, got {cps}")
        if sections["chain"].get("x0") == "origin":
            sections["chain"]["x0"] = None
        if sections["chain"]["schedule"] not in ("clt", "clt_harmonic"):
            problems.append(f"chain.schedule must be clt or clt_harmonic, got {sections['chain']['schedule']!r}")
        if sections["w2"]["method"] not in ("auto", "exact1d", "assignment", "sliced"):
            problems.append(f"unknown w2.method {sections['w2']['method']!r}")
        if not float(sections["reference"]["ratio"]) >= 50:
            problems.append("reference.ratio must be at least 50")
        slope = sections["expect"].get("slope")
        if slope is not None and (len(slope) != 2 or slope[0] > slope[1]):
            problems.append(f"expect.slope must be [low, high], got {slope}")
        if problems:
            raise ConfigError(problems)
        return cls(
            experiment=exp, seed=int(seed), n_chains=int(n_chains), model=model,
            output=raw.get("output"), **sections,
        )

    def to_dict(self) -> dict:
        out = {"experiment": self.experiment, "seed": self.seed, "n_chains": self.n_chains}
        if self.output is not None:
            out["output"] = self.output
        out["model"] = self.model
        for name in _SECTIONS:
            sec = {k: v for k, v in getattr(self, name).items() if v is not None}
            if sec:
                out[name] = sec
        return copy.deepcopy(out)


def _check_model(model) -> list[str]:
    if not isinstance(model, dict) or "potential" not in model or "noise" not in model:
        return ["[model] needs [model.potential] and [model.noise] tables"]
    problems = [f"unknown key {k!r} in [model]" for k in sorted(set(model) - {"potential", "noise"})]
    try:
        build_model(model, 1e-3)
    except (ModelError, KeyError, TypeError, ValueError) as err:
        problems.append(f"model: {err}")
    return problems


def build_model(model: dict, delta: float | None = None):
    """(potential, noise) from the [model] section.

    Minibatch noise pairs with ``kind = "finite_sum_mean"``: U is then the
    mean of the components, so potential and noise cannot disagree.
    """
    pcfg, ncfg = model["potential"], model["noise"]
    sgd = ncfg.get("family") == "finite_sum_sgd"
    if pcfg.get("kind") == "finite_sum_mean":
        if set(pcfg) - {"kind", "dim"}:
            raise ModelError(f"unknown keys in model.potential: {sorted(set(pcfg) - {'kind', 'dim'})}")
        if not sgd:
            raise ModelError("finite_sum_mean potential needs finite_sum_sgd noise")
        dim = int(pcfg["dim"])
        if dim < 1:
            raise ModelError("dim must be positive")
        noise = noise_from_config(ncfg, dim, delta)
        return noise.spec.potential(), noise
    if sgd:
        raise ModelError("finite_sum_sgd noise needs the finite_sum_mean potential")
    pot = potential_from_config(pcfg)
    return pot, noise_from_config(ncfg, pot.dim, delta)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_bytes()
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text.decode())
    except Exception as err:
        raise ConfigError([f"{path}: cannot parse: {err}"]) from None
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def fit(self) -> RateFit | None:
        return next(iter(self.fits.values()), None)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "version": self.version,
            "passed": self.passed,
            "wall_clock_seconds": self.wall_clock_seconds,
            "config": self.config,
            "rows": self.rows,
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "checks": [c.to_dict() for c in self.checks],
            "extras": self.extras,
        }


def _row(cfg: ExperimentConfig, experiment: str, grid_value, k: int, est) -> dict:
    return {
        "experiment": experiment, "grid_value": float(grid_value), "k": int(k),
        "w2": float(est.value), "stderr": None if est.stderr is None else float(est.stderr),
        "method": est.method, "seed": cfg.seed,
    }


def _fit_and_expect(cfg: ExperimentConfig, report: ExperimentReport, name: str, xs, ests):
    if len(xs) < FIT_MIN_POINTS:
        return
    if any(e.value <= 0 for e in ests):
        report.extras.setdefault("fit_skipped", {})[name] = "nonpositive W2 values"
        return
    fit = fit_rate_slope(zip(xs, ests))
    report.fits[name] = fit
    exp = cfg.expect
    if name == next(iter(report.fits)) and exp.get("slope") is not None:
        lo, hi = exp["slope"]
        margins = [lo - fit.slope, fit.slope - hi]
        if exp.get("r_squared") is not None:
            margins.append(float(exp["r_squared"]) - fit.r_squared)
        report.checks.append(LemmaCheckReport(
            "rate_slope", len(xs), float(max(margins)), bool(max(margins) <= 0), 0.0,
            {"series": name, "slope": fit.slope, "r_squared": fit.r_squared, "slope_range": [lo, hi],
             "r_squared_min": exp.get("r_squared")},
        ))


def _w2(cfg: ExperimentConfig, a, b, *key) -> Any:
    return w2(a, b, cfg.w2["method"], n_projections=int(cfg.w2["n_projections"]),
              seed=_rng.derive_seed(cfg.seed, _rng.PROJECTIONS, *key))


def _steps_to_stationarity(m: float, delta: float, w0: float, eps: float) -> int:
    """k >= (8 / (m delta)) log(W2(p0, p*) / eps), and at least 8 / (m delta)."""
    return int(math.ceil(8.0 / (m * delta) * max(math.log(w0 / eps), 1.0)))


def _w0_bound(x0_cloud_sq: float, reference: EmpiricalMeasure) -> float:
    # triangle inequality through the point mass at 0
    return math.sqrt(x0_cloud_sq) + math.sqrt(float(np.mean(np.sum(reference.points**2, axis=1))))


def _initial_second_moment(x0, dim: int) -> float:
    if x0 is None:
        return 0.0
    if isinstance(x0, dict):
        return float(x0.get("scale", 1.0)) ** 2 * dim
    return float(np.sum(np.asarray(x0, dtype=float) ** 2))


def _timed(fn):
    def wrapper(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
        t0 = time.perf_counter()
        report = fn(cfg, threads)
        report.wall_clock_seconds = time.perf_counter() - t0
        return report

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@_timed
def run_homog_rate(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    """W2 to p* at approximate stationarity for each delta; slope of log W2 on log delta."""
    pot, noise = build_model(cfg.model, 1e-3)
    problems = []
    if not noise.homogeneous:
        problems.append(f"homog_rate needs position-independent noise, got {noise.family}")
    elif not np.allclose(noise.covariance(np.zeros(pot.dim)), np.eye(pot.dim), atol=1e-12):
        problems.append("homog_rate needs unit noise covariance so that p* is proportional to exp(-U)")
    if problems:
        raise ConfigError(problems)
    report = ExperimentReport("homog_rate", cfg.to_dict())
    system = SdeSystem(pot, noise)
    deltas = [float(v) for v in cfg.grid["deltas"]]
    ests = []
    for i, delta in enumerate(deltas):
        ref_seed = _rng.derive_seed(cfg.seed, _rng.REFERENCE, i)
        if isinstance(pot, QuadraticPotential):
            sampler = ExactGaussian()
        else:
            sampler = FineEuler(min(deltas) / float(cfg.reference["ratio"]), n_trajectories=cfg.n_chains,
                                burn_in=_burn_in(cfg, pot.m, min(deltas) / float(cfg.reference["ratio"])))
        ref = sample_invariant(system, sampler, cfg.n_chains, ref_seed, threads=threads)
        eps = float(cfg.chain["epsilon_scale"]) * math.sqrt(delta)
        k = _steps_to_stationarity(pot.m, delta, _w0_bound(_initial_second_moment(cfg.chain["x0"], pot.dim), ref), eps)
        snap = run_ensemble(pot, noise, StepSchedule.constant(delta), cfg.n_chains, [k],
                            _rng.derive_seed(cfg.seed, _rng.CHAIN, i), cfg.chain["x0"], threads)[0]
        est = _w2(cfg, snap.points, ref, i)
        ests.append(est)
        report.rows.append(_row(cfg, "homog_rate", delta, k, est))
    _fit_and_expect(cfg, report, "homog_rate", deltas, ests)
    return report


def _burn_in(cfg: ExperimentConfig, m: float, delta_ref: float, warm: bool = False) -> int:
    """Burn-in steps: 10/m time units from the origin, 5/m from a Gaussian warm start."""
    t = cfg.reference.get("burn_in_time")
    t = (5.0 if warm else 10.0) / m if t is None else float(t)
    return int(math.ceil(t / delta_ref))


def _lyapunov_start(pot, noise, n: int, seed: int) -> np.ndarray:
    """Draws from N(0, Sigma) with A Sigma + Sigma A = 2 C(0): the invariant law with noise frozen at 0."""
    Sigma = stationary_covariance(pot.A, noise.covariance(np.zeros(pot.dim)))
    z = _rng.stack_blocks([
        _rng.substream(seed, _rng.INIT, b).standard_normal((s.stop - s.start, pot.dim))
        for b, s in enumerate(_rng.blocks(n))
    ])
    return z @ psd_sqrt(Sigma)


@_timed
def run_inhomog_rate(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    """As :func:`run_homog_rate` with minibatch noise and fine-step Euler references.

    Each delta gets two references at delta/ratio and delta/(2 ratio); the
    experiment row uses the finer one and the pair feeds the bias check.
    """
    noise_cfg = cfg.model["noise"]
    if noise_cfg.get("family") != "finite_sum_sgd":
        raise ConfigError([f"inhomog_rate needs finite_sum_sgd noise, got {noise_cfg.get('family')!r}"])
    pot, base = build_model(cfg.model, 1e-3)
    spec = base.spec
    dim = pot.dim
    deltas = [float(v) for v in cfg.grid["deltas"]]
    L = spec.component_L
    bad = [d for d in deltas if d > 1.0 / (2.0 * L) * (1 + 1e-12)]
    if bad:
        raise ConfigError([f"grid.deltas {bad} violate delta <= 1/(2L) = {1 / (2 * L):.6g}"])
    report = ExperimentReport("inhomog_rate", cfg.to_dict())
    report.extras["component_m"] = spec.component_m
    report.extras["component_L"] = L
    ratio = float(cfg.reference["ratio"])
    n_boot = int(cfg.reference["bootstrap"])
    ests, agreement = [], []
    margins = []
    for i, delta in enumerate(deltas):
        noise = make_sgd_noise(spec, delta, float(noise_cfg.get("radius", 10.0)))
        system = SdeSystem(pot, noise)
        refs = []
        for level, dref in enumerate((delta / ratio, delta / (2 * ratio))):
            sampler = FineEuler(dref, burn_in=_burn_in(cfg, pot.m, dref, warm=True), n_trajectories=cfg.n_chains,
                                delta_experiment=delta)
            start = _lyapunov_start(pot, noise, cfg.n_chains, _rng.derive_seed(cfg.seed, _rng.INIT, i, level))
            refs.append(sample_invariant(system, sampler, cfg.n_chains,
                                         _rng.derive_seed(cfg.seed, _rng.REFERENCE, i, level), x0=start,
                                         threads=threads))
        eps = float(cfg.chain["epsilon_scale"]) * math.sqrt(delta)
        k = _steps_to_stationarity(spec.component_m, delta,
                                   _w0_bound(_initial_second_moment(cfg.chain["x0"], dim), refs[1]), eps)
        snap = run_ensemble(pot, noise, StepSchedule.constant(delta), cfg.n_chains, [k],
                            _rng.derive_seed(cfg.seed, _rng.CHAIN, i), cfg.chain["x0"], threads)[0]
        coarse = _w2(cfg, snap.points, refs[0], i)
        fine = _w2(cfg, snap.points, refs[1], i)
        se_c = bootstrap_stderr(cfg, snap.points, refs[0], n_boot, i, 0)
        se_f = bootstrap_stderr(cfg, snap.points, refs[1], n_boot, i, 1)
        gap = abs(coarse.value - fine.value)
        se = math.hypot(se_c, se_f)
        margins.append(gap - 2.0 * se)
        agreement.append({"delta": delta, "w2_coarse_ref": coarse.value, "w2_fine_ref": fine.value,
                          "gap": gap, "bootstrap_stderr_coarse": se_c, "bootstrap_stderr_fine": se_f})
        ests.append(fine)
        report.rows.append(_row(cfg, "inhomog_rate", delta, k, fine))
    report.extras["reference_agreement"] = agreement
    report.checks.append(LemmaCheckReport(
        "reference_agreement", len(deltas), float(max(margins)), bool(max(margins) <= 0), 0.0,
        {"rule": "|W2(coarse ref) - W2(fine ref)| <= 2 sqrt(se_coarse^2 + se_fine^2), bootstrap stderrs"},
    ))
    if spec.S > 1:
        _fit_and_expect(cfg, report, "inhomog_rate", deltas, ests)
    return report


def bootstrap_stderr(cfg: ExperimentConfig, a: np.ndarray, b: EmpiricalMeasure, n_boot: int, key: int,
                     level: int = 0) -> float:
    """Percentile bootstrap stderr of the configured W2 estimator (resampling both clouds)."""
    if n_boot <= 0:
        return 0.0
    A = np.asarray(a)
    B = b.points
    gen = _rng.substream(cfg.seed, _rng.BOOTSTRAP, key, level)
    vals = np.empty(n_boot)
    for r in range(n_boot):
        ia = gen.integers(0, A.shape[0], A.shape[0])
        ib = gen.integers(0, B.shape[0], B.shape[0])
        vals[r] = _w2(cfg, A[ia], B[ib], key).value
    lo, hi = np.percentile(vals, [15.865525393145708, 84.13447460685429])
    return float(0.5 * (hi - lo))


def clt_checkpoints(cfg: ExperimentConfig) -> list[int]:
    if cfg.grid.get("checkpoints"):
        return [int(c) for c in cfg.grid["checkpoints"]]
    out, k = [], 1
    while k <= int(cfg.grid["k_max"]):
        out.append(k)
        k *= 2
    return out


def coupling_bound(k: int, d: int) -> float:
    return 16.0 * d * math.log(k) / k


@_timed
def run_clt(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    """W2(S_k, N(0, I)) and W2(x_k, N(0, I)) at the checkpoints, plus E|x_k - S_k|^2."""
    pot, noise = build_model(cfg.model, 1e-3)
    d = pot.dim
    if not noise.homogeneous or not np.allclose(noise.covariance(np.zeros(d)), np.eye(d), atol=1e-12):
        raise ConfigError(["clt needs position-independent noise with unit covariance"])
    if not (isinstance(pot, QuadraticPotential) and np.allclose(pot.A, np.eye(d))):
        raise ConfigError(["clt needs the quadratic potential with identity matrix"])
    cps = clt_checkpoints(cfg)
    report = ExperimentReport("clt", cfg.to_dict())
    chain, sums = run_clt_pair(noise, cps[-1], cfg.n_chains, _rng.derive_seed(cfg.seed, _rng.CHAIN, 0),
                               cps, cfg.chain["schedule"], threads)
    s_ests, x_ests, coupling, margins = [], [], [], []
    std = SdeSystem(pot, noise)
    for i, (xs, ss) in enumerate(zip(chain, sums)):
        ref = sample_invariant(std, ExactGaussian(), cfg.n_chains, _rng.derive_seed(cfg.seed, _rng.REFERENCE, i))
        es = _w2(cfg, ss.points, ref, i, 0)
        ex = _w2(cfg, xs.points, ref, i, 1)
        s_ests.append(es)
        x_ests.append(ex)
        report.rows.append(_row(cfg, "clt:partial_sums", xs.k, xs.k, es))
        report.rows.append(_row(cfg, "clt:chain", xs.k, xs.k, ex))
        moment = float(np.mean(np.sum((xs.points - ss.points) ** 2, axis=1)))
        entry = {"k": xs.k, "coupling_moment": moment}
        if xs.k >= 2:
            entry["bound"] = coupling_bound(xs.k, d)
            margins.append(moment - entry["bound"])
        coupling.append(entry)
    report.extras["coupling"] = coupling
    if margins:
        report.checks.append(LemmaCheckReport(
            "clt_coupling_moment", len(margins), float(max(margins)), bool(max(margins) <= 0), 0.0,
            {"rule": "E|x_k - S_k|^2 <= 16 d log(k) / k for k >= 2"},
        ))
    ks = [s.k for s in sums]
    _fit_and_expect(cfg, report, "clt:partial_sums", ks, s_ests)
    _fit_and_expect(cfg, report, "clt:chain", ks, x_ests)
    return report


@_timed
def run_contraction(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    """Synchronous-coupling contraction check at each delta of the grid."""
    n_pairs = int(cfg.contraction["n_pairs"])
    steps = int(cfg.contraction["steps"])
    report = ExperimentReport("contraction", cfg.to_dict())
    for i, delta in enumerate(float(v) for v in cfg.grid["deltas"]):
        p, noise = build_model(cfg.model, delta)
        m_true, L = contraction_constants(p, noise)
        if delta > 1.0 / (2.0 * L) * (1 + 1e-12):
            raise ConfigError([f"delta {delta} violates delta <= 1/(2L) = {1 / (2 * L):.6g}"])
        scale = float(cfg.lemmas["contraction_m_scale"])
        rep = check_contraction(p, noise, delta, n_pairs, steps, _rng.derive_seed(cfg.seed, _rng.PAIRS, i),
                                m=m_true * scale)
        report.checks.append(rep)
        report.rows.append({
            "experiment": "contraction", "grid_value": delta, "k": steps,
            "w2": rep.details["ratio_max"], "stderr": None, "method": "coupled_ratio_max", "seed": cfg.seed,
        })
    return report


@_timed
def run_simulate(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    """Ensemble snapshots at the configured checkpoints (kept in ``extras['snapshots']``)."""
    delta = float(cfg.grid["deltas"][0])
    pot, noise = build_model(cfg.model, delta)
    snaps = run_ensemble(pot, noise, StepSchedule.constant(delta), cfg.n_chains, cfg.grid["checkpoints"],
                         _rng.derive_seed(cfg.seed, _rng.CHAIN, 0), cfg.chain["x0"], threads)
    report = ExperimentReport("simulate", cfg.to_dict())
    report.extras["snapshots"] = snaps
    for s in snaps:
        report.rows.append({
            "experiment": "simulate", "grid_value": delta, "k": s.k,
            "w2": float(np.sqrt(np.mean(np.sum(s.points**2, axis=1)))), "stderr": None,
            "method": "rms_norm", "seed": cfg.seed,
        })
    return report


# ---------------------------------------------------------------------------
# lemma suite
# ---------------------------------------------------------------------------


def _identity_contraction(delta: float, n_pairs: int, seed: int) -> LemmaCheckReport:
    """U = |x|^2 / 2 with homogeneous noise: every coupled ratio is exactly (1 - delta)^2."""
    from .chain import coupled_step

    pot = QuadraticPotential(np.eye(2))
    noise = RademacherNoise(2)
    gen = _rng.substream(seed, _rng.LEMMA, 10)
    x = gen.standard_normal((n_pairs, 2))
    y = x + gen.standard_normal((n_pairs, 2))
    xn, yn = coupled_step(pot, noise, delta, x, y, gen)
    ratio = np.sum((xn - yn) ** 2, axis=1) / np.sum((x - y) ** 2, axis=1)
    err = np.abs(ratio - (1 - delta) ** 2)
    return LemmaCheckReport("contraction_identity", n_pairs, float(err.max()), bool(err.max() <= 1e-12), 1e-12,
                            {"delta": delta})


def _fp_check(name: str, pot, n_points: int, seed: int, analytic: bool) -> LemmaCheckReport:
    d = pot.dim
    system = SdeSystem(pot, RademacherNoise(d))
    gen = _rng.substream(seed, _rng.LEMMA, 11 + (0 if analytic else 1) + (2 if isinstance(pot, LogCoshPotential) else 0))
    pts = 2.0 * gen.standard_normal((n_points, d))
    log_p = lambda x: -float(pot.value(x))
    kw = {"grad_log": lambda x: -pot.grad(x), "hess_log": lambda x: -pot.hess(x)} if analytic else {"h": 1e-3}
    res = np.array([abs(fokker_planck_residual(system, log_p, x, **kw)) for x in pts])
    tol = 1e-8 if analytic else 1e-6
    return LemmaCheckReport(name, n_points, float(res.max()), bool(res.max() <= tol), tol,
                            {"potential": pot.kind, "derivatives": "analytic" if analytic else "finite_difference"})


def lemma_registry(cfg: ExperimentConfig):
    """(name, thunk) for every lemma check; thunks return a LemmaCheckReport."""
    seed = cfg.seed
    trials = int(cfg.lemmas["trials"])
    points = int(cfg.lemmas["points"])
    samples = int(cfg.lemmas["samples"])
    n_pairs = int(cfg.contraction["n_pairs"])
    steps = int(cfg.contraction["steps"])
    m_scale = float(cfg.lemmas["contraction_m_scale"])

    quad = QuadraticPotential(np.eye(2))
    logcosh = LogCoshPotential(2, 0.5)
    rad = RademacherNoise(2)
    spec = random_quadratic_components(8, 2, seed % 2**32, (1.0, 2.5))
    sgd_delta = 0.5 / (2 * spec.component_L)
    sgd = make_sgd_noise(spec, sgd_delta)

    def gauss_ref():
        return sample_invariant(SdeSystem(quad, rad), ExactGaussian(), samples,
                                _rng.derive_seed(seed, _rng.REFERENCE, 99))

    grid = 3.0 * _rng.substream(seed, _rng.LEMMA, 20).standard_normal((50, 2))

    def contraction(pot, noise, delta, key):
        m_true, _ = contraction_constants(pot, noise)
        return check_contraction(pot, noise, delta, n_pairs, steps, _rng.derive_seed(seed, _rng.PAIRS, key),
                                 m=m_true * m_scale)

    def named(rep, name):
        rep.lemma_id = name
        return rep

    return [
        ("contraction_homogeneous", lambda: named(contraction(quad, rad, 0.1, 0), "contraction_homogeneous")),
        ("contraction_homogeneous_logcosh",
         lambda: named(contraction(logcosh, rad, 0.2, 1), "contraction_homogeneous_logcosh")),
        ("contraction_sgd", lambda: named(contraction(spec.potential(), sgd, sgd_delta, 2), "contraction_sgd")),
        ("contraction_identity", lambda: _identity_contraction(0.1, n_pairs, seed)),
        ("fokker_planck_quadratic_analytic", lambda: _fp_check("fokker_planck_quadratic_analytic",
                                                               QuadraticPotential(np.array([[2.0, 0.5], [0.5, 1.0]])),
                                                               points, seed, True)),
        ("fokker_planck_logcosh_analytic",
         lambda: _fp_check("fokker_planck_logcosh_analytic", logcosh, points, seed, True)),
        ("fokker_planck_quadratic_fd", lambda: _fp_check("fokker_planck_quadratic_fd",
                                                         QuadraticPotential(np.array([[2.0, 0.5], [0.5, 1.0]])),
                                                         points, seed, False)),
        ("fokker_planck_logcosh_fd", lambda: _fp_check("fokker_planck_logcosh_fd", logcosh, points, seed, False)),
        ("determinant_taylor", lambda: check_det_expansion((1, 2, 3, 4), (0.1, 0.5, 1.0), trials, seed)),
        ("trace_upper_bound", lambda: check_trace_bound((1, 2, 3, 4), trials, seed)),
        ("xlogx_bound", lambda: check_xlogx((0.1, 0.5, 1.0, 2.0, 10.0), (0.5, 1.0, 10.0, 1e3, 1e6))),
        ("sigma_derivative", lambda: check_sigma_derivative(sgd, grid)),
        ("sigma_derivative_homogeneous", lambda: named(check_sigma_derivative(rad, grid), "sigma_derivative_homogeneous")),
        ("F_invertible", lambda: check_jacobian_invertibility(spec.potential(), sgd,
                                                             min(sgd_delta, 1 / (8 * spec.potential().L)), grid)),
        ("F_invertible_homogeneous",
         lambda: named(check_jacobian_invertibility(logcosh, rad, 1 / (8 * logcosh.L), grid), "F_invertible_homogeneous")),
        ("one_step_displacement", lambda: check_one_step_displacement(quad, rad, 1 / (16 * 2.0), samples, seed)),
        ("subgaussian_tail", lambda: check_subgaussian_tail(gauss_ref(), 1.0, 1.0, np.linspace(0.5, 20.0, 10))),
        ("kth_moment_bound", lambda: check_moment_bound(gauss_ref(), 1.0, 1.0, (1, 2, 3))),
        ("moments_match_gaussian", lambda: _gaussian_moments(gauss_ref())),
        ("bounded_exponent", lambda: check_exponential_moment(np.eye(2), 1.0, 1.0)),
        ("bounded_variance_outside_radius", lambda: check_tail_second_moment(gauss_ref(), 1.0, 1.0)),
        ("clt_schedule", lambda: check_clt_schedule(10**6, 2000, seed)),
    ]


def _gaussian_moments(ref: EmpiricalMeasure) -> LemmaCheckReport:
    """E|x|^2 = d and E|x|^4 = d(d+2) within 3 stderr."""
    pts = ref.points
    n, d = pts.shape
    r2 = np.sum(pts**2, axis=1)
    margins = []
    for vals, target in ((r2, d), (r2**2, d * (d + 2))):
        se = vals.std(ddof=1) / math.sqrt(n)
        margins.append(abs(vals.mean() - target) - 3 * se)
    return LemmaCheckReport("moments_match_gaussian", 2, float(max(margins)), bool(max(margins) <= 0), 0.0,
                            {"second": float(r2.mean()), "fourth": float((r2**2).mean())})


def run_lemma_suite(cfg: ExperimentConfig, threads: int | None = None) -> list[LemmaCheckReport]:
    """Every registered check; failures (including exceptions) are collected, never short-circuited."""
    out = []
    for name, thunk in lemma_registry(cfg):
        try:
            out.append(thunk())
        except Exception as err:  # noqa: BLE001 - a crashing check is a failing check
            out.append(LemmaCheckReport(name, 0, math.inf, False, 0.0, {"error": f"{type(err).__name__}: {err}"}))
    return out


@_timed
def _lemma_report(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    report = ExperimentReport("lemmas", cfg.to_dict())
    report.checks = run_lemma_suite(cfg, threads)
    return report


RUNNERS = {
    "homog_rate": run_homog_rate,
    "inhomog_rate": run_inhomog_rate,
    "clt": run_clt,
    "contraction": run_contraction,
    "lemmas": _lemma_report,
    "simulate": run_simulate,
}


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ExperimentReport:
    return RUNNERS[cfg.experiment](cfg, threads)
