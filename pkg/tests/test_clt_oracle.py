"""Exact W2 between Rademacher partial sums and N(0, I).

Coordinates of S_k are independent copies of (2 Bin(k, 1/2) - k) / sqrt(k), so
W2(S_k, N(0, I))^2 = d * W2_1D^2, and the 1-D term is an integral of
(F^{-1} - Phi^{-1})^2 that splits over the atoms of F. This oracle is independent
of the sampler and the estimators; it pins down the true rate that the
empirical pipeline is trying to resolve.
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from langevin_w2.analysis import fit_rate_slope
from langevin_w2.experiments import ExperimentConfig, run_clt


def exact_w2(k: int, d: int) -> float:
    i = np.arange(k + 1)
    atoms = (2 * i - k) / np.sqrt(k)
    hi = np.minimum(np.cumsum(stats.binom.pmf(i, k, 0.5)), 1.0)
    hi[-1] = 1.0
    lo = np.concatenate([[0.0], hi[:-1]])

    def primitives(u):
        # phi(z) = -int Phi^{-1} du and Phi(z) - z phi(z) = int Phi^{-1}(u)^2 du, with z = Phi^{-1}(u)
        z = stats.norm.ppf(u)
        finite = np.isfinite(z)
        phi = np.where(finite, stats.norm.pdf(np.where(finite, z, 0.0)), 0.0)
        return phi, u - np.where(finite, z, 0.0) * phi

    phi_lo, sq_lo = primitives(lo)
    phi_hi, sq_hi = primitives(hi)
    per_atom = atoms**2 * (hi - lo) - 2 * atoms * (phi_lo - phi_hi) + (sq_hi - sq_lo)
    return float(np.sqrt(d * per_atom.sum()))


def test_single_step_closed_form():
    # S_1 is the Rademacher vector itself: E(sign Z - Z)^2 = 2 - 2 E|Z|
    assert exact_w2(1, 1) ** 2 == pytest.approx(2 - 2 * np.sqrt(2 / np.pi), abs=1e-12)


def test_matches_quantile_coupling_by_monte_carlo():
    rng = np.random.default_rng(0)
    n = 2_000_000
    s = np.sort((2 * rng.binomial(8, 0.5, n) - 8) / np.sqrt(8))
    z = stats.norm.ppf((np.arange(n) + 0.5) / n)
    assert np.sqrt(np.mean((s - z) ** 2)) == pytest.approx(exact_w2(8, 1), rel=5e-3)


@given(st.integers(16, 5000))
def test_lattice_rounding_asymptote(k):
    # sqrt(k) W2 settles near the rounding error of a width-2/sqrt(k) lattice, 1/sqrt(3) per coordinate
    assert np.sqrt(k) * exact_w2(k, 2) == pytest.approx(np.sqrt(2 / 3), rel=0.01)


def test_true_rate_on_acceptance_grid_is_half():
    ks = [2**j for j in range(6, 15)]
    fit = fit_rate_slope([(k, exact_w2(k, 2)) for k in ks])
    assert fit.slope == pytest.approx(-0.5, abs=0.005) and fit.r_squared > 0.9999
    # the smallest true distance on this grid, for comparison with the empirical floor
    assert exact_w2(ks[-1], 2) < 0.007


def test_pipeline_agrees_where_signal_exceeds_floor():
    rep = run_clt(ExperimentConfig.from_dict({
        "experiment": "clt", "seed": 5, "n_chains": 500,
        "model": {"potential": {"kind": "quadratic", "matrix": [[1.0, 0.0], [0.0, 1.0]]},
                  "noise": {"family": "rademacher"}},
        "grid": {"checkpoints": [1, 2, 4]},
    }))
    rows = [r for r in rep.rows if r["experiment"] == "clt:partial_sums"]
    for r in rows:
        assert r["w2"] == pytest.approx(exact_w2(r["k"], 2), rel=0.2)
