import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_w2.analysis import (
    LemmaCheckReport,
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
    fit_rate_slope,
    gaussian_exponential_moment,
    moment_bound,
    xlogx_threshold,
)
from langevin_w2.model import (
    LogCoshPotential,
    QuadraticPotential,
    RademacherNoise,
    make_sgd_noise,
    random_quadratic_components,
)
from langevin_w2.wasserstein import EmpiricalMeasure, W2Estimate

QUAD = QuadraticPotential(np.eye(2))
RAD = RademacherNoise(2)


class TestRateFit:
    @given(st.floats(-2, 2), st.floats(-3, 3), st.integers(4, 10))
    def test_recovers_power_law(self, slope, logc, n):
        xs = np.geomspace(1e-3, 1e-1, n)
        fit = fit_rate_slope([(x, math.exp(logc) * x**slope) for x in xs])
        assert fit.slope == pytest.approx(slope, abs=1e-12)
        assert fit.intercept == pytest.approx(logc, abs=1e-8)
        assert fit.r_squared == pytest.approx(1.0) or slope == pytest.approx(0.0, abs=1e-12)

    def test_accepts_estimates_and_reports_interval(self):
        rng = np.random.default_rng(0)
        xs = np.geomspace(0.01, 1, 8)
        fit = fit_rate_slope([(x, W2Estimate(float(x**0.5 * np.exp(0.05 * rng.standard_normal())), "t"))
                              for x in xs])
        assert fit.slope_ci[0] < 0.5 < fit.slope_ci[1]
        assert fit.span_decades == pytest.approx(2.0)

    def test_needs_four_positive_points(self):
        with pytest.raises(ValueError):
            fit_rate_slope([(1, 1), (2, 2), (3, 3)])
        with pytest.raises(ValueError):
            fit_rate_slope([(1, 1), (2, 0), (3, 1), (4, 1)])


class TestContraction:
    def test_passes_homogeneous_and_sgd(self):
        assert check_contraction(QUAD, RAD, 0.1, 200, 200, seed=0).passed
        assert check_contraction(LogCoshPotential(2, 1.0), RAD, 0.2, 200, 200, seed=0).passed
        spec = random_quadratic_components(8, 2, 0, (1.0, 2.5))
        delta = 1 / (2 * spec.component_L)
        assert check_contraction(spec.potential(), make_sgd_noise(spec, delta), delta, 200, 200, seed=0).passed

    def test_fault_injection_fails(self):
        assert not check_contraction(QUAD, RAD, 0.1, 100, 50, seed=0, m=10.0).passed

    def test_precondition(self):
        with pytest.raises(ValueError):
            check_contraction(QUAD, RAD, 0.6, 10, 10, seed=0)

    @given(st.floats(1.0, 4.0), st.floats(1.0, 4.0))
    @settings(max_examples=20, deadline=None)
    def test_ratio_monotone_in_m(self, m1, m2):
        lo, hi = sorted((m1, m2))
        delta = 1 / (2 * 4.0)
        r_lo = check_contraction(QuadraticPotential(lo * np.eye(2)), RAD, delta, 20, 5, seed=1).details["ratio_max"]
        r_hi = check_contraction(QuadraticPotential(hi * np.eye(2)), RAD, delta, 20, 5, seed=1).details["ratio_max"]
        assert r_hi <= r_lo + 1e-12


@pytest.fixture(scope="module")
def reference():
    return EmpiricalMeasure(np.random.default_rng(0).standard_normal((100_000, 2)))


class TestTailsAndMoments:
    def test_gaussian_reference_passes(self, reference):
        assert check_subgaussian_tail(reference, 1.0, 1.0, np.linspace(0.5, 20, 10)).passed
        assert check_moment_bound(reference, 1.0, 1.0).passed
        assert check_tail_second_moment(reference, 1.0, 1.0).passed
        assert check_exponential_moment(np.eye(2), 1.0, 1.0).passed

    def test_heavy_tails_fail(self):
        # a cloud with 5% mass at |x|^2 = 400 violates the tail envelope
        pts = np.random.default_rng(1).standard_normal((10_000, 2))
        pts[:500] = 20.0 / np.sqrt(2)
        assert not check_subgaussian_tail(EmpiricalMeasure(pts), 1.0, 1.0, [100.0, 200.0]).passed

    def test_exponential_moment_closed_form(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((400_000, 2))
        mc = np.mean(np.exp(0.125 * np.sum(x**2, axis=1)))
        assert mc == pytest.approx(gaussian_exponential_moment(np.eye(2), 0.125), rel=0.01)
        assert gaussian_exponential_moment(np.eye(2), 0.5) == math.inf

    def test_moment_bound_shape(self):
        assert moment_bound(1, 1.0, 1.0, 2) == 256.0
        assert moment_bound(3, 1.0, 1.0, 2) >= moment_bound(2, 1.0, 1.0, 2)

    def test_tail_radius_precondition(self, reference):
        with pytest.raises(ValueError):
            check_tail_second_moment(reference, 1.0, 1.0, radii=[1.0])


class TestInequalities:
    def test_det_and_trace(self):
        assert check_det_expansion((1, 2, 3, 4), (0.1, 0.5, 1.0), 300, seed=0).passed
        assert check_trace_bound((1, 2, 3, 5), 300, seed=0).passed

    @given(st.floats(0.05, 20), st.floats(0.01, 1e6))
    def test_xlogx_threshold_holds(self, c, a):
        thr = xlogx_threshold(a, c)
        xs = np.maximum(thr, 1e-9) * np.geomspace(1, 1e6, 50)
        assert np.all(np.log(a * xs) / c <= xs + 1e-12)

    def test_xlogx_grid(self):
        assert check_xlogx((0.1, 1.0, 10.0), (0.5, 10.0, 1e6)).passed

    def test_sigma_derivative_and_invertibility(self):
        spec = random_quadratic_components(6, 2, 3, (1.0, 2.5))
        noise = make_sgd_noise(spec, 0.1)
        grid = 3 * np.random.default_rng(0).standard_normal((20, 2))
        assert check_sigma_derivative(noise, grid).passed
        assert check_sigma_derivative(RAD, grid).passed
        pot = spec.potential()
        assert check_jacobian_invertibility(pot, noise, min(0.1, 1 / (8 * pot.L)), grid).passed
        with pytest.raises(ValueError):
            check_jacobian_invertibility(pot, noise, 1.0, grid)

    def test_one_step_displacement(self):
        rep = check_one_step_displacement(QUAD, RAD, 1 / 32, 20_000, seed=0)
        assert rep.passed and rep.details["violations"] == 0
        with pytest.raises(ValueError):
            check_one_step_displacement(QUAD, RAD, 0.1, 10)

    def test_clt_schedule(self):
        assert check_clt_schedule(10**5, 500, seed=1).passed


class TestReport:
    def test_round_trip(self):
        r = LemmaCheckReport("x", 3, -0.5, True, 0.0, {"a": [1.0, 2.0]})
        assert LemmaCheckReport.from_dict(r.to_dict()) == r
