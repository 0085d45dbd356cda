import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from langevin_w2.model import (
    LogCoshPotential,
    QuadraticPotential,
    RademacherNoise,
    SphereNoise,
    make_sgd_noise,
    random_quadratic_components,
)
from langevin_w2.sde import (
    ExactGaussian,
    FineEuler,
    SdeSystem,
    covariance_derivatives,
    euler_maruyama_step,
    fokker_planck_residual,
    psd_sqrt,
    sample_invariant,
    stationarity_operator,
    stationary_covariance,
)

A2 = np.array([[2.0, 0.5], [0.5, 1.0]])


class TestLinearAlgebra:
    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_lyapunov_identity(self, seed, d):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((d, d))
        A = M @ M.T + np.eye(d)
        N = rng.standard_normal((d, d))
        C = N @ N.T
        S = stationary_covariance(A, C)
        assert np.allclose(A @ S + S @ A, 2 * C, atol=1e-9)
        assert np.allclose(S, S.T)

    @given(st.integers(0, 10_000), st.integers(1, 4))
    def test_psd_sqrt(self, seed, d):
        rng = np.random.default_rng(seed)
        M = rng.standard_normal((d, d - 1 if d > 1 else 1))
        C = M @ M.T  # possibly singular
        R = psd_sqrt(C)
        assert np.allclose(R @ R, C, atol=1e-10) and np.allclose(R, R.T)

    def test_psd_sqrt_rejects_indefinite(self):
        with pytest.raises(ValueError):
            psd_sqrt(np.diag([1.0, -0.5]))


class TestReferenceSamplers:
    def test_exact_gaussian_covariance(self):
        system = SdeSystem(QuadraticPotential(A2), SphereNoise(2, 2.0))
        ref = sample_invariant(system, ExactGaussian(), 100_000, seed=0)
        target = stationary_covariance(A2, 2.0 * np.eye(2))
        assert np.allclose(ref.covariance(), target, atol=0.03)

    def test_exact_gaussian_needs_quadratic(self):
        with pytest.raises(ValueError):
            sample_invariant(SdeSystem(LogCoshPotential(2, 0.5), RademacherNoise(2)), ExactGaussian(), 200, 0)

    def test_fine_euler_matches_ornstein_uhlenbeck(self):
        system = SdeSystem(QuadraticPotential(A2), RademacherNoise(2))
        ref = sample_invariant(system, FineEuler(0.01, n_trajectories=20_000), 20_000, seed=1)
        target = np.linalg.inv(A2)
        # Euler bias is O(delta_ref), sampling error about 0.01
        assert np.allclose(ref.covariance(), target, atol=0.04)
        assert np.allclose(ref.mean(), 0.0, atol=0.03)

    def test_fine_euler_single_trajectory(self):
        system = SdeSystem(QuadraticPotential(np.eye(1)), RademacherNoise(1))
        ref = sample_invariant(system, FineEuler(0.02), 2000, seed=2)
        assert abs(ref.covariance()[0, 0] - 1.0) < 0.15

    def test_fine_euler_validates_ratio(self):
        with pytest.raises(ValueError):
            FineEuler(0.01, delta_experiment=0.1)
        FineEuler(0.002, delta_experiment=0.1)

    def test_fine_euler_thread_independent(self):
        spec = random_quadratic_components(4, 2, 0)
        system = SdeSystem(spec.potential(), make_sgd_noise(spec, 0.1))
        cfg = FineEuler(0.002, burn_in=50, n_trajectories=2100)
        a = sample_invariant(system, cfg, 2100, seed=3, threads=1)
        b = sample_invariant(system, cfg, 2100, seed=3, threads=4)
        assert a.points.tobytes() == b.points.tobytes()

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            sample_invariant(SdeSystem(QuadraticPotential(np.eye(2)), RademacherNoise(2)), ExactGaussian(), 50, 0)

    def test_euler_maruyama_position_dependent_noise_has_right_covariance(self):
        spec = random_quadratic_components(5, 2, 4)
        noise = make_sgd_noise(spec, 0.2)
        system = SdeSystem(spec.potential(), noise)
        x = np.array([1.0, -2.0])
        n, delta = 200_000, 0.01
        z = np.random.default_rng(0).standard_normal((n, 2))
        out = euler_maruyama_step(system, delta, np.broadcast_to(x, (n, 2)), z)
        incr = (out - (x - delta * spec.potential().grad(x))) / np.sqrt(2 * delta)
        assert np.allclose(incr.T @ incr / n, noise.covariance(x), atol=0.02)


def _logp(pot):
    return lambda x: -float(pot.value(x))


class TestFokkerPlanck:
    @pytest.mark.parametrize("pot", [QuadraticPotential(A2), LogCoshPotential(2, 0.8)])
    def test_gibbs_density_is_stationary(self, pot):
        system = SdeSystem(pot, RademacherNoise(2))
        rng = np.random.default_rng(0)
        for x in 2 * rng.standard_normal((50, 2)):
            r = fokker_planck_residual(system, _logp(pot), x, grad_log=lambda y: -pot.grad(y),
                                       hess_log=lambda y: -pot.hess(y))
            assert abs(r) <= 1e-8
            assert abs(fokker_planck_residual(system, _logp(pot), x, h=1e-3)) <= 1e-6

    def test_wrong_density_is_not_stationary(self):
        pot = QuadraticPotential(A2)
        system = SdeSystem(pot, RademacherNoise(2))
        x = np.array([0.7, -0.3])
        assert abs(fokker_planck_residual(system, lambda y: -2 * float(pot.value(y)), x)) > 1e-3

    def test_non_unit_noise_breaks_gibbs(self):
        pot = QuadraticPotential(A2)
        system = SdeSystem(pot, SphereNoise(2, 2.0))
        assert abs(fokker_planck_residual(system, _logp(pot), np.array([0.5, 0.5]))) > 1e-3

    @given(arrays(float, 2, elements=st.floats(-2, 2)), st.floats(-5, 5), st.floats(-5, 5))
    @settings(max_examples=30, deadline=None)
    def test_operator_is_linear_in_density(self, x, a, b):
        spec = random_quadratic_components(3, 2, 1)
        system = SdeSystem(spec.potential(), make_sgd_noise(spec, 0.3))
        rng = np.random.default_rng(0)
        p1, p2 = rng.uniform(0.1, 1, 2)
        g1, g2 = rng.standard_normal((2, 2))
        H1, H2 = rng.standard_normal((2, 2, 2))
        lhs = stationarity_operator(system, a * p1 + b * p2, a * g1 + b * g2, a * H1 + b * H2, x)
        rhs = a * stationarity_operator(system, p1, g1, H1, x) + b * stationarity_operator(system, p2, g2, H2, x)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)

    def test_covariance_divergence_for_affine_noise(self):
        # C(x) is quadratic in x, so central differences are exact up to rounding
        spec = random_quadratic_components(4, 2, 5)
        noise = make_sgd_noise(spec, 0.3)
        system = SdeSystem(spec.potential(), noise)
        x = np.array([0.4, -0.9])
        div, ddiv = covariance_derivatives(system, x)
        B = spec.mean_hessian[None] - spec.hessians
        w = np.sqrt(0.3) * x
        # C = mean_s r_s r_s^T / 2 with r_s = B_s w + a_s and w = sqrt(delta) x
        r = np.einsum("sij,j->si", B, w) + spec.anchors
        exact_div = 0.5 * np.sqrt(0.3) * np.mean(
            np.einsum("sij,sj->si", B, r) + r * np.trace(B, axis1=1, axis2=2)[:, None], axis=0)
        assert np.allclose(div, exact_div, atol=1e-6)
        exact_ddiv = 0.5 * 0.3 * np.mean(np.einsum("sij,sji->s", B, B) + np.trace(B, axis1=1, axis2=2) ** 2)
        assert ddiv == pytest.approx(exact_ddiv, rel=1e-4)
        assert np.allclose(covariance_derivatives(SdeSystem(spec.potential(), RademacherNoise(2)), x)[0], 0)
