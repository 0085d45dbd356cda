import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langevin_w2.chain import (
    ChainDivergence,
    EnsembleSnapshot,
    StepSchedule,
    coupled_step,
    dyadic_checkpoints,
    initial_cloud,
    run_clt_pair,
    run_clt_sequence,
    run_ensemble,
    run_partial_sums,
    step_transition,
)
from langevin_w2.model import (
    LogCoshPotential,
    QuadraticPotential,
    RademacherNoise,
    SphereNoise,
    make_sgd_noise,
    random_quadratic_components,
)

QUAD = QuadraticPotential(np.eye(2))
RAD = RademacherNoise(2)


def clt_coefficients(k):
    """x_k = sum_j a_j eta_j under the CLT schedule, by unrolling the recursion exactly."""
    deltas = StepSchedule("clt").values(k)
    a = np.zeros(k)
    for j in range(k):
        a[:j] *= 1.0 - deltas[j]
        a[j] = np.sqrt(2.0 * deltas[j])
    return a


class TestStepTransition:
    @given(st.floats(1e-4, 0.5), st.integers(0, 3))
    def test_matches_formula(self, delta, i):
        pot = LogCoshPotential(2, 0.5)
        x = np.array([0.3, -1.2])
        eta = RAD.outcomes(x)[0][i]
        out = step_transition(pot, RAD, delta, x, eta=eta)
        assert np.allclose(out, x - delta * pot.grad(x) + np.sqrt(2 * delta) * eta)

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            step_transition(QUAD, RAD, 0.0, np.zeros(2), np.random.default_rng(0))

    @given(st.floats(1e-3, 0.5))
    def test_coupled_quadratic_identity_is_exact_contraction(self, delta):
        rng = np.random.default_rng(0)
        x, y = rng.standard_normal((2, 50, 2))
        xn, yn = coupled_step(QUAD, RAD, delta, x, y, rng)
        assert np.allclose(xn - yn, (1 - delta) * (x - y), atol=1e-14)


class TestSchedule:
    def test_clt_values(self):
        k = np.arange(1, 101)
        v = StepSchedule("clt").values(100)
        assert np.allclose(v, (np.sqrt(k + 1) - np.sqrt(k)) / np.sqrt(k + 1))
        assert np.allclose(1 - v, np.sqrt(k / (k + 1)))

    def test_harmonic_and_constant(self):
        assert np.allclose(StepSchedule("clt_harmonic").values(3), [1 / 3, 1 / 5, 1 / 7])
        assert np.allclose(StepSchedule.constant(0.1).values(4), 0.1)
        with pytest.raises(ValueError):
            StepSchedule.constant(0.0)

    def test_dyadic(self):
        assert dyadic_checkpoints(20) == [1, 2, 4, 8, 16]


class TestEnsemble:
    def test_shapes_and_finiteness(self):
        snaps = run_ensemble(QUAD, RAD, StepSchedule.constant(0.1), 300, [1, 5, 10], seed=3)
        assert [s.k for s in snaps] == [1, 5, 10]
        assert all(s.points.shape == (300, 2) and np.all(np.isfinite(s.points)) for s in snaps)

    def test_ar1_stationary_variance(self):
        # x <- (1 - d) x + sqrt(2 d) eta has stationary variance 2 d / (1 - (1 - d)^2) per coordinate
        delta = 0.1
        snap = run_ensemble(QUAD, RAD, StepSchedule.constant(delta), 40_000, [300], seed=1)[0]
        target = 2 * delta / (1 - (1 - delta) ** 2)
        var = snap.points.var(axis=0)
        se = target * np.sqrt(2 / 40_000) * 1.5
        assert np.all(np.abs(var - target) < 4 * se)

    def test_thread_count_does_not_change_results(self):
        spec = random_quadratic_components(4, 2, 0, (1.0, 2.0))
        for noise, pot in ((RAD, QUAD), (make_sgd_noise(spec, 0.05), spec.potential())):
            kw = dict(n_chains=2500, checkpoints=[3, 17], seed=99, x0={"kind": "gaussian", "scale": 2.0})
            a = run_ensemble(pot, noise, StepSchedule.constant(0.05), threads=1, **kw)
            b = run_ensemble(pot, noise, StepSchedule.constant(0.05), threads=3, **kw)
            for sa, sb in zip(a, b):
                assert sa.points.tobytes() == sb.points.tobytes()

    def test_seed_changes_results(self):
        a = run_ensemble(QUAD, RAD, StepSchedule.constant(0.1), 100, [5], seed=1)[0]
        b = run_ensemble(QUAD, RAD, StepSchedule.constant(0.1), 100, [5], seed=2)[0]
        assert not np.array_equal(a.points, b.points)

    def test_noise_factory_per_delta(self):
        spec = random_quadratic_components(3, 2, 1)
        seen = []

        def factory(delta):
            seen.append(delta)
            return make_sgd_noise(spec, delta)

        run_ensemble(spec.potential(), factory, StepSchedule("clt_harmonic"), 10, [3], seed=0)
        assert sorted(set(seen)) == sorted({1 / 3, 1 / 5, 1 / 7})

    def test_divergence_guard_names_chain_and_step(self):
        with pytest.raises(ChainDivergence) as err:
            run_ensemble(QuadraticPotential(np.eye(2)), RAD, StepSchedule.constant(3.0), 5, [200], seed=0)
        assert err.value.step is not None and err.value.chain_id is not None

    def test_invalid_checkpoints(self):
        with pytest.raises(ValueError):
            run_ensemble(QUAD, RAD, StepSchedule.constant(0.1), 10, [5, 5], seed=0)

    def test_snapshot_rejects_nonfinite(self):
        with pytest.raises(ChainDivergence):
            EnsembleSnapshot(1, np.array([[np.inf, 0.0]]))

    def test_initial_clouds(self):
        assert np.all(initial_cloud(None, 4, 2, 0) == 0)
        assert np.all(initial_cloud([1.0, 2.0], 3, 2, 0) == [1.0, 2.0])
        g = initial_cloud({"kind": "gaussian", "scale": 3.0}, 50_000, 2, 0)
        assert abs(g.std() - 3.0) < 0.05
        with pytest.raises(ValueError):
            initial_cloud(np.zeros((3, 3)), 4, 2, 0)


class TestClt:
    def test_first_partial_sum_is_the_noise(self):
        s1 = run_partial_sums(RAD, 1, 200, seed=4)[0]
        assert set(np.unique(s1.points)) <= {-1.0, 1.0}
        x1 = run_clt_sequence(RAD, 1, 200, seed=4)[0]
        # x_1 = sqrt(2 delta_1) eta_1 with the same draw
        assert np.allclose(x1.points, np.sqrt(2 * StepSchedule("clt").value_at(1)) * s1.points)

    def test_pair_matches_separate_runs(self):
        xs, ss = run_clt_pair(RAD, 64, 300, seed=8)
        assert np.array_equal(xs[-1].points, run_clt_sequence(RAD, 64, 300, seed=8)[-1].points)
        assert np.array_equal(ss[-1].points, run_partial_sums(RAD, 64, 300, seed=8)[-1].points)

    def test_partial_sums_are_normalized_sums(self):
        # S_k * sqrt(k) is an integer vector with the parity of k for Rademacher draws
        s = run_partial_sums(RAD, 8, 100, seed=2, checkpoints=[7])[0].points * np.sqrt(7)
        assert np.allclose(s, np.round(s)) and np.all(np.round(s) % 2 == 1)

    @pytest.mark.parametrize("k", [2, 16, 256])
    def test_coupling_moment_matches_exact_coefficients(self, k):
        a = clt_coefficients(k)
        exact = 2 * np.sum((a - 1 / np.sqrt(k)) ** 2)
        xs, ss = run_clt_pair(RAD, k, 20_000, seed=5, checkpoints=[k])
        sq = np.sum((xs[0].points - ss[0].points) ** 2, axis=1)
        assert abs(sq.mean() - exact) < 4 * sq.std() / np.sqrt(len(sq))
        assert exact <= 16 * 2 * np.log(k) / k

    def test_rejects_non_unit_covariance(self):
        with pytest.raises(ValueError):
            run_clt_sequence(SphereNoise(2, 1.0), 4, 10, seed=0)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 200))
    def test_unrolled_coefficients_closed_form(self, k):
        # prod_{i>j} (1 - delta_i) = sqrt((j + 1) / (k + 1)) telescopes
        j = np.arange(1, k + 1)
        closed = np.sqrt(2 * StepSchedule("clt").values(k)) * np.sqrt((j + 1) / (k + 1))
        assert np.allclose(clt_coefficients(k), closed)
