import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smcda import (
    CapabilityError,
    DomainError,
    IntegrationError,
    LinearGaussian,
    LinearGaussianParams,
    Lorenz96,
    Lorenz96Params,
    RngStream,
    StochasticVolatility,
    SVParams,
)
from smcda.ssm import lg_propagate, lorenz96_drift, rk4_step, sv_log_obs, sv_propagate

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


class TestSV:
    def test_propagate_zero(self):
        assert sv_propagate(0.0, SVParams(0.5, 2.0, 1.0), 0.0) == 0.0

    def test_propagate_deterministic_part(self):
        assert sv_propagate(1.0, SVParams(0.9, 0.3), 0.0) == pytest.approx(0.9, abs=1e-15)

    def test_propagate_with_noise(self):
        assert sv_propagate(1.0, SVParams(0.9, 0.3), 2.0) == pytest.approx(1.5, abs=1e-15)

    def test_propagate_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            sv_propagate(np.nan, SVParams(), 0.0)
        with pytest.raises(DomainError):
            sv_propagate(0.0, SVParams(), np.inf)

    @pytest.mark.parametrize(
        "y,x,expected",
        [(0.0, 0.0, -HALF_LOG_2PI), (0.0, 2.0, -HALF_LOG_2PI - 1.0), (1.0, 0.0, -HALF_LOG_2PI - 0.5)],
    )
    def test_log_obs(self, y, x, expected):
        assert sv_log_obs(y, x, SVParams(beta=1.0)) == pytest.approx(expected, abs=1e-14)

    def test_params_validated(self):
        with pytest.raises(DomainError):
            SVParams(sigma=0.0)
        with pytest.raises(DomainError):
            SVParams(beta=-1.0)

    def test_transition_density_integrates_to_one(self):
        m = StochasticVolatility(SVParams(0.9, 0.3, 0.6))
        grid = np.linspace(-6, 6, 120001)
        for x in (-1.0, 0.0, 2.5):
            dens = np.exp(m.log_trans_density(np.array([[x]]), grid[:, None]))
            assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-6

    def test_transition_density_is_gaussian(self):
        m = StochasticVolatility(SVParams(0.9, 0.3, 0.6))
        lp = m.log_trans_density(np.array([[1.0]]), np.array([[1.2]]))[0]
        expect = -HALF_LOG_2PI - np.log(0.3) - 0.5 * ((1.2 - 0.9) / 0.3) ** 2
        assert lp == pytest.approx(expect, abs=1e-13)

    def test_simulated_variance_matches_stationary(self):
        p = SVParams(0.9, 0.3, 0.6)
        xs, _ = StochasticVolatility(p).simulate(100_000, RngStream(5))
        x = xs[1:, 0]
        v = p.stationary_var
        # AR(1) sample variance: Var(s^2) ~ 2 v^2 (1 + phi^2) / (1 - phi^2) / T
        se = np.sqrt(2 * v**2 * (1 + p.phi**2) / (1 - p.phi**2) / x.size)
        assert abs(x.var() - v) < 4 * se


class TestLorenz96:
    def test_equilibrium_has_zero_drift(self):
        assert np.all(lorenz96_drift(np.full(40, 8.0)) == 0.0)

    def test_zero_state_drift_is_forcing(self):
        assert np.all(lorenz96_drift(np.zeros(40)) == 8.0)

    def test_single_bump_matches_stencil(self):
        K = 40
        x = np.zeros(K)
        x[0] = 1.0
        expect = np.empty(K)
        for k in range(K):
            expect[k] = (x[(k + 1) % K] - x[k - 2]) * x[k - 1] - x[k] + 8.0
        np.testing.assert_array_equal(lorenz96_drift(x), expect)
        # explicit values: only the k=0 component loses x_0 itself
        assert expect[0] == 7.0 and expect[1] == 8.0

    def test_too_short_rejected(self):
        with pytest.raises(DomainError):
            lorenz96_drift(np.zeros(3))

    @given(st.integers(4, 30), st.integers(0, 50), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_shift_equivariance(self, K, shift, seed):
        x = np.random.default_rng(seed).normal(size=K) * 5
        np.testing.assert_array_equal(lorenz96_drift(np.roll(x, shift)), np.roll(lorenz96_drift(x), shift))

    def test_rk4_fixed_point(self):
        x = np.full(40, 8.0)
        for h in (0.001, 0.05, 0.3):
            np.testing.assert_array_equal(rk4_step(x, h), x)

    def test_rk4_consistency(self):
        x = np.random.default_rng(0).normal(8.0, 1.0, 40)
        errs = []
        hs = [1e-2, 5e-3, 2.5e-3]
        for h in hs:
            errs.append(np.linalg.norm(rk4_step(x, h) - x - h * lorenz96_drift(x)))
        slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
        assert np.all(np.abs(slopes - 2.0) < 0.1)

    @staticmethod
    def _fine(x, h, n):
        for _ in range(n):
            x = rk4_step(x, h)
        return x

    def test_rk4_against_fine_reference(self):
        x = np.full(40, 8.0) + np.random.default_rng(1).normal(0, 1e-3, 40)
        err = np.abs(rk4_step(x, 0.01) - self._fine(x, 0.0001, 100))
        assert np.max(err) < 1e-8

    def test_rk4_local_error_is_fifth_order(self):
        x = np.full(40, 8.0) + np.random.default_rng(1).normal(0, 0.5, 40)
        errs = [np.max(np.abs(rk4_step(x, h) - self._fine(x, h / 100, 100))) for h in (0.02, 0.01)]
        assert 4.5 < np.log2(errs[0] / errs[1]) < 5.5

    def test_rk4_nonfinite_raises(self):
        with pytest.raises(IntegrationError):
            rk4_step(np.tile([1e200, -1e200], 20), 0.05)

    def test_model_defaults_and_capability(self):
        m = Lorenz96()
        assert m.dim_state == 40 and m.dim_obs == 20
        assert not m.has_transition_density
        with pytest.raises(CapabilityError):
            m.log_trans_density(np.zeros((1, 40)), np.zeros((1, 40)))
        np.testing.assert_array_equal(m.params.observed, np.arange(0, 40, 2))

    def test_propagate_applies_substeps(self):
        p = Lorenz96Params(K=10, dt=0.05)
        m = Lorenz96(p)
        x = np.random.default_rng(2).normal(8, 1, (3, 10))
        manual = x.copy()
        for _ in range(p.substeps):
            manual = rk4_step(manual, p.dt / p.substeps, p.forcing)
        np.testing.assert_array_equal(m.propagate(x, np.random.default_rng(0)), manual)


class TestLinearGaussian:
    def test_identity_dynamics(self):
        p = LinearGaussianParams(np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.zeros(2), np.eye(2))
        x = np.array([1.5, -2.0])
        np.testing.assert_array_equal(lg_propagate(x, p, np.zeros(2)), x)

    def test_zero_dynamics(self):
        p = LinearGaussianParams(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), np.zeros(2), np.eye(2))
        np.testing.assert_array_equal(lg_propagate(np.array([3.0, 4.0]), p, np.zeros(2)), np.zeros(2))

    def test_scalar_arithmetic(self):
        p = LinearGaussianParams.scalar(phi=0.5)
        assert lg_propagate(np.array([2.0]), p, np.array([0.1]))[0] == pytest.approx(1.1, abs=1e-15)

    def test_dimension_mismatch(self):
        p = LinearGaussianParams.scalar()
        with pytest.raises(DomainError):
            lg_propagate(np.array([1.0, 2.0]), p, np.zeros(2))
        with pytest.raises(DomainError):
            LinearGaussianParams(np.eye(2), np.eye(3), np.eye(2), np.eye(2), np.zeros(2), np.eye(2))

    def test_covariance_validation(self):
        with pytest.raises(DomainError):
            LinearGaussianParams.scalar(q=-1.0)
        with pytest.raises(DomainError):
            LinearGaussianParams([[1.0]], [[1.0]], [[1.0]], [[1.0]], [0.0], [[np.nan]])

    def test_degenerate_q_has_no_density(self):
        m = LinearGaussian(LinearGaussianParams.scalar(q=0.0))
        assert not m.has_transition_density
        with pytest.raises(CapabilityError):
            m.require_transition_density("test")

    def test_noise_free_limit(self):
        p = LinearGaussianParams(0.9 * np.eye(2), np.zeros((2, 2)), np.eye(2), 1e-12 * np.eye(2), np.ones(2), np.eye(2))
        xs, ys = LinearGaussian(p).simulate(25, RngStream(4))
        assert np.max(np.abs(ys - xs[1:])) < 1e-5


class TestDeterminism:
    @pytest.mark.parametrize("model", [StochasticVolatility(), Lorenz96(Lorenz96Params(K=8))])
    def test_simulation_bit_identical(self, model):
        a = model.simulate(20, RngStream(11))
        b = model.simulate(20, RngStream(11))
        for u, v in zip(a, b):
            assert u.tobytes() == v.tobytes()

    def test_stream_addresses_are_independent(self):
        s = RngStream(3)
        a = s.normal(1, "propagate", 1000)
        b = s.normal(2, "propagate", 1000)
        c = s.child(1).normal(1, "propagate", 1000)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.15

    def test_stream_replays(self):
        s = RngStream(3)
        assert np.array_equal(s.uniform(5, "resample", 7), RngStream(3).uniform(5, "resample", 7))

    def test_rewinder_matches_fresh_generators(self):
        from smcda.rng import Rewinder

        s = RngStream(8).child(4)
        r = Rewinder(s)
        for t, purpose in [(0, "initial"), (3, "resample"), (3, "propagate"), (0, "initial"), (9, "custom")]:
            a = r.at(t, purpose).standard_normal(7)
            b = s.generator(t, purpose).standard_normal(7)
            assert a.tobytes() == b.tobytes()
        # a partly consumed buffer must not leak into the next address
        r.at(1, "resample").integers(0, 2**32, dtype=np.uint32)
        assert r.at(2, "resample").random() == s.generator(2, "resample").random()

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            RngStream(-1)
