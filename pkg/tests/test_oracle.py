import numpy as np
import pytest
from scipy.stats import multivariate_normal

from smcda import DomainError, LinearGaussian, LinearGaussianParams, RngStream
from smcda.enkf import kalman_gain
from smcda.oracle import gain, grid_posterior, kalman_filter, kalman_log_likelihood, rts_smoother
from smcda.ssm import ObservationOperator

from conftest import random_stable_lg


def dense_joint(p: LinearGaussianParams, T: int):
    """Mean and covariance of (x_0..x_T, y_1..y_T) for a scalar model."""
    phi, q, h, r = p.Phi[0, 0], p.Q[0, 0], p.H[0, 0], p.R[0, 0]
    n = 1 + 2 * T  # x0, w_1..w_T, v_1..v_T
    A = np.zeros((T + 1, n))
    A[0, 0] = 1.0
    for t in range(1, T + 1):
        A[t] = phi * A[t - 1]
        A[t, t] = 1.0
    B = h * A[1:].copy()
    for t in range(1, T + 1):
        B[t - 1, T + t] = 1.0
    S = np.diag([p.P0[0, 0]] + [q] * T + [r] * T)
    mu = np.zeros(n)
    mu[0] = p.m0[0]
    M = np.vstack([A, B])
    return M @ mu, M @ S @ M.T


def random_scalar(seed):
    g = np.random.default_rng(seed)
    return LinearGaussianParams.scalar(
        phi=g.uniform(-0.95, 0.95), q=g.uniform(0.2, 2), h=g.uniform(0.5, 2), r=g.uniform(0.2, 2),
        m0=g.normal(), p0=g.uniform(0.5, 2),
    )


class TestKalman:
    def test_uninformative_limit(self):
        p0 = random_stable_lg(3, 0)
        P_scale = 1e8 * np.max(np.linalg.eigvalsh(p0.Q + p0.P0)) * 10
        p = LinearGaussianParams(p0.Phi, p0.Q, np.eye(3), P_scale * np.eye(3), p0.m0 + 1.0, p0.P0)
        _, ys = LinearGaussian(p0).simulate(10, RngStream(1))
        kf = kalman_filter(p, ys @ np.eye(3))
        assert np.max(np.abs(kf.filt_mean[1:] - kf.pred_mean[1:])) < 1e-6

    def test_static_mean_estimation(self):
        P0, R = 2.0, 0.5
        p = LinearGaussianParams.scalar(phi=1.0, q=0.0, h=1.0, r=R, p0=P0)
        kf = kalman_filter(p, np.random.default_rng(0).normal(size=25))
        t = np.arange(26)
        np.testing.assert_allclose(kf.filt_cov[:, 0, 0], P0 * R / (R + t * P0), rtol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_log_lik_matches_dense_gaussian(self, seed):
        p = random_scalar(seed)
        T = 40
        _, ys = LinearGaussian(p).simulate(T, RngStream(seed))
        mu, C = dense_joint(p, T)
        ref = multivariate_normal(mu[T + 1 :], C[T + 1 :, T + 1 :]).logpdf(ys[:, 0])
        assert kalman_filter(p, ys).log_lik == pytest.approx(ref, abs=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_filter_matches_dense_conditioning(self, seed):
        p = random_scalar(seed + 10)
        T = 15
        _, ys = LinearGaussian(p).simulate(T, RngStream(seed))
        mu, C = dense_joint(p, T)
        kf = kalman_filter(p, ys)
        for t in (1, 7, T):
            obs = np.arange(T + 1, T + 1 + t)
            Cyy = C[np.ix_(obs, obs)]
            k = np.linalg.solve(Cyy, C[obs, t])
            m = mu[t] + k @ (ys[:t, 0] - mu[obs])
            v = C[t, t] - k @ C[obs, t]
            assert kf.filt_mean[t, 0] == pytest.approx(m, abs=1e-8)
            assert kf.filt_cov[t, 0, 0] == pytest.approx(v, abs=1e-8)

    def test_multivariate_log_lik_matches_dense(self):
        p = random_stable_lg(2, 3)
        T = 12
        _, ys = LinearGaussian(p).simulate(T, RngStream(8))
        q = p.q
        # Cov(x_s, x_t) = Phi^{t-s} Var(x_s) for t >= s
        V = [p.P0]
        for t in range(1, T + 1):
            V.append(p.Phi @ V[-1] @ p.Phi.T + p.Q)
        m = [p.m0]
        for t in range(1, T + 1):
            m.append(p.Phi @ m[-1])
        Cyy = np.zeros((T * q, T * q))
        for s in range(1, T + 1):
            for t in range(s, T + 1):
                cxx = np.linalg.matrix_power(p.Phi, t - s) @ V[s]
                blk = p.H @ cxx @ p.H.T + (p.R if s == t else 0)
                Cyy[(t - 1) * q : t * q, (s - 1) * q : s * q] = blk
                Cyy[(s - 1) * q : s * q, (t - 1) * q : t * q] = blk.T
        mean = np.concatenate([p.H @ m[t] for t in range(1, T + 1)])
        ref = multivariate_normal(mean, Cyy).logpdf(ys.reshape(-1))
        assert kalman_filter(p, ys).log_lik == pytest.approx(ref, abs=1e-8)

    def test_gain_agrees_with_enkf(self):
        g = np.random.default_rng(5)
        for _ in range(10):
            A = g.normal(size=(4, 4))
            P = A @ A.T
            H = g.normal(size=(3, 4))
            B = g.normal(size=(3, 3))
            R = B @ B.T + np.eye(3)
            np.testing.assert_allclose(gain(P, H, R), kalman_gain(P, ObservationOperator(H, R)), rtol=0, atol=1e-12)

    def test_covariances_symmetric_psd(self):
        p = random_stable_lg(4, 9)
        _, ys = LinearGaussian(p).simulate(30, RngStream(2))
        kf = kalman_filter(p, ys)
        for P in kf.filt_cov:
            assert np.max(np.abs(P - P.T)) < 1e-12
            assert np.linalg.eigvalsh(P).min() > -1e-10


    @pytest.mark.parametrize("phi", [0.0, 0.5, 1.0, 1.2])
    def test_scalar_shortcut_matches_matrix_filter(self, phi):
        p = LinearGaussianParams.scalar(phi=phi, q=0.7, h=1.3, r=0.4, m0=0.2, p0=2.0)
        _, ys = LinearGaussian(p).simulate(60, RngStream(3))
        assert kalman_log_likelihood(p, ys) == pytest.approx(kalman_filter(p, ys).log_lik, abs=1e-10)


class TestRTS:
    def test_final_equals_filter(self):
        p = random_stable_lg(2, 1)
        _, ys = LinearGaussian(p).simulate(20, RngStream(0))
        kf = kalman_filter(p, ys)
        sm, sc = rts_smoother(kf, p)
        np.testing.assert_array_equal(sm[-1], kf.filt_mean[-1])
        np.testing.assert_array_equal(sc[-1], kf.filt_cov[-1])

    def test_static_state(self):
        p = LinearGaussianParams(np.eye(2), np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros(2), np.eye(2))
        ys = np.random.default_rng(3).normal(size=(15, 2))
        kf = kalman_filter(p, ys)
        sm, sc = rts_smoother(kf, p)
        for s in range(16):
            np.testing.assert_allclose(sm[s], kf.filt_mean[-1], atol=1e-10)
            np.testing.assert_allclose(sc[s], kf.filt_cov[-1], atol=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_dense_conditioning(self, seed):
        p = random_scalar(seed + 20)
        T = 20
        _, ys = LinearGaussian(p).simulate(T, RngStream(seed))
        mu, C = dense_joint(p, T)
        obs = np.arange(T + 1, 2 * T + 1)
        Cyy = C[np.ix_(obs, obs)]
        K = np.linalg.solve(Cyy, C[obs, : T + 1]).T
        m = mu[: T + 1] + K @ (ys[:, 0] - mu[obs])
        V = np.diag(C[: T + 1, : T + 1] - K @ C[obs, : T + 1])
        sm, sc = rts_smoother(kalman_filter(p, ys), p)
        np.testing.assert_allclose(sm[:, 0], m, rtol=0, atol=1e-8)
        np.testing.assert_allclose(sc[:, 0, 0], V, rtol=0, atol=1e-8)

    def test_smoother_variance_below_filter(self):
        for seed in range(5):
            p = random_stable_lg(3, seed)
            _, ys = LinearGaussian(p).simulate(25, RngStream(seed))
            kf = kalman_filter(p, ys)
            _, sc = rts_smoother(kf, p)
            assert np.all(np.diagonal(sc, axis1=1, axis2=2) <= np.diagonal(kf.filt_cov, axis1=1, axis2=2) + 1e-12)


class TestGridPosterior:
    @staticmethod
    def _setup():
        p = LinearGaussianParams.scalar(phi=0.6)
        _, ys = LinearGaussian(p).simulate(40, RngStream(6))
        flat = lambda v: 0.0 if 0 <= v <= 1 else -np.inf  # noqa: E731
        build = lambda v: LinearGaussianParams.scalar(phi=v)  # noqa: E731
        return ys, flat, build

    def test_single_point(self):
        ys, flat, build = self._setup()
        gp = grid_posterior(flat, [0.5], ys, build)
        np.testing.assert_array_equal(gp.point_masses, [1.0])

    def test_symmetric_problem(self):
        # with m0 = 0 and y = 0 the likelihood depends on the observation gain h only through h^2
        grid = np.linspace(-2, 2, 201)
        lp = lambda v: -0.5 * v**2  # noqa: E731
        build = lambda v: LinearGaussianParams.scalar(phi=0.5, q=1.0, h=v, r=1.0)  # noqa: E731
        gp = grid_posterior(lp, grid, np.zeros((3, 1)), build)
        np.testing.assert_allclose(gp.density, gp.density[::-1], rtol=0, atol=1e-10)

    def test_refinement(self):
        ys, flat, build = self._setup()
        coarse = grid_posterior(flat, np.linspace(0, 1, 101), ys, build)
        fine = grid_posterior(flat, np.linspace(0, 1, 1001), ys, build)
        edges = np.linspace(0, 1, 41)
        tv = 0.5 * np.abs(coarse.bin_probabilities(edges) - fine.bin_probabilities(edges)).sum()
        assert tv < 1e-4

    def test_zero_mass(self):
        ys, _, build = self._setup()
        with pytest.raises(DomainError):
            grid_posterior(lambda v: -np.inf, np.linspace(0, 1, 60), ys, build)

    def test_unsorted_grid(self):
        ys, flat, build = self._setup()
        with pytest.raises(DomainError):
            grid_posterior(flat, [0.5, 0.2, 0.9], ys, build)

    def test_normalised(self):
        ys, flat, build = self._setup()
        gp = grid_posterior(flat, np.linspace(0, 1, 201), ys, build)
        assert np.trapezoid(gp.density, gp.grid) == pytest.approx(1.0, abs=1e-12)
        assert gp.cdf(1.0) == pytest.approx(1.0) and gp.cdf(0.0) == 0.0
