"""Exact inference for linear-Gaussian models.

Kalman filter with exact log-likelihood, Rauch-Tung-Striebel smoother, and
grid posteriors for a scalar parameter. These are the reference values the
Monte Carlo code is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DomainError, NumericalError
from .ssm import LOG_2PI, LinearGaussianParams


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class KalmanResult:
    """Index ``t`` runs over ``0..T``; ``pred_*[0]`` is the initial law."""

    pred_mean: np.ndarray
    pred_cov: np.ndarray
    filt_mean: np.ndarray
    filt_cov: np.ndarray
    log_lik: float
    log_lik_increments: np.ndarray

    def belief(self, t: int) -> GaussianBelief:
        return GaussianBelief(self.filt_mean[t], self.filt_cov[t])


def gain(P: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``P H^T (H P H^T + R)^-1`` by Cholesky solve."""
    S = H @ P @ H.T + R
    try:
        c = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance singular (cond={np.linalg.cond(S):.3g})") from exc
    return cho_solve(c, H @ P).T


def kalman_filter(params: LinearGaussianParams, observations) -> KalmanResult:
    p = params
    ys = np.asarray(observations, dtype=float).reshape(-1, p.q)
    T, d = ys.shape[0], p.d
    I = np.eye(d)
    pm = np.empty((T + 1, d))
    pc = np.empty((T + 1, d, d))
    fm = np.empty((T + 1, d))
    fc = np.empty((T + 1, d, d))
    inc = np.empty(T)
    pm[0], pc[0] = p.m0, p.P0
    fm[0], fc[0] = p.m0, p.P0
    for t in range(1, T + 1):
        m_pred = p.Phi @ fm[t - 1]
        P_pred = p.Phi @ fc[t - 1] @ p.Phi.T + p.Q
        P_pred = 0.5 * (P_pred + P_pred.T)
        S = p.H @ P_pred @ p.H.T + p.R
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"step {t}: innovation covariance not positive definite") from exc
        innov = ys[t - 1] - p.H @ m_pred
        K = cho_solve((L, True), p.H @ P_pred).T
        z = np.linalg.solve(L, innov)
        inc[t - 1] = -0.5 * (p.q * LOG_2PI + z @ z) - np.sum(np.log(np.diag(L)))
        # Joseph form
        A = I - K @ p.H
        P_filt = A @ P_pred @ A.T + K @ p.R @ K.T
        pm[t], pc[t] = m_pred, P_pred
        fm[t], fc[t] = m_pred + K @ innov, 0.5 * (P_filt + P_filt.T)
    return KalmanResult(pm, pc, fm, fc, float(inc.sum()), inc)


def kalman_log_likelihood(params: LinearGaussianParams, observations) -> float:
    if params.d == 1 and params.q == 1:
        return _scalar_log_likelihood(params, observations)
    return kalman_filter(params, observations).log_lik


def _scalar_log_likelihood(p: LinearGaussianParams, observations) -> float:
    # plain floats: the matrix path spends most of its time in small-array overhead
    phi, q, h, r = float(p.Phi[0, 0]), float(p.Q[0, 0]), float(p.H[0, 0]), float(p.R[0, 0])
    m, P = float(p.m0[0]), float(p.P0[0, 0])
    total = 0.0
    for t, y in enumerate(np.asarray(observations, dtype=float).reshape(-1).tolist(), start=1):
        m, P = phi * m, phi * P * phi + q
        S = h * P * h + r
        if not S > 0.0:
            raise NumericalError(f"step {t}: innovation covariance not positive definite")
        e = y - h * m
        total += -0.5 * (LOG_2PI + math.log(S) + e * e / S)
        K = P * h / S
        a = 1.0 - K * h
        m, P = m + K * e, a * P * a + K * r * K
    return total


def rts_smoother(kf: KalmanResult, params: LinearGaussianParams) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed means ``(T+1, d)`` and covariances ``(T+1, d, d)``."""
    T = kf.filt_mean.shape[0] - 1
    sm = kf.filt_mean.copy()
    sc = kf.filt_cov.copy()
    for s in range(T - 1, -1, -1):
        P_pred = kf.pred_cov[s + 1]
        try:
            c = cho_factor(P_pred, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"step {s + 1}: predictive covariance singular") from exc
        C = cho_solve(c, params.Phi @ kf.filt_cov[s]).T  # P_s Phi^T P_pred^-1
        sm[s] = kf.filt_mean[s] + C @ (sm[s + 1] - kf.pred_mean[s + 1])
        cov = kf.filt_cov[s] + C @ (sc[s + 1] - P_pred) @ C.T
        sc[s] = 0.5 * (cov + cov.T)
    return sm, sc


@dataclass
class GridPosterior:
    grid: np.ndarray
    density: np.ndarray  # integrates to one under the trapezoidal rule
    log_unnormalised: np.ndarray

    @property
    def point_masses(self) -> np.ndarray:
        """Trapezoid-rule mass attached to each grid node."""
        g = self.grid
        if g.size == 1:
            return np.ones(1)
        dx = np.diff(g)
        cell = np.zeros_like(g)
        cell[:-1] += 0.5 * dx
        cell[1:] += 0.5 * dx
        m = self.density * cell
        return m / m.sum()

    def bin_probabilities(self, edges) -> np.ndarray:
        """Posterior mass per bin, integrating the piecewise-linear density."""
        edges = np.asarray(edges, dtype=float)
        fine = np.union1d(self.grid, edges)
        fine = fine[(fine >= edges[0]) & (fine <= edges[-1])]
        dens = np.interp(fine, self.grid, self.density, left=0.0, right=0.0)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(fine))])
        at_edges = np.interp(edges, fine, cum)
        probs = np.diff(at_edges)
        return probs / probs.sum()

    def cdf(self, x) -> np.ndarray:
        g, f = self.grid, self.density
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(g))])
        return np.interp(x, g, cum / cum[-1])


def grid_posterior(log_prior, grid, observations, theta_builder) -> GridPosterior:
    """``p(theta) L(theta)`` on a sorted grid of scalar parameter values.

    ``theta_builder`` maps a grid value to ``LinearGaussianParams``;
    ``log_prior`` maps it to a log-density (``-inf`` outside the support).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be a strictly increasing vector")
    lp = np.array([log_prior(v) for v in grid], dtype=float)
    ll = np.full(grid.size, -np.inf)
    ok = np.isfinite(lp)
    for k in np.flatnonzero(ok):
        ll[k] = kalman_log_likelihood(theta_builder(grid[k]), observations)
    logpost = lp + ll
    top = np.max(logpost)
    if not np.isfinite(top):
        raise DomainError("posterior has zero mass on the grid")
    dens = np.exp(logpost - top)
    if grid.size == 1:
        return GridPosterior(grid, np.ones(1), logpost)
    dens /= np.trapezoid(dens, grid)
    return GridPosterior(grid, dens, logpost)
