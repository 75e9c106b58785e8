"""Ensemble Kalman filter: stochastic and square-root analysis steps,
multiplicative inflation, Gaspari-Cohn covariance tapering.

Ensembles are arrays of shape ``(N, d)`` with one member per row.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import parallel
from .errors import DivergenceError, DomainError, IntegrationError, NumericalError
from .rng import RngStream, as_stream
from .ssm import ObservationOperator, StateSpaceModel

BLOWUP = 1e6


@dataclass(eq=False)
class CovarianceEstimate:
    """Inflated, optionally tapered, sample moments of a forecast ensemble.

    ``deviations`` are the inflated anomalies ``sqrt(lambda) (x_i - mean)``
    as rows, so ``cov == deviations.T @ deviations / (N - 1)`` before
    tapering.
    """

    mean: np.ndarray
    deviations: np.ndarray
    inflation: float = 1.0
    taper: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.deviations.shape[0]

    @cached_property
    def cov(self) -> np.ndarray:
        A = self.deviations
        P = A.T @ A / (self.N - 1)
        P = 0.5 * (P + P.T)
        return P if self.taper is None else P * self.taper

    @property
    def members(self) -> np.ndarray:
        return self.mean + self.deviations


def ensemble_mean_cov(ensemble, inflation: float = 1.0, taper=None) -> CovarianceEstimate:
    """Sample mean and covariance (divisor ``N - 1``), inflation, then taper."""
    X = np.asarray(ensemble, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DomainError("ensemble must be (N, d) with N >= 2")
    if inflation < 1.0:
        raise DomainError("inflation factor must be >= 1")
    if taper is not None:
        taper = validate_taper(taper, X.shape[1])
    m = X.mean(axis=0)
    return CovarianceEstimate(m, np.sqrt(inflation) * (X - m), float(inflation), taper)


def kalman_gain(P, obs: ObservationOperator) -> np.ndarray:
    """``P H^T (H P H^T + R)^-1`` via a linear solve."""
    P = np.asarray(P, dtype=float)
    H, R = obs.H, obs.R
    S = H @ P @ H.T + R
    try:
        return np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance singular (cond={np.linalg.cond(S):.3g})") from exc


def ensemble_gain(ce: CovarianceEstimate, obs: ObservationOperator) -> np.ndarray:
    """Gain from the covariance estimate.

    Without a taper, ``P H^T`` and ``H P H^T`` come straight from the
    anomalies, so the ``d x d`` covariance is never formed.
    """
    if ce.taper is not None:
        return kalman_gain(ce.cov, obs)
    A = ce.deviations
    HA = A @ obs.H.T  # (N, q)
    n1 = ce.N - 1
    PHt = A.T @ HA / n1
    S = HA.T @ HA / n1 + obs.R
    try:
        return np.linalg.solve(S, PHt.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance singular (cond={np.linalg.cond(S):.3g})") from exc


def stochastic_enkf_update(
    ensemble, y, obs: ObservationOperator, ce: CovarianceEstimate, gen: np.random.Generator
) -> np.ndarray:
    """Perturbed-observation update ``x_i + K (y - H x_i + eps_i)``, ``eps_i ~ N(0, R)``.

    The members are first inflated about their mean by ``ce.inflation``.
    """
    X = np.asarray(ensemble, dtype=float)
    X = ce.mean + np.sqrt(ce.inflation) * (X - ce.mean)
    K = ensemble_gain(ce, obs)
    eps = gen.standard_normal((X.shape[0], obs.H.shape[0])) @ np.linalg.cholesky(obs.R).T
    innov = np.asarray(y, dtype=float) - X @ obs.H.T + eps
    return X + innov @ K.T


def square_root_enkf_update(ensemble, y, obs: ObservationOperator, ce: CovarianceEstimate) -> np.ndarray:
    """Deterministic update with the anomalies post-multiplied by ``W``.

    ``W`` is the symmetric square root of
    ``I - (HA)^T S^-1 (HA) / (N - 1)``, which gives updated anomalies whose
    scatter matrix is ``(N - 1)(I - K H) P``. With a taper the mean uses the
    tapered gain while ``W`` is built from the raw anomalies, so the scatter
    identity then holds only for the untapered covariance.

    The constraint matrix is ``I - B B^T`` with ``B`` of rank ``q``; from the
    eigenpairs ``(lam, V)`` of the small matrix ``B^T B`` its square root is
    ``I - B V diag(1 / (1 + sqrt(1 - lam))) V^T B^T``, so no ``N x N``
    decomposition is needed.
    """
    K = ensemble_gain(ce, obs)
    m = ce.mean + K @ (np.asarray(y, dtype=float) - obs.H @ ce.mean)
    A = ce.deviations
    HA = A @ obs.H.T  # (N, q)
    S = HA.T @ HA / (ce.N - 1) + obs.R
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"innovation covariance not positive definite (cond={np.linalg.cond(S):.3g})") from exc
    B = np.linalg.solve(L, HA.T).T / np.sqrt(ce.N - 1)  # B B^T = HA S^-1 HA^T / (N - 1)
    lam, V = np.linalg.eigh(B.T @ B)
    if lam.max() > 1.0 + 1e-10:
        raise NumericalError(f"square-root constraint matrix not PSD (min eigenvalue {1.0 - lam.max():.3g})")
    f = 1.0 / (1.0 + np.sqrt(np.clip(1.0 - lam, 0.0, None)))
    BV = B @ V
    # A^T W in the column convention is W^T A = W A in rows
    return m + A - BV @ (f[:, None] * (BV.T @ A))


# ---------------------------------------------------------------------------
# Tapering
# ---------------------------------------------------------------------------


def gaspari_cohn(r) -> np.ndarray:
    """Fifth-order piecewise rational correlation; ``r`` is distance over the
    half-width, support ``0 <= r < 2``."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    a = r <= 1.0
    b = (r > 1.0) & (r < 2.0)
    ra = r[a]
    out[a] = ((((-0.25 * ra + 0.5) * ra + 0.625) * ra - 5.0 / 3.0) * ra**2) + 1.0
    rb = r[b]
    out[b] = (((((rb / 12.0 - 0.5) * rb + 0.625) * rb + 5.0 / 3.0) * rb - 5.0) * rb) + 4.0 - 2.0 / (3.0 * rb)
    return out


def gaspari_cohn_taper(K: int, radius: float, cyclic: bool = True) -> np.ndarray:
    """``K x K`` Gaspari-Cohn correlation matrix with half-width ``radius``.

    On a cyclic lattice the chordal distance of sites on a circle of
    circumference ``K`` is used; it matches the lattice distance for nearby
    sites and keeps the matrix positive semi-definite.
    """
    if radius <= 0:
        raise DomainError("taper radius must be positive")
    idx = np.arange(K)
    lag = np.abs(idx[:, None] - idx[None, :]).astype(float)
    if cyclic:
        lag = np.minimum(lag, K - lag)
        dist = (K / np.pi) * np.sin(np.pi * lag / K)
    else:
        dist = lag
    return gaspari_cohn(dist / radius)


def validate_taper(taper, d: int) -> np.ndarray:
    rho = np.asarray(taper, dtype=float)
    if rho.shape != (d, d):
        raise DomainError(f"taper must be {d}x{d}")
    if np.max(np.abs(np.diag(rho) - 1.0)) > 1e-12 or np.max(np.abs(rho - rho.T)) > 1e-12:
        raise DomainError("taper must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise DomainError("taper is not positive semi-definite")
    return rho


# ---------------------------------------------------------------------------
# Assimilation loop
# ---------------------------------------------------------------------------


@dataclass
class EnKFResult:
    """Analysis summaries for ``t = 0..T`` (``t = 0`` is the initial ensemble)."""

    mean: np.ndarray
    spread: np.ndarray
    rmse: np.ndarray | None
    gain_norm: np.ndarray
    ensemble: np.ndarray

    def time_avg_rmse(self, start: int, stop: int) -> float:
        if self.rmse is None:
            raise DomainError("no truth supplied")
        return float(np.mean(self.rmse[start : stop + 1]))


def run_enkf(
    model: StateSpaceModel,
    obs: ObservationOperator,
    observations,
    N: int,
    inflation: float = 1.0,
    taper=None,
    variant: str = "stochastic",
    seed: RngStream | int = 0,
    truth=None,
    threads: int = 1,
) -> EnKFResult:
    """Propagate the ensemble through the model and apply the chosen analysis.

    ``taper`` is either ``None``, a ``d x d`` correlation matrix, or a
    positive number taken as the Gaspari-Cohn half-width on a cyclic lattice.
    """
    if variant not in ("stochastic", "square_root"):
        raise DomainError(f"unknown EnKF variant {variant!r}")
    rng = as_stream(seed)
    ys = np.asarray(observations, dtype=float).reshape(-1, obs.H.shape[0])
    T = ys.shape[0]
    d = model.dim_state
    if taper is not None and np.isscalar(taper):
        taper = gaspari_cohn_taper(d, float(taper))
    if taper is not None:
        taper = validate_taper(taper, d)

    X = model.sample_initial(N, rng.generator(0, "initial"))
    mean = np.empty((T + 1, d))
    spread = np.empty((T + 1, d))
    gnorm = np.zeros(T)
    rmse = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float).reshape(T + 1, d)
        rmse = np.empty(T + 1)

    def record(t, X):
        mean[t] = X.mean(axis=0)
        spread[t] = X.std(axis=0, ddof=1)
        if rmse is not None:
            rmse[t] = np.sqrt(np.mean((mean[t] - truth[t]) ** 2))

    record(0, X)
    for t in range(1, T + 1):
        try:
            X = parallel.propagate(model, X, rng.generator(t, "propagate"), threads)
        except IntegrationError as exc:
            raise DivergenceError(f"forecast integration failed: {exc}", step=t) from exc
        ce = ensemble_mean_cov(X, inflation, taper)
        if variant == "stochastic":
            X = stochastic_enkf_update(X, ys[t - 1], obs, ce, rng.generator(t, "enkf-perturb"))
        else:
            X = square_root_enkf_update(X, ys[t - 1], obs, ce)
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > BLOWUP:
            raise DivergenceError("ensemble diverged", step=t)
        gnorm[t - 1] = np.linalg.norm(ensemble_gain(ce, obs))
        record(t, X)
    return EnKFResult(mean, spread, rmse, gnorm, X)
