"""State-space models: transition sampler, observation density, initial law.

Particles are stored as arrays of shape ``(n, d)``; one row per particle.
Time runs ``t = 0..T`` for states and ``t = 1..T`` for observations, so
``simulate`` returns ``T + 1`` states and ``T`` observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, DomainError, IntegrationError, NumericalError
from .rng import RngStream

LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Scalar / elementary operations
# ---------------------------------------------------------------------------


def sv_propagate(x, theta: "SVParams", z):
    """One step of the log-volatility AR(1): ``phi * x + sigma * z``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise DomainError("sv_propagate needs finite state and noise")
    return theta.phi * x + theta.sigma * z


def sv_log_obs(y, x, theta: "SVParams"):
    """Log-density of ``y ~ N(0, beta^2 exp(x))``."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    log_var = 2.0 * np.log(theta.beta) + x
    return -0.5 * (LOG_2PI + log_var + y * y * np.exp(-log_var))


def lorenz96_drift(x, forcing: float = 8.0):
    """Right-hand side of the Lorenz 96 system along the last axis (cyclic)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 4:
        raise DomainError("Lorenz 96 needs at least 4 components")
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + forcing


def rk4_step(x, h: float, forcing: float = 8.0):
    """Classical fourth-order Runge-Kutta step of ``lorenz96_drift``."""
    if not h > 0:
        raise DomainError("step size must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = lorenz96_drift(x, forcing)
        k2 = lorenz96_drift(x + 0.5 * h * k1, forcing)
        k3 = lorenz96_drift(x + 0.5 * h * k2, forcing)
        k4 = lorenz96_drift(x + h * k3, forcing)
        out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite Runge-Kutta stage")
    return out


def lg_propagate(x, theta: "LinearGaussianParams", w):
    """``Phi x + w`` for a single state or a stack of row states."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    d = theta.Phi.shape[0]
    if x.shape[-1] != d or w.shape[-1] != d:
        raise DomainError(f"expected state dimension {d}, got {x.shape} and {w.shape}")
    # einsum keeps each row's arithmetic independent of how many rows are passed
    return np.einsum("...j,ij->...i", x, theta.Phi) + w


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def check_covariance(a: np.ndarray, name: str, tol: float = 1e-10) -> np.ndarray:
    if a.shape[0] != a.shape[1]:
        raise DomainError(f"{name} must be square, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > tol * scale:
        raise DomainError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(0.5 * (a + a.T)).min() < -tol * scale:
        raise DomainError(f"{name} is not positive semi-definite")
    return 0.5 * (a + a.T)


def psd_factor(a: np.ndarray) -> np.ndarray:
    """Some ``L`` with ``L @ L.T == a``; Cholesky when possible, else eigh."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(a)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def mvn_logpdf(resid: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Gaussian log-density of residual rows given the Cholesky factor of the covariance."""
    return GaussianNoise(chol).logpdf(resid)


class GaussianNoise:
    """Zero-mean Gaussian with a cached whitening matrix for fast log-densities."""

    def __init__(self, chol: np.ndarray):
        self.chol = np.asarray(chol, dtype=float)
        self.whiten = np.linalg.inv(self.chol)
        self.const = -0.5 * self.chol.shape[0] * LOG_2PI - float(np.sum(np.log(np.diag(self.chol))))

    def logpdf(self, resid) -> np.ndarray:
        z = np.einsum("...j,ij->...i", np.asarray(resid, dtype=float), self.whiten)
        return self.const - 0.5 * np.einsum("...i,...i->...", z, z)


def _cholesky(a: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{name} is not positive definite") from exc


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SVParams:
    phi: float = 0.9
    sigma: float = 0.3
    beta: float = 0.6

    def __post_init__(self):
        if not (self.sigma > 0 and self.beta > 0):
            raise DomainError("sigma and beta must be strictly positive")
        if not np.isfinite(self.phi):
            raise DomainError("phi must be finite")

    @property
    def stationary_var(self) -> float:
        if abs(self.phi) >= 1:
            raise DomainError("no stationary law for |phi| >= 1")
        return self.sigma**2 / (1.0 - self.phi**2)


@dataclass(frozen=True, eq=False)
class LinearGaussianParams:
    """``x_t = Phi x_{t-1} + N(0, Q)``, ``y_t = H x_t + N(0, R)``, ``x_0 ~ N(m0, P0)``."""

    Phi: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        Phi = _as_matrix(self.Phi, "Phi")
        d = Phi.shape[0]
        if Phi.shape != (d, d):
            raise DomainError("Phi must be square")
        H = _as_matrix(self.H, "H")
        if H.shape[1] != d:
            raise DomainError(f"H must have {d} columns")
        q = H.shape[0]
        Q = check_covariance(_as_matrix(self.Q, "Q"), "Q")
        R = check_covariance(_as_matrix(self.R, "R"), "R")
        P0 = check_covariance(_as_matrix(self.P0, "P0"), "P0")
        m0 = np.asarray(self.m0, dtype=float).reshape(-1)
        if Q.shape != (d, d) or P0.shape != (d, d) or m0.shape != (d,):
            raise DomainError("Q, P0, m0 must match the state dimension")
        if R.shape != (q, q):
            raise DomainError("R must match the observation dimension")
        for name, val in dict(Phi=Phi, Q=Q, H=H, R=R, m0=m0, P0=P0).items():
            object.__setattr__(self, name, val)

    @property
    def d(self) -> int:
        return self.Phi.shape[0]

    @property
    def q(self) -> int:
        return self.H.shape[0]

    @classmethod
    def scalar(cls, phi=0.9, q=1.0, h=1.0, r=1.0, m0=0.0, p0=1.0) -> "LinearGaussianParams":
        return cls([[phi]], [[q]], [[h]], [[r]], [m0], [[p0]])


@dataclass(frozen=True)
class Lorenz96Params:
    K: int = 40
    forcing: float = 8.0
    dt: float = 0.05
    obs_sigma: float = 1.0
    stride: int = 2
    h: float | None = None  # internal RK4 step; default dt / 10
    init_sd: float = 1.0

    def __post_init__(self):
        if self.K < 4:
            raise DomainError("Lorenz 96 needs K >= 4")
        if not (self.obs_sigma > 0 and self.dt > 0 and self.stride >= 1):
            raise DomainError("obs_sigma, dt must be positive and stride >= 1")

    @property
    def substeps(self) -> int:
        h = self.dt / 10.0 if self.h is None else self.h
        n = max(1, int(round(self.dt / h)))
        return n

    @property
    def observed(self) -> np.ndarray:
        return np.arange(0, self.K, self.stride)


@dataclass(frozen=True, eq=False)
class ObservationOperator:
    """Linear-Gaussian observation model ``y = H x + N(0, R)``."""

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = _as_matrix(self.H, "H")
        R = check_covariance(_as_matrix(self.R, "R"), "R")
        if R.shape != (H.shape[0], H.shape[0]):
            raise DomainError("R does not conform to H")
        _cholesky(R, "R")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class StateSpaceModel:
    """Base class. Subclasses implement the vectorised primitives.

    ``transition(x, noise)`` is a pure function of the rows of ``x`` and
    ``noise``; ``propagate`` only adds the noise draw, so splitting particles
    into chunks cannot change the result.
    """

    dim_state: int
    dim_obs: int
    noise_dim: int
    has_transition_density: bool = False

    def sample_initial(self, n: int, gen: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition(self, x: np.ndarray, noise: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draw_noise(self, n: int, gen: np.random.Generator) -> np.ndarray:
        return gen.standard_normal((n, self.noise_dim))

    def propagate(self, x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        return self.transition(x, self.draw_noise(x.shape[0], gen))

    def log_obs_density(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_obs(self, x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_initial_density(self, x0: np.ndarray) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} has no initial density")

    def log_trans_density(self, x_prev: np.ndarray, x_next: np.ndarray) -> np.ndarray:
        """``log p(x_next | x_prev)`` with numpy broadcasting over leading axes."""
        raise CapabilityError(f"{type(self).__name__} has no transition density")

    def require_transition_density(self, what: str) -> None:
        if not self.has_transition_density:
            raise CapabilityError(f"{what} needs a transition density, which {type(self).__name__} lacks")

    def simulate(self, T: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
        """Forward draw of ``x_{0:T}`` and ``y_{1:T}``."""
        if T < 0:
            raise DomainError("T must be non-negative")
        xs = np.empty((T + 1, self.dim_state))
        ys = np.empty((T, self.dim_obs))
        xs[0] = self.sample_initial(1, rng.generator(0, "truth", 0))[0]
        for t in range(1, T + 1):
            xs[t] = self.propagate(xs[t - 1 : t], rng.generator(t, "truth", 0))[0]
            ys[t - 1] = self.sample_obs(xs[t : t + 1], rng.generator(t, "truth", 1))[0]
        return xs, ys


class StochasticVolatility(StateSpaceModel):
    dim_state = 1
    dim_obs = 1
    noise_dim = 1
    has_transition_density = True

    def __init__(self, params: SVParams | None = None, init_var: float | None = None):
        self.params = params or SVParams()
        # stationary law by default; falls back to sigma^2 when non-stationary
        if init_var is None:
            p = self.params
            init_var = p.stationary_var if abs(p.phi) < 1 else p.sigma**2
        self.init_var = float(init_var)

    def sample_initial(self, n, gen):
        return np.sqrt(self.init_var) * gen.standard_normal((n, 1))

    def log_initial_density(self, x0):
        x0 = np.asarray(x0)[..., 0]
        return -0.5 * (LOG_2PI + np.log(self.init_var) + x0 * x0 / self.init_var)

    def transition(self, x, noise):
        return sv_propagate(x, self.params, noise)

    def log_obs_density(self, y, x):
        y = np.asarray(y, dtype=float).reshape(-1)
        return sv_log_obs(y[0], x[..., 0], self.params)

    def sample_obs(self, x, gen):
        sd = self.params.beta * np.exp(0.5 * x)
        return sd * gen.standard_normal(x.shape)

    def log_trans_density(self, x_prev, x_next):
        p = self.params
        r = (np.asarray(x_next)[..., 0] - p.phi * np.asarray(x_prev)[..., 0]) / p.sigma
        return -0.5 * (LOG_2PI + r * r) - np.log(p.sigma)


class LinearGaussian(StateSpaceModel):
    def __init__(self, params: LinearGaussianParams):
        self.params = params
        self.dim_state = params.d
        self.dim_obs = params.q
        self.noise_dim = params.d
        self._q_factor = psd_factor(params.Q)
        self._p0_factor = psd_factor(params.P0)
        self._r_factor = psd_factor(params.R)
        self._q_chol = self._r_chol = None
        try:
            self._q_chol = np.linalg.cholesky(params.Q)
        except np.linalg.LinAlgError:
            pass
        try:
            self._r_chol = np.linalg.cholesky(params.R)
        except np.linalg.LinAlgError:
            pass
        self.has_transition_density = self._q_chol is not None
        self._r_noise = GaussianNoise(self._r_chol) if self._r_chol is not None else None
        self._q_noise = GaussianNoise(self._q_chol) if self._q_chol is not None else None

    def sample_initial(self, n, gen):
        z = gen.standard_normal((n, self.dim_state))
        return self.params.m0 + z @ self._p0_factor.T

    def log_initial_density(self, x0):
        return mvn_logpdf(np.asarray(x0) - self.params.m0, _cholesky(self.params.P0, "P0"))

    def transition(self, x, noise):
        return lg_propagate(x, self.params, np.einsum("...j,ij->...i", noise, self._q_factor))

    def log_obs_density(self, y, x):
        if self._r_chol is None:
            raise NumericalError("R is singular; observation density undefined")
        resid = np.asarray(y, dtype=float) - np.einsum("...j,ij->...i", x, self.params.H)
        return self._r_noise.logpdf(resid)

    def sample_obs(self, x, gen):
        z = gen.standard_normal((x.shape[0], self.dim_obs))
        return x @ self.params.H.T + z @ self._r_factor.T

    def log_trans_density(self, x_prev, x_next):
        self.require_transition_density("log_trans_density")
        resid = np.asarray(x_next) - np.einsum("...j,ij->...i", np.asarray(x_prev, dtype=float), self.params.Phi)
        return self._q_noise.logpdf(resid)

    @property
    def obs_operator(self) -> ObservationOperator:
        return ObservationOperator(self.params.H, self.params.R)


class Lorenz96(StateSpaceModel):
    """Deterministic Lorenz 96 dynamics observed at every ``stride``-th site."""

    has_transition_density = False
    noise_dim = 0

    def __init__(self, params: Lorenz96Params | None = None):
        self.params = params or Lorenz96Params()
        p = self.params
        self.dim_state = p.K
        self.dim_obs = len(p.observed)
        H = np.zeros((self.dim_obs, p.K))
        H[np.arange(self.dim_obs), p.observed] = 1.0
        self.H = H
        self.R = p.obs_sigma**2 * np.eye(self.dim_obs)

    @property
    def equilibrium(self) -> np.ndarray:
        return np.full(self.params.K, float(self.params.forcing))

    def sample_initial(self, n, gen):
        return self.equilibrium + self.params.init_sd * gen.standard_normal((n, self.params.K))

    def draw_noise(self, n, gen):
        return np.empty((n, 0))

    def transition(self, x, noise=None):
        p = self.params
        n = p.substeps
        h = p.dt / n
        for _ in range(n):
            x = rk4_step(x, h, p.forcing)
        return x

    def log_obs_density(self, y, x):
        p = self.params
        r = (np.asarray(y, dtype=float) - x[..., p.observed]) / p.obs_sigma
        return -0.5 * np.sum(r * r, axis=-1) - self.dim_obs * (np.log(p.obs_sigma) + 0.5 * LOG_2PI)

    def sample_obs(self, x, gen):
        p = self.params
        return x[..., p.observed] + p.obs_sigma * gen.standard_normal((x.shape[0], self.dim_obs))

    @property
    def obs_operator(self) -> ObservationOperator:
        return ObservationOperator(self.H, self.R)


@dataclass
class FunctionModel(StateSpaceModel):
    """Ad-hoc model from plain callables, handy for tests and toy problems."""

    dim_state: int
    dim_obs: int
    noise_dim: int
    initial: callable
    step: callable
    log_g: callable
    log_p: callable | None = None
    obs_sampler: callable | None = None
    has_transition_density: bool = field(init=False)

    def __post_init__(self):
        self.has_transition_density = self.log_p is not None

    def sample_initial(self, n, gen):
        return np.asarray(self.initial(n, gen), dtype=float).reshape(n, self.dim_state)

    def transition(self, x, noise):
        return np.asarray(self.step(x, noise), dtype=float)

    def log_obs_density(self, y, x):
        return np.asarray(self.log_g(y, x), dtype=float)

    def sample_obs(self, x, gen):
        if self.obs_sampler is None:
            raise CapabilityError("no observation sampler")
        return self.obs_sampler(x, gen)

    def log_trans_density(self, x_prev, x_next):
        self.require_transition_density("log_trans_density")
        return self.log_p(x_prev, x_next)
