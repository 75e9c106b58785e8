"""Particle MCMC: particle marginal Metropolis-Hastings and particle Gibbs.

Parameters are float vectors ``theta``; a ``model_builder`` turns one into
a :class:`~smcda.ssm.StateSpaceModel`. Each MCMC iteration ``k`` draws its
randomness from ``rng.child(k)``, so a chain prefix is reproducible on its
own.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import truncnorm

from .errors import CapabilityError, DegenerateWeightsError, DomainError
from .pf import bootstrap_log_likelihood, run_particle_filter
from .resample import _categorical, conditional_multinomial_ancestors, multinomial_ancestors
from .rng import Rewinder, RngStream, as_stream
from .smooth import TrajectoryStore, extract_trajectory
from .ssm import StateSpaceModel

log = logging.getLogger(__name__)

ModelBuilder = Callable[[np.ndarray], StateSpaceModel]


# ---------------------------------------------------------------------------
# Priors and proposal kernels
# ---------------------------------------------------------------------------


@dataclass
class UniformPrior:
    """Independent uniform priors on boxes ``[low_k, high_k]``."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.atleast_1d(np.asarray(self.low, dtype=float))
        self.high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if np.any(self.high <= self.low):
            raise DomainError("empty prior support")

    def log_density(self, theta) -> float:
        theta = np.atleast_1d(theta)
        if np.any(theta < self.low) or np.any(theta > self.high):
            return -np.inf
        return float(-np.sum(np.log(self.high - self.low)))

    def sample(self, gen: np.random.Generator) -> np.ndarray:
        return self.low + (self.high - self.low) * gen.random(self.low.size)


@dataclass
class GaussianRandomWalk:
    scale: np.ndarray | float

    def propose(self, theta, gen: np.random.Generator) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return theta + np.asarray(self.scale) * gen.standard_normal(theta.size)

    def log_density(self, theta_new, theta_old) -> float:
        scale = np.broadcast_to(np.asarray(self.scale, dtype=float), np.shape(np.atleast_1d(theta_new)))
        z = (np.atleast_1d(theta_new) - np.atleast_1d(theta_old)) / scale
        return float(-0.5 * np.sum(z * z) - np.sum(np.log(scale)) - 0.5 * z.size * math.log(2 * math.pi))


# ---------------------------------------------------------------------------
# Chain containers
# ---------------------------------------------------------------------------


@dataclass
class McmcState:
    theta: np.ndarray
    log_lik_hat: float
    path: np.ndarray | None = None


@dataclass
class McmcChain:
    thetas: np.ndarray  # (M + 1, p); row 0 is the initial state
    log_lik_hat: np.ndarray
    accepted: np.ndarray
    paths: list | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted[1:])) if self.accepted.size > 1 else float("nan")

    def post_burn_in(self, burn_in: int) -> np.ndarray:
        return self.thetas[1 + burn_in :]


def _sample_path(res, rng: RngStream, t: int) -> np.ndarray:
    store = TrajectoryStore.from_filter(res)
    k = multinomial_ancestors(store.weights(store.T), rng.generator(t, "final-select"), 1)[0]
    return extract_trajectory(store, int(k))


def estimate_log_lik(model, observations, N, rng: RngStream, *, scheme="systematic", with_path=False):
    """``(log L_hat, path)``; failure of the filter yields ``(-inf, None)``."""
    try:
        if not with_path:
            return bootstrap_log_likelihood(model, observations, N, rng, scheme), None
        res = run_particle_filter(model, observations, N, rng, scheme=scheme, store_particles=True)
        return res.log_lik, _sample_path(res, rng, len(observations))
    except FloatingPointError as exc:
        log.warning("particle filter failed, treating likelihood as zero: %s", exc)
        return -np.inf, None


# ---------------------------------------------------------------------------
# PMMH
# ---------------------------------------------------------------------------


def pmmh_log_accept_ratio(lp_new, lp_old, lq_back, lq_fwd, ll_new, ll_old) -> float:
    """``log`` of ``p(θ') q(θ|θ') L' / (p(θ) q(θ'|θ) L)``."""
    if not np.isfinite(lp_new) or not np.isfinite(ll_new):
        return -np.inf
    return float((lp_new + lq_back + ll_new) - (lp_old + lq_fwd + ll_old))


def pmmh_step(
    cur: McmcState,
    prior,
    kernel,
    model_builder: ModelBuilder,
    observations,
    N: int,
    rng: RngStream,
    *,
    scheme: str = "systematic",
    with_path: bool = False,
    log_lik_fn: Callable[[np.ndarray], float] | None = None,
) -> tuple[McmcState, bool]:
    """One Metropolis-Hastings move with a fresh likelihood estimate at the proposal.

    ``log_lik_fn`` replaces the particle estimate (e.g. by an exact Kalman
    likelihood); the chain is then an ordinary MH chain.
    """
    if not np.isfinite(cur.log_lik_hat):
        raise DomainError("current log-likelihood estimate must be finite")
    theta_new = kernel.propose(cur.theta, rng.generator(0, "mcmc-propose"))
    lp_new = prior.log_density(theta_new)
    if not np.isfinite(lp_new):
        return cur, False
    if log_lik_fn is not None:
        ll_new, path = float(log_lik_fn(theta_new)), None
    else:
        ll_new, path = estimate_log_lik(
            model_builder(theta_new), observations, N, rng.child("mcmc-filter"), scheme=scheme, with_path=with_path
        )
    log_alpha = pmmh_log_accept_ratio(
        lp_new,
        prior.log_density(cur.theta),
        kernel.log_density(cur.theta, theta_new),
        kernel.log_density(theta_new, cur.theta),
        ll_new,
        cur.log_lik_hat,
    )
    u = rng.generator(0, "mcmc-accept").random()
    if log_alpha >= 0 or np.log(u) < log_alpha:
        return McmcState(np.atleast_1d(theta_new), ll_new, path), True
    return cur, False


def run_pmmh(
    theta0,
    iterations: int,
    prior,
    kernel,
    model_builder: ModelBuilder,
    observations,
    N: int,
    seed: RngStream | int = 0,
    *,
    burn_in: int = 0,
    scheme: str = "systematic",
    with_path: bool = False,
    log_lik_fn: Callable[[np.ndarray], float] | None = None,
    progress: Callable[[int], None] | None = None,
) -> McmcChain:
    if iterations < 0:
        raise DomainError("iterations must be >= 0")
    rng = as_stream(seed)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if log_lik_fn is not None:
        ll0, path0 = float(log_lik_fn(theta0)), None
    else:
        ll0, path0 = estimate_log_lik(
            model_builder(theta0), observations, N, rng.child("init"), scheme=scheme, with_path=with_path
        )
    if not np.isfinite(ll0):
        raise DomainError("initial likelihood estimate is zero; pick another starting point")
    cur = McmcState(theta0, ll0, path0)
    thetas = np.empty((iterations + 1, theta0.size))
    lls = np.empty(iterations + 1)
    acc = np.zeros(iterations + 1, dtype=bool)
    paths = [path0] if with_path else None
    thetas[0], lls[0] = theta0, ll0
    for k in range(1, iterations + 1):
        cur, ok = pmmh_step(
            cur, prior, kernel, model_builder, observations, N, rng.child(k),
            scheme=scheme, with_path=with_path, log_lik_fn=log_lik_fn,
        )
        thetas[k], lls[k], acc[k] = cur.theta, cur.log_lik_hat, ok
        if with_path:
            paths.append(cur.path)
        if progress is not None:
            progress(k)
    chain = McmcChain(thetas, lls, acc, paths)
    chain.diagnostics.update(acceptance_rate=chain.acceptance_rate, burn_in=burn_in)
    return chain


@dataclass
class TuneReport:
    theta: np.ndarray
    target: float
    recommended_N: int
    rounds: list  # (N, variance of log L_hat)

    @property
    def final_variance(self) -> float:
        return self.rounds[-1][1]


def log_lik_variance(model, observations, N, rng: RngStream, reps: int = 20, scheme="systematic") -> float:
    vals = [estimate_log_lik(model, observations, N, rng.child(r), scheme=scheme)[0] for r in range(reps)]
    vals = np.asarray(vals)
    if not np.all(np.isfinite(vals)):
        return np.inf
    return float(np.var(vals, ddof=1))


def tune_particles(
    model_builder: ModelBuilder,
    theta,
    observations,
    N_pilot: int,
    seed: RngStream | int = 0,
    *,
    reps: int = 20,
    target: float = 1.5,
    window: tuple[float, float] = (1.0, 3.0),
    max_rounds: int = 4,
    scheme: str = "systematic",
) -> TuneReport:
    """Pick ``N`` so that ``Var(log L_hat)`` is near ``target``.

    The variance of the log-likelihood estimate scales roughly like ``1/N``,
    so each round rescales ``N`` by ``variance / target`` and re-measures with
    ``reps`` fresh filter runs, stopping once the variance lies in ``window``.
    """
    rng = as_stream(seed)
    model = model_builder(np.atleast_1d(theta))
    N = int(N_pilot)
    rounds = []
    for r in range(max_rounds):
        v = log_lik_variance(model, observations, N, rng.child("tune", r), reps, scheme)
        rounds.append((N, v))
        if window[0] <= v <= window[1]:
            break
        N = 4 * N if not np.isfinite(v) else max(2, int(math.ceil(N * v / target)))
    return TuneReport(np.atleast_1d(theta), target, N, rounds)


# ---------------------------------------------------------------------------
# Conditional particle filter and particle Gibbs
# ---------------------------------------------------------------------------


def conditional_particle_filter(
    x_cur,
    model: StateSpaceModel,
    observations,
    N: int,
    ancestor_sampling: bool,
    rng: RngStream | int,
) -> tuple[np.ndarray, TrajectoryStore]:
    """Path update for particle Gibbs; particle 0 is pinned to ``x_cur``.

    With ``ancestor_sampling`` the pinned particle's ancestor is redrawn at
    every step with probabilities proportional to ``w_{t-1}^i p(x_t^cur | x_{t-1}^i)``.
    """
    if N < 2:
        raise DomainError("conditional particle filter needs N >= 2")
    if ancestor_sampling:
        model.require_transition_density("ancestor sampling")
    rng = as_stream(rng)
    gens = Rewinder(rng)
    ys = np.asarray(observations, dtype=float).reshape(len(observations), -1)
    n = ys.shape[0]
    x_cur = np.asarray(x_cur, dtype=float).reshape(n + 1, -1)
    d = x_cur.shape[1]

    parts = np.empty((n + 1, N, d))
    lws = np.empty((n + 1, N))
    anc = np.empty((n, N), dtype=np.intp)
    parts[0, 0] = x_cur[0]
    parts[0, 1:] = model.sample_initial(N - 1, rng.generator(0, "initial"))
    lws[0] = -np.log(N)
    w = np.full(N, 1.0 / N)
    for t in range(1, n + 1):
        # one stream per step, consumed in a fixed order: resample, ancestor, propagate
        gen = gens.at(t, "cpf")
        if t > 1:
            a = conditional_multinomial_ancestors(w, gen)
        else:
            a = np.arange(N)
        if ancestor_sampling:
            logits = lws[t - 1] + model.log_trans_density(parts[t - 1], x_cur[t][None, :])
            top = logits.max()
            if not np.isfinite(top):
                raise DegenerateWeightsError("ancestor weights vanish for the reference path", step=t)
            w_as = np.exp(logits - top)
            a[0] = _categorical(w_as, gen.random(1))[0]
        anc[t - 1] = a
        parts[t, 0] = x_cur[t]
        parts[t, 1:] = model.propagate(parts[t - 1, a[1:]], gen)
        lg = model.log_obs_density(ys[t - 1], parts[t])
        top = lg.max()
        if np.isnan(lg).any() or not np.isfinite(top):
            raise DegenerateWeightsError("all particle weights are zero", step=t)
        w = np.exp(lg - top)
        w /= w.sum()
        with np.errstate(divide="ignore"):
            lws[t] = np.log(w)
    store = TrajectoryStore(parts, lws, anc)
    k = multinomial_ancestors(np.exp(lws[n]), rng.generator(n, "final-select"), 1)[0]
    return extract_trajectory(store, int(k)), store


def complete_data_log_lik(model: StateSpaceModel, path, observations) -> float:
    """``log pi_0(x_0) + sum log p(x_t | x_{t-1}) + sum log g(y_t | x_t)``."""
    model.require_transition_density("complete-data likelihood")
    path = np.asarray(path, dtype=float)
    ys = np.asarray(observations, dtype=float).reshape(len(observations), -1)
    total = float(np.sum(model.log_initial_density(path[:1])))
    total += float(np.sum(model.log_trans_density(path[:-1], path[1:])))
    for t in range(1, path.shape[0]):
        total += float(model.log_obs_density(ys[t - 1], path[t : t + 1])[0])
    return total


def identity_theta_update(theta, path, gen):
    return np.atleast_1d(theta)


def rw_metropolis_theta_update(prior, model_builder: ModelBuilder, observations, scale):
    """Random-walk Metropolis on ``p(theta) p(x_{0:n}, y_{1:n} | theta)``.

    Generic fallback when no conjugate full conditional is available.
    """
    kernel = GaussianRandomWalk(scale)

    def update(theta, path, gen):
        theta = np.atleast_1d(theta)
        prop = kernel.propose(theta, gen)
        lp_new = prior.log_density(prop)
        if not np.isfinite(lp_new):
            return theta
        try:
            new = lp_new + complete_data_log_lik(model_builder(prop), path, observations)
        except (DomainError, CapabilityError, FloatingPointError):
            return theta
        old = prior.log_density(theta) + complete_data_log_lik(model_builder(theta), path, observations)
        return prop if np.log(gen.random()) < new - old else theta

    return update


def lg_phi_conditional(q: float, low: float = 0.0, high: float = 1.0):
    """Exact full conditional of a scalar AR coefficient under a flat prior on ``[low, high]``.

    For ``x_t = phi x_{t-1} + N(0, q)`` the conditional is a normal with
    mean ``sum x_t x_{t-1} / sum x_{t-1}^2`` and variance ``q / sum x_{t-1}^2``,
    truncated to the prior support. Assumes the initial law does not depend on ``phi``.
    """

    def update(theta, path, gen):
        x = np.asarray(path, dtype=float).reshape(-1)
        sxx = float(np.sum(x[:-1] ** 2))
        mean = float(np.sum(x[1:] * x[:-1])) / sxx
        sd = math.sqrt(q / sxx)
        a, b = (low - mean) / sd, (high - mean) / sd
        return np.array([truncnorm.ppf(gen.random(), a, b, loc=mean, scale=sd)])

    return update


def particle_gibbs_sweep(
    cur: McmcState,
    theta_update,
    model_builder: ModelBuilder,
    observations,
    N: int,
    rng: RngStream,
    ancestor_sampling: bool = False,
) -> McmcState:
    """``theta | x_{0:n}`` followed by a conditional-particle-filter path update."""
    theta = np.atleast_1d(theta_update(cur.theta, cur.path, rng.generator(0, "theta-update")))
    path, _ = conditional_particle_filter(
        cur.path, model_builder(theta), observations, N, ancestor_sampling, rng.child("cpf")
    )
    return McmcState(theta, float("nan"), path)


def initial_path(model: StateSpaceModel, observations, N: int, rng: RngStream) -> np.ndarray:
    res = run_particle_filter(model, observations, N, rng, store_particles=True)
    return _sample_path(res, rng, len(observations))


def run_particle_gibbs(
    theta0,
    iterations: int,
    theta_update,
    model_builder: ModelBuilder,
    observations,
    N: int,
    seed: RngStream | int = 0,
    *,
    path0=None,
    ancestor_sampling: bool = False,
    keep_paths: bool = False,
) -> McmcChain:
    rng = as_stream(seed)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if path0 is None:
        path0 = initial_path(model_builder(theta0), observations, N, rng.child("init"))
    cur = McmcState(theta0, float("nan"), np.asarray(path0, dtype=float))
    thetas = np.empty((iterations + 1, theta0.size))
    thetas[0] = theta0
    paths = [cur.path] if keep_paths else None
    changed = np.zeros(iterations + 1, dtype=bool)
    for k in range(1, iterations + 1):
        new = particle_gibbs_sweep(cur, theta_update, model_builder, observations, N, rng.child(k), ancestor_sampling)
        changed[k] = not np.array_equal(new.path, cur.path)
        cur = new
        thetas[k] = cur.theta
        if keep_paths:
            paths.append(cur.path)
    chain = McmcChain(thetas, np.full(iterations + 1, np.nan), changed, paths)
    chain.diagnostics["final_path"] = cur.path
    return chain
