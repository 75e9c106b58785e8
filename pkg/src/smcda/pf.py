"""Particle filters: sequential importance sampling, bootstrap, auxiliary.

Random streams used at step ``t`` (the step that assimilates ``y_t``):
``(t, "resample")`` for the ancestor draw and ``(t, "propagate")`` for the
state noise. The initial sample uses ``(0, "initial")``. Sharing these
addresses is what makes the bootstrap filter, SIS, and the auxiliary filter
with a trivial proposal produce identical particles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import parallel
from .errors import DegenerateWeightsError, DomainError
from .resample import SCHEMES, ess, resample
from .rng import Rewinder, RngStream, as_stream
from .ssm import GaussianNoise, LinearGaussianParams, StateSpaceModel


@dataclass
class ParticleSystem:
    """Weighted particle approximation at time ``t``.

    ``log_weights`` are normalised (``logsumexp == 0``); ``log_lik`` is the
    running log of the likelihood estimate up to ``t``.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    t: int = 0
    log_lik: float = 0.0
    ancestors: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.particles.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @classmethod
    def initial(cls, model: StateSpaceModel, N: int, rng: RngStream) -> "ParticleSystem":
        x = model.sample_initial(N, rng.generator(0, "initial"))
        return cls(x, np.full(N, -np.log(N)))


def _reweighted(ps, x_new, log_w_unnorm, ancestors) -> ParticleSystem:
    t = ps.t + 1
    if np.any(np.isnan(log_w_unnorm)):
        raise DegenerateWeightsError("NaN importance weight", step=t)
    top = log_w_unnorm.max()
    if not np.isfinite(top):
        raise DegenerateWeightsError("all particle weights are zero", step=t)
    lse = top + np.log(np.sum(np.exp(log_w_unnorm - top)))
    return ParticleSystem(x_new, log_w_unnorm - lse, t, ps.log_lik + float(lse), ancestors)


def sis_step(ps: ParticleSystem, y, model: StateSpaceModel, rng: RngStream, threads: int = 1) -> ParticleSystem:
    """Propagate without resampling and multiply the weights by ``g(y | x)``."""
    t = ps.t + 1
    x_new = parallel.propagate(model, ps.particles, rng.generator(t, "propagate"), threads)
    log_w = ps.log_weights + model.log_obs_density(y, x_new)
    return _reweighted(ps, x_new, log_w, np.arange(ps.N))


def bootstrap_step(
    ps: ParticleSystem,
    y,
    model: StateSpaceModel,
    scheme: str,
    rng: RngStream,
    resample_threshold: float | None = None,
    threads: int = 1,
) -> ParticleSystem:
    """Resample, propagate through the dynamics, reweight by ``g(y | x) / N``.

    ``resample_threshold=None`` resamples at every step; a float ``c``
    resamples only when ``ESS < c * N`` (``0`` never resamples, which is SIS).
    """
    t = ps.t + 1
    N = ps.N
    if resample_threshold is None or ess(ps.weights) < resample_threshold * N:
        anc = resample(scheme, ps.weights, rng.generator(t, "resample"))
        x_prev = ps.particles[anc]
        log_w_prev = np.full(N, -np.log(N))
    else:
        anc = np.arange(N)
        x_prev = ps.particles
        log_w_prev = ps.log_weights
    x_new = parallel.propagate(model, x_prev, rng.generator(t, "propagate"), threads)
    log_w = log_w_prev + model.log_obs_density(y, x_new)
    return _reweighted(ps, x_new, log_w, anc)


class AuxiliaryProposal:
    """First-stage weights and proposal kernel for the auxiliary filter.

    The base class is the trivial choice (flat first stage, model dynamics
    as proposal), under which the auxiliary filter is the bootstrap filter.
    """

    def __init__(self, model: StateSpaceModel):
        self.model = model

    def first_stage_log_weight(self, x: np.ndarray, y) -> np.ndarray:
        return np.zeros(x.shape[0])

    def propose(self, x: np.ndarray, y, gen: np.random.Generator, threads: int = 1) -> np.ndarray:
        return parallel.propagate(self.model, x, gen, threads)

    def log_proposal_density(self, x_new: np.ndarray, x: np.ndarray, y) -> np.ndarray:
        return self.model.log_trans_density(x, x_new)


class LinearGaussianOptimalProposal(AuxiliaryProposal):
    """Exact ``p(y | x_prev)`` first stage and ``p(x | x_prev, y)`` proposal."""

    def __init__(self, model: StateSpaceModel, params: LinearGaussianParams):
        super().__init__(model)
        p = params
        self.params = p
        S = p.H @ p.Q @ p.H.T + p.R
        self._S_noise = GaussianNoise(np.linalg.cholesky(S))
        self.gain = cho_solve(cho_factor(S, lower=True), p.H @ p.Q).T  # Q H^T S^-1
        cov = p.Q - self.gain @ p.H @ p.Q
        self.cov = 0.5 * (cov + cov.T)
        self._cov_chol = np.linalg.cholesky(self.cov)
        self._cov_noise = GaussianNoise(self._cov_chol)

    def _mean(self, x, y):
        p = self.params
        fx = x @ p.Phi.T
        return fx + (np.asarray(y) - fx @ p.H.T) @ self.gain.T

    def first_stage_log_weight(self, x, y):
        p = self.params
        resid = np.asarray(y) - x @ (p.H @ p.Phi).T
        return self._S_noise.logpdf(resid)

    def propose(self, x, y, gen, threads=1):
        z = gen.standard_normal(x.shape)
        return self._mean(x, y) + z @ self._cov_chol.T

    def log_proposal_density(self, x_new, x, y):
        return self._cov_noise.logpdf(x_new - self._mean(x, y))


def auxiliary_step(
    ps: ParticleSystem,
    y,
    model: StateSpaceModel,
    proposal: AuxiliaryProposal,
    scheme: str,
    rng: RngStream,
    threads: int = 1,
) -> ParticleSystem:
    """Resample on first-stage weights, move with the proposal, importance-correct.

    The log-likelihood increment is the log of the mean unnormalised weight.
    """
    model.require_transition_density("auxiliary_step")
    t = ps.t + 1
    N = ps.N
    lw = ps.log_weights
    first = lw + proposal.first_stage_log_weight(ps.particles, y)
    top = first.max()
    if not np.isfinite(top):
        raise DegenerateWeightsError("all first-stage weights are zero", step=t)
    log_first = first - (top + np.log(np.sum(np.exp(first - top))))
    w_first = np.exp(log_first)
    anc = resample(scheme, w_first, rng.generator(t, "resample"))
    x_prev = ps.particles[anc]
    x_new = proposal.propose(x_prev, y, rng.generator(t, "propagate"), threads)
    log_w = (
        lw[anc]
        - log_first[anc]
        + model.log_trans_density(x_prev, x_new)
        + model.log_obs_density(y, x_new)
        - proposal.log_proposal_density(x_new, x_prev, y)
    )
    out = _reweighted(ps, x_new, log_w, anc)
    out.log_lik -= np.log(N)  # mean, not sum, of the unnormalised weights
    return out


def predict(ps: ParticleSystem, model: StateSpaceModel, steps: int, rng: RngStream) -> ParticleSystem:
    """Propagate ``steps`` times without any correction; weights are carried."""
    x = ps.particles
    for k in range(1, steps + 1):
        x = model.propagate(x, rng.generator(ps.t + k, "propagate"))
    return replace(ps, particles=x, t=ps.t + steps)


def collapse_diagnostic(w) -> tuple[float, float, float]:
    """Largest weight, largest/second-largest ratio, and ESS."""
    w = np.asarray(w, dtype=float)
    if w.size < 2:
        raise DomainError("ratio of the two largest weights needs N >= 2")
    top2 = np.partition(w, -2)[-2:]
    second, first = float(top2[0]), float(top2[1])
    ratio = first / second if second > 0 else np.inf
    return first, ratio, ess(w)


def weighted_quantiles(x: np.ndarray, w: np.ndarray, qs) -> np.ndarray:
    """Column-wise quantiles by linear interpolation of the weighted ECDF."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(w, dtype=float)
    live = w > 0  # zero-weight particles would put flat steps in the ECDF
    x, w = x[live], w[live]
    out = np.empty((len(qs), x.shape[1]))
    for k in range(x.shape[1]):
        order = np.argsort(x[:, k], kind="stable")
        xs = x[order, k]
        cw = np.cumsum(w[order])
        cw /= cw[-1]
        out[:, k] = np.interp(qs, cw, xs)
    return out


@dataclass
class FilterResult:
    """Per-time summaries for ``t = 0..T`` plus optional full history.

    ``particles[t]``/``log_weights[t]`` are stored only when requested;
    ``ancestors[t - 1]`` holds the ancestor indices used at step ``t``.
    """

    log_lik: float
    log_lik_increments: np.ndarray
    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    ess: np.ndarray
    max_weight: np.ndarray
    log_lik_cum: np.ndarray
    ancestors: np.ndarray
    final: ParticleSystem
    particles: np.ndarray | None = None
    log_weights: np.ndarray | None = None
    failed_step: int | None = field(default=None)

    @property
    def T(self) -> int:
        return self.ancestors.shape[0]

    def history(self) -> list[tuple[np.ndarray, np.ndarray]]:
        if self.particles is None:
            raise DomainError("run the filter with store_particles=True")
        return [(self.particles[t], np.exp(self.log_weights[t])) for t in range(self.particles.shape[0])]


def run_particle_filter(
    model: StateSpaceModel,
    observations,
    N: int,
    seed: RngStream | int = 0,
    *,
    method: str = "bootstrap",
    scheme: str = "systematic",
    resample_threshold: float | None = None,
    proposal: AuxiliaryProposal | None = None,
    store_particles: bool = False,
    threads: int = 1,
    quantiles: tuple[float, float] = (0.05, 0.95),
) -> FilterResult:
    """Run ``method`` in {"bootstrap", "sis", "auxiliary"} over all observations."""
    if N < 2:
        raise DomainError("need at least two particles")
    rng = as_stream(seed)
    ys = np.asarray(observations, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    T = ys.shape[0]
    if method == "auxiliary" and proposal is None:
        proposal = AuxiliaryProposal(model)

    ps = ParticleSystem.initial(model, N, rng)
    d = ps.particles.shape[1]
    mean = np.empty((T + 1, d))
    qlo = np.empty((T + 1, d))
    qhi = np.empty((T + 1, d))
    ess_t = np.empty(T + 1)
    maxw = np.empty(T + 1)
    ll_cum = np.zeros(T + 1)
    ancestors = np.empty((T, N), dtype=np.intp)
    parts = np.empty((T + 1, N, d)) if store_particles else None
    lws = np.empty((T + 1, N)) if store_particles else None

    def record(ps):
        w = ps.weights
        t = ps.t
        mean[t] = w @ ps.particles
        qlo[t], qhi[t] = weighted_quantiles(ps.particles, w, quantiles)
        ess_t[t] = ess(w)
        maxw[t] = w.max()
        ll_cum[t] = ps.log_lik
        if store_particles:
            parts[t] = ps.particles
            lws[t] = ps.log_weights

    record(ps)
    for t in range(1, T + 1):
        y = ys[t - 1]
        if method == "bootstrap":
            ps = bootstrap_step(ps, y, model, scheme, rng, resample_threshold, threads)
        elif method == "sis":
            ps = sis_step(ps, y, model, rng, threads)
        elif method == "auxiliary":
            ps = auxiliary_step(ps, y, model, proposal, scheme, rng, threads)
        else:
            raise DomainError(f"unknown filter method {method!r}")
        ancestors[t - 1] = ps.ancestors
        record(ps)

    return FilterResult(
        log_lik=ps.log_lik,
        log_lik_increments=np.diff(ll_cum),
        mean=mean,
        q05=qlo,
        q95=qhi,
        ess=ess_t,
        max_weight=maxw,
        log_lik_cum=ll_cum,
        ancestors=ancestors,
        final=ps,
        particles=parts,
        log_weights=lws,
    )


def run_bootstrap_filter(model, observations, N, scheme="systematic", seed=0, **options) -> FilterResult:
    return run_particle_filter(model, observations, N, seed, method="bootstrap", scheme=scheme, **options)


def bootstrap_log_likelihood(model, observations, N, seed, scheme="systematic") -> float:
    """``log p_hat(y_{1:T})`` from the bootstrap filter, without summaries.

    Same random streams and arithmetic as ``run_bootstrap_filter`` with
    resampling at every step; kept lean for use inside MCMC loops.
    """
    rng = as_stream(seed)
    gens = Rewinder(rng)
    ys = np.asarray(observations, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    if scheme not in SCHEMES:
        raise DomainError(f"unknown resampling scheme {scheme!r}; choose from {SCHEMES}")
    x = model.sample_initial(N, gens.at(0, "initial"))
    w = np.full(N, 1.0 / N)
    log_lik = 0.0
    log_n = np.log(N)
    for t in range(1, ys.shape[0] + 1):
        anc = resample(scheme, w, gens.at(t, "resample"), validate=False)
        x = model.propagate(x[anc], gens.at(t, "propagate"))
        lw = model.log_obs_density(ys[t - 1], x) - log_n
        top = lw.max()
        if not np.isfinite(top):
            raise DegenerateWeightsError("all particle weights are zero", step=t)
        e = np.exp(lw - top)
        s = e.sum()
        log_lik += float(top + np.log(s))
        w = e / s
    return log_lik
