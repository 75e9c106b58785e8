"""Particle smoothing.

Trajectory (Kitagawa) smoother via stored ancestry, its path-degeneracy
diagnostics, fixed-lag smoothing, and the forward-backward smoothers
(backward simulation of paths and O(N^2) marginal reweighting).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWeightsError, DomainError
from .pf import FilterResult, weighted_quantiles
from .rng import RngStream, as_stream
from .ssm import StateSpaceModel


@dataclass
class TrajectoryStore:
    """Filter particles for ``t = 0..T`` and the ancestor indices linking them.

    ``ancestors[t - 1][i]`` is the index at time ``t - 1`` of the parent of
    particle ``i`` at time ``t``.
    """

    particles: np.ndarray  # (T + 1, N, d)
    log_weights: np.ndarray  # (T + 1, N), normalised
    ancestors: np.ndarray  # (T, N)

    def __post_init__(self):
        T1, N = self.particles.shape[:2]
        if self.ancestors.shape != (T1 - 1, N):
            raise DomainError("ancestry must have shape (T, N)")
        if self.ancestors.size and (self.ancestors.min() < 0 or self.ancestors.max() >= N):
            raise DomainError("ancestor index out of range")

    @classmethod
    def from_filter(cls, res: FilterResult) -> "TrajectoryStore":
        if res.particles is None:
            raise DomainError("filter was run without store_particles=True")
        return cls(res.particles, res.log_weights, res.ancestors)

    @property
    def T(self) -> int:
        return self.particles.shape[0] - 1

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    def weights(self, t: int) -> np.ndarray:
        return np.exp(self.log_weights[t])

    def lineage(self, start: int | None = None) -> np.ndarray:
        """``idx[s, i]``: time-``s`` ancestor of particle ``i`` at time ``start``."""
        start = self.T if start is None else start
        idx = np.empty((start + 1, self.N), dtype=np.intp)
        idx[start] = np.arange(self.N)
        for s in range(start - 1, -1, -1):
            idx[s] = self.ancestors[s][idx[s + 1]]
        return idx


def extract_trajectory(store: TrajectoryStore, final_index: int) -> np.ndarray:
    """Path ``x_{0:T}`` of final particle ``final_index`` by walking ancestors."""
    if not 0 <= final_index < store.N:
        raise DomainError(f"particle index {final_index} out of range [0, {store.N})")
    path = np.empty((store.T + 1, store.particles.shape[2]))
    i = final_index
    path[store.T] = store.particles[store.T, i]
    for s in range(store.T - 1, -1, -1):
        i = store.ancestors[s][i]
        path[s] = store.particles[s, i]
    return path


def unique_path_count(store: TrajectoryStore, s: int) -> int:
    """Distinct time-``s`` ancestors among the particles at the final time."""
    if not 0 <= s <= store.T:
        raise DomainError("s out of range")
    return int(np.unique(store.lineage()[s]).size)


def unique_path_counts(store: TrajectoryStore) -> np.ndarray:
    lin = store.lineage()
    return np.array([np.unique(row).size for row in lin])


def coalescence_time(store: TrajectoryStore) -> int | None:
    """Largest ``s`` at which all final particles share one ancestor, else ``None``."""
    counts = unique_path_counts(store)
    ones = np.flatnonzero(counts == 1)
    return int(ones.max()) if ones.size else None


@dataclass
class MarginalSummary:
    mean: np.ndarray
    q05: np.ndarray
    q95: np.ndarray


def _summaries(samples, weights, quantiles=(0.05, 0.95)) -> MarginalSummary:
    T1 = len(samples)
    d = samples[0].shape[1]
    mean = np.empty((T1, d))
    lo = np.empty((T1, d))
    hi = np.empty((T1, d))
    for s in range(T1):
        w = weights[s] / weights[s].sum()
        mean[s] = w @ samples[s]
        lo[s], hi[s] = weighted_quantiles(samples[s], w, quantiles)
    return MarginalSummary(mean, lo, hi)


def kitagawa_marginals(store: TrajectoryStore) -> MarginalSummary:
    """Marginals of the stored-trajectory smoother at every ``s``."""
    lin = store.lineage()
    wT = store.weights(store.T)
    return _summaries([store.particles[s, lin[s]] for s in range(store.T + 1)], [wT] * (store.T + 1))


def fixed_lag_smoother(store: TrajectoryStore, lag: int) -> MarginalSummary:
    """Approximate ``pi_{s|T}`` by the trajectory smoother frozen at ``s + lag``."""
    if lag < 0:
        raise DomainError("lag must be >= 0")
    samples, weights = [], []
    for s in range(store.T + 1):
        u = min(s + lag, store.T)
        idx = np.arange(store.N)
        for r in range(u, s, -1):
            idx = store.ancestors[r - 1][idx]
        samples.append(store.particles[s, idx])
        weights.append(store.weights(u))
    return _summaries(samples, weights)


def _row_categorical(log_p: np.ndarray, u: np.ndarray) -> np.ndarray:
    top = log_p.max(axis=1, keepdims=True)
    p = np.exp(log_p - top)
    cum = np.cumsum(p, axis=1)
    idx = np.sum(cum < (u * cum[:, -1])[:, None], axis=1)
    return np.minimum(idx, log_p.shape[1] - 1)


def backward_sample_paths(
    store: TrajectoryStore, model: StateSpaceModel, n_paths: int, rng: RngStream | int
) -> np.ndarray:
    """Draw ``n_paths`` trajectories ``(n_paths, T + 1, d)`` by backward simulation.

    The final state is drawn from the time-``T`` filter weights; each earlier
    state is drawn from the time-``s`` particles with probabilities
    proportional to ``w_s^i p(x_{s+1} | x_s^i)``.
    """
    model.require_transition_density("backward simulation")
    rng = as_stream(rng)
    T, N = store.T, store.N
    paths = np.empty((n_paths, T + 1, store.particles.shape[2]))
    lw = store.log_weights[T]
    u = rng.generator(T, "backward").random(n_paths)
    j = _row_categorical(np.broadcast_to(lw, (n_paths, N)), u)
    paths[:, T] = store.particles[T, j]
    for s in range(T - 1, -1, -1):
        xs = store.particles[s]
        logp = store.log_weights[s][None, :] + model.log_trans_density(xs[None, :, :], paths[:, s + 1][:, None, :])
        bad = ~np.isfinite(logp.max(axis=1))
        if np.any(bad):
            raise DegenerateWeightsError(f"backward weights vanish for path {int(np.argmax(bad))}", step=s)
        u = rng.generator(s, "backward").random(n_paths)
        paths[:, s] = xs[_row_categorical(logp, u)]
    return paths


def backward_sample_trajectory(store: TrajectoryStore, model: StateSpaceModel, rng: RngStream | int) -> np.ndarray:
    return backward_sample_paths(store, model, 1, rng)[0]


def marginal_smoothing_weights(x_s, w_s, x_next, w_next_smooth, model: StateSpaceModel) -> np.ndarray:
    """One backward step of marginal forward-backward smoothing.

    ``w_{s|T}^i = w_s^i sum_j w_{s+1|T}^j p(x^j_{s+1} | x^i_s) / sum_k w_s^k p(x^j_{s+1} | x^k_s)``
    """
    model.require_transition_density("marginal smoothing")
    w_s = np.asarray(w_s, dtype=float)
    w_next = np.asarray(w_next_smooth, dtype=float)
    with np.errstate(divide="ignore"):
        A = np.log(w_s)[:, None] + model.log_trans_density(np.asarray(x_s)[:, None, :], np.asarray(x_next)[None, :, :])
    # column-shifted exponentials: E[i, j] = w_s^i p(x^j | x^i) / max_k(w_s^k p(x^j | x^k)),
    # so each column sums to at least one and the weights are E @ (w_next / colsum)
    top = A.max(axis=0)
    dead = ~np.isfinite(top) & (w_next > 0)
    if np.any(dead):
        raise DegenerateWeightsError(f"zero predictive density at time-(s+1) particle {int(np.flatnonzero(dead)[0])}")
    live = np.isfinite(top)
    E = np.exp(A[:, live] - top[live])
    out = E @ (w_next[live] / E.sum(axis=0))
    total = out.sum()
    if not total > 0:
        raise DegenerateWeightsError("all smoothing weights are zero")
    return out / total


def ffbs_weights(store: TrajectoryStore, model: StateSpaceModel) -> np.ndarray:
    """Marginal smoothing weights ``(T + 1, N)`` over the filter particles."""
    T = store.T
    W = np.empty((T + 1, store.N))
    W[T] = store.weights(T)
    for s in range(T - 1, -1, -1):
        W[s] = marginal_smoothing_weights(store.particles[s], store.weights(s), store.particles[s + 1], W[s + 1], model)
    return W


def ffbs_marginals(store: TrajectoryStore, model: StateSpaceModel) -> MarginalSummary:
    W = ffbs_weights(store, model)
    return _summaries(list(store.particles), list(W))
