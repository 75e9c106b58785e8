"""Weight normalisation, ESS, and resampling schemes.

Ancestor indices are 0-based: ``ancestors[i] = j`` means particle ``i`` of
the new generation descends from particle ``j`` of the previous one.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeightsError, DomainError

SCHEMES = ("systematic", "multinomial")


def normalize_log_weights(log_weights) -> tuple[np.ndarray, float]:
    """Return normalised weights and ``log(mean(exp(log_weights)))``.

    For bootstrap weights ``log g(y | x^i)`` the second value is the log of
    the one-step likelihood estimate.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise DomainError("log-weights must be a non-empty vector")
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise DomainError("log-weights contain NaN or +inf")
    top = lw.max()
    if not np.isfinite(top):
        raise DegenerateWeightsError("all particle weights are zero")
    lse = top + np.log(np.sum(np.exp(lw - top)))
    w = np.exp(lw - lse)
    w /= w.sum()
    return w, float(lse - np.log(lw.size))


def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def log_mean_exp(values, axis=None):
    v = np.asarray(values, dtype=float)
    n = v.size if axis is None else v.shape[axis]
    return logsumexp(v, axis=axis) - np.log(n)


def _check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DomainError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite and non-negative")
    return w


def _categorical(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(w)
    idx = np.searchsorted(cum, u * cum[-1], side="right")
    # u * total can round up to total; fall back to the last positive weight
    return np.minimum(idx, np.searchsorted(cum, cum[-1], side="left"))


def multinomial_ancestors(w, gen: np.random.Generator, n: int | None = None) -> np.ndarray:
    """i.i.d. categorical draws with ``P(A(i) = j) = w[j]``."""
    w = _check_weights(w)
    n = w.size if n is None else n
    return _categorical(w, gen.random(n))


def systematic_ancestors(w, u: float, n: int | None = None, validate: bool = True) -> np.ndarray:
    """Balanced resampling from the single uniform ``u`` in ``[0, 1)``.

    ``[0, n)`` is cut into consecutive pieces ``[a_j, a_j + n w_j)``; particle
    ``j`` receives one offspring for each of ``u, u + 1, ..., u + n - 1``
    that lands in its piece. Ancestors come out sorted.
    """
    if validate:
        w = _check_weights(w)
        if not 0.0 <= u < 1.0:
            raise DomainError("u must lie in [0, 1)")
    n = w.size if n is None else n
    cum = np.cumsum(w)
    edges = cum * (n / cum[-1])
    # cumsum rounding can push an edge that is an integer in exact arithmetic
    # (uniform weights, w = 0.2 with n = 5) a few ulps past the point u + k
    near = np.rint(edges)
    snap = np.abs(edges - near) <= 8 * np.finfo(float).eps * n
    edges[snap] = near[snap]
    edges[-1] = n
    k = np.arange(n, dtype=float)
    # u + k can round up to k + 1; keep each point inside [k, k + 1)
    pts = np.minimum(u + k, np.nextafter(k + 1.0, 0.0))
    return np.searchsorted(edges, pts, side="right")


def conditional_multinomial_ancestors(w, gen: np.random.Generator) -> np.ndarray:
    """Multinomial resampling with the first particle's ancestor pinned to 0."""
    w = _check_weights(w)
    anc = np.empty(w.size, dtype=np.intp)
    anc[0] = 0
    anc[1:] = _categorical(w, gen.random(w.size - 1))
    return anc


def offspring_counts(ancestors, n: int) -> np.ndarray:
    return np.bincount(np.asarray(ancestors), minlength=n)


def resample(scheme: str, w, gen: np.random.Generator, validate: bool = True) -> np.ndarray:
    """``validate=False`` skips the weight checks for callers that normalise weights themselves."""
    if scheme == "systematic":
        return systematic_ancestors(w, gen.random(), validate=validate)
    if scheme == "multinomial":
        if not validate:
            return _categorical(w, gen.random(w.size))
        return multinomial_ancestors(w, gen)
    raise DomainError(f"unknown resampling scheme {scheme!r}; choose from {SCHEMES}")
