"""Row-chunked thread pool used for particle propagation.

Random numbers are drawn before the work is split, so the chunking never
changes results; it only changes wall time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=8)
def _pool(threads: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=threads, thread_name_prefix="smcda")


def map_rows(fn, x: np.ndarray, noise: np.ndarray, threads: int = 1) -> np.ndarray:
    """``fn(x, noise)`` evaluated on row chunks of ``x`` and ``noise``."""
    n = x.shape[0]
    if threads <= 1 or n < 2 * threads:
        return fn(x, noise)
    chunks = np.array_split(np.arange(n), threads)
    parts = _pool(threads).map(lambda idx: fn(x[idx], noise[idx]), chunks)
    return np.concatenate(list(parts), axis=0)


def propagate(model, x: np.ndarray, gen: np.random.Generator, threads: int = 1) -> np.ndarray:
    noise = model.draw_noise(x.shape[0], gen)
    return map_rows(model.transition, x, noise, threads)
