import sys
import numpy as np
import pytest

from smcda import LinearGaussian, LinearGaussianParams, RngStream


def random_stable_lg(d: int, seed: int, q: int | None = None, radius: float = 0.8) -> LinearGaussianParams:
    """Random linear-Gaussian model whose transition matrix has spectral radius ``radius``."""
    g = np.random.default_rng(seed)
    q = d if q is None else q
    A = g.standard_normal((d, d))
    Phi = radius * A / np.max(np.abs(np.linalg.eigvals(A)))
    B = g.standard_normal((d, d))
    Q = 0.5 * (B @ B.T / d + np.eye(d))
    H = g.standard_normal((q, d))
    C = g.standard_normal((q, q))
    R = 0.5 * (C @ C.T / q + np.eye(q))
    return LinearGaussianParams(Phi, Q, H, R, np.zeros(d), np.eye(d))


@pytest.fixture
def scalar_lg():
    p = LinearGaussianParams.scalar(phi=0.7, q=1.0, h=1.0, r=1.0, m0=0.0, p0=1.0)
    model = LinearGaussian(p)
    xs, ys = model.simulate(30, RngStream(2024))
    return p, model, xs, ys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
