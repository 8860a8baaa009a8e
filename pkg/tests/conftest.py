import numpy as np
import pytest

import vectrisk as vk


@pytest.fixture(scope="session", autouse=True)
def warm_kernel():
    # first solver call compiles the numba kernel; keep it out of timed tests
    rng = np.random.default_rng(0)
    vk.fit_penalized(rng.standard_normal((30, 5)), np.arange(30) % 4, 0.1)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def small_poisson_problem(seed, n=120, p=5, signal=(0.6, 0.0, 0.0, 0.0, 0.0),
                          intercept=0.7):
    """A dense numeric design with a planted sparse truth."""
    g = np.random.default_rng(seed)
    X = g.standard_normal((n, p))
    beta = np.asarray(signal, dtype=float)[:p]
    y = g.poisson(np.exp(intercept + X @ beta))
    return X, y, beta, intercept


@pytest.fixture()
def poisson_problem():
    return small_poisson_problem(202)
