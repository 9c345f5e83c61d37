import numpy as np
import pytest


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile (or load from cache) the jitted kernels once up front so
    # individual test timings stay meaningful
    from vista._kernels import warmup

    warmup()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
