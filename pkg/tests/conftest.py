import numpy as np
import pytest

from altmin_mimo.model import RngStream, build_constellation, realize_system


@pytest.fixture(scope="session")
def qpsk():
    return build_constellation(4)


@pytest.fixture(scope="session")
def qam16():
    return build_constellation(16)


def make_system(n_t, n_r, c, snr_db=10.0, seed=0, trial=0, **kw):
    """Random system, rx_antenna SNR convention unless overridden."""
    return realize_system(n_t, n_r, c, snr_db, RngStream(seed, trial), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
