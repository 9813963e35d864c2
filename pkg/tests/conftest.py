import numpy as np
import pytest

from cpt3.lindblad import LaserField


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte-Carlo or scan tests")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lasers_4level():
    """Perturbative operating point of the reduced scheme (Hz)."""
    return (
        LaserField("B", -20e6, 8e6, 0.0),
        LaserField("R", 0.0, 2e6, 0.0),
        LaserField("C", -8e6, 4e5, 0.0),
    )


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return a + a.conj().T
