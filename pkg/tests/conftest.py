import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, n, rank=None, ridge=0.0):
    a = rng.standard_normal((n, rank or n))
    return a @ a.T + ridge * np.eye(n)
