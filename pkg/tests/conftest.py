import numpy as np
import pytest


def random_spd(p, rng, cond_scale=1.0):
    """Well-conditioned random SPD matrix."""
    a = rng.standard_normal((p, p))
    return a @ a.T + cond_scale * p * np.eye(p)


def random_correlation(p, rng):
    """Correlation matrix from a random SPD covariance."""
    s = random_spd(p, rng, cond_scale=0.5)
    d = 1.0 / np.sqrt(np.diag(s))
    c = s * np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return (c + c.T) / 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
