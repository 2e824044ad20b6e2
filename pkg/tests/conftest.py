import numpy as np
import pytest

from hetwls.estimators import RegressionData


def make_data(rng, n=50, p=2, groups=True, hetero=True):
    X = np.column_stack([np.ones(n), rng.uniform(0, 1, size=(n, p - 1))])
    sigma = rng.choice([0.05, 0.2, 1.0], size=n) if hetero else np.full(n, 0.3)
    y = X[:, -1] ** 2 + sigma * rng.standard_normal(n)
    g = np.searchsorted(np.unique(sigma), sigma) + 1 if groups else None
    return RegressionData(X, y, sigma, g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def data(rng):
    return make_data(rng)
