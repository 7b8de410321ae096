import numpy as np
import pytest

from plebo import gp
from plebo.schema import HyperParams, SuiteConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def theta():
    return HyperParams(lengthscale=0.3, signal_variance=1.5, noise_variance=1e-4)


@pytest.fixture
def make_dataset():
    """Factory for random datasets on the unit square."""

    def _make(rng, n, d=2, scale=1.0):
        X = rng.uniform(0.0, 1.0, size=(n, d))
        y = scale * rng.standard_normal(n)
        return gp.Dataset(X=X, y=y)

    return _make


@pytest.fixture
def small_suite_config():
    return SuiteConfig(n_tuning=3, n_test=2, tuning_evals=8, n_start=3, grid_side=6, seed=7)


def dense_lml(D, theta):
    """Reference LML via an explicit inverse and determinant."""
    K = gp.gram(D, theta)
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    return float(-0.5 * D.y @ np.linalg.inv(K) @ D.y - 0.5 * logdet - 0.5 * D.n * np.log(2 * np.pi))
