import math

import numpy as np
import pytest

from bramble.laws import (BinaryGaussianLaw, CountGaussianLaw, CategoricalCount,
                          certify_closed_form)
from bramble.walk import default_grid, derive_walk, renewal_table

LOG2 = math.log(2.0)
LOG11 = math.log(1.1)


def _table(walk, seed, n=40_000):
    grid = default_grid(walk.sigma2)
    sd = math.sqrt(walk.sigma2)
    k_max = int(math.ceil(grid[-1] * 1.7 / (0.3 * sd)) + 60)
    return renewal_table(walk, grid, k_max, n, np.random.default_rng([seed, 2]),
                         n_excursions=n, theta_n=1024, theta_samples=100_000)


@pytest.fixture(scope="session")
def binary_law():
    return certify_closed_form(BinaryGaussianLaw(2 * LOG2, 2 * LOG2))


@pytest.fixture(scope="session")
def binary_walk(binary_law):
    return derive_walk(binary_law)


@pytest.fixture(scope="session")
def binary_table(binary_walk):
    return _table(binary_walk, seed=11)


@pytest.fixture(scope="session")
def near_law():
    return certify_closed_form(CountGaussianLaw(
        CategoricalCount([1, 2], [0.9, 0.1]), 2 * LOG11, 2 * LOG11))


@pytest.fixture(scope="session")
def near_walk(near_law):
    return derive_walk(near_law)


@pytest.fixture(scope="session")
def near_table(near_walk):
    return _table(near_walk, seed=13)
