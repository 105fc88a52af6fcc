import numpy as np
import pytest

from kasplab.funcspace import make_grid


@pytest.fixture
def small_grid():
    return make_grid(10.0, 401)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
