import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def random_image(rng):
    return rng.random((64, 64, 3))
