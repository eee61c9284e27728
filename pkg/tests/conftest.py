import numpy as np
import pytest

from specgrid.augment import synthetic_rgb


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_gray(rng, shape):
    return rng.random(shape).astype(np.float32)


def random_mask(rng, shape, p=0.3):
    return (rng.random(shape) < p).astype(np.float32)


def toy_rgb(rng, shape=(64, 64)):
    return synthetic_rgb(shape, rng)
