import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pks_strain.grid import DensityField, Grid2D

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_grid():
    return Grid2D(4.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(grid, rng, scale=1.0):
    return DensityField(grid, scale * rng.random(grid.shape))
