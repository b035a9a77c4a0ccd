import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conegeo import GeometryDescriptor, make_grid

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def torus_pair(grid, a=0.05, b=0.01, shift=0.5):
    x = grid.sigma
    return a * np.cos(2 * np.pi * x), shift + b * np.sin(4 * np.pi * x)


def radial_b(grid):
    q = grid.sigma**2
    return 4 * q / (1 + q) ** 2


def football_pair(grid, a=0.02, b=0.02, shift=0.5):
    bb = radial_b(grid)
    return a * bb, shift - b * bb**2


@pytest.fixture
def torus_grid():
    return make_grid(GeometryDescriptor.torus(), 32, 17)


@pytest.fixture
def football_grid():
    return make_grid(GeometryDescriptor.football(0.45), 33, 17)
