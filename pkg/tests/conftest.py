import numpy as np
import pytest

from opfactor import FamilySpec, Grid, GridFunction


@pytest.fixture
def grid8():
    return Grid(0.0, 1.0, 8)


@pytest.fixture
def grid129():
    return Grid(0.0, 1.0, 129)


def gf(values, grid=None):
    values = np.asarray(values, dtype=float)
    if grid is None:
        grid = Grid(0.0, 1.0, values.shape[0])
    return GridFunction(values, grid)


def basis_vector(j, grid):
    v = np.zeros(grid.n)
    v[j] = 1.0
    return GridFunction(v, grid)


class SegmentSampler:
    """Deterministic draws t * e1 with t evenly spaced over [0, 1]."""

    def __init__(self, grid):
        self.grid = grid

    def draw(self, count, seed):
        out = []
        for t in np.linspace(0.0, 1.0, count):
            v = np.zeros(self.grid.n)
            v[0] = t
            out.append(GridFunction(v, self.grid))
        return out


def fourier_family(grid, modes=8, decay=2.0, radius=1.0, seed=7):
    return FamilySpec("fourier_ball", grid, seed=seed, modes=modes,
                      decay=decay, radius=radius)
