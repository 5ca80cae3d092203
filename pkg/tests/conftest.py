import numpy as np
import pytest

from sbrtrace.launcher import make_grid
from sbrtrace.scene import make_corner, make_shoebox


@pytest.fixture(scope="session")
def shoebox():
    return make_shoebox((5.0, 4.0, 3.0))


@pytest.fixture(scope="session")
def corner():
    return make_corner()


@pytest.fixture(scope="session")
def grid21():
    return make_grid(21)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
