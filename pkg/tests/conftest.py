import numpy as np
import pytest

from potnash.games import CournotGame, CournotParams, GridGame, cournot_grid
from potnash.gp_core import GPHyperparams

COURNOT_LENGTH = 30**0.25  # squared length scale sqrt(30)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cournot():
    return CournotParams()


@pytest.fixture
def cournot_grid_game(cournot):
    g = cournot_grid(cournot)
    return GridGame(CournotGame(cournot, noise_std=1e-3), [g, g])


@pytest.fixture
def cournot_hyper():
    return GPHyperparams.isotropic(1.0, COURNOT_LENGTH, 2, noise_variance=1e-6)
