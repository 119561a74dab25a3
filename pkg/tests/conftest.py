import numpy as np
import pytest

from mfcontrol import build_ising, build_sir
from mfcontrol.sir import DEFAULT_PARAMS


@pytest.fixture(scope="session")
def ising_model():
    return build_ising(beta_inv_cost=1.0, field=0.0, coupling=-1.0, obs_rate=2.0)


@pytest.fixture(scope="session")
def sir_model():
    return build_sir(**DEFAULT_PARAMS)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_simplex(rng, l):
    return rng.dirichlet(np.ones(l))
