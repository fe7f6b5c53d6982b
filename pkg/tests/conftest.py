import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riskpg import envs, mdp as M

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bandit():
    return envs.get_entry("mild_bandit").build()


@pytest.fixture
def small_mdp():
    return envs.get_entry("random_small").build()


@pytest.fixture
def feature_mdp():
    return envs.get_entry("random_features").build()


def deterministic_chain(T=3, cost=1.0):
    return M.MdpSpec.build([[[1.0]]], [[[cost]]], [1.0], 0.9, T)
