import logging

import numpy as np
import pytest

from varmdp.finite_var import augmented_solution
from varmdp.instances import RandomSpec, gen_random
from varmdp.mdp_core import FiniteMdp


@pytest.fixture(autouse=True)
def quiet_solvers(caplog):
    caplog.set_level(logging.WARNING, logger="varmdp")
    yield
    augmented_solution.cache_clear()


@pytest.fixture
def make_mdp():
    """Factory: P[s, a, s'] and r[s, a] nested lists to a FiniteMdp."""
    def build(transition, reward, admissible=None, resolution=None):
        return FiniteMdp.from_arrays(np.array(transition, dtype=float), np.array(reward, dtype=float),
                                     admissible=admissible, reward_resolution=resolution)
    return build


@pytest.fixture
def two_point(make_mdp):
    """Single-action chain spending half its time on reward 1 and half on reward 3."""
    return make_mdp([[[0.5, 0.5]], [[0.5, 0.5]]], [[1.0], [3.0]])


@pytest.fixture
def self_loop_choice(make_mdp):
    """One state, two self-loop actions paying 1 and 9."""
    return make_mdp([[[1.0], [1.0]]], [[1.0, 9.0]])


@pytest.fixture
def identity_chain(make_mdp):
    """Two absorbing states: the only policy is multichain."""
    return make_mdp([[[1.0, 0.0]], [[0.0, 1.0]]], [[0.0], [1.0]])


@pytest.fixture
def two_cycle(make_mdp):
    return make_mdp([[[0.0, 1.0]], [[1.0, 0.0]]], [[0.0], [1.0]])


@pytest.fixture
def coin_walk(make_mdp):
    """Start state paying 0, then two fair draws between rewards 0 and 1."""
    row = [0.0, 0.5, 0.5]
    return make_mdp([[row], [row], [row]], [[0.0], [0.0], [1.0]], resolution=1.0)


@pytest.fixture
def tiny_random():
    """Factory for small seeded instances; integer rewards carry resolution 1."""
    def build(seed, num_states=3, num_actions=2, reward_model="uniform", r_max=5):
        return gen_random(RandomSpec(num_states=num_states, num_actions=num_actions,
                                     reward_model=reward_model, r_max=r_max, seed=seed))
    return build
