import numpy as np
import pytest

from varmdp import data
from varmdp.instances import RandomSpec, build_microgrid, gen_random
from varmdp.mdp_core import Sense
from varmdp.steady_var import baseline_steady, certify_steady, solve_steady_max, solve_steady_min

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def microgrid():
    return build_microgrid()


@pytest.mark.parametrize("alpha, expected", sorted(data.reference_optima.items()))
def test_microgrid_reference_optima(microgrid, alpha, expected):
    result = solve_steady_max(microgrid, alpha)
    assert result.var_star == pytest.approx(expected, abs=1e-9)
    assert result.certified
    assert np.all(np.diff(result.trace_frame()["var_k"].to_numpy()) > 0)
    assert certify_steady(microgrid, result.policy_star, alpha, Sense.MAX)


@pytest.mark.parametrize("sense", list(Sense))
def test_medium_instances_match_baseline(sense):
    solve = solve_steady_max if sense is Sense.MAX else solve_steady_min
    for seed in range(20):
        mdp = gen_random(RandomSpec(num_states=50, num_actions=20, seed=seed))
        for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
            assert solve(mdp, alpha).var_star == baseline_steady(mdp, alpha, sense).var_star


def test_large_instance_smoke():
    mdp = gen_random(RandomSpec(num_states=1000, num_actions=100, seed=0))
    result = solve_steady_max(mdp, 0.5)
    assert result.certified
    assert result.iterations <= 30
    assert mdp.support.min <= result.var_star <= mdp.support.max
