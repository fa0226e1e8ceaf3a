import numpy as np
import pytest

from varmdp.config import DEFAULT_OPTIONS
from varmdp.fh_augmented import AugmentedMarkovPolicy, build_grid, realize_history_policy
from varmdp.finite_var import (
    augmented_solution,
    baseline_finite,
    certify_finite,
    default_init,
    finite_var,
    solve_finite_max,
    solve_finite_min,
)
from varmdp.mdp_core import Sense

ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)
HORIZON = 3


def solve(mdp, alpha, s0, sense, horizon=HORIZON, **kwargs):
    return (solve_finite_max if sense is Sense.MAX else solve_finite_min)(mdp, horizon, alpha, s0, **kwargs)


def corpus(tiny_random, seeds):
    for seed in seeds:
        rng = np.random.default_rng(seed)
        yield tiny_random(seed, num_states=int(rng.integers(2, 4)), num_actions=int(rng.integers(2, 4)),
                          reward_model="integer", r_max=4)


def test_binomial_var(coin_walk):
    policy = default_init(coin_walk, HORIZON)
    assert finite_var(coin_walk, policy, 0.25, 0) == 0.0
    assert finite_var(coin_walk, policy, 0.26, 0) == 1.0
    assert finite_var(coin_walk, policy, 1.0, 0) == 2.0


@pytest.mark.parametrize("sense", list(Sense))
def test_point_mass_needs_no_step(make_mdp, sense):
    mdp = make_mdp([[[1.0]]], [[2.0]], resolution=1.0)
    for alpha in ALPHAS:
        result = solve(mdp, alpha, 0, sense)
        assert result.var_star == 6.0
        assert result.iterations == 0
        assert result.certified


def test_bit_choice_optima(make_mdp):
    mdp = make_mdp([[[1.0], [1.0]]], [[0.0, 1.0]], resolution=1.0)
    assert solve(mdp, 0.5, 0, Sense.MAX).var_star == 3.0
    assert solve(mdp, 0.5, 0, Sense.MIN).var_star == 0.0

# =============================================================================
# AGREEMENT WITH THE BASELINE
# =============================================================================

@pytest.mark.parametrize("sense", list(Sense))
def test_iteration_matches_baseline(tiny_random, sense):
    for mdp in corpus(tiny_random, range(15)):
        for alpha in ALPHAS:
            baseline = baseline_finite(mdp, HORIZON, alpha, sense)
            for s0 in range(mdp.num_states):
                result = solve(mdp, alpha, s0, sense)
                assert result.var_star == baseline[s0].var_star
                assert result.certified
                assert finite_var(mdp, result.policy_star, alpha, s0) == result.var_star
                assert finite_var(mdp, baseline[s0].policy_star, alpha, s0) == baseline[s0].var_star


@pytest.mark.slow
@pytest.mark.parametrize("sense", list(Sense))
def test_iteration_matches_baseline_full_corpus(tiny_random, sense):
    for mdp in corpus(tiny_random, range(15, 115)):
        for horizon in (1, 2, 4):
            for alpha in ALPHAS:
                baseline = baseline_finite(mdp, horizon, alpha, sense, states=[0])
                assert solve(mdp, alpha, 0, sense, horizon=horizon).var_star == baseline[0].var_star


@pytest.mark.parametrize("sense", list(Sense))
def test_trace_is_strictly_monotone(tiny_random, sense):
    for mdp in corpus(tiny_random, range(10)):
        for alpha in ALPHAS:
            trace = solve(mdp, alpha, 0, sense).trace_frame()
            steps = np.diff(trace["var_k"].to_numpy())
            assert np.all(steps > 0) if sense is Sense.MAX else np.all(steps < 0)
            assert np.all(trace["inner_iterations"] == 0)


@pytest.mark.parametrize("sense", list(Sense))
def test_result_does_not_depend_on_initial_policy(tiny_random, sense):
    mdp = tiny_random(2, num_states=3, num_actions=3, reward_model="integer", r_max=4)
    reference = solve(mdp, 0.6, 1, sense).var_star
    for seed in range(5):
        options = DEFAULT_OPTIONS.with_overrides(init="random", seed=seed)
        assert solve(mdp, 0.6, 1, sense, options=options).var_star == reference


def test_var_stays_within_reachable_range(tiny_random):
    for mdp in corpus(tiny_random, range(5)):
        low, high = HORIZON * mdp.reward.min(), HORIZON * mdp.reward.max()
        for alpha in ALPHAS:
            assert low <= solve(mdp, alpha, 0, Sense.MIN).var_star <= solve(mdp, alpha, 0, Sense.MAX).var_star <= high

# =============================================================================
# CERTIFICATE
# =============================================================================

@pytest.mark.parametrize("sense", list(Sense))
def test_certificate_accepts_optimum_and_rejects_the_rest(tiny_random, sense):
    rng = np.random.default_rng(0)
    for mdp in corpus(tiny_random, range(10)):
        alpha = 0.5
        optimum = solve(mdp, alpha, 0, sense)
        assert certify_finite(mdp, HORIZON, optimum.policy_star, alpha, 0, sense)
        grid = build_grid(mdp, HORIZON)
        for _ in range(5):
            policy = realize_history_policy(AugmentedMarkovPolicy.random(mdp, grid, rng),
                                            grid.to_value(int(rng.integers(grid.lo, grid.hi + 1))))
            value = finite_var(mdp, policy, alpha, 0)
            assert certify_finite(mdp, HORIZON, policy, alpha, 0, sense) == (value == optimum.var_star)

# =============================================================================
# SHARED IMPROVEMENT ACROSS INITIAL STATES
# =============================================================================

def improves_every_start(mdp, alpha):
    """When F*(s0, VaR(s0)) < alpha at every s0, one shared rule set improves all of them."""
    table, rules = augmented_solution(mdp, HORIZON, Sense.MIN)
    current = default_init(mdp, HORIZON)
    before = [finite_var(mdp, current, alpha, s0) for s0 in range(mdp.num_states)]
    if not all(table.at(0, s0, before[s0]) < alpha - DEFAULT_OPTIONS.alpha_tol for s0 in range(mdp.num_states)):
        return False
    for s0, var in enumerate(before):
        assert finite_var(mdp, realize_history_policy(rules, var), alpha, s0) > var
    return True


def test_shared_rules_improve_every_start(make_mdp, tiny_random):
    row = [0.5, 0.5]
    pay_choice = make_mdp([[row, row], [row, row]], [[0.0, 1.0], [0.0, 1.0]], resolution=1.0)
    assert improves_every_start(pay_choice, 0.5)
    assert finite_var(pay_choice, default_init(pay_choice, HORIZON), 0.5, 1) == 0.0
    for mdp in corpus(tiny_random, range(10)):
        for alpha in ALPHAS:
            improves_every_start(mdp, alpha)
