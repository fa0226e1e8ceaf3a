from functools import lru_cache

import numpy as np
import pytest

from varmdp.config import DEFAULT_OPTIONS
from varmdp.errors import CapExceeded, GridUnderflow, MissingResolution
from varmdp.fh_augmented import (
    AugmentedMarkovPolicy,
    bellman_backup,
    bellman_optimal_backup,
    build_grid,
    evaluate_augmented,
    policy_reward_pmf,
    reachable_sums,
    realize_history_policy,
    simulate_rollouts,
    solve_augmented,
    trajectory_oracle,
)
from varmdp.mdp_core import Sense

HORIZON = 3


@pytest.fixture
def bit_choice(make_mdp):
    """One state, two self-loop actions paying 0 and 1."""
    return make_mdp([[[1.0], [1.0]]], [[0.0, 1.0]], resolution=1.0)


@pytest.fixture
def small_integer(tiny_random):
    def build(seed):
        return tiny_random(seed, num_states=2, num_actions=2, reward_model="integer", r_max=3)
    return build


def recursive_optimum(mdp, horizon, sense):
    """Plain recursion over (t, s, lambda), independent of the grid code."""
    rows = mdp.transition
    pick = min if sense is Sense.MIN else max

    @lru_cache(maxsize=None)
    def value(t, s, lam):
        if t == horizon:
            return 1.0 if lam >= 0 else 0.0
        return pick(
            sum(rows[p, s2] * value(t + 1, s2, lam - int(mdp.reward_units[p]))
                for s2 in range(mdp.num_states) if rows[p, s2] > 0)
            for p in mdp.pairs_of(s)
        )
    return value

# =============================================================================
# GRID
# =============================================================================

def test_one_step_grid(bit_choice):
    grid = build_grid(bit_choice, 1, (0.0, 1.0))
    assert grid.stage_units(0).tolist() == [0, 1]
    assert grid.stage_units(1).tolist() == [-1, 0, 1]


def test_stage_zero_width_covers_start_range(make_mdp):
    mdp = make_mdp([[[1.0]] * 6], [[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]], resolution=1.0)
    assert build_grid(mdp, 3, (0.0, 15.0)).size == 16
    assert build_grid(mdp, 3).stage_bounds(0) == (-1, 15)


def test_grid_on_tenths(make_mdp):
    mdp = make_mdp([[[1.0], [1.0]]], [[0.3, -0.2]], resolution=0.1)
    grid = build_grid(mdp, 2)
    assert (grid.r_min, grid.r_max) == (-2, 3)
    assert grid.to_units(-0.4) == -4
    assert grid.to_value(6) == 0.6


def test_grid_needs_resolution_and_horizon(tiny_random, bit_choice):
    with pytest.raises(MissingResolution):
        build_grid(tiny_random(0), 2)
    with pytest.raises(ValueError):
        build_grid(bit_choice, 0)

# =============================================================================
# BELLMAN OPERATORS
# =============================================================================

def test_backup_of_ones_is_ones(small_integer):
    mdp = small_integer(0)
    grid = build_grid(mdp, HORIZON)
    rule = AugmentedMarkovPolicy.lowest(mdp, grid).rules[0]
    values = bellman_backup(mdp, grid, 0, np.ones((mdp.num_states, grid.width(1))), rule)
    np.testing.assert_allclose(values, 1.0, atol=1e-12)


def test_backup_of_zeros_prefers_lowest_action(small_integer):
    mdp = small_integer(1)
    grid = build_grid(mdp, HORIZON)
    for sense in Sense:
        values, rule = bellman_optimal_backup(mdp, grid, 0, np.zeros((mdp.num_states, grid.width(1))), sense)
        assert np.all(values == 0.0)
        assert np.all(rule == 0)


def test_backup_shifts_by_the_reward(make_mdp):
    mdp = make_mdp([[[1.0]]], [[1.0]], resolution=1.0)
    grid = build_grid(mdp, 2, (0.0, 2.0))
    v_next = np.random.default_rng(0).random((1, grid.width(1)))
    values = bellman_backup(mdp, grid, 0, v_next, np.zeros((1, grid.width(0)), dtype=np.int64))
    for units in grid.stage_units(0):
        assert values[0, grid.column(0, units)] == v_next[0, grid.column(1, units - 1)]


def test_narrow_next_stage_underflows(small_integer):
    mdp = small_integer(2)
    grid = build_grid(mdp, HORIZON)
    with pytest.raises(GridUnderflow):
        bellman_optimal_backup(mdp, grid, 0, np.zeros((mdp.num_states, 1)), Sense.MAX)


def test_one_step_minimum_is_indicator_of_best_action(small_integer):
    mdp = small_integer(3)
    grid = build_grid(mdp, 1)
    table, _ = solve_augmented(mdp, grid, Sense.MIN)
    for s in range(mdp.num_states):
        for units in grid.stage_units(0):
            expected = min(float(mdp.reward_units[p] <= units) for p in mdp.pairs_of(s))
            assert table.values[0][s, grid.column(0, units)] == pytest.approx(expected, abs=1e-12)

# =============================================================================
# TABLES
# =============================================================================

@pytest.mark.parametrize("sense", list(Sense))
def test_optimal_table_matches_plain_recursion(small_integer, sense):
    for seed in range(5):
        mdp = small_integer(seed)
        grid = build_grid(mdp, HORIZON)
        table, _ = solve_augmented(mdp, grid, sense)
        value = recursive_optimum(mdp, HORIZON, sense)
        for s in range(mdp.num_states):
            for units in grid.stage_units(0):
                assert table.values[0][s, grid.column(0, units)] == pytest.approx(value(0, s, int(units)), abs=1e-12)


def test_tables_are_pinned_monotone_and_ordered(small_integer):
    rng = np.random.default_rng(4)
    for seed in range(5):
        mdp = small_integer(seed)
        grid = build_grid(mdp, HORIZON)
        low, _ = solve_augmented(mdp, grid, Sense.MIN)
        high, _ = solve_augmented(mdp, grid, Sense.MAX)
        units = grid.stage_units(0)
        for table in (low, high):
            v0 = table.values[0]
            assert np.all(v0[:, units < HORIZON * grid.r_min] == 0.0)
            assert np.all(v0[:, units >= HORIZON * grid.r_max] == 1.0)
            assert np.all(np.diff(v0, axis=1) >= -1e-12)
        for _ in range(5):
            some = evaluate_augmented(mdp, AugmentedMarkovPolicy.random(mdp, grid, rng)).values[0]
            assert np.all(low.values[0] <= some + 1e-12)
            assert np.all(some <= high.values[0] + 1e-12)


def test_evaluation_matches_trajectory_expansion(small_integer):
    rng = np.random.default_rng(5)
    for seed in range(5):
        mdp = small_integer(seed)
        grid = build_grid(mdp, HORIZON)
        base = AugmentedMarkovPolicy.random(mdp, grid, rng)
        table = evaluate_augmented(mdp, base)
        for s0 in range(mdp.num_states):
            for units in grid.stage_units(0):
                lam0 = grid.to_value(units)
                policy = realize_history_policy(base, lam0)
                expanded = trajectory_oracle(mdp, policy, HORIZON, s0)
                assert table.at(0, s0, lam0) == pytest.approx(expanded.cdf(lam0), abs=1e-10)
                forward = policy_reward_pmf(mdp, policy, s0)
                np.testing.assert_allclose(forward.values, expanded.values)
                np.testing.assert_allclose(forward.probs, expanded.probs, atol=1e-12)


def test_value_table_frames(small_integer):
    mdp = small_integer(0)
    grid = build_grid(mdp, HORIZON)
    table = evaluate_augmented(mdp, AugmentedMarkovPolicy.lowest(mdp, grid))
    frame = table.to_frame()
    assert list(frame.columns) == ["t", "s", "lambda", "value"]
    assert len(frame) == sum(mdp.num_states * grid.width(t) for t in range(HORIZON + 1))
    initial = table.initial(0)
    assert initial.index.name == "lambda"
    assert len(initial) == grid.size

# =============================================================================
# HISTORY POLICIES AND FORWARD PASSES
# =============================================================================

def test_history_policy_reads_the_remaining_goal(small_integer):
    mdp = small_integer(6)
    grid = build_grid(mdp, HORIZON)
    rng = np.random.default_rng(6)
    policy = realize_history_policy(AugmentedMarkovPolicy.random(mdp, grid, rng), grid.to_value(2))
    for _ in range(50):
        states = [int(rng.integers(mdp.num_states))]
        actions = []
        accumulated = 0
        for t in range(HORIZON):
            action = policy.act(mdp, states, actions)
            assert action == policy.action(t, states[-1], accumulated)
            accumulated += int(mdp.reward_units[mdp.pair_lookup[states[-1], action]])
            actions.append(action)
            states.append(int(rng.integers(mdp.num_states)))


def test_binomial_sum(coin_walk):
    grid = build_grid(coin_walk, HORIZON)
    policy = realize_history_policy(AugmentedMarkovPolicy.lowest(coin_walk, grid), 0.0)
    pmf = policy_reward_pmf(coin_walk, policy, 0)
    assert pmf.values.tolist() == [0.0, 1.0, 2.0]
    np.testing.assert_allclose(pmf.probs, [0.25, 0.5, 0.25], atol=1e-15)
    assert reachable_sums(coin_walk, HORIZON, 0).values.tolist() == [0.0, 1.0, 2.0]


def test_rollouts_agree_with_exact_cdf(coin_walk):
    grid = build_grid(coin_walk, HORIZON)
    policy = realize_history_policy(AugmentedMarkovPolicy.lowest(coin_walk, grid), 1.0)
    samples = simulate_rollouts(coin_walk, policy, 0, 20_000, seed=1)
    pmf = policy_reward_pmf(coin_walk, policy, 0)
    for lam in (0.0, 1.0):
        exact = pmf.cdf(lam)
        error = np.sqrt(exact * (1 - exact) / samples.size)
        assert abs(np.mean(samples <= lam) - exact) <= 3 * error


def test_table_oracle_and_rollouts_agree(small_integer):
    rng = np.random.default_rng(11)
    for seed in range(6):
        mdp = small_integer(seed)
        grid = build_grid(mdp, HORIZON)
        base = AugmentedMarkovPolicy.random(mdp, grid, rng)
        table = evaluate_augmented(mdp, base)
        lam0 = grid.to_value(HORIZON * (grid.r_min + grid.r_max) // 2)
        policy = realize_history_policy(base, lam0)
        exact = table.at(0, 0, lam0)
        assert trajectory_oracle(mdp, policy, HORIZON, 0).cdf(lam0) == pytest.approx(exact, abs=1e-10)
        samples = simulate_rollouts(mdp, policy, 0, 100_000, seed=seed)
        error = np.sqrt(exact * (1 - exact) / samples.size)
        assert abs(np.mean(samples <= lam0) - exact) <= 3 * error + 1e-12


def test_history_with_inadmissible_action_is_rejected(make_mdp):
    row = [0.5, 0.5]
    mdp = make_mdp([[row, row], [row, row]], [[0.0, 1.0], [0.0, 1.0]], admissible=[[0], [0, 1]], resolution=1.0)
    policy = realize_history_policy(AugmentedMarkovPolicy.lowest(mdp, build_grid(mdp, 2)), 1.0)
    assert policy.act(mdp, [1, 0], [1]) == 0
    with pytest.raises(ValueError, match="inadmissible"):
        policy.act(mdp, [0, 1], [1])


def test_reachable_sums_of_bit_choice(bit_choice):
    assert reachable_sums(bit_choice, 1, 0).values.tolist() == [0.0, 1.0]
    assert reachable_sums(bit_choice, 2, 0).values.tolist() == [0.0, 1.0, 2.0]


def test_trajectory_cap(small_integer):
    mdp = small_integer(0)
    grid = build_grid(mdp, HORIZON)
    policy = realize_history_policy(AugmentedMarkovPolicy.lowest(mdp, grid), 0.0)
    with pytest.raises(CapExceeded):
        trajectory_oracle(mdp, policy, HORIZON, 0, DEFAULT_OPTIONS.with_overrides(trajectory_cap=10))
