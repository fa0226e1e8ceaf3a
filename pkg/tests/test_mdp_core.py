import numpy as np
import pytest

from varmdp.config import DEFAULT_OPTIONS, DEFAULT_TOLERANCES
from varmdp.errors import InvalidMdpError, MultichainError, NonConvergence, PeriodicError
from varmdp.mdp_core import (
    DeterministicStationaryPolicy,
    DiscreteDistribution,
    RewardSupport,
    chain_structure,
    diagnose_chain,
    ensure_valid,
    initial_policy,
    left_predecessor,
    power_iteration,
    stationary_distribution,
    validate,
    value_at_risk,
)


def dyadic_distribution(rng, atoms=6, total=64):
    """Random pmf with probabilities k/64, so every partial sum is exact."""
    values = np.sort(rng.choice(20, size=atoms, replace=False)).astype(float)
    counts = rng.multinomial(total, np.full(atoms, 1.0 / atoms))
    keep = counts > 0
    return DiscreteDistribution(values[keep], counts[keep] / total)


# =============================================================================
# VALIDATION
# =============================================================================

def test_single_state_self_loop_is_valid(make_mdp):
    mdp = make_mdp([[[1.0]]], [[5.0]])
    assert validate(mdp).ok
    assert mdp.support.values.tolist() == [5.0]


def test_row_sum_within_slack_is_valid(make_mdp):
    mdp = make_mdp([[[1.0 - 1e-10]]], [[0.0]])
    assert validate(mdp).ok


def test_row_sum_violation_message(make_mdp):
    mdp = make_mdp([[[0.9]]], [[0.0]])
    report = validate(mdp)
    assert not report.ok
    assert "transition row (s=0,a=0) sums to 0.9" in report.violations


def test_negative_entry_and_missing_action_are_reported(make_mdp):
    mdp = make_mdp([[[1.5, -0.5]], [[0.5, 0.5]]], [[0.0], [0.0]])
    assert any("negative entry" in v for v in validate(mdp).violations)

    empty = make_mdp([[[1.0, 0.0]], [[0.5, 0.5]]], [[0.0], [0.0]], admissible=[[0], []])
    assert "state 1 has no admissible action" in validate(empty).violations
    with pytest.raises(InvalidMdpError):
        ensure_valid(empty)


def test_off_grid_reward_is_reported(make_mdp):
    mdp = make_mdp([[[1.0], [1.0]]], [[0.3, 0.15]], resolution=0.1)
    violations = validate(mdp).violations
    assert len(violations) == 1
    assert "not a multiple of 0.1" in violations[0]


def test_inadmissible_policy_action_is_rejected(make_mdp):
    mdp = make_mdp([[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]]], [[0.0, 1.0], [2.0, 3.0]],
                   admissible=[[0, 1], [1]])
    with pytest.raises(ValueError, match="not admissible at state 1"):
        mdp.pair_index(DeterministicStationaryPolicy((0, 0)))
    assert mdp.pair_index(DeterministicStationaryPolicy((1, 1))).tolist() == [1, 2]


def test_initial_policy_lowest_and_seeded_random(tiny_random):
    mdp = tiny_random(3, num_states=6, num_actions=4)
    assert initial_policy(mdp).action == (0,) * 6
    options = DEFAULT_OPTIONS.with_overrides(init="random", seed=11)
    assert initial_policy(mdp, options) == initial_policy(mdp, options)

# =============================================================================
# SUPPORT, PREDECESSOR, VAR
# =============================================================================

def test_support_deduplicates_rewards(make_mdp):
    mdp = make_mdp([[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]]], [[2.0, 2.0], [7.0, 0.0]],
                   admissible=[[0, 1], [0]])
    assert mdp.support.values.tolist() == [2.0, 7.0]
    assert mdp.pair_support_index.tolist() == [0, 0, 1]


def test_support_on_resolution_grid(make_mdp):
    mdp = make_mdp([[[1.0], [1.0]]], [[0.3, -0.2]], resolution=0.1)
    assert mdp.reward_units.tolist() == [3, -2]
    assert mdp.support.units.tolist() == [-2, 3]
    assert mdp.support.values.tolist() == [-0.2, 0.3]


@pytest.mark.parametrize("lam, expected", [(5.0, 2.0), (1.0, 0.0), (3.0, 2.0)])
def test_left_predecessor_examples(lam, expected):
    assert left_predecessor(lam, RewardSupport.from_values([1.0, 2.0, 5.0])) == expected


def test_left_predecessor_below_minimum_steps_one_resolution():
    support = RewardSupport.from_values([-0.6, 0.6], resolution=0.1)
    assert left_predecessor(-0.6, support) == pytest.approx(-0.7)
    assert left_predecessor(0.6, support) == -0.6


def test_left_predecessor_is_largest_value_strictly_below():
    rng = np.random.default_rng(0)
    for _ in range(200):
        values = rng.choice(50, size=rng.integers(1, 10), replace=False).astype(float)
        support = RewardSupport.from_values(values)
        lam = float(rng.choice(values))
        pred = left_predecessor(lam, support)
        assert pred < lam
        assert not np.any((support.values > pred) & (support.values < lam))


def test_value_at_risk_two_point():
    assert value_at_risk([1.0, 3.0], [0.5, 0.5], 0.5) == 1.0
    assert value_at_risk([1.0, 3.0], [0.5, 0.5], 0.500000001) == 3.0
    assert value_at_risk([1.0, 3.0], [0.5, 0.5], 1.0) == 3.0
    with pytest.raises(ValueError):
        value_at_risk([1.0, 3.0], [0.5, 0.5], 0.0)


def test_discrete_distribution_cdf_and_var():
    dist = DiscreteDistribution.from_pmf({2.0: 0.25, 0.0: 0.25, 1.0: 0.5})
    assert dist.values.tolist() == [0.0, 1.0, 2.0]
    assert dist.cdf(-1.0) == 0.0
    assert dist.cdf(1.0) == 0.75
    assert dist.var(0.25) == 0.0
    assert dist.var(0.26) == 1.0


def test_var_upper_duality_on_random_pairs():
    """P(Y <= VaR_a(X)) < a exactly when VaR_a(Y) > VaR_a(X)."""
    rng = np.random.default_rng(1)
    for _ in range(1000):
        x, y = dyadic_distribution(rng), dyadic_distribution(rng)
        alpha = float(rng.uniform(0.001, 1.0))
        lam = x.var(alpha)
        assert (y.cdf(lam) < alpha) == (y.var(alpha) > lam)


def test_var_lower_duality_on_random_pairs():
    """P(Y <= pred) >= a exactly when VaR_a(Y) < lambda, pred taken in Y's support."""
    rng = np.random.default_rng(2)
    for _ in range(1000):
        x, y = dyadic_distribution(rng), dyadic_distribution(rng)
        alpha = float(rng.uniform(0.001, 1.0))
        lam = x.var(alpha)
        pred = y.left_predecessor(lam)
        assert (y.cdf(pred) >= alpha) == (y.var(alpha) < lam)

# =============================================================================
# CHAINS
# =============================================================================

def test_identity_kernel_has_two_recurrent_classes(identity_chain):
    diagnosis = diagnose_chain(identity_chain, DeterministicStationaryPolicy((0, 0)))
    assert diagnosis.recurrent_classes == ((0,), (1,))
    assert not diagnosis.is_unichain
    assert diagnosis.is_aperiodic


def test_two_cycle_has_period_two(two_cycle):
    diagnosis = diagnose_chain(two_cycle, DeterministicStationaryPolicy((0, 0)))
    assert diagnosis.is_unichain
    assert diagnosis.periods == (2,)


def test_transient_states_are_not_recurrent():
    diagnosis = chain_structure(np.array([[0.2, 0.8, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]]))
    assert diagnosis.recurrent_classes == ((1, 2),)
    assert diagnosis.is_aperiodic


def test_stationary_distribution_rejects_bad_chains(identity_chain, two_cycle):
    with pytest.raises(MultichainError) as multi:
        stationary_distribution(identity_chain, DeterministicStationaryPolicy((0, 0)))
    assert multi.value.policy == (0, 0)
    assert len(multi.value.recurrent_classes) == 2
    with pytest.raises(PeriodicError) as periodic:
        stationary_distribution(two_cycle, DeterministicStationaryPolicy((0, 0)))
    assert periodic.value.period == 2

# =============================================================================
# STATIONARY DISTRIBUTION
# =============================================================================

def test_doubly_stochastic_chain_is_uniform(make_mdp):
    mdp = make_mdp([[[0.3, 0.7]], [[0.7, 0.3]]], [[0.0], [1.0]])
    dist = stationary_distribution(mdp, DeterministicStationaryPolicy((0, 0)))
    np.testing.assert_allclose(dist.state_prob, [0.5, 0.5], atol=1e-12)


def test_absorbing_state_takes_all_mass(make_mdp):
    mdp = make_mdp([[[0.5, 0.5]], [[0.0, 1.0]]], [[0.0], [1.0]])
    dist = stationary_distribution(mdp, DeterministicStationaryPolicy((0, 0)))
    assert dist.support_states == (1,)
    np.testing.assert_allclose(dist.state_prob, [0.0, 1.0], atol=1e-12)


def test_dense_solve_matches_power_iteration(tiny_random):
    for seed in range(5):
        mdp = tiny_random(seed, num_states=8, num_actions=3)
        policy = DeterministicStationaryPolicy.random(mdp, np.random.default_rng(seed))
        dense = stationary_distribution(mdp, policy)
        iterated = power_iteration(mdp.induced_kernel(policy), tol=1e-13, max_iter=100_000)
        np.testing.assert_allclose(dense.state_prob, iterated, atol=1e-9)
        assert dense.balance_residual(mdp) <= DEFAULT_TOLERANCES.balance
        assert dense.prob.sum() == pytest.approx(1.0, abs=1e-12)


def test_power_path_above_dense_limit(tiny_random):
    mdp = tiny_random(4, num_states=12, num_actions=2)
    policy = DeterministicStationaryPolicy.lowest(mdp)
    dense = stationary_distribution(mdp, policy)
    sparse = stationary_distribution(mdp, policy, DEFAULT_OPTIONS.with_overrides(dense_state_limit=1))
    np.testing.assert_allclose(dense.state_prob, sparse.state_prob, atol=1e-9)
    assert sparse.balance_residual(mdp) <= DEFAULT_TOLERANCES.balance


def test_power_iteration_cap_raises(tiny_random):
    mdp = tiny_random(4, num_states=12, num_actions=2)
    policy = DeterministicStationaryPolicy.lowest(mdp)
    options = DEFAULT_OPTIONS.with_overrides(dense_state_limit=1, power_max_iter=1)
    with pytest.raises(NonConvergence):
        stationary_distribution(mdp, policy, options)
