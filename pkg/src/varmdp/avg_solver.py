"""
Average-reward engine - Howard policy iteration on indicator-reward MDPs

The probabilistic MDPs of the steady-state VaR problems reduce to ordinary
average-reward MDPs once the reward is replaced by I{r(s, a) <= lambda}.
Evaluation solves the unichain gain/bias equations with bias pinned to zero
at the reference state.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse.linalg import spsolve

from .config import DEFAULT_OPTIONS, SolverOptions
from .errors import NonConvergence
from .mdp_core import (
    ChainDiagnosis,
    DeterministicStationaryPolicy,
    FiniteMdp,
    Sense,
    diagnose_chain,
    require_unichain,
)

logger = logging.getLogger(__name__)

REFERENCE_STATE = 0


@dataclass(frozen=True, eq=False)
class ThresholdMdp:
    """Same dynamics as `base`, reward r_lambda(s, a) = I{r(s, a) <= lambda}."""
    base: FiniteMdp
    lam: float
    sense: Sense
    reward: np.ndarray


def threshold_mdp(mdp: FiniteMdp, lam: float, sense: Sense) -> ThresholdMdp:
    reward = mdp.at_or_below(lam).astype(float)
    reward.setflags(write=False)
    return ThresholdMdp(mdp, float(lam), Sense(sense), reward)


@dataclass(frozen=True, eq=False)
class GainBias:
    gain: float
    bias: np.ndarray
    reference_state: int
    policy: DeterministicStationaryPolicy

    def residual(self, tmdp: ThresholdMdp) -> float:
        """Largest violation of r(s,u(s)) - g + sum_s' P h(s') - h(s) = 0."""
        pairs = tmdp.base.pair_index(self.policy)
        expected = np.asarray(tmdp.base.transition[pairs] @ self.bias).ravel()
        return float(np.max(np.abs(tmdp.reward[pairs] - self.gain + expected - self.bias)))


class AverageResult(NamedTuple):
    gain: float
    policy: DeterministicStationaryPolicy
    iterations: int
    gains: Tuple[float, ...] = ()


def evaluate_gain(tmdp: ThresholdMdp,
                  policy: DeterministicStationaryPolicy,
                  options: SolverOptions = DEFAULT_OPTIONS,
                  diagnosis: Optional[ChainDiagnosis] = None) -> GainBias:
    """Gain and bias of a unichain aperiodic policy."""
    mdp = tmdp.base
    require_unichain(diagnosis or diagnose_chain(mdp, policy), policy)

    pairs = mdp.pair_index(policy)
    kernel = mdp.transition[pairs]
    reward = tmdp.reward[pairs]
    n = mdp.num_states
    ref = REFERENCE_STATE

    # unknown vector is the bias with its pinned entry replaced by the gain
    if n <= options.dense_state_limit:
        dense = kernel.toarray() if sp.issparse(kernel) else np.asarray(kernel)
        system = np.eye(n) - dense
        system[:, ref] = 1.0
        x = linalg.solve(system, reward)
    else:
        system = (sp.identity(n, format="csr") - sp.csr_matrix(kernel)).tolil()
        system[:, ref] = np.ones((n, 1))
        x = spsolve(system.tocsc(), reward)

    gain = float(x[ref])
    bias = np.array(x, dtype=float)
    bias[ref] = 0.0
    return GainBias(gain, bias, ref, policy)


def improve_rule(tmdp: ThresholdMdp,
                 gb: GainBias,
                 options: SolverOptions = DEFAULT_OPTIONS) -> DeterministicStationaryPolicy:
    """Howard improvement; the incumbent stays unless beaten by more than the tolerance."""
    mdp = tmdp.base
    q = tmdp.reward + np.asarray(mdp.transition @ gb.bias).ravel()

    minimize = tmdp.sense is Sense.MIN
    table = np.full((mdp.num_states, mdp.max_admissible), np.inf if minimize else -np.inf)
    table[mdp.pair_state, mdp.pair_slot] = q
    # argmin/argmax return the first slot, i.e. the lowest action index on ties
    slots = table.argmin(axis=1) if minimize else table.argmax(axis=1)
    best = table[np.arange(mdp.num_states), slots]

    incumbent = q[mdp.pair_index(gb.policy)]
    if minimize:
        better = best < incumbent - options.improvement_tol
    else:
        better = best > incumbent + options.improvement_tol

    actions = np.array(gb.policy.action, dtype=np.int64)
    candidates = mdp.pair_action[mdp.pair_offsets[:-1] + slots]
    actions[better] = candidates[better]
    return DeterministicStationaryPolicy(tuple(actions.tolist()))


def solve_average(tmdp: ThresholdMdp,
                  init: DeterministicStationaryPolicy,
                  options: SolverOptions = DEFAULT_OPTIONS) -> AverageResult:
    """Optimal average indicator reward F*(lambda) by Howard policy iteration."""
    # constant reward: every policy is optimal
    if tmdp.reward.size and np.all(tmdp.reward == tmdp.reward[0]):
        return AverageResult(float(tmdp.reward[0]), init, 0, ())

    policy = init
    gains = []
    for iteration in range(1, options.inner_cap + 1):
        gb = evaluate_gain(tmdp, policy, options)
        gains.append(gb.gain)
        logger.debug("howard lambda=%g sense=%s iter=%d gain=%.12g", tmdp.lam, tmdp.sense.value, iteration, gb.gain)
        improved = improve_rule(tmdp, gb, options)
        if improved == policy:
            gain = float(np.clip(gb.gain, 0.0, 1.0))
            return AverageResult(gain, policy, iteration, tuple(gains))
        policy = improved

    raise NonConvergence(f"Howard iteration exceeded {options.inner_cap} iterations at lambda={tmdp.lam}")
