"""
Finite-Horizon VaR - evaluation, policy iteration, baselines and certificates

One full-grid augmented solve answers F*(s0, lambda0) for every lambda0, so the
outer loops below only read that table and realize new history policies from
its decision rules.
"""
import logging
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import DEFAULT_OPTIONS, DEFAULT_TOLERANCES, SolverOptions
from .errors import IterationCapExceeded
from .fh_augmented import (
    AugmentedMarkovPolicy,
    HistoryPolicy,
    LambdaGrid,
    ValueTable,
    build_grid,
    policy_reward_pmf,
    reachable_sums,
    realize_history_policy,
    solve_augmented,
)
from .mdp_core import FiniteMdp, Sense, ensure_valid, left_predecessor
from .steady_var import TraceRow, check_alpha

logger = logging.getLogger(__name__)


@lru_cache(maxsize=16)
def augmented_solution(mdp: FiniteMdp, horizon: int, sense: Sense) -> Tuple[ValueTable, AugmentedMarkovPolicy]:
    """Cached full-grid solve, shared by iterations, certificates and per-s0 runs."""
    return solve_augmented(mdp, build_grid(mdp, horizon), Sense(sense))


def default_init(mdp: FiniteMdp, horizon: int, options: SolverOptions = DEFAULT_OPTIONS) -> HistoryPolicy:
    """Lowest-action (or seeded random) augmented policy realized at T * r_max."""
    grid = build_grid(mdp, horizon)
    if options.init == "random":
        base = AugmentedMarkovPolicy.random(mdp, grid, np.random.default_rng(options.seed))
    elif options.init == "lowest":
        base = AugmentedMarkovPolicy.lowest(mdp, grid)
    else:
        raise ValueError(f"unknown init {options.init!r}")
    return realize_history_policy(base, grid.to_value(grid.horizon * grid.r_max))


def finite_var(mdp: FiniteMdp, policy: HistoryPolicy, alpha: float, s0: int) -> float:
    """Smallest lambda0 with F^u(s0, lambda0) >= alpha."""
    return policy_reward_pmf(mdp, policy, s0).var(check_alpha(alpha))


def _initial_value(table: ValueTable, s0: int, lam: float) -> float:
    return table.at(0, s0, lam)


@dataclass(frozen=True, eq=False)
class FiniteSolveResult:
    var_star: float
    policy_star: HistoryPolicy
    trace: Tuple[TraceRow, ...]
    certified: bool
    sense: Sense
    alpha: float
    s0: int
    horizon: int
    initial_policy: HistoryPolicy

    @property
    def iterations(self) -> int:
        return max(len(self.trace) - 1, 0)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.trace],
                            columns=["k", "lambda_k", "var_k", "inner_value", "inner_iterations", "millis"])


def _finite_loop(mdp: FiniteMdp,
                 horizon: int,
                 alpha: float,
                 s0: int,
                 sense: Sense,
                 init: Optional[HistoryPolicy],
                 options: SolverOptions) -> FiniteSolveResult:
    alpha = check_alpha(alpha)
    ensure_valid(mdp)
    maximize = sense is Sense.MAX
    table, rules = augmented_solution(mdp, horizon, Sense.MIN if maximize else Sense.MAX)
    cap = options.outer_cap or table.grid.size
    support = None if maximize else reachable_sums(mdp, horizon, s0)

    start = init or default_init(mdp, horizon, options)
    policy = start
    var = finite_var(mdp, policy, alpha, s0)
    trace: List[TraceRow] = []
    certified = False
    k = 0
    logger.info("finite-%s T=%d s0=%d alpha=%g: start var=%g", sense.value, horizon, s0, alpha, var)

    while True:
        tick = time.perf_counter()
        lam = var if maximize else left_predecessor(var, support)
        value = _initial_value(table, s0, lam)
        improve = value < alpha - options.alpha_tol if maximize else value >= alpha - DEFAULT_TOLERANCES.cdf
        millis = (time.perf_counter() - tick) * 1000.0
        trace.append(TraceRow(k, lam, var, value, 0, millis))
        logger.info("  k=%d lambda0=%g F*=%.9f", k, lam, value)

        if not improve:
            certified = True
            break

        candidate = realize_history_policy(rules, lam)
        new_var = finite_var(mdp, candidate, alpha, s0)
        if (new_var <= var) if maximize else (new_var >= var):
            logger.warning("non-strict VaR step %g -> %g at alpha=%g s0=%d; stopping uncertified",
                           var, new_var, alpha, s0)
            break
        policy, var = candidate, new_var
        k += 1
        if k > cap:
            raise IterationCapExceeded(f"finite-{sense.value} exceeded {cap} improvement steps")

    logger.info("finite-%s s0=%d alpha=%g: var*=%g after %d step(s), certified=%s",
                sense.value, s0, alpha, var, k, certified)
    return FiniteSolveResult(var, policy, tuple(trace), certified, sense, alpha, s0, horizon, start)


def solve_finite_max(mdp: FiniteMdp,
                     horizon: int,
                     alpha: float,
                     s0: int,
                     init: Optional[HistoryPolicy] = None,
                     options: SolverOptions = DEFAULT_OPTIONS) -> FiniteSolveResult:
    """Policy iteration for max_u VaR_alpha(R_{0:T}) from s0."""
    return _finite_loop(mdp, horizon, alpha, s0, Sense.MAX, init, options)


def solve_finite_min(mdp: FiniteMdp,
                     horizon: int,
                     alpha: float,
                     s0: int,
                     init: Optional[HistoryPolicy] = None,
                     options: SolverOptions = DEFAULT_OPTIONS) -> FiniteSolveResult:
    """Policy iteration for min_u VaR_alpha(R_{0:T}) from s0, predecessors taken in Lambda_0."""
    return _finite_loop(mdp, horizon, alpha, s0, Sense.MIN, init, options)


@dataclass(frozen=True, eq=False)
class FiniteBaselineResult:
    var_star: float
    policy_star: HistoryPolicy
    s0: int


def baseline_finite(mdp: FiniteMdp,
                    horizon: int,
                    alpha: float,
                    sense: Sense,
                    states: Optional[Sequence[int]] = None,
                    options: SolverOptions = DEFAULT_OPTIONS) -> Dict[int, FiniteBaselineResult]:
    """One augmented solve, then a lambda0 scan per initial state."""
    alpha = check_alpha(alpha)
    sense = Sense(sense)
    ensure_valid(mdp)
    maximize = sense is Sense.MAX
    table, rules = augmented_solution(mdp, horizon, Sense.MIN if maximize else Sense.MAX)
    grid: LambdaGrid = table.grid
    lambdas = grid.stage_units(0)

    results = {}
    for s0 in (range(mdp.num_states) if states is None else states):
        if maximize:
            hit = np.flatnonzero(table.values[0][s0] >= alpha - options.alpha_tol)
        else:
            hit = np.flatnonzero(table.values[0][s0] >= alpha - DEFAULT_TOLERANCES.cdf)
        # V_0 is pinned to 1 at T * r_max, so a hit always exists
        lam_star = grid.to_value(lambdas[hit[0]])
        if maximize:
            level = left_predecessor(lam_star, reachable_sums(mdp, horizon, s0))
        else:
            level = lam_star
        results[int(s0)] = FiniteBaselineResult(lam_star, realize_history_policy(rules, level), int(s0))
        logger.info("baseline finite-%s T=%d s0=%d alpha=%g: var*=%g", sense.value, horizon, s0, alpha, lam_star)
    return results


def certify_finite(mdp: FiniteMdp,
                   horizon: int,
                   policy: HistoryPolicy,
                   alpha: float,
                   s0: int,
                   sense: Sense,
                   options: SolverOptions = DEFAULT_OPTIONS) -> bool:
    alpha = check_alpha(alpha)
    var = finite_var(mdp, policy, alpha, s0)
    if Sense(sense) is Sense.MAX:
        table, _ = augmented_solution(mdp, horizon, Sense.MIN)
        return _initial_value(table, s0, var) >= alpha - options.alpha_tol
    table, _ = augmented_solution(mdp, horizon, Sense.MAX)
    pred = left_predecessor(var, reachable_sums(mdp, horizon, s0))
    return _initial_value(table, s0, pred) < alpha - DEFAULT_TOLERANCES.cdf
