"""
Steady-State VaR - evaluation, policy iteration, baselines and oracles

Maximization iterates lambda_k = VaR(u_k) and solves the indicator MDP in the
min sense; minimization targets the left predecessor of VaR(u_k) and solves
it in the max sense. Both stop on the optimality certificate.
"""
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .avg_solver import AverageResult, solve_average, threshold_mdp
from .config import DEFAULT_OPTIONS, DEFAULT_TOLERANCES, SolverOptions
from .errors import CapExceeded, IterationCapExceeded
from .mdp_core import (
    DeterministicStationaryPolicy,
    FiniteMdp,
    RewardSupport,
    Sense,
    StationaryDistribution,
    diagnose_chain,
    ensure_valid,
    initial_policy,
    left_predecessor,
    stationary_distribution,
)

logger = logging.getLogger(__name__)


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha

# =============================================================================
# EVALUATION
# =============================================================================

@dataclass(frozen=True, eq=False)
class SteadyCdf:
    """F^u(lambda) = P(R_inf <= lambda) at every support point."""
    support: RewardSupport
    cdf: np.ndarray

    def at(self, lam: float) -> float:
        k = self.support.count_at_or_below(lam)
        return float(self.cdf[k - 1]) if k else 0.0

    def var(self, alpha: float) -> float:
        hit = np.flatnonzero(self.cdf >= alpha - DEFAULT_TOLERANCES.cdf)
        idx = int(hit[0]) if hit.size else len(self.cdf) - 1
        return float(self.support.values[idx])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lambda": self.support.values, "F": self.cdf})


def steady_cdf(mdp: FiniteMdp,
               policy: DeterministicStationaryPolicy,
               options: SolverOptions = DEFAULT_OPTIONS,
               distribution: Optional[StationaryDistribution] = None) -> SteadyCdf:
    distribution = distribution or stationary_distribution(mdp, policy, options)
    support = mdp.support
    mass = np.bincount(mdp.pair_support_index, weights=distribution.prob, minlength=len(support))
    return SteadyCdf(support, np.clip(np.cumsum(mass), 0.0, 1.0))


def steady_var(mdp: FiniteMdp,
               policy: DeterministicStationaryPolicy,
               alpha: float,
               options: SolverOptions = DEFAULT_OPTIONS) -> float:
    """min{lambda in Lambda : F^u(lambda) >= alpha}."""
    return steady_cdf(mdp, policy, options).var(check_alpha(alpha))

# =============================================================================
# POLICY ITERATION
# =============================================================================

@dataclass(frozen=True)
class TraceRow:
    k: int
    lambda_k: float
    var_k: float
    inner_value: float
    inner_iterations: int
    millis: float


@dataclass(frozen=True, eq=False)
class SteadySolveResult:
    var_star: float
    policy_star: DeterministicStationaryPolicy
    trace: Tuple[TraceRow, ...]
    certified: bool
    sense: Sense
    alpha: float
    initial_policy: DeterministicStationaryPolicy

    @property
    def iterations(self) -> int:
        """Number of accepted improvement steps."""
        return max(len(self.trace) - 1, 0)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.trace],
                            columns=["k", "lambda_k", "var_k", "inner_value", "inner_iterations", "millis"])


def _steady_loop(mdp: FiniteMdp,
                 alpha: float,
                 sense: Sense,
                 init: Optional[DeterministicStationaryPolicy],
                 options: SolverOptions) -> SteadySolveResult:
    alpha = check_alpha(alpha)
    ensure_valid(mdp)
    support = mdp.support
    cap = options.outer_cap or len(support)
    maximize = sense is Sense.MAX

    start = init or initial_policy(mdp, options)
    policy = start
    var = steady_var(mdp, policy, alpha, options)
    trace: List[TraceRow] = []
    certified = False
    k = 0
    logger.info("steady-%s alpha=%g: start var=%g (|Lambda|=%d)", sense.value, alpha, var, len(support))

    while True:
        tick = time.perf_counter()
        if maximize:
            lam = var
            inner = solve_average(threshold_mdp(mdp, lam, Sense.MIN), policy, options)
            improve = inner.gain < alpha - options.alpha_tol
        else:
            lam = left_predecessor(var, support)
            inner = solve_average(threshold_mdp(mdp, lam, Sense.MAX), policy, options)
            improve = inner.gain >= alpha - DEFAULT_TOLERANCES.cdf
        millis = (time.perf_counter() - tick) * 1000.0
        trace.append(TraceRow(k, lam, var, inner.gain, inner.iterations, millis))
        logger.info("  k=%d lambda=%g F*=%.9f inner_iters=%d", k, lam, inner.gain, inner.iterations)

        if not improve:
            certified = True
            break

        new_var = steady_var(mdp, inner.policy, alpha, options)
        if (new_var <= var) if maximize else (new_var >= var):
            logger.warning("non-strict VaR step %g -> %g at alpha=%g; stopping uncertified", var, new_var, alpha)
            break
        policy, var = inner.policy, new_var
        k += 1
        if k > cap:
            raise IterationCapExceeded(f"steady-{sense.value} exceeded {cap} improvement steps")

    logger.info("steady-%s alpha=%g: var*=%g after %d step(s), certified=%s", sense.value, alpha, var, k, certified)
    return SteadySolveResult(var, policy, tuple(trace), certified, sense, alpha, start)


def solve_steady_max(mdp: FiniteMdp,
                     alpha: float,
                     init: Optional[DeterministicStationaryPolicy] = None,
                     options: SolverOptions = DEFAULT_OPTIONS) -> SteadySolveResult:
    """Policy iteration for max_u VaR_alpha of the steady-state reward."""
    return _steady_loop(mdp, alpha, Sense.MAX, init, options)


def solve_steady_min(mdp: FiniteMdp,
                     alpha: float,
                     init: Optional[DeterministicStationaryPolicy] = None,
                     options: SolverOptions = DEFAULT_OPTIONS) -> SteadySolveResult:
    """Policy iteration for min_u VaR_alpha of the steady-state cost."""
    return _steady_loop(mdp, alpha, Sense.MIN, init, options)

# =============================================================================
# BASELINE (one probabilistic MDP per support point)
# =============================================================================

@dataclass(frozen=True, eq=False)
class BaselineResult:
    var_star: float
    policy_star: DeterministicStationaryPolicy
    inner_values: Dict[float, float]
    solves: int
    millis: float


def _sweep(mdp: FiniteMdp, levels, sense: Sense, start: DeterministicStationaryPolicy,
           options: SolverOptions) -> Dict[float, AverageResult]:
    """Full sweep; with workers > 1 every level starts from the same policy."""
    if options.workers > 1:
        def one(lam):
            return lam, solve_average(threshold_mdp(mdp, lam, sense), start, options)
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            return dict(pool.map(one, levels))
    results = {}
    policy = start
    for lam in levels:
        results[lam] = solve_average(threshold_mdp(mdp, lam, sense), policy, options)
        policy = results[lam].policy
    return results


def baseline_steady(mdp: FiniteMdp,
                    alpha: float,
                    sense: Sense,
                    options: SolverOptions = DEFAULT_OPTIONS) -> BaselineResult:
    """Ascending scan over Lambda for the first level whose inner optimum reaches alpha."""
    alpha = check_alpha(alpha)
    sense = Sense(sense)
    ensure_valid(mdp)
    support = mdp.support
    inner_sense = Sense.MIN if sense is Sense.MAX else Sense.MAX
    start = initial_policy(mdp, options)
    tick = time.perf_counter()

    def reaches(result: AverageResult) -> bool:
        if sense is Sense.MAX:
            return result.gain >= alpha - options.alpha_tol
        return result.gain >= alpha - DEFAULT_TOLERANCES.cdf

    levels = [float(v) for v in support.values]
    results: Dict[float, AverageResult] = {}
    if options.early_exit:
        policy = start
        for lam in levels:
            results[lam] = solve_average(threshold_mdp(mdp, lam, inner_sense), policy, options)
            policy = results[lam].policy
            if reaches(results[lam]):
                break
    else:
        results = _sweep(mdp, levels, inner_sense, start, options)

    lam_star = next(lam for lam in levels if lam in results and reaches(results[lam]))
    solves = len(results)

    if sense is Sense.MAX:
        # optimal policy comes from the predecessor level
        pred = left_predecessor(lam_star, support)
        if pred in results:
            policy_star = results[pred].policy
        else:
            policy_star = solve_average(threshold_mdp(mdp, pred, Sense.MIN), start, options).policy
            solves += 1
    else:
        policy_star = results[lam_star].policy

    millis = (time.perf_counter() - tick) * 1000.0
    logger.info("baseline steady-%s alpha=%g: var*=%g after %d inner solves", sense.value, alpha, lam_star, solves)
    return BaselineResult(lam_star, policy_star, {lam: r.gain for lam, r in results.items()}, solves, millis)

# =============================================================================
# CERTIFICATE AND ORACLE
# =============================================================================

def certify_steady(mdp: FiniteMdp,
                   policy: DeterministicStationaryPolicy,
                   alpha: float,
                   sense: Sense,
                   options: SolverOptions = DEFAULT_OPTIONS) -> bool:
    """Necessary and sufficient optimality check of a stationary policy."""
    alpha = check_alpha(alpha)
    var = steady_var(mdp, policy, alpha, options)
    if Sense(sense) is Sense.MAX:
        inner = solve_average(threshold_mdp(mdp, var, Sense.MIN), policy, options)
        return inner.gain >= alpha - options.alpha_tol
    pred = left_predecessor(var, mdp.support)
    inner = solve_average(threshold_mdp(mdp, pred, Sense.MAX), policy, options)
    return inner.gain < alpha - DEFAULT_TOLERANCES.cdf


@dataclass(frozen=True, eq=False)
class OracleResult:
    var_star: float
    policy_star: DeterministicStationaryPolicy
    evaluated: int
    skipped: int


def exhaustive_policy_oracle(mdp: FiniteMdp,
                             alpha: float,
                             sense: Sense,
                             options: SolverOptions = DEFAULT_OPTIONS) -> OracleResult:
    """Brute force over every deterministic stationary policy."""
    alpha = check_alpha(alpha)
    sense = Sense(sense)
    total = int(np.prod([len(acts) for acts in mdp.admissible], dtype=object))
    if total > options.oracle_cap:
        raise CapExceeded(f"{total} policies exceed the oracle cap {options.oracle_cap}")

    best_var, best_policy = None, None
    evaluated = skipped = 0
    # product order is lexicographic, so strict comparison keeps the smallest tie
    for actions in itertools.product(*mdp.admissible):
        policy = DeterministicStationaryPolicy(actions)
        diagnosis = diagnose_chain(mdp, policy)
        if not (diagnosis.is_unichain and diagnosis.is_aperiodic):
            skipped += 1
            continue
        evaluated += 1
        distribution = stationary_distribution(mdp, policy, options, diagnosis)
        var = steady_cdf(mdp, policy, options, distribution).var(alpha)
        if best_var is None or (var > best_var if sense is Sense.MAX else var < best_var):
            best_var, best_policy = var, policy

    if skipped:
        logger.warning("oracle skipped %d multichain or periodic policies out of %d", skipped, total)
    if best_policy is None:
        raise CapExceeded("no unichain aperiodic policy to evaluate")
    return OracleResult(best_var, best_policy, evaluated, skipped)
