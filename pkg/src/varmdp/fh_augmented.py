"""
Finite-Horizon Engine - augmented-state dynamic programming over (s, lambda)

The remaining goal lambda_t = lambda_0 - sum_{tau<t} r(s_tau, a_tau) is kept on an
integer grid: one unit is the mdp's reward_resolution. Stage t of a table covers
every remaining goal reachable after t steps from any lambda_0 in the grid's
start range, so a backup never reads outside the next stage.

V_T(s, lambda) = I{lambda >= 0}
V_t(s, lambda) = sum_s' P(s'|s,a) V_{t+1}(s', lambda - r(s,a))
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .config import DEFAULT_OPTIONS, SolverOptions
from .errors import CapExceeded, GridUnderflow, MissingResolution
from .mdp_core import DiscreteDistribution, FiniteMdp, RewardSupport, Sense, units_to_values

logger = logging.getLogger(__name__)

# =============================================================================
# GRID
# =============================================================================

@dataclass(frozen=True)
class LambdaGrid:
    """Integer lambda grid; lo..hi is the range of starting targets lambda_0."""
    resolution: float
    horizon: int
    lo: int
    hi: int
    r_min: int   # smallest reward, in units
    r_max: int

    def stage_bounds(self, t: int) -> Tuple[int, int]:
        """Remaining-goal units reachable after t steps."""
        return self.lo - t * self.r_max, self.hi - t * self.r_min

    def width(self, t: int) -> int:
        lo, hi = self.stage_bounds(t)
        return hi - lo + 1

    @property
    def size(self) -> int:
        return self.width(0)

    def to_units(self, value: float) -> int:
        return int(np.rint(value / self.resolution))

    def to_value(self, units) -> float:
        return float(units_to_values(units, self.resolution))

    def stage_units(self, t: int) -> np.ndarray:
        lo, hi = self.stage_bounds(t)
        return np.arange(lo, hi + 1)

    def column(self, t: int, units) -> np.ndarray:
        """Column index of remaining-goal units at stage t."""
        lo, hi = self.stage_bounds(t)
        units = np.asarray(units, dtype=np.int64)
        if np.any((units < lo) | (units > hi)):
            raise GridUnderflow(f"remaining goal outside stage {t} grid [{lo}, {hi}]")
        return units - lo


def build_grid(mdp: FiniteMdp,
               horizon: int,
               lambda0_range: Optional[Tuple[float, float]] = None) -> LambdaGrid:
    """Grid for every lambda_0 in range; default covers T*r_min - 1 step .. T*r_max."""
    if mdp.reward_resolution is None:
        raise MissingResolution("finite-horizon solves need a declared reward_resolution")
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")

    units = mdp.reward_units
    r_min, r_max = int(units.min()), int(units.max())
    res = mdp.reward_resolution
    if lambda0_range is None:
        lo, hi = horizon * r_min - 1, horizon * r_max
    else:
        lo = int(np.floor(lambda0_range[0] / res + 1e-9))
        hi = int(np.ceil(lambda0_range[1] / res - 1e-9))
        if lo > hi:
            raise ValueError(f"empty lambda0 range {lambda0_range}")

    grid = LambdaGrid(res, int(horizon), lo, hi, r_min, r_max)
    logger.debug("lambda grid T=%d units [%d, %d], final stage width %d", horizon, lo, hi, grid.width(horizon))
    return grid

# =============================================================================
# TABLES AND POLICIES
# =============================================================================

@dataclass(frozen=True, eq=False)
class ValueTable:
    """values[t] has shape (S, grid.width(t)), t = 0..T."""
    grid: LambdaGrid
    values: Tuple[np.ndarray, ...]

    def at(self, t: int, state: int, lam: float) -> float:
        col = self.grid.column(t, self.grid.to_units(lam))
        return float(self.values[t][state, col])

    def initial(self, state: int) -> pd.Series:
        """V_0(state, lambda_0) over the whole start range."""
        lambdas = units_to_values(self.grid.stage_units(0), self.grid.resolution)
        return pd.Series(self.values[0][state], index=pd.Index(lambdas, name="lambda"))

    def to_frame(self) -> pd.DataFrame:
        """Long table (t, s, lambda, value)."""
        frames = []
        for t, table in enumerate(self.values):
            lambdas = units_to_values(self.grid.stage_units(t), self.grid.resolution)
            states, cols = np.meshgrid(np.arange(table.shape[0]), np.arange(table.shape[1]), indexing="ij")
            frames.append(pd.DataFrame({
                "t": t,
                "s": states.ravel(),
                "lambda": lambdas[cols.ravel()],
                "value": table.ravel(),
            }))
        return pd.concat(frames, ignore_index=True)


@dataclass(frozen=True, eq=False)
class AugmentedMarkovPolicy:
    """rules[t][s, col] is the action at stage t in augmented state (s, lambda)."""
    grid: LambdaGrid
    rules: Tuple[np.ndarray, ...]

    def action(self, t: int, state: int, remaining_units: int) -> int:
        return int(self.rules[t][state, self.grid.column(t, remaining_units)])

    @classmethod
    def constant(cls, grid: LambdaGrid, actions: Sequence[int]) -> "AugmentedMarkovPolicy":
        per_state = np.asarray(actions, dtype=np.int64)[:, None]
        return cls(grid, tuple(np.repeat(per_state, grid.width(t), axis=1) for t in range(grid.horizon)))

    @classmethod
    def lowest(cls, mdp: FiniteMdp, grid: LambdaGrid) -> "AugmentedMarkovPolicy":
        return cls.constant(grid, [acts[0] for acts in mdp.admissible])

    @classmethod
    def random(cls, mdp: FiniteMdp, grid: LambdaGrid, rng: np.random.Generator) -> "AugmentedMarkovPolicy":
        counts = np.diff(mdp.pair_offsets)
        rules = []
        for t in range(grid.horizon):
            slots = np.floor(rng.random((mdp.num_states, grid.width(t))) * counts[:, None]).astype(np.int64)
            rules.append(mdp.pair_action[mdp.pair_offsets[:-1, None] + slots])
        return cls(grid, tuple(rules))


@dataclass(frozen=True, eq=False)
class HistoryPolicy:
    """History-dependent policy: follow `base` at the remaining goal lambda_0 minus rewards so far."""
    base: AugmentedMarkovPolicy
    lambda0: float

    @property
    def grid(self) -> LambdaGrid:
        return self.base.grid

    @property
    def lambda0_units(self) -> int:
        return self.grid.to_units(self.lambda0)

    def action(self, t: int, state: int, accumulated_units: int) -> int:
        return self.base.action(t, state, self.lambda0_units - accumulated_units)

    def act(self, mdp: FiniteMdp, states: Sequence[int], actions: Sequence[int]) -> int:
        """Decision at history (s_0, a_0, ..., s_t)."""
        t = len(states) - 1
        accumulated = 0
        for s, a in zip(states[:-1], actions):
            pair = int(mdp.pair_lookup[s, a])
            if pair < 0:
                raise ValueError(f"history uses inadmissible action {a} in state {s}")
            accumulated += int(mdp.reward_units[pair])
        return self.action(t, states[-1], accumulated)

    def stage_actions(self, t: int) -> np.ndarray:
        """(S, t*(r_max - r_min) + 1) actions over accumulated sums t*r_min..t*r_max."""
        grid = self.grid
        accumulated = np.arange(t * grid.r_min, t * grid.r_max + 1)
        return self.base.rules[t][:, grid.column(t, self.lambda0_units - accumulated)]


def realize_history_policy(policy: AugmentedMarkovPolicy, lambda0: float) -> HistoryPolicy:
    return HistoryPolicy(policy, float(lambda0))

# =============================================================================
# BELLMAN OPERATORS
# =============================================================================

def _pin(values: np.ndarray, grid: LambdaGrid, t: int) -> np.ndarray:
    """Exact 0/1 outside the range of possible remaining sums."""
    remaining = grid.horizon - t
    units = grid.stage_units(t)
    values[:, units >= remaining * grid.r_max] = 1.0
    values[:, units < remaining * grid.r_min] = 0.0
    return np.clip(values, 0.0, 1.0, out=values)


def terminal_values(mdp: FiniteMdp, grid: LambdaGrid) -> np.ndarray:
    values = np.zeros((mdp.num_states, grid.width(grid.horizon)))
    return _pin(values, grid, grid.horizon)


def _pair_values(mdp: FiniteMdp, grid: LambdaGrid, t: int, v_next: np.ndarray) -> np.ndarray:
    """Q[p, col] = sum_s' P(s'|p) V_{t+1}(s', lambda - r(p)) for every pair."""
    lo_t, _ = grid.stage_bounds(t)
    lo_next, _ = grid.stage_bounds(t + 1)
    width = grid.width(t)
    if v_next.shape[0] != mdp.num_states:
        raise ValueError(f"next-stage table has {v_next.shape[0]} rows for {mdp.num_states} states")

    units = mdp.reward_units
    q = np.empty((mdp.num_pairs, width))
    for r in np.unique(units):
        rows = np.flatnonzero(units == r)
        offset = lo_t - int(r) - lo_next
        if offset < 0 or offset + width > v_next.shape[1]:
            raise GridUnderflow(f"lambda - r leaves the stage {t + 1} grid for reward {r} units")
        block = mdp.transition[rows] @ v_next[:, offset:offset + width]
        q[rows] = block.toarray() if sp.issparse(block) else np.asarray(block)
    return q


def bellman_backup(mdp: FiniteMdp,
                   grid: LambdaGrid,
                   t: int,
                   v_next: np.ndarray,
                   rule: np.ndarray) -> np.ndarray:
    """Stage-t values of a fixed decision rule."""
    q = _pair_values(mdp, grid, t, v_next)
    pairs = mdp.pair_lookup[np.arange(mdp.num_states)[:, None], rule]
    if np.any(pairs < 0):
        raise ValueError(f"stage {t} rule uses an inadmissible action")
    values = q[pairs, np.arange(pairs.shape[1])[None, :]]
    return np.clip(values, 0.0, 1.0, out=values)


def bellman_optimal_backup(mdp: FiniteMdp,
                           grid: LambdaGrid,
                           t: int,
                           v_next: np.ndarray,
                           sense: Sense) -> Tuple[np.ndarray, np.ndarray]:
    """Optimal stage-t values and decision rule; ties go to the lowest action index."""
    q = _pair_values(mdp, grid, t, v_next)
    minimize = Sense(sense) is Sense.MIN
    table = np.full((mdp.num_states, mdp.max_admissible, q.shape[1]), np.inf if minimize else -np.inf)
    table[mdp.pair_state, mdp.pair_slot] = q
    slots = table.argmin(axis=1) if minimize else table.argmax(axis=1)
    values = np.take_along_axis(table, slots[:, None, :], axis=1)[:, 0, :]
    rule = mdp.pair_action[mdp.pair_offsets[:-1, None] + slots]
    return np.clip(values, 0.0, 1.0, out=values), rule


def evaluate_augmented(mdp: FiniteMdp, policy: AugmentedMarkovPolicy) -> ValueTable:
    """V^u for an augmented Markov policy; V_0(s0, lambda0) = F(s0, lambda0) of the realized policy."""
    grid = policy.grid
    stages: List[np.ndarray] = [terminal_values(mdp, grid)]
    for t in range(grid.horizon - 1, -1, -1):
        stages.append(_pin(bellman_backup(mdp, grid, t, stages[-1], policy.rules[t]), grid, t))
    return ValueTable(grid, tuple(reversed(stages)))


def solve_augmented(mdp: FiniteMdp, grid: LambdaGrid, sense: Sense) -> Tuple[ValueTable, AugmentedMarkovPolicy]:
    """Backward induction giving F*(s0, lambda0) for every grid lambda0 at once."""
    stages: List[np.ndarray] = [terminal_values(mdp, grid)]
    rules: List[np.ndarray] = []
    for t in range(grid.horizon - 1, -1, -1):
        values, rule = bellman_optimal_backup(mdp, grid, t, stages[-1], sense)
        stages.append(_pin(values, grid, t))
        rules.append(rule)
    logger.debug("augmented %s solve: T=%d, %d states, stage-0 width %d",
                 Sense(sense).value, grid.horizon, mdp.num_states, grid.size)
    return ValueTable(grid, tuple(reversed(stages))), AugmentedMarkovPolicy(grid, tuple(reversed(rules)))

# =============================================================================
# FORWARD PASSES
# =============================================================================

def _transition_rows(mdp: FiniteMdp) -> np.ndarray:
    return mdp.transition.toarray() if sp.issparse(mdp.transition) else np.asarray(mdp.transition)


def policy_reward_pmf(mdp: FiniteMdp, policy: HistoryPolicy, s0: int) -> DiscreteDistribution:
    """Exact distribution of R_{0:T} from s0, by a forward pass over (state, accumulated sum)."""
    grid = policy.grid
    rows = _transition_rows(mdp)
    units = mdp.reward_units
    mass = np.zeros((mdp.num_states, 1))
    mass[s0, 0] = 1.0

    for t in range(grid.horizon):
        actions = policy.stage_actions(t)
        nxt = np.zeros((mdp.num_states, mass.shape[1] + grid.r_max - grid.r_min))
        width = mass.shape[1]
        for p in range(mdp.num_pairs):
            s = mdp.pair_state[p]
            weight = np.where(actions[s] == mdp.pair_action[p], mass[s], 0.0)
            if not weight.any():
                continue
            offset = int(units[p]) - grid.r_min
            nxt[:, offset:offset + width] += np.outer(rows[p], weight)
        mass = nxt

    probs = mass.sum(axis=0)
    sums = np.arange(grid.horizon * grid.r_min, grid.horizon * grid.r_max + 1)
    keep = probs > 0
    return DiscreteDistribution(units_to_values(sums[keep], grid.resolution), probs[keep])


def reachable_sums(mdp: FiniteMdp, horizon: int, s0: int) -> RewardSupport:
    """Support Lambda_0 of R_{0:T} from s0 over all policies."""
    if mdp.reward_resolution is None:
        raise MissingResolution("reachable sums need a declared reward_resolution")
    units = mdp.reward_units
    r_min, r_max = int(units.min()), int(units.max())
    rows = _transition_rows(mdp) > 0
    reach = np.zeros((mdp.num_states, 1), dtype=bool)
    reach[s0, 0] = True

    for _ in range(horizon):
        width = reach.shape[1]
        nxt = np.zeros((mdp.num_states, width + r_max - r_min), dtype=bool)
        for p in range(mdp.num_pairs):
            src = reach[mdp.pair_state[p]]
            if not src.any():
                continue
            offset = int(units[p]) - r_min
            nxt[np.ix_(rows[p], np.arange(offset, offset + width))] |= src
        reach = nxt

    sums = np.arange(horizon * r_min, horizon * r_max + 1)[reach.any(axis=0)]
    return RewardSupport(units_to_values(sums, mdp.reward_resolution), mdp.reward_resolution, sums)


def trajectory_oracle(mdp: FiniteMdp,
                      policy: HistoryPolicy,
                      horizon: int,
                      s0: int,
                      options: SolverOptions = DEFAULT_OPTIONS) -> DiscreteDistribution:
    """Exact pmf of R_{0:T} by expanding every trajectory."""
    branches = (mdp.num_states * mdp.num_actions) ** horizon
    if branches > options.trajectory_cap:
        raise CapExceeded(f"{branches} trajectory branches exceed the cap {options.trajectory_cap}")

    rows = _transition_rows(mdp)
    units = mdp.reward_units
    pmf: Dict[int, float] = {}
    stack = [(0, s0, 0, 1.0)]
    while stack:
        t, s, accumulated, prob = stack.pop()
        if t == horizon:
            pmf[accumulated] = pmf.get(accumulated, 0.0) + prob
            continue
        p = mdp.pair_lookup[s, policy.action(t, s, accumulated)]
        for nxt in np.flatnonzero(rows[p]):
            stack.append((t + 1, int(nxt), accumulated + int(units[p]), prob * rows[p, nxt]))

    keys = sorted(pmf)
    return DiscreteDistribution(units_to_values(keys, mdp.reward_resolution), np.array([pmf[k] for k in keys]))


def simulate_rollouts(mdp: FiniteMdp,
                      policy: HistoryPolicy,
                      s0: int,
                      num_samples: int,
                      seed: Optional[int] = None) -> np.ndarray:
    """Sampled R_{0:T} values under a history policy."""
    grid = policy.grid
    rng = np.random.default_rng(seed)
    cumulative = np.cumsum(_transition_rows(mdp), axis=1)
    states = np.full(num_samples, s0, dtype=np.int64)
    accumulated = np.zeros(num_samples, dtype=np.int64)

    for t in range(grid.horizon):
        cols = grid.column(t, policy.lambda0_units - accumulated)
        actions = policy.base.rules[t][states, cols]
        pairs = mdp.pair_lookup[states, actions]
        accumulated += mdp.reward_units[pairs]
        draws = rng.random(num_samples)
        states = np.minimum((cumulative[pairs] < draws[:, None]).sum(axis=1), mdp.num_states - 1)

    return units_to_values(accumulated, grid.resolution)
