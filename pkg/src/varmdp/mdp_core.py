"""
MDP Core - finite MDP model, validation, reward support and chain analysis

A FiniteMdp stores one transition row per admissible state-action pair.
Pairs are ordered by state, then by ascending action index, so the rows of
state s are the contiguous block pair_offsets[s]:pair_offsets[s + 1].
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse import csgraph

from .config import DEFAULT_OPTIONS, DEFAULT_TOLERANCES, SolverOptions, Tolerances
from .errors import InvalidMdpError, MultichainError, NonConvergence, PeriodicError

logger = logging.getLogger(__name__)

Kernel = Union[np.ndarray, sp.csr_matrix]


class Sense(str, Enum):
    """Direction of an optimization."""
    MIN = "min"
    MAX = "max"


def units_to_values(units, resolution: float):
    """Grid units back to reward values, rounded so 6 * 0.1 prints as 0.6."""
    return np.round(np.asarray(units, dtype=float) * resolution, 12)


def as_storage(matrix, dense: bool) -> Kernel:
    if dense:
        if sp.issparse(matrix):
            return np.asarray(matrix.toarray(), dtype=float)
        return np.array(matrix, dtype=float)
    return sp.csr_matrix(matrix, dtype=float)


def submatrix(kernel: Kernel, rows, cols) -> Kernel:
    """kernel[rows][:, cols] for dense or CSR storage."""
    if sp.issparse(kernel):
        return kernel[rows][:, cols]
    return kernel[np.ix_(rows, cols)]

# =============================================================================
# MODEL
# =============================================================================

@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """The tuple <S, A, A(s), P, r> with one kernel row per admissible pair."""
    num_states: int
    num_actions: int
    admissible: Tuple[Tuple[int, ...], ...]
    transition: Kernel
    reward: np.ndarray
    reward_resolution: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        admissible = tuple(tuple(int(a) for a in acts) for acts in self.admissible)
        object.__setattr__(self, "admissible", admissible)
        if len(admissible) != self.num_states:
            raise ValueError(f"admissible lists {len(admissible)} states, expected {self.num_states}")

        num_pairs = sum(len(acts) for acts in admissible)
        reward = np.array(self.reward, dtype=float).reshape(-1)
        if reward.shape[0] != num_pairs:
            raise ValueError(f"reward has {reward.shape[0]} entries for {num_pairs} admissible pairs")
        reward.setflags(write=False)
        object.__setattr__(self, "reward", reward)

        transition = self.transition
        if sp.issparse(transition):
            transition = sp.csr_matrix(transition, dtype=float)
        else:
            transition = np.array(transition, dtype=float)
            transition.setflags(write=False)
        if transition.shape != (num_pairs, self.num_states):
            raise ValueError(f"transition has shape {transition.shape}, expected {(num_pairs, self.num_states)}")
        object.__setattr__(self, "transition", transition)

        if self.reward_resolution is not None:
            object.__setattr__(self, "reward_resolution", float(self.reward_resolution))

    # -------------------------------------------------------------------------
    # Constructors
    # -------------------------------------------------------------------------

    @classmethod
    def from_arrays(cls,
                    transition: np.ndarray,
                    reward: np.ndarray,
                    admissible: Optional[Sequence[Sequence[int]]] = None,
                    reward_resolution: Optional[float] = None,
                    dense: Optional[bool] = None,
                    metadata: Optional[Dict[str, Any]] = None,
                    options: SolverOptions = DEFAULT_OPTIONS) -> "FiniteMdp":
        """Build from P[s, a, s'] and r[s, a]; entries of inadmissible pairs are ignored."""
        transition = np.asarray(transition, dtype=float)
        reward = np.asarray(reward, dtype=float)
        num_states, num_actions, _ = transition.shape
        if admissible is None:
            admissible = [list(range(num_actions)) for _ in range(num_states)]
        states = [s for s in range(num_states) for _ in admissible[s]]
        actions = [a for s in range(num_states) for a in admissible[s]]
        rows = transition[states, actions, :] if states else np.zeros((0, num_states))
        if dense is None:
            dense = num_states <= options.dense_storage_limit
        return cls(
            num_states=num_states,
            num_actions=num_actions,
            admissible=admissible,
            transition=as_storage(rows, dense),
            reward=reward[states, actions] if states else np.zeros(0),
            reward_resolution=reward_resolution,
            metadata=dict(metadata or {}),
        )

    # -------------------------------------------------------------------------
    # Pair bookkeeping
    # -------------------------------------------------------------------------

    @property
    def num_pairs(self) -> int:
        return int(self.reward.shape[0])

    @property
    def is_dense(self) -> bool:
        return not sp.issparse(self.transition)

    @cached_property
    def pair_offsets(self) -> np.ndarray:
        lengths = np.array([len(acts) for acts in self.admissible], dtype=np.int64)
        return np.concatenate([[0], np.cumsum(lengths)])

    @cached_property
    def pair_state(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_states), np.diff(self.pair_offsets))

    @cached_property
    def pair_action(self) -> np.ndarray:
        return np.array([a for acts in self.admissible for a in acts], dtype=np.int64)

    @cached_property
    def pair_slot(self) -> np.ndarray:
        """Position of each pair inside its state's admissible list."""
        return np.arange(self.num_pairs) - self.pair_offsets[self.pair_state]

    @cached_property
    def max_admissible(self) -> int:
        return int(np.diff(self.pair_offsets).max()) if self.num_states else 0

    @cached_property
    def pair_lookup(self) -> np.ndarray:
        """(S, A) table of pair indices, -1 where (s, a) is not admissible."""
        lookup = np.full((self.num_states, self.num_actions), -1, dtype=np.int64)
        in_range = (self.pair_action >= 0) & (self.pair_action < self.num_actions)
        lookup[self.pair_state[in_range], self.pair_action[in_range]] = np.flatnonzero(in_range)
        return lookup

    @cached_property
    def reward_units(self) -> Optional[np.ndarray]:
        """Rewards as integers on the declared grid (None without a resolution)."""
        if self.reward_resolution is None:
            return None
        return np.rint(self.reward / self.reward_resolution).astype(np.int64)

    def pairs_of(self, state: int) -> range:
        return range(int(self.pair_offsets[state]), int(self.pair_offsets[state + 1]))

    def pair_index(self, policy: "DeterministicStationaryPolicy") -> np.ndarray:
        actions = np.asarray(policy.action, dtype=np.int64)
        if actions.shape != (self.num_states,):
            raise ValueError(f"policy has {actions.shape[0]} entries for {self.num_states} states")
        if np.any((actions < 0) | (actions >= self.num_actions)):
            raise ValueError("policy action out of range")
        pairs = self.pair_lookup[np.arange(self.num_states), actions]
        if np.any(pairs < 0):
            bad = int(np.flatnonzero(pairs < 0)[0])
            raise ValueError(f"action {actions[bad]} is not admissible at state {bad}")
        return pairs

    def induced_kernel(self, policy: "DeterministicStationaryPolicy", dense: Optional[bool] = None) -> Kernel:
        """Transition matrix of the chain induced by a stationary policy."""
        rows = self.transition[self.pair_index(policy)]
        if dense is None:
            dense = self.is_dense
        return as_storage(rows, dense)

    # -------------------------------------------------------------------------
    # Support
    # -------------------------------------------------------------------------

    @cached_property
    def support(self) -> "RewardSupport":
        return reward_support(self)

    @cached_property
    def pair_support_index(self) -> np.ndarray:
        """Index into `support.values` of every pair's reward."""
        support = self.support
        if support.units is not None:
            return np.searchsorted(support.units, self.reward_units)
        # merged groups: position of the last support value <= reward + tol
        tol = DEFAULT_TOLERANCES.reward_merge
        return np.searchsorted(support.values, self.reward + tol, side="right") - 1

    def at_or_below(self, lam: float) -> np.ndarray:
        """Boolean per pair: r(s, a) <= lambda on the support ordering."""
        return self.pair_support_index < self.support.count_at_or_below(lam)

    def equals(self, other: "FiniteMdp", atol: float = 0.0) -> bool:
        """Field-for-field comparison (metadata excluded)."""
        if (self.num_states, self.num_actions, self.admissible, self.reward_resolution) != \
                (other.num_states, other.num_actions, other.admissible, other.reward_resolution):
            return False
        mine = self.transition.toarray() if sp.issparse(self.transition) else self.transition
        theirs = other.transition.toarray() if sp.issparse(other.transition) else other.transition
        return bool(np.allclose(mine, theirs, rtol=0.0, atol=atol)
                    and np.allclose(self.reward, other.reward, rtol=0.0, atol=atol))


@dataclass(frozen=True)
class DeterministicStationaryPolicy:
    """One admissible action per state."""
    action: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "action", tuple(int(a) for a in self.action))

    def __len__(self) -> int:
        return len(self.action)

    def __getitem__(self, state: int) -> int:
        return self.action[state]

    @classmethod
    def lowest(cls, mdp: FiniteMdp) -> "DeterministicStationaryPolicy":
        return cls(tuple(acts[0] for acts in mdp.admissible))

    @classmethod
    def random(cls, mdp: FiniteMdp, rng: np.random.Generator) -> "DeterministicStationaryPolicy":
        return cls(tuple(acts[int(rng.integers(len(acts)))] for acts in mdp.admissible))


def initial_policy(mdp: FiniteMdp, options: SolverOptions = DEFAULT_OPTIONS) -> DeterministicStationaryPolicy:
    if options.init == "random":
        return DeterministicStationaryPolicy.random(mdp, np.random.default_rng(options.seed))
    if options.init != "lowest":
        raise ValueError(f"unknown init {options.init!r}")
    return DeterministicStationaryPolicy.lowest(mdp)

# =============================================================================
# VALIDATION
# =============================================================================

@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(mdp: FiniteMdp, tolerances: Tolerances = DEFAULT_TOLERANCES) -> ValidationReport:
    """Report every violated FiniteMdp invariant; never raises."""
    violations: List[str] = []

    if mdp.num_states < 1:
        violations.append("num_states must be positive")
    if mdp.num_actions < 1:
        violations.append("num_actions must be positive")

    for s, acts in enumerate(mdp.admissible):
        if not acts:
            violations.append(f"state {s} has no admissible action")
        for a in acts:
            if not 0 <= a < mdp.num_actions:
                violations.append(f"admissible action {a} at state {s} out of range [0, {mdp.num_actions})")
        if len(set(acts)) != len(acts) or list(acts) != sorted(acts):
            violations.append(f"admissible actions at state {s} must be sorted and distinct")

    if mdp.num_pairs:
        states, actions = mdp.pair_state, mdp.pair_action
        kernel = mdp.transition
        if sp.issparse(kernel):
            row_sums = np.asarray(kernel.sum(axis=1)).ravel()
            magnitude = np.asarray(abs(kernel).sum(axis=1)).ravel()
            entry_rows = np.repeat(np.arange(kernel.shape[0]), np.diff(kernel.indptr))
            negative = entry_rows[kernel.data < 0]
            neg_cols = kernel.indices[kernel.data < 0]
            neg_vals = kernel.data[kernel.data < 0]
        else:
            row_sums = kernel.sum(axis=1)
            magnitude = np.abs(kernel).sum(axis=1)
            negative, neg_cols = np.nonzero(kernel < 0)
            neg_vals = kernel[negative, neg_cols]

        for p, col, val in zip(negative, neg_cols, neg_vals):
            violations.append(f"transition row (s={states[p]},a={actions[p]}) has negative entry {val:.6g} at s'={col}")

        slack = tolerances.row_sum * np.maximum(1.0, magnitude)
        bad_rows = np.flatnonzero(~(np.abs(row_sums - 1.0) <= slack))
        for p in bad_rows:
            violations.append(f"transition row (s={states[p]},a={actions[p]}) sums to {row_sums[p]:.10g}")

        for p in np.flatnonzero(~np.isfinite(mdp.reward)):
            violations.append(f"reward (s={states[p]},a={actions[p]}) is not finite")

        res = mdp.reward_resolution
        if res is not None:
            if not (np.isfinite(res) and res > 0):
                violations.append(f"reward_resolution must be positive, got {res}")
            else:
                scaled = mdp.reward / res
                finite = np.isfinite(scaled)
                off_grid = np.flatnonzero(finite & (np.abs(scaled - np.rint(scaled)) > tolerances.resolution))
                for p in off_grid:
                    violations.append(
                        f"reward (s={states[p]},a={actions[p]})={mdp.reward[p]:.12g} is not a multiple of {res}"
                    )

    return ValidationReport(tuple(violations))


def ensure_valid(mdp: FiniteMdp) -> None:
    report = validate(mdp)
    if not report.ok:
        raise InvalidMdpError(report)

# =============================================================================
# REWARD SUPPORT AND LEFT PREDECESSOR
# =============================================================================

@dataclass(frozen=True, eq=False)
class RewardSupport:
    """Strictly increasing distinct reward values (Lambda)."""
    values: np.ndarray
    resolution: Optional[float] = None
    units: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __iter__(self):
        return iter(self.values.tolist())

    @property
    def min(self) -> float:
        return float(self.values[0])

    @property
    def max(self) -> float:
        return float(self.values[-1])

    def count_at_or_below(self, lam: float) -> int:
        """Number of support values y with y <= lambda."""
        if self.units is not None:
            return int(np.searchsorted(self.units, lam / self.resolution + 1e-9, side="right"))
        return int(np.searchsorted(self.values, lam + DEFAULT_TOLERANCES.reward_merge, side="right"))

    def count_below(self, lam: float) -> int:
        """Number of support values y with y < lambda."""
        if self.units is not None:
            return int(np.searchsorted(self.units, lam / self.resolution - 1e-9, side="left"))
        return int(np.searchsorted(self.values, lam - DEFAULT_TOLERANCES.reward_merge, side="left"))

    @classmethod
    def from_values(cls, values, resolution: Optional[float] = None,
                    tolerance: float = DEFAULT_TOLERANCES.reward_merge) -> "RewardSupport":
        values = np.asarray(values, dtype=float).reshape(-1)
        if resolution is not None:
            units = np.unique(np.rint(values / resolution).astype(np.int64))
            return cls(units_to_values(units, resolution), resolution, units)
        ordered = np.sort(values)
        if ordered.size == 0:
            return cls(ordered)
        keep = np.concatenate([[True], np.diff(ordered) > tolerance])
        return cls(ordered[keep])


def reward_support(mdp: FiniteMdp) -> RewardSupport:
    """Sorted distinct rewards over all admissible pairs."""
    return RewardSupport.from_values(mdp.reward, mdp.reward_resolution)


def left_predecessor(lam: float, support: RewardSupport) -> float:
    """Largest support value strictly below lambda, else lambda minus one step."""
    if len(support) == 0:
        raise ValueError("left predecessor of an empty support")
    below = support.count_below(lam)
    if below > 0:
        return float(support.values[below - 1])
    if support.resolution is not None:
        return float(np.round(lam - support.resolution, 12))
    return lam - 1.0


def value_at_risk(values, probs, alpha: float, tolerance: float = DEFAULT_TOLERANCES.cdf) -> float:
    """VaR_alpha = min{y : P(X <= y) >= alpha} of a finitely supported distribution."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(values, kind="stable")
    cdf = np.cumsum(probs[order])
    hit = np.flatnonzero(cdf >= alpha - tolerance)
    idx = int(hit[0]) if hit.size else len(order) - 1
    return float(values[order][idx])


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finitely supported distribution with sorted, distinct atoms."""
    values: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_pmf(cls, pmf: Dict[float, float]) -> "DiscreteDistribution":
        items = sorted(pmf.items())
        return cls(np.array([v for v, _ in items], dtype=float), np.array([p for _, p in items], dtype=float))

    @property
    def support(self) -> RewardSupport:
        return RewardSupport(self.values)

    def cdf(self, lam: float) -> float:
        """P(X <= lambda)."""
        k = int(np.searchsorted(self.values, lam + DEFAULT_TOLERANCES.reward_merge, side="right"))
        return float(self.probs[:k].sum())

    def var(self, alpha: float) -> float:
        return value_at_risk(self.values, self.probs, alpha)

    def left_predecessor(self, lam: float) -> float:
        return left_predecessor(lam, self.support)

# =============================================================================
# CHAIN STRUCTURE
# =============================================================================

@dataclass(frozen=True)
class ChainDiagnosis:
    recurrent_classes: Tuple[Tuple[int, ...], ...]
    periods: Tuple[int, ...]

    @property
    def is_unichain(self) -> bool:
        return len(self.recurrent_classes) == 1

    @property
    def is_aperiodic(self) -> bool:
        return all(p == 1 for p in self.periods)


def _class_period(graph: sp.csr_matrix, members: np.ndarray) -> int:
    sub = graph[members][:, members]
    dist = csgraph.shortest_path(sub, directed=True, unweighted=True, indices=0)
    edges = sub.tocoo()
    lags = np.abs(dist[edges.row] + 1 - dist[edges.col]).astype(np.int64)
    period = int(np.gcd.reduce(lags)) if lags.size else 1
    return period or 1


def chain_structure(kernel: Kernel) -> ChainDiagnosis:
    """Recurrent classes and their periods for a row-stochastic matrix."""
    graph = sp.csr_matrix(kernel, dtype=float, copy=True)
    graph.eliminate_zeros()
    graph.data[:] = 1.0
    _, labels = csgraph.connected_components(graph, directed=True, connection="strong")
    coo = graph.tocoo()
    cross = labels[coo.row] != labels[coo.col]
    leaving = set(np.unique(labels[coo.row[cross]]).tolist())

    classes = []
    for label in np.unique(labels):
        if int(label) in leaving:
            continue
        classes.append(np.flatnonzero(labels == label))
    classes.sort(key=lambda members: int(members[0]))

    periods = tuple(_class_period(graph, members) for members in classes)
    return ChainDiagnosis(tuple(tuple(int(s) for s in members) for members in classes), periods)


def diagnose_chain(mdp: FiniteMdp, policy: DeterministicStationaryPolicy) -> ChainDiagnosis:
    diagnosis = chain_structure(mdp.induced_kernel(policy, dense=False))
    logger.debug("chain: %d recurrent class(es), periods %s", len(diagnosis.recurrent_classes), diagnosis.periods)
    return diagnosis


def require_unichain(diagnosis: ChainDiagnosis, policy: DeterministicStationaryPolicy) -> None:
    if not diagnosis.is_unichain:
        raise MultichainError(diagnosis.recurrent_classes, policy.action)
    if not diagnosis.is_aperiodic:
        raise PeriodicError(diagnosis.periods[0], policy.action)

# =============================================================================
# STATIONARY DISTRIBUTION
# =============================================================================

@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    """Limiting state-action distribution pi^u of a unichain aperiodic policy."""
    prob: np.ndarray           # per pair, zero off-policy
    state_prob: np.ndarray     # per state
    support_states: Tuple[int, ...]
    policy: DeterministicStationaryPolicy

    def balance_residual(self, mdp: FiniteMdp) -> float:
        kernel = mdp.induced_kernel(self.policy)
        flow = kernel.T @ self.state_prob
        return float(np.max(np.abs(np.asarray(flow).ravel() - self.state_prob)))


def power_iteration(kernel: Kernel, tol: float, max_iter: int, start: Optional[np.ndarray] = None) -> np.ndarray:
    """Iterate x <- x P until the L1 change drops below tol."""
    n = kernel.shape[0]
    x = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float)
    transposed = kernel.T.tocsr() if sp.issparse(kernel) else kernel.T
    for _ in range(max_iter):
        nxt = np.asarray(transposed @ x).ravel()
        nxt /= nxt.sum()
        if np.abs(nxt - x).sum() < tol:
            return nxt
        x = nxt
    raise NonConvergence(f"power iteration did not reach tol={tol:g} within {max_iter} iterations")


def stationary_distribution(mdp: FiniteMdp,
                            policy: DeterministicStationaryPolicy,
                            options: SolverOptions = DEFAULT_OPTIONS,
                            diagnosis: Optional[ChainDiagnosis] = None) -> StationaryDistribution:
    """pi^u on the unique recurrent class; raises on multichain or periodic chains."""
    diagnosis = diagnosis or diagnose_chain(mdp, policy)
    require_unichain(diagnosis, policy)

    members = np.array(diagnosis.recurrent_classes[0], dtype=np.int64)
    pairs = mdp.pair_index(policy)
    # a recurrent class is closed, so its restriction is stochastic
    sub = submatrix(mdp.transition, pairs[members], members)

    if len(members) <= options.dense_state_limit:
        dense = sub.toarray() if sp.issparse(sub) else np.asarray(sub)
        n = len(members)
        system = (np.eye(n) - dense).T
        system[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        x = linalg.solve(system, rhs)
    else:
        x = power_iteration(sp.csr_matrix(sub), options.power_tol, options.power_max_iter)

    x = np.clip(x, 0.0, None)
    x /= x.sum()
    residual = float(np.max(np.abs(np.asarray(sub.T @ x).ravel() - x)))
    if residual > DEFAULT_TOLERANCES.balance:
        raise NonConvergence(f"stationary balance residual {residual:.3g} exceeds {DEFAULT_TOLERANCES.balance:g}")
    state_prob = np.zeros(mdp.num_states)
    state_prob[members] = x
    prob = np.zeros(mdp.num_pairs)
    prob[pairs] = state_prob
    return StationaryDistribution(prob, state_prob, tuple(int(s) for s in members), policy)
