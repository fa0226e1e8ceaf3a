"""
Instances - seeded random MDPs and the storage microgrid dispatch model

Random instances use numpy's PCG64 bit generator, so a spec plus seed gives
the same instance on every platform and numpy release that keeps PCG64.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from . import data
from .config import DEFAULT_OPTIONS, DEFAULT_TOLERANCES, SolverOptions
from .errors import InfeasibleState
from .mdp_core import FiniteMdp, as_storage, units_to_values

logger = logging.getLogger(__name__)

REWARD_MODELS = ("uniform", "integer")

# =============================================================================
# RANDOM INSTANCES
# =============================================================================

@dataclass(frozen=True)
class RandomSpec:
    """Fully connected random MDP; every action admissible in every state."""
    num_states: int
    num_actions: int
    reward_model: str = "uniform"   # "uniform" on (low, high) or "integer" on {0..r_max}
    low: float = 0.0
    high: float = 100.0
    r_max: int = 100
    seed: int = 0
    density: float = 1.0

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ValueError("num_states and num_actions must be positive")
        if self.reward_model not in REWARD_MODELS:
            raise ValueError(f"reward_model must be one of {REWARD_MODELS}, got {self.reward_model!r}")
        if self.reward_model == "uniform" and not self.low < self.high:
            raise ValueError(f"need low < high, got ({self.low}, {self.high})")
        if self.reward_model == "integer" and self.r_max < 1:
            raise ValueError(f"r_max must be at least 1, got {self.r_max}")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")

    @classmethod
    def from_dict(cls, raw: dict) -> "RandomSpec":
        known = {k: raw[k] for k in cls.__dataclass_fields__ if k in raw}
        return cls(**known)


def gen_random(spec: RandomSpec, options: SolverOptions = DEFAULT_OPTIONS) -> FiniteMdp:
    """Rows are normalized uniform(0, 1] weights; density < 1 zeroes entries but keeps one per row."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    num_pairs = spec.num_states * spec.num_actions

    rows = rng.random((num_pairs, spec.num_states))
    np.subtract(1.0, rows, out=rows)
    if spec.density < 1.0:
        keep = rng.random((num_pairs, spec.num_states)) < spec.density
        keep[np.arange(num_pairs), rng.integers(spec.num_states, size=num_pairs)] = True
        rows *= keep
    rows /= rows.sum(axis=1, keepdims=True)

    if spec.reward_model == "integer":
        reward = rng.integers(0, spec.r_max + 1, size=num_pairs).astype(float)
        resolution = 1.0
    else:
        reward = rng.uniform(spec.low, spec.high, size=num_pairs)
        resolution = None

    dense = spec.num_states <= options.dense_storage_limit
    mdp = FiniteMdp(
        num_states=spec.num_states,
        num_actions=spec.num_actions,
        admissible=tuple(tuple(range(spec.num_actions)) for _ in range(spec.num_states)),
        transition=as_storage(rows, dense),
        reward=reward,
        reward_resolution=resolution,
        metadata={"generator": "random", "rng": "PCG64", **spec.__dict__},
    )
    logger.info("generated random instance %dx%d (%s rewards, seed %d)",
                spec.num_states, spec.num_actions, spec.reward_model, spec.seed)
    return mdp

# =============================================================================
# MICROGRID
# =============================================================================

def _rows(matrix) -> Tuple[Tuple[float, ...], ...]:
    return tuple(tuple(float(p) for p in row) for row in matrix)


@dataclass(frozen=True)
class MicrogridSpec:
    """Renewable generation, storage and demand; state s = (g, b, d)."""
    generation_levels: Tuple[float, ...] = tuple(data.generation_levels)
    demand_levels: Tuple[float, ...] = tuple(data.demand_levels)
    storage_min: float = data.storage_limits['min']
    storage_max: float = data.storage_limits['max']
    max_power: float = data.max_power
    resolution: float = data.resolution
    generation_transition: Tuple[Tuple[float, ...], ...] = field(default_factory=lambda: _rows(data.generation_transition))
    demand_transition: Tuple[Tuple[float, ...], ...] = field(default_factory=lambda: _rows(data.demand_transition))

    def __post_init__(self):
        for name, levels, matrix in (("generation", self.generation_levels, self.generation_transition),
                                     ("demand", self.demand_levels, self.demand_transition)):
            matrix = np.asarray(matrix, dtype=float)
            if matrix.shape != (len(levels), len(levels)):
                raise ValueError(f"{name} matrix has shape {matrix.shape} for {len(levels)} levels")
            if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, rtol=0.0, atol=DEFAULT_TOLERANCES.row_sum):
                raise ValueError(f"{name} matrix is not row-stochastic")
        if not self.storage_min < self.storage_max:
            raise ValueError("storage_min must be below storage_max")

    def units(self, value: float) -> int:
        return int(np.rint(value / self.resolution))

    @property
    def storage_units(self) -> np.ndarray:
        return np.arange(self.units(self.storage_min), self.units(self.storage_max) + 1)

    @property
    def action_units(self) -> np.ndarray:
        cap = self.units(self.max_power)
        return np.arange(-cap, cap + 1)

    @property
    def num_states(self) -> int:
        return len(self.generation_levels) * len(self.storage_units) * len(self.demand_levels)

    def state_index(self, g: int, b: int, d: int) -> int:
        """Row-major (generation, storage, demand) level indices."""
        return (g * len(self.storage_units) + b) * len(self.demand_levels) + d

    def decode(self, state: int) -> Tuple[float, float, float]:
        """State index back to (g, b, d) values."""
        nb, nd = len(self.storage_units), len(self.demand_levels)
        g, rest = divmod(state, nb * nd)
        b, d = divmod(rest, nd)
        return (self.generation_levels[g],
                float(units_to_values(self.storage_units[b], self.resolution)),
                self.demand_levels[d])

    def action_value(self, action: int) -> float:
        return float(units_to_values(self.action_units[action], self.resolution))


def build_microgrid(spec: Optional[MicrogridSpec] = None) -> FiniteMdp:
    """Dispatch MDP: b' = b - a, R = g + a - d, P = P_g(g'|g) P_d(d'|d) I{b' = b - a}."""
    spec = spec or MicrogridSpec()
    p_g = np.asarray(spec.generation_transition, dtype=float)
    p_d = np.asarray(spec.demand_transition, dtype=float)
    g_units = np.array([spec.units(v) for v in spec.generation_levels])
    d_units = np.array([spec.units(v) for v in spec.demand_levels])
    storage = spec.storage_units
    actions = spec.action_units
    lo_b, hi_b = storage[0], storage[-1]

    # admissible actions per storage level: |a| <= C_max and b - B_max <= a <= b - B_min
    by_level = []
    for b in storage:
        allowed = np.flatnonzero((actions >= b - hi_b) & (actions <= b - lo_b))
        if allowed.size == 0:
            raise InfeasibleState(f"no admissible action at storage level {b * spec.resolution:.1f}")
        by_level.append(tuple(int(a) for a in allowed))

    ng, nb, nd = len(g_units), len(storage), len(d_units)
    g_next, d_next = np.meshgrid(np.arange(ng), np.arange(nd), indexing="ij")
    admissible, rewards = [], []
    indptr, indices, values = [0], [], []

    for g in range(ng):
        for b in range(nb):
            for d in range(nd):
                admissible.append(by_level[b])
                weights = np.outer(p_g[g], p_d[d]).ravel()
                for a in by_level[b]:
                    b_next = b - int(actions[a])
                    cols = (g_next * nb + b_next) * nd + d_next
                    nonzero = weights > 0
                    indices.extend(cols.ravel()[nonzero].tolist())
                    values.extend(weights[nonzero].tolist())
                    indptr.append(len(indices))
                    rewards.append(int(g_units[g] + actions[a] - d_units[d]))

    transition = sp.csr_matrix((values, indices, indptr), shape=(len(rewards), spec.num_states))
    mdp = FiniteMdp(
        num_states=spec.num_states,
        num_actions=len(actions),
        admissible=admissible,
        transition=transition,
        reward=units_to_values(rewards, spec.resolution),
        reward_resolution=spec.resolution,
        metadata={"generator": "microgrid", "state_order": "(g, b, d) row-major"},
    )
    logger.info("built microgrid: %d states, %d actions, %d admissible pairs",
                mdp.num_states, mdp.num_actions, mdp.num_pairs)
    return mdp
