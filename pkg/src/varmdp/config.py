"""
Solver configuration - tolerances, caps and runtime knobs
All defaults live here; solvers take an optional SolverOptions override.
"""
import logging
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional

WORKERS_ENV = "VARMDP_WORKERS"

# =============================================================================
# TOLERANCES
# =============================================================================

@dataclass(frozen=True)
class Tolerances:
    """Numerical slack used when comparing floating-point quantities."""
    row_sum: float = 1e-9         # |sum_s' P(s'|s,a) - 1|
    reward_merge: float = 1e-12   # rewards closer than this are one support point
    resolution: float = 1e-9      # |r / resolution - round(r / resolution)|
    cdf: float = 1e-12            # F(lambda) >= alpha scan slack
    balance: float = 1e-9         # stationary balance residual

DEFAULT_TOLERANCES = Tolerances()

# =============================================================================
# SOLVER OPTIONS
# =============================================================================

@dataclass(frozen=True)
class SolverOptions:
    # Outer loops
    alpha_tol: float = 1e-9           # epsilon_alpha in the stop checks
    outer_cap: Optional[int] = None   # None = |Lambda| (steady) or grid size (finite)

    # Howard policy iteration
    improvement_tol: float = 1e-9
    inner_cap: int = 10_000

    # Linear algebra
    dense_state_limit: int = 2_000    # dense solves up to this many states
    dense_storage_limit: int = 1_000  # dense transition rows up to this many states
    power_tol: float = 1e-12
    power_max_iter: int = 1_000_000

    # Oracles
    oracle_cap: int = 100_000
    trajectory_cap: int = 10 ** 7

    # Baseline sweep
    early_exit: bool = True
    workers: int = 1

    # Initial policy: "lowest" admissible action or seeded "random"
    init: str = "lowest"
    seed: Optional[int] = None

    def with_overrides(self, **changes) -> "SolverOptions":
        return replace(self, **changes)

DEFAULT_OPTIONS = SolverOptions()

# =============================================================================
# RUNTIME
# =============================================================================

def worker_count(requested: Optional[int] = None) -> int:
    """Worker pool size: explicit value, else VARMDP_WORKERS, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logging.getLogger(__name__).warning("ignoring non-integer %s=%r", WORKERS_ENV, env)
    return 1


def configure_logging(verbosity: int = 0) -> None:
    """Attach a stderr handler to the package logger (CLI only)."""
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG

    logger = logging.getLogger("varmdp")
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
