"""
Data Loader - instance files, run manifests and the instance cache

Instance files are JSON documents (version 1):
    version, num_states, num_actions, admissible,
    transitions   dense rows (one per admissible pair, pair order) or
                  sparse records {s, a, s2, p}
    rewards       records {s, a, r}
    reward_resolution (optional), metadata (free-form)
"""
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import yaml

from .config import DEFAULT_OPTIONS, SolverOptions
from .errors import ManifestError, ParseError, SchemaVersionError
from .fh_augmented import AugmentedMarkovPolicy, LambdaGrid, realize_history_policy
from .instances import MicrogridSpec, RandomSpec, build_microgrid, gen_random
from .mdp_core import DeterministicStationaryPolicy, FiniteMdp, as_storage

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REQUIRED_FIELDS = ("version", "num_states", "num_actions", "admissible", "transitions", "rewards")

# =============================================================================
# INSTANCE FILES
# =============================================================================

def instance_to_dict(mdp: FiniteMdp) -> Dict[str, Any]:
    states, actions = mdp.pair_state.tolist(), mdp.pair_action.tolist()
    if mdp.is_dense:
        transitions = mdp.transition.tolist()
    else:
        coo = mdp.transition.tocoo()
        transitions = [
            {"s": states[p], "a": actions[p], "s2": int(col), "p": float(prob)}
            for p, col, prob in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
        ]
    return {
        "version": SCHEMA_VERSION,
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "admissible": [list(acts) for acts in mdp.admissible],
        "transitions": transitions,
        "rewards": [{"s": s, "a": a, "r": float(r)} for s, a, r in zip(states, actions, mdp.reward.tolist())],
        "reward_resolution": mdp.reward_resolution,
        "metadata": mdp.metadata,
    }


def write_instance(mdp: FiniteMdp, path: str) -> None:
    """Write a versioned instance file; floats keep full precision."""
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(instance_to_dict(mdp), handle, indent=1, default=_json_default)
        handle.write("\n")
    logger.info("wrote instance %s (%d states, %d pairs)", path, mdp.num_states, mdp.num_pairs)


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _int_field(doc: Dict[str, Any], name: str) -> int:
    value = doc[name]
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ParseError(f"expected a positive integer, got {value!r}", field=name)
    return value


def instance_from_dict(doc: Dict[str, Any], options: SolverOptions = DEFAULT_OPTIONS) -> FiniteMdp:
    if not isinstance(doc, dict):
        raise ParseError("instance document must be a JSON object")
    if "version" not in doc:
        raise ParseError("missing field", field="version")
    if doc["version"] != SCHEMA_VERSION:
        raise SchemaVersionError(f"instance version {doc['version']!r} is not supported (expected {SCHEMA_VERSION})")
    for name in REQUIRED_FIELDS:
        if name not in doc:
            raise ParseError("missing field", field=name)

    num_states = _int_field(doc, "num_states")
    num_actions = _int_field(doc, "num_actions")
    try:
        admissible = [tuple(int(a) for a in acts) for acts in doc["admissible"]]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"admissible must be a list of integer lists ({exc})", field="admissible") from exc
    if len(admissible) != num_states:
        raise ParseError(f"{len(admissible)} admissible lists for {num_states} states", field="admissible")

    lookup = {}
    for s, acts in enumerate(admissible):
        for a in acts:
            lookup[(s, a)] = len(lookup)
    num_pairs = len(lookup)

    def pair_of(record: Dict[str, Any], where: str) -> int:
        try:
            key = (int(record["s"]), int(record["a"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"record needs integer s and a ({exc})", field=where) from exc
        if key not in lookup:
            raise ParseError(f"(s={key[0]}, a={key[1]}) is not an admissible pair", field=where)
        return lookup[key]

    transitions = doc["transitions"]
    if not isinstance(transitions, list):
        raise ParseError("transitions must be a list", field="transitions")
    if transitions and isinstance(transitions[0], dict):
        rows, cols, probs = [], [], []
        for record in transitions:
            rows.append(pair_of(record, "transitions"))
            try:
                cols.append(int(record["s2"]))
                probs.append(float(record["p"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"transition record needs s2 and p ({exc})", field="transitions") from exc
        if any(not 0 <= c < num_states for c in cols):
            raise ParseError("transition target out of range", field="transitions")
        matrix = sp.csr_matrix((probs, (rows, cols)), shape=(num_pairs, num_states))
    else:
        try:
            matrix = np.array(transitions, dtype=float).reshape(len(transitions), -1)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"dense transitions must be numeric rows ({exc})", field="transitions") from exc
        if matrix.shape != (num_pairs, num_states):
            raise ParseError(f"dense transitions have shape {matrix.shape}, expected {(num_pairs, num_states)}",
                             field="transitions")

    reward = np.full(num_pairs, np.nan)
    for record in doc["rewards"]:
        try:
            reward[pair_of(record, "rewards")] = float(record["r"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"reward record needs r ({exc})", field="rewards") from exc
    if np.isnan(reward).any():
        missing = int(np.flatnonzero(np.isnan(reward))[0])
        raise ParseError(f"no reward for admissible pair #{missing}", field="rewards")

    return FiniteMdp(
        num_states=num_states,
        num_actions=num_actions,
        admissible=admissible,
        transition=as_storage(matrix, num_states <= options.dense_storage_limit),
        reward=reward,
        reward_resolution=doc.get("reward_resolution"),
        metadata=dict(doc.get("metadata") or {}),
    )


def read_instance(path: str, options: SolverOptions = DEFAULT_OPTIONS) -> FiniteMdp:
    """Load an instance file. Structure errors raise; model invariants are left to validate()."""
    with open(path) as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    mdp = instance_from_dict(doc, options)
    logger.info("loaded instance %s (%d states, %d pairs)", path, mdp.num_states, mdp.num_pairs)
    return mdp

# =============================================================================
# POLICY FILES
# =============================================================================

def policy_to_dict(policy) -> Dict[str, Any]:
    if isinstance(policy, DeterministicStationaryPolicy):
        return {"kind": "stationary", "action": list(policy.action)}
    grid = policy.grid
    return {
        "kind": "history",
        "lambda0": policy.lambda0,
        "grid": {"resolution": grid.resolution, "horizon": grid.horizon, "lo": grid.lo, "hi": grid.hi,
                 "r_min": grid.r_min, "r_max": grid.r_max},
        "rules": [rule.tolist() for rule in policy.base.rules],
    }


def policy_from_dict(doc: Dict[str, Any]):
    kind = doc.get("kind")
    try:
        if kind == "stationary":
            return DeterministicStationaryPolicy(tuple(doc["action"]))
        if kind == "history":
            grid = LambdaGrid(**doc["grid"])
            rules = tuple(np.asarray(rule, dtype=np.int64) for rule in doc["rules"])
            return realize_history_policy(AugmentedMarkovPolicy(grid, rules), float(doc["lambda0"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed {kind} policy ({exc})") from exc
    raise ParseError(f"unknown policy kind {kind!r}", field="kind")


def read_policy(path: str):
    try:
        with open(path) as handle:
            return policy_from_dict(json.load(handle))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc

# =============================================================================
# RUN MANIFESTS
# =============================================================================

PROBLEMS = ("steady-max", "steady-min", "finite-max", "finite-min")
SOLVERS = ("iterate", "baseline", "oracle")
GENERATORS = ("random", "microgrid")


@dataclass(frozen=True)
class RunManifest:
    """One experiment: an instance source, a problem and the levels to solve it at."""
    name: str
    problem: str
    alphas: Tuple[float, ...]
    instance: Optional[str] = None
    generator: Optional[Dict[str, Any]] = None
    solver: str = "iterate"
    horizon: Optional[int] = None
    s0: Tuple[int, ...] = (0,)
    out: str = "runs"
    seed: Optional[int] = None
    init: str = "lowest"
    options: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_finite(self) -> bool:
        return self.problem.startswith("finite")

    @property
    def sense(self) -> str:
        return self.problem.split("-")[1]

    def tags(self) -> List[Tuple[str, float, Optional[int]]]:
        """(tag, alpha, s0) per artifact directory, in stable order."""
        out = []
        for alpha in self.alphas:
            if self.is_finite:
                out.extend((f"{self.name}_{self.problem}_a{alpha:g}_s{s}", alpha, s) for s in self.s0)
            else:
                out.append((f"{self.name}_{self.problem}_a{alpha:g}", alpha, None))
        return out

    def solver_options(self, workers: int = 1) -> SolverOptions:
        return DEFAULT_OPTIONS.with_overrides(init=self.init, seed=self.seed, workers=workers, **self.options)


def _as_tuple(value) -> tuple:
    return tuple(value) if isinstance(value, (list, tuple)) else (value,)


def manifest_from_dict(raw: Dict[str, Any], index: int = 0) -> RunManifest:
    where = f"run #{index}"
    if not isinstance(raw, dict):
        raise ManifestError(f"{where}: entry must be a mapping")
    problem = raw.get("problem")
    if problem not in PROBLEMS:
        raise ManifestError(f"{where}: problem must be one of {PROBLEMS}, got {problem!r}")
    solver = raw.get("solver", "iterate")
    if solver not in SOLVERS:
        raise ManifestError(f"{where}: solver must be one of {SOLVERS}, got {solver!r}")
    if solver == "oracle" and problem.startswith("finite"):
        raise ManifestError(f"{where}: the enumeration oracle covers steady-state problems only")

    instance, generator = raw.get("instance"), raw.get("generator")
    if (instance is None) == (generator is None):
        raise ManifestError(f"{where}: give exactly one of instance or generator")
    if generator is not None and generator.get("type") not in GENERATORS:
        raise ManifestError(f"{where}: generator type must be one of {GENERATORS}")

    try:
        alphas = tuple(float(a) for a in _as_tuple(raw.get("alpha", raw.get("alphas"))))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: alpha must be numeric ({exc})") from exc
    if not alphas or any(not 0.0 < a <= 1.0 for a in alphas):
        raise ManifestError(f"{where}: every alpha must lie in (0, 1]")

    options = dict(raw.get("options") or {})
    unknown = sorted(set(options) - set(SolverOptions.__dataclass_fields__))
    if unknown:
        raise ManifestError(f"{where}: unknown solver options {unknown}")

    horizon = raw.get("horizon")
    if problem.startswith("finite"):
        if not isinstance(horizon, int) or horizon < 1:
            raise ManifestError(f"{where}: finite problems need an integer horizon >= 1")

    return RunManifest(
        name=str(raw.get("name", f"run{index}")),
        problem=problem,
        alphas=alphas,
        instance=instance,
        generator=dict(generator) if generator else None,
        solver=solver,
        horizon=horizon,
        s0=tuple(int(s) for s in _as_tuple(raw.get("s0", 0))),
        out=str(raw.get("out", "runs")),
        seed=raw.get("seed"),
        init=raw.get("init", "lowest"),
        options=options,
    )


def load_manifest(path: str) -> List[RunManifest]:
    """A single run document, or `runs:` entries merged over `defaults:`."""
    try:
        with open(path) as handle:
            doc = yaml.safe_load(handle)
    except (OSError, yaml.YAMLError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"manifest {path} must be a mapping")

    base = os.path.dirname(os.path.abspath(path))
    defaults = doc.get("defaults", {})
    entries = doc["runs"] if "runs" in doc else [doc]
    manifests = []
    for i, entry in enumerate(entries):
        merged = {**defaults, **entry}
        manifest = manifest_from_dict(merged, i)
        if manifest.instance and not os.path.isabs(manifest.instance):
            manifest = replace(manifest, instance=os.path.join(base, manifest.instance))
        manifests.append(manifest)
    logger.info("loaded %d run(s) from %s", len(manifests), path)
    return manifests

# =============================================================================
# INSTANCE CACHE
# =============================================================================

_cached_instances: Dict[str, FiniteMdp] = {}


def _generate(generator: Dict[str, Any], seed: Optional[int]) -> FiniteMdp:
    params = {k: v for k, v in generator.items() if k != "type"}
    if generator["type"] == "microgrid":
        return build_microgrid(MicrogridSpec(**params))
    if seed is not None and "seed" not in params:
        params["seed"] = seed
    return gen_random(RandomSpec.from_dict(params))


def get_instance(manifest: RunManifest, force_reload: bool = False) -> FiniteMdp:
    """Cached instance for a manifest entry (file path or generator spec)."""
    key = manifest.instance or json.dumps({"seed": manifest.seed, **manifest.generator}, sort_keys=True)
    if key not in _cached_instances or force_reload:
        if manifest.instance:
            _cached_instances[key] = read_instance(manifest.instance)
        else:
            _cached_instances[key] = _generate(manifest.generator, manifest.seed)
    return _cached_instances[key]
