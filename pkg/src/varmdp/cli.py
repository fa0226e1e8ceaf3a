"""
Command-line front end

    varmdp validate INSTANCE
    varmdp gen --states S --actions A [--reward-model integer] --seed N --out FILE
    varmdp microgrid --out FILE
    varmdp solve --manifest RUNS.yaml [--out DIR] [--workers N] [--seed N]
    varmdp compare --manifest RUNS.yaml
    varmdp certify --instance FILE --policy POLICY.json --alpha A --sense max
    varmdp oracle --manifest RUNS.yaml
    varmdp export RUN_DIR [--figures]

One summary line per result goes to stdout; logs go to stderr.
Exit codes: 0 ok, 1 failure or disagreement, 2 manifest, 3 instance,
4 chain structure, 5 iteration or enumeration cap.
"""
import argparse
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import pandas as pd

from . import __version__
from .cdf_analysis import (
    cdf_figure,
    cdf_table,
    comparison_table,
    export_trace,
    timing_table,
    trace_figure,
    trace_table,
    write_figure,
)
from .config import configure_logging, worker_count
from .data_loader import (
    RunManifest,
    get_instance,
    load_manifest,
    policy_to_dict,
    read_instance,
    read_policy,
    write_instance,
)
from .errors import (
    CapExceeded,
    ChainStructureError,
    InfeasibleState,
    InvalidMdpError,
    IterationCapExceeded,
    ManifestError,
    MissingArtifact,
    MissingResolution,
    NonConvergence,
    ParseError,
    SchemaVersionError,
    VarMdpError,
)
from .finite_var import (
    augmented_solution,
    baseline_finite,
    certify_finite,
    default_init,
    solve_finite_max,
    solve_finite_min,
)
from .fh_augmented import HistoryPolicy, policy_reward_pmf
from .instances import RandomSpec, build_microgrid, gen_random
from .mdp_core import FiniteMdp, Sense, ensure_valid, initial_policy, validate
from .steady_var import (
    baseline_steady,
    certify_steady,
    exhaustive_policy_oracle,
    solve_steady_max,
    solve_steady_min,
    steady_cdf,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_MANIFEST, EXIT_INSTANCE, EXIT_CHAIN, EXIT_CAP = 0, 1, 2, 3, 4, 5


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ManifestError):
        return EXIT_MANIFEST
    if isinstance(exc, (InvalidMdpError, ParseError, SchemaVersionError, InfeasibleState, MissingResolution)):
        return EXIT_INSTANCE
    if isinstance(exc, ChainStructureError):
        return EXIT_CHAIN
    if isinstance(exc, (IterationCapExceeded, CapExceeded, NonConvergence)):
        return EXIT_CAP
    return EXIT_FAILURE

# =============================================================================
# SOLVING ONE ENTRY
# =============================================================================

@dataclass(frozen=True)
class Outcome:
    var_star: float
    certified: bool
    iterations: int
    policy: Any
    initial: Any
    result: Any
    millis: float


def solve_entry(mdp: FiniteMdp, manifest: RunManifest, alpha: float, s0: Optional[int],
                solver: Optional[str] = None, workers: int = 1) -> Outcome:
    """Run one (problem, alpha, s0) with the requested solver."""
    solver = solver or manifest.solver
    options = manifest.solver_options(workers)
    sense = Sense(manifest.sense)
    tick = time.perf_counter()

    if not manifest.is_finite:
        if solver == "iterate":
            solve = solve_steady_max if sense is Sense.MAX else solve_steady_min
            result = solve(mdp, alpha, options=options)
            outcome = Outcome(result.var_star, result.certified, result.iterations, result.policy_star,
                              result.initial_policy, result, 0.0)
        elif solver == "baseline":
            base = baseline_steady(mdp, alpha, sense, options)
            outcome = Outcome(base.var_star, certify_steady(mdp, base.policy_star, alpha, sense, options),
                              0, base.policy_star, initial_policy(mdp, options), None, 0.0)
        else:
            found = exhaustive_policy_oracle(mdp, alpha, sense, options)
            outcome = Outcome(found.var_star, certify_steady(mdp, found.policy_star, alpha, sense, options),
                              0, found.policy_star, initial_policy(mdp, options), None, 0.0)
    else:
        horizon = manifest.horizon
        if solver == "iterate":
            solve = solve_finite_max if sense is Sense.MAX else solve_finite_min
            result = solve(mdp, horizon, alpha, s0, options=options)
            outcome = Outcome(result.var_star, result.certified, result.iterations, result.policy_star,
                              result.initial_policy, result, 0.0)
        else:
            base = baseline_finite(mdp, horizon, alpha, sense, states=[s0], options=options)[s0]
            outcome = Outcome(base.var_star,
                              certify_finite(mdp, horizon, base.policy_star, alpha, s0, sense, options),
                              0, base.policy_star, default_init(mdp, horizon, options), None, 0.0)

    return replace(outcome, millis=(time.perf_counter() - tick) * 1000.0)


def policy_cdf(mdp: FiniteMdp, policy, s0: Optional[int]) -> pd.DataFrame:
    if isinstance(policy, HistoryPolicy):
        return cdf_table(policy_reward_pmf(mdp, policy, s0))
    return cdf_table(steady_cdf(mdp, policy))


def _dump_json(payload: Dict[str, Any], path: str) -> None:
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def write_value_tables(run_dir: str, mdp: FiniteMdp, manifest: RunManifest, s0: int) -> None:
    """Inner optimal table: values.csv holds F*(s0, lambda0), value_table.csv every (t, s, lambda)."""
    inner = Sense.MIN if Sense(manifest.sense) is Sense.MAX else Sense.MAX
    table, _ = augmented_solution(mdp, manifest.horizon, inner)
    table.initial(s0).rename("value").reset_index().to_csv(os.path.join(run_dir, "values.csv"), index=False)
    table.to_frame().to_csv(os.path.join(run_dir, "value_table.csv"), index=False)


def write_artifacts(run_dir: str, mdp: FiniteMdp, manifest: RunManifest, alpha: float,
                    s0: Optional[int], outcome: Outcome) -> Dict[str, Any]:
    """Deterministic files plus meta.json, which alone carries timings."""
    os.makedirs(run_dir, exist_ok=True)
    summary = {
        "problem": manifest.problem,
        "solver": manifest.solver,
        "alpha": alpha,
        "s0": s0,
        "horizon": manifest.horizon,
        "var_star": outcome.var_star,
        "certified": outcome.certified,
        "iterations": outcome.iterations,
    }
    _dump_json(summary, os.path.join(run_dir, "summary.json"))
    _dump_json(policy_to_dict(outcome.policy), os.path.join(run_dir, "policy.json"))
    policy_cdf(mdp, outcome.initial, s0).to_csv(os.path.join(run_dir, "cdf_initial.csv"), index=False)
    policy_cdf(mdp, outcome.policy, s0).to_csv(os.path.join(run_dir, "cdf_final.csv"), index=False)
    if manifest.is_finite:
        write_value_tables(run_dir, mdp, manifest, s0)

    meta = {
        "written": datetime.now(timezone.utc).isoformat(),
        "millis_total": outcome.millis,
        "version": __version__,
    }
    if outcome.result is not None:
        trace_table(outcome.result).to_csv(os.path.join(run_dir, "trace.csv"), index=False)
        meta["trace_millis"] = timing_table(outcome.result).to_dict(orient="list")
    _dump_json(meta, os.path.join(run_dir, "meta.json"))
    return summary


def run_entry(manifest: RunManifest, tag: str, alpha: float, s0: Optional[int],
              out_dir: str, workers: int = 1) -> Dict[str, Any]:
    """Worker body: never raises, so results cross process boundaries cleanly."""
    try:
        mdp = get_instance(manifest)
        ensure_valid(mdp)
        outcome = solve_entry(mdp, manifest, alpha, s0, workers=workers)
        summary = write_artifacts(os.path.join(out_dir, tag), mdp, manifest, alpha, s0, outcome)
        code = EXIT_OK if outcome.certified else EXIT_FAILURE
        return {"tag": tag, "exit_code": code, **summary}
    except VarMdpError as exc:
        policy = getattr(exc, "policy", None)
        return {"tag": tag, "exit_code": exit_code(exc), "error": str(exc),
                "policy": list(policy) if policy is not None else None}


def _summary_line(row: Dict[str, Any]) -> str:
    if "error" in row:
        line = f"tag={row['tag']} status=error exit={row['exit_code']} error={row['error']!r}"
        if row.get("policy") is not None:
            line += f" policy={row['policy']}"
        return line
    return (f"tag={row['tag']} var_star={row['var_star']:.12g} certified={str(row['certified']).lower()} "
            f"iterations={row['iterations']}")

# =============================================================================
# SUBCOMMANDS
# =============================================================================

def _manifests(args) -> List[RunManifest]:
    manifests = load_manifest(args.manifest)
    if args.seed is not None:
        manifests = [replace(m, seed=args.seed) for m in manifests]
    return manifests


def cmd_validate(args) -> int:
    mdp = read_instance(args.instance)
    report = validate(mdp)
    if report.ok:
        print(f"valid states={mdp.num_states} actions={mdp.num_actions} pairs={mdp.num_pairs}")
        return EXIT_OK
    for violation in report.violations:
        print(violation)
    return EXIT_INSTANCE


def cmd_gen(args) -> int:
    spec = RandomSpec(num_states=args.states, num_actions=args.actions, reward_model=args.reward_model,
                      low=args.low, high=args.high, r_max=args.r_max, seed=args.seed or 0, density=args.density)
    mdp = gen_random(spec)
    write_instance(mdp, args.out)
    print(f"wrote {args.out} states={mdp.num_states} actions={mdp.num_actions}")
    return EXIT_OK


def cmd_microgrid(args) -> int:
    mdp = build_microgrid()
    write_instance(mdp, args.out)
    print(f"wrote {args.out} states={mdp.num_states} pairs={mdp.num_pairs}")
    return EXIT_OK


def cmd_solve(args) -> int:
    manifests = _manifests(args)
    workers = worker_count(args.workers)
    jobs = []
    for manifest in manifests:
        out_dir = args.out or manifest.out
        jobs.extend((manifest, tag, alpha, s0, out_dir) for tag, alpha, s0 in manifest.tags())

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_entry, *job) for job in jobs]
            rows = [f.result() for f in futures]
    else:
        rows = [run_entry(*job, workers=workers) for job in jobs]

    for row in rows:
        print(_summary_line(row))
    codes = [row["exit_code"] for row in rows if row["exit_code"] != EXIT_OK]
    return codes[0] if codes else EXIT_OK


def cmd_compare(args) -> int:
    rows = []
    for manifest in _manifests(args):
        mdp = get_instance(manifest)
        ensure_valid(mdp)
        for tag, alpha, s0 in manifest.tags():
            # each timed run pays for its own augmented solve
            augmented_solution.cache_clear()
            iterate = solve_entry(mdp, manifest, alpha, s0, solver="iterate")
            augmented_solution.cache_clear()
            baseline = solve_entry(mdp, manifest, alpha, s0, solver="baseline")
            rows.append({"tag": tag, "iterate_var": iterate.var_star, "baseline_var": baseline.var_star,
                         "iterate_ms": iterate.millis, "baseline_ms": baseline.millis})

    report = comparison_table(rows)
    out_dir = args.out or "runs"
    os.makedirs(out_dir, exist_ok=True)
    report.to_csv(os.path.join(out_dir, "compare.csv"), index=False)
    for _, row in report.iterrows():
        print(f"tag={row['tag']} iterate={row['iterate_var']:.12g} baseline={row['baseline_var']:.12g} "
              f"agree={str(bool(row['agree'])).lower()} speedup={row['speedup']:.3g}")
    disagreements = int((~report["agree"]).sum())
    if disagreements:
        logger.error("%d iterate/baseline disagreement(s)", disagreements)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_certify(args) -> int:
    mdp = read_instance(args.instance)
    ensure_valid(mdp)
    policy = read_policy(args.policy)
    if isinstance(policy, HistoryPolicy):
        ok = certify_finite(mdp, policy.grid.horizon, policy, args.alpha, args.s0, Sense(args.sense))
    else:
        ok = certify_steady(mdp, policy, args.alpha, Sense(args.sense))
    print(f"certified={str(ok).lower()}")
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_oracle(args) -> int:
    failures = 0
    for manifest in _manifests(args):
        if manifest.is_finite:
            logger.warning("oracle skips finite-horizon run %s", manifest.name)
            continue
        mdp = get_instance(manifest)
        ensure_valid(mdp)
        for tag, alpha, _ in manifest.tags():
            iterate = solve_entry(mdp, manifest, alpha, None, solver="iterate")
            oracle = solve_entry(mdp, manifest, alpha, None, solver="oracle")
            agree = iterate.var_star == oracle.var_star
            failures += not agree
            print(f"tag={tag} iterate={iterate.var_star:.12g} oracle={oracle.var_star:.12g} "
                  f"agree={str(agree).lower()}")
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_export(args) -> int:
    run_dir = args.run_dir
    tags = sorted(d for d in (os.listdir(run_dir) if os.path.isdir(run_dir) else [])
                  if os.path.isfile(os.path.join(run_dir, d, "summary.json")))
    if not tags:
        raise MissingArtifact(f"no run artifacts under {run_dir}")

    export_dir = os.path.join(run_dir, "export")
    os.makedirs(export_dir, exist_ok=True)
    traces = {}
    for tag in tags:
        src = os.path.join(run_dir, tag)
        for name in ("cdf_initial.csv", "cdf_final.csv"):
            if not os.path.isfile(os.path.join(src, name)):
                raise MissingArtifact(f"{tag} lacks {name}")
            shutil.copyfile(os.path.join(src, name), os.path.join(export_dir, f"{tag}_{name}"))
        for name in ("values.csv", "value_table.csv"):
            if os.path.isfile(os.path.join(src, name)):
                shutil.copyfile(os.path.join(src, name), os.path.join(export_dir, f"{tag}_{name}"))

        trace_path = os.path.join(src, "trace.csv")
        if os.path.isfile(trace_path):
            trace = pd.read_csv(trace_path)
            with open(os.path.join(src, "meta.json")) as handle:
                timings = json.load(handle).get("trace_millis")
            merged = export_trace(trace, pd.DataFrame(timings) if timings else None)
            merged.to_csv(os.path.join(export_dir, f"{tag}_trace.csv"), index=False)
            traces[tag] = trace

        if args.figures:
            with open(os.path.join(src, "summary.json")) as handle:
                alpha = json.load(handle)["alpha"]
            fig = cdf_figure(pd.read_csv(os.path.join(src, "cdf_initial.csv")),
                             pd.read_csv(os.path.join(src, "cdf_final.csv")), alpha)
            write_figure(fig, os.path.join(export_dir, f"{tag}_cdf.html"))

    if args.figures and traces:
        write_figure(trace_figure(traces), os.path.join(export_dir, "traces.html"))
    print(f"exported {len(tags)} run(s) to {export_dir}")
    return EXIT_OK

# =============================================================================
# ENTRY POINT
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varmdp", description="Value-at-Risk solvers for finite MDPs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    common.add_argument("--out", help="output directory (or file for gen/microgrid)")
    common.add_argument("--workers", type=int, help="worker processes (default: $VARMDP_WORKERS or 1)")
    common.add_argument("--seed", type=int, help="seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check an instance file")
    p.add_argument("instance")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen", parents=[common], help="write a seeded random instance")
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--actions", type=int, required=True)
    p.add_argument("--reward-model", choices=["uniform", "integer"], default="uniform")
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=100.0)
    p.add_argument("--r-max", type=int, default=100)
    p.add_argument("--density", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("microgrid", parents=[common], help="write the storage dispatch instance")
    p.set_defaults(func=cmd_microgrid)

    for name, func, text in (("solve", cmd_solve, "run every entry of a manifest"),
                             ("compare", cmd_compare, "iterate vs baseline on a manifest"),
                             ("oracle", cmd_oracle, "iterate vs policy enumeration on a manifest")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--manifest", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("certify", parents=[common], help="check optimality of a stored policy")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--sense", choices=["max", "min"], default="max")
    p.add_argument("--s0", type=int, default=0)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("export", parents=[common], help="collect traces and CDFs of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--figures", action="store_true", help="also write plotly HTML figures")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("gen", "microgrid") and not args.out:
        parser.error(f"{args.command} needs --out FILE")
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except VarMdpError as exc:
        logger.error("%s", exc)
        print(f"status=error exit={exit_code(exc)} error={str(exc)!r}")
        return exit_code(exc)
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
