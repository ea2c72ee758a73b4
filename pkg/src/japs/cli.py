"""Command-line entry point: ``japs <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .environment import EnvironmentSpec, World
from .harness import ExperimentSpec, derive_rng, run_experiment
from .mnl import ItemCatalog, ModelParams, price_upper_bound
from .offline import OfflineProblem, run_lcb
from .online import load_config, simulate
from .oracle import best_joint_assortment_pricing, brute_force_joint
from .validate import SUITES, validate

log = logging.getLogger("japs")


def _read_json(path: str) -> dict:
    return json.loads(Path(path).read_text())


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_world(path: str) -> World:
    """Accept either a serialized world or an environment spec."""
    doc = _read_json(path)
    if "items" in doc:
        return World.from_dict(doc)
    return World.generate(EnvironmentSpec.from_dict(doc))


def cmd_simulate(args) -> int:
    world = _load_world(args.env)
    config = load_config(args.config, algorithm=args.algo.replace("-", "_"))
    trace = simulate(world, config, derive_rng(0, 0, args.seed))
    _write(args.out, trace.to_csv())
    log.info("%s: %d rounds, cumulative regret %.6g", config.algorithm, len(trace), trace.total_regret)
    return 0


def cmd_offline(args) -> int:
    problem = OfflineProblem.from_dict(_read_json(args.problem), base_dir=Path(args.problem).parent)
    result = run_lcb(problem)
    _write(args.out, json.dumps(result.to_dict(emit_widths=args.emit_widths), indent=2) + "\n")
    if not result.burn_in:
        log.warning("burn-in condition not met (worst norm %.4g)", result.burn_in_worst_norm)
    return 0


def cmd_oracle(args) -> int:
    pdoc = _read_json(args.params)
    params = ModelParams.from_dict(pdoc)
    catalog = ItemCatalog.from_dict(_read_json(args.catalog))
    beta = params.beta(catalog)
    L0 = float(pdoc.get("L0", beta.min()))
    P = price_upper_bound(params.W, args.k, L0)
    if args.grid is None:
        sol = best_joint_assortment_pricing(params.alpha(catalog), beta, args.k, P)
    else:
        sol = brute_force_joint(params, catalog, args.k, np.linspace(0.0, P, args.grid))
    print(json.dumps(sol.to_dict()))
    return 0


def cmd_validate(args) -> int:
    report = validate(args.suite, args.failures_dir)
    print(report.line())
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, default=float))
    return 0 if report.passed else 1


def cmd_gen_env(args) -> int:
    world = World.generate(EnvironmentSpec.from_dict(_read_json(args.spec)))
    _write(args.out, json.dumps(world.to_dict(), indent=2) + "\n")
    return 0


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.from_dict(_read_json(args.spec))
    summary = run_experiment(spec)
    for f in summary["failures"]:
        log.error("run %s seed %s failed: %s", f["run"], f["seed"], f["error"])
    return 1 if summary["failures"] else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="japs", description="Joint assortment and pricing under contextual MNL demand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one online learner and write its regret trace")
    p.add_argument("--algo", required=True, choices=["supcb", "ts", "ucb-mle", "uniform"])
    p.add_argument("--env", required=True, help="world JSON (from gen-env) or environment spec JSON")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("offline", help="pessimistic decision from a logged dataset")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--emit-widths", action="store_true")
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("oracle", help="revenue-maximizing assortment and prices for known parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--grid", type=int, default=None, help="number of grid prices on [0, P]; omit for continuous prices")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="run a property suite")
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--failures-dir", default="validate_failures")
    p.add_argument("--json", action="store_true", help="also print the full report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-env", help="generate a world from an environment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("experiment", help="run every (run, seed) pair of an experiment spec")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
