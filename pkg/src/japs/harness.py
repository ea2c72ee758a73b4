"""Offline data generation and seeded experiment orchestration.

Every replication gets its own generator derived from
``SeedSequence([master_seed, run_index, seed])``, so results do not depend
on scheduling or on the size of the worker pool.
"""

from __future__ import annotations

import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .environment import EnvironmentSpec, World
from .estimation import Dataset, Record
from .mnl import Action, sample_choice
from .offline import OfflineProblem, run_lcb, suboptimality
from .online import OnlineConfig, config_from_dict, read_trace_csv, simulate

log = logging.getLogger(__name__)

POLICY_KINDS = ("uniform_random", "fixed_action_mix", "epsilon_optimal")


def derive_rng(master_seed: int, run_index: int, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, run_index, seed]))


@dataclass(frozen=True)
class BehaviorPolicy:
    """Logging policy of an offline dataset.

    ``uniform_random``: assortment size uniform on ``1..K``, items uniform
    without replacement, each price uniform on the grid.
    ``fixed_action_mix``: ``actions`` (list of Action) drawn with ``weights``.
    ``epsilon_optimal``: the grid-optimal action, replaced by a uniform
    random one with probability ``epsilon``.
    """

    kind: str = "uniform_random"
    actions: tuple[Action, ...] = ()
    weights: tuple[float, ...] = ()
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}")
        if self.kind == "fixed_action_mix":
            if not self.actions:
                raise ValueError("fixed_action_mix needs at least one action")
            if self.weights and len(self.weights) != len(self.actions):
                raise ValueError("weights and actions differ in length")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")

    def draw(self, world: World, rng: np.random.Generator) -> Action:
        if self.kind == "fixed_action_mix":
            w = np.asarray(self.weights or [1.0] * len(self.actions), dtype=float)
            return self.actions[int(rng.choice(len(self.actions), p=w / w.sum()))]
        if self.kind == "epsilon_optimal" and rng.random() >= self.epsilon:
            return world.optimum().action
        size = int(rng.integers(1, min(world.K, world.N) + 1))
        items = rng.choice(world.N, size=size, replace=False) + 1
        prices = rng.choice(world.grid, size=size)
        return Action(tuple(int(i) for i in items), tuple(float(p) for p in prices))

    @classmethod
    def from_dict(cls, doc: dict) -> "BehaviorPolicy":
        actions = tuple(Action(tuple(a["assortment"]), tuple(a["prices"])) for a in doc.get("actions", ()))
        return cls(doc.get("kind", "uniform_random"), actions, tuple(doc.get("weights", ())),
                   float(doc.get("epsilon", 0.1)))


def generate_offline_dataset(world: World, policy: BehaviorPolicy, n: int, rng: np.random.Generator) -> Dataset:
    if n < 0:
        raise ValueError("n must be nonnegative")
    records = []
    for _ in range(n):
        catalog = world.context(rng)
        action = policy.draw(world, rng)
        action.validate(world.N, world.K)
        records.append(Record(sample_choice(world.params, catalog, action, rng), action, catalog))
    return Dataset(records, world.d)


@dataclass(frozen=True)
class RunSpec:
    """One arm of an experiment: an online learner or an offline sizing."""

    name: str
    algorithm: str
    config: OnlineConfig | None = None
    offline: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunSpec":
        if "offline" in doc:
            return cls(doc["name"], "lcb", None, dict(doc["offline"]))
        cfg = dict(doc.get("config", {}))
        cfg.setdefault("algorithm", doc.get("algorithm", "supcb"))
        config = config_from_dict(cfg)
        return cls(doc.get("name", config.algorithm), config.algorithm, config)


@dataclass(frozen=True)
class ExperimentSpec:
    environment: EnvironmentSpec
    runs: tuple[RunSpec, ...]
    seeds: tuple[int, ...]
    output_dir: str
    master_seed: int = 0

    def __post_init__(self) -> None:
        if not self.runs or not self.seeds:
            raise ValueError("an experiment needs at least one run and one seed")
        names = [r.name for r in self.runs]
        if len(set(names)) != len(names):
            raise ValueError("run names must be unique")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        return cls(EnvironmentSpec.from_dict(doc["environment"]),
                   tuple(RunSpec.from_dict(r) for r in doc["runs"]),
                   tuple(int(s) for s in doc["seeds"]), str(doc["output_dir"]),
                   int(doc.get("master_seed", 0)))


def _job(spec: ExperimentSpec, run_index: int, seed: int) -> dict[str, Any]:
    run = spec.runs[run_index]
    out = Path(spec.output_dir)
    try:
        world = World.generate(spec.environment)
        rng = derive_rng(spec.master_seed, run_index, seed)
        if run.config is not None:
            trace = simulate(world, run.config, rng)
            path = out / f"{run.name}_seed{seed}.csv"
            path.write_text(trace.to_csv())
        else:
            opts = run.offline
            policy = BehaviorPolicy.from_dict(opts.get("policy", {}))
            data = generate_offline_dataset(world, policy, int(opts["n"]), rng)
            problem = OfflineProblem(data, world.catalog, world.K, world.grid,
                                     float(opts.get("delta", 0.1)), float(opts.get("lambda", 1e-6)), world.W)
            result = run_lcb(problem)
            doc = {"suboptimality": suboptimality(result, world.params, problem), "n": int(opts["n"]),
                   **result.to_dict()}
            path = out / f"{run.name}_seed{seed}.json"
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return {"run": run.name, "seed": seed, "ok": True, "file": path.name}
    except Exception as exc:  # recorded per job; the experiment continues
        log.error("run %s seed %s failed: %s", run.name, seed, exc)
        return {"run": run.name, "seed": seed, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("JAPS_THREADS", "1")))
    except ValueError:
        return 1


def _quantiles(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return {"mean": float(v.mean()), "median": float(q50), "q25": float(q25), "q75": float(q75),
            "iqr": float(q75 - q25)}


def summarize(spec: ExperimentSpec, jobs: list[dict]) -> dict:
    """Aggregate statistics recomputed from the files on disk."""
    out = Path(spec.output_dir)
    summary: dict[str, Any] = {"runs": {}, "failures": [j for j in jobs if not j["ok"]]}
    for run in spec.runs:
        files = sorted((j for j in jobs if j["ok"] and j["run"] == run.name), key=lambda j: j["seed"])
        if not files:
            continue
        if run.config is not None:
            T = run.config.T
            checkpoints = sorted({max(1, T // 4), max(1, T // 2), T})
            curves = [read_trace_csv((out / j["file"]).read_text()) for j in files]
            entry = {"algorithm": run.algorithm, "seeds": [j["seed"] for j in files], "checkpoints": {}}
            for c in checkpoints:
                entry["checkpoints"][str(c)] = _quantiles([rows[c - 1]["cum_regret"] for rows in curves])
        else:
            subs = [json.loads((out / j["file"]).read_text())["suboptimality"] for j in files]
            entry = {"algorithm": "lcb", "seeds": [j["seed"] for j in files], "suboptimality": _quantiles(subs),
                     "values": subs}
        summary["runs"][run.name] = entry
    return summary


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> dict:
    """Run every (run, seed) pair, write one file per pair plus ``summary.json``."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = [(i, s) for i in range(len(spec.runs)) for s in spec.seeds]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        jobs = [_job(spec, i, s) for i, s in pairs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            jobs = list(pool.map(_job, [spec] * len(pairs), *zip(*pairs)))
    summary = summarize(spec, jobs)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
