"""Property suites with measured statistics.

Each check returns a :class:`SuiteReport`. The command-line ``validate``
entry point runs one named suite, prints its report and serializes any
failing cases so they can be replayed.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .environment import EnvironmentSpec, World, generate_environment, reference_spec
from .estimation import (
    ConfidenceSpec,
    Dataset,
    FitConfig,
    Record,
    burn_in_satisfied,
    confidence_width,
    fit_mle,
    hessian_at,
    likelihood_derivatives,
    neg_log_likelihood,
)
from .harness import BehaviorPolicy, ExperimentSpec, RunSpec, derive_rng, generate_offline_dataset, run_experiment
from .mnl import Action, ItemCatalog, ModelParams, choice_probabilities, sample_choice, sample_choices
from .offline import OfflineProblem, lcb_utilities, run_lcb, suboptimality
from .online import OnlineConfig, simulate
from .oracle import best_joint_assortment_pricing, brute_force_joint, perturbation_bound

SUITES = ("gradients", "coverage", "oracle", "perturbation", "elimination")


@dataclass
class SuiteReport:
    suite: str
    passed: bool
    stats: dict[str, Any]
    failures: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.stats.items() if not isinstance(v, (list, dict)))
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}: {shown} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "stats": self.stats,
                "failures": self.failures, "seconds": self.seconds}


def _fmt(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def _timed(fn: Callable[..., SuiteReport]) -> Callable[..., SuiteReport]:
    def wrapper(*args, **kwargs) -> SuiteReport:
        start = time.perf_counter()
        report = fn(*args, **kwargs)
        report.seconds = time.perf_counter() - start
        return report
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _random_catalog(rng: np.random.Generator, N: int, d: int) -> ItemCatalog:
    X = rng.normal(size=(N, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return ItemCatalog(X * rng.uniform(0.1, 1.0, (N, 1)))


def _random_dataset(rng: np.random.Generator, d: int, n: int) -> tuple[Dataset, np.ndarray]:
    psi, phi = rng.normal(size=d), np.abs(rng.normal(size=d))
    theta = np.concatenate([psi, phi])
    theta /= max(1.0, np.linalg.norm(theta))
    params = ModelParams(theta[:d], theta[d:], 1.0)
    records = []
    for _ in range(n):
        N = int(rng.integers(1, 5))
        cat = _random_catalog(rng, N, d)
        k = int(rng.integers(1, N + 1))
        items = tuple(int(i) + 1 for i in rng.choice(N, size=k, replace=False))
        action = Action(items, tuple(float(p) for p in rng.uniform(0.0, 3.0, k)))
        records.append(Record(sample_choice(params, cat, action, rng), action, cat))
    return Dataset(records, d), theta


# --- derivatives -----------------------------------------------------------

@_timed
def check_derivatives(instances: int = 50, seed: int = 0, step: float = 1e-5,
                      tolerance: float = 1e-5) -> SuiteReport:
    """Analytic gradient and Hessian of the penalized loss against central differences."""
    rng = np.random.default_rng(seed)
    worst_g = worst_h = 0.0
    failures = []
    for i in range(instances):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 51))
        data, _ = _random_dataset(rng, d, n)
        lam = float(rng.choice([0.0, rng.uniform(0.0, 2.0)]))
        theta = rng.normal(size=2 * d) * 0.7
        g, H = likelihood_derivatives(theta, data, lam)
        eye = np.eye(2 * d)
        num_g = np.array([(neg_log_likelihood(theta + step * e, data, lam)
                           - neg_log_likelihood(theta - step * e, data, lam)) / (2 * step) for e in eye])
        num_h = np.array([(likelihood_derivatives(theta + step * e, data, lam)[0]
                           - likelihood_derivatives(theta - step * e, data, lam)[0]) / (2 * step) for e in eye])
        err_g = float(np.linalg.norm(num_g - g) / max(np.linalg.norm(g), 1e-8))
        err_h = float(np.linalg.norm(num_h - H) / max(np.linalg.norm(H), 1e-8))
        worst_g, worst_h = max(worst_g, err_g), max(worst_h, err_h)
        if max(err_g, err_h) >= tolerance:
            failures.append({"instance": i, "theta": theta.tolist(), "lambda": lam, "grad_error": err_g,
                             "hess_error": err_h, "records": [r.to_dict() for r in data]})
    stats = {"instances": instances, "max_grad_rel_error": worst_g, "max_hess_rel_error": worst_h,
             "tolerance": tolerance}
    return SuiteReport("gradients", not failures, stats, failures)


# --- choice law --------------------------------------------------------------

@_timed
def check_choice_law(pairs: int = 10, draws: int = 30_000, seed: int = 0, z: float = 3.0) -> SuiteReport:
    """Empirical choice frequencies of the sampler against the model probabilities."""
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for i in range(pairs):
        world = World.generate(EnvironmentSpec(d=int(rng.integers(1, 4)), N=int(rng.integers(2, 7)),
                                               K=int(rng.integers(1, 4)), W=1.0, L0=0.3,
                                               seed=int(rng.integers(2**31))))
        k = int(rng.integers(1, min(world.K, world.N) + 1))
        items = tuple(int(j) + 1 for j in rng.choice(world.N, size=k, replace=False))
        action = Action(items, tuple(float(p) for p in rng.choice(world.grid, size=k)))
        q = choice_probabilities(world.params, world.catalog, action)
        labels = (0,) + action.assortment
        picks = sample_choices(world.params, world.catalog, action, rng, draws)
        freq = np.array([np.count_nonzero(picks == lab) for lab in labels]) / draws
        slack = z * np.sqrt(q * (1 - q) / draws)
        dev = np.abs(freq - q)
        worst = max(worst, float(np.max(dev / np.maximum(slack, 1e-300))))
        if np.any(dev > slack):
            failures.append({"pair": i, "world": world.to_dict(), "assortment": list(action.assortment),
                             "prices": list(action.prices), "q": q.tolist(), "freq": freq.tolist()})
    stats = {"pairs": pairs, "draws": draws, "max_deviation_in_sd_units": worst, "bound_sd_units": z}
    return SuiteReport("choice-law", not failures, stats, failures)


# --- MLE consistency ---------------------------------------------------------

@_timed
def check_mle_consistency(n: int = 20_000, seeds: int = 20, radius: float = 0.1, required: int = 18,
                          lam: float = 1e-6, master_seed: int = 3) -> SuiteReport:
    world = World.generate(reference_spec())
    errors = []
    for s in range(seeds):
        data = generate_offline_dataset(world, BehaviorPolicy(), n, derive_rng(master_seed, 0, s))
        fit = fit_mle(data, FitConfig(lam=lam))
        errors.append(float(np.linalg.norm(fit.theta_hat - world.params.theta)))
    hits = int(sum(e < radius for e in errors))
    failures = [{"seed": s, "error": e} for s, e in enumerate(errors) if e >= radius]
    stats = {"n": n, "seeds": seeds, "within_radius": hits, "required": required,
             "median_error": float(np.median(errors)), "errors": errors}
    return SuiteReport("mle-consistency", hits >= required, stats, failures)


# --- confidence coverage, Hessian sandwich, pessimism -----------------------

def fixed_directions(count: int = 40, d: int = 2, P: float = 1.0, seed: int = 12345) -> np.ndarray:
    """Fixed augmented test vectors: nonnegative features in the unit ball, prices in ``[0, P]``."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (count, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X *= rng.uniform(0.2, 1.0, (count, 1))
    p = rng.uniform(0.0, P, (count, 1))
    return np.concatenate([X, -p * X], axis=1)


def _generalized_eigenvalues(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(B)
    Linv = np.linalg.inv(L)
    return np.linalg.eigvalsh(Linv @ A @ Linv.T)


@dataclass
class CoverageRun:
    burn_in: bool
    burn_in_worst_norm: float
    covered: bool
    worst_ratio: float
    eig_min: float
    eig_max: float
    pessimistic: bool


def coverage_replications(reps: int = 200, n: int = 5000, delta: float = 0.1, lam: float = 1e-6,
                          master_seed: int = 4, directions: int = 40) -> tuple[list[CoverageRun], dict]:
    """Replicated offline fits on the reference world under the uniform logging policy.

    For each replication: the burn-in check, the coverage event over the
    fixed directions (width with the Hessian at the true parameter), the
    generalized eigenvalues of the Hessians at the estimate and the truth,
    and whether the pessimistic utility table lies below the truth everywhere.
    """
    world = World.generate(reference_spec())
    theta_star = world.params.theta
    dirs = fixed_directions(directions, world.d, world.constants.P)
    true_table = world.catalog.augmented_table(world.grid) @ theta_star
    spec_star = ConfidenceSpec(delta, world.N, world.W, use_hat_hessian_inflation=False)
    runs = []
    for r in range(reps):
        data = generate_offline_dataset(world, BehaviorPolicy(), n, derive_rng(master_seed, 0, r))
        fit = fit_mle(data, FitConfig(lam=lam))
        H_star = hessian_at(theta_star, data, lam)
        ok, worst = burn_in_satisfied(data, fit.hessian_at_hat, world.d, world.N, delta, lam, world.W)
        width = confidence_width(dirs, fit, spec_star, hessian=H_star)
        err = np.abs(dirs @ (fit.theta_hat - theta_star))
        eig = _generalized_eigenvalues(fit.hessian_at_hat, H_star)
        problem = OfflineProblem(data, world.catalog, world.K, world.grid, delta, lam, world.W)
        lcb = lcb_utilities(fit, problem).values
        runs.append(CoverageRun(ok, worst, bool(np.all(err <= width)), float(np.max(err / width)),
                                float(eig.min()), float(eig.max()), bool(np.all(lcb <= true_table + 1e-12))))
    info = {"reps": reps, "n": n, "delta": delta, "lambda": lam, "directions": directions}
    return runs, info


def coverage_report(runs: list[CoverageRun], info: dict, required: float = 0.85) -> SuiteReport:
    """Coverage among burn-in-passing replications; red when none qualifies."""
    passing = [r for r in runs if r.burn_in]
    cov_all = float(np.mean([r.covered for r in runs])) if runs else float("nan")
    cov_burn = float(np.mean([r.covered for r in passing])) if passing else float("nan")
    stats = {**info, "burn_in_passing": len(passing), "coverage_burn_in": cov_burn,
             "coverage_all": cov_all, "required": required,
             "median_burn_in_norm": float(np.median([r.burn_in_worst_norm for r in runs])) if runs else float("nan"),
             "median_worst_ratio": float(np.median([r.worst_ratio for r in runs])) if runs else float("nan")}
    failures = [] if passing else [{"reason": "no replication satisfies the burn-in condition"}]
    ok = bool(passing) and cov_burn >= required
    if passing and not ok:
        failures = [{"replication": i, "worst_ratio": r.worst_ratio} for i, r in enumerate(runs)
                    if r.burn_in and not r.covered]
    return SuiteReport("coverage", ok, stats, failures)


def sandwich_report(runs: list[CoverageRun], info: dict, band: tuple[float, float] = (1 / 3, 3.0),
                    required: float = 0.85) -> SuiteReport:
    inside = [band[0] <= r.eig_min and r.eig_max <= band[1] for r in runs]
    frac = float(np.mean(inside))
    stats = {**info, "fraction_inside": frac, "required": required,
             "min_eigenvalue": min(r.eig_min for r in runs), "max_eigenvalue": max(r.eig_max for r in runs)}
    failures = [{"replication": i, "eig_min": r.eig_min, "eig_max": r.eig_max}
                for i, (r, ok) in enumerate(zip(runs, inside)) if not ok]
    return SuiteReport("hessian-sandwich", frac >= required, stats, failures)


def pessimism_report(runs: list[CoverageRun], info: dict, required: float = 0.85) -> SuiteReport:
    frac = float(np.mean([r.pessimistic for r in runs]))
    stats = {**info, "fraction_valid": frac, "required": required}
    failures = [{"replication": i} for i, r in enumerate(runs) if not r.pessimistic]
    return SuiteReport("pessimism", frac >= required, stats, failures)


@_timed
def check_coverage(reps: int = 200, n: int = 5000, delta: float = 0.1) -> SuiteReport:
    runs, info = coverage_replications(reps, n, delta)
    return coverage_report(runs, info)


# --- oracle ------------------------------------------------------------------

def _adjacent_grid_gap(alpha: np.ndarray, beta: np.ndarray, S: tuple[int, ...], grid: np.ndarray) -> float:
    """Largest revenue change between neighbouring grid price vectors for assortment ``S``."""
    if not S:
        return 0.0
    idx = np.asarray(S) - 1
    mesh = np.stack(np.meshgrid(*([grid] * len(S)), indexing="ij"), axis=-1)
    e = np.exp(alpha[idx] - beta[idx] * mesh)
    rev = (e * mesh).sum(axis=-1) / (1.0 + e.sum(axis=-1))
    return max(float(np.abs(np.diff(rev, axis=a)).max(initial=0.0)) for a in range(len(S)))


@_timed
def check_oracle(instances: int = 50, grid_size: int = 41, seed: int = 0,
                 identity_tolerance: float = 1e-6) -> SuiteReport:
    """Structural solver against exhaustive grid search, plus the price-minus-revenue identity."""
    rng = np.random.default_rng(seed)
    failures, worst_gap, worst_identity, checked = [], -math.inf, 0.0, 0
    for i in range(instances):
        spec = EnvironmentSpec(d=int(rng.integers(1, 4)), N=int(rng.integers(1, 7)), K=int(rng.integers(1, 3)),
                               W=1.0, L0=float(rng.uniform(0.3, 0.6)), seed=int(rng.integers(2**31)))
        catalog, params, const = generate_environment(spec)
        grid = np.linspace(0.0, const.P, grid_size)
        alpha, beta = params.alpha(catalog), params.beta(catalog)
        sol = best_joint_assortment_pricing(alpha, beta, spec.K, const.P)
        brute = brute_force_joint(params, catalog, spec.K, grid)
        tol = max(_adjacent_grid_gap(alpha, beta, sol.assortment, grid),
                  _adjacent_grid_gap(alpha, beta, brute.assortment, grid))
        gap = abs(sol.revenue - brute.revenue)
        worst_gap = max(worst_gap, gap - tol)
        bad = {}
        if gap > tol:
            bad["revenue_gap"] = gap
            bad["tolerance"] = tol
        for item, p in zip(sol.assortment, sol.prices):
            if 0.0 < p < const.P:
                checked += 1
                resid = abs(p - sol.revenue - 1.0 / beta[item - 1])
                worst_identity = max(worst_identity, resid)
                if resid > identity_tolerance:
                    bad.setdefault("identity_residuals", []).append({"item": item, "residual": resid})
        if bad:
            failures.append({"instance": i, "spec": spec.to_dict(), "structural": sol.to_dict(),
                             "brute_force": brute.to_dict(), **bad})
    stats = {"instances": instances, "grid_size": grid_size, "worst_gap_minus_tolerance": worst_gap,
             "identity_checks": checked, "worst_identity_residual": worst_identity}
    return SuiteReport("oracle", not failures, stats, failures)


# --- perturbation --------------------------------------------------------------

@_timed
def check_perturbation(tuples: int = 1000, seed: int = 0, slack: float = 1e-9, max_size: int = 4) -> SuiteReport:
    """The first-order revenue perturbation inequality on random tuples with ``||u' - u||_inf <= 1``."""
    rng = np.random.default_rng(seed)
    failures, worst = [], -math.inf
    for i in range(tuples):
        k = int(rng.integers(1, max_size + 1))
        P = float(rng.uniform(0.5, 10.0))
        p = rng.uniform(0.0, P, k)
        u = rng.uniform(-5.0, 5.0, k)
        u_new = u + rng.uniform(-1.0, 1.0, k)
        gap, bound = perturbation_bound(u, u_new, p, P)
        worst = max(worst, gap - bound)
        if gap > bound + slack:
            failures.append({"tuple": i, "P": P, "prices": p.tolist(), "u": u.tolist(), "u_new": u_new.tolist(),
                             "gap": gap, "bound": bound})
    stats = {"tuples": tuples, "violations": len(failures), "max_gap_minus_bound": worst}
    return SuiteReport("perturbation", not failures, stats, failures)


# --- offline scaling -----------------------------------------------------------

def offline_suboptimality(sizes=(250, 4000), seeds: int = 20, delta: float = 0.1, lam: float = 1e-6,
                          master_seed: int = 7) -> dict[int, list[float]]:
    world = World.generate(reference_spec())
    out = {}
    for j, n in enumerate(sizes):
        subs = []
        for s in range(seeds):
            data = generate_offline_dataset(world, BehaviorPolicy(), n, derive_rng(master_seed, j, s))
            problem = OfflineProblem(data, world.catalog, world.K, world.grid, delta, lam, world.W)
            subs.append(suboptimality(run_lcb(problem), world.params, problem))
        out[n] = subs
    return out


@_timed
def check_offline_scaling(small: int = 250, large: int = 4000, seeds: int = 20, ratio: float = 0.55) -> SuiteReport:
    subs = offline_suboptimality((small, large), seeds)
    m_small, m_large = float(np.median(subs[small])), float(np.median(subs[large]))
    measured = m_large / m_small if m_small > 0 else (0.0 if m_large == 0 else math.inf)
    stats = {"median_small": m_small, "median_large": m_large, "ratio": measured, "required_below": ratio,
             "small_n": small, "large_n": large, "seeds": seeds}
    ok = measured < ratio
    return SuiteReport("offline-scaling", ok, stats, [] if ok else [{"suboptimality": {str(k): v for k, v in subs.items()}}])


# --- elimination safety ------------------------------------------------------

@_timed
def check_elimination(seeds: int = 20, T: int = 2000, required: float = 0.95, master_seed: int = 5) -> SuiteReport:
    """Fraction of elimination rounds in which a grid-optimal action survived every level."""
    world = World.generate(reference_spec())
    config = OnlineConfig(T=T, algorithm="supcb")
    total = kept = 0
    explore = []
    failures = []
    for s in range(seeds):
        trace = simulate(world, config, derive_rng(master_seed, 0, s))
        flags = [r.opt_in_candidates for r in trace.rows if r.opt_in_candidates is not None]
        total += len(flags)
        kept += sum(flags)
        explore.append(int(trace.metadata.get("exploration_rounds", 0)))
        if flags and sum(flags) < len(flags):
            failures.append({"seed": s, "lost_rounds": [r.t for r in trace.rows if r.opt_in_candidates is False]})
    frac = kept / total if total else float("nan")
    stats = {"seeds": seeds, "T": T, "elimination_rounds": total, "fraction_safe": frac, "required": required,
             "median_exploration_rounds": float(np.median(explore))}
    if total == 0:
        failures.append({"reason": "exploration never completed, so no elimination step ran"})
    return SuiteReport("elimination", total > 0 and frac >= required, stats, failures)


# --- online regret -------------------------------------------------------------

def regret_curves(algorithm: str, T: int = 5000, seeds: int = 10, master_seed: int = 6,
                  run_index: int = 0) -> np.ndarray:
    """Cumulative regret curves, one row per seed, on the reference world."""
    world = World.generate(reference_spec())
    config = OnlineConfig(T=T, algorithm=algorithm)
    return np.stack([simulate(world, config, derive_rng(master_seed, run_index, s)).cumulative
                     for s in range(seeds)])


def sublinearity_report(algorithm: str, curves: np.ndarray, baseline: np.ndarray, factor: float = 3.0,
                        growth: float = 2.6) -> SuiteReport:
    T = curves.shape[1]
    mean = curves.mean(axis=0)
    base = float(baseline.mean(axis=0)[-1])
    final, quarter = float(mean[-1]), float(mean[T // 4 - 1])
    ratio_base = base / final if final > 0 else math.inf
    ratio_growth = final / quarter if quarter > 0 else math.inf
    stats = {"algorithm": algorithm, "mean_regret_T": final, "mean_regret_T/4": quarter,
             "uniform_regret_T": base, "improvement_over_uniform": ratio_base, "growth_T_over_T/4": ratio_growth}
    ok_a, ok_b = ratio_base >= factor, ratio_growth <= growth
    failures = []
    if not ok_a:
        failures.append({"check": "baseline", "ratio": ratio_base, "required": factor})
    if not ok_b:
        failures.append({"check": "growth", "ratio": ratio_growth, "required": growth})
    return SuiteReport(f"sublinearity-{algorithm}", ok_a and ok_b, stats, failures)


# --- determinism ---------------------------------------------------------------

@_timed
def check_determinism(T: int = 300, seeds=(0, 1)) -> SuiteReport:
    """Two independent runs of the same experiment produce byte-identical files."""
    runs = tuple(RunSpec(a, a, OnlineConfig(T=T, algorithm=a)) for a in ("supcb", "ts", "ucb_mle", "uniform"))
    runs += (RunSpec("offline", "lcb", None, {"n": 200}),)
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            spec = ExperimentSpec(reference_spec(), runs, tuple(seeds), str(Path(tmp) / f"run{k}"))
            run_experiment(spec, workers=1)
            blobs.append({p.name: p.read_bytes() for p in sorted(Path(spec.output_dir).iterdir())})
    differing = sorted(name for name in blobs[0] if blobs[0][name] != blobs[1].get(name))
    stats = {"files": len(blobs[0]), "differing": len(differing), "T": T}
    ok = not differing and blobs[0].keys() == blobs[1].keys()
    return SuiteReport("determinism", ok, stats, [{"files": differing}] if differing else [])


RUNNERS: dict[str, Callable[[], SuiteReport]] = {
    "gradients": check_derivatives,
    "coverage": check_coverage,
    "oracle": check_oracle,
    "perturbation": check_perturbation,
    "elimination": check_elimination,
}


def validate(suite: str, failures_dir: str | Path | None = None) -> SuiteReport:
    """Run one named suite; failing cases go to ``failures_dir/<suite>_failures.json``."""
    if suite not in RUNNERS:
        raise ValueError(f"suite must be one of {SUITES}, got {suite!r}")
    report = RUNNERS[suite]()
    if not report.passed and failures_dir is not None:
        path = Path(failures_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"{suite}_failures.json").write_text(json.dumps(report.to_dict(), indent=2, default=float) + "\n")
    return report
