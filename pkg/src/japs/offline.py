"""Pessimistic joint assortment and pricing from a fixed transaction log."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimation import (
    ConfidenceSpec,
    Dataset,
    EstimationError,
    FitConfig,
    FitResult,
    burn_in_satisfied,
    confidence_width,
    fit_mle,
)
from .mnl import Action, ItemCatalog, ModelParams, augmented_rows, choice_probabilities, expected_revenue
from .oracle import UtilityTable, brute_force_joint, maximize_revenue_over_grid

DEFAULT_LAMBDA = 1e-6


@dataclass(frozen=True, eq=False)
class OfflineProblem:
    dataset: Dataset
    target_catalog: ItemCatalog
    K: int
    price_grid: np.ndarray
    delta: float = 0.1
    lam: float = DEFAULT_LAMBDA
    W: float = 1.0

    def __post_init__(self) -> None:
        grid = np.array(self.price_grid, dtype=float).reshape(-1)
        if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
            raise ValueError("price grid must be nonempty, nonnegative and strictly ascending")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        grid.setflags(write=False)
        object.__setattr__(self, "price_grid", grid)

    @property
    def confidence(self) -> ConfidenceSpec:
        return ConfidenceSpec(self.delta, self.target_catalog.N, self.W, use_hat_hessian_inflation=True)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "OfflineProblem":
        data = doc["dataset"]
        if isinstance(data, str):
            data = Dataset.from_jsonl((Path(base_dir) / data).read_text())
        else:
            data = Dataset.from_jsonl("\n".join(json.dumps(r) for r in data))
        return cls(
            dataset=data,
            target_catalog=ItemCatalog.from_dict(doc["target_catalog"]),
            K=int(doc["K"]),
            price_grid=np.asarray(doc["price_grid"], dtype=float),
            delta=float(doc.get("delta", 0.1)),
            lam=float(doc.get("lambda", DEFAULT_LAMBDA)),
            W=float(doc.get("W", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class OfflineResult:
    action: Action
    pessimistic_revenue: float
    fit: FitResult
    burn_in: bool
    burn_in_worst_norm: float
    widths: UtilityTable

    def to_dict(self, emit_widths: bool = False) -> dict:
        doc = {
            "assortment": list(self.action.assortment),
            "prices": list(self.action.prices),
            "pessimistic_revenue": self.pessimistic_revenue,
            "theta_hat": self.fit.theta_hat.tolist(),
            "converged": self.fit.converged,
            "iterations": self.fit.iterations,
            "final_gradient_norm": self.fit.final_gradient_norm,
            "lambda": self.fit.lam,
            "burn_in": self.burn_in,
            "burn_in_worst_norm": self.burn_in_worst_norm,
        }
        if emit_widths:
            doc["widths"] = {"grid": self.widths.grid.tolist(), "values": self.widths.values.tolist()}
        return doc


def _width_table(fit: FitResult, problem: OfflineProblem) -> tuple[np.ndarray, np.ndarray]:
    X = problem.target_catalog.augmented_table(problem.price_grid)
    plug_in = X @ fit.theta_hat
    widths = confidence_width(X, fit, problem.confidence)
    return plug_in, np.asarray(widths)


def lcb_utilities(fit: FitResult, problem: OfflineProblem) -> UtilityTable:
    """Plug-in utility minus confidence width for every (item, grid price) cell."""
    plug_in, widths = _width_table(fit, problem)
    return UtilityTable(problem.price_grid, plug_in - widths)


def run_lcb(problem: OfflineProblem, config: FitConfig | None = None) -> OfflineResult:
    config = config or FitConfig(lam=problem.lam)
    fit = fit_mle(problem.dataset, config)
    plug_in, widths = _width_table(fit, problem)
    table = UtilityTable(problem.price_grid, plug_in - widths)
    ok, worst = (True, 0.0)
    if len(problem.dataset):
        ok, worst = burn_in_satisfied(problem.dataset, fit.hessian_at_hat, problem.target_catalog.d,
                                      problem.target_catalog.N, problem.delta, fit.lam, problem.W)
    sol = maximize_revenue_over_grid(table, prices_from_grid=True, K=problem.K)
    return OfflineResult(sol.action, sol.revenue, fit, ok, worst, UtilityTable(problem.price_grid, widths))


def suboptimality(result: OfflineResult, truth: ModelParams, problem: OfflineProblem) -> float:
    """Grid-optimal true revenue minus the true revenue of the returned action."""
    best = brute_force_joint(truth, problem.target_catalog, problem.K, problem.price_grid)
    return best.revenue - expected_revenue(truth, problem.target_catalog, result.action)


def local_coverage_term(truth: ModelParams, problem: OfflineProblem, hessian_at_truth: np.ndarray) -> float:
    """Information-weighted coverage ``sum_j q_j q_0 ||xtilde_j(p_j)||^2_{H^-1}`` at the grid optimum."""
    H = np.asarray(hessian_at_truth, dtype=float)
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) >= 1e12:
        raise EstimationError("Hessian at the true parameter is singular")
    best = brute_force_joint(truth, problem.target_catalog, problem.K, problem.price_grid)
    if not best.assortment:
        return 0.0
    act = best.action
    rows = augmented_rows(problem.target_catalog, act)
    q = choice_probabilities(truth, problem.target_catalog, act)
    norms = np.einsum("ij,jk,ik->i", rows, np.linalg.inv(H), rows)
    return float(np.sum(q[1:] * q[0] * norms))
