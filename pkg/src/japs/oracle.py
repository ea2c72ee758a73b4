"""Revenue maximization given utilities.

Four solvers: exhaustive assortment search at fixed prices, the structural
joint solver for linear-in-price utilities, exact maximization over a
discretized action set described by a utility table, and a brute-force
ground truth used for benchmarking.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .mnl import (
    Action,
    ItemCatalog,
    ModelError,
    ModelParams,
    UTILITY_CLAMP,
    expected_revenue,
    revenue_from_utilities,
)

ENUMERATION_CAP = 20
ACTION_SPACE_CAP = 2_000_000


class OracleError(ValueError):
    """Raised when a solver's preconditions fail."""


@dataclass(frozen=True, eq=False)
class UtilityTable:
    """Utilities of every item at every grid price, shape ``(N, G)``."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if grid.size == 0:
            raise OracleError("price grid is empty")
        if np.any(np.diff(grid) <= 0):
            raise OracleError("price grid must be strictly ascending")
        if grid[0] < 0:
            raise OracleError("grid prices must be nonnegative")
        if values.ndim != 2 or values.shape[1] != grid.size:
            raise OracleError(f"values must have shape (N, {grid.size}), got {values.shape}")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return self.values.shape[0]


def utility_table(params: ModelParams, catalog: ItemCatalog, grid: Sequence[float]) -> UtilityTable:
    grid = np.asarray(grid, dtype=float)
    values = np.outer(params.alpha(catalog), np.ones(grid.size)) - np.outer(params.beta(catalog), grid)
    return UtilityTable(grid, values)


@dataclass(frozen=True)
class OracleSolution:
    assortment: tuple[int, ...]
    prices: tuple[float, ...]
    revenue: float
    method: str

    @property
    def action(self) -> Action:
        return Action(self.assortment, self.prices)

    def to_dict(self) -> dict:
        return {
            "assortment": list(self.assortment),
            "prices": list(self.prices),
            "revenue": self.revenue,
            "method": self.method,
        }


def _assortments(N: int, K: int, include_empty: bool = True) -> Iterable[tuple[int, ...]]:
    """All subsets of ``1..N`` of size at most K, in lexicographic order."""
    sets = [c for k in range(0 if include_empty else 1, min(K, N) + 1)
            for c in itertools.combinations(range(1, N + 1), k)]
    return sorted(sets)


def count_actions(N: int, K: int, G: int, shared_price: bool = False) -> int:
    return sum(math.comb(N, k) * (G if shared_price and k else G ** k) for k in range(min(K, N) + 1))


def best_assortment_fixed_prices(utilities: Sequence[float], revenues: Sequence[float], K: int,
                                 cap: int = ENUMERATION_CAP) -> OracleSolution:
    """Exhaustive search over assortments of size at most K with per-item revenues fixed."""
    u = np.asarray(utilities, dtype=float)
    r = np.asarray(revenues, dtype=float)
    N = u.size
    if r.size != N:
        raise OracleError("utilities and revenues differ in length")
    if N > cap:
        raise OracleError(f"N={N} exceeds the enumeration cap {cap}; exhaustive search is unsafe")
    if K < 1:
        raise OracleError("K must be at least 1")
    best, best_rev = (), 0.0
    for S in _assortments(N, K, include_empty=False):
        idx = np.asarray(S) - 1
        rev = revenue_from_utilities(u[idx], r[idx])
        if rev > best_rev:
            best, best_rev = S, rev
    return OracleSolution(best, tuple(float(r[i - 1]) for i in best), float(best_rev), "structural")


def _structural_scores(R: float, alpha: np.ndarray, beta: np.ndarray, P: float):
    p = np.clip(R + 1.0 / beta, 0.0, P)
    u = np.clip(alpha - beta * p, -UTILITY_CLAMP, UTILITY_CLAMP)
    return p, (p - R) * np.exp(u)


def _top_k(scores: np.ndarray, K: int) -> np.ndarray:
    order = np.lexsort((np.arange(scores.size), -scores))
    top = order[:K]
    return np.sort(top[scores[top] > 0])


def structural_root_function(R: float, alpha: Sequence[float], beta: Sequence[float], K: int,
                             P: float) -> float:
    """Sum of the K largest positive scores at level R, minus R; strictly decreasing in R."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    _, s = _structural_scores(R, alpha, beta, P)
    return float(s[_top_k(s, K)].sum() - R)


def best_joint_assortment_pricing(alpha: Sequence[float], beta: Sequence[float], K: int, P: float,
                                  tol: float = 1e-13) -> OracleSolution:
    """Optimal assortment and continuous prices in ``[0, P]`` for ``u_i = alpha_i - beta_i p_i``.

    At revenue level R each item's best price is ``clip(R + 1/beta_i, 0, P)``
    (its score ``(p - R) e^{u_i(p)}`` is unimodal in p); the optimal revenue is
    the fixed point R of the top-K score sum, found by bisection.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.shape != beta.shape or alpha.ndim != 1:
        raise OracleError("alpha and beta must be vectors of equal length")
    if np.any(beta <= 0):
        raise OracleError(f"all price sensitivities must be positive, got min {beta.min():.6g}")
    if K < 1:
        raise OracleError("K must be at least 1")
    if P <= 0:
        return OracleSolution((), (), 0.0, "structural")
    lo, hi = 0.0, float(P)
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if structural_root_function(mid, alpha, beta, K, P) > 0:
            lo = mid
        else:
            hi = mid
    R = 0.5 * (lo + hi)
    p, s = _structural_scores(R, alpha, beta, P)
    chosen = _top_k(s, K)
    prices = p[chosen]
    u = alpha[chosen] - beta[chosen] * prices
    rev = revenue_from_utilities(u, prices) if chosen.size else 0.0
    return OracleSolution(tuple(int(i) + 1 for i in chosen), tuple(float(x) for x in prices),
                          float(rev), "structural")


class ActionGrid:
    """Explicit enumeration of a discretized action set.

    Candidate ``m`` offers items ``items[m, :size[m]]`` (0-based) at grid
    indices ``gidx[m, :size[m]]``. Candidates are stored in lexicographic
    order of (assortment, grid indices) so a first-occurrence argmax gives
    the deterministic tie-break.
    """

    def __init__(self, items: np.ndarray, gidx: np.ndarray, mask: np.ndarray, grid: np.ndarray):
        self.items = items
        self.gidx = gidx
        self.mask = mask
        self.grid = np.asarray(grid, dtype=float)

    def __len__(self) -> int:
        return self.items.shape[0]

    @classmethod
    def build(cls, N: int, K: int, grid: Sequence[float], shared_price: bool = False,
              include_empty: bool = True, cap: int = ACTION_SPACE_CAP,
              assortments: Sequence[Sequence[int]] | None = None) -> "ActionGrid":
        grid = np.asarray(grid, dtype=float)
        G = grid.size
        if assortments is None:
            total = count_actions(N, K, G, shared_price) - (0 if include_empty else 1)
            if total > cap:
                raise OracleError(f"discretized action space has {total} candidates, above the cap {cap}")
            sets = _assortments(N, K, include_empty)
        else:
            sets = sorted(tuple(sorted(S)) for S in assortments)
            total = sum(G if (shared_price and S) else G ** len(S) for S in sets)
            if total > cap:
                raise OracleError(f"discretized action space has {total} candidates, above the cap {cap}")
        width = max((len(S) for S in sets), default=0) or 1
        items_rows, g_rows = [], []
        for S in sets:
            k = len(S)
            if k == 0:
                combos = np.zeros((1, 0), dtype=int)
            elif shared_price:
                combos = np.repeat(np.arange(G)[:, None], k, axis=1)
            else:
                combos = np.array(list(itertools.product(range(G), repeat=k)), dtype=int)
            pad = np.zeros((combos.shape[0], width - k), dtype=int)
            g_rows.append(np.hstack([combos, pad - 1]))
            it = np.array(S, dtype=int) - 1
            items_rows.append(np.hstack([np.broadcast_to(it, (combos.shape[0], k)), pad - 1]))
        items = np.vstack(items_rows) if items_rows else np.zeros((0, width), int)
        gidx = np.vstack(g_rows) if g_rows else np.zeros((0, width), int)
        return cls(items, gidx, items >= 0, grid)

    def subset(self, keep: np.ndarray) -> "ActionGrid":
        return ActionGrid(self.items[keep], self.gidx[keep], self.mask[keep], self.grid)

    def gather(self, table: np.ndarray) -> np.ndarray:
        """Per-candidate values of an ``(N, G)`` table; padded slots get 0."""
        vals = np.asarray(table)[np.maximum(self.items, 0), np.maximum(self.gidx, 0)]
        return np.where(self.mask, vals, 0.0)

    def prices(self) -> np.ndarray:
        return np.where(self.mask, self.grid[np.maximum(self.gidx, 0)], 0.0)

    def probabilities(self, utilities: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(q_0 per candidate, q per slot) for an ``(N, G)`` utility table."""
        u = np.clip(self.gather(utilities), -UTILITY_CLAMP, UTILITY_CLAMP)
        e = np.where(self.mask, np.exp(u), 0.0)
        z = 1.0 + e.sum(axis=1)
        return 1.0 / z, e / z[:, None]

    def revenues(self, utilities: np.ndarray) -> np.ndarray:
        _, q = self.probabilities(utilities)
        return (q * self.prices()).sum(axis=1)

    def action(self, m: int) -> Action:
        sel = self.mask[m]
        return Action(tuple(int(i) + 1 for i in self.items[m, sel]),
                      tuple(float(p) for p in self.grid[self.gidx[m, sel]]))

    def find(self, action: Action) -> int:
        """Index of the candidate equal to ``action`` (prices matched to grid points), or -1."""
        target_items = np.full(self.items.shape[1], -1)
        target_g = np.full(self.items.shape[1], -1)
        k = len(action)
        if k > self.items.shape[1]:
            return -1
        target_items[:k] = action.columns()
        for j, p in enumerate(action.prices):
            hit = np.flatnonzero(np.isclose(self.grid, p, rtol=0, atol=1e-12))
            if hit.size == 0:
                return -1
            target_g[j] = hit[0]
        rows = np.flatnonzero(np.all(self.items == target_items, axis=1)
                              & np.all(self.gidx == target_g, axis=1))
        return int(rows[0]) if rows.size else -1


def maximize_revenue_over_grid(table: UtilityTable, prices_from_grid: bool = True, K: int = 1,
                               cap: int = ACTION_SPACE_CAP) -> OracleSolution:
    """Exact maximizer of the MNL revenue over a discretized action set.

    With ``prices_from_grid`` every offered item takes any grid price
    independently; otherwise all offered items share one grid price.
    """
    if K < 1:
        raise OracleError("K must be at least 1")
    cands = ActionGrid.build(table.N, K, table.grid, shared_price=not prices_from_grid, cap=cap)
    rev = cands.revenues(table.values)
    m = int(np.argmax(rev))
    act = cands.action(m)
    return OracleSolution(act.assortment, act.prices, float(rev[m]), "grid")


def brute_force_joint(params: ModelParams, catalog: ItemCatalog, K: int, grid: Sequence[float],
                      cap: int = ACTION_SPACE_CAP) -> OracleSolution:
    """Exhaustive search over assortments of size at most K and all grid price vectors."""
    grid = np.asarray(grid, dtype=float)
    total = count_actions(catalog.N, K, grid.size)
    if total > cap:
        raise OracleError(f"brute force needs {total} evaluations, above the cap {cap}")
    alpha, beta = params.alpha(catalog), params.beta(catalog)
    best, best_rev = Action.empty(), 0.0
    for S in _assortments(catalog.N, K, include_empty=False):
        idx = np.asarray(S) - 1
        mesh = np.stack(np.meshgrid(*([grid] * len(S)), indexing="ij"), axis=-1).reshape(-1, len(S))
        u = np.clip(alpha[idx] - beta[idx] * mesh, -UTILITY_CLAMP, UTILITY_CLAMP)
        e = np.exp(u)
        rev = (e * mesh).sum(axis=1) / (1.0 + e.sum(axis=1))
        j = int(np.argmax(rev))
        if rev[j] > best_rev:
            best_rev = float(rev[j])
            best = Action(S, tuple(float(p) for p in mesh[j]))
    if best_rev > 0:
        best_rev = expected_revenue(params, catalog, best)
    return OracleSolution(best.assortment, best.prices, float(best_rev), "brute_force")


def perturbation_bound(u: Sequence[float], u_new: Sequence[float], prices: Sequence[float],
                       P: float) -> tuple[float, float]:
    """Return ``(|R(u') - R(u)|, bound)`` for the first-order revenue perturbation inequality.

    The bound is ``sqrt(sum e^{u_j} (p_j - R)^2) * sqrt(sum q_j q_0 w_j^2) + 1.5 P max w_j^2``
    with ``w = |u' - u|`` and ``R, q`` evaluated at ``u``.
    """
    u = np.asarray(u, dtype=float)
    u_new = np.asarray(u_new, dtype=float)
    p = np.asarray(prices, dtype=float)
    if u.size == 0:
        return 0.0, 0.0
    q = _probs(u)
    R = float(q[1:] @ p)
    w = np.abs(u_new - u)
    gap = abs(float(_probs(u_new)[1:] @ p) - R)
    bound = (math.sqrt(float(np.exp(u) @ (p - R) ** 2)) * math.sqrt(float((q[1:] * q[0]) @ w ** 2))
             + 1.5 * P * float(np.max(w ** 2)))
    return gap, bound


def _probs(u: np.ndarray) -> np.ndarray:
    # unclamped variant: the inequality is checked exactly as stated
    m = max(0.0, float(u.max()))
    e = np.exp(u - m)
    z = math.exp(-m) + e.sum()
    return np.concatenate([[math.exp(-m) / z], e / z])


def check_price_floor(solution: OracleSolution, slack: float = 1e-9) -> bool:
    """True when every offered price is at least the solution's revenue."""
    return all(p >= solution.revenue - slack for p in solution.prices)

