"""Phased elimination learner with sample-split bins.

Rounds are routed to bins ``1..J+1`` (plus bin 0 for exploitation rounds,
which feed no estimator). A rough estimate ``theta0`` fit on the last bin
fixes the curvature used for every uncertainty computation, so data in
bins ``1..J`` stay conditionally independent of the decisions that use them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..environment import World
from ..estimation import (
    CONFIDENCE_CONSTANT,
    HAT_INFLATION,
    DesignBuilder,
    FitConfig,
    FitResult,
    fit_mle,
    likelihood_derivatives,
)
from ..mnl import Action, ItemCatalog, augmented_rows, kappa_lower_bound
from ..oracle import ActionGrid
from .config import ConfigError, OnlineConfig
from .market import Market
from .trace import RegretTrace

OPT_TOLERANCE = 1e-12


def num_levels(T: int) -> int:
    """Number of elimination levels ``ceil(log2(T) / 2)``."""
    return max(0, math.ceil(0.5 * math.log2(T))) if T > 1 else 0


def assortment_uncertainty(w: np.ndarray, q0: np.ndarray, q: np.ndarray, P: float) -> np.ndarray:
    """Revenue uncertainty of candidate actions from per-slot item widths.

    ``w`` and ``q`` are ``(M, k)`` with zeros in unused slots, ``q0`` is ``(M,)``.
    """
    w = np.asarray(w, dtype=float)
    first = 4.0 * math.e ** 2 * P * np.sqrt(2.0 * np.sum(q * q0[:, None] * w ** 2, axis=1))
    return first + 20.0 * P * np.max(w ** 2, axis=1, initial=0.0)


@dataclass
class SupCBState:
    J: int
    dim: int
    lam: float
    kappa: float
    multiplier: float
    P: float
    width_scale: float = 1.0
    bins: list[list[int]] = field(default_factory=list)
    V: list[np.ndarray] = field(default_factory=list)
    builders: list[DesignBuilder] = field(default_factory=list)
    theta0: np.ndarray | None = None
    exploration_complete: bool = False
    _fits: dict = field(default_factory=dict, repr=False)
    _hess0: dict = field(default_factory=dict, repr=False)

    @classmethod
    def empty(cls, J: int, dim: int, lam: float, kappa: float, multiplier: float, P: float,
              width_scale: float = 1.0) -> "SupCBState":
        n = J + 2
        return cls(J, dim, lam, kappa, multiplier, P, width_scale, [[] for _ in range(n)],
                   [np.zeros((dim, dim)) for _ in range(n)], [DesignBuilder(dim) for _ in range(n)])

    def record(self, ell: int, t: int, rows: np.ndarray, position: int) -> None:
        """Route round ``t`` to bin ``ell``; bin 0 is never used for estimation."""
        self.bins[ell].append(t)
        if ell == 0:
            return
        self.V[ell] += rows.T @ rows
        self.builders[ell].add(rows, position)
        self._fits.pop(ell, None)
        self._hess0.pop(ell, None)

    def bin_fit(self, ell: int) -> FitResult:
        if ell not in self._fits:
            self._fits[ell] = fit_mle(self.builders[ell].build(), FitConfig(lam=self.lam))
        return self._fits[ell]

    def bin_hessian_inverse(self, ell: int) -> np.ndarray:
        """Inverse of the ridge-regularized bin Hessian evaluated at ``theta0``."""
        if ell not in self._hess0:
            H = likelihood_derivatives(self.theta0, self.builders[ell].build(), self.lam)[1]
            self._hess0[ell] = np.linalg.inv(H)
        return self._hess0[ell]

    def item_widths(self, ell: int, augmented: np.ndarray) -> np.ndarray:
        """Item-level widths for augmented features stacked along the last axis."""
        Hinv = self.bin_hessian_inverse(ell)
        norms = np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", augmented, Hinv, augmented), 0.0))
        return self.width_scale * self.multiplier * norms

    def exploration_norm(self, ell: int, augmented: np.ndarray) -> float:
        """Largest ``||xtilde||`` under ``(kappa V + lam I)^{-1}`` over the supplied features."""
        M = self.kappa * self.V[ell] + self.lam * np.eye(self.dim)
        Minv = np.linalg.inv(M)
        quad = np.einsum("...i,ij,...j->...", augmented, Minv, augmented)
        return float(np.sqrt(np.maximum(quad, 0.0)).max())


def exploration_threshold(d: int, N: int, T: int, lam: float, W: float) -> float:
    first = 1.0 / (144.0 * math.sqrt(2 * d * math.log(N * T)))
    second = math.inf if lam * W == 0 else 1.0 / (24.0 * math.sqrt(lam) * W)
    return min(first, second)


def uncertainty_levels(state: SupCBState, ell: int, action: Action, catalog: ItemCatalog
                       ) -> tuple[np.ndarray, float]:
    """Per-item widths and the assortment-level uncertainty of ``action`` in bin ``ell``."""
    if len(action) == 0:
        return np.zeros(0), 0.0
    rows = augmented_rows(catalog, action)
    w = state.item_widths(ell, rows)
    u = np.clip(rows @ state.theta0, -40.0, 40.0)
    e = np.exp(u)
    z = 1.0 + e.sum()
    W = assortment_uncertainty(w[None, :], np.array([1.0 / z]), (e / z)[None, :], state.P)
    return w, float(W[0])


def _resolve_lambda(world: World, config: OnlineConfig) -> float:
    lam = world.constants.Pbar if config.lam is None else config.lam
    if lam < world.constants.Pbar * (1 - 1e-12):
        raise ConfigError(f"lambda={lam} must be at least the feature norm cap {world.constants.Pbar:.6g}")
    return lam


class _Elimination:
    """Per-round multi-level elimination over an explicit candidate set."""

    def __init__(self, state: SupCBState, candidates: ActionGrid, T: int):
        self.state = state
        self.candidates = candidates
        self.T = T

    def step(self, catalog: ItemCatalog, aug_table: np.ndarray, opt_mask: np.ndarray | None):
        """Return (candidate index, branch, level, optimal pair survived)."""
        st = self.state
        cands = self.candidates
        keep = np.arange(len(cands))
        q0, q = cands.probabilities(aug_table @ st.theta0)
        survived = None if opt_mask is None else bool(opt_mask.any())
        ell = 1
        while True:
            w_table = st.item_widths(ell, aug_table)
            w = np.where(cands.mask[keep], w_table[np.maximum(cands.items[keep], 0),
                                                   np.maximum(cands.gidx[keep], 0)], 0.0)
            W = assortment_uncertainty(w, q0[keep], q[keep], st.P)
            threshold = 2.0 ** (-ell)
            if np.any(W > threshold):
                return int(keep[int(np.argmax(W))]), "bin", ell, survived
            theta = st.bin_fit(ell).theta_hat
            ucb_table = aug_table @ theta + w_table
            sub = cands.subset(keep)
            R = sub.revenues(ucb_table)
            if np.all(W <= 1.0 / math.sqrt(self.T)) or ell >= st.J:
                return int(keep[int(np.argmax(R))]), "exploit", ell, survived
            keep = keep[R >= R.max() - threshold]
            if opt_mask is not None:
                survived = survived and bool(opt_mask[keep].any())
            ell += 1


def run_supcb(world: World, config: OnlineConfig, rng: np.random.Generator) -> RegretTrace:
    """Joint assortment-and-price learner over the discretized action set."""
    if config.mode == "fixed_assortment":
        return run_supcb_fixed_assortment(world, config, rng)
    market = Market(world, config, rng)
    T, grid, N = config.T, market.grid, world.N
    lam = _resolve_lambda(world, config)
    J = num_levels(T)
    D = 2 * world.d
    const = world.constants
    kappa = kappa_lower_bound(world.W, world.K, const.Pbar)
    multiplier = CONFIDENCE_CONSTANT * HAT_INFLATION * (math.sqrt(math.log(N * T)) + math.sqrt(lam) * world.W)
    state = SupCBState.empty(J, D, lam, kappa, multiplier, const.P, config.width_scale)
    candidates = ActionGrid.build(N, world.K, grid, include_empty=False)
    trace = RegretTrace(metadata={"algorithm": "supcb", "J": J, "lambda": lam, "kappa_lb": kappa,
                                  "candidates": len(candidates)})
    trace.state = state

    threshold = exploration_threshold(world.d, N, T, lam, world.W) / config.width_scale
    probe = np.unique(np.concatenate([grid, [0.0, const.P]]))
    t = 0
    violating = list(range(1, J + 2))
    while t < T:
        catalog = market.next_context()
        probe_aug = catalog.augmented_table(probe)
        violating = [ell for ell in violating if state.exploration_norm(ell, probe_aug) > threshold]
        if not violating:
            break
        ell = violating[0]
        M = np.linalg.inv(state.kappa * state.V[ell] + lam * np.eye(D))
        aug = catalog.augmented_table(grid)
        norms = np.einsum("ngi,ij,ngj->ng", aug, M, aug)
        j, g = np.unravel_index(int(np.argmax(norms)), norms.shape)
        action = Action((int(j) + 1,), (float(grid[g]),))
        t += 1
        chosen, regret = market.play(catalog, action)
        state.record(ell, t, augmented_rows(catalog, action), 0 if chosen == 0 else 1)
        trace.append(t, "explore", ell, action, chosen, regret)
    state.exploration_complete = not violating
    trace.metadata["exploration_rounds"] = t
    trace.metadata["exploration_complete"] = state.exploration_complete
    if t >= T:
        return trace

    state.theta0 = fit_mle(state.builders[J + 1].build(), FitConfig(lam=lam)).theta_hat
    elim = _Elimination(state, candidates, T)
    true_table = None
    while t < T:
        t += 1
        catalog = market.next_context()
        aug = catalog.augmented_table(grid)
        if true_table is None or not market.fixed_context:
            true_table = aug @ world.params.theta
            true_rev = candidates.revenues(true_table)
            opt_mask = true_rev >= true_rev.max() - OPT_TOLERANCE
        m, branch, ell, survived = elim.step(catalog, aug, opt_mask)
        action = candidates.action(m)
        chosen, regret = market.play(catalog, action)
        rows = augmented_rows(catalog, action)
        position = 0 if chosen == 0 else action.assortment.index(chosen) + 1
        if branch == "bin":
            state.record(ell, t, rows, position)
            trace.append(t, f"bin-{ell}", ell, action, chosen, regret, survived)
        else:
            state.record(0, t, rows, position)
            trace.append(t, "exploit", 0, action, chosen, regret, survived)
    return trace


def _default_tau(T: int, J: int) -> int:
    return max(1, min(math.ceil(math.sqrt(T)), T // (J + 1) if T >= J + 1 else 1))


def run_supcb_fixed_assortment(world: World, config: OnlineConfig, rng: np.random.Generator) -> RegretTrace:
    """Price-only variant for a fixed assortment with fresh contexts each round."""
    if not config.fixed_assortment:
        raise ConfigError("fixed_assortment mode needs config.fixed_assortment")
    market = Market(world, config, rng)
    S = tuple(config.fixed_assortment)
    T, grid = config.T, market.grid
    lam = _resolve_lambda(world, config)
    J = num_levels(T)
    D = 2 * world.d
    tau = config.tau or _default_tau(T, J)
    multiplier = CONFIDENCE_CONSTANT * HAT_INFLATION * (math.sqrt(math.log(world.K * T))
                                                         + math.sqrt(lam) * world.W)
    kappa = kappa_lower_bound(world.W, world.K, world.constants.Pbar)
    state = SupCBState.empty(J, D, lam, kappa, multiplier, world.constants.P, config.width_scale)
    candidates = ActionGrid.build(world.N, len(S), grid, assortments=[S])
    rng_alg = market.learner_rng
    trace = RegretTrace(metadata={"algorithm": "supcb", "mode": "fixed_assortment", "J": J, "tau": tau,
                                  "lambda": lam, "candidates": len(candidates)})
    trace.state = state

    t = 0
    while t < min(T, (J + 1) * tau):
        t += 1
        catalog = market.next_context()
        prices = tuple(float(p) for p in rng_alg.choice(grid, size=len(S)))
        action = Action(S, prices)
        ell = math.ceil(t / tau)
        chosen, regret = market.play(catalog, action)
        position = 0 if chosen == 0 else S.index(chosen) + 1
        state.record(ell, t, augmented_rows(catalog, action), position)
        trace.append(t, "explore", ell, action, chosen, regret)
    state.exploration_complete = t >= (J + 1) * tau
    trace.metadata["exploration_rounds"] = t
    if t >= T:
        return trace

    state.theta0 = fit_mle(state.builders[J + 1].build(), FitConfig(lam=lam)).theta_hat
    elim = _Elimination(state, candidates, T)
    while t < T:
        t += 1
        catalog = market.next_context()
        aug = catalog.augmented_table(grid)
        true_rev = candidates.revenues(aug @ world.params.theta)
        opt_mask = true_rev >= true_rev.max() - OPT_TOLERANCE
        m, branch, ell, survived = elim.step(catalog, aug, opt_mask)
        action = candidates.action(m)
        chosen, regret = market.play(catalog, action)
        rows = augmented_rows(catalog, action)
        position = 0 if chosen == 0 else S.index(chosen) + 1
        target = ell if branch == "bin" else 0
        state.record(target, t, rows, position)
        trace.append(t, f"bin-{ell}" if branch == "bin" else "exploit", target, action, chosen, regret,
                     survived)
    return trace
