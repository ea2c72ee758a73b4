"""Optimistic learner built on the norm-constrained MLE and a likelihood-ratio radius."""

from __future__ import annotations

import math

import numpy as np

from ..environment import World
from ..estimation import DesignBuilder, FitConfig, fit_mle, inverse_norms, likelihood_derivatives, sequential_radius
from ..mnl import augmented_rows
from ..oracle import ActionGrid, UtilityTable, maximize_revenue_over_grid
from .config import OnlineConfig
from .market import Market
from .trace import RegretTrace


def optimism_multiplier(t: int, d: int, W: float, Pbar: float, C: float, T: int) -> float:
    """``gamma_t = sqrt(2 * radius_t + 1)``."""
    return math.sqrt(2.0 * sequential_radius(t, d, W, Pbar, C, T) + 1.0)


def run_ucb_mle(world: World, config: OnlineConfig, rng: np.random.Generator) -> RegretTrace:
    market = Market(world, config, rng)
    grid = market.grid
    D = 2 * world.d
    floor = 1.0 / (8.0 * world.W ** 2) if config.ucb_lambda is None else config.ucb_lambda
    builder = DesignBuilder(D)
    theta = np.zeros(D)
    fit_cfg = FitConfig(lam=0.0, norm_cap=world.W)
    fixed = config.fixed_assortment if config.mode == "fixed_assortment" else None
    cands = ActionGrid.build(world.N, len(fixed), grid, assortments=[fixed]) if fixed else None
    trace = RegretTrace(metadata={"algorithm": "ucb_mle", "hessian_floor": floor})
    unconverged = optimistic = 0
    bench = market.benchmark
    for t in range(1, config.T + 1):
        catalog = market.next_context()
        design = builder.build()
        if design.n_groups:
            fit = fit_mle(design, fit_cfg, theta0=theta)
            theta = np.array(fit.theta_hat)
            unconverged += not fit.converged
        H = likelihood_derivatives(theta, design, floor)[1]
        gamma = optimism_multiplier(t, world.d, world.W, world.constants.Pbar, config.C_seq, config.T)
        aug = catalog.augmented_table(grid)
        ucb = aug @ theta + config.width_scale * gamma * inverse_norms(aug, np.linalg.inv(H))
        if cands is not None:
            action = cands.action(int(np.argmax(cands.revenues(ucb))))
        else:
            action = maximize_revenue_over_grid(UtilityTable(grid, ucb), True, world.K).action
        # optimism audit: UCB revenue of the true grid optimum against its true revenue
        true_rev = bench.revenues(aug @ world.params.theta)
        best = int(np.argmax(true_rev))
        optimistic += bool(bench.revenues(ucb)[best] >= true_rev[best] - 1e-12)
        chosen, regret = market.play(catalog, action)
        if len(action):
            position = 0 if chosen == 0 else action.assortment.index(chosen) + 1
            builder.add(augmented_rows(catalog, action), position)
        trace.append(t, "exploit", None, action, chosen, regret)
    trace.metadata["unconverged_fits"] = unconverged
    trace.metadata["optimistic_rounds"] = optimistic
    return trace
