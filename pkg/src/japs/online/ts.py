"""Posterior sampling learner with a random-walk Metropolis sampler."""

from __future__ import annotations

import math

import numpy as np

from ..environment import World
from ..estimation import Design, DesignBuilder, likelihood_derivatives, neg_log_likelihood
from ..mnl import Action, ModelParams, augmented_rows
from ..oracle import ActionGrid, UtilityTable, best_joint_assortment_pricing, maximize_revenue_over_grid
from .config import OnlineConfig
from .market import Market
from .trace import RegretTrace

ACCEPTANCE_BAND = (0.05, 0.95)


def posterior_log_density(theta, design: Design, W: float) -> float:
    """Unnormalized log posterior: uniform prior on the W-ball times the MNL likelihood."""
    theta = np.asarray(theta, dtype=float)
    if float(theta @ theta) > W * W:
        return -math.inf
    return -neg_log_likelihood(theta, design)


def uniform_ball(rng: np.random.Generator, dim: int, W: float) -> np.ndarray:
    z = rng.normal(size=dim)
    z /= max(np.linalg.norm(z), 1e-300)
    return z * W * rng.random() ** (1.0 / dim)


def snap_to_grid(prices, grid: np.ndarray) -> tuple[float, ...]:
    grid = np.asarray(grid, dtype=float)
    idx = np.abs(np.asarray(prices, dtype=float)[:, None] - grid[None, :]).argmin(axis=1)
    return tuple(float(grid[i]) for i in idx)


class MetropolisSampler:
    """Preconditioned random-walk Metropolis chain whose state persists across rounds."""

    def __init__(self, dim: int, W: float, rng: np.random.Generator, scale: float | None = None,
                 window: int = 500):
        self.dim = dim
        self.W = W
        self.rng = rng
        self.scale = 1.6 / math.sqrt(dim) if scale is None else scale
        self.window = window
        self.state = uniform_ball(rng, dim, W)
        self._accepted = 0
        self._proposed = 0
        self.warnings: list[dict] = []

    def run(self, design: Design, steps: int, t: int) -> np.ndarray:
        H = likelihood_derivatives(self.state, design)[1] + np.eye(self.dim) / self.W ** 2
        chol = np.linalg.cholesky(np.linalg.inv(H))
        current = posterior_log_density(self.state, design, self.W)
        for _ in range(steps):
            proposal = self.state + self.scale * chol @ self.rng.normal(size=self.dim)
            value = posterior_log_density(proposal, design, self.W)
            accept = math.log(self.rng.random()) < value - current
            if accept:
                self.state, current = proposal, value
            self._accepted += accept
            self._proposed += 1
            if self._proposed == self.window:
                rate = self._accepted / self._proposed
                if not ACCEPTANCE_BAND[0] <= rate <= ACCEPTANCE_BAND[1]:
                    self.warnings.append({"t": t, "acceptance_rate": rate})
                self._accepted = self._proposed = 0
        return self.state.copy()


def run_ts(world: World, config: OnlineConfig, rng: np.random.Generator) -> RegretTrace:
    market = Market(world, config, rng)
    grid = market.grid
    D = 2 * world.d
    sampler = MetropolisSampler(D, world.W, market.learner_rng, config.mh_proposal_scale, config.mh_window)
    builder = DesignBuilder(D)
    trace = RegretTrace(metadata={"algorithm": "ts"})
    burned_in = False
    for t in range(1, config.T + 1):
        catalog = market.next_context()
        if builder.n_records == 0:
            theta = uniform_ball(market.learner_rng, D, world.W)
        else:
            steps = config.mh_steps + (0 if burned_in else config.mh_burn_in)
            burned_in = True
            theta = sampler.run(builder.build(), steps, t)
        action = _greedy_action(theta, world, catalog, grid, config)
        chosen, regret = market.play(catalog, action)
        if len(action):
            position = 0 if chosen == 0 else action.assortment.index(chosen) + 1
            builder.add(augmented_rows(catalog, action), position)
        trace.append(t, "exploit", None, action, chosen, regret)
    trace.metadata["mh_warnings"] = sampler.warnings
    return trace


def _greedy_action(theta, world: World, catalog, grid, config: OnlineConfig) -> Action:
    params = ModelParams.from_theta(theta, world.W)
    alpha, beta = params.alpha(catalog), params.beta(catalog)
    if config.mode == "fixed_assortment":
        S = config.fixed_assortment
        cands = ActionGrid.build(world.N, len(S), grid, assortments=[S])
        rev = cands.revenues(catalog.augmented_table(grid) @ params.theta)
        return cands.action(int(np.argmax(rev)))
    if np.all(beta > 0):
        sol = best_joint_assortment_pricing(alpha, beta, world.K, world.constants.P)
        if not sol.assortment:
            return Action.empty()
        return Action(sol.assortment, snap_to_grid(sol.prices, grid))
    table = UtilityTable(grid, catalog.augmented_table(grid) @ params.theta)
    return maximize_revenue_over_grid(table, True, world.K).action
