"""Simulated customer arrivals shared by every online learner."""

from __future__ import annotations

import numpy as np

from ..environment import World
from ..mnl import Action, ItemCatalog, expected_revenue, sample_choice
from ..oracle import ActionGrid
from .config import OnlineConfig


class Market:
    """Draws contexts and choices and scores actions against the grid optimum.

    Three independent streams are split off the run's generator so that
    contexts, customer choices and learner randomness never interleave.
    """

    def __init__(self, world: World, config: OnlineConfig, rng: np.random.Generator):
        self.world = world
        self.grid = np.asarray(config.price_grid if config.price_grid is not None else world.grid, float)
        self.K = world.K
        self.context_rng, self.choice_rng, self.learner_rng = rng.spawn(3)
        restrict = [config.fixed_assortment] if config.mode == "fixed_assortment" else None
        if restrict is not None:
            for i in config.fixed_assortment:
                if not 1 <= i <= world.N:
                    raise ValueError(f"fixed assortment item {i} not in 1..{world.N}")
        self.benchmark = ActionGrid.build(world.N, self.K, self.grid, include_empty=False,
                                          assortments=restrict)
        self._fixed_best: float | None = None

    @property
    def fixed_context(self) -> bool:
        return self.world.context_mode == "fixed"

    def next_context(self) -> ItemCatalog:
        return self.world.context(self.context_rng)

    def best_revenue(self, catalog: ItemCatalog) -> float:
        if self.fixed_context and self._fixed_best is not None:
            return self._fixed_best
        table = catalog.augmented_table(self.grid) @ self.world.params.theta
        best = max(0.0, float(self.benchmark.revenues(table).max()))
        if self.fixed_context:
            self._fixed_best = best
        return best

    def optimal_index(self, catalog: ItemCatalog, candidates: ActionGrid) -> int:
        """Position in ``candidates`` of the first true-revenue maximizer."""
        table = catalog.augmented_table(self.grid) @ self.world.params.theta
        return int(np.argmax(candidates.revenues(table)))

    def play(self, catalog: ItemCatalog, action: Action) -> tuple[int, float]:
        """Offer ``action``; return the customer's choice and the instantaneous regret."""
        chosen = sample_choice(self.world.params, catalog, action, self.choice_rng)
        regret = self.best_revenue(catalog) - expected_revenue(self.world.params, catalog, action)
        return chosen, regret
