"""Uniformly random actions, the reference point for regret comparisons."""

from __future__ import annotations

import numpy as np

from ..environment import World
from ..oracle import ActionGrid
from .config import OnlineConfig
from .market import Market
from .trace import RegretTrace


def run_uniform(world: World, config: OnlineConfig, rng: np.random.Generator) -> RegretTrace:
    market = Market(world, config, rng)
    restrict = [config.fixed_assortment] if config.mode == "fixed_assortment" else None
    cands = ActionGrid.build(world.N, world.K, market.grid, include_empty=False, assortments=restrict)
    trace = RegretTrace(metadata={"algorithm": "uniform"})
    for t in range(1, config.T + 1):
        catalog = market.next_context()
        action = cands.action(int(market.learner_rng.integers(len(cands))))
        chosen, regret = market.play(catalog, action)
        trace.append(t, "explore", None, action, chosen, regret)
    return trace
