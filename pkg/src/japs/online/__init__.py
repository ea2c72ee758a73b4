"""Online learners and the shared simulation loop."""

from __future__ import annotations

import numpy as np

from ..environment import World
from .baseline import run_uniform
from .config import ConfigError, OnlineConfig, config_from_dict, load_config
from .supcb import SupCBState, run_supcb, run_supcb_fixed_assortment, uncertainty_levels
from .trace import CSV_COLUMNS, RegretTrace, TraceRow, read_trace_csv
from .ts import posterior_log_density, run_ts
from .ucb_mle import run_ucb_mle

RUNNERS = {"supcb": run_supcb, "ts": run_ts, "ucb_mle": run_ucb_mle, "uniform": run_uniform}


def simulate(world: World, config: OnlineConfig, rng: np.random.Generator) -> RegretTrace:
    """Run the learner named by ``config.algorithm`` for ``config.T`` rounds."""
    return RUNNERS[config.algorithm](world, config, rng)
