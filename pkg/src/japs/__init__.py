"""Joint assortment and pricing under a price-based contextual MNL demand model."""

from __future__ import annotations

from .environment import EnvironmentSpec, World, generate_environment, reference_spec
from .estimation import ConfidenceSpec, Dataset, FitConfig, FitResult, Record, confidence_width, fit_mle
from .harness import BehaviorPolicy, ExperimentSpec, RunSpec, generate_offline_dataset, run_experiment
from .mnl import Action, ItemCatalog, ModelParams, ProblemConstants, choice_probabilities, expected_revenue
from .offline import OfflineProblem, OfflineResult, run_lcb, suboptimality
from .online import OnlineConfig, RegretTrace, simulate
from .oracle import OracleSolution, best_joint_assortment_pricing, brute_force_joint, maximize_revenue_over_grid

__version__ = "0.1.0"
