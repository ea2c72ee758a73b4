"""Synthetic worlds that satisfy the model's boundedness and minimum-sensitivity assumptions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .mnl import ItemCatalog, ModelError, ModelParams, ProblemConstants
from .oracle import OracleSolution, brute_force_joint

MAX_ATTEMPTS = 10_000
SENSITIVITY_MARGIN = 0.05
CONTEXT_MODES = ("fixed", "iid_per_round")
FEATURE_STYLES = ("nonneg_unit_ball", "canonical")


class InfeasibleEnvironment(ModelError):
    """No world satisfies the requested constants."""


@dataclass(frozen=True)
class EnvironmentSpec:
    d: int
    N: int
    K: int
    W: float
    L0: float
    context_mode: str = "fixed"
    feature_style: str = "nonneg_unit_ball"
    seed: int = 0
    grid_size: int = 5

    def __post_init__(self) -> None:
        if min(self.d, self.N, self.K) < 1:
            raise ValueError("d, N and K must be at least 1")
        if self.L0 <= 0 or self.W <= 0:
            raise ValueError("W and L0 must be positive")
        if self.context_mode not in CONTEXT_MODES:
            raise ValueError(f"context_mode must be one of {CONTEXT_MODES}")
        if self.feature_style not in FEATURE_STYLES:
            raise ValueError(f"feature_style must be one of {FEATURE_STYLES}")
        if self.grid_size < 1:
            raise ValueError("grid_size must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvironmentSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown environment keys: {sorted(unknown)}")
        return cls(**doc)


def reference_spec(seed: int = 0) -> EnvironmentSpec:
    """Desk-scale world used by the acceptance suite: 6 items in 2 dimensions, K=2, 5 prices."""
    return EnvironmentSpec(d=2, N=6, K=2, W=1.0, L0=0.5, seed=seed, grid_size=5)


def _draw_features(rng: np.random.Generator, N: int, d: int) -> np.ndarray:
    raw = rng.uniform(0.0, 1.0, (N, d))
    raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
    return raw * rng.uniform(0.7, 1.0, (N, 1))


def draw_context(rng: np.random.Generator, phi: np.ndarray, N: int, L0: float,
                 max_attempts: int = MAX_ATTEMPTS) -> ItemCatalog:
    """Draw a fresh feature matrix whose items all satisfy the sensitivity floor."""
    for _ in range(max_attempts):
        X = _draw_features(rng, N, phi.size)
        if np.all(X @ phi >= L0):
            return ItemCatalog(X)
    raise InfeasibleEnvironment(f"no context with min phi.x >= L0={L0} in {max_attempts} draws")


def _finish_psi(rng: np.random.Generator, d: int, budget: float) -> np.ndarray:
    direction = rng.normal(size=d)
    direction /= max(np.linalg.norm(direction), 1e-12)
    return direction * budget * rng.uniform(0.0, 1.0)


def generate_environment(spec: EnvironmentSpec, rng: np.random.Generator | None = None
                         ) -> tuple[ItemCatalog, ModelParams, ProblemConstants]:
    """Draw features and a true parameter meeting all three assumption inequalities."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    d, N, W, L0 = spec.d, spec.N, spec.W, spec.L0
    if L0 > W:
        raise InfeasibleEnvironment(f"L0={L0} > W={W}: phi.x <= ||phi|| ||x|| <= W cannot reach L0")
    target = L0 * (1.0 + SENSITIVITY_MARGIN)
    constants = ProblemConstants.from_assumptions(W, spec.K, L0)

    if spec.feature_style == "canonical":
        if d != N:
            raise InfeasibleEnvironment(f"canonical features need d == N, got d={d}, N={N}")
        if math.sqrt(N) * L0 > W:
            raise InfeasibleEnvironment(f"sqrt(N)*L0={math.sqrt(N) * L0:.4g} > W={W}")
        base = min(target, W / math.sqrt(N))
        for _ in range(MAX_ATTEMPTS):
            phi = base * (1.0 + 0.05 * rng.uniform(0.0, 1.0, d))
            norm = np.linalg.norm(phi)
            if norm > W:
                phi *= W / norm
            if np.all(phi >= L0):
                break
        else:
            raise InfeasibleEnvironment("could not place phi above the floor inside the W-ball")
        budget = math.sqrt(max(W * W - phi @ phi, 0.0))
        params = ModelParams(_finish_psi(rng, d, budget), phi, W)
        catalog = ItemCatalog(np.eye(N))
        audit(catalog, params, L0, raise_on_failure=True)
        return catalog, params, constants

    best_gap = -math.inf
    for _ in range(MAX_ATTEMPTS):
        X = _draw_features(rng, N, d)
        direction = np.ones(d) / math.sqrt(d) + rng.normal(0.0, 0.1 / math.sqrt(d), d)
        direction = np.maximum(direction, 0.0)
        floor = float((X @ direction).min())
        if floor <= 0:
            continue
        phi = direction * (target / floor)
        norm = float(np.linalg.norm(phi))
        if norm > W:
            phi *= W / norm
        best_gap = max(best_gap, float((X @ phi).min()) - L0)
        if (X @ phi).min() < L0:
            continue
        budget = math.sqrt(max(W * W - phi @ phi, 0.0))
        params = ModelParams(_finish_psi(rng, d, budget), phi, W)
        catalog = ItemCatalog(X)
        if all(audit(catalog, params, L0).values()):
            return catalog, params, constants
    raise InfeasibleEnvironment(
        f"min_i phi.x_i >= L0={L0} with ||theta|| <= W={W} failed in {MAX_ATTEMPTS} attempts "
        f"(best min_i phi.x_i - L0 = {best_gap:.4g})"
    )


def audit(catalog: ItemCatalog, params: ModelParams, L0: float,
          raise_on_failure: bool = False) -> dict[str, bool]:
    """Check feature norms, the parameter norm cap, and the sensitivity floor."""
    tol = 1e-9
    report = {
        "features_in_unit_ball": bool(np.all(np.linalg.norm(catalog.items, axis=1) <= 1 + tol)),
        "theta_in_W_ball": bool(np.linalg.norm(params.theta) <= params.W * (1 + tol)),
        "min_price_sensitivity": bool(np.all(params.beta(catalog) >= L0 - tol)),
    }
    if raise_on_failure and not all(report.values()):
        raise InfeasibleEnvironment(f"world fails audit: {report}")
    return report


@dataclass(eq=False)
class World:
    """A simulated market: items, true parameter, constants and the shared price grid."""

    catalog: ItemCatalog
    params: ModelParams
    constants: ProblemConstants
    K: int
    grid: np.ndarray
    context_mode: str = "fixed"
    spec: EnvironmentSpec | None = None
    _optimum: OracleSolution | None = field(default=None, repr=False)

    @classmethod
    def generate(cls, spec: EnvironmentSpec, rng: np.random.Generator | None = None) -> "World":
        catalog, params, constants = generate_environment(spec, rng)
        grid = np.linspace(0.0, constants.P, spec.grid_size) if spec.grid_size > 1 else np.array([0.0])
        return cls(catalog, params, constants, spec.K, grid, spec.context_mode, spec)

    @property
    def N(self) -> int:
        return self.catalog.N

    @property
    def d(self) -> int:
        return self.catalog.d

    @property
    def W(self) -> float:
        return self.params.W

    def context(self, rng: np.random.Generator) -> ItemCatalog:
        if self.context_mode == "fixed":
            return self.catalog
        return draw_context(rng, self.params.phi, self.N, self.constants.L0)

    def optimum(self, catalog: ItemCatalog | None = None) -> OracleSolution:
        """Grid-restricted optimal action for the given (default: fixed) context."""
        if catalog is None or catalog is self.catalog:
            if self._optimum is None:
                self._optimum = brute_force_joint(self.params, self.catalog, self.K, self.grid)
            return self._optimum
        return brute_force_joint(self.params, catalog, self.K, self.grid)

    def to_dict(self) -> dict:
        doc = {**self.catalog.to_dict(), **self.params.to_dict()}
        doc.update(K=self.K, L0=self.constants.L0, grid=self.grid.tolist(),
                   context_mode=self.context_mode)
        if self.spec is not None:
            doc["spec"] = self.spec.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "World":
        catalog = ItemCatalog.from_dict(doc)
        params = ModelParams.from_dict(doc)
        K = int(doc["K"])
        constants = ProblemConstants.from_assumptions(params.W, K, float(doc["L0"]))
        spec = EnvironmentSpec.from_dict(doc["spec"]) if "spec" in doc else None
        world = cls(catalog, params, constants, K, np.asarray(doc["grid"], dtype=float),
                    doc.get("context_mode", "fixed"), spec)
        audit(catalog, params, constants.L0, raise_on_failure=True)
        return world
