"""Run configuration for the online learners, loadable from TOML."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

import tomli

ALGORITHMS = ("supcb", "ts", "ucb_mle", "uniform")
MODES = ("joint", "fixed_assortment")

# optional [sampler] table: short key -> config field
SAMPLER_KEYS = {"steps": "mh_steps", "burn_in": "mh_burn_in", "proposal_scale": "mh_proposal_scale",
                "window": "mh_window"}


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class OnlineConfig:
    """Settings shared by every online learner.

    ``lam`` is the ridge weight of the bin estimators (``None`` selects the
    smallest admissible value, the augmented-feature norm cap). ``ucb_lambda``
    is the Hessian floor of the sequential learner (``None``: ``1/(8 W^2)``).
    ``tau`` is the per-bin exploration length of the fixed-assortment mode.
    """

    T: int
    algorithm: str = "supcb"
    lam: float | None = None
    price_grid: tuple[float, ...] | None = None
    mode: str = "joint"
    fixed_assortment: tuple[int, ...] | None = None
    mh_steps: int = 10
    mh_burn_in: int = 200
    mh_proposal_scale: float | None = None
    mh_window: int = 500
    C_seq: float = 2 * math.e
    delta_policy: str = "one_over_T"
    width_scale: float = 1.0
    ucb_lambda: float | None = None
    tau: int | None = None

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "fixed_assortment" and not self.fixed_assortment:
            raise ConfigError("fixed_assortment mode needs a non-empty fixed_assortment")
        if self.delta_policy != "one_over_T":
            raise ConfigError("only delta_policy = 'one_over_T' is supported")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.C_seq <= 0:
            raise ConfigError("C_seq must be positive")
        if self.width_scale <= 0:
            raise ConfigError("width_scale must be positive")
        if self.mh_steps < 1 or self.mh_burn_in < 0 or self.mh_window < 1:
            raise ConfigError("sampler step counts must be positive")
        if self.tau is not None and self.tau < 1:
            raise ConfigError("tau must be at least 1")
        if self.price_grid is not None:
            object.__setattr__(self, "price_grid", tuple(float(p) for p in self.price_grid))
        if self.fixed_assortment is not None:
            object.__setattr__(self, "fixed_assortment", tuple(sorted(int(i) for i in self.fixed_assortment)))

    @property
    def delta(self) -> float:
        return 1.0 / self.T

    def with_algorithm(self, algorithm: str) -> "OnlineConfig":
        return replace(self, algorithm=algorithm)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out["lambda" if f.name == "lam" else f.name] = list(v) if isinstance(v, tuple) else v
        return out


def config_from_dict(doc: dict[str, Any]) -> OnlineConfig:
    names = {f.name for f in fields(OnlineConfig)}
    kwargs: dict[str, Any] = {}
    for key, value in doc.items():
        if key == "sampler" and isinstance(value, dict):
            for sub, v in value.items():
                if sub not in SAMPLER_KEYS:
                    raise ConfigError(f"unknown key sampler.{sub}")
                kwargs[SAMPLER_KEYS[sub]] = v
            continue
        name = "lam" if key == "lambda" else key
        if name not in names or name == "lam" and key != "lambda":
            raise ConfigError(f"unknown configuration key {key!r}")
        kwargs[name] = value
    if "T" not in kwargs:
        raise ConfigError("configuration must set T")
    if "algorithm" in kwargs:
        kwargs["algorithm"] = kwargs["algorithm"].replace("-", "_")
    return OnlineConfig(**kwargs)


def load_config(path: str | Path, **overrides) -> OnlineConfig:
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(doc)
