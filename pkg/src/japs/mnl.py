"""Price-based contextual MNL demand model.

Items are labelled ``1..N``; label ``0`` is the no-purchase option, whose
attraction is fixed at 1. An item with feature ``x`` offered at price ``p``
has utility ``psi.x - (phi.x) p``, i.e. ``xtilde(p) . theta`` with the
augmented feature ``xtilde(p) = (x, -p x)`` and ``theta = (psi, phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

UTILITY_CLAMP = 40.0
NORM_SLACK = 1e-9


class ModelError(ValueError):
    """Raised when a model object violates its invariants."""


class InvalidActionError(ModelError):
    """An action references an item outside the catalog or breaks a bound."""

    def __init__(self, message: str, item: int | None = None, n_items: int | None = None):
        super().__init__(message)
        self.item = item
        self.n_items = n_items


def _as_readonly(a: Any, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ModelError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ItemCatalog:
    """Feature vectors of the ``N`` items, one row per item."""

    items: np.ndarray

    def __post_init__(self) -> None:
        items = _as_readonly(self.items, 2)
        if items.shape[0] < 1 or items.shape[1] < 1:
            raise ModelError("catalog needs N >= 1 items and d >= 1 features")
        norms = np.linalg.norm(items, axis=1)
        if np.any(norms > 1.0 + NORM_SLACK):
            bad = int(np.argmax(norms)) + 1
            raise ModelError(f"item {bad} has norm {norms[bad - 1]:.6g} > 1")
        object.__setattr__(self, "items", items)

    @property
    def d(self) -> int:
        return self.items.shape[1]

    @property
    def N(self) -> int:
        return self.items.shape[0]

    def x(self, item: int) -> np.ndarray:
        if not 1 <= item <= self.N:
            raise InvalidActionError(f"item {item} not in 1..{self.N}", item, self.N)
        return self.items[item - 1]

    def augmented_table(self, grid: Sequence[float]) -> np.ndarray:
        """Augmented features for every (item, price) pair, shape ``(N, G, 2d)``."""
        grid = np.asarray(grid, dtype=float)
        X = self.items
        return np.concatenate(
            [np.broadcast_to(X[:, None, :], (self.N, grid.size, self.d)),
             -grid[None, :, None] * X[:, None, :]],
            axis=2,
        )

    def to_dict(self) -> dict:
        return {"d": self.d, "items": self.items.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ItemCatalog":
        cat = cls(np.array(doc["items"], dtype=float).reshape(-1, int(doc["d"])))
        return cat


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Preference vector ``psi`` and price-sensitivity vector ``phi``."""

    psi: np.ndarray
    phi: np.ndarray
    W: float

    def __post_init__(self) -> None:
        psi = _as_readonly(self.psi, 1)
        phi = _as_readonly(self.phi, 1)
        if psi.shape != phi.shape:
            raise ModelError("psi and phi must have the same length")
        if self.W < 0:
            raise ModelError("W must be nonnegative")
        norm = math.sqrt(float(psi @ psi + phi @ phi))
        if norm > self.W * (1 + NORM_SLACK) + NORM_SLACK:
            raise ModelError(f"||(psi, phi)|| = {norm:.6g} exceeds W = {self.W}")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "W", float(self.W))

    @property
    def d(self) -> int:
        return self.psi.size

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.psi, self.phi])

    @classmethod
    def from_theta(cls, theta: Sequence[float], W: float) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        d = theta.size // 2
        return cls(theta[:d], theta[d:], W)

    def alpha(self, catalog: ItemCatalog) -> np.ndarray:
        return catalog.items @ self.psi

    def beta(self, catalog: ItemCatalog) -> np.ndarray:
        return catalog.items @ self.phi

    def to_dict(self) -> dict:
        return {"psi": self.psi.tolist(), "phi": self.phi.tolist(), "W": self.W}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        return cls(np.array(doc["psi"], float), np.array(doc["phi"], float), float(doc["W"]))


@dataclass(frozen=True)
class Action:
    """An assortment with one price per offered item.

    ``assortment`` is sorted ascending; ``prices[k]`` is the price of
    ``assortment[k]``.
    """

    assortment: tuple[int, ...]
    prices: tuple[float, ...]

    def __post_init__(self) -> None:
        items = tuple(int(i) for i in self.assortment)
        prices = tuple(float(p) for p in self.prices)
        if len(items) != len(prices):
            raise InvalidActionError("assortment and prices differ in length")
        if len(set(items)) != len(items):
            raise InvalidActionError("assortment has repeated items")
        order = sorted(range(len(items)), key=items.__getitem__)
        items = tuple(items[k] for k in order)
        prices = tuple(prices[k] for k in order)
        for p in prices:
            if not (p >= 0.0 and math.isfinite(p)):
                raise InvalidActionError(f"price {p} is not a finite nonnegative number")
        object.__setattr__(self, "assortment", items)
        object.__setattr__(self, "prices", prices)

    @classmethod
    def from_full_prices(cls, assortment: Sequence[int], prices: Sequence[float]) -> "Action":
        """Build an action from a length-``N`` price vector; off-assortment prices are dropped."""
        return cls(tuple(assortment), tuple(prices[i - 1] for i in assortment))

    @classmethod
    def empty(cls) -> "Action":
        return cls((), ())

    def __len__(self) -> int:
        return len(self.assortment)

    def columns(self) -> np.ndarray:
        """Zero-based row indices of the offered items."""
        return np.asarray(self.assortment, dtype=int) - 1

    def price_vector(self) -> np.ndarray:
        return np.asarray(self.prices, dtype=float)

    def validate(self, n_items: int, K: int | None = None, P: float | None = None) -> None:
        for i in self.assortment:
            if not 1 <= i <= n_items:
                raise InvalidActionError(f"item {i} not in 1..{n_items}", i, n_items)
        if K is not None and len(self.assortment) > K:
            raise InvalidActionError(f"assortment size {len(self)} exceeds K={K}")
        if P is not None:
            for p in self.prices:
                if p > P * (1 + 1e-12):
                    raise InvalidActionError(f"price {p} exceeds P={P}")


@dataclass(frozen=True)
class ProblemConstants:
    L0: float
    P: float
    Pbar: float
    kappa_lb: float

    @classmethod
    def from_assumptions(cls, W: float, K: int, L0: float) -> "ProblemConstants":
        P = price_upper_bound(W, K, L0)
        Pbar = math.sqrt(1.0 + P * P)
        return cls(L0=L0, P=P, Pbar=Pbar, kappa_lb=kappa_lower_bound(W, K, Pbar))


def augmented_feature(x: Sequence[float], p: float) -> np.ndarray:
    if p < 0:
        raise ModelError("price must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, -p * x])


def augmented_rows(catalog: ItemCatalog, action: Action) -> np.ndarray:
    """Augmented features of the offered items, shape ``(|S|, 2d)``."""
    action.validate(catalog.N)
    X = catalog.items[action.columns()]
    return np.concatenate([X, -action.price_vector()[:, None] * X], axis=1)


def clamp_utilities(u: np.ndarray) -> np.ndarray:
    return np.clip(u, -UTILITY_CLAMP, UTILITY_CLAMP)


def probabilities_from_utilities(u: Sequence[float]) -> np.ndarray:
    """MNL probabilities ``(q_0, q_1, ..., q_|S|)`` for utilities of the offered items."""
    u = clamp_utilities(np.asarray(u, dtype=float))
    if u.size == 0:
        return np.ones(1)
    m = max(0.0, float(u.max()))
    e = np.exp(u - m)
    z = math.exp(-m) + e.sum()
    out = np.empty(u.size + 1)
    out[0] = math.exp(-m) / z
    out[1:] = e / z
    return out


def revenue_from_utilities(u: Sequence[float], prices: Sequence[float]) -> float:
    q = probabilities_from_utilities(u)
    return float(np.dot(q[1:], np.asarray(prices, dtype=float)))


def utilities(params: ModelParams, catalog: ItemCatalog, action: Action) -> np.ndarray:
    return augmented_rows(catalog, action) @ params.theta


def choice_probabilities(params: ModelParams, catalog: ItemCatalog, action: Action) -> np.ndarray:
    """Entry 0 is the no-purchase option; entry k is ``action.assortment[k-1]``."""
    return probabilities_from_utilities(utilities(params, catalog, action))


def expected_revenue(params: ModelParams, catalog: ItemCatalog, action: Action) -> float:
    if len(action) == 0:
        return 0.0
    return revenue_from_utilities(utilities(params, catalog, action), action.prices)


def sample_choice(
    params: ModelParams, catalog: ItemCatalog, action: Action, rng: np.random.Generator
) -> int:
    """Draw the customer's choice; returns an item label or 0 for no purchase."""
    if len(action) == 0:
        return 0
    q = choice_probabilities(params, catalog, action)
    k = int(np.searchsorted(np.cumsum(q), rng.random(), side="right"))
    k = min(k, q.size - 1)
    return 0 if k == 0 else action.assortment[k - 1]


def sample_choices(
    params: ModelParams, catalog: ItemCatalog, action: Action, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Vectorized :func:`sample_choice` for ``size`` independent customers facing one action."""
    if len(action) == 0:
        return np.zeros(size, dtype=int)
    q = choice_probabilities(params, catalog, action)
    k = np.minimum(np.searchsorted(np.cumsum(q), rng.random(size), side="right"), q.size - 1)
    return np.asarray((0,) + action.assortment)[k]


def price_upper_bound(W: float, K: int, L0: float) -> float:
    """Bound on every optimal price under the minimum-sensitivity floor ``L0``."""
    if L0 <= 0:
        raise ModelError("L0 must be positive")
    if K < 1 or W < 0:
        raise ModelError("need K >= 1 and W >= 0")
    return (3.0 + W + math.log(K)) / L0


def kappa_lower_bound(W: float, K: int, Pbar: float) -> float:
    """Conservative lower bound on min q_i q_0 over the parameter ball.

    Every utility lies in ``[-W Pbar, W Pbar]``, so ``q_i >= e^{-W Pbar} / (1 + K e^{W Pbar})``
    and ``q_0 >= 1 / (1 + K e^{W Pbar})``.
    """
    b = W * Pbar
    return math.exp(-b) / (1.0 + K * math.exp(b)) ** 2


def world_to_dict(catalog: ItemCatalog, params: ModelParams) -> dict:
    return {**catalog.to_dict(), **params.to_dict()}
