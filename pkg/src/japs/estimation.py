"""Maximum-likelihood estimation and confidence regions for the price-based MNL.

The loss is the negative log-likelihood plus a ridge term,
``f(theta) = -sum_m sum_j y_mj log q_mj(theta) + lam/2 ||theta||^2``.
Records are grouped into a :class:`Design` (identical offered feature
matrices share one row of choice counts), which is what every numerical
routine below consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .mnl import Action, ItemCatalog, ModelError, UTILITY_CLAMP, augmented_rows

CONFIDENCE_CONSTANT = 16.0
HAT_INFLATION = math.sqrt(3.0)
MAX_CONDITION = 1e12
MULTIPLIER_FLOOR = 1e-10


class EstimationError(RuntimeError):
    """The estimation problem is ill-posed as configured."""


@dataclass(frozen=True)
class Record:
    chosen: int
    action: Action
    features: ItemCatalog

    def __post_init__(self) -> None:
        self.action.validate(self.features.N)
        if self.chosen != 0 and self.chosen not in self.action.assortment:
            raise ModelError(f"chosen item {self.chosen} is not offered")

    def to_dict(self) -> dict:
        return {
            "chosen": int(self.chosen),
            "assortment": list(self.action.assortment),
            "prices": list(self.action.prices),
            "features": self.features.items.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Record":
        return cls(
            int(doc["chosen"]),
            Action(tuple(doc["assortment"]), tuple(doc["prices"])),
            ItemCatalog(np.array(doc["features"], dtype=float)),
        )


class Dataset:
    """Immutable ordered collection of transactions."""

    def __init__(self, records: Iterable[Record] = (), dim: int | None = None):
        self._records = tuple(records)
        if self._records:
            dims = {r.features.d for r in self._records}
            if len(dims) != 1:
                raise ModelError("records disagree on the feature dimension")
            dim = dims.pop()
        self.d = dim
        self._design: Design | None = None

    @property
    def records(self) -> tuple[Record, ...]:
        return self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self._records)

    def __getitem__(self, idx):
        return self._records[idx]

    def extend(self, records: Iterable[Record]) -> "Dataset":
        return Dataset(self._records + tuple(records), self.d)

    def design(self) -> "Design":
        if self._design is None:
            if self.d is None:
                raise EstimationError("empty dataset without a known dimension")
            self._design = Design.from_records(self._records, 2 * self.d)
        return self._design

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self._records)

    @classmethod
    def from_jsonl(cls, text: str, dim: int | None = None) -> "Dataset":
        recs = [Record.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(recs, dim)


@dataclass(frozen=True, eq=False)
class Design:
    """Grouped numerical form of a dataset.

    ``X[m, k]`` is the augmented feature of the k-th offered item in group m
    (zero rows where ``mask`` is False) and ``counts[m, 0]`` / ``counts[m, k+1]``
    count no-purchases / purchases of that item.
    """

    X: np.ndarray
    mask: np.ndarray
    counts: np.ndarray

    @property
    def dim(self) -> int:
        return self.X.shape[2]

    @property
    def n_groups(self) -> int:
        return self.X.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @classmethod
    def empty(cls, dim: int) -> "Design":
        return cls(np.zeros((0, 1, dim)), np.zeros((0, 1), bool), np.zeros((0, 2)))

    @classmethod
    def from_records(cls, records: Sequence[Record], dim: int) -> "Design":
        builder = DesignBuilder(dim)
        for r in records:
            builder.add(augmented_rows(r.features, r.action), _position(r))
        return builder.build(sort=True)


def _position(record: Record) -> int:
    if record.chosen == 0:
        return 0
    return record.action.assortment.index(record.chosen) + 1


class DesignBuilder:
    """Incrementally groups (offered features, choice position) observations."""

    def __init__(self, dim: int):
        self.dim = dim
        self._index: dict[bytes, int] = {}
        self._rows: list[np.ndarray] = []
        self._counts: list[np.ndarray] = []
        self._cached: Design | None = None
        self.n_records = 0

    def add(self, rows: np.ndarray, position: int, count: float = 1.0) -> None:
        """Add one observation; ``position`` 0 is no purchase, k the k-th offered row."""
        rows = np.ascontiguousarray(rows, dtype=float).reshape(-1, self.dim)
        if rows.shape[0] == 0:
            return
        key = rows.tobytes()
        g = self._index.get(key)
        if g is None:
            g = len(self._rows)
            self._index[key] = g
            self._rows.append(rows)
            self._counts.append(np.zeros(rows.shape[0] + 1))
        self._counts[g][position] += count
        self.n_records += 1
        self._cached = None

    def build(self, sort: bool = False) -> Design:
        if self._cached is not None and not sort:
            return self._cached
        if not self._rows:
            return Design.empty(self.dim)
        order = range(len(self._rows))
        if sort:
            keys = list(self._index)
            order = [self._index[k] for k in sorted(keys, key=lambda k: (len(k), k))]
        kmax = max(r.shape[0] for r in self._rows)
        M = len(self._rows)
        X = np.zeros((M, kmax, self.dim))
        mask = np.zeros((M, kmax), bool)
        counts = np.zeros((M, kmax + 1))
        for out, g in enumerate(order):
            k = self._rows[g].shape[0]
            X[out, :k] = self._rows[g]
            mask[out, :k] = True
            counts[out, : k + 1] = self._counts[g]
        design = Design(X, mask, counts)
        if not sort:
            self._cached = design
        return design


def as_design(data: "Dataset | Design") -> Design:
    return data if isinstance(data, Design) else data.design()


def _log_probs(theta: np.ndarray, design: Design) -> tuple[np.ndarray, np.ndarray]:
    """Return (log q_0 per group, log q per offered slot); padded slots get -inf."""
    U = np.clip(design.X @ theta, -UTILITY_CLAMP, UTILITY_CLAMP)
    U = np.where(design.mask, U, -np.inf)
    m = np.maximum(U.max(axis=1), 0.0)
    lse = m + np.log(np.exp(-m) + np.exp(U - m[:, None]).sum(axis=1))
    return -lse, U - lse[:, None]


def neg_log_likelihood(theta: Sequence[float], data: "Dataset | Design", lam: float = 0.0) -> float:
    theta = np.asarray(theta, dtype=float)
    design = as_design(data)
    ridge = 0.5 * lam * float(theta @ theta)
    if design.n_groups == 0:
        return ridge
    logq0, logq = _log_probs(theta, design)
    inner = (design.counts[:, 1:] * np.where(design.mask, logq, 0.0)).sum()
    return float(-(design.counts[:, 0] @ logq0) - inner + ridge)


def likelihood_derivatives(
    theta: Sequence[float], data: "Dataset | Design", lam: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of :func:`neg_log_likelihood`."""
    theta = np.asarray(theta, dtype=float)
    design = as_design(data)
    D = theta.size
    grad = lam * theta
    hess = lam * np.eye(D)
    if design.n_groups == 0:
        return grad, hess
    _, logq = _log_probs(theta, design)
    q = np.where(design.mask, np.exp(logq), 0.0)
    n = design.weights
    qx = q[:, :, None] * design.X
    mean = qx.sum(axis=1)
    grad = grad + n @ mean - np.einsum("mk,mkd->d", design.counts[:, 1:], design.X)
    hess = hess + np.einsum("m,mkd,mke->de", n, qx, design.X) - np.einsum("m,md,me->de", n, mean, mean)
    return grad, 0.5 * (hess + hess.T)


def hessian_at(theta: Sequence[float], data: "Dataset | Design", lam: float = 0.0) -> np.ndarray:
    return likelihood_derivatives(theta, data, lam)[1]


@dataclass(frozen=True)
class FitConfig:
    lam: float = 0.0
    tolerance: float = 1e-8
    max_iterations: int = 200
    norm_cap: float | None = None

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.norm_cap is not None and self.norm_cap <= 0:
            raise ValueError("norm_cap must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: np.ndarray
    hessian_at_hat: np.ndarray
    final_gradient_norm: float
    iterations: int
    converged: bool
    lam: float
    objective: float = float("nan")
    multiplier: float = 0.0  # KKT multiplier of the norm cap; 0 when inactive


def _newton(design: Design, ridge: float, theta: np.ndarray, tol: float, max_iter: int,
            check_condition: bool, abort_norm: float = math.inf) -> tuple[np.ndarray, float, int, bool]:
    """Damped Newton with Armijo backtracking on the ridge-regularized loss.

    Gives up (unconverged) as soon as an iterate's norm exceeds ``abort_norm``.
    """
    f = neg_log_likelihood(theta, design, ridge)
    it = 0
    while True:
        g, H = likelihood_derivatives(theta, design, ridge)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return theta, gnorm, it, True
        if it >= max_iter:
            return theta, gnorm, it, False
        if check_condition and np.linalg.cond(H) >= MAX_CONDITION:
            raise EstimationError(
                "Hessian is numerically singular (condition number >= 1e12); "
                "set lam > 0 or supply more informative data"
            )
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -gnorm * gnorm
        if -slope <= 1e-13 * max(1.0, abs(f)):
            # predicted decrease is below the objective's rounding error: full step
            theta = theta + step
            f = neg_log_likelihood(theta, design, ridge)
            it += 1
            continue
        t = 1.0
        while True:
            cand = theta + t * step
            fc = neg_log_likelihood(cand, design, ridge)
            if fc <= f + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                # no representable decrease: the iterate is optimal to machine precision
                return theta, gnorm, it + 1, gnorm <= tol * 1e3 or abs(f) * 1e-14 >= abs(t * slope)
        theta, f = cand, fc
        it += 1
        if float(theta @ theta) > abort_norm * abort_norm:
            return theta, gnorm, it, False


def fit_mle(data: "Dataset | Design", config: FitConfig = FitConfig(),
            theta0: Sequence[float] | None = None) -> FitResult:
    """Minimize the ridge-regularized loss, optionally over the ball ``||theta|| <= norm_cap``.

    The constrained minimizer is located through its KKT conditions: for a
    multiplier ``mu >= 0`` it minimizes the loss with ridge ``lam + mu`` and
    either ``mu = 0`` with the solution inside the ball, or ``||theta|| = W``.
    The multiplier is found by safeguarded Newton iteration on
    ``1/||theta(mu)|| - 1/W``.
    """
    design = as_design(data)
    D = design.dim if theta0 is None else len(theta0)
    tol, max_iter, lam = config.tolerance, config.max_iterations, config.lam
    theta = np.zeros(D) if theta0 is None else np.array(theta0, dtype=float)
    W = config.norm_cap

    if W is None:
        theta, gnorm, iters, ok = _newton(design, lam, theta, tol, max_iter, check_condition=lam == 0)
        return _result(design, theta, lam, gnorm, iters, ok)

    tnorm = float(np.linalg.norm(theta))
    if tnorm > W:
        theta *= W / tnorm
    # smallest multiplier tried; when the ridge-free problem is flat or
    # ill-conditioned, the solution at this multiplier stands in for mu = 0
    mu_floor = 0.0 if lam > 0 else MULTIPLIER_FLOOR
    start = theta
    theta, gnorm, total, ok = _newton(design, lam + mu_floor, start, tol * 0.1, max_iter, False, 3.0 * W)
    nrm = float(np.linalg.norm(theta))
    if ok and nrm <= W:
        return _interior(design, theta, lam, total, tol)

    # boundary: ||theta(mu)|| decreases in mu, bracket [mu_lo, mu_hi] around W
    gz = likelihood_derivatives(np.zeros(D), design, lam)[0]
    mu_lo, mu_hi = mu_floor, max(float(np.linalg.norm(gz)) / W, 2 * mu_floor, 1e-300)
    mu = mu_hi
    theta, gnorm, iters, ok = _newton(design, lam + mu, start, tol * 0.1, max_iter, False)
    total += iters
    nrm = float(np.linalg.norm(theta))
    for _ in range(max_iter):
        if ok and abs(nrm - W) <= 1e-6 * W:
            break
        if nrm < W:
            mu_hi = mu
            if mu_hi <= 2.0 * mu_floor:
                # the early abort was premature: the minimizer is interior
                theta, gnorm, iters, ok = _newton(design, lam + mu_floor, theta, tol * 0.1, max_iter, False)
                return _interior(design, theta, lam, total + iters, tol)
        else:
            mu_lo = mu
        # Newton step on 1/||theta(mu)|| - 1/W, bisection in log-space as fallback
        H = likelihood_derivatives(theta, design, lam + mu)[1]
        slope = float(theta @ np.linalg.solve(H, theta)) / nrm ** 3
        mu_new = mu - (1.0 / nrm - 1.0 / W) / slope
        if not mu_lo < mu_new < mu_hi:
            mu_new = math.sqrt(mu_lo * mu_hi) if mu_lo > 0 else 0.5 * mu_hi
        mu = mu_new
        theta, gnorm, iters, ok = _newton(design, lam + mu, theta, tol * 0.1, max_iter, False)
        total += iters
        nrm = float(np.linalg.norm(theta))
    theta, mu, polished = _polish_on_sphere(design, lam, theta, mu, W, tol)
    theta = theta * (W / np.linalg.norm(theta))
    g = likelihood_derivatives(theta, design, lam)[0]
    mult = max(mu, 0.0)
    resid = float(np.linalg.norm(g + mult * theta))
    return _result(design, theta, lam, resid, total, polished and resid <= tol, mult)


def _interior(design, theta, lam, iters, tol) -> FitResult:
    gnorm = float(np.linalg.norm(likelihood_derivatives(theta, design, lam)[0]))
    return _result(design, theta, lam, gnorm, iters, gnorm <= tol)


def _polish_on_sphere(design, lam, theta, mu, W, tol, max_steps=50):
    """Newton iterations on the KKT system ``grad + mu theta = 0``, ``||theta|| = W``."""
    D = theta.size
    for _ in range(max_steps):
        g, H = likelihood_derivatives(theta, design, lam)
        r1 = g + mu * theta
        r2 = 0.5 * (theta @ theta - W * W)
        if np.linalg.norm(r1) <= 0.1 * tol and abs(r2) <= 1e-13 * W * W:
            return theta, mu, True
        J = np.zeros((D + 1, D + 1))
        J[:D, :D] = H + mu * np.eye(D)
        J[:D, D] = theta
        J[D, :D] = theta
        try:
            step = np.linalg.solve(J, np.concatenate([r1, [r2]]))
        except np.linalg.LinAlgError:
            return theta, mu, False
        theta = theta - step[:D]
        mu = mu - step[D]
    g = likelihood_derivatives(theta, design, lam)[0]
    return theta, mu, bool(np.linalg.norm(g + mu * theta) <= tol)


def _result(design, theta, lam, gnorm, iters, ok, mult=0.0) -> FitResult:
    theta = np.asarray(theta, dtype=float)
    theta.setflags(write=False)
    H = hessian_at(theta, design, lam)
    H.setflags(write=False)
    return FitResult(theta, H, float(gnorm), int(iters), bool(ok), float(lam),
                     neg_log_likelihood(theta, design, lam), float(mult))


@dataclass(frozen=True)
class ConfidenceSpec:
    delta: float
    N_effective: int
    W: float
    use_hat_hessian_inflation: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.N_effective < 1:
            raise ValueError("N_effective must be at least 1")


def _inverse(hessian: np.ndarray, lam: float) -> np.ndarray:
    H = np.asarray(hessian, dtype=float)
    if lam <= 0 and (not np.all(np.isfinite(H)) or np.linalg.cond(H) >= MAX_CONDITION):
        raise EstimationError("Hessian is singular; use lam > 0")
    try:
        return np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("Hessian is singular; use lam > 0") from exc


def inverse_norms(xtilde: np.ndarray, hessian_inv: np.ndarray) -> np.ndarray:
    """``||x||_{H^{-1}}`` along the last axis of ``xtilde``."""
    xtilde = np.asarray(xtilde, dtype=float)
    quad = np.einsum("...i,ij,...j->...", xtilde, hessian_inv, xtilde)
    return np.sqrt(np.maximum(quad, 0.0))


def confidence_multiplier(spec: ConfidenceSpec, lam: float) -> float:
    c = HAT_INFLATION if spec.use_hat_hessian_inflation else 1.0
    return CONFIDENCE_CONSTANT * c * (math.sqrt(math.log(spec.N_effective / spec.delta))
                                      + math.sqrt(lam) * spec.W)


def confidence_width(xtilde: np.ndarray, fit: FitResult, spec: ConfidenceSpec,
                     hessian: np.ndarray | None = None) -> np.ndarray | float:
    """Half-width of the confidence interval for ``xtilde . theta``.

    Uses ``fit.hessian_at_hat`` unless another Hessian is supplied (e.g. the
    Hessian at the true parameter in simulation). Accepts a single vector or
    a stack of vectors along the last axis.
    """
    H = fit.hessian_at_hat if hessian is None else hessian
    width = confidence_multiplier(spec, fit.lam) * inverse_norms(xtilde, _inverse(H, fit.lam))
    return float(width) if np.ndim(width) == 0 else width


def burn_in_threshold(d: int, N_effective: int, delta: float, lam: float, W: float) -> float:
    first = 1.0 / (144.0 * math.sqrt(2 * d * math.log(N_effective / delta)))
    second = math.inf if lam * W == 0 else 1.0 / (24.0 * math.sqrt(lam) * W)
    return min(first, second)


def burn_in_satisfied(data: "Dataset | Design", hessian: np.ndarray, d: int, N_effective: int,
                      delta: float, lam: float, W: float) -> tuple[bool, float]:
    """Check the burn-in bound on the largest observed ``||xtilde||_{H^{-1}}``."""
    design = as_design(data)
    Hinv = _inverse(hessian, lam)
    if design.n_groups == 0:
        return True, 0.0
    worst = float(inverse_norms(design.X[design.mask], Hinv).max())
    return worst <= burn_in_threshold(d, N_effective, delta, lam, W), worst


def sequential_radius(t: int, d: int, W: float, Pbar: float, C: float, T: int) -> float:
    """Likelihood-gap radius of the sequential confidence set after ``t`` rounds."""
    if C <= 0:
        raise ValueError("C must be positive")
    return math.log(T) + d * math.log(C * (1.0 + W * Pbar * t / d))


def sequential_set_contains(theta: Sequence[float], data: "Dataset | Design",
                            theta_hat: Sequence[float], radius: float) -> bool:
    gap = neg_log_likelihood(theta, data) - neg_log_likelihood(theta_hat, data)
    return gap <= radius
