"""Domain types, the trimmed least-squares objective, and hard thresholding.

Everything here works on the eta-reformulation of robust subset selection:

    minimize   0.5 * ||y - X beta - eta||^2
    subject to ||beta||_0 <= k,  ||eta||_0 <= n - h

Nonzero entries of ``eta`` mark trimmed (outlying) observations.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

MAD_CONSTANT = 1.4826
LIPSCHITZ_SAFETY = 1.01


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class StandardizationMode(str, enum.Enum):
    ROBUST = "robust"
    CLASSICAL = "classical"
    NONE = "none"


class Status(str, enum.Enum):
    HEURISTIC = "heuristic"
    POLISHED = "polished"
    EXACT_OPTIMAL = "exact-optimal"


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Scaling:
    """Location/scale record that maps standardized data back to raw units."""

    x_center: np.ndarray
    x_scale: np.ndarray
    y_center: float
    degenerate: np.ndarray  # per-column flag: spread was zero, column left unscaled

    def __post_init__(self):
        object.__setattr__(self, "x_center", _frozen(self.x_center))
        object.__setattr__(self, "x_scale", _frozen(self.x_scale))
        object.__setattr__(self, "degenerate", _frozen(self.degenerate, bool))
        object.__setattr__(self, "y_center", float(self.y_center))


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    scaling: Optional[Scaling] = None
    mode: StandardizationMode = StandardizationMode.NONE

    def __post_init__(self):
        x = _frozen(self.x)
        y = _frozen(self.y).reshape(-1)
        if x.ndim != 2:
            raise ContractError(f"x must be a 2-d matrix, got shape {x.shape}")
        n, p = x.shape
        if n < 1 or p < 1:
            raise ContractError(f"need n >= 1 and p >= 1, got {x.shape}")
        if y.shape[0] != n:
            raise ContractError(f"y has length {y.shape[0]} but x has {n} rows")
        if not np.all(np.isfinite(x)):
            raise ContractError("x contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ContractError("y contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "mode", StandardizationMode(self.mode))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def raw(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, y)`` on the original scale."""
        if self.scaling is None:
            return np.array(self.x), np.array(self.y)
        s = self.scaling
        return self.x * s.x_scale + s.x_center, self.y + s.y_center


@dataclass(frozen=True)
class SparsityParams:
    """Sparsity budget ``k`` on coefficients and inlier count ``h``."""

    k: int
    h: int

    def __post_init__(self):
        for name in ("k", "h"):
            v = getattr(self, name)
            if int(v) != v:
                raise ContractError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.k < 0:
            raise ContractError(f"k must be >= 0, got {self.k}")
        if self.h < self.k:
            raise ContractError(f"need k <= h, got k={self.k}, h={self.h}")

    def check(self, n: int, p: int) -> "SparsityParams":
        if self.k > min(n - 1, p):
            raise ContractError(f"k={self.k} exceeds min(n-1, p)={min(n - 1, p)}")
        if self.h > n:
            raise ContractError(f"h={self.h} exceeds n={n}")
        return self

    def is_valid_for(self, n: int, p: int) -> bool:
        return self.k <= min(n - 1, p) and self.h <= n

    def trim_budget(self, n: int) -> int:
        return n - self.h


@dataclass(frozen=True)
class Solution:
    beta: np.ndarray
    eta: np.ndarray
    objective: float
    params: SparsityParams
    trace: np.ndarray = ()  # objective after each iteration, starting from the initial point
    status: Status = Status.HEURISTIC
    iterations: int = 0
    converged: bool = True  # False when the iteration cap fired
    degenerate: bool = False  # polish fell back to a minimum-norm fit
    step_sq: Optional[np.ndarray] = None  # per-iteration (||dbeta||^2, ||deta||^2)

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta))
        object.__setattr__(self, "eta", _frozen(self.eta))
        object.__setattr__(self, "objective", float(self.objective))
        object.__setattr__(self, "trace", _frozen(self.trace))
        object.__setattr__(self, "status", Status(self.status))
        if self.step_sq is not None:
            object.__setattr__(self, "step_sq", _frozen(self.step_sq))

    @property
    def support_beta(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    @property
    def inlier_set(self) -> np.ndarray:
        return np.flatnonzero(self.eta == 0)

    def is_feasible(self) -> bool:
        n = self.eta.shape[0]
        return (
            np.count_nonzero(self.beta) <= self.params.k
            and np.count_nonzero(self.eta) <= n - self.params.h
        )


@dataclass(frozen=True)
class LipschitzBounds:
    l_beta_bar: float
    l_eta_bar: float = 1.0

    def __post_init__(self):
        if not (self.l_beta_bar > 0 and np.isfinite(self.l_beta_bar)):
            raise ContractError(f"l_beta_bar must be positive, got {self.l_beta_bar}")
        if not self.l_eta_bar >= 1.0:
            raise ContractError(f"l_eta_bar must be >= 1, got {self.l_eta_bar}")


def _check_dims(dataset: Dataset, beta, eta) -> tuple[np.ndarray, np.ndarray]:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    eta = np.asarray(eta, dtype=float).reshape(-1)
    if beta.shape[0] != dataset.p:
        raise ContractError(f"beta has length {beta.shape[0]}, expected p={dataset.p}")
    if eta.shape[0] != dataset.n:
        raise ContractError(f"eta has length {eta.shape[0]}, expected n={dataset.n}")
    return beta, eta


def residual(dataset: Dataset, beta, eta) -> np.ndarray:
    beta, eta = _check_dims(dataset, beta, eta)
    return dataset.y - dataset.x @ beta - eta


def objective(dataset: Dataset, beta, eta) -> float:
    """``0.5 * ||y - X beta - eta||^2``."""
    r = residual(dataset, beta, eta)
    return 0.5 * float(r @ r)


def gradients(dataset: Dataset, beta, eta) -> tuple[np.ndarray, np.ndarray]:
    """Partial gradients of :func:`objective` with respect to ``beta`` and ``eta``."""
    r = residual(dataset, beta, eta)
    return -(dataset.x.T @ r), -r


def hard_threshold(c, m: int) -> np.ndarray:
    """Keep the ``m`` largest-magnitude entries of ``c`` and zero the rest.

    Ties are broken in favour of the lowest index, which makes the (set-valued)
    projection onto m-sparse vectors a deterministic function.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    d = c.shape[0]
    if int(m) != m or not 0 <= m <= d:
        raise ContractError(f"m must be an integer in [0, {d}], got {m!r}")
    m = int(m)
    if m == d:
        return c.copy()
    out = np.zeros_like(c)
    if m == 0:
        return out
    keep = np.argsort(-np.abs(c), kind="stable")[:m]
    out[keep] = c[keep]
    return out


def estimate_lipschitz(
    dataset: Dataset,
    strict: bool = False,
    tol: float = 1e-8,
    max_iter: int = 1000,
    safety: float = LIPSCHITZ_SAFETY,
) -> LipschitzBounds:
    """Upper bounds on the block Lipschitz constants ``||X^T X||_2`` and 1.

    The beta bound comes from power iteration on ``X^T X`` and is certified by
    adding the residual norm of the final Ritz pair (for symmetric matrices the
    largest eigenvalue lies within ``||A v - mu v||`` of ``mu``), then inflated by
    ``safety``. The eta bound is exactly 1 unless ``strict`` asks for a bound
    strictly above the true constant.
    """
    x = dataset.x
    p = dataset.p
    gram = x.T @ x
    v = np.ones(p) / np.sqrt(p)
    # a deterministic start that is never orthogonal to the top eigenvector in
    # practice; the residual certificate below covers the unlucky case
    v = v + np.linspace(0.0, 1e-3, p)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            mu = 0.0
            break
        mu_new = float(v @ w)
        v = w / nw
        if abs(mu_new - mu) <= tol * max(1.0, abs(mu_new)):
            mu = mu_new
            break
        mu = mu_new
    w = gram @ v
    mu = float(v @ w)
    bound = mu + float(np.linalg.norm(w - mu * v))
    # Frobenius norm is always an upper bound; use it if power iteration stalled
    bound = min(bound, float(np.linalg.norm(gram)))
    if bound <= 0.0:
        bound = 1.0  # X == 0: any positive step is valid
    return LipschitzBounds(
        l_beta_bar=bound * safety,
        l_eta_bar=safety if strict else 1.0,
    )


def _mad(col: np.ndarray) -> tuple[float, float]:
    med = float(np.median(col))
    return med, MAD_CONSTANT * float(np.median(np.abs(col - med)))


def standardize(raw_x, raw_y, mode="robust") -> Dataset:
    """Center and scale predictors and center the response.

    ``robust`` uses the median and normalized MAD, ``classical`` the mean and
    sample standard deviation, ``none`` leaves the data untouched. Columns
    with zero spread are centered but not scaled and flagged in the returned
    :class:`Scaling`.
    """
    mode = StandardizationMode(mode)
    x = np.asarray(raw_x, dtype=float)
    y = np.asarray(raw_y, dtype=float).reshape(-1)
    if x.ndim != 2:
        raise ContractError(f"x must be 2-d, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ContractError("standardize needs at least two observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ContractError("inputs contain non-finite values")
    n, p = x.shape
    if mode is StandardizationMode.NONE:
        scaling = Scaling(np.zeros(p), np.ones(p), 0.0, np.zeros(p, bool))
        return Dataset(x, y, scaling, mode)
    if mode is StandardizationMode.ROBUST:
        stats = [_mad(x[:, j]) for j in range(p)]
        center = np.array([s[0] for s in stats])
        scale = np.array([s[1] for s in stats])
        y_center = float(np.median(y))
    else:
        center = x.mean(axis=0)
        scale = x.std(axis=0, ddof=1)
        y_center = float(y.mean())
    degenerate = ~(scale > 0)
    if degenerate.any():
        warnings.warn(
            f"columns {np.flatnonzero(degenerate).tolist()} have zero spread; left unscaled",
            RuntimeWarning,
            stacklevel=2,
        )
        scale = np.where(degenerate, 1.0, scale)
    scaling = Scaling(center, scale, y_center, degenerate)
    return Dataset((x - center) / scale, y - y_center, scaling, mode)


def unstandardize_solution(solution: Solution, dataset: Dataset) -> tuple[float, np.ndarray]:
    """Map a standardized-scale fit to ``(intercept, coefficients)`` in raw units."""
    if dataset.scaling is None:
        raise ContractError("dataset carries no scaling record")
    s = dataset.scaling
    coef = np.asarray(solution.beta, dtype=float) / s.x_scale
    intercept = s.y_center - float(coef @ s.x_center)
    return intercept, coef
