"""Projected block-coordinate gradient descent with active-set polishing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
import scipy.linalg

from .core import (
    ContractError,
    Dataset,
    LipschitzBounds,
    Solution,
    SparsityParams,
    Status,
    estimate_lipschitz,
    gradients,
    hard_threshold,
)

DEFAULT_EPSILON = 1e-8
DEFAULT_MAX_ITERATIONS = 10_000


@dataclass(frozen=True)
class DescentConfig:
    epsilon: float = DEFAULT_EPSILON
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    lipschitz: Optional[LipschitzBounds] = None  # None: estimated per dataset
    polish: bool = True
    record_steps: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ContractError(f"max_iterations must be >= 1, got {self.max_iterations}")

    def bounds_for(self, dataset: Dataset) -> LipschitzBounds:
        return self.lipschitz if self.lipschitz is not None else estimate_lipschitz(dataset)


@dataclass(frozen=True)
class StationarityReport:
    beta_residual: float
    eta_residual: float
    epsilon: float = field(repr=False, default=0.0)

    @property
    def is_epsilon_optimal(self) -> bool:
        return self.beta_residual <= self.epsilon and self.eta_residual <= self.epsilon


@numba.njit(cache=True)
def _threshold_inplace(c, m, out):
    d = c.shape[0]
    if m >= d:
        out[:] = c
        return
    out[:] = 0.0
    if m == 0:
        return
    order = np.argsort(-np.abs(c), kind="mergesort")
    for t in range(m):
        out[order[t]] = c[order[t]]


@numba.njit(cache=True, nogil=True)
def _pbgd_kernel(x, y, beta, eta, k, m_eta, l_beta, l_eta, eps, max_iter):
    n, p = x.shape
    beta = beta.copy()
    eta = eta.copy()
    beta_new = np.empty(p)
    eta_new = np.empty(n)
    cap = min(max_iter, 64) + 1
    trace = np.empty(cap)
    steps = np.empty((cap, 2))

    r = y - x @ beta - eta
    f = 0.5 * (r @ r)
    trace[0] = f
    it = 0
    converged = False
    while it < max_iter:
        # beta block: gradient step then projection onto k-sparse vectors
        _threshold_inplace(beta + (x.T @ r) / l_beta, k, beta_new)
        xb = x @ beta_new
        r = y - xb - eta
        # eta block, evaluated at the updated beta
        _threshold_inplace(eta + r / l_eta, m_eta, eta_new)
        r = r - (eta_new - eta)
        f_new = 0.5 * (r @ r)

        if it + 1 >= cap:
            grow = min(2 * cap, max_iter + 1)
            t2 = np.empty(grow)
            t2[:cap] = trace
            s2 = np.empty((grow, 2))
            s2[:cap] = steps
            trace, steps, cap = t2, s2, grow
        db = beta_new - beta
        de = eta_new - eta
        steps[it, 0] = db @ db
        steps[it, 1] = de @ de
        trace[it + 1] = f_new
        beta[:] = beta_new
        eta[:] = eta_new
        it += 1
        if f - f_new <= eps:
            converged = True
            break
        f = f_new
    return beta, eta, trace[: it + 1], steps[:it], it, converged


def _check_init(dataset: Dataset, params: SparsityParams, beta0, eta0):
    beta0 = np.ascontiguousarray(beta0, dtype=float).reshape(-1)
    eta0 = np.ascontiguousarray(eta0, dtype=float).reshape(-1)
    if beta0.shape[0] != dataset.p or eta0.shape[0] != dataset.n:
        raise ContractError("initial point has the wrong dimensions")
    if np.count_nonzero(beta0) > params.k:
        raise ContractError(f"initial beta has more than k={params.k} nonzeros")
    if np.count_nonzero(eta0) > dataset.n - params.h:
        raise ContractError(f"initial eta has more than n-h={dataset.n - params.h} nonzeros")
    return beta0, eta0


def pbgd(
    dataset: Dataset,
    params: SparsityParams,
    init=None,
    config: DescentConfig = DescentConfig(),
    lipschitz: Optional[LipschitzBounds] = None,
) -> Solution:
    """Run projected block-coordinate gradient descent from ``init``.

    Each iteration takes a ``1/L_beta`` gradient step in ``beta`` followed by
    hard thresholding to ``k`` entries, then the same for ``eta`` with budget
    ``n - h``. Iteration stops once the objective decreases by at most
    ``config.epsilon`` (or at ``config.max_iterations``, reported through
    ``Solution.converged``). The final active sets are then polished.

    ``lipschitz`` overrides ``config.lipschitz``; callers running many descents
    on one dataset pass it to avoid re-estimating the bound.
    """
    params.check(dataset.n, dataset.p)
    if init is None:
        init = (np.zeros(dataset.p), np.zeros(dataset.n))
    beta0, eta0 = _check_init(dataset, params, *init)
    bounds = lipschitz or config.bounds_for(dataset)
    x = np.ascontiguousarray(dataset.x)
    beta, eta, trace, steps, iters, converged = _pbgd_kernel(
        x,
        np.ascontiguousarray(dataset.y),
        beta0,
        eta0,
        params.k,
        dataset.n - params.h,
        float(bounds.l_beta_bar),
        float(bounds.l_eta_bar),
        float(config.epsilon),
        int(config.max_iterations),
    )
    r = dataset.y - x @ beta - eta
    sol = Solution(
        beta=beta,
        eta=eta,
        objective=0.5 * float(r @ r),
        params=params,
        trace=trace,
        status=Status.HEURISTIC,
        iterations=iters,
        converged=converged,
        step_sq=steps if config.record_steps else None,
    )
    return polish(dataset, sol) if config.polish else sol


def polish(dataset: Dataset, solution: Solution) -> Solution:
    """Refit by least squares on the active predictors and the inlying rows.

    ``beta`` restricted to its support is refit on the rows where ``eta`` is
    zero; ``eta`` then absorbs the full residual on the remaining rows. When
    the restricted system is underdetermined or rank deficient the
    minimum-norm solution from a column-pivoted QR is used and the
    ``degenerate`` flag is set.
    """
    x, y = dataset.x, dataset.y
    support = solution.support_beta
    inliers = solution.inlier_set
    outliers = np.flatnonzero(solution.eta != 0)
    beta = np.zeros(dataset.p)
    degenerate = False
    if support.size and inliers.size:
        a = x[np.ix_(inliers, support)]
        coef, _, rank, _ = scipy.linalg.lstsq(a, y[inliers], lapack_driver="gelsy")
        degenerate = rank < support.size
        beta[support] = coef
    eta = np.zeros(dataset.n)
    eta[outliers] = y[outliers] - x[outliers] @ beta
    r = y - x @ beta - eta
    obj = 0.5 * float(r @ r)
    if obj > solution.objective:
        # only reachable through rounding in a degenerate refit
        return solution
    return Solution(
        beta=beta,
        eta=eta,
        objective=obj,
        params=solution.params,
        trace=solution.trace,
        status=Status.POLISHED,
        iterations=solution.iterations,
        converged=solution.converged,
        degenerate=degenerate,
        step_sq=solution.step_sq,
    )


def check_stationarity(
    dataset: Dataset,
    solution: Solution,
    config: DescentConfig = DescentConfig(),
    lipschitz: Optional[LipschitzBounds] = None,
) -> StationarityReport:
    """Squared distances from ``solution`` to its projected-gradient images."""
    bounds = lipschitz or config.bounds_for(dataset)
    params = solution.params
    g_beta, g_eta = gradients(dataset, solution.beta, solution.eta)
    b = solution.beta
    e = solution.eta
    b_img = hard_threshold(b - g_beta / bounds.l_beta_bar, params.k)
    e_img = hard_threshold(e - g_eta / bounds.l_eta_bar, dataset.n - params.h)
    return StationarityReport(
        beta_residual=float(np.sum((b - b_img) ** 2)),
        eta_residual=float(np.sum((e - e_img) ** 2)),
        epsilon=config.epsilon,
    )
