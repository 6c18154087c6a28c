"""Cross-validation with trimmed prediction error, and the end-to-end fit."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    ContractError,
    Dataset,
    Solution,
    SparsityParams,
    StandardizationMode,
    standardize,
    unstandardize_solution,
)
from .descent import DescentConfig
from .exact import EnumerationCapError, ExactConfig, enumeration_count, solve_exact
from .mps import MioExport, export_mps
from .search import (
    DEFAULT_MAX_SWEEPS,
    FitGrid,
    ParameterGrid,
    neighborhood_search,
    scale_inliers,
    warm_start_bundle,
)

log = logging.getLogger(__name__)


def trimmed_prediction_error(errors, alpha: float) -> float:
    """Mean of the ``floor((1 - alpha) * n)`` smallest squared errors (at least one)."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise ContractError("errors must not be empty")
    if not 0.0 <= alpha <= 0.5:
        raise ContractError(f"alpha must lie in [0, 0.5], got {alpha}")
    keep = max(1, math.floor((1.0 - alpha) * e.size + 1e-9))
    sq = np.sort(e * e, kind="stable")[:keep]
    return float(np.mean(sq))


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold label per observation: a seeded permutation dealt round-robin."""
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.intp)
    labels[perm] = np.arange(n) % folds
    return labels


@dataclass(frozen=True)
class CvConfig:
    grid: ParameterGrid
    folds: int = 10
    trim_alpha: float = 0.25
    seed: int = 0
    standardization: str = "auto"  # auto: robust unless every h equals n
    max_sweeps: int = DEFAULT_MAX_SWEEPS
    threads: int = 1
    tie_rtol: float = 1e-10  # errors this close (relative to var(y)) count as ties

    def __post_init__(self):
        if int(self.folds) != self.folds or self.folds < 2:
            raise ContractError(f"folds must be an integer >= 2, got {self.folds}")
        if not 0.0 <= self.trim_alpha <= 0.5:
            raise ContractError(f"trim_alpha must lie in [0, 0.5], got {self.trim_alpha}")


@dataclass
class CvResult:
    errors: dict  # (k, h) -> mean trimmed prediction error over the folds that scored it
    chosen: SparsityParams
    per_fold: dict  # (k, h) -> list with one entry per fold (nan where skipped)
    skipped: dict = field(default_factory=dict)  # (k, h) -> fold indices that skipped the cell

    def to_dict(self) -> dict:
        cells = []
        for (k, h), err in sorted(self.errors.items()):
            cells.append(
                {
                    "k": k,
                    "h": h,
                    "error": err,
                    "fold_errors": [None if math.isnan(v) else v for v in self.per_fold[(k, h)]],
                    "skipped_folds": self.skipped.get((k, h), []),
                }
            )
        return {"chosen": {"k": self.chosen.k, "h": self.chosen.h}, "cells": cells}


def resolve_mode(mode: str, grid: ParameterGrid, n: int) -> StandardizationMode:
    if mode == "auto":
        best_subsets = all(h >= n for h in grid.h_values)
        return StandardizationMode.CLASSICAL if best_subsets else StandardizationMode.ROBUST
    return StandardizationMode(mode)


def _score_fold(x, y, labels, fold, config: CvConfig, descent: DescentConfig, mode):
    n = y.shape[0]
    train = labels != fold
    n_train = int(train.sum())
    grid = config.grid.rescaled(n, n_train)
    data = standardize(x[train], y[train], mode)
    fitted = neighborhood_search(data, grid, descent, config.max_sweeps)
    scores = {}
    for i, k in enumerate(config.grid.k_values):
        for h in config.grid.h_values:
            j = grid.h_values.index(scale_inliers(h, n, n_train))
            sol = fitted.solutions.get((i, j))
            if sol is None or k > h:
                continue
            intercept, coef = unstandardize_solution(sol, data)
            resid = y[~train] - intercept - x[~train] @ coef
            scores[(k, h)] = trimmed_prediction_error(resid, config.trim_alpha)
    return scores


def cross_validate(
    dataset_or_xy, config: CvConfig, descent: DescentConfig = DescentConfig()
) -> CvResult:
    """K-fold cross-validation of every grid cell by trimmed prediction error.

    Each training split is standardized on its own and searched with
    :func:`neighborhood_search`; inlier counts are rescaled in proportion to the
    training size. Held-out rows are predicted on the raw scale. A cell that
    is invalid for a fold's training size is skipped for that fold.
    The chosen cell minimizes the mean error; ties (within ``tie_rtol`` of
    the response variance, so rounding noise does not decide) go to the
    smallest ``k`` and then the largest ``h``.
    """
    x, y = _raw_xy(dataset_or_xy)
    n = y.shape[0]
    if n < config.folds:
        raise ContractError(f"need n >= folds, got n={n}, folds={config.folds}")
    mode = resolve_mode(config.standardization, config.grid, n)
    labels = fold_assignment(n, config.folds, config.seed)

    def run(fold):
        return _score_fold(x, y, labels, fold, config, descent, mode)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            fold_scores = list(pool.map(run, range(config.folds)))
    else:
        fold_scores = [run(f) for f in range(config.folds)]

    errors, per_fold, skipped = {}, {}, {}
    for k in config.grid.k_values:
        for h in config.grid.h_values:
            if k > h or k > min(n - 1, x.shape[1]) or h > n:
                continue
            vals = [s.get((k, h), math.nan) for s in fold_scores]
            missing = [f for f, v in enumerate(vals) if math.isnan(v)]
            if missing:
                skipped[(k, h)] = missing
            if len(missing) == len(vals):
                continue
            per_fold[(k, h)] = vals
            errors[(k, h)] = math.fsum(v for v in vals if not math.isnan(v)) / (len(vals) - len(missing))
    if not errors:
        raise ContractError("no grid cell could be scored on any fold")
    best = min(errors.values())
    slack = config.tie_rtol * max(best, float(np.var(y)))
    tied = [kh for kh, err in errors.items() if err <= best + slack]
    k, h = min(tied, key=lambda kh: (kh[0], -kh[1]))
    return CvResult(errors, SparsityParams(k, h), per_fold, skipped)


def _raw_xy(dataset_or_xy):
    if isinstance(dataset_or_xy, Dataset):
        return dataset_or_xy.raw()
    x, y = dataset_or_xy
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float).reshape(-1)


@dataclass
class FitResult:
    solution: Solution
    intercept: float
    coefficients: np.ndarray
    params: SparsityParams
    dataset: Dataset
    fitgrid: FitGrid
    cv: Optional[CvResult] = None
    heuristic_objective: float = math.nan
    exact_status: str = "not-requested"  # not-requested | improved | confirmed | skipped-cap
    export_path: Optional[Path] = None


def fit(
    raw_x,
    raw_y,
    grid: ParameterGrid,
    cv: Optional[CvConfig] = None,
    tau: float = 1.5,
    run_exact: bool = False,
    export_path=None,
    formulation: str = "improved",
    descent: DescentConfig = DescentConfig(),
    standardization: str = "auto",
    exact: Optional[ExactConfig] = None,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> FitResult:
    """Standardize, search the grid, pick a cell, optionally refine and export.

    A grid with more than one valid cell needs ``cv`` to choose among them.
    ``run_exact`` replaces the heuristic solution with the enumeration optimum
    when the instance is within the enumeration cap (otherwise it is skipped
    and recorded in ``exact_status``).
    """
    x = np.asarray(raw_x, dtype=float)
    y = np.asarray(raw_y, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ContractError("inputs contain non-finite values")
    n, p = x.shape
    cells = list(grid.cells(n, p))
    if not cells:
        raise ContractError(f"grid {grid.to_dict()} has no valid cell for n={n}, p={p}")
    cv_result = None
    if cv is not None:
        cv_result = cross_validate((x, y), cv, descent)
        params = cv_result.chosen
    elif len(cells) == 1:
        params = cells[0][2]
    else:
        raise ContractError("a grid with several cells needs a cross-validation config")
    mode = resolve_mode(standardization, grid, n)
    data = standardize(x, y, mode)
    fitted = neighborhood_search(data, grid, descent, max_sweeps)
    fitted.tau = tau
    solution = fitted.solution(params)
    heuristic_objective = solution.objective

    exact_status = "not-requested"
    if run_exact:
        cfg = exact or ExactConfig()
        if enumeration_count(n, p, params) > cfg.cap:
            exact_status = "skipped-cap"
            log.info("exact refinement skipped: %s", EnumerationCapError(enumeration_count(n, p, params), cfg.cap))
        else:
            opt = solve_exact(data, params, cfg)
            if opt.objective < solution.objective:
                solution, exact_status = opt, "improved"
            else:
                exact_status = "confirmed"

    written = None
    if export_path is not None:
        _, m_beta, m_eta = warm_start_bundle(fitted, params, tau)
        if solution is not fitted.solution(params):
            # the exact optimum may exceed the heuristic's magnitudes
            m_beta = max(m_beta, tau * float(np.max(np.abs(solution.beta), initial=0.0)))
            m_eta = max(m_eta, tau * float(np.max(np.abs(solution.eta), initial=0.0)))
        mio = MioExport(formulation, m_beta, m_eta, warm_start=solution, tau=tau)
        export_mps(data, params, mio, export_path)
        written = Path(export_path)

    intercept, coef = unstandardize_solution(solution, data)
    return FitResult(
        solution=solution,
        intercept=intercept,
        coefficients=coef,
        params=params,
        dataset=data,
        fitgrid=fitted,
        cv=cv_result,
        heuristic_objective=heuristic_objective,
        exact_status=exact_status,
        export_path=written,
    )
