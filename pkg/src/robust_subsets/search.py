"""Neighborhood search over a grid of (k, h) sparsity parameters."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterator, Optional, Sequence

import numpy as np

from .core import ContractError, Dataset, Solution, SparsityParams, estimate_lipschitz, hard_threshold
from .descent import DescentConfig, pbgd

log = logging.getLogger(__name__)

DEFAULT_MAX_SWEEPS = 50
ACCEPT_MARGIN = 1e-12
DEFAULT_H_FRACTIONS = ("0.75", "0.80", "0.85", "0.90", "0.95", "1.00")


def round_half_up(x) -> int:
    return int(Decimal(str(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def h_from_fraction(fraction, n: int) -> int:
    """``[fraction * n]`` with the bracket read as round-half-up."""
    return int((Decimal(str(fraction)) * n).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def scale_inliers(h: int, n_full: int, n_sub: int) -> int:
    """``h`` out of ``n_full`` rows as a proportional count out of ``n_sub`` (round-half-up)."""
    return min(n_sub, round_half_up(Decimal(h) * n_sub / n_full))


def _strictly_increasing(values: Sequence[int], name: str) -> tuple[int, ...]:
    vals = tuple(int(v) for v in values)
    if not vals:
        raise ContractError(f"{name} must not be empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ContractError(f"{name} must be strictly increasing, got {vals}")
    if vals[0] < 0:
        raise ContractError(f"{name} must be nonnegative, got {vals}")
    return vals


@dataclass(frozen=True)
class ParameterGrid:
    k_values: tuple
    h_values: tuple

    def __post_init__(self):
        object.__setattr__(self, "k_values", _strictly_increasing(self.k_values, "k_values"))
        object.__setattr__(self, "h_values", _strictly_increasing(self.h_values, "h_values"))

    @classmethod
    def standard(cls, n: int, k_max: int = 20) -> "ParameterGrid":
        """K = {0, ..., k_max} and H = {[0.75n], [0.80n], ..., n}."""
        return cls(tuple(range(k_max + 1)), tuple(h_from_fraction(f, n) for f in DEFAULT_H_FRACTIONS))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.k_values), len(self.h_values)

    def cells(self, n: int, p: int) -> Iterator[tuple[int, int, SparsityParams]]:
        """Valid cells in row-major order; cells with k > h or out of range are skipped."""
        for i, k in enumerate(self.k_values):
            for j, h in enumerate(self.h_values):
                if k <= h and k <= min(n - 1, p) and h <= n:
                    yield i, j, SparsityParams(k, h)

    def rescaled(self, n_full: int, n_sub: int) -> "ParameterGrid":
        """Map inlier counts for ``n_full`` rows to proportional counts for ``n_sub`` rows."""
        hs = sorted({scale_inliers(h, n_full, n_sub) for h in self.h_values})
        return ParameterGrid(self.k_values, tuple(hs))

    def to_dict(self) -> dict:
        return {"k_values": list(self.k_values), "h_values": list(self.h_values)}


@dataclass
class FitGrid:
    grid: ParameterGrid
    solutions: dict = field(default_factory=dict)  # (i, j) -> Solution
    initial_objectives: dict = field(default_factory=dict)  # (i, j) -> zero-init objective
    total_objective_trace: list = field(default_factory=list)
    sweeps_run: int = 0
    tau: float = 1.5

    def index_of(self, params: SparsityParams) -> tuple[int, int]:
        try:
            key = (self.grid.k_values.index(params.k), self.grid.h_values.index(params.h))
        except ValueError:
            raise ContractError(f"{params} is not on the grid") from None
        if key not in self.solutions:
            raise ContractError(f"{params} is not a solved cell of the grid")
        return key

    def solution(self, params: SparsityParams) -> Solution:
        return self.solutions[self.index_of(params)]

    def items(self) -> Iterator[tuple[SparsityParams, Solution]]:
        for (i, j), sol in sorted(self.solutions.items()):
            yield sol.params, sol

    def total_objective(self) -> float:
        return math.fsum(s.objective for s in self.solutions.values())


def _neighbours(i: int, j: int) -> tuple:
    return ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))


def neighborhood_search(
    dataset: Dataset,
    grid: ParameterGrid,
    config: DescentConfig = DescentConfig(),
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> FitGrid:
    """Fit every valid grid cell, then improve cells from neighbouring solutions.

    Phase one runs :func:`pbgd` from zero at every cell. Each sweep then visits
    cells in row-major order and restarts descent from every Manhattan
    neighbour's current solution, hard-thresholded to the cell's budgets. The
    best restart replaces the incumbent only if it improves the objective by
    more than ``ACCEPT_MARGIN``. Sweeps stop once the total objective over the
    grid improves by at most ``config.epsilon``, or after ``max_sweeps``.
    """
    n, p = dataset.n, dataset.p
    cells = {(i, j): params for i, j, params in grid.cells(n, p)}
    if not cells:
        raise ContractError(f"grid {grid.to_dict()} has no valid cell for n={n}, p={p}")
    bounds = config.bounds_for(dataset)
    zeros = (np.zeros(p), np.zeros(n))

    result = FitGrid(grid)
    for key, params in cells.items():
        sol = pbgd(dataset, params, zeros, config, lipschitz=bounds)
        result.solutions[key] = sol
        result.initial_objectives[key] = sol.objective
    result.total_objective_trace.append(result.total_objective())

    # a restart from an unchanged neighbour cannot beat an incumbent that only
    # ever decreases, so each (cell, neighbour version) pair is tried once
    version = {key: 0 for key in cells}
    tried: dict = {}
    for sweep in range(max_sweeps):
        for key, params in cells.items():
            best: Optional[Solution] = None
            for nb in _neighbours(*key):
                if nb not in cells or tried.get((key, nb)) == version[nb]:
                    continue
                tried[(key, nb)] = version[nb]
                src = result.solutions[nb]
                init = (hard_threshold(src.beta, params.k), hard_threshold(src.eta, n - params.h))
                cand = pbgd(dataset, params, init, config, lipschitz=bounds)
                if best is None or cand.objective < best.objective:
                    best = cand
            if best is not None and best.objective < result.solutions[key].objective - ACCEPT_MARGIN:
                result.solutions[key] = best
                version[key] += 1
        result.sweeps_run = sweep + 1
        total = result.total_objective()
        improvement = result.total_objective_trace[-1] - total
        result.total_objective_trace.append(total)
        if improvement <= config.epsilon:
            break
    log.debug("neighborhood search: %d sweeps, total objective %.6g", result.sweeps_run, total)
    return result


def warm_start_bundle(
    fitgrid: FitGrid, params: SparsityParams, tau: Optional[float] = None
) -> tuple[Solution, float, float]:
    """A cell's solution with Big-M bounds ``tau * ||beta||_inf`` and ``tau * ||eta||_inf``."""
    tau = fitgrid.tau if tau is None else tau
    if not tau >= 1.0:
        raise ContractError(f"tau must be >= 1, got {tau}")
    sol = fitgrid.solution(params)
    m_beta = tau * float(np.max(np.abs(sol.beta), initial=0.0))
    m_eta = tau * float(np.max(np.abs(sol.eta), initial=0.0))
    return sol, m_beta, m_eta
