"""Exact solutions for desk-scale instances by combinatorial enumeration.

The optimum of the robust subsets problem is the double minimum over a
support ``J`` with ``|J| <= k`` and an inlier set ``I`` with ``|I| >= h`` of
the restricted least-squares objective. Enlarging ``J`` or shrinking ``I``
never hurts, so it suffices to enumerate ``|J| = k`` and ``|I| = h``.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .core import ContractError, Dataset, Solution, SparsityParams, Status

DEFAULT_MAX_ENUMERATION = 20_000_000
_CHUNK = 4096


class EnumerationCapError(RuntimeError):
    """The instance needs more combinations than the configured cap."""

    def __init__(self, required: int, cap: int):
        self.required = required
        self.cap = cap
        super().__init__(
            f"exact enumeration needs {required} combinations, above the cap of {cap} "
            "(raise it with RSS_MAX_ENUM)"
        )


class ZeroObjectiveError(ContractError):
    """The reference objective is zero: an exact fit, so no relative gap exists."""


def default_cap() -> int:
    return int(os.environ.get("RSS_MAX_ENUM", DEFAULT_MAX_ENUMERATION))


@dataclass(frozen=True)
class ExactConfig:
    max_support_enumeration: int = -1  # -1: read RSS_MAX_ENUM or the default
    enumeration_mode: str = "full"  # "full" or "support_lts"
    workers: int = 1

    def __post_init__(self):
        if self.enumeration_mode not in ("full", "support_lts"):
            raise ContractError(f"unknown enumeration mode {self.enumeration_mode!r}")
        if self.max_support_enumeration == -1:
            object.__setattr__(self, "max_support_enumeration", default_cap())

    @property
    def cap(self) -> int:
        return self.max_support_enumeration


def enumeration_count(n: int, p: int, params: SparsityParams) -> int:
    return math.comb(p, min(params.k, p)) * math.comb(n, params.h)


def _batch_lstsq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Objectives ``0.5 * min ||a_m c - b_m||^2`` for a stack of small systems."""
    if a.shape[2] == 0:
        return 0.5 * np.einsum("mh,mh->m", b, b)
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diagonal(r, axis1=1, axis2=2))
    scale = np.maximum(np.abs(r).max(axis=(1, 2)), 1.0)
    ok = diag.min(axis=1) > 1e-10 * scale
    out = np.empty(a.shape[0])
    if ok.any():
        qtb = np.einsum("mhk,mh->mk", q[ok], b[ok])
        coef = np.linalg.solve(r[ok], qtb[..., None])[..., 0]
        res = b[ok] - np.einsum("mhk,mk->mh", a[ok], coef)
        out[ok] = 0.5 * np.einsum("mh,mh->m", res, res)
    for m in np.flatnonzero(~ok):
        coef = scipy.linalg.lstsq(a[m], b[m], lapack_driver="gelsy")[0]
        res = b[m] - a[m] @ coef
        out[m] = 0.5 * float(res @ res)
    return out


def _best_inliers_full(xj: np.ndarray, y: np.ndarray, h: int, incumbent: float):
    n = y.shape[0]
    best_obj, best_rows = incumbent, None
    combos = itertools.combinations(range(n), h)
    while True:
        chunk = np.array(list(itertools.islice(combos, _CHUNK)), dtype=np.intp).reshape(-1, h)
        if chunk.shape[0] == 0:
            break
        objs = _batch_lstsq(xj[chunk], y[chunk])
        m = int(np.argmin(objs))
        if objs[m] < best_obj:
            best_obj, best_rows = float(objs[m]), chunk[m]
    return best_obj, best_rows


def _ls_objective(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[1] == 0:
        return 0.5 * float(b @ b)
    coef = scipy.linalg.lstsq(a, b, lapack_driver="gelsy")[0]
    r = b - a @ coef
    return 0.5 * float(r @ r)


def _best_inliers_bnb(xj: np.ndarray, y: np.ndarray, h: int, incumbent: float):
    """Exact least trimmed squares on fixed columns by depth-first branch and bound.

    Rows are added one at a time; the least-squares objective over the rows
    chosen so far can only grow as rows are added, so it bounds every
    completion from below.
    """
    n = y.shape[0]
    if xj.shape[1]:
        coef = scipy.linalg.lstsq(xj, y, lapack_driver="gelsy")[0]
        order = np.argsort(np.abs(y - xj @ coef), kind="stable")
    else:
        order = np.argsort(np.abs(y), kind="stable")
    best = [incumbent, None]

    def visit(chosen: list, pos: int, bound: float):
        if len(chosen) == h:
            if bound < best[0]:
                best[0], best[1] = bound, np.sort(np.array(chosen, dtype=np.intp))
            return
        if n - pos < h - len(chosen):
            return
        row = order[pos]
        with_row = chosen + [row]
        obj = _ls_objective(xj[with_row], y[with_row])
        if obj < best[0]:
            visit(with_row, pos + 1, obj)
        visit(chosen, pos + 1, bound)

    visit([], 0, 0.0)
    return best[0], best[1]


def solve_exact(
    dataset: Dataset, params: SparsityParams, config: Optional[ExactConfig] = None
) -> Solution:
    """Global minimizer of the robust subsets problem by enumeration.

    Raises :class:`EnumerationCapError` when the instance needs more
    combinations than ``config.cap``.
    """
    config = config or ExactConfig()
    n, p = dataset.n, dataset.p
    params.check(n, p)
    required = enumeration_count(n, p, params)
    if required > config.cap:
        raise EnumerationCapError(required, config.cap)
    x, y = dataset.x, dataset.y
    k = min(params.k, p)
    inner = _best_inliers_full if config.enumeration_mode == "full" else _best_inliers_bnb
    supports = [np.array(s, dtype=np.intp) for s in itertools.combinations(range(p), k)]

    def scan(block):
        best = (math.inf, None, None)
        for pos, support in block:
            obj, rows = inner(x[:, support], y, params.h, best[0])
            if rows is not None and obj < best[0]:
                best = (obj, pos, rows)
        return best

    indexed = list(enumerate(supports))
    workers = max(1, int(config.workers))
    if workers == 1:
        results = [scan(indexed)]
    else:
        blocks = [indexed[w::workers] for w in range(workers)]
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(scan, blocks))
    # lowest objective wins; ties go to the earliest support in enumeration order
    results = [r for r in results if r[1] is not None]
    obj, pos, rows = min(results, key=lambda r: (r[0], r[1]))
    support = supports[pos]

    beta = np.zeros(p)
    if support.size:
        beta[support] = scipy.linalg.lstsq(x[np.ix_(rows, support)], y[rows], lapack_driver="gelsy")[0]
    eta = np.zeros(n)
    out = np.setdiff1d(np.arange(n), rows)
    eta[out] = y[out] - x[out] @ beta
    r = y - x @ beta - eta
    return Solution(beta, eta, 0.5 * float(r @ r), params, status=Status.EXACT_OPTIMAL)


def relative_objective_gap(attained: float, best_known: float) -> float:
    """``(attained - best_known) / best_known``."""
    if best_known == 0:
        raise ZeroObjectiveError("best known objective is 0 (exact fit); relative gap undefined")
    if not best_known > 0:
        raise ContractError(f"best_known must be positive, got {best_known}")
    return (attained - best_known) / best_known
