import itertools

import numpy as np
import pytest

from robust_subsets import Dataset


def random_dataset(rng, n, p, outliers=0, shift=8.0) -> Dataset:
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: min(2, p)] = rng.choice([-1.0, 1.0], size=min(2, p))
    y = x @ beta + 0.5 * rng.standard_normal(n)
    if outliers:
        y[rng.choice(n, outliers, replace=False)] += shift
    return Dataset(x, y)


def brute_force_optimum(dataset: Dataset, k: int, h: int) -> float:
    """Double minimum over every support |J| <= k and inlier set |I| >= h."""
    x, y, n, p = dataset.x, dataset.y, dataset.n, dataset.p
    best = np.inf
    for size in range(k + 1):
        for support in itertools.combinations(range(p), size):
            for m in range(h, n + 1):
                for rows in itertools.combinations(range(n), m):
                    rows = list(rows)
                    if size:
                        a = x[np.ix_(rows, support)]
                        coef = np.linalg.lstsq(a, y[rows], rcond=None)[0]
                        r = y[rows] - a @ coef
                    else:
                        r = y[rows]
                    best = min(best, 0.5 * float(r @ r))
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
