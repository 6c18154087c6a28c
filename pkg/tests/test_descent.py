import itertools

import numpy as np
import pytest

from robust_subsets import (
    ContractError,
    Dataset,
    DescentConfig,
    SparsityParams,
    Status,
    check_stationarity,
    estimate_lipschitz,
    objective,
    pbgd,
    polish,
    solve_exact,
)
from robust_subsets.descent import _pbgd_kernel

from conftest import random_dataset

RAW = DescentConfig(polish=False, record_steps=True)


def test_config_validation():
    with pytest.raises(ContractError):
        DescentConfig(epsilon=0)
    with pytest.raises(ContractError):
        DescentConfig(max_iterations=0)


def test_unconstrained_cell_is_least_squares(rng):
    d = Dataset(rng.standard_normal((30, 4)), rng.standard_normal(30))
    sol = pbgd(d, SparsityParams(4, 30))
    coef = np.linalg.solve(d.x.T @ d.x, d.x.T @ d.y)
    r = d.y - d.x @ coef
    assert abs(sol.objective - 0.5 * r @ r) < 1e-8
    np.testing.assert_allclose(sol.beta, coef, atol=1e-8)


def test_zero_response_gives_zero_solution(rng):
    d = Dataset(rng.standard_normal((8, 3)), np.zeros(8))
    sol = pbgd(d, SparsityParams(2, 6))
    assert sol.objective == 0.0 and sol.iterations == 1
    assert not sol.beta.any() and not sol.eta.any()


def test_infeasible_init_is_rejected(rng):
    d = random_dataset(rng, 10, 4)
    with pytest.raises(ContractError):
        pbgd(d, SparsityParams(1, 8), (np.ones(4), np.zeros(10)))
    with pytest.raises(ContractError):
        pbgd(d, SparsityParams(1, 8), (np.zeros(4), np.ones(10)))
    with pytest.raises(ContractError):
        pbgd(d, SparsityParams(1, 8), (np.zeros(3), np.zeros(10)))


def test_iteration_cap_is_reported(rng):
    d = random_dataset(rng, 40, 6, outliers=4)
    sol = pbgd(d, SparsityParams(2, 34), config=DescentConfig(max_iterations=1))
    assert sol.iterations == 1 and not sol.converged
    assert sol.is_feasible()


def test_monotone_feasible_and_sufficient_decrease(rng):
    for _ in range(60):
        n, p = int(rng.integers(8, 25)), int(rng.integers(2, 8))
        d = random_dataset(rng, n, p, outliers=int(rng.integers(0, 3)))
        k, h = int(rng.integers(0, p + 1)), int(rng.integers(max(1, n - 4), n + 1))
        k = min(k, h, n - 1)
        bounds = estimate_lipschitz(d, strict=True)
        l_beta = np.linalg.eigvalsh(d.x.T @ d.x)[-1]
        sol = pbgd(d, SparsityParams(k, h), config=RAW, lipschitz=bounds)
        trace, steps = sol.trace, sol.step_sq
        assert np.all(np.diff(trace) <= 1e-12)
        assert np.count_nonzero(sol.beta) <= k and np.count_nonzero(sol.eta) <= n - h
        decrease = trace[:-1] - trace[1:]
        need = 0.5 * (bounds.l_beta_bar - l_beta) * steps[:, 0] + 0.5 * (bounds.l_eta_bar - 1.0) * steps[:, 1]
        assert np.all(decrease >= need - 1e-10 * np.maximum(1.0, trace[:-1]))


def test_every_iterate_is_feasible(rng):
    # replay the kernel one iteration at a time
    d = random_dataset(rng, 15, 5, outliers=2)
    bounds = estimate_lipschitz(d)
    beta, eta = np.zeros(5), np.zeros(15)
    for _ in range(30):
        beta, eta, *_ = _pbgd_kernel(d.x, d.y, beta, eta, 2, 3, bounds.l_beta_bar, bounds.l_eta_bar, 1e-8, 1)
        assert np.count_nonzero(beta) <= 2 and np.count_nonzero(eta) <= 3


def test_eta_update_is_exact_minimization(rng):
    for _ in range(30):
        n = int(rng.integers(4, 11))
        d = random_dataset(rng, n, 3, outliers=2)
        m = int(rng.integers(0, n))
        beta = rng.standard_normal(3)
        eta0 = np.zeros(n)
        bounds = estimate_lipschitz(d)
        _, eta, *_ = _pbgd_kernel(d.x, d.y, beta, eta0, 3, m, np.inf, bounds.l_eta_bar, 1e-8, 1)
        best = np.inf
        for support in itertools.combinations(range(n), m):
            e = np.zeros(n)
            r = d.y - d.x @ beta
            e[list(support)] = r[list(support)]
            best = min(best, objective(d, beta, e))
        assert objective(d, beta, eta) == pytest.approx(best, rel=1e-12, abs=1e-14)


def test_pbgd_dominated_by_exact_oracle(rng):
    for _ in range(10):
        d = random_dataset(rng, 12, 4, outliers=2)
        params = SparsityParams(2, 10)
        opt = solve_exact(d, params).objective
        sol = pbgd(d, params)
        assert sol.objective >= opt - 1e-9
        assert sol.objective <= sol.trace[0] + 1e-12


def test_polish_idempotent_and_normal_equations(rng):
    d = random_dataset(rng, 20, 5, outliers=3)
    raw = pbgd(d, SparsityParams(3, 16), config=RAW)
    pol = polish(d, raw)
    assert pol.objective <= raw.objective + 1e-12
    assert pol.status is Status.POLISHED
    rows, cols = pol.inlier_set, pol.support_beta
    a = d.x[np.ix_(rows, cols)]
    np.testing.assert_allclose(a.T @ (d.y[rows] - a @ pol.beta[cols]), 0.0, atol=1e-8)
    again = polish(d, pol)
    np.testing.assert_allclose(again.beta, pol.beta, atol=1e-12)
    np.testing.assert_allclose(again.eta, pol.eta, atol=1e-12)
    assert abs(again.objective - pol.objective) <= 1e-12


def test_polish_exact_univariate_fit(rng):
    x = rng.standard_normal((6, 2))
    d = Dataset(x, x[:, 0].copy())
    raw = pbgd(d, SparsityParams(1, 6), config=DescentConfig(polish=False, max_iterations=1))
    sol = polish(d, raw)
    assert sol.support_beta.tolist() == [0]
    assert sol.beta[0] == pytest.approx(1.0, abs=1e-12)
    assert sol.objective < 1e-20


def test_polish_flags_rank_deficiency():
    x = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [1.0, 0.0]])
    y = np.array([1.0, 2.0, 3.0, 5.0])
    d = Dataset(x, y)
    from robust_subsets import Solution

    start = Solution(np.array([0.5, 0.1]), np.array([0, 0, 0, 5.0]), 0.0, SparsityParams(2, 3))
    start = Solution(start.beta, start.eta, objective(d, start.beta, start.eta), start.params)
    sol = polish(d, start)
    assert sol.degenerate
    assert sol.objective <= start.objective


def test_stationarity_reports(rng):
    d = Dataset(rng.standard_normal((15, 3)), rng.standard_normal(15))
    ls = pbgd(d, SparsityParams(3, 15))
    rep = check_stationarity(d, ls)
    assert rep.beta_residual < 1e-10 and rep.eta_residual < 1e-10

    d = random_dataset(rng, 10, 4, outliers=2)
    opt = solve_exact(d, SparsityParams(2, 8))
    assert check_stationarity(d, opt, DescentConfig(epsilon=1e-8)).is_epsilon_optimal

    from robust_subsets import Solution

    beta = np.array([5.0, 0.0, 0.0, 0.0])
    junk = Solution(beta, np.zeros(10), objective(d, beta, np.zeros(10)), SparsityParams(2, 8))
    rep = check_stationarity(d, junk)
    assert max(rep.beta_residual, rep.eta_residual) > 0


def test_residuals_shrink_with_epsilon(rng):
    d = random_dataset(rng, 30, 6, outliers=3)
    params = SparsityParams(6, 30)
    res = []
    for eps in (1e-2, 1e-5, 1e-9):
        cfg = DescentConfig(epsilon=eps, polish=False)
        sol = pbgd(d, params, config=cfg)
        rep = check_stationarity(d, sol, cfg)
        res.append(rep.beta_residual + rep.eta_residual)
    assert res[0] >= res[1] >= res[2]
