import numpy as np
import pytest

from robust_subsets import (
    ContractError,
    Dataset,
    DescentConfig,
    FitGrid,
    ParameterGrid,
    Solution,
    SparsityParams,
    neighborhood_search,
    pbgd,
    solve_exact,
    warm_start_bundle,
)
from robust_subsets.search import h_from_fraction, round_half_up, scale_inliers

from conftest import random_dataset


def test_round_half_up():
    assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.4999)] == [1, 2, 3, 2]
    assert h_from_fraction("0.75", 10) == 8
    assert h_from_fraction("0.85", 10) == 9


def test_standard_grid():
    g = ParameterGrid.standard(100)
    assert g.k_values == tuple(range(21))
    assert g.h_values == (75, 80, 85, 90, 95, 100)
    assert ParameterGrid.standard(50).h_values == (38, 40, 43, 45, 48, 50)


def test_grid_validation_and_cells():
    with pytest.raises(ContractError):
        ParameterGrid((2, 1), (5,))
    with pytest.raises(ContractError):
        ParameterGrid((), (5,))
    with pytest.raises(ContractError):
        ParameterGrid((-1, 0), (5,))
    g = ParameterGrid((0, 3, 6), (2, 5))
    cells = [(i, j, c.k, c.h) for i, j, c in g.cells(10, 5)]
    assert cells == [(0, 0, 0, 2), (0, 1, 0, 5), (1, 1, 3, 5)]


def test_rescaled_grid():
    assert scale_inliers(90, 100, 90) == 81
    assert scale_inliers(100, 100, 90) == 90
    assert ParameterGrid((0,), (75, 100)).rescaled(100, 90).h_values == (68, 90)


def test_one_cell_grid_matches_single_descent(rng):
    d = random_dataset(rng, 20, 4, outliers=2)
    params = SparsityParams(2, 17)
    fg = neighborhood_search(d, ParameterGrid((2,), (17,)))
    assert fg.sweeps_run <= 1
    single = pbgd(d, params)
    np.testing.assert_array_equal(fg.solution(params).beta, single.beta)


def test_unconstrained_cell_is_least_squares(rng):
    d = Dataset(rng.standard_normal((20, 3)), rng.standard_normal(20))
    fg = neighborhood_search(d, ParameterGrid((1, 2, 3), (18, 20)))
    coef = np.linalg.lstsq(d.x, d.y, rcond=None)[0]
    r = d.y - d.x @ coef
    assert fg.solution(SparsityParams(3, 20)).objective == pytest.approx(0.5 * r @ r, rel=1e-10)


def test_cells_bracketed_by_oracle_and_cold_start(rng):
    for _ in range(5):
        d = random_dataset(rng, 12, 4, outliers=2)
        grid = ParameterGrid((1, 2), (10, 12))
        fg = neighborhood_search(d, grid)
        for (i, j), sol in fg.solutions.items():
            assert sol.is_feasible()
            opt = solve_exact(d, sol.params).objective
            assert opt - 1e-9 <= sol.objective <= fg.initial_objectives[(i, j)] + 1e-12
        assert np.all(np.diff(fg.total_objective_trace) <= 0)


def test_determinism(rng):
    d = random_dataset(rng, 30, 6, outliers=3)
    grid = ParameterGrid(range(5), (24, 27, 30))
    a, b = neighborhood_search(d, grid), neighborhood_search(d, grid)
    assert a.total_objective_trace == b.total_objective_trace
    for key in a.solutions:
        np.testing.assert_array_equal(a.solutions[key].beta, b.solutions[key].beta)
        np.testing.assert_array_equal(a.solutions[key].eta, b.solutions[key].eta)


def test_sweep_count_is_modest(rng):
    d = random_dataset(rng, 60, 10, outliers=6)
    fg = neighborhood_search(d, ParameterGrid.standard(60, k_max=10))
    assert fg.sweeps_run <= 20


def test_empty_grid_is_rejected(rng):
    d = random_dataset(rng, 5, 2)
    with pytest.raises(ContractError):
        neighborhood_search(d, ParameterGrid((3,), (4,)))


def _grid_with(beta, eta, params):
    fg = FitGrid(ParameterGrid((params.k,), (params.h,)))
    fg.solutions[(0, 0)] = Solution(np.array(beta), np.array(eta), 0.0, params)
    return fg


def test_warm_start_bundle_bounds():
    fg = _grid_with([2.0, 0.0, -3.0], [0.0, 0.0, 0.0, 0.0], SparsityParams(2, 4))
    sol, mb, me = warm_start_bundle(fg, SparsityParams(2, 4), 1.5)
    assert mb == 4.5 and me == 0.0
    fg.tau = 1.0
    assert warm_start_bundle(fg, SparsityParams(2, 4))[1] == 3.0
    with pytest.raises(ContractError):
        warm_start_bundle(fg, SparsityParams(2, 4), 0.5)
    with pytest.raises(ContractError):
        warm_start_bundle(fg, SparsityParams(1, 4))
