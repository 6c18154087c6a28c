import math

import numpy as np
import pytest

from robust_subsets import (
    ContractError,
    Dataset,
    MioExport,
    ParameterGrid,
    SparsityParams,
    check_feasibility,
    export_mps,
    neighborhood_search,
    read_mps,
    read_warm_start,
    solve_exact,
    warm_start_bundle,
)
from robust_subsets.mps import MpsParseError, objective_value, warm_start_values

from conftest import random_dataset


def _bounds(sol, tau=1.5):
    return tau * np.abs(sol.beta).max(initial=0.0), tau * np.abs(sol.eta).max(initial=0.0)


def test_tiny_improved_structure(tmp_path):
    d = Dataset(np.array([[1.0], [2.0]]), np.array([1.0, 5.0]))
    params = SparsityParams(1, 1)
    export_mps(d, params, MioExport("improved", 2.0, 3.0), tmp_path / "t.mps")
    m = read_mps(tmp_path / "t.mps")
    assert sorted(m.binaries) == ["s0001", "z0001", "z0002"]
    assert sorted(set(m.columns) - set(m.binaries)) == ["b0001", "e0001", "e0002", "xi0001", "xi0002"]
    names = list(m.rows)
    assert sum(r.startswith(("BUB", "BLB")) for r in names) == 2
    assert sum(r.startswith(("EUB", "ELB")) for r in names) == 4
    assert sum(r.startswith("CARD") for r in names) == 2
    assert sum(r.startswith("LNK") for r in names) == 2
    assert m.row_counts() == {"N": 1, "L": 5, "G": 3, "E": 2}
    assert m.constant == pytest.approx(0.5 * 26.0)


def test_best_subsets_case_drops_eta(tmp_path, rng):
    d = random_dataset(rng, 6, 2)
    export_mps(d, SparsityParams(1, 6), MioExport("improved", 2.0, 0.0), tmp_path / "t.mps")
    m = read_mps(tmp_path / "t.mps")
    assert not any(c.startswith(("z", "e")) for c in m.columns)
    assert not any(r.startswith(("EUB", "ELB", "CARDE")) for r in m.rows)


@pytest.mark.parametrize("formulation", ["improved", "basic"])
def test_exact_solution_is_feasible_with_same_objective(tmp_path, rng, formulation):
    for trial in range(5):
        d = random_dataset(rng, 9, 3, outliers=2)
        params = SparsityParams(2, 7)
        opt = solve_exact(d, params)
        for tau in (1.0, 1.5):
            mb, me = _bounds(opt, tau)
            path = tmp_path / f"{formulation}{trial}.mps"
            side = export_mps(d, params, MioExport(formulation, mb, me, warm_start=opt, tau=tau), path)
            model = read_mps(path)
            values = read_warm_start(side)
            assert check_feasibility(model, values) == []
            assert objective_value(model, values) == pytest.approx(opt.objective, rel=1e-9, abs=1e-12)


def test_warm_start_bundle_bounds_keep_optimum_feasible(tmp_path, rng):
    d = random_dataset(rng, 10, 4, outliers=2)
    params = SparsityParams(2, 8)
    fg = neighborhood_search(d, ParameterGrid((1, 2, 3), (8, 10)))
    sol, mb, me = warm_start_bundle(fg, params, 1.0)
    side = export_mps(d, params, MioExport("improved", mb, me, warm_start=sol), tmp_path / "w.mps")
    assert check_feasibility(read_mps(tmp_path / "w.mps"), read_warm_start(side)) == []


def test_too_small_big_m_is_detected(tmp_path, rng):
    d = random_dataset(rng, 9, 3, outliers=2)
    params = SparsityParams(2, 7)
    opt = solve_exact(d, params)
    mb, me = _bounds(opt, 1.0)
    export = MioExport("improved", 0.5 * mb, me)
    export_mps(d, params, export, tmp_path / "s.mps")
    values = warm_start_values(d, opt, export, params)
    assert check_feasibility(read_mps(tmp_path / "s.mps"), values)


def test_export_is_deterministic(tmp_path, rng):
    d = random_dataset(rng, 8, 3, outliers=1)
    params = SparsityParams(2, 6)
    opt = solve_exact(d, params)
    mio = MioExport("improved", *_bounds(opt), warm_start=opt)
    export_mps(d, params, mio, tmp_path / "a.mps")
    export_mps(d, params, mio, tmp_path / "b.mps")
    assert (tmp_path / "a.mps").read_bytes() == (tmp_path / "b.mps").read_bytes()
    assert (tmp_path / "a.mst").read_bytes() == (tmp_path / "b.mst").read_bytes()


def test_invalid_big_m_and_paths(tmp_path, rng):
    with pytest.raises(ContractError):
        MioExport("improved", math.inf, 1.0)
    with pytest.raises(ContractError):
        MioExport("improved", 1.0, -1.0)
    with pytest.raises(ContractError):
        MioExport("sos", 1.0, 1.0)
    d = random_dataset(rng, 5, 2)
    with pytest.raises(OSError):
        export_mps(d, SparsityParams(1, 4), MioExport(), tmp_path / "missing" / "x.mps")


def test_parser_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.mps"
    bad.write_text("NAME X\nROWS\n N OBJ\nCOLUMNS\n    x1  NOPE  1.0\nENDATA\n")
    with pytest.raises(MpsParseError):
        read_mps(bad)
    bad.write_text("NAME X\nWHAT\n")
    with pytest.raises(MpsParseError):
        read_mps(bad)


def test_external_solver_matches_oracle(tmp_path, rng):
    scip = pytest.importorskip("pyscipopt")
    for trial in range(4):
        n, p = int(rng.integers(5, 9)), int(rng.integers(2, 4))
        d = random_dataset(rng, n, p, outliers=1)
        params = SparsityParams(2, n - 2)
        opt = solve_exact(d, params)
        for formulation in ("improved", "basic"):
            path = tmp_path / f"{formulation}{trial}.mps"
            export_mps(d, params, MioExport(formulation, *_bounds(opt)), path)
            model = scip.Model()
            model.hideOutput()
            model.readProblem(str(path))
            model.setParam("numerics/feastol", 1e-9)
            model.setParam("limits/gap", 0.0)
            model.setParam("limits/absgap", 0.0)
            model.optimize()
            assert model.getStatus() == "optimal"
            assert model.getObjVal() == pytest.approx(opt.objective, rel=1e-6, abs=1e-9)
