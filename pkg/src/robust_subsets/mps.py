"""Export of the Big-M mixed-integer program to MPS, plus a reader and checker.

Two formulations are written:

``basic``
    minimize 0.5 * ||y - X beta - eta||^2 with Big-M rows tying beta to
    binaries ``s`` and eta to binaries ``z``, and cardinality rows
    ``sum(s) <= k``, ``sum(z) <= n - h``.
``improved``
    the same constraints plus an auxiliary ``xi = X beta + eta`` so that the
    quadratic objective ``0.5 * ||y - xi||^2`` involves only ``n`` variables,
    with box bounds on beta, eta and xi.

Files use the fixed-column MPS layout with a ``QMATRIX`` section (the full
symmetric matrix ``Q`` of an objective ``c'x + 0.5 x'Qx``). Names are at most
eight characters, numbers are printed at full precision and separated by
whitespace, so free-format readers parse them too. The constant
``0.5 * sum(y^2)`` is stored as the negated right-hand side of the objective
row, the convention shared by CPLEX, Gurobi, HiGHS and SCIP.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ContractError, Dataset, Solution, SparsityParams

OBJ_ROW = "OBJ"


@dataclass(frozen=True)
class MioExport:
    formulation: str = "improved"
    big_m_beta: float = 1.0
    big_m_eta: float = 1.0
    big_m_xi: Optional[float] = None  # None: implied bound from the other two
    warm_start: Optional[Solution] = None
    tau: Optional[float] = None  # recorded in the header only

    def __post_init__(self):
        if self.formulation not in ("basic", "improved"):
            raise ContractError(f"unknown formulation {self.formulation!r}")
        for name in ("big_m_beta", "big_m_eta", "big_m_xi"):
            v = getattr(self, name)
            if v is None:
                continue
            if not math.isfinite(v):
                raise ContractError(f"{name} must be finite, got {v}")
            if v < 0:
                raise ContractError(f"{name} must be nonnegative, got {v}")


def _names(prefix: str, count: int) -> list[str]:
    width = max(4, len(str(count)))
    return [f"{prefix}{i + 1:0{width}d}" for i in range(count)]


def _num(v: float) -> str:
    return repr(float(v))


def _implied_xi_bound(x: np.ndarray, k: int, m_beta: float, m_eta: float) -> float:
    """``max_i`` of the sum of the ``k`` largest ``|x_ij|`` times ``M_beta`` plus ``M_eta``."""
    if k == 0 or m_beta == 0:
        return m_eta
    top = -np.sort(-np.abs(x), axis=1)[:, :k]
    return float(top.sum(axis=1).max()) * m_beta + m_eta


@dataclass
class _Program:
    rows: dict = field(default_factory=dict)  # name -> sense
    columns: dict = field(default_factory=dict)  # name -> {row: coef}
    integer: set = field(default_factory=set)
    rhs: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)  # name -> (type, value)
    q: list = field(default_factory=list)  # (col, col, value)

    def column(self, name: str) -> dict:
        return self.columns.setdefault(name, {})


def _blocks(dataset: Dataset, params: SparsityParams, export: MioExport) -> tuple[bool, bool]:
    """Whether beta and eta appear in the program; a zero budget or bound fixes them at 0."""
    with_beta = params.k > 0 and export.big_m_beta > 0
    with_eta = params.h < dataset.n and export.big_m_eta > 0
    return with_beta, with_eta


def _build(dataset: Dataset, params: SparsityParams, export: MioExport) -> tuple[_Program, dict]:
    x, y = dataset.x, dataset.y
    n, p = dataset.n, dataset.p
    improved = export.formulation == "improved"
    with_beta, with_eta = _blocks(dataset, params, export)
    m_b, m_e = export.big_m_beta, export.big_m_eta

    b = _names("b", p) if with_beta else []
    s = _names("s", p) if with_beta else []
    e = _names("e", n) if with_eta else []
    z = _names("z", n) if with_eta else []
    xi = _names("xi", n) if improved else []

    prog = _Program()
    prog.rows[OBJ_ROW] = "N"
    for col in xi + b + e:
        prog.column(col)

    if with_beta:
        ub, lb = _names("BUB", p), _names("BLB", p)
        for j in range(p):
            prog.rows[ub[j]] = "L"
            prog.rows[lb[j]] = "G"
            prog.column(b[j]).update({ub[j]: 1.0, lb[j]: 1.0})
            prog.column(s[j]).update({ub[j]: -m_b, lb[j]: m_b})
        prog.rows["CARDB"] = "L"
        prog.rhs["CARDB"] = float(params.k)
        for j in range(p):
            prog.column(s[j])["CARDB"] = 1.0
    if with_eta:
        ub, lb = _names("EUB", n), _names("ELB", n)
        for i in range(n):
            prog.rows[ub[i]] = "L"
            prog.rows[lb[i]] = "G"
            prog.column(e[i]).update({ub[i]: 1.0, lb[i]: 1.0})
            prog.column(z[i]).update({ub[i]: -m_e, lb[i]: m_e})
        prog.rows["CARDE"] = "L"
        prog.rhs["CARDE"] = float(n - params.h)
        for i in range(n):
            prog.column(z[i])["CARDE"] = 1.0
    prog.integer.update(s + z)

    if improved:
        link = _names("LNK", n)
        for i in range(n):
            prog.rows[link[i]] = "E"
            prog.column(xi[i])[link[i]] = 1.0
            prog.column(xi[i])[OBJ_ROW] = -y[i]
            for j in range(p if with_beta else 0):
                if x[i, j] != 0:
                    prog.column(b[j])[link[i]] = -x[i, j]
            if with_eta:
                prog.column(e[i])[link[i]] = -1.0
            prog.q.append((xi[i], xi[i], 1.0))
        m_xi = export.big_m_xi
        if m_xi is None:
            m_xi = _implied_xi_bound(x, params.k, m_b if with_beta else 0.0, m_e if with_eta else 0.0)
        for col in xi:
            prog.bounds[col] = [("LO", -m_xi), ("UP", m_xi)]
        for col in b:
            prog.bounds[col] = [("LO", -m_b), ("UP", m_b)]
        for col in e:
            prog.bounds[col] = [("LO", -m_e), ("UP", m_e)]
    else:
        m_xi = None
        xty = x.T @ y
        for j, col in enumerate(b):
            if xty[j] != 0:
                prog.column(col)[OBJ_ROW] = -xty[j]
        for i, col in enumerate(e):
            if y[i] != 0:
                prog.column(col)[OBJ_ROW] = -y[i]
        if with_beta:
            gram = x.T @ x
            for j1 in range(p):
                for j2 in range(p):
                    if gram[j1, j2] != 0:
                        prog.q.append((b[j1], b[j2], gram[j1, j2]))
        if with_beta and with_eta:
            for j in range(p):
                for i in range(n):
                    if x[i, j] != 0:
                        prog.q.append((b[j], e[i], x[i, j]))
                        prog.q.append((e[i], b[j], x[i, j]))
        for col in e:
            prog.q.append((col, col, 1.0))
        for col in b + e:
            prog.bounds[col] = [("FR", None)]
    for col in s + z:
        prog.bounds[col] = [("BV", None)]
    prog.rhs[OBJ_ROW] = -0.5 * float(y @ y)
    meta = {"m_xi": m_xi, "with_beta": with_beta, "with_eta": with_eta}
    return prog, meta


def _field_line(code: str, f2: str, f3: str = "", f4: str = "") -> str:
    line = f" {code:<2} {f2:<8}"
    if f3:
        line += f"  {f3:<8}"
    if f4:
        line += f"  {f4}"
    return line.rstrip()


def warm_start_values(dataset: Dataset, solution: Solution, export: MioExport, params: SparsityParams) -> dict:
    """Variable assignment in the exported program that reproduces ``solution``."""
    n, p = dataset.n, dataset.p
    with_beta, with_eta = _blocks(dataset, params, export)
    values = {}
    if with_beta:
        for j, (bn, sn) in enumerate(zip(_names("b", p), _names("s", p))):
            values[bn] = float(solution.beta[j])
            values[sn] = 1.0 if solution.beta[j] != 0 else 0.0
    if with_eta:
        for i, (en, zn) in enumerate(zip(_names("e", n), _names("z", n))):
            values[en] = float(solution.eta[i])
            values[zn] = 1.0 if solution.eta[i] != 0 else 0.0
    if export.formulation == "improved":
        beta = solution.beta if with_beta else np.zeros(p)
        eta = solution.eta if with_eta else np.zeros(n)
        fitted = dataset.x @ beta + eta
        for i, name in enumerate(_names("xi", n)):
            values[name] = float(fitted[i])
    return values


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def warm_start_path(path) -> Path:
    return Path(path).with_suffix(".mst")


def export_mps(dataset: Dataset, params: SparsityParams, export: MioExport, path) -> Optional[Path]:
    """Write the program for ``params`` to ``path``.

    When ``export.warm_start`` is set, a companion ``.mst`` file with one
    ``name value`` line per variable is written next to it; its path is
    returned.
    """
    params.check(dataset.n, dataset.p)
    path = Path(path)
    prog, meta = _build(dataset, params, export)
    lines = [
        "* robust subset selection mixed-integer program",
        f"* formulation: {export.formulation}",
        f"* n={dataset.n} p={dataset.p} k={params.k} h={params.h}",
        f"* big_m_beta={_num(export.big_m_beta)} big_m_eta={_num(export.big_m_eta)}"
        + (f" big_m_xi={_num(meta['m_xi'])}" if meta["m_xi"] is not None else ""),
        f"* tau={'unset' if export.tau is None else _num(export.tau)}"
        " (Big-M values are heuristic estimates, not certified bounds)",
        "* objective: c'x + 0.5 x'Qx + constant; constant = -(RHS of the OBJ row)",
        "NAME          RSS",
        "ROWS",
    ]
    lines += [_field_line(sense, name) for name, sense in prog.rows.items()]
    lines.append("COLUMNS")
    in_int = False
    for col, entries in prog.columns.items():
        is_int = col in prog.integer
        if is_int != in_int:
            marker = "'INTORG'" if is_int else "'INTEND'"
            lines.append(f"    MARKER                 'MARKER'                 {marker}")
            in_int = is_int
        if not entries:
            # keep variables that appear nowhere else (e.g. an unused column)
            lines.append(_field_line("", col, OBJ_ROW, "0.0"))
        for row, value in entries.items():
            lines.append(_field_line("", col, row, _num(value)))
    if in_int:
        lines.append("    MARKER                 'MARKER'                 'INTEND'")
    lines.append("RHS")
    for row, value in prog.rhs.items():
        if value != 0:
            lines.append(_field_line("", "RHS", row, _num(value)))
    lines.append("BOUNDS")
    for col, specs in prog.bounds.items():
        for kind, value in specs:
            lines.append(_field_line(kind, "BND", col, "" if value is None else _num(value)))
    lines.append("QMATRIX")
    for c1, c2, value in prog.q:
        lines.append(_field_line("", c1, c2, _num(value)))
    lines.append("ENDATA")
    atomic_write(path, "\n".join(lines) + "\n")
    if export.warm_start is None:
        return None
    values = warm_start_values(dataset, export.warm_start, export, params)
    side = warm_start_path(path)
    body = ["# warm start: variable value"] + [f"{k} {_num(v)}" for k, v in values.items()]
    atomic_write(side, "\n".join(body) + "\n")
    return side


@dataclass
class MpsModel:
    """A parsed MPS program: ``min c'x + 0.5 x'Qx + constant`` subject to rows and bounds."""

    name: str = ""
    objective_row: str = ""
    rows: dict = field(default_factory=dict)  # name -> sense
    columns: list = field(default_factory=list)
    integer: set = field(default_factory=set)
    coefficients: dict = field(default_factory=dict)  # (row, col) -> value
    objective: dict = field(default_factory=dict)  # col -> value
    rhs: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)  # col -> [lo, hi]
    quadratic: dict = field(default_factory=dict)  # (col, col) -> value, full symmetric
    constant: float = 0.0

    @property
    def binaries(self) -> list:
        return [c for c in self.columns if c in self.integer and self.bounds[c] == [0.0, 1.0]]

    def row_counts(self) -> dict:
        counts: dict = {}
        for sense in self.rows.values():
            counts[sense] = counts.get(sense, 0) + 1
        return counts


class MpsParseError(ValueError):
    pass


def read_mps(path) -> MpsModel:
    """Parse the subset of MPS written by :func:`export_mps` (and common variants)."""
    model = MpsModel()
    section = None
    in_int = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("*"):
                continue
            if not line[0].isspace():
                head = line.split()
                section = head[0].upper()
                if section == "NAME":
                    model.name = head[1] if len(head) > 1 else ""
                elif section == "ENDATA":
                    break
                elif section not in ("ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "QMATRIX", "QUADOBJ", "OBJSENSE"):
                    raise MpsParseError(f"line {lineno}: unknown section {section!r}")
                continue
            tok = line.split()
            try:
                if section == "ROWS":
                    sense, name = tok[0].upper(), tok[1]
                    model.rows[name] = sense
                    if sense == "N" and not model.objective_row:
                        model.objective_row = name
                elif section == "COLUMNS":
                    if len(tok) >= 3 and tok[1] == "'MARKER'":
                        in_int = tok[2] == "'INTORG'"
                        continue
                    col = tok[0]
                    if col not in model.bounds:
                        model.columns.append(col)
                        model.bounds[col] = [0.0, math.inf]
                        if in_int:
                            model.integer.add(col)
                    for row, val in zip(tok[1::2], tok[2::2]):
                        if row not in model.rows:
                            raise MpsParseError(f"line {lineno}: unknown row {row!r}")
                        v = float(val)
                        if row == model.objective_row:
                            model.objective[col] = model.objective.get(col, 0.0) + v
                        else:
                            model.coefficients[(row, col)] = v
                elif section == "RHS":
                    pairs = tok[1:] if len(tok) % 2 == 1 else tok
                    for row, val in zip(pairs[0::2], pairs[1::2]):
                        if row == model.objective_row:
                            model.constant = -float(val)
                        else:
                            model.rhs[row] = float(val)
                elif section == "BOUNDS":
                    kind, col = tok[0].upper(), tok[2]
                    val = float(tok[3]) if len(tok) > 3 else None
                    bnd = model.bounds[col]
                    if kind == "UP":
                        bnd[1] = val
                    elif kind == "LO":
                        bnd[0] = val
                    elif kind == "FX":
                        bnd[0] = bnd[1] = val
                    elif kind == "FR":
                        bnd[0], bnd[1] = -math.inf, math.inf
                    elif kind == "MI":
                        bnd[0] = -math.inf
                    elif kind == "PL":
                        bnd[1] = math.inf
                    elif kind == "BV":
                        bnd[0], bnd[1] = 0.0, 1.0
                        model.integer.add(col)
                    elif kind in ("LI", "UI"):
                        model.integer.add(col)
                        bnd[0 if kind == "LI" else 1] = val
                    else:
                        raise MpsParseError(f"line {lineno}: unknown bound type {kind!r}")
                elif section in ("QMATRIX", "QUADOBJ"):
                    c1, c2, val = tok[0], tok[1], float(tok[2])
                    model.quadratic[(c1, c2)] = model.quadratic.get((c1, c2), 0.0) + val
                    if section == "QUADOBJ" and c1 != c2:
                        model.quadratic[(c2, c1)] = model.quadratic.get((c2, c1), 0.0) + val
                elif section == "RANGES":
                    raise MpsParseError(f"line {lineno}: RANGES are not supported")
            except (IndexError, KeyError, ValueError) as exc:
                if isinstance(exc, MpsParseError):
                    raise
                raise MpsParseError(f"line {lineno}: cannot parse {line.strip()!r}: {exc}") from exc
    return model


def read_warm_start(path) -> dict:
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, value = line.split()
            values[name] = float(value)
    return values


def objective_value(model: MpsModel, values: dict) -> float:
    lin = math.fsum(c * values.get(col, 0.0) for col, c in model.objective.items())
    quad = math.fsum(
        v * values.get(c1, 0.0) * values.get(c2, 0.0) for (c1, c2), v in model.quadratic.items()
    )
    return lin + 0.5 * quad + model.constant


def check_feasibility(model: MpsModel, values: dict, tol: float = 1e-9) -> list[str]:
    """Constraint, bound and integrality violations of ``values``; empty when feasible.

    Tolerances are relative to the magnitude of each row's terms.
    """
    violations = []
    missing = [c for c in model.columns if c not in values]
    if missing:
        violations.append(f"no value for {len(missing)} variables, e.g. {missing[:3]}")
        return violations
    activity: dict = {row: [] for row in model.rows if row != model.objective_row}
    for (row, col), a in model.coefficients.items():
        activity[row].append(a * values[col])
    for row, terms in activity.items():
        lhs = math.fsum(terms)
        rhs = model.rhs.get(row, 0.0)
        slack = tol * max(1.0, abs(rhs), max((abs(t) for t in terms), default=0.0))
        sense = model.rows[row]
        if sense == "L" and lhs > rhs + slack:
            violations.append(f"{row}: {lhs!r} > {rhs!r}")
        elif sense == "G" and lhs < rhs - slack:
            violations.append(f"{row}: {lhs!r} < {rhs!r}")
        elif sense == "E" and abs(lhs - rhs) > slack:
            violations.append(f"{row}: {lhs!r} != {rhs!r}")
    for col in model.columns:
        v = values[col]
        lo, hi = model.bounds[col]
        slack = tol * max(1.0, abs(v))
        if v < lo - slack or v > hi + slack:
            violations.append(f"{col}: {v!r} outside [{lo!r}, {hi!r}]")
        if col in model.integer and abs(v - round(v)) > tol:
            violations.append(f"{col}: {v!r} is not integral")
    return violations
