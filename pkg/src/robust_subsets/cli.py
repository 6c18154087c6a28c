"""Command-line front end: ``rss fit | cv | simulate | breakdown | export | generate | score``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ContractError, Dataset, SparsityParams, standardize
from .descent import DescentConfig
from .exact import EnumerationCapError, ExactConfig
from .model_select import CvConfig, FitResult, fit, resolve_mode
from .mps import MioExport, atomic_write, export_mps
from .search import DEFAULT_H_FRACTIONS, ParameterGrid, h_from_fraction, neighborhood_search, warm_start_bundle
from .synthetic import (
    Setting,
    SimDesign,
    SyntheticInstance,
    breakdown_experiment,
    breakdown_point,
    evaluate,
    generate,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
RESULTS_COLUMNS = (
    "replication", "seed", "estimator", "k", "h", "relative_prediction_error",
    "model_sparsity", "f1_score", "recall", "precision", "runtime_seconds",
)
BREAKDOWN_COLUMNS = ("instance", "m", "magnitude", "objective", "breakdown_point")

EXIT_OK, EXIT_CONTRACT, EXIT_IO, EXIT_CAP = 0, 2, 3, 4

_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


class CsvFormatError(ContractError):
    pass


# ---------------------------------------------------------------- input


def read_csv(path, response=None) -> tuple[list[str], np.ndarray, np.ndarray, str]:
    """Parse a headed numeric CSV into ``(feature names, x, y, response name)``.

    ``response`` is a column name or an integer index; the last column by default.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(f.strip() for f in rows[0]):
        raise CsvFormatError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    width = len(header)
    if response is None:
        col = width - 1
    elif str(response) in header:
        col = header.index(str(response))
    else:
        try:
            col = int(response)
        except ValueError:
            raise CsvFormatError(f"{path}: no response column named {response!r}") from None
        if not -width <= col < width:
            raise CsvFormatError(f"{path}: response index {col} out of range for {width} columns")
        col %= width
    if width < 2:
        raise CsvFormatError(f"{path}: need a response and at least one predictor column")

    values = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or not any(f.strip() for f in row):
            continue
        if len(row) != width:
            raise CsvFormatError(f"{path}: row {line_no} has {len(row)} fields, header has {width}")
        parsed = []
        for j, field in enumerate(row):
            text = field.strip()
            if not _NUMBER.fullmatch(text):
                kind = "non-finite" if text.lower().lstrip("+-") in ("nan", "inf", "infinity") else "malformed"
                raise CsvFormatError(f"{path}: row {line_no}, column {j + 1} ({header[j]}): {kind} value {text!r}")
            v = float(text)
            if not np.isfinite(v):
                raise CsvFormatError(f"{path}: row {line_no}, column {j + 1} ({header[j]}): overflows to {v}")
            parsed.append(v)
        values.append(parsed)
    if not values:
        raise CsvFormatError(f"{path}: no data rows")
    data = np.array(values)
    names = [h for j, h in enumerate(header) if j != col]
    return names, np.delete(data, col, axis=1), data[:, col], header[col]


def _expand(tokens: list[str]) -> list[Decimal]:
    """Expand ``a..b`` integer ranges and ``a, b, ..., c`` progressions."""
    out: list[Decimal] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == "...":
            if len(out) < 2 or i + 1 >= len(tokens):
                raise ContractError("'...' needs two terms before it and one after")
            step, stop = out[-1] - out[-2], Decimal(tokens[i + 1])
            if step <= 0:
                raise ContractError("'...' needs an increasing progression")
            v = out[-1] + step
            while v < stop:
                out.append(v)
                v += step
            i += 1
            continue
        if ".." in tok:
            lo, hi = tok.split("..")
            out.extend(Decimal(v) for v in range(int(lo), int(hi) + 1))
        else:
            out.append(Decimal(tok))
        i += 1
    return out


def parse_grid(text: Optional[str], n: int, k_max: int = 20) -> ParameterGrid:
    """Parse ``k=0..20;h=0.75,0.80,...,1.00``; tokens with a decimal point are fractions of n."""
    k_tokens = [f"0..{k_max}"]
    h_tokens = list(DEFAULT_H_FRACTIONS)
    for part in filter(None, (s.strip() for s in (text or "").split(";"))):
        key, _, body = part.partition("=")
        tokens = [t.strip() for t in body.split(",") if t.strip()]
        if key.strip() == "k":
            k_tokens = tokens
        elif key.strip() == "h":
            h_tokens = tokens
        else:
            raise ContractError(f"grid part {part!r} must start with k= or h=")
    try:
        ks = _expand(k_tokens)
        fractional = [("." in t or "e" in t.lower()) for t in h_tokens if t != "..."]
        hs_raw = _expand(h_tokens)
    except (InvalidOperation, ValueError) as err:
        raise ContractError(f"cannot parse grid {text!r}: {err}") from None
    if any(k != k.to_integral_value() for k in ks):
        raise ContractError("k values must be integers")
    as_fraction = any(fractional)
    hs = []
    for v in hs_raw:
        if as_fraction:
            if not 0 < v <= 1:
                raise ContractError(f"h fraction {v} must lie in (0, 1]")
            hs.append(h_from_fraction(v, n))
        else:
            hs.append(int(v))
    # fractions of a small n can round to the same count; keep one of each
    return ParameterGrid(tuple(int(k) for k in ks), tuple(dict.fromkeys(hs)))


def _load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ContractError(f"{path}: config must be a JSON object")
    return {key.replace("-", "_"): value for key, value in cfg.items()}


# ---------------------------------------------------------------- output


def _dumps(obj) -> str:
    # json writes floats with repr: the shortest string that round-trips exactly
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _resolved(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def model_document(result: FitResult, names: list[str], response: str, config: dict) -> dict:
    sol = result.solution
    support = sol.support_beta.tolist()
    return {
        "schema_version": SCHEMA_VERSION,
        "response": response,
        "features": names,
        "intercept": float(result.intercept),
        "coefficients": [float(c) for c in result.coefficients],
        "support": support,
        "support_names": [names[j] for j in support],
        "inlier_set": sol.inlier_set.tolist(),
        "outliers": np.flatnonzero(sol.eta != 0).tolist(),
        "objective": float(sol.objective),
        "heuristic_objective": float(result.heuristic_objective),
        "chosen": {"k": result.params.k, "h": result.params.h},
        "status": sol.status.value,
        "exact_status": result.exact_status,
        "converged": bool(sol.converged),
        "iterations": int(sol.iterations),
        "degenerate": bool(sol.degenerate),
        "trace": [float(v) for v in sol.trace],
        "standardization": result.dataset.mode.value,
        "export": None if result.export_path is None else str(config.get("export")),
        "config": config,
    }


# ---------------------------------------------------------------- commands


def _descent(args) -> DescentConfig:
    return DescentConfig(epsilon=args.epsilon)


def _cv_config(args, grid) -> CvConfig:
    return CvConfig(grid, folds=args.folds, trim_alpha=args.alpha, seed=args.seed,
                    standardization=args.standardization, threads=args.threads)


def _fit_from_args(args, x, y, grid) -> FitResult:
    n, p = x.shape
    several = len(list(grid.cells(n, p))) > 1
    return fit(
        x, y, grid,
        cv=_cv_config(args, grid) if several else None,
        tau=args.tau,
        run_exact=args.exact,
        export_path=args.export,
        formulation=args.formulation,
        descent=_descent(args),
        standardization=args.standardization,
        exact=ExactConfig(workers=args.threads),
    )


def cmd_fit(args) -> int:
    names, x, y, response = read_csv(args.data, args.response)
    grid = parse_grid(args.grid, len(y), args.k_max)
    result = _fit_from_args(args, x, y, grid)
    doc = model_document(result, names, response, _resolved(args))
    atomic_write(Path(args.out), _dumps(doc))
    return EXIT_OK


def cmd_cv(args) -> int:
    names, x, y, response = read_csv(args.data, args.response)
    grid = parse_grid(args.grid, len(y), args.k_max)
    config = _resolved(args)
    result = fit(
        x, y, grid,
        cv=_cv_config(args, grid),
        tau=args.tau,
        descent=_descent(args),
        standardization=args.standardization,
    )
    doc = {
        "schema_version": SCHEMA_VERSION,
        "grid": grid.to_dict(),
        "folds": args.folds,
        "trim_alpha": args.alpha,
        **result.cv.to_dict(),
        "config": config,
    }
    out = Path(args.out)
    atomic_write(out, _dumps(doc))
    model_out = Path(args.model_out) if args.model_out else out.with_name(out.stem + ".model.json")
    atomic_write(model_out, _dumps(model_document(result, names, response, config)))
    return EXIT_OK


def _replication_seed(seed: int, replication: int) -> int:
    # independent stream per replication, stable under reordering or threading
    return int(np.random.SeedSequence([seed, replication]).generate_state(1)[0])


def _simulate_one(args, replication: int) -> list[list]:
    seed = _replication_seed(args.seed, replication)
    design = SimDesign(args.n, args.p, args.p0, args.snr, args.rho, args.delta, args.setting, seed)
    inst = generate(design)
    variants = (
        ("robust-subsets", parse_grid(args.grid, design.n, args.k_max)),
        ("best-subsets", parse_grid(f"k=0..{args.k_max};h={design.n}", design.n)),
    )
    rows = []
    for name, grid in variants:
        start = time.perf_counter()
        cv = CvConfig(grid, folds=args.folds, trim_alpha=args.alpha, seed=seed,
                      standardization=args.standardization)
        result = fit(inst.x, inst.y, grid, cv=cv, descent=_descent(args),
                     standardization=args.standardization)
        elapsed = time.perf_counter() - start
        m = evaluate(result.coefficients, result.intercept, inst)
        rows.append([
            replication, seed, name, result.params.k, result.params.h,
            m.relative_prediction_error, m.model_sparsity, m.f1_score, m.recall, m.precision,
            elapsed if args.timing else None,
        ])
    return rows


def cmd_simulate(args) -> int:
    if args.replications < 1:
        raise ContractError(f"replications must be >= 1, got {args.replications}")
    reps = range(args.replications)
    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            chunks = list(pool.map(lambda r: _simulate_one(args, r), reps))
    else:
        chunks = [_simulate_one(args, r) for r in reps]
    rows = [[_cell(v) for v in row] for chunk in chunks for row in chunk]
    out = Path(args.out)
    atomic_write(out, _csv_text(RESULTS_COLUMNS, rows))
    atomic_write(out.with_suffix(".config.json"), _dumps(_resolved(args)))
    return EXIT_OK


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in _expand([t.strip() for t in text.split(",") if t.strip()])]
    except (InvalidOperation, ValueError):
        raise ContractError(f"cannot parse number list {text!r}") from None


def cmd_breakdown(args) -> int:
    if args.data:
        _, x, y, _ = read_csv(args.data, args.response)
        datasets = [Dataset(x, y)]
    else:
        datasets = [
            generate(SimDesign(args.n, args.p, args.p0, args.snr, args.rho, seed=args.seed + i)).dataset()
            for i in range(args.instances)
        ]
    n = datasets[0].n
    h = n - 2 if args.h is None else args.h
    params = SparsityParams(args.k, h).check(n, datasets[0].p)
    ms = [int(v) for v in _floats(args.m)] if args.m else [0, n - h, n - h + 1]
    magnitudes = _floats(args.magnitudes)
    bp = breakdown_point(n, h)
    rows = []
    for i, data in enumerate(datasets):
        for m in ms:
            table = breakdown_experiment(data, params, m, magnitudes, args.scheme, seed=args.seed + i,
                                         exact=ExactConfig(workers=args.threads))
            rows += [[i, m, _cell(r.magnitude), _cell(r.objective), f"{bp.numerator}/{bp.denominator}"]
                     for r in table]
    out = Path(args.out)
    atomic_write(out, _csv_text(BREAKDOWN_COLUMNS, rows))
    atomic_write(out.with_suffix(".config.json"), _dumps(_resolved(args)))
    return EXIT_OK


def _inliers(text: str, n: int) -> int:
    return h_from_fraction(text, n) if "." in text else int(text)


def cmd_export(args) -> int:
    names, x, y, _ = read_csv(args.data, args.response)
    n = len(y)
    params = SparsityParams(args.k, _inliers(args.h, n)).check(n, x.shape[1])
    grid = ParameterGrid(tuple(range(params.k + 1)), (params.h,))
    data = standardize(x, y, resolve_mode(args.standardization, grid, n))
    fitted = neighborhood_search(data, grid, _descent(args))
    sol, m_beta, m_eta = warm_start_bundle(fitted, params, args.tau)
    mio = MioExport(args.formulation, m_beta, m_eta, warm_start=sol, tau=args.tau)
    export_mps(data, params, mio, args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    design = SimDesign(args.n, args.p, args.p0, args.snr, args.rho, args.delta, args.setting, args.seed)
    generate(design).save(args.out)
    return EXIT_OK


def cmd_score(args) -> int:
    with open(args.model) as fh:
        model = json.load(fh)
    inst = SyntheticInstance.load(args.instance)
    m = evaluate(np.array(model["coefficients"], float), float(model["intercept"]), inst)
    doc = {
        "relative_prediction_error": m.relative_prediction_error,
        "model_sparsity": m.model_sparsity,
        "f1_score": m.f1_score,
        "recall": m.recall,
        "precision": m.precision,
    }
    text = _dumps(doc)
    if args.out:
        atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_common(sp, data=True):
    if data:
        sp.add_argument("data", help="CSV file with a header row")
        sp.add_argument("--response", help="response column name or index (default: last column)")
    sp.add_argument("--config", help="JSON file of option defaults; flags override it")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--epsilon", type=float, default=1e-8, help="descent stopping tolerance")


def _add_selection(sp):
    sp.add_argument("--grid", help="e.g. 'k=0..20;h=0.75,0.80,...,1.00' (decimals are fractions of n)")
    sp.add_argument("--k-max", type=int, default=20, help="k range when --grid gives none")
    sp.add_argument("--alpha", type=float, default=0.25, help="trimming fraction of the CV error")
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--tau", type=float, default=1.5, help="Big-M inflation factor")
    sp.add_argument("--standardization", choices=("auto", "robust", "classical", "none"), default="auto")


def _add_design(sp):
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--p", type=int, default=20)
    sp.add_argument("--p0", type=int, default=5)
    sp.add_argument("--snr", type=float, default=4.0)
    sp.add_argument("--rho", type=float, default=0.35)
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--setting", choices=[s.value for s in Setting], default="clean")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rss", description="Robust subset selection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="fit a model, choosing (k, h) by cross-validation")
    _add_common(sp)
    _add_selection(sp)
    sp.add_argument("--exact", action="store_true", help="refine by exact enumeration when within the cap")
    sp.add_argument("--export", help="also write the mixed-integer program to this MPS path")
    sp.add_argument("--formulation", choices=("improved", "basic"), default="improved")
    sp.add_argument("--out", default="model.json")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("cv", help="cross-validation error surface over the grid")
    _add_common(sp)
    _add_selection(sp)
    sp.add_argument("--out", default="cv.json")
    sp.add_argument("--model-out", help="model for the chosen cell (default: <out stem>.model.json)")
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("simulate", help="synthetic replications, robust vs best subsets")
    _add_common(sp, data=False)
    _add_selection(sp)
    _add_design(sp)
    sp.add_argument("--replications", type=int, default=30)
    sp.add_argument("--timing", action="store_true", help="fill the runtime column (breaks byte-reproducibility)")
    sp.add_argument("--out", default="results.csv")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("breakdown", help="exact objective under growing contamination")
    _add_common(sp, data=False)
    _add_design(sp)
    sp.add_argument("--data", help="CSV to contaminate instead of synthetic instances")
    sp.add_argument("--response")
    sp.add_argument("--instances", type=int, default=1)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--h", type=int, help="inlier count (default n-2)")
    sp.add_argument("--m", help="contaminated-row counts (default: 0, n-h, n-h+1)")
    sp.add_argument("--magnitudes", default="1e2,1e3,1e4,1e5,1e6,1e7,1e8")
    sp.add_argument("--scheme", choices=("response", "both"), default="response")
    sp.add_argument("--out", default="breakdown.csv")
    sp.set_defaults(func=cmd_breakdown, n=12, p=5, p0=2)

    sp = sub.add_parser("export", help="write the mixed-integer program with a warm start")
    _add_common(sp)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--h", required=True, help="inlier count, or a fraction of n such as 0.9")
    sp.add_argument("--tau", type=float, default=1.5)
    sp.add_argument("--formulation", choices=("improved", "basic"), default="improved")
    sp.add_argument("--standardization", choices=("auto", "robust", "classical", "none"), default="auto")
    sp.add_argument("--out", default="model.mps")
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("generate", help="write a synthetic instance as CSV plus JSON ground truth")
    _add_common(sp, data=False)
    _add_design(sp)
    sp.add_argument("--out", default="instance.csv")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("score", help="score a model.json against a generated instance")
    sp.add_argument("--model", required=True)
    sp.add_argument("--instance", required=True, help="instance CSV with its JSON sidecar")
    sp.add_argument("--out")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_score)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        # config values become defaults, so explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = _load_config(args.config)
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ContractError(f"{args.config}: unknown options {unknown}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except EnumerationCapError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CAP
    except (ContractError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
