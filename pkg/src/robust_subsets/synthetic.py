"""Synthetic regression designs with contamination, evaluation metrics, and
the breakdown-point experiment."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ContractError, Dataset, SparsityParams
from .exact import ExactConfig, solve_exact
from .mps import atomic_write

CONTAMINATION_MEAN_X = 10.0
CONTAMINATION_SHIFT_Y = 10.0  # in units of sigma


class Setting(str, enum.Enum):
    CLEAN = "clean"
    CONTAM_Y = "contam_y"
    CONTAM_X = "contam_x"
    CONTAM_XY = "contam_xy"


@dataclass(frozen=True)
class SimDesign:
    n: int
    p: int
    p0: int
    snr: float
    rho: float = 0.35
    delta: float = 0.1
    setting: Setting = Setting.CLEAN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "setting", Setting(self.setting))
        if self.n < 1 or self.p < 1:
            raise ContractError(f"need n >= 1 and p >= 1, got n={self.n}, p={self.p}")
        if not 1 <= self.p0 <= self.p:
            raise ContractError(f"need 1 <= p0 <= p, got p0={self.p0}, p={self.p}")
        if not self.snr > 0:
            raise ContractError(f"snr must be positive, got {self.snr}")
        if not abs(self.rho) < 1:
            raise ContractError(f"|rho| must be < 1 for a positive definite covariance, got {self.rho}")
        if not 0.0 <= self.delta <= 1.0:
            raise ContractError(f"delta must lie in [0, 1], got {self.delta}")

    def covariance(self) -> np.ndarray:
        idx = np.arange(self.p)
        return self.rho ** np.abs(idx[:, None] - idx[None, :])

    def replaced_per_row(self) -> int:
        """Predictors overwritten in an x-contaminated row: floor(0.1 p), at least 1."""
        return max(1, self.p // 10)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setting"] = self.setting.value
        return d


@dataclass
class SyntheticInstance:
    design: SimDesign
    x: np.ndarray
    y: np.ndarray
    beta0: np.ndarray
    sigma2: float
    y_contaminated: np.ndarray  # bool per row
    x_contaminated: np.ndarray  # bool per row
    x_replaced: list = field(default_factory=list)  # per row: replaced column indices

    @property
    def covariance(self) -> np.ndarray:
        return self.design.covariance()

    @property
    def contaminated(self) -> np.ndarray:
        return self.y_contaminated | self.x_contaminated

    def dataset(self) -> Dataset:
        return Dataset(self.x, self.y)

    def sidecar(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "beta0": self.beta0.tolist(),
            "sigma2": self.sigma2,
            "y_contaminated": np.flatnonzero(self.y_contaminated).tolist(),
            "x_contaminated": np.flatnonzero(self.x_contaminated).tolist(),
            "x_replaced": {str(i): cols for i, cols in enumerate(self.x_replaced) if cols},
        }

    def save(self, csv_path) -> Path:
        """Write ``x1..xp, y`` as CSV and the ground truth to ``<stem>.json``."""
        csv_path = Path(csv_path)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(self.design.p)] + ["y"])
        for row, yi in zip(self.x, self.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yi))])
        atomic_write(csv_path, buf.getvalue())
        side = csv_path.with_suffix(".json")
        atomic_write(side, json.dumps(self.sidecar(), indent=2) + "\n")
        return side

    @classmethod
    def load(cls, csv_path) -> "SyntheticInstance":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        design = SimDesign(**meta["design"])
        n = design.n
        y_mask = np.zeros(n, bool)
        y_mask[meta["y_contaminated"]] = True
        x_mask = np.zeros(n, bool)
        x_mask[meta["x_contaminated"]] = True
        replaced = [[] for _ in range(n)]
        for i, cols in meta["x_replaced"].items():
            replaced[int(i)] = list(cols)
        return cls(design, data[:, :-1], data[:, -1], np.array(meta["beta0"], float),
                   float(meta["sigma2"]), y_mask, x_mask, replaced)


def generate(design: SimDesign) -> SyntheticInstance:
    """Draw one instance; identical designs (including the seed) give identical data."""
    rng = np.random.default_rng(design.seed)
    n, p = design.n, design.p
    sigma = design.covariance()
    chol = np.linalg.cholesky(sigma)

    beta0 = np.zeros(p)
    pos = rng.choice(p, size=design.p0, replace=False)
    beta0[pos] = rng.choice([-1.0, 1.0], size=design.p0)
    sigma2 = float(beta0 @ sigma @ beta0) / design.snr
    sd = math.sqrt(sigma2)

    x = rng.standard_normal((n, p)) @ chol.T
    noise = sd * rng.standard_normal(n)
    setting = design.setting
    y_mask = np.zeros(n, bool)
    if setting in (Setting.CONTAM_Y, Setting.CONTAM_XY):
        y_mask = rng.random(n) < design.delta
        noise = noise + CONTAMINATION_SHIFT_Y * sd * y_mask
    y = x @ beta0 + noise

    # x contamination happens after the response is generated from clean rows
    x_mask = np.zeros(n, bool)
    replaced = [[] for _ in range(n)]
    if setting in (Setting.CONTAM_X, Setting.CONTAM_XY):
        x_mask = rng.random(n) < design.delta
        m = design.replaced_per_row()
        for i in np.flatnonzero(x_mask):
            cols = np.sort(rng.choice(p, size=m, replace=False))
            x[i, cols] = rng.normal(CONTAMINATION_MEAN_X, 1.0, size=m)
            replaced[i] = cols.tolist()
    return SyntheticInstance(design, x, y, beta0, sigma2, y_mask, x_mask, replaced)


@dataclass(frozen=True)
class MetricsReport:
    relative_prediction_error: float
    model_sparsity: int
    f1_score: float
    recall: float
    precision: float


def relative_prediction_error(beta_hat, mu_hat: float, instance: SyntheticInstance) -> float:
    """Expected squared prediction error on a fresh clean draw, in units of sigma^2."""
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    if beta_hat.shape != instance.beta0.shape:
        raise ContractError(f"beta_hat has length {beta_hat.size}, expected {instance.beta0.size}")
    sigma = instance.covariance
    d = instance.beta0 - beta_hat
    # (d'Sd + mu^2 + sigma^2) / sigma^2 with sigma^2 = b0'S b0 / snr; the
    # ratio form is exact at the anchors d = 0 and d = beta0
    signal = float(instance.beta0 @ sigma @ instance.beta0)
    return 1.0 + instance.design.snr * (float(d @ sigma @ d) / signal) + mu_hat**2 / instance.sigma2


def f1_score(beta_hat, beta0) -> MetricsReport:
    """Support-recovery scores; ``relative_prediction_error`` is left as NaN."""
    beta_hat = np.asarray(beta_hat).reshape(-1)
    beta0 = np.asarray(beta0).reshape(-1)
    if beta_hat.shape != beta0.shape:
        raise ContractError("beta_hat and beta0 must have equal lengths")
    selected = beta_hat != 0
    truth = beta0 != 0
    tp = int(np.sum(selected & truth))
    n_sel, n_true = int(selected.sum()), int(truth.sum())
    if n_sel == 0 and n_true == 0:
        recall = precision = f1 = 1.0
    else:
        recall = tp / n_true if n_true else 0.0
        precision = tp / n_sel if n_sel else 0.0
        f1 = 2.0 / (1.0 / recall + 1.0 / precision) if tp else 0.0
    return MetricsReport(math.nan, n_sel, f1, recall, precision)


def evaluate(beta_hat, mu_hat: float, instance: SyntheticInstance) -> MetricsReport:
    support = f1_score(beta_hat, instance.beta0)
    rpe = relative_prediction_error(beta_hat, mu_hat, instance)
    return MetricsReport(rpe, support.model_sparsity, support.f1_score, support.recall, support.precision)


def breakdown_point(n: int, h: int) -> Fraction:
    """Finite-sample breakdown point ``(n - h + 1) / n`` of the optimal objective."""
    if not 1 <= h <= n:
        raise ContractError(f"need 1 <= h <= n, got h={h}, n={n}")
    return Fraction(n - h + 1, n)


@dataclass(frozen=True)
class BreakdownRow:
    magnitude: float
    objective: float


def contaminate(dataset: Dataset, rows: Sequence[int], magnitude: float, scheme: str = "response") -> Dataset:
    """Overwrite ``rows`` with ``magnitude``: the response only, or response and predictors."""
    if scheme not in ("response", "both"):
        raise ContractError(f"unknown contamination scheme {scheme!r}")
    x = np.array(dataset.x)
    y = np.array(dataset.y)
    rows = np.asarray(rows, dtype=np.intp)
    y[rows] = magnitude
    if scheme == "both":
        x[rows] = magnitude
    return Dataset(x, y)


def breakdown_experiment(
    dataset: Dataset,
    params: SparsityParams,
    m: int,
    magnitudes: Sequence[float],
    scheme: str = "response",
    rows: Optional[Sequence[int]] = None,
    seed: int = 0,
    exact: Optional[ExactConfig] = None,
) -> list[BreakdownRow]:
    """Exact optimal objective after replacing ``m`` observations, per magnitude.

    The replaced rows are ``rows`` if given, otherwise ``m`` rows drawn with
    ``seed``. Data are used as given (no re-standardization), so the
    magnitudes act directly on the objective.
    """
    n = dataset.n
    if not 0 <= m <= n:
        raise ContractError(f"need 0 <= m <= n, got m={m}, n={n}")
    if rows is None:
        rows = np.sort(np.random.default_rng(seed).choice(n, size=m, replace=False))
    elif len(rows) != m:
        raise ContractError(f"got {len(rows)} rows for m={m}")
    table = []
    for mag in magnitudes:
        data = contaminate(dataset, rows, float(mag), scheme)
        table.append(BreakdownRow(float(mag), solve_exact(data, params, exact).objective))
    return table
