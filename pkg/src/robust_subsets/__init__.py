"""Robust subset selection: sparse least squares that also trims outlying rows."""

from .core import (
    ContractError,
    Dataset,
    LipschitzBounds,
    Scaling,
    Solution,
    SparsityParams,
    StandardizationMode,
    Status,
    estimate_lipschitz,
    gradients,
    hard_threshold,
    objective,
    residual,
    standardize,
    unstandardize_solution,
)
from .descent import DescentConfig, StationarityReport, check_stationarity, pbgd, polish
from .exact import (
    EnumerationCapError,
    ExactConfig,
    ZeroObjectiveError,
    enumeration_count,
    relative_objective_gap,
    solve_exact,
)
from .model_select import (
    CvConfig,
    CvResult,
    FitResult,
    cross_validate,
    fit,
    fold_assignment,
    trimmed_prediction_error,
)
from .mps import MioExport, MpsModel, MpsParseError, check_feasibility, export_mps, read_mps, read_warm_start
from .search import FitGrid, ParameterGrid, neighborhood_search, warm_start_bundle
from .synthetic import (
    MetricsReport,
    Setting,
    SimDesign,
    SyntheticInstance,
    breakdown_experiment,
    breakdown_point,
    evaluate,
    f1_score,
    generate,
    relative_prediction_error,
)

__version__ = "0.1.0"
