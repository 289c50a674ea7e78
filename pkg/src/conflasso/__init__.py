"""Exact conformal prediction sets for the lasso and elastic net."""

from .conformal import (
    DegenerateSplitError,
    GridEvaluation,
    Interval,
    PredictionSet,
    default_range,
    exact_set,
    exact_set_fast,
    grid_set,
    interval_condition,
    p_value,
    split_set,
)
from .estimator import ConformalLasso
from .homotopy import (
    HomotopyPath,
    HomotopySegment,
    PathChange,
    PathDiagnostics,
    QueryPoint,
    SegmentLimitError,
    SingularGramError,
    next_breakpoint,
    online_update,
    segment_directions,
    trace,
)
from .lasso import (
    Dataset,
    DimensionMismatchError,
    KktReport,
    LassoFit,
    NonConvergenceError,
    PenaltyConfig,
    check_kkt,
    dual_of,
    fit,
    fit_path,
    lambda_max,
    objective_value,
)
from .simdata import (
    CoverageReport,
    CvMedianLambda,
    DimRegime,
    FixedLambda,
    MethodStats,
    ModelFamily,
    ModelSpec,
    bspline_basis,
    cv_lambda,
    cv_lambda_median,
    generate,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "PenaltyConfig",
    "LassoFit",
    "KktReport",
    "NonConvergenceError",
    "DimensionMismatchError",
    "fit",
    "fit_path",
    "dual_of",
    "check_kkt",
    "objective_value",
    "lambda_max",
    "QueryPoint",
    "HomotopySegment",
    "HomotopyPath",
    "PathChange",
    "PathDiagnostics",
    "SingularGramError",
    "SegmentLimitError",
    "segment_directions",
    "next_breakpoint",
    "trace",
    "online_update",
    "Interval",
    "PredictionSet",
    "GridEvaluation",
    "DegenerateSplitError",
    "p_value",
    "interval_condition",
    "default_range",
    "exact_set",
    "exact_set_fast",
    "grid_set",
    "split_set",
    "ConformalLasso",
    "ModelFamily",
    "DimRegime",
    "ModelSpec",
    "FixedLambda",
    "CvMedianLambda",
    "MethodStats",
    "CoverageReport",
    "bspline_basis",
    "generate",
    "cv_lambda",
    "cv_lambda_median",
    "run_experiment",
    "__version__",
]
