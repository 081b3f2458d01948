"""porefilt: pore-scale dead-end filtration — simulation, design search, staging.

The package models a single representative pore of unit length whose radius
profile a(x, t) shrinks as feed species deposit on the wall.  On top of the
core model it provides constant-pressure / constant-flux time marching,
profile-design optimization (slow simulation-based and fast surrogate
objectives), and a multi-stage refiltration driver with a stage-ratio sweep.
"""

from .errors import (
    ConfigError,
    DegenerateFlowError,
    FilterExhaustedError,
    GridMismatchError,
    InfeasibleStartError,
    InvalidParameterError,
    InvalidShapeError,
    PoreClosedError,
    PorefiltError,
    UndefinedPurityError,
    UnsupportedMethodError,
)
from .model import (
    FLUX_FRACTION,
    PRESSURE_INIT_MAX,
    PRESSURE_RATIO_MAX,
    RADIUS_FLOOR,
    REMOVAL_TARGET,
    SECONDARY_CEILING,
    FeedSpec,
    PoreProfile,
    ScreeningParams,
    ShapeFunction,
    Species,
    concentration_profile,
    deposition_rate,
    flux_constant_pressure,
    inlet_pressure_constant_flux,
    validate_shape,
)
from .simulate import (
    CONSTANT_FLUX,
    CONSTANT_PRESSURE,
    InitialRates,
    Metrics,
    SimConfig,
    SimRecord,
    compute_metrics,
    initial_rates,
    run_constant_flux,
    run_constant_pressure,
)
from .optimize import (
    FIXED_FEED,
    METHOD_FAST,
    METHOD_SLOW,
    WEIGHTED,
    YIELD,
    EvalReport,
    FeasibilityReport,
    LocalResult,
    OptimizationResult,
    ProblemSpec,
    SearchConfig,
    check_feasibility,
    evaluate_fast,
    evaluate_slow,
    initial_removal,
    local_search,
    multistart,
)
from .multistage import (
    Batch,
    FilterInstance,
    FilterUse,
    MultiStageResult,
    PassResult,
    StagePlan,
    SweepRow,
    run_pass,
    run_protocol,
    run_stage1_filter,
    sweep_stage_ratios,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "PorefiltError",
    "InvalidShapeError",
    "InvalidParameterError",
    "GridMismatchError",
    "ConfigError",
    "PoreClosedError",
    "DegenerateFlowError",
    "InfeasibleStartError",
    "UndefinedPurityError",
    "FilterExhaustedError",
    "UnsupportedMethodError",
    # model
    "FLUX_FRACTION",
    "REMOVAL_TARGET",
    "SECONDARY_CEILING",
    "PRESSURE_INIT_MAX",
    "PRESSURE_RATIO_MAX",
    "RADIUS_FLOOR",
    "ShapeFunction",
    "PoreProfile",
    "Species",
    "ScreeningParams",
    "FeedSpec",
    "validate_shape",
    "flux_constant_pressure",
    "inlet_pressure_constant_flux",
    "concentration_profile",
    "deposition_rate",
    # simulate
    "CONSTANT_PRESSURE",
    "CONSTANT_FLUX",
    "SimConfig",
    "SimRecord",
    "InitialRates",
    "Metrics",
    "run_constant_pressure",
    "run_constant_flux",
    "initial_rates",
    "compute_metrics",
    # optimize
    "WEIGHTED",
    "YIELD",
    "FIXED_FEED",
    "METHOD_SLOW",
    "METHOD_FAST",
    "ProblemSpec",
    "SearchConfig",
    "FeasibilityReport",
    "EvalReport",
    "LocalResult",
    "OptimizationResult",
    "initial_removal",
    "check_feasibility",
    "evaluate_slow",
    "evaluate_fast",
    "local_search",
    "multistart",
    # multistage
    "FilterInstance",
    "Batch",
    "PassResult",
    "StagePlan",
    "FilterUse",
    "MultiStageResult",
    "SweepRow",
    "run_stage1_filter",
    "run_pass",
    "run_protocol",
    "sweep_stage_ratios",
]
