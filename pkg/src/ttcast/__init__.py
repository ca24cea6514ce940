"""ttcast: actor-behavior-enriched throughput-time forecasting for
business-process event logs.

The pipeline ingests an event log (CSV or XES), classifies consecutive
same-case event pairs into actor-behavior types (continuation,
interruption, handover to idle/busy), aggregates everything into a daily
panel, and forecasts the next day's mean throughput time with an in-repo
gradient-boosted-tree learner, benchmarked against an AR-on-differences
model and a random walk.
"""

__version__ = "0.1.0"

from .behavior import BEHAVIOR_ORDER, BehaviorType, Transition, classify_transitions
from .config import DEFAULT_GRID, RunConfig, load_config, parse_config
from .errors import ConfigError, DataError, PipelineError, TTCastError
from .evaluation import (
    ModelRun,
    bootstrap_ci,
    chrono_split,
    compare_report,
    compute_metrics,
    grid_search,
    permutation_importance,
    ts_cv_folds,
)
from .event_log import EventLog, load_event_log, log_summary, parse_csv, parse_xes
from .features import (
    FeatureMatrix,
    build_feature_matrix,
    causal_peak_flags,
    detect_peaks,
    make_target,
    reconstruct,
)
from .models import (
    GBTParams,
    TrainedModel,
    fit_ar_diff,
    fit_gbt,
    fit_naive,
    forecast_ar_diff,
    load_model,
    predict,
    save_model,
)
from .pipeline import PipelineContext, cmd_run, cmd_stage, make_context
from .timeseries import SeriesPanel, assemble_panel, daily_throughput
from .seeding import derive_seed

__all__ = [
    "__version__",
    "BEHAVIOR_ORDER",
    "BehaviorType",
    "Transition",
    "classify_transitions",
    "DEFAULT_GRID",
    "RunConfig",
    "load_config",
    "parse_config",
    "ConfigError",
    "DataError",
    "PipelineError",
    "TTCastError",
    "ModelRun",
    "bootstrap_ci",
    "chrono_split",
    "compare_report",
    "compute_metrics",
    "grid_search",
    "permutation_importance",
    "ts_cv_folds",
    "EventLog",
    "load_event_log",
    "log_summary",
    "parse_csv",
    "parse_xes",
    "FeatureMatrix",
    "build_feature_matrix",
    "causal_peak_flags",
    "detect_peaks",
    "make_target",
    "reconstruct",
    "GBTParams",
    "TrainedModel",
    "fit_ar_diff",
    "fit_gbt",
    "fit_naive",
    "forecast_ar_diff",
    "load_model",
    "predict",
    "save_model",
    "PipelineContext",
    "cmd_run",
    "cmd_stage",
    "make_context",
    "SeriesPanel",
    "assemble_panel",
    "daily_throughput",
    "derive_seed",
]
