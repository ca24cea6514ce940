"""Run configuration: YAML schema, strict validation, defaults.

Unknown keys are rejected with their dotted path so typos fail loudly
instead of silently falling back to defaults. Relative paths in the file
(dataset.path, output_dir) resolve against the config file's directory.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .models import GBTParams

VALID_FORMATS = ("csv", "xes")
VALID_REPORT_UNITS = ("hours", "days")
VALID_PEAK_MODES = ("full", "causal")
MAPPING_ROLES = ("case", "activity", "timestamp", "resource")

# tree rows of the shared tuning grid
DEFAULT_GRID: tuple[GBTParams, ...] = (
    GBTParams(n_estimators=1000, learning_rate=0.1, max_depth=5,
              feature_fraction=0.9, bagging_fraction=0.9),
    GBTParams(n_estimators=3000, learning_rate=0.1, max_depth=6,
              feature_fraction=0.9, bagging_fraction=0.9),
    GBTParams(n_estimators=1500, learning_rate=0.05, max_depth=5,
              feature_fraction=0.9, bagging_fraction=0.9),
    GBTParams(n_estimators=1500, learning_rate=0.2, max_depth=7,
              feature_fraction=0.6, bagging_fraction=0.8),
)

_GRID_KEYS = (
    "n_estimators",
    "learning_rate",
    "max_depth",
    "feature_fraction",
    "bagging_fraction",
    "min_samples_leaf",
)


@dataclass(frozen=True)
class DatasetConfig:
    path: str
    format: str | None = None  # sniffed from the extension when None
    columns: dict = field(default_factory=dict)
    timestamp_format: str | None = None
    report_unit: str = "hours"
    trim_boundary_days: float = 0.0
    max_bad_row_fraction: float = 0.01
    naive_utc_offset_hours: float = 0.0


@dataclass(frozen=True)
class FeaturesConfig:
    peak_mode: str = "full"
    dense_calendar: bool = False
    peak_min_distance: int = 7
    peak_prominence_threshold: float | None = None


@dataclass(frozen=True)
class ModelsConfig:
    seed: int = 42
    ar_p_max: int = 5
    grid: tuple = DEFAULT_GRID


@dataclass(frozen=True)
class EvaluationConfig:
    train_fraction: float = 0.8
    cv_folds: int = 5
    bootstrap_b: int = 1000
    bootstrap_block_length: int | None = None
    importance_repeats: int = 10


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str = "out"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, models=replace(self.models, seed=int(seed)))

    def to_dict(self) -> dict:
        """Full echo, defaults included, for the run manifest."""
        return {
            "dataset": {
                "path": self.dataset.path,
                "format": self.dataset.format,
                "columns": dict(self.dataset.columns),
                "timestamp_format": self.dataset.timestamp_format,
                "report_unit": self.dataset.report_unit,
                "trim_boundary_days": self.dataset.trim_boundary_days,
                "max_bad_row_fraction": self.dataset.max_bad_row_fraction,
                "naive_utc_offset_hours": self.dataset.naive_utc_offset_hours,
            },
            "features": {
                "peak_mode": self.features.peak_mode,
                "dense_calendar": self.features.dense_calendar,
                "peak_min_distance": self.features.peak_min_distance,
                "peak_prominence_threshold": self.features.peak_prominence_threshold,
            },
            "models": {
                "seed": self.models.seed,
                "ar_p_max": self.models.ar_p_max,
                "grid": [p.as_dict(include_seed=False) for p in self.models.grid],
            },
            "evaluation": {
                "train_fraction": self.evaluation.train_fraction,
                "cv_folds": self.evaluation.cv_folds,
                "bootstrap_b": self.evaluation.bootstrap_b,
                "bootstrap_block_length": self.evaluation.bootstrap_block_length,
                "importance_repeats": self.evaluation.importance_repeats,
            },
            "output_dir": self.output_dir,
        }


def _as_mapping(value: Any, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{path} must be a mapping, got {type(value).__name__}")
    return dict(value)


def _reject_unknown(doc: Mapping, allowed, path: str) -> None:
    unknown = [k for k in doc if k not in allowed]
    if unknown:
        where = f"{path}.{unknown[0]}" if path else str(unknown[0])
        raise ConfigError(f"unknown config key {where!r}")


def _get_str(doc: Mapping, key: str, path: str, default=None, choices=None, required=False):
    if key not in doc or doc[key] is None:
        if required:
            raise ConfigError(f"missing required config key {path}.{key}")
        return default
    value = doc[key]
    if not isinstance(value, str):
        raise ConfigError(f"{path}.{key} must be a string, got {type(value).__name__}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{path}.{key} must be one of {list(choices)}, got {value!r}")
    return value


def _get_int(doc: Mapping, key: str, path: str, default, minimum=None, maximum=None, optional=False):
    if key not in doc or doc[key] is None:
        if optional and key in doc:
            return None
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{path}.{key} must be <= {maximum}, got {value}")
    return value


def _get_float(doc: Mapping, key: str, path: str, default):
    if key not in doc or doc[key] is None:
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key} must be a number, got {value!r}")
    return float(value)


def _get_bool(doc: Mapping, key: str, path: str, default: bool) -> bool:
    if key not in doc or doc[key] is None:
        return default
    value = doc[key]
    if not isinstance(value, bool):
        raise ConfigError(f"{path}.{key} must be a boolean, got {value!r}")
    return value


def _parse_dataset(doc: Mapping, base_dir: Path) -> DatasetConfig:
    _reject_unknown(
        doc,
        (
            "path",
            "format",
            "columns",
            "timestamp_format",
            "report_unit",
            "trim_boundary_days",
            "max_bad_row_fraction",
            "naive_utc_offset_hours",
        ),
        "dataset",
    )
    raw_path = _get_str(doc, "path", "dataset", required=True)
    path = Path(raw_path)
    if not path.is_absolute():
        path = base_dir / path
    columns = _as_mapping(doc.get("columns"), "dataset.columns")
    _reject_unknown(columns, MAPPING_ROLES, "dataset.columns")
    for role, col in columns.items():
        if not isinstance(col, str) or not col:
            raise ConfigError(f"dataset.columns.{role} must be a non-empty string, got {col!r}")
    trim = _get_float(doc, "trim_boundary_days", "dataset", 0.0)
    if trim < 0:
        raise ConfigError(f"dataset.trim_boundary_days must be >= 0, got {trim}")
    bad_frac = _get_float(doc, "max_bad_row_fraction", "dataset", 0.01)
    if not 0 <= bad_frac < 1:
        raise ConfigError(f"dataset.max_bad_row_fraction must be in [0, 1), got {bad_frac}")
    offset = _get_float(doc, "naive_utc_offset_hours", "dataset", 0.0)
    if not -24 <= offset <= 24:
        raise ConfigError(f"dataset.naive_utc_offset_hours must be in [-24, 24], got {offset}")
    return DatasetConfig(
        path=str(path),
        format=_get_str(doc, "format", "dataset", choices=VALID_FORMATS),
        columns=columns,
        timestamp_format=_get_str(doc, "timestamp_format", "dataset"),
        report_unit=_get_str(doc, "report_unit", "dataset", default="hours", choices=VALID_REPORT_UNITS),
        trim_boundary_days=trim,
        max_bad_row_fraction=bad_frac,
        naive_utc_offset_hours=offset,
    )


def _parse_features(doc: Mapping) -> FeaturesConfig:
    _reject_unknown(
        doc,
        ("peak_mode", "dense_calendar", "peak_min_distance", "peak_prominence_threshold"),
        "features",
    )
    threshold = _get_float(doc, "peak_prominence_threshold", "features", None)
    if threshold is not None and threshold <= 0:
        raise ConfigError(f"features.peak_prominence_threshold must be > 0, got {threshold}")
    return FeaturesConfig(
        peak_mode=_get_str(doc, "peak_mode", "features", default="full", choices=VALID_PEAK_MODES),
        dense_calendar=_get_bool(doc, "dense_calendar", "features", False),
        peak_min_distance=_get_int(doc, "peak_min_distance", "features", 7, minimum=1),
        peak_prominence_threshold=threshold,
    )


def _parse_grid_entry(entry: Any, index: int) -> GBTParams:
    path = f"models.grid[{index}]"
    if not isinstance(entry, Mapping):
        raise ConfigError(f"{path} must be a mapping, got {type(entry).__name__}")
    _reject_unknown(entry, _GRID_KEYS, path)
    kwargs = {}
    for key in ("n_estimators", "max_depth", "min_samples_leaf"):
        if key in entry:
            value = _get_int(entry, key, path, None)
            if value is None:
                raise ConfigError(f"{path}.{key} must be an integer, got null")
            kwargs[key] = value
    for key in ("learning_rate", "feature_fraction", "bagging_fraction"):
        if key in entry:
            value = _get_float(entry, key, path, None)
            if value is None:
                raise ConfigError(f"{path}.{key} must be a number, got null")
            kwargs[key] = value
    try:
        return GBTParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_models(doc: Mapping) -> ModelsConfig:
    _reject_unknown(doc, ("seed", "ar_p_max", "grid"), "models")
    grid: tuple[GBTParams, ...]
    if "grid" in doc and doc["grid"] is not None:
        raw = doc["grid"]
        if not isinstance(raw, (list, tuple)) or not raw:
            raise ConfigError("models.grid must be a non-empty list of parameter mappings")
        grid = tuple(_parse_grid_entry(entry, i) for i, entry in enumerate(raw))
    else:
        grid = DEFAULT_GRID
    return ModelsConfig(
        seed=_get_int(doc, "seed", "models", 42),
        ar_p_max=_get_int(doc, "ar_p_max", "models", 5, minimum=0, maximum=50),
        grid=grid,
    )


def _parse_evaluation(doc: Mapping) -> EvaluationConfig:
    _reject_unknown(
        doc,
        (
            "train_fraction",
            "cv_folds",
            "bootstrap_b",
            "bootstrap_block_length",
            "importance_repeats",
        ),
        "evaluation",
    )
    train_fraction = _get_float(doc, "train_fraction", "evaluation", 0.8)
    if not 0 < train_fraction < 1:
        raise ConfigError(
            f"evaluation.train_fraction must be in (0, 1), got {train_fraction}"
        )
    block = _get_int(doc, "bootstrap_block_length", "evaluation", None, minimum=2, optional=True)
    return EvaluationConfig(
        train_fraction=train_fraction,
        cv_folds=_get_int(doc, "cv_folds", "evaluation", 5, minimum=1),
        bootstrap_b=_get_int(doc, "bootstrap_b", "evaluation", 1000, minimum=1),
        bootstrap_block_length=block,
        importance_repeats=_get_int(doc, "importance_repeats", "evaluation", 10, minimum=1),
    )


def parse_config(doc: Any, base_dir: str | Path = ".") -> RunConfig:
    """Validate a parsed YAML document into a RunConfig."""
    base_dir = Path(base_dir)
    top = _as_mapping(doc, "config")
    if not top:
        raise ConfigError("config is empty; a dataset section with a path is required")
    _reject_unknown(top, ("dataset", "features", "models", "evaluation", "output_dir"), "")
    if "dataset" not in top:
        raise ConfigError("missing required config section 'dataset'")
    out_dir = _get_str(top, "output_dir", "config", default="out")
    out_path = Path(out_dir)
    if not out_path.is_absolute():
        out_path = base_dir / out_path
    return RunConfig(
        dataset=_parse_dataset(_as_mapping(top["dataset"], "dataset"), base_dir),
        features=_parse_features(_as_mapping(top.get("features"), "features")),
        models=_parse_models(_as_mapping(top.get("models"), "models")),
        evaluation=_parse_evaluation(_as_mapping(top.get("evaluation"), "evaluation")),
        output_dir=str(out_path),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    return parse_config(doc, base_dir=path.parent)
