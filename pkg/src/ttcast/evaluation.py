"""Chronological evaluation: split, expanding-window CV, grid search,
metrics with bootstrap CIs, permutation importance, model comparison.

Every RMSE used for tuning and reporting is computed on RECONSTRUCTED TT
(base + predicted delta, clamped at zero), not on the delta itself.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DataError
from .features import FeatureMatrix, reconstruct
from .models import GBTParams, TrainedModel, fit_gbt, predict
from .seeding import derive_seed


@dataclass(frozen=True, slots=True)
class Fold:
    train_start: int
    train_stop: int
    val_start: int
    val_stop: int


@dataclass(frozen=True, slots=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    def __iter__(self):
        return iter(self.folds)

    def __len__(self) -> int:
        return len(self.folds)


def chrono_split(
    matrix: FeatureMatrix, train_fraction: float = 0.8
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """First floor(train_fraction * n) rows train, the rest hold out."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = matrix.n_rows
    if n < 25:
        raise DataError(f"need >= 25 feature rows for a chronological split, got {n}")
    n_train = int(np.floor(train_fraction * n))
    return matrix.rows(slice(0, n_train)), matrix.rows(slice(n_train, n))


def ts_cv_folds(n_rows: int, k: int = 5) -> FoldPlan:
    """Expanding-window folds: k+1 near-equal consecutive blocks (remainder
    to the earliest blocks); fold i trains on blocks 1..i, validates on
    block i+1."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n_rows < k + 1:
        raise DataError(f"need >= k+1 = {k + 1} rows for {k}-fold CV, got {n_rows}")
    base, rem = divmod(n_rows, k + 1)
    sizes = [base + (1 if i < rem else 0) for i in range(k + 1)]
    bounds = np.cumsum([0] + sizes)
    folds = tuple(
        Fold(
            train_start=0,
            train_stop=int(bounds[i]),
            val_start=int(bounds[i]),
            val_stop=int(bounds[i + 1]),
        )
        for i in range(1, k + 1)
    )
    return FoldPlan(folds=folds)


@dataclass(frozen=True, slots=True)
class Metrics:
    rmse: float
    mae: float
    r2: float | None

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "r2": self.r2}


def compute_metrics(actual: np.ndarray, predicted: np.ndarray) -> Metrics:
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise ValueError(f"length mismatch: {actual.shape} vs {predicted.shape}")
    if actual.size == 0:
        raise ValueError("cannot compute metrics on empty vectors")
    err = actual - predicted
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    sst = float(np.sum((actual - np.mean(actual)) ** 2))
    r2 = None if sst == 0.0 else 1.0 - float(np.sum(err * err)) / sst
    return Metrics(rmse=rmse, mae=mae, r2=r2)


def _holdout_rmse(
    model_predict: Callable[[FeatureMatrix], np.ndarray], rows: FeatureMatrix
) -> float:
    dtt_hat = model_predict(rows)
    recon, _ = reconstruct(rows.base, dtt_hat)
    return compute_metrics(rows.actual_next_tt, recon).rmse


@dataclass(frozen=True, slots=True)
class CVRecord:
    candidate: int
    params: GBTParams
    fold: int  # -1 aggregates the candidate's mean score
    rmse: float | None
    note: str = ""


@dataclass(frozen=True, slots=True)
class GridSearchResult:
    best_params: GBTParams
    records: tuple[CVRecord, ...]
    fold_seeds: tuple[int, ...]


def grid_search(
    matrix: FeatureMatrix,
    grid: Sequence[GBTParams],
    folds: FoldPlan,
    *,
    seed: int = 42,
) -> GridSearchResult:
    """Mean fold RMSE on reconstructed TT; lowest wins.

    Ties break to fewer estimators, then shallower depth, then lower
    learning rate, then declaration order. The fit seed is shared by all
    candidates within a fold (derived from (seed, fold)), so candidates
    differing only in n_estimators grow identical tree prefixes and compare
    paired. Candidates that fail any fold are disqualified with the reason
    recorded.
    """
    if not grid:
        raise ValueError("grid must contain at least one candidate")
    fold_seeds = tuple(derive_seed(seed, "fold", i) for i in range(len(folds)))
    records: list[CVRecord] = []
    scores: list[float | None] = []
    for ci, cand in enumerate(grid):
        fold_rmses: list[float] = []
        failed = False
        for fi, fold in enumerate(folds):
            if failed:
                break
            train = matrix.rows(slice(fold.train_start, fold.train_stop))
            val = matrix.rows(slice(fold.val_start, fold.val_stop))
            try:
                model = fit_gbt(train, replace(cand, seed=fold_seeds[fi]))
                rmse = _holdout_rmse(lambda rows: predict(model, rows), val)
            except (ValueError, DataError) as exc:
                records.append(CVRecord(candidate=ci, params=cand, fold=fi, rmse=None, note=str(exc)))
                failed = True
                continue
            fold_rmses.append(rmse)
            records.append(CVRecord(candidate=ci, params=cand, fold=fi, rmse=rmse))
        if failed:
            scores.append(None)
            records.append(
                CVRecord(candidate=ci, params=cand, fold=-1, rmse=None, note="disqualified")
            )
        else:
            mean_rmse = float(np.mean(fold_rmses))
            scores.append(mean_rmse)
            records.append(CVRecord(candidate=ci, params=cand, fold=-1, rmse=mean_rmse))

    best_ci: int | None = None
    for ci, score in enumerate(scores):
        if score is None:
            continue
        if best_ci is None or _beats(grid[ci], score, grid[best_ci], scores[best_ci]):
            best_ci = ci
    if best_ci is None:
        raise DataError(
            "every grid candidate failed cross-validation; "
            + "; ".join(r.note for r in records if r.note and r.note != "disqualified")[:500]
        )
    return GridSearchResult(
        best_params=grid[best_ci], records=tuple(records), fold_seeds=fold_seeds
    )


def _beats(cand: GBTParams, score: float, incumbent: GBTParams, inc_score: float) -> bool:
    if score != inc_score:
        return score < inc_score
    if cand.n_estimators != incumbent.n_estimators:
        return cand.n_estimators < incumbent.n_estimators
    if cand.max_depth != incumbent.max_depth:
        return cand.max_depth < incumbent.max_depth
    if cand.learning_rate != incumbent.learning_rate:
        return cand.learning_rate < incumbent.learning_rate
    return False  # declaration order: earlier candidate stays


_METRIC_NAMES = ("rmse", "mae", "r2")


def _metric_rows(actual: np.ndarray, predicted: np.ndarray, metric: str) -> np.ndarray:
    """Vectorized metric over resampled rows (B, n) -> (B,); NaN where undefined."""
    err = actual - predicted
    if metric == "rmse":
        return np.sqrt(np.mean(err * err, axis=1))
    if metric == "mae":
        return np.mean(np.abs(err), axis=1)
    if metric == "r2":
        sse = np.sum(err * err, axis=1)
        sst = np.sum((actual - np.mean(actual, axis=1, keepdims=True)) ** 2, axis=1)
        out = np.full(len(actual), np.nan)
        ok = sst > 0
        out[ok] = 1.0 - sse[ok] / sst[ok]
        return out
    raise ValueError(f"metric must be one of {_METRIC_NAMES}, got {metric!r}")


def bootstrap_ci(
    actual: np.ndarray,
    predicted: np.ndarray,
    metric: str = "rmse",
    B: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
    block_length: int | None = None,
) -> tuple[float, float] | tuple[None, None]:
    """Percentile bootstrap over day indices.

    Days are resampled i.i.d. with replacement; with `block_length`, moving
    blocks of that length are drawn instead (autocorrelation-aware option).
    R2 replicates with zero variance in the resampled actuals are skipped;
    if none remain the interval is (None, None).
    """
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    n = len(actual)
    if actual.shape != predicted.shape:
        raise ValueError(f"length mismatch: {actual.shape} vs {predicted.shape}")
    if n < 10:
        raise ValueError(f"need >= 10 observations for a bootstrap CI, got {n}")
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if block_length:
        if not 1 < block_length <= n:
            raise ValueError(f"block_length must be in 2..{n}, got {block_length}")
        n_blocks = -(-n // block_length)
        starts = rng.integers(0, n - block_length + 1, size=(B, n_blocks))
        idx = (starts[:, :, None] + np.arange(block_length)[None, None, :]).reshape(B, -1)[:, :n]
    else:
        idx = rng.integers(0, n, size=(B, n))
    values = _metric_rows(actual[idx], predicted[idx], metric)
    values = values[~np.isnan(values)]
    if values.size == 0:
        return (None, None)
    low, high = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return (float(low), float(high))


@dataclass(frozen=True, slots=True)
class ImportanceRecord:
    feature: str
    mean_delta_rmse: float
    deltas: tuple[float, ...]


def permutation_importance(
    model: TrainedModel,
    holdout: FeatureMatrix,
    *,
    repeats: int = 10,
    seed: int = 0,
) -> list[ImportanceRecord]:
    """Mean increase in reconstructed-TT RMSE when one column is shuffled.

    Each (feature, repeat) pair owns a generator seeded by (seed, feature
    index, repeat), so results do not depend on evaluation order. Sorted by
    decreasing mean increase; ties keep feature order.
    """
    n = holdout.n_rows
    if n < 10:
        raise ValueError(f"need >= 10 holdout rows for permutation importance, got {n}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    base_rmse = _holdout_rmse(lambda rows: predict(model, rows), holdout)
    records = []
    for j, name in enumerate(holdout.feature_names):
        deltas = []
        for r in range(repeats):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, j, r))))
            perm = rng.permutation(n)
            shuffled = holdout.X.copy()
            shuffled[:, j] = shuffled[perm, j]
            rmse = _holdout_rmse(
                lambda rows: predict(model, rows), replace(holdout, X=shuffled)
            )
            deltas.append(rmse - base_rmse)
        records.append(
            ImportanceRecord(
                feature=name,
                mean_delta_rmse=float(np.mean(deltas)),
                deltas=tuple(deltas),
            )
        )
    order = sorted(range(len(records)), key=lambda i: (-records[i].mean_delta_rmse, i))
    return [records[i] for i in order]


@dataclass(frozen=True, slots=True)
class ModelRun:
    """One model's holdout predictions on the reconstructed TT scale."""

    model: str  # 'gbt' | 'ar_diff' | 'naive'
    feature_set: str | None  # None for benchmarks
    dates: tuple[dt.date, ...]  # forecast-target dates
    actual: np.ndarray
    predicted: np.ndarray
    n_clamped: int = 0


@dataclass(frozen=True, slots=True)
class ReportRow:
    model: str
    feature_set: str | None
    metrics: Metrics
    cis: dict
    n_days: int
    n_clamped: int

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "feature_set": self.feature_set,
            "n_days": self.n_days,
            "n_clamped_predictions": self.n_clamped,
            **self.metrics.as_dict(),
            "cis": self.cis,
        }


@dataclass(frozen=True)
class EvaluationReport:
    rows: tuple[ReportRow, ...]
    deltas: dict | None
    holdout_start: dt.date
    holdout_end: dt.date
    n_days: int
    importance: tuple[ImportanceRecord, ...] | None = None
    importance_feature_set: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema": "ttcast-metrics-v1",
            "holdout": {
                "start": self.holdout_start.isoformat(),
                "end": self.holdout_end.isoformat(),
                "n_days": self.n_days,
            },
            "rows": [row.as_dict() for row in self.rows],
            "deltas": self.deltas,
            "delta_convention": (
                "improvements of the actor-enriched model over the baseline: "
                "rmse/mae are baseline minus actor, r2 is actor minus baseline"
            ),
            "importance": (
                None
                if self.importance is None
                else [
                    {"rank": i + 1, "feature": rec.feature, "delta_rmse": rec.mean_delta_rmse}
                    for i, rec in enumerate(self.importance)
                ]
            ),
            "importance_feature_set": self.importance_feature_set,
        }


def compare_report(
    baseline: ModelRun | None,
    actor: ModelRun | None,
    benchmarks: Sequence[ModelRun] = (),
    *,
    bootstrap_b: int = 1000,
    alpha: float = 0.05,
    block_length: int | None = None,
    seed: int = 0,
) -> EvaluationReport:
    """Metrics + CIs per run, with actor-vs-baseline deltas when both exist.

    All runs must share the same holdout dates. Benchmark rows carry no
    feature set (rendered with empty actor/delta cells).
    """
    runs = [r for r in (baseline, actor) if r is not None] + list(benchmarks)
    if not runs:
        raise ValueError("compare_report needs at least one run")
    dates = runs[0].dates
    for run in runs[1:]:
        if run.dates != dates:
            raise ValueError(
                f"holdout date mismatch between runs: {run.model}/{run.feature_set} "
                f"spans {run.dates[0]}..{run.dates[-1]}, expected {dates[0]}..{dates[-1]}"
            )

    rows = []
    per_run_metrics: dict[tuple[str, str | None], Metrics] = {}
    for run in runs:
        metrics = compute_metrics(run.actual, run.predicted)
        cis = {}
        for metric in _METRIC_NAMES:
            ci_seed = derive_seed(seed, "bootstrap", run.model, run.feature_set or "none", metric)
            low, high = bootstrap_ci(
                run.actual,
                run.predicted,
                metric=metric,
                B=bootstrap_b,
                alpha=alpha,
                seed=ci_seed,
                block_length=block_length,
            )
            cis[metric] = None if low is None else [low, high]
        rows.append(
            ReportRow(
                model=run.model,
                feature_set=run.feature_set,
                metrics=metrics,
                cis=cis,
                n_days=len(run.dates),
                n_clamped=run.n_clamped,
            )
        )
        per_run_metrics[(run.model, run.feature_set)] = metrics

    deltas = None
    if baseline is not None and actor is not None:
        mb = per_run_metrics[(baseline.model, baseline.feature_set)]
        ma = per_run_metrics[(actor.model, actor.feature_set)]
        deltas = {
            "rmse": mb.rmse - ma.rmse,
            "mae": mb.mae - ma.mae,
            "r2": (None if mb.r2 is None or ma.r2 is None else ma.r2 - mb.r2),
        }

    return EvaluationReport(
        rows=tuple(rows),
        deltas=deltas,
        holdout_start=dates[0],
        holdout_end=dates[-1],
        n_days=len(dates),
    )
