"""Stage orchestration: run the whole pipeline or any single stage from its
upstream artifacts.

Every artifact is written atomically (temp file + rename), so an aborted
stage leaves no partial files. All stage randomness derives from
(models.seed, stage, unit) via the seed registry, so single-stage reruns
reproduce the full run byte-for-byte on the data artifacts; only
run_manifest.json (written by run alone, with wall-clock timings) differs
between invocations.
"""
from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .behavior import BEHAVIOR_ORDER, classify_transitions, read_enriched_rows, write_enriched_csv
from .config import RunConfig
from .errors import ConfigError, DataError, PipelineError, TTCastError
from .evaluation import (
    ModelRun,
    chrono_split,
    compare_report,
    grid_search,
    permutation_importance,
    ts_cv_folds,
)
from .event_log import load_event_log, log_summary, parse_csv, write_canonical_csv
from .features import (
    ACTOR_TAG,
    BASELINE_TAG,
    FeatureMatrix,
    build_feature_matrix,
    read_feature_matrix_csv,
    reconstruct,
    write_feature_matrix_csv,
)
from .io_utils import atomic_write, format_cell, read_json, write_json
from .models import (
    GBTParams,
    fit_ar_diff,
    fit_gbt,
    fit_naive,
    load_model,
    predict,
    save_model,
)
from .seeding import SeedRegistry
from .timeseries import SeriesPanel, assemble_panel, read_panel_csv, write_panel_csv

STAGE_ORDER = (
    "ingest",
    "enrich",
    "panel",
    "features",
    "tune",
    "train",
    "evaluate",
    "importance",
    "report",
)

_SET_SUFFIX = {BASELINE_TAG: "baseline", ACTOR_TAG: "actor"}

PREDICTION_COLUMNS = ("date", "actual_tt", "predicted_tt", "model", "feature_set")
IMPORTANCE_COLUMNS = ("rank", "feature", "delta_rmse")
CV_TABLE_COLUMNS = (
    "feature_set",
    "candidate",
    "n_estimators",
    "learning_rate",
    "max_depth",
    "feature_fraction",
    "bagging_fraction",
    "min_samples_leaf",
    "fold",
    "rmse",
    "note",
)


def features_csv_name(tag: str) -> str:
    return f"features_{_SET_SUFFIX[tag]}.csv"


def gbt_model_name(tag: str) -> str:
    return f"model_gbt_{_SET_SUFFIX[tag]}.json"


@dataclass
class PipelineContext:
    config: RunConfig
    out_dir: Path
    feature_sets: tuple[str, ...]
    registry: SeedRegistry

    def path(self, name: str) -> Path:
        return self.out_dir / name


def make_context(config: RunConfig, feature_sets=(BASELINE_TAG, ACTOR_TAG)) -> PipelineContext:
    tags = tuple(feature_sets)
    for tag in tags:
        if tag not in _SET_SUFFIX:
            raise ConfigError(f"unknown feature set {tag!r}")
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return PipelineContext(
        config=config,
        out_dir=out_dir,
        feature_sets=tags,
        registry=SeedRegistry(config.models.seed),
    )


def _require(ctx: PipelineContext, name: str, producer: str) -> Path:
    path = ctx.path(name)
    if not path.exists():
        raise PipelineError(
            f"expected artifact {path} is missing; run stage '{producer}' first"
        )
    return path


def _update_diagnostics(ctx: PipelineContext, section: str, payload: dict) -> None:
    path = ctx.path("diagnostics.json")
    doc = read_json(path) if path.exists() else {}
    doc[section] = payload
    write_json(path, doc)


def _load_canonical_log(ctx: PipelineContext):
    path = _require(ctx, "event_log.csv", "ingest")
    return parse_csv(path, max_bad_row_fraction=0.0)


# ---------------------------------------------------------------- stages


def stage_ingest(ctx: PipelineContext) -> None:
    ds = ctx.config.dataset
    src = Path(ds.path)
    if not src.exists():
        raise DataError(f"dataset file not found: {src}")
    log = load_event_log(
        src,
        fmt=ds.format,
        mapping=ds.columns or None,
        ts_format=ds.timestamp_format or "auto",
        max_bad_row_fraction=ds.max_bad_row_fraction,
        naive_utc_offset_hours=ds.naive_utc_offset_hours,
    )
    if not log.events:
        raise DataError(f"dataset {src} contains no usable events")
    write_canonical_csv(log, ctx.path("event_log.csv"))
    summary = log_summary(log)
    _update_diagnostics(
        ctx,
        "ingest",
        {"source": str(src), **log.ingest.as_dict(), **summary.as_dict()},
    )


def stage_enrich(ctx: PipelineContext) -> None:
    log = _load_canonical_log(ctx)
    transitions = classify_transitions(log)
    write_enriched_csv(transitions, ctx.path("enriched_log.csv"))
    counts = {b.value: 0 for b in BEHAVIOR_ORDER}
    for tr in transitions:
        counts[tr.behavior.value] += 1
    _update_diagnostics(
        ctx, "enrich", {"n_transitions": len(transitions), "behavior_counts": counts}
    )


def stage_panel(ctx: PipelineContext) -> None:
    log = _load_canonical_log(ctx)
    rows = read_enriched_rows(_require(ctx, "enriched_log.csv", "enrich"))
    panel = assemble_panel(
        log,
        rows,
        trim_boundary_days=ctx.config.dataset.trim_boundary_days,
        dense_calendar=ctx.config.features.dense_calendar,
    )
    write_panel_csv(panel, ctx.path("panel.csv"))
    _update_diagnostics(
        ctx,
        "panel",
        {
            "n_days": len(panel),
            "first_day": panel.calendar.dates[0].isoformat(),
            "last_day": panel.calendar.dates[-1].isoformat(),
            **panel.diagnostics.as_dict(),
        },
    )


def stage_features(ctx: PipelineContext) -> None:
    panel = read_panel_csv(_require(ctx, "panel.csv", "panel"))
    fc = ctx.config.features
    info = {}
    for tag in ctx.feature_sets:
        matrix = build_feature_matrix(
            panel,
            tag,
            peak_mode=fc.peak_mode,
            peak_min_distance=fc.peak_min_distance,
            peak_prominence_threshold=fc.peak_prominence_threshold,
        )
        write_feature_matrix_csv(matrix, ctx.path(features_csv_name(tag)))
        info[tag] = {
            "n_rows": matrix.n_rows,
            "n_features": len(matrix.feature_names),
            "first_origin": matrix.origin_dates[0].isoformat(),
            "last_origin": matrix.origin_dates[-1].isoformat(),
        }
    _update_diagnostics(ctx, "features", {"peak_mode": fc.peak_mode, "sets": info})


def _train_rows(ctx: PipelineContext, matrix: FeatureMatrix) -> tuple[FeatureMatrix, FeatureMatrix]:
    return chrono_split(matrix, ctx.config.evaluation.train_fraction)


def stage_tune(ctx: PipelineContext) -> None:
    ev = ctx.config.evaluation
    table_rows: list[list] = []
    tuned: dict[str, dict] = {}
    info = {}
    for tag in ctx.feature_sets:
        matrix = read_feature_matrix_csv(_require(ctx, features_csv_name(tag), "features"))
        train, _ = _train_rows(ctx, matrix)
        folds = ts_cv_folds(train.n_rows, ev.cv_folds)
        result = grid_search(
            train, ctx.config.models.grid, folds, seed=ctx.registry.get("tune", tag)
        )
        for i, fold_seed in enumerate(result.fold_seeds):
            ctx.registry.issued[f"tune.{tag}.fold.{i}"] = fold_seed
        for rec in result.records:
            p = rec.params
            table_rows.append(
                [
                    tag,
                    rec.candidate,
                    p.n_estimators,
                    format_cell(p.learning_rate),
                    p.max_depth,
                    format_cell(p.feature_fraction),
                    format_cell(p.bagging_fraction),
                    p.min_samples_leaf,
                    "mean" if rec.fold < 0 else rec.fold,
                    "" if rec.rmse is None else format_cell(rec.rmse),
                    rec.note,
                ]
            )
        tuned[tag] = result.best_params.as_dict(include_seed=False)
        info[tag] = {"best": tuned[tag], "n_folds": len(folds), "n_candidates": len(ctx.config.models.grid)}
    with atomic_write(ctx.path("cv_table.csv")) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CV_TABLE_COLUMNS)
        writer.writerows(table_rows)
    write_json(ctx.path("tuned_params.json"), tuned)
    _update_diagnostics(ctx, "tune", info)


def stage_train(ctx: PipelineContext) -> None:
    panel = read_panel_csv(_require(ctx, "panel.csv", "panel"))
    tuned = read_json(_require(ctx, "tuned_params.json", "tune"))
    info = {}
    n_train = None
    first_origin = None
    for tag in ctx.feature_sets:
        matrix = read_feature_matrix_csv(_require(ctx, features_csv_name(tag), "features"))
        if tag not in tuned:
            raise PipelineError(
                f"tuned_params.json has no entry for feature set {tag!r}; rerun stage 'tune'"
            )
        train, _ = _train_rows(ctx, matrix)
        n_train = train.n_rows
        first_origin = matrix.origin_dates[0]
        params = GBTParams(**tuned[tag], seed=ctx.registry.get("train", tag))
        model = fit_gbt(train, params)
        save_model(model, ctx.path(gbt_model_name(tag)))
        info[tag] = {"params": params.as_dict(include_seed=False), "n_train_rows": n_train}

    # benchmarks see exactly the TT values whose targets the GBT saw:
    # origins start at the warm-up offset, the last train target is one past
    # the last train origin
    offset = panel.calendar.index[first_origin]
    tt_train = panel.tt[: offset + n_train + 1]
    ar = fit_ar_diff(tt_train, ctx.config.models.ar_p_max)
    save_model(ar, ctx.path("model_ar_diff.json"))
    save_model(fit_naive(), ctx.path("model_naive.json"))
    info["ar_diff"] = {"p": ar.ar_p, "n_tt_values": int(tt_train.size)}
    _update_diagnostics(ctx, "train", info)


def _holdout_runs(ctx: PipelineContext, panel: SeriesPanel) -> list[ModelRun]:
    """Reconstructed-TT holdout predictions for every trained model."""
    from .models import forecast_ar_diff

    runs: list[ModelRun] = []
    holdout_positions = None
    dates = None
    actual = None
    base = None
    for tag in ctx.feature_sets:
        matrix = read_feature_matrix_csv(_require(ctx, features_csv_name(tag), "features"))
        _, hold = _train_rows(ctx, matrix)
        model = load_model(_require(ctx, gbt_model_name(tag), "train"))
        dtt_hat = predict(model, hold)
        recon, n_clamped = reconstruct(hold.base, dtt_hat)
        positions = np.array([panel.calendar.index[d] for d in hold.origin_dates])
        target_dates = tuple(panel.calendar.dates[p + 1] for p in positions)
        runs.append(
            ModelRun(
                model="gbt",
                feature_set=tag,
                dates=target_dates,
                actual=np.asarray(hold.actual_next_tt),
                predicted=recon,
                n_clamped=n_clamped,
            )
        )
        holdout_positions = positions
        dates = target_dates
        actual = np.asarray(hold.actual_next_tt)
        base = np.asarray(hold.base)

    ar = load_model(_require(ctx, "model_ar_diff.json", "train"))
    dtt_ar = forecast_ar_diff(ar, panel.tt, holdout_positions)
    recon_ar, clamped_ar = reconstruct(base, dtt_ar)
    runs.append(
        ModelRun(
            model="ar_diff",
            feature_set=None,
            dates=dates,
            actual=actual,
            predicted=recon_ar,
            n_clamped=clamped_ar,
        )
    )
    recon_naive, clamped_naive = reconstruct(base, np.zeros(len(base)))
    runs.append(
        ModelRun(
            model="naive",
            feature_set=None,
            dates=dates,
            actual=actual,
            predicted=recon_naive,
            n_clamped=clamped_naive,
        )
    )
    return runs


def stage_evaluate(ctx: PipelineContext) -> None:
    panel = read_panel_csv(_require(ctx, "panel.csv", "panel"))
    ev = ctx.config.evaluation
    runs = _holdout_runs(ctx, panel)
    if len(runs[0].dates) < 10:
        raise DataError(
            f"holdout too short for bootstrap intervals: {len(runs[0].dates)} days, need >= 10"
        )

    with atomic_write(ctx.path("predictions.csv")) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for run in runs:
            for i, day in enumerate(run.dates):
                writer.writerow(
                    [
                        day.isoformat(),
                        format_cell(float(run.actual[i])),
                        format_cell(float(run.predicted[i])),
                        run.model,
                        run.feature_set or "none",
                    ]
                )

    by_set = {run.feature_set: run for run in runs if run.model == "gbt"}
    report = compare_report(
        by_set.get(BASELINE_TAG),
        by_set.get(ACTOR_TAG),
        [r for r in runs if r.model != "gbt"],
        bootstrap_b=ev.bootstrap_b,
        alpha=0.05,
        block_length=ev.bootstrap_block_length,
        seed=ctx.registry.get("evaluate", "bootstrap"),
    )
    doc = report.to_dict()
    doc["report_unit"] = ctx.config.dataset.report_unit
    doc["bootstrap"] = {
        "B": ev.bootstrap_b,
        "alpha": 0.05,
        "block_length": ev.bootstrap_block_length,
    }
    doc["train_days"] = int(
        len(read_feature_matrix_csv(ctx.path(features_csv_name(ctx.feature_sets[0]))).origin_dates)
        - len(runs[0].dates)
    )
    write_json(ctx.path("metrics.json"), doc)
    _update_diagnostics(
        ctx,
        "evaluate",
        {
            "holdout_days": len(runs[0].dates),
            "clamped": {f"{r.model}/{r.feature_set or 'none'}": r.n_clamped for r in runs},
        },
    )


def stage_importance(ctx: PipelineContext) -> None:
    tag = ACTOR_TAG if ACTOR_TAG in ctx.feature_sets else ctx.feature_sets[0]
    matrix = read_feature_matrix_csv(_require(ctx, features_csv_name(tag), "features"))
    model = load_model(_require(ctx, gbt_model_name(tag), "train"))
    _, hold = _train_rows(ctx, matrix)
    records = permutation_importance(
        model,
        hold,
        repeats=ctx.config.evaluation.importance_repeats,
        seed=ctx.registry.get("importance", tag),
    )
    with atomic_write(ctx.path("importance.csv")) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(IMPORTANCE_COLUMNS)
        for rank, rec in enumerate(records, start=1):
            writer.writerow([rank, rec.feature, format_cell(rec.mean_delta_rmse)])

    metrics_path = _require(ctx, "metrics.json", "evaluate")
    doc = read_json(metrics_path)
    doc["importance"] = [
        {"rank": i + 1, "feature": rec.feature, "delta_rmse": rec.mean_delta_rmse}
        for i, rec in enumerate(records)
    ]
    doc["importance_feature_set"] = tag
    write_json(metrics_path, doc)
    _update_diagnostics(
        ctx,
        "importance",
        {"feature_set": tag, "top_feature": records[0].feature if records else None},
    )


def _read_csv_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def stage_report(ctx: PipelineContext) -> None:
    from .plots import plot_importance, plot_predictions
    from .report import render_report

    metrics_doc = read_json(_require(ctx, "metrics.json", "evaluate"))
    predictions = _read_csv_rows(_require(ctx, "predictions.csv", "evaluate"))
    unit = metrics_doc.get("report_unit", "hours")

    text = render_report(metrics_doc, unit=unit)
    with atomic_write(ctx.path("report.txt")) as handle:
        handle.write(text)

    plot_predictions(predictions, ctx.path("predictions.png"), unit=unit)
    importance_path = ctx.path("importance.csv")
    if importance_path.exists():
        rows = _read_csv_rows(importance_path)
        if rows:
            plot_importance(rows, ctx.path("importance.png"), unit=unit)
    _update_diagnostics(ctx, "report", {"unit": unit, "n_prediction_rows": len(predictions)})


_STAGE_FNS = {
    "ingest": stage_ingest,
    "enrich": stage_enrich,
    "panel": stage_panel,
    "features": stage_features,
    "tune": stage_tune,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "importance": stage_importance,
    "report": stage_report,
}


def cmd_stage(name: str, ctx: PipelineContext) -> None:
    """Run exactly one stage, requiring its upstream artifacts."""
    if name not in _STAGE_FNS:
        raise ConfigError(f"unknown stage {name!r}; stages are {', '.join(STAGE_ORDER)}")
    try:
        _STAGE_FNS[name](ctx)
    except TTCastError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc
    except Exception as exc:  # foreign errors become pipeline failures
        raise PipelineError(f"stage {name}: {type(exc).__name__}: {exc}") from exc


def cmd_run(ctx: PipelineContext) -> dict:
    """Run every stage in order and write run_manifest.json.

    Returns the manifest document. Identical config, data, and seed give
    byte-identical data artifacts; the manifest alone carries timings.
    """
    timings: dict[str, float] = {}
    for name in STAGE_ORDER:
        started = time.perf_counter()
        cmd_stage(name, ctx)
        timings[name] = round(time.perf_counter() - started, 6)

    diagnostics = read_json(ctx.path("diagnostics.json"))
    artifacts = sorted(
        p.name for p in ctx.out_dir.iterdir() if p.is_file() and p.name != "run_manifest.json"
    )
    manifest = {
        "schema": "ttcast-manifest-v1",
        "package_version": __version__,
        "python_version": sys.version.split()[0],
        "numpy_version": np.__version__,
        "pandas_version": pd.__version__,
        "config": ctx.config.to_dict(),
        "feature_sets": list(ctx.feature_sets),
        "seeds": ctx.registry.as_dict(),
        "stage_seconds": timings,
        "artifacts": artifacts,
        "diagnostics": diagnostics,
    }
    write_json(ctx.path("run_manifest.json"), manifest)
    return manifest
