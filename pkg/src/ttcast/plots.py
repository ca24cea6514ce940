"""Figure rendering for the report stage (headless backend).

Figures are a presentation layer over predictions.csv / importance.csv;
nothing downstream reads them back.
"""
from __future__ import annotations

import datetime as dt
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .report import convert_hours

_SERIES_STYLE = {
    ("gbt", "baseline"): dict(color="tab:blue", linestyle="-"),
    ("gbt", "actor_enriched"): dict(color="tab:red", linestyle="-"),
    ("ar_diff", None): dict(color="tab:green", linestyle="--"),
    ("naive", None): dict(color="tab:gray", linestyle=":"),
}


def _label(model: str, feature_set: str | None) -> str:
    return f"{model} ({feature_set})" if feature_set else model


def plot_predictions(
    prediction_rows: Sequence[Mapping], path: str | Path, *, unit: str = "hours"
) -> None:
    """Actual vs predicted TT on the holdout window, one line per model."""
    groups: dict[tuple[str, str | None], list[Mapping]] = {}
    for row in prediction_rows:
        fs = row["feature_set"] or None
        if fs == "none":
            fs = None
        groups.setdefault((row["model"], fs), []).append(row)
    if not groups:
        raise ValueError("no prediction rows to plot")

    fig, ax = plt.subplots(figsize=(10, 5))
    first = next(iter(groups.values()))
    dates = [dt.date.fromisoformat(r["date"]) for r in first]
    actual = [convert_hours(float(r["actual_tt"]), unit) for r in first]
    ax.plot(dates, actual, color="black", linewidth=2.0, label="actual")
    for (model, fs), rows in groups.items():
        style = _SERIES_STYLE.get((model, fs), dict(linestyle="-"))
        ax.plot(
            [dt.date.fromisoformat(r["date"]) for r in rows],
            [convert_hours(float(r["predicted_tt"]), unit) for r in rows],
            linewidth=1.4,
            label=_label(model, fs),
            **style,
        )
    ax.set_xlabel("day")
    ax.set_ylabel(f"mean throughput time [{unit}]")
    ax.set_title("Holdout forecasts vs actual daily throughput time")
    ax.legend(loc="best", fontsize=9)
    ax.grid(True, alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_importance(
    importance_rows: Sequence[Mapping],
    path: str | Path,
    *,
    unit: str = "hours",
    top: int = 15,
) -> None:
    """Horizontal bars: mean holdout RMSE increase per shuffled feature."""
    rows = list(importance_rows)[:top]
    if not rows:
        raise ValueError("no importance rows to plot")
    features = [r["feature"] for r in rows][::-1]
    deltas = [convert_hours(float(r["delta_rmse"]), unit) for r in rows][::-1]

    fig, ax = plt.subplots(figsize=(8, max(3, 0.35 * len(rows) + 1.5)))
    ax.barh(features, deltas, color="tab:blue")
    ax.set_xlabel(f"mean RMSE increase when shuffled [{unit}]")
    ax.set_title("Permutation importance")
    ax.grid(True, axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
