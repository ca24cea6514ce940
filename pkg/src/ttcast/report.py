"""Plain-text evaluation report rendered from stored artifacts.

Metric values are stored in hours everywhere; the report unit only changes
how they are PRINTED (days divide by 24 at render time). R2 and day counts
are unitless and never converted.
"""
from __future__ import annotations

from typing import Mapping, Sequence

_UNIT_DIVISOR = {"hours": 1.0, "days": 24.0}


def convert_hours(value: float | None, unit: str) -> float | None:
    if value is None:
        return None
    try:
        divisor = _UNIT_DIVISOR[unit]
    except KeyError:
        raise ValueError(f"unknown report unit {unit!r}") from None
    return value / divisor


def _fmt(value: float | None, width: int = 10) -> str:
    if value is None:
        return "-".rjust(width)
    return f"{value:.4f}".rjust(width)


def _fmt_ci(ci, unit: str, scaled: bool) -> str:
    if not ci:
        return "[-, -]"
    low, high = ci
    if scaled:
        low, high = convert_hours(low, unit), convert_hours(high, unit)
    return f"[{low:.4f}, {high:.4f}]"


def _metric_cell(row: Mapping, metric: str, unit: str) -> str:
    scaled = metric != "r2"
    value = row.get(metric)
    if scaled:
        value = convert_hours(value, unit)
    ci = (row.get("cis") or {}).get(metric)
    return f"{_fmt(value)} {_fmt_ci(ci, unit, scaled)}"


def render_report(
    metrics_doc: Mapping,
    *,
    unit: str | None = None,
    importance_top: int = 10,
) -> str:
    """Human-readable comparison table from a metrics document."""
    unit = unit or metrics_doc.get("report_unit") or "hours"
    holdout = metrics_doc.get("holdout", {})
    lines = []
    title = "Throughput-time forecast evaluation"
    lines.append(title)
    lines.append("=" * len(title))
    lines.append("")
    lines.append(
        f"Holdout: {holdout.get('start', '?')} .. {holdout.get('end', '?')} "
        f"({holdout.get('n_days', '?')} days), metric unit: {unit}"
    )
    lines.append("")

    header = (
        f"{'model':<9} {'feature set':<15} "
        f"{'rmse [95% CI]':<30} {'mae [95% CI]':<30} {'r2 [95% CI]':<30}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for row in metrics_doc.get("rows", []):
        fs = row.get("feature_set") or "-"
        lines.append(
            f"{row['model']:<9} {fs:<15} "
            f"{_metric_cell(row, 'rmse', unit):<30} "
            f"{_metric_cell(row, 'mae', unit):<30} "
            f"{_metric_cell(row, 'r2', unit):<30}".rstrip()
        )
    lines.append("")

    deltas = metrics_doc.get("deltas")
    if deltas:
        rmse_d = convert_hours(deltas.get("rmse"), unit)
        mae_d = convert_hours(deltas.get("mae"), unit)
        r2_d = deltas.get("r2")
        lines.append(
            "Actor-enriched improvement over baseline: "
            f"rmse {_fmt(rmse_d, 0).strip()}, mae {_fmt(mae_d, 0).strip()}, "
            f"r2 {_fmt(r2_d, 0).strip()}"
        )
        lines.append("(positive = actor-enriched model is better on that metric)")
        lines.append("")

    importance = metrics_doc.get("importance")
    if importance:
        fs = metrics_doc.get("importance_feature_set") or "?"
        lines.append(
            f"Permutation importance ({fs} model, top {min(importance_top, len(importance))} "
            f"by mean RMSE increase, {unit}):"
        )
        for entry in importance[:importance_top]:
            delta = convert_hours(entry["delta_rmse"], unit)
            lines.append(f"  {entry['rank']:>3}. {entry['feature']:<28} {delta:+.6f}")
        lines.append("")

    clamped = {
        (row["model"], row.get("feature_set")): row.get("n_clamped_predictions", 0)
        for row in metrics_doc.get("rows", [])
    }
    total_clamped = sum(clamped.values())
    if total_clamped:
        parts = [
            f"{model}/{fs or '-'}: {n}" for (model, fs), n in clamped.items() if n
        ]
        lines.append(f"Forecasts clamped at zero: {', '.join(parts)}")
        lines.append("")

    return "\n".join(lines).rstrip() + "\n"


def render_cv_summary(records: Sequence[Mapping], unit: str = "hours") -> str:
    """Compact per-candidate mean-score table (for logs and debugging)."""
    lines = [f"{'set':<15} {'cand':>4} {'mean rmse':>12}  params"]
    for rec in records:
        if str(rec.get("fold")) != "mean":
            continue
        score = rec.get("rmse")
        value = "-" if score in (None, "") else f"{convert_hours(float(score), unit):.4f}"
        params = (
            f"trees={rec.get('n_estimators')} lr={rec.get('learning_rate')} "
            f"depth={rec.get('max_depth')}"
        )
        lines.append(
            f"{rec.get('feature_set', '?'):<15} {rec.get('candidate', '?'):>4} "
            f"{value:>12}  {params}"
        )
    return "\n".join(lines) + "\n"
