"""Feature engineering: lags, rolling stats, z-score, peak indicator, and
the smoothed-difference target with its reconstruction inverse.

All transforms are causal (trailing windows including the current index)
except the peak indicator in its default "full" mode, which detects peaks
over the FULL series and therefore leaks future shape into the indicator.
Pass peak_mode="causal" for the leak-free variant (each day decided from
data up to that day only, with the newest point treated as a provisional
peak candidate).
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError
from .io_utils import atomic_write, format_cell
from .timeseries import ACTOR_COLUMNS, SeriesPanel

LAG_RANGE = range(1, 21)
ROLLING_WINDOWS = (3, 7, 14)
ROLLING_STATS = ("mean", "std", "max")

BASELINE_TAG = "baseline"
ACTOR_TAG = "actor_enriched"

STD_FLOOR = 1e-12

TRAILING_META = ("target_dtt", "base_tt", "actual_next_tt")


def lag(series: np.ndarray, k: int) -> np.ndarray:
    """Value at t equals series[t-k]; the first k entries are undefined (NaN)."""
    if k < 1:
        raise ValueError(f"lag must be >= 1, got {k}")
    series = np.asarray(series, dtype=np.float64)
    out = np.full(series.shape, np.nan)
    if k < len(series):
        out[k:] = series[:-k]
    return out


def rolling_stat(series: np.ndarray, w: int, stat: str) -> np.ndarray:
    """Trailing window of length w including the current index; defined from
    index w-1 onward. std uses the sample denominator (n-1)."""
    if w < 2:
        raise ValueError(f"rolling window must be >= 2, got {w}")
    if stat not in ROLLING_STATS:
        raise ValueError(f"stat must be one of {ROLLING_STATS}, got {stat!r}")
    series = np.asarray(series, dtype=np.float64)
    out = np.full(series.shape, np.nan)
    if len(series) < w:
        return out
    windows = np.lib.stride_tricks.sliding_window_view(series, w)
    if stat == "mean":
        out[w - 1:] = windows.mean(axis=1)
    elif stat == "std":
        out[w - 1:] = windows.std(axis=1, ddof=1)
    else:
        out[w - 1:] = windows.max(axis=1)
    return out


def zscore7(series: np.ndarray) -> np.ndarray:
    """(x_t - rolling_mean7) / rolling_std7, 0 where the std is below 1e-12."""
    series = np.asarray(series, dtype=np.float64)
    mean7 = rolling_stat(series, 7, "mean")
    std7 = rolling_stat(series, 7, "std")
    out = np.full(series.shape, np.nan)
    defined = ~np.isnan(std7)
    tiny = defined & (std7 < STD_FLOOR)
    ok = defined & ~tiny
    out[ok] = (series[ok] - mean7[ok]) / std7[ok]
    out[tiny] = 0.0
    return out


def _strict_local_maxima(x: np.ndarray) -> list[int]:
    return [i for i in range(1, len(x) - 1) if x[i] > x[i - 1] and x[i] > x[i + 1]]


def _prominence(x: np.ndarray, i: int) -> float:
    """Height above the higher of the two lowest valleys separating the peak
    from strictly taller terrain (topographic prominence)."""
    left_min = np.inf
    j = i - 1
    while j >= 0 and x[j] <= x[i]:
        left_min = min(left_min, x[j])
        j -= 1
    right_min = np.inf
    j = i + 1
    while j < len(x) and x[j] <= x[i]:
        right_min = min(right_min, x[j])
        j += 1
    if right_min == np.inf:  # ran off the end: provisional right base = left base
        right_min = left_min
    if left_min == np.inf:
        left_min = right_min
    return float(x[i] - max(left_min, right_min))


def _select_peaks(
    x: np.ndarray,
    min_distance: int,
    prominence_threshold: float | None,
    *,
    provisional_last: bool = False,
) -> list[int]:
    candidates = _strict_local_maxima(x)
    if provisional_last and len(x) >= 2 and x[-1] > x[-2]:
        candidates.append(len(x) - 1)
    proms = {i: _prominence(x, i) for i in candidates}
    if prominence_threshold is not None:
        candidates = [i for i in candidates if proms[i] >= prominence_threshold]
    kept: list[int] = []
    for i in sorted(candidates, key=lambda i: (-proms[i], i)):
        if all(abs(i - j) >= min_distance for j in kept):
            kept.append(i)
    return sorted(kept)


def detect_peaks(
    series: np.ndarray,
    min_distance: int = 7,
    prominence_threshold: float | None = None,
) -> np.ndarray:
    """Binary indicator of retained peaks over the whole series.

    Strict local maxima, ranked by topographic prominence; of any two peaks
    closer than min_distance indices the lower-prominence one is removed
    (ties keep the earlier index).
    """
    if min_distance < 1:
        raise ValueError(f"min_distance must be >= 1, got {min_distance}")
    series = np.asarray(series, dtype=np.float64)
    out = np.zeros(series.shape, dtype=np.float64)
    if len(series) >= 3:
        out[_select_peaks(series, min_distance, prominence_threshold)] = 1.0
    return out


def causal_peak_flags(
    series: np.ndarray,
    min_distance: int = 7,
    prominence_threshold: float | None = None,
) -> np.ndarray:
    """Leak-free peak indicator: flag at t is decided from series[: t+1] only.

    The newest point has no right neighbour, so it is treated as a
    provisional candidate when it exceeds its left neighbour, with its right
    base provisionally equal to its left base.
    """
    if min_distance < 1:
        raise ValueError(f"min_distance must be >= 1, got {min_distance}")
    series = np.asarray(series, dtype=np.float64)
    out = np.zeros(series.shape, dtype=np.float64)
    for t in range(1, len(series)):
        prefix = series[: t + 1]
        kept = _select_peaks(prefix, min_distance, prominence_threshold, provisional_last=True)
        if t in kept:
            out[t] = 1.0
    return out


def make_target(tt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smoothed-difference target aligned to origin rows.

    diff_t = tt_t - tt_{t-1}; smoothed_t = trailing mean of the last three
    diffs; the target at origin t is smoothed_{t+1}. Returns full-length
    arrays (target, base, actual_next) padded with NaN where undefined.
    """
    tt = np.asarray(tt, dtype=np.float64)
    n = len(tt)
    if n < 4:
        raise DataError(f"insufficient history: need >= 4 TT values, got {n}")
    diff = tt[1:] - tt[:-1]
    smoothed = np.full(n, np.nan)
    smoothed[3:] = np.lib.stride_tricks.sliding_window_view(diff, 3).mean(axis=1)
    target = np.full(n, np.nan)
    target[:-1] = smoothed[1:]
    actual_next = np.full(n, np.nan)
    actual_next[:-1] = tt[1:]
    return target, tt.copy(), actual_next


def reconstruct(base: np.ndarray, dtt_hat: np.ndarray) -> tuple[np.ndarray, int]:
    """TT forecast = base + predicted delta, clamped at zero.

    Returns the forecast and the number of clamped (negative) values.
    """
    base = np.asarray(base, dtype=np.float64)
    dtt_hat = np.asarray(dtt_hat, dtype=np.float64)
    if base.shape != dtt_hat.shape:
        raise ValueError(f"shape mismatch: base {base.shape} vs delta {dtt_hat.shape}")
    out = base + dtt_hat
    negative = out < 0
    n_clamped = int(np.count_nonzero(negative))
    out[negative] = 0.0
    return out, n_clamped


def baseline_feature_names() -> list[str]:
    names = [f"TT_lag{k}" for k in LAG_RANGE]
    names += [f"TT_rolling_{stat}{w}" for w in ROLLING_WINDOWS for stat in ROLLING_STATS]
    names += ["TT_zscore7", "TT_peak"]
    return names


def actor_feature_names() -> list[str]:
    names = baseline_feature_names()
    for col in ACTOR_COLUMNS:
        names.append(col)
        names += [f"{col}_lag{k}" for k in LAG_RANGE]
        names += [f"{col}_rolling_{stat}{w}" for w in ROLLING_WINDOWS for stat in ROLLING_STATS]
    return names


def normalize_tag(set_tag: str) -> str:
    tag = set_tag.strip().lower()
    if tag in (BASELINE_TAG, "base"):
        return BASELINE_TAG
    if tag in (ACTOR_TAG, "actor", "actor-enriched"):
        return ACTOR_TAG
    raise ValueError(f"unknown feature set tag {set_tag!r}")


def feature_columns(
    panel: SeriesPanel,
    set_tag: str = BASELINE_TAG,
    *,
    peak_mode: str = "full",
    peak_min_distance: int = 7,
    peak_prominence_threshold: float | None = None,
) -> tuple[list[str], dict[str, np.ndarray]]:
    """Engineered columns over the full panel length (NaN during warm-up)."""
    tag = normalize_tag(set_tag)
    if peak_mode not in ("full", "causal"):
        raise ValueError(f"peak_mode must be 'full' or 'causal', got {peak_mode!r}")
    peak_fn: Callable[..., np.ndarray] = detect_peaks if peak_mode == "full" else causal_peak_flags

    columns: dict[str, np.ndarray] = {}
    tt = panel.tt
    for k in LAG_RANGE:
        columns[f"TT_lag{k}"] = lag(tt, k)
    for w in ROLLING_WINDOWS:
        for stat in ROLLING_STATS:
            columns[f"TT_rolling_{stat}{w}"] = rolling_stat(tt, w, stat)
    columns["TT_zscore7"] = zscore7(tt)
    columns["TT_peak"] = peak_fn(
        tt, min_distance=peak_min_distance, prominence_threshold=peak_prominence_threshold
    )

    names = baseline_feature_names()
    if tag == ACTOR_TAG:
        for col in ACTOR_COLUMNS:
            series = panel.column(col).astype(np.float64)
            columns[col] = series.copy()
            for k in LAG_RANGE:
                columns[f"{col}_lag{k}"] = lag(series, k)
            for w in ROLLING_WINDOWS:
                for stat in ROLLING_STATS:
                    columns[f"{col}_rolling_{stat}{w}"] = rolling_stat(series, w, stat)
        names = actor_feature_names()
    return names, columns


@dataclass
class FeatureMatrix:
    """Aligned supervised rows: features at origin day, target at origin+1."""

    origin_dates: tuple[dt.date, ...]
    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    base: np.ndarray
    actual_next_tt: np.ndarray
    feature_set_tag: str

    @property
    def n_rows(self) -> int:
        return len(self.origin_dates)

    def rows(self, selector: slice | np.ndarray) -> "FeatureMatrix":
        idx = np.arange(self.n_rows)[selector]
        return replace(
            self,
            origin_dates=tuple(self.origin_dates[i] for i in idx),
            X=self.X[idx],
            y=self.y[idx],
            base=self.base[idx],
            actual_next_tt=self.actual_next_tt[idx],
        )


# longest warm-up: lag 20 (rolling 14 and zscore 7 are shorter)
WARMUP_ROWS = max(LAG_RANGE)


def build_feature_matrix(
    panel: SeriesPanel,
    set_tag: str = BASELINE_TAG,
    *,
    peak_mode: str = "full",
    peak_min_distance: int = 7,
    peak_prominence_threshold: float | None = None,
) -> FeatureMatrix:
    """Assemble the supervised matrix.

    Rows run from origin index 20 (longest lag warm-up) through N-2 (the
    target needs origin+1 to exist); any row with an undefined cell would
    have been inside that warm-up, and the result is checked to be fully
    finite.
    """
    n = len(panel)
    if n < WARMUP_ROWS + 2:
        raise DataError(
            f"panel too short for feature matrix: need > {WARMUP_ROWS + 1} days, got {n}"
        )
    names, columns = feature_columns(
        panel,
        set_tag,
        peak_mode=peak_mode,
        peak_min_distance=peak_min_distance,
        peak_prominence_threshold=peak_prominence_threshold,
    )
    target, base, actual_next = make_target(panel.tt)
    first, last = WARMUP_ROWS, n - 2  # inclusive origin range
    sel = slice(first, last + 1)
    X = np.column_stack([columns[name][sel] for name in names])
    y = target[sel]
    matrix = FeatureMatrix(
        origin_dates=tuple(panel.calendar.dates[sel]),
        feature_names=tuple(names),
        X=X,
        y=y,
        base=base[sel],
        actual_next_tt=actual_next[sel],
        feature_set_tag=normalize_tag(set_tag),
    )
    if not (
        np.isfinite(matrix.X).all()
        and np.isfinite(matrix.y).all()
        and np.isfinite(matrix.base).all()
        and np.isfinite(matrix.actual_next_tt).all()
    ):
        raise DataError("feature matrix contains non-finite cells after warm-up trim")
    return matrix


def write_feature_matrix_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    header = ["origin_date", *matrix.feature_names, *TRAILING_META]
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for i, day in enumerate(matrix.origin_dates):
            row = [day.isoformat()]
            row += [format_cell(float(v)) for v in matrix.X[i]]
            row += [
                format_cell(float(matrix.y[i])),
                format_cell(float(matrix.base[i])),
                format_cell(float(matrix.actual_next_tt[i])),
            ]
            writer.writerow(row)


def read_feature_matrix_csv(path: str | Path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if (
            header is None
            or header[0] != "origin_date"
            or tuple(header[-3:]) != TRAILING_META
        ):
            raise DataError(f"{path}: not a feature-matrix CSV (header {header})")
        names = tuple(header[1:-3])
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty feature matrix")
    origin_dates = tuple(dt.date.fromisoformat(r[0]) for r in rows)
    data = np.array([[float(v) for v in r[1:]] for r in rows])
    tag = BASELINE_TAG if all(n.startswith("TT_") for n in names) else ACTOR_TAG
    return FeatureMatrix(
        origin_dates=origin_dates,
        feature_names=names,
        X=data[:, :-3],
        y=data[:, -3],
        base=data[:, -2],
        actual_next_tt=data[:, -1],
        feature_set_tag=tag,
    )
