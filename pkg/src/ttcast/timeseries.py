"""Aggregate log and transitions into the calendar-indexed daily panel.

The calendar holds only days on which at least one retained case started;
physical-date gaps are adjacent time steps. Throughput time is kept in
hours internally; any report-unit scaling happens at rendering time.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .behavior import BEHAVIOR_ORDER, BehaviorType
from .errors import DataError
from .event_log import CaseTrace, EventLog, complete_traces, timestamp_us
from .io_utils import atomic_write, format_cell

_US_PER_HOUR = 3_600_000_000

PANEL_COLUMNS = (
    "date",
    "TT",
    "n_cases",
    "Count_C",
    "Count_I",
    "Count_HI",
    "Count_HB",
    "Time_C_seconds",
    "Time_I_seconds",
    "Time_HI_seconds",
    "Time_HB_seconds",
)

# panel column order for the eight actor series
ACTOR_COLUMNS = (
    "Count_C",
    "Count_I",
    "Count_HI",
    "Count_HB",
    "Time_C_seconds",
    "Time_I_seconds",
    "Time_HI_seconds",
    "Time_HB_seconds",
)


class TransitionLike(Protocol):
    date: dt.date
    behavior: BehaviorType
    duration_seconds: float


@dataclass(frozen=True)
class DailyCalendar:
    """Strictly increasing case-start dates; positions are the time steps."""

    dates: tuple[dt.date, ...]
    index: dict[dt.date, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("calendar dates must be strictly increasing")
        object.__setattr__(self, "index", {d: i for i, d in enumerate(self.dates)})

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True, slots=True)
class PanelDiagnostics:
    dropped_transitions: int = 0
    calendar_gap_days: int = 0
    dropped_cases: int = 0
    n_transitions_total: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "dropped_transitions": self.dropped_transitions,
            "calendar_gap_days": self.calendar_gap_days,
            "dropped_cases": self.dropped_cases,
            "n_transitions_total": self.n_transitions_total,
        }


@dataclass(frozen=True)
class SeriesPanel:
    """The multivariate daily series: TT plus per-behavior counts/durations.

    Arrays are not mutated after assembly; treat as read-only.
    """

    calendar: DailyCalendar
    tt: np.ndarray  # mean throughput per start day, hours
    n_cases: np.ndarray  # started-case counts
    counts: dict[BehaviorType, np.ndarray]
    times_seconds: dict[BehaviorType, np.ndarray]
    diagnostics: PanelDiagnostics = field(default_factory=PanelDiagnostics, compare=False)

    def __len__(self) -> int:
        return len(self.calendar)

    def column(self, name: str) -> np.ndarray:
        """Panel column by its CSV name ('TT', 'Count_C', 'Time_HB_seconds', ...)."""
        if name == "TT":
            return self.tt
        if name == "n_cases":
            return self.n_cases
        if name.startswith("Count_"):
            return self.counts[BehaviorType(name[len("Count_"):])]
        if name.startswith("Time_") and name.endswith("_seconds"):
            return self.times_seconds[BehaviorType(name[len("Time_"):-len("_seconds")])]
        raise KeyError(name)

    def prefix(self, n: int) -> "SeriesPanel":
        """The panel truncated to its first n calendar days."""
        if not 0 < n <= len(self):
            raise ValueError(f"prefix length {n} out of range 1..{len(self)}")
        return SeriesPanel(
            calendar=DailyCalendar(self.calendar.dates[:n]),
            tt=self.tt[:n],
            n_cases=self.n_cases[:n],
            counts={b: arr[:n] for b, arr in self.counts.items()},
            times_seconds={b: arr[:n] for b, arr in self.times_seconds.items()},
            diagnostics=self.diagnostics,
        )


def _case_stats(traces: Iterable[CaseTrace]) -> tuple[list[dt.date], list[float]]:
    start_dates: list[dt.date] = []
    durations_h: list[float] = []
    for trace in traces:
        first = trace.events[0].timestamp
        last = trace.events[-1].timestamp
        start_dates.append(first.date())
        durations_h.append((timestamp_us(last) - timestamp_us(first)) / _US_PER_HOUR)
    return start_dates, durations_h


def _throughput_from_traces(
    traces: dict[str, CaseTrace], dense_calendar: bool = False
) -> tuple[DailyCalendar, np.ndarray, np.ndarray]:
    start_dates, durations_h = _case_stats(traces.values())
    if not start_dates:
        return DailyCalendar(dates=()), np.zeros(0), np.zeros(0, dtype=np.int64)

    ordinals = np.array([d.toordinal() for d in start_dates], dtype=np.int64)
    durations = np.asarray(durations_h, dtype=np.float64)
    uniq, inverse = np.unique(ordinals, return_inverse=True)
    counts = np.bincount(inverse)
    sums = np.bincount(inverse, weights=durations)
    tt_start = sums / counts

    if not dense_calendar:
        dates = tuple(dt.date.fromordinal(int(o)) for o in uniq)
        return DailyCalendar(dates=dates), tt_start, counts.astype(np.int64)

    full = np.arange(uniq[0], uniq[-1] + 1)
    dates = tuple(dt.date.fromordinal(int(o)) for o in full)
    tt = np.zeros(len(full))
    n_cases = np.zeros(len(full), dtype=np.int64)
    pos = uniq - uniq[0]
    tt[pos] = tt_start
    n_cases[pos] = counts
    # carry the last observed TT across no-start days
    last = 0.0
    has_start = np.zeros(len(full), dtype=bool)
    has_start[pos] = True
    for i in range(len(full)):
        if has_start[i]:
            last = tt[i]
        else:
            tt[i] = last
    return DailyCalendar(dates=dates), tt, n_cases


def daily_throughput(
    log: EventLog, *, trim_boundary_days: float = 0.0, dense_calendar: bool = False
) -> tuple[DailyCalendar, np.ndarray, np.ndarray]:
    """Per start-day mean throughput in hours, with started-case counts."""
    traces, _ = complete_traces(log, trim_boundary_days)
    return _throughput_from_traces(traces, dense_calendar)


def daily_behavior_series(
    transitions: Sequence[TransitionLike], calendar: DailyCalendar
) -> tuple[dict[BehaviorType, np.ndarray], dict[BehaviorType, np.ndarray], int]:
    """Bucket counts and summed durations by transition date.

    Transitions dated on non-calendar days are dropped; the count of drops
    is returned for diagnostics.
    """
    n = len(calendar)
    counts = {b: np.zeros(n, dtype=np.int64) for b in BEHAVIOR_ORDER}
    times = {b: np.zeros(n, dtype=np.float64) for b in BEHAVIOR_ORDER}
    dropped = 0
    index = calendar.index
    for tr in transitions:
        pos = index.get(tr.date)
        if pos is None:
            dropped += 1
            continue
        counts[tr.behavior][pos] += 1
        times[tr.behavior][pos] += tr.duration_seconds
    return counts, times, dropped


def assemble_panel(
    log: EventLog,
    transitions: Sequence[TransitionLike],
    *,
    trim_boundary_days: float = 0.0,
    dense_calendar: bool = False,
) -> SeriesPanel:
    traces, dropped_cases = complete_traces(log, trim_boundary_days)
    calendar, tt, n_cases = _throughput_from_traces(traces, dense_calendar)
    if len(calendar) == 0:
        raise DataError("no complete cases: panel calendar is empty")
    counts, times, dropped = daily_behavior_series(transitions, calendar)
    span_days = calendar.dates[-1].toordinal() - calendar.dates[0].toordinal()
    gaps = span_days + 1 - len(calendar)
    return SeriesPanel(
        calendar=calendar,
        tt=tt,
        n_cases=n_cases,
        counts=counts,
        times_seconds=times,
        diagnostics=PanelDiagnostics(
            dropped_transitions=dropped,
            calendar_gap_days=gaps,
            dropped_cases=dropped_cases,
            n_transitions_total=len(transitions),
        ),
    )


def write_panel_csv(panel: SeriesPanel, path: str | Path) -> None:
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PANEL_COLUMNS)
        for i, day in enumerate(panel.calendar.dates):
            row = [day.isoformat(), format_cell(float(panel.tt[i])), int(panel.n_cases[i])]
            row += [int(panel.counts[b][i]) for b in BEHAVIOR_ORDER]
            row += [format_cell(float(panel.times_seconds[b][i])) for b in BEHAVIOR_ORDER]
            writer.writerow(row)


def read_panel_csv(path: str | Path) -> SeriesPanel:
    """Rebuild a panel from its CSV form (diagnostics are not stored there)."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != PANEL_COLUMNS:
            raise DataError(f"{path}: expected panel columns {PANEL_COLUMNS}, got {header}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty panel")
    dates = tuple(dt.date.fromisoformat(r[0]) for r in rows)
    tt = np.array([float(r[1]) for r in rows])
    n_cases = np.array([int(r[2]) for r in rows], dtype=np.int64)
    counts = {
        b: np.array([int(r[3 + j]) for r in rows], dtype=np.int64)
        for j, b in enumerate(BEHAVIOR_ORDER)
    }
    times = {
        b: np.array([float(r[7 + j]) for r in rows])
        for j, b in enumerate(BEHAVIOR_ORDER)
    }
    return SeriesPanel(
        calendar=DailyCalendar(dates=dates), tt=tt, n_cases=n_cases, counts=counts, times_seconds=times
    )
