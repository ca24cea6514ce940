"""Classify consecutive same-case event pairs into actor behavior types.

For a pair (e_i, e_i+1) with interval [t_i, t_i+1]:

* same resource: C (continuation) if that resource has no event of any
  other case strictly inside (t_i, t_i+1); otherwise I (interruption).
* different resource r': HB (handover to busy) if r' has at least one
  event of any other case in the half-open [t_i, t_i+1); otherwise HI
  (handover to idle).

Zero-duration pairs are kept (empty interval, so C or HI). "UNKNOWN"
resources participate like any other actor.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .event_log import Event, EventLog, build_traces, format_timestamp, timestamp_us
from .io_utils import atomic_write, format_cell


class BehaviorType(enum.Enum):
    """The four transition labels, in fixed reporting order."""

    C = "C"
    I = "I"
    HI = "HI"
    HB = "HB"

    def __str__(self) -> str:  # CSV cells carry the short code
        return self.value


BEHAVIOR_ORDER: tuple[BehaviorType, ...] = (
    BehaviorType.C,
    BehaviorType.I,
    BehaviorType.HI,
    BehaviorType.HB,
)

ENRICHED_COLUMNS = (
    "case_id",
    "from_activity",
    "to_activity",
    "from_ts",
    "to_ts",
    "resource_from",
    "resource_to",
    "behavior",
    "duration_seconds",
    "date",
)


@dataclass(frozen=True, slots=True)
class Transition:
    """A consecutive same-case event pair with its label.

    `date` is the calendar date (UTC) of the from-event, which is the day
    the transition is attributed to in the daily panel.
    """

    case_id: str
    from_event: Event
    to_event: Event
    behavior: BehaviorType
    duration_seconds: float
    date: date


def classify_transitions(log: EventLog) -> list[Transition]:
    """Label every consecutive same-case pair; output ordered by from-event
    timestamp (ties keep trace-construction order)."""
    traces = build_traces(log)

    # integer codes for resources and cases so the lookups below are array ops
    res_codes: dict[str, int] = {}
    case_codes: dict[str, int] = {}
    ev_res = np.empty(len(log.events), dtype=np.int64)
    ev_case = np.empty(len(log.events), dtype=np.int64)
    ev_time = np.empty(len(log.events), dtype=np.int64)
    for i, event in enumerate(log.events):
        ev_res[i] = res_codes.setdefault(event.resource, len(res_codes))
        ev_case[i] = case_codes.setdefault(event.case_id, len(case_codes))
        ev_time[i] = timestamp_us(event.timestamp)

    # per-resource event times, and the same split further by case; the log is
    # already time-sorted so both stay sorted
    n_res = len(res_codes)
    res_times: list[np.ndarray] = []
    res_case_of_event: list[np.ndarray] = []
    for r in range(n_res):
        mask = ev_res == r
        res_times.append(ev_time[mask])
        res_case_of_event.append(ev_case[mask])

    pairs: list[tuple[str, Event, Event]] = []
    q_res = []  # resource whose activity decides the label
    q_case = []
    q_t0 = []
    q_t1 = []
    q_same = []
    for trace in traces.values():
        events = trace.events
        code = case_codes[events[0].case_id]
        for a, b in zip(events, events[1:]):
            pairs.append((trace.case_id, a, b))
            same = a.resource == b.resource
            q_res.append(res_codes[b.resource if not same else a.resource])
            q_case.append(code)
            q_t0.append(timestamp_us(a.timestamp))
            q_t1.append(timestamp_us(b.timestamp))
            q_same.append(same)

    n = len(pairs)
    labels = np.empty(n, dtype=np.int8)
    if n:
        q_res_arr = np.asarray(q_res, dtype=np.int64)
        q_case_arr = np.asarray(q_case, dtype=np.int64)
        t0 = np.asarray(q_t0, dtype=np.int64)
        t1 = np.asarray(q_t1, dtype=np.int64)
        same = np.asarray(q_same, dtype=bool)

        busy = np.zeros(n, dtype=bool)  # resource touched another case in-window
        for r in np.unique(q_res_arr):
            times = res_times[r]
            cases = res_case_of_event[r]
            sel = np.flatnonzero(q_res_arr == r)
            sel_same = sel[same[sel]]
            sel_diff = sel[~same[sel]]
            # same resource: strictly inside (t0, t1)
            if sel_same.size:
                busy[sel_same] = _count_other_case(
                    times, cases, q_case_arr[sel_same], t0[sel_same], t1[sel_same], left_open=True
                )
            # different resource: half-open [t0, t1)
            if sel_diff.size:
                busy[sel_diff] = _count_other_case(
                    times, cases, q_case_arr[sel_diff], t0[sel_diff], t1[sel_diff], left_open=False
                )
        labels = np.where(
            same,
            np.where(busy, BEHAVIOR_ORDER.index(BehaviorType.I), BEHAVIOR_ORDER.index(BehaviorType.C)),
            np.where(busy, BEHAVIOR_ORDER.index(BehaviorType.HB), BEHAVIOR_ORDER.index(BehaviorType.HI)),
        )

    transitions = [
        Transition(
            case_id=case_id,
            from_event=a,
            to_event=b,
            behavior=BEHAVIOR_ORDER[int(labels[i])],
            duration_seconds=(timestamp_us(b.timestamp) - timestamp_us(a.timestamp)) / 1e6,
            date=a.timestamp.date(),
        )
        for i, (case_id, a, b) in enumerate(pairs)
    ]
    transitions.sort(key=lambda tr: timestamp_us(tr.from_event.timestamp))
    return transitions


def _count_other_case(
    times: np.ndarray,
    cases: np.ndarray,
    q_case: np.ndarray,
    t0: np.ndarray,
    t1: np.ndarray,
    *,
    left_open: bool,
) -> np.ndarray:
    """True where the resource has >= 1 event of a different case inside the
    window; the right end is always open."""
    side = "right" if left_open else "left"
    lo = np.searchsorted(times, t0, side=side)
    hi = np.searchsorted(times, t1, side="left")
    total = hi - lo
    # subtract the querying case's own events inside the window
    own = np.zeros_like(total)
    for k in range(len(q_case)):
        if total[k] > 0:
            own[k] = int(np.count_nonzero(cases[lo[k]:hi[k]] == q_case[k]))
    return (total - own) > 0


def transitions_to_rows(transitions: Iterable[Transition]) -> list[list[str]]:
    rows = []
    for tr in transitions:
        rows.append(
            [
                tr.case_id,
                tr.from_event.activity,
                tr.to_event.activity,
                format_timestamp(tr.from_event.timestamp),
                format_timestamp(tr.to_event.timestamp),
                tr.from_event.resource,
                tr.to_event.resource,
                tr.behavior.value,
                format_cell(tr.duration_seconds),
                tr.date.isoformat(),
            ]
        )
    return rows


def write_enriched_csv(transitions: Sequence[Transition], path: str | Path) -> None:
    import csv as _csv

    with atomic_write(path) as handle:
        writer = _csv.writer(handle, lineterminator="\n")
        writer.writerow(ENRICHED_COLUMNS)
        writer.writerows(transitions_to_rows(transitions))


@dataclass(frozen=True, slots=True)
class TransitionRow:
    """The slice of an enriched row that daily aggregation needs."""

    case_id: str
    behavior: BehaviorType
    duration_seconds: float
    date: date


def read_enriched_rows(path: str | Path) -> list[TransitionRow]:
    import csv as _csv

    from .errors import DataError

    with open(path, newline="", encoding="utf-8") as handle:
        reader = _csv.reader(handle)
        header = next(reader, None)
        if header != list(ENRICHED_COLUMNS):
            raise DataError(f"{path} is not an enriched transition log (header {header})")
        rows = []
        for record in reader:
            rows.append(
                TransitionRow(
                    case_id=record[0],
                    behavior=BehaviorType(record[7]),
                    duration_seconds=float(record[8]),
                    date=date.fromisoformat(record[9]),
                )
            )
    return rows
