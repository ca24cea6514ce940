"""Event-log ingestion: CSV and XES parsing into a validated, time-ordered log.

Timestamps are normalized to UTC. Naive timestamps are assumed UTC unless a
source-clock offset is supplied. The resulting EventLog is immutable and safe
to share across threads.
"""
from __future__ import annotations

import gzip
import io
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Any, Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import DataError
from .io_utils import atomic_write, format_cell

logger = logging.getLogger(__name__)

UNKNOWN_RESOURCE = "UNKNOWN"

CANONICAL_COLUMNS = ("case_id", "activity", "timestamp", "resource")

DEFAULT_MAPPING = {
    "case": "case_id",
    "activity": "activity",
    "timestamp": "timestamp",
    "resource": "resource",
}

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_US = timedelta(microseconds=1)

# offset suffix like Z, +02:00, -0500 at the end of a timestamp string
_TZ_SUFFIX = re.compile(r"(?:Z|[+-]\d{2}:?\d{2})\s*$")
# fractional seconds longer than microsecond precision
_LONG_FRACTION = re.compile(r"(\.\d{6})\d+")


@dataclass(frozen=True, slots=True)
class Event:
    """One executed activity record: (case, activity, timestamp, resource)."""

    case_id: str
    activity: str
    timestamp: datetime  # tz-aware, UTC
    resource: str


@dataclass(frozen=True, slots=True)
class IngestStats:
    """Bookkeeping from one parse: row totals and what was skipped or patched."""

    rows_total: int = 0
    rows_skipped: int = 0
    skip_examples: tuple[str, ...] = ()
    unknown_resource_events: int = 0
    synthesized_trace_ids: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {
            "rows_total": self.rows_total,
            "rows_skipped": self.rows_skipped,
            "skip_examples": list(self.skip_examples),
            "unknown_resource_events": self.unknown_resource_events,
            "synthesized_trace_ids": self.synthesized_trace_ids,
        }


@dataclass(frozen=True)
class EventLog:
    """Globally time-sorted event sequence (ties keep input order)."""

    events: tuple[Event, ...]
    source_name: str = ""
    ingest: IngestStats = field(default_factory=IngestStats)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def span(self) -> tuple[datetime, datetime] | None:
        if not self.events:
            return None
        return (self.events[0].timestamp, self.events[-1].timestamp)


@dataclass(frozen=True)
class CaseTrace:
    """All events of one case, in the log's global time order."""

    case_id: str
    events: tuple[Event, ...]


@dataclass(frozen=True, slots=True)
class LogSummary:
    n_events: int
    n_cases: int
    n_resources: int
    n_activities: int
    span: tuple[datetime, datetime] | None

    def as_dict(self) -> dict[str, Any]:
        span = None
        if self.span is not None:
            span = [format_timestamp(self.span[0]), format_timestamp(self.span[1])]
        return {
            "n_events": self.n_events,
            "n_cases": self.n_cases,
            "n_resources": self.n_resources,
            "n_activities": self.n_activities,
            "span": span,
        }


def timestamp_us(ts: datetime) -> int:
    """Microseconds since epoch as an exact integer."""
    return (ts - _EPOCH) // _US


def format_timestamp(ts: datetime) -> str:
    """Canonical ISO-8601 form with a Z suffix."""
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _sorted_events(records: Iterable[tuple[str, str, datetime, str]]) -> tuple[Event, ...]:
    recs = list(records)
    if not recs:
        return ()
    stamps = np.array([timestamp_us(r[2]) for r in recs], dtype=np.int64)
    order = np.argsort(stamps, kind="stable")
    return tuple(Event(*recs[i]) for i in order)


def _coerce_utc(ts: datetime, naive_utc_offset_hours: float) -> datetime:
    if ts.tzinfo is None:
        ts = ts - timedelta(hours=naive_utc_offset_hours)
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _flexible_to_datetime(values: pd.Series) -> pd.Series:
    """Vectorized ISO-8601 parse with a per-element retry for the leftovers.

    A single inferred format would coerce every row that deviates from the
    first one (e.g. mixed fractional-second precision) to NaT wholesale;
    the retry keeps those rows. Naive entries are taken as UTC.
    """
    out = pd.to_datetime(values, errors="coerce", utc=True, format="ISO8601")
    retry = out.isna().to_numpy()
    if retry.any():
        out[retry] = pd.to_datetime(values[retry], errors="coerce", utc=True, format="mixed")
    return out


def _parse_timestamp_strings(
    raw: pd.Series, ts_format: str, naive_utc_offset_hours: float
) -> pd.Series:
    """Parse to tz-aware UTC; unparseable entries become NaT."""
    stripped = raw.str.strip()
    if ts_format == "auto":
        if naive_utc_offset_hours == 0.0:
            return _flexible_to_datetime(stripped)
        has_tz = stripped.str.contains(_TZ_SUFFIX, regex=True, na=False)
        out = pd.Series(pd.NaT, index=raw.index, dtype="datetime64[ns, UTC]")
        if has_tz.any():
            out[has_tz] = _flexible_to_datetime(stripped[has_tz])
        if (~has_tz).any():
            # parsed as if UTC, then shifted by the declared source offset
            naive = _flexible_to_datetime(stripped[~has_tz])
            out[~has_tz] = naive - pd.Timedelta(hours=naive_utc_offset_hours)
        return out
    parsed = pd.to_datetime(stripped, format=ts_format, errors="coerce")
    if isinstance(parsed.dtype, pd.DatetimeTZDtype):
        return parsed.dt.tz_convert("UTC")
    parsed = parsed - pd.Timedelta(hours=naive_utc_offset_hours)
    return parsed.dt.tz_localize("UTC")


def _as_pandas_source(source: Any) -> Any:
    if isinstance(source, bytes):
        return io.BytesIO(source)
    return source


def parse_csv(
    source: Any,
    mapping: Mapping[str, str] | None = None,
    ts_format: str = "auto",
    *,
    max_bad_row_fraction: float = 0.01,
    naive_utc_offset_hours: float = 0.0,
    source_name: str | None = None,
) -> EventLog:
    """Parse a delimited event log.

    `mapping` renames source columns to the four roles {case, activity,
    timestamp, resource}; omitted roles use the canonical column names.
    Rows with an empty mandatory field or an unparseable timestamp are
    skipped and counted; the parse is fatal once the skipped fraction
    exceeds `max_bad_row_fraction`.
    """
    colmap = dict(DEFAULT_MAPPING)
    if mapping:
        unknown = set(mapping) - set(DEFAULT_MAPPING)
        if unknown:
            raise DataError(f"unknown column-mapping roles: {sorted(unknown)}")
        colmap.update(mapping)
    if source_name is None:
        source_name = str(source) if isinstance(source, (str, Path)) else "<stream>"

    try:
        frame = pd.read_csv(
            _as_pandas_source(source),
            dtype=str,
            keep_default_na=False,
            na_values=[],
            encoding="utf-8",
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError) as exc:
        raise DataError(f"cannot read CSV {source_name}: {exc}") from exc

    missing = [col for col in colmap.values() if col not in frame.columns]
    if missing:
        raise DataError(
            f"{source_name}: missing mapped column(s) {missing}; found {list(frame.columns)}"
        )

    n_rows = len(frame)
    case = frame[colmap["case"]].str.strip()
    activity = frame[colmap["activity"]].str.strip()
    resource = frame[colmap["resource"]].str.strip()
    stamps = _parse_timestamp_strings(frame[colmap["timestamp"]], ts_format, naive_utc_offset_hours)

    empty_case = case == ""
    empty_activity = activity == ""
    empty_resource = resource == ""
    bad_ts = stamps.isna()
    bad = empty_case | empty_activity | empty_resource | bad_ts

    examples: list[str] = []
    if bad.any():
        for row in np.flatnonzero(bad.to_numpy())[:5]:
            if bad_ts.iloc[row] and frame[colmap["timestamp"]].iloc[row].strip() != "":
                reason = f"bad timestamp {frame[colmap['timestamp']].iloc[row]!r}"
            elif bad_ts.iloc[row]:
                reason = "empty timestamp"
            elif empty_case.iloc[row]:
                reason = "empty case id"
            elif empty_activity.iloc[row]:
                reason = "empty activity"
            else:
                reason = "empty resource"
            examples.append(f"row {row + 2}: {reason}")  # +2: header plus 1-based

    n_skipped = int(bad.sum())
    if n_rows > 0 and n_skipped / n_rows > max_bad_row_fraction:
        raise DataError(
            f"{source_name}: {n_skipped}/{n_rows} rows unparseable, above the "
            f"{max_bad_row_fraction:.2%} budget. Examples: {'; '.join(examples)}"
        )

    keep = ~bad
    records = zip(
        case[keep].tolist(),
        activity[keep].tolist(),
        [ts.to_pydatetime() for ts in stamps[keep]],
        resource[keep].tolist(),
    )
    stats = IngestStats(
        rows_total=n_rows, rows_skipped=n_skipped, skip_examples=tuple(examples)
    )
    return EventLog(events=_sorted_events(records), source_name=source_name, ingest=stats)


def _open_xes_stream(source: Any) -> IO[bytes]:
    if isinstance(source, bytes):
        if source[:2] == b"\x1f\x8b":
            return gzip.open(io.BytesIO(source), "rb")
        return io.BytesIO(source)
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix == ".gz":
            return gzip.open(path, "rb")
        return open(path, "rb")
    return source  # assume binary file-like


def _parse_xes_timestamp(raw: str, naive_utc_offset_hours: float) -> datetime | None:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    text = _LONG_FRACTION.sub(r"\1", text)
    try:
        parsed = datetime.fromisoformat(text)
    except ValueError:
        try:
            stamp = pd.Timestamp(raw)
        except (ValueError, TypeError):
            return None
        if stamp is pd.NaT:
            return None
        parsed = stamp.to_pydatetime()
    return _coerce_utc(parsed, naive_utc_offset_hours)


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_xes(
    source: Any,
    *,
    max_bad_row_fraction: float = 0.01,
    naive_utc_offset_hours: float = 0.0,
    source_name: str | None = None,
) -> EventLog:
    """Parse a XES log (optionally gzipped).

    case id <- trace-level concept:name (synthesized `trace_<index>` when
    missing), activity <- event concept:name, timestamp <- time:timestamp,
    resource <- org:resource (sentinel "UNKNOWN" when missing). Events
    lacking an activity or timestamp are skipped and count against the same
    bad-row budget as CSV rows.
    """
    if source_name is None:
        source_name = str(source) if isinstance(source, (str, Path)) else "<stream>"

    records: list[tuple[str, str, datetime, str]] = []
    examples: list[str] = []
    n_events = 0
    n_skipped = 0
    n_unknown_resource = 0
    n_synth = 0
    trace_index = 0
    # events buffered per trace because the trace's concept:name may follow them
    pending: list[tuple[str, datetime, str | None]] = []

    stream = _open_xes_stream(source)
    try:
        for xml_event, elem in ET.iterparse(stream, events=("end",)):
            name = _localname(elem.tag)
            if name == "event":
                n_events += 1
                attrs: dict[str, str] = {}
                for child in elem:
                    key = child.get("key")
                    if key is not None:
                        attrs[key] = child.get("value", "")
                activity = (attrs.get("concept:name") or "").strip()
                ts_raw = attrs.get("time:timestamp")
                stamp = (
                    _parse_xes_timestamp(ts_raw, naive_utc_offset_hours)
                    if ts_raw is not None
                    else None
                )
                if not activity or stamp is None:
                    n_skipped += 1
                    if len(examples) < 5:
                        what = "missing concept:name" if not activity else f"bad time:timestamp {ts_raw!r}"
                        examples.append(f"event #{n_events}: {what}")
                else:
                    resource = (attrs.get("org:resource") or "").strip()
                    if not resource:
                        resource = UNKNOWN_RESOURCE
                        n_unknown_resource += 1
                    pending.append((activity, stamp, resource))
                elem.clear()
            elif name == "trace":
                case_id = ""
                for child in elem:
                    if _localname(child.tag) == "string" and child.get("key") == "concept:name":
                        case_id = (child.get("value") or "").strip()
                        break
                if not case_id:
                    case_id = f"trace_{trace_index}"
                    n_synth += 1
                records.extend((case_id, act, ts, res) for act, ts, res in pending)
                pending.clear()
                trace_index += 1
                elem.clear()
    except ET.ParseError as exc:
        raise DataError(f"{source_name}: malformed XES/XML: {exc}") from exc
    finally:
        if stream is not source:
            stream.close()

    if n_synth:
        logger.warning("%s: synthesized %d trace id(s) (missing concept:name)", source_name, n_synth)
    if n_events > 0 and n_skipped / n_events > max_bad_row_fraction:
        raise DataError(
            f"{source_name}: {n_skipped}/{n_events} events unparseable, above the "
            f"{max_bad_row_fraction:.2%} budget. Examples: {'; '.join(examples)}"
        )

    stats = IngestStats(
        rows_total=n_events,
        rows_skipped=n_skipped,
        skip_examples=tuple(examples),
        unknown_resource_events=n_unknown_resource,
        synthesized_trace_ids=n_synth,
    )
    return EventLog(events=_sorted_events(records), source_name=source_name, ingest=stats)


def load_event_log(
    path: str | Path,
    *,
    fmt: str | None = None,
    mapping: Mapping[str, str] | None = None,
    ts_format: str = "auto",
    max_bad_row_fraction: float = 0.01,
    naive_utc_offset_hours: float = 0.0,
) -> EventLog:
    """Dispatch on `fmt` ('csv' | 'xes'), sniffing from the extension when None."""
    path = Path(path)
    if fmt is None:
        suffixes = [s.lower() for s in path.suffixes]
        fmt = "xes" if ".xes" in suffixes else "csv"
    if fmt == "xes":
        return parse_xes(
            path,
            max_bad_row_fraction=max_bad_row_fraction,
            naive_utc_offset_hours=naive_utc_offset_hours,
            source_name=str(path),
        )
    if fmt == "csv":
        return parse_csv(
            path,
            mapping=mapping,
            ts_format=ts_format,
            max_bad_row_fraction=max_bad_row_fraction,
            naive_utc_offset_hours=naive_utc_offset_hours,
            source_name=str(path),
        )
    raise DataError(f"unknown log format {fmt!r} (expected 'csv' or 'xes')")


def build_traces(log: EventLog) -> dict[str, CaseTrace]:
    """Group the log by case. Within-trace order = global order restricted
    to the case; map iteration order = first appearance in time order."""
    grouped: dict[str, list[Event]] = {}
    for event in log.events:
        grouped.setdefault(event.case_id, []).append(event)
    return {cid: CaseTrace(case_id=cid, events=tuple(evs)) for cid, evs in grouped.items()}


def complete_traces(
    log: EventLog, trim_boundary_days: float = 0.0
) -> tuple[dict[str, CaseTrace], int]:
    """Traces retained as complete, plus the dropped-case count.

    With a positive trim, cases whose last event lies within the final
    `trim_boundary_days` days of the log span are dropped (right-censoring
    stand-in). Default keeps every case.
    """
    traces = build_traces(log)
    if trim_boundary_days <= 0 or not log.events:
        return traces, 0
    cutoff = log.events[-1].timestamp - timedelta(days=trim_boundary_days)
    kept = {
        cid: trace
        for cid, trace in traces.items()
        if trace.events[-1].timestamp <= cutoff
    }
    return kept, len(traces) - len(kept)


def log_summary(log: EventLog) -> LogSummary:
    cases = {e.case_id for e in log.events}
    resources = {e.resource for e in log.events}
    activities = {e.activity for e in log.events}
    return LogSummary(
        n_events=len(log.events),
        n_cases=len(cases),
        n_resources=len(resources),
        n_activities=len(activities),
        span=log.span,
    )


def write_canonical_csv(log: EventLog, path: str | Path) -> None:
    """Serialize to the canonical CSV form; re-parsing it is idempotent."""
    import csv as _csv

    with atomic_write(path) as handle:
        writer = _csv.writer(handle, lineterminator="\n")
        writer.writerow(CANONICAL_COLUMNS)
        for event in log.events:
            writer.writerow(
                [
                    format_cell(event.case_id),
                    format_cell(event.activity),
                    format_timestamp(event.timestamp),
                    format_cell(event.resource),
                ]
            )
