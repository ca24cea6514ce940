"""Independent oracles and small constructors shared by the test suites.

Everything here is deliberately written as straight-line loops over the
definitions, not by calling back into the library, so tests compare two
independent derivations.
"""
from __future__ import annotations

import math
from collections import Counter
from datetime import datetime, timezone

import numpy as np

from ttcast.event_log import Event, EventLog, _sorted_events, build_traces, timestamp_us


def ts(text: str) -> datetime:
    """Parse '2024-01-01T09:00:00' (naive = UTC) or full ISO with offset."""
    value = datetime.fromisoformat(text)
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value


def make_log(rows, source="test") -> EventLog:
    """rows: iterable of (case, activity, timestamp-string, resource)."""
    records = [(c, a, ts(t), r) for c, a, t, r in rows]
    return EventLog(events=_sorted_events(records), source_name=source)


# ------------------------------------------------------------- behaviors


def transition_key(case_id, from_event, to_event, label):
    return (
        case_id,
        timestamp_us(from_event.timestamp),
        timestamp_us(to_event.timestamp),
        from_event.activity,
        to_event.activity,
        from_event.resource,
        to_event.resource,
        label,
    )


def brute_force_behaviors(log: EventLog) -> Counter:
    """Interval-scanning classification over every event in the log.

    Same resource: interruption iff that resource touches another case
    strictly inside (t0, t1). Different resource: handover-to-busy iff the
    receiving resource touches another case in the half-open [t0, t1).
    """
    out: Counter = Counter()
    for case_id, trace in build_traces(log).items():
        events = trace.events
        for a, b in zip(events, events[1:]):
            t0, t1 = timestamp_us(a.timestamp), timestamp_us(b.timestamp)
            if a.resource == b.resource:
                busy = any(
                    e.resource == a.resource
                    and e.case_id != case_id
                    and t0 < timestamp_us(e.timestamp) < t1
                    for e in log.events
                )
                label = "I" if busy else "C"
            else:
                busy = any(
                    e.resource == b.resource
                    and e.case_id != case_id
                    and t0 <= timestamp_us(e.timestamp) < t1
                    for e in log.events
                )
                label = "HB" if busy else "HI"
            out[transition_key(case_id, a, b, label)] += 1
    return out


# ------------------------------------------------------------------ peaks


def prominence_oracle(x, i) -> float:
    """Height above the higher of the two lowest valleys, windows ending at
    the first strictly higher sample on each side."""
    n = len(x)
    left_min = math.inf
    j = i - 1
    while j >= 0 and x[j] <= x[i]:
        left_min = min(left_min, x[j])
        j -= 1
    right_min = math.inf
    j = i + 1
    while j < n and x[j] <= x[i]:
        right_min = min(right_min, x[j])
        j += 1
    if math.isinf(left_min):
        left_min = right_min
    if math.isinf(right_min):
        right_min = left_min
    return x[i] - max(left_min, right_min)


def peaks_oracle(x, min_distance=7, prominence_threshold=None) -> list[int]:
    """Strict local maxima, thresholded, then greedy distance filtering that
    keeps the higher-prominence peak (earlier index on exact ties)."""
    x = [float(v) for v in x]
    n = len(x)
    cands = [i for i in range(1, n - 1) if x[i - 1] < x[i] > x[i + 1]]
    scored = [(i, prominence_oracle(x, i)) for i in cands]
    if prominence_threshold is not None:
        scored = [(i, p) for i, p in scored if p >= prominence_threshold]
    kept: list[int] = []
    for i, _ in sorted(scored, key=lambda item: (-item[1], item[0])):
        if all(abs(i - k) >= min_distance for k in kept):
            kept.append(i)
    return sorted(kept)


# ---------------------------------------------------------------- metrics


def metrics_oracle(actual, predicted) -> tuple[float, float, float | None]:
    n = len(actual)
    sse = sum((a - p) ** 2 for a, p in zip(actual, predicted))
    sae = sum(abs(a - p) for a, p in zip(actual, predicted))
    mean = sum(actual) / n
    sst = sum((a - mean) ** 2 for a in actual)
    rmse = math.sqrt(sse / n)
    mae = sae / n
    r2 = None if sst == 0 else 1.0 - sse / sst
    return rmse, mae, r2


# ------------------------------------------------------------------- GBT


def best_split_oracle(X, y, min_leaf=1):
    """Exhaustive search over every feature and midpoint threshold.

    Returns (feature, threshold, left_mean, right_mean) minimizing child
    SSE, with the same tie rules as the learner (lowest feature, then lowest
    threshold); None when no split strictly beats the parent SSE.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    parent_sse = float(np.sum((y - y.mean()) ** 2))
    best = None  # (sse, j, thr)
    for j in range(d):
        values = np.sort(np.unique(X[:, j]))
        for a, b in zip(values, values[1:]):
            thr = (a + b) / 2.0
            mask = X[:, j] <= thr
            nl = int(mask.sum())
            if nl < min_leaf or n - nl < min_leaf:
                continue
            yl, yr = y[mask], y[~mask]
            sse = float(np.sum((yl - yl.mean()) ** 2) + np.sum((yr - yr.mean()) ** 2))
            if best is None or sse < best[0]:
                best = (sse, j, thr)
    if best is None or not best[0] < parent_sse:
        return None
    _, j, thr = best
    mask = X[:, j] <= thr
    return j, thr, float(y[mask].mean()), float(y[~mask].mean())


# ------------------------------------------------------------ toy matrices


def toy_matrix(X, y, base=None, actual_next=None, tag="baseline", names=None):
    """A FeatureMatrix over consecutive dates, for model/evaluation tests.

    Defaults keep reconstruction consistent: actual_next = base + y, so a
    perfect delta forecast yields a perfect TT forecast.
    """
    import datetime as _dt

    from ttcast.features import FeatureMatrix

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if base is None:
        base = np.zeros(n)
    base = np.asarray(base, dtype=np.float64)
    if actual_next is None:
        actual_next = base + y
    if names is None:
        names = tuple(f"f{j}" for j in range(X.shape[1]))
    start = _dt.date(2024, 1, 1)
    return FeatureMatrix(
        origin_dates=tuple(start + _dt.timedelta(days=i) for i in range(n)),
        feature_names=tuple(names),
        X=X,
        y=y,
        base=base,
        actual_next_tt=np.asarray(actual_next, dtype=np.float64),
        feature_set_tag=tag,
    )
