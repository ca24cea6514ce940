"""Synthetic data generators for tests and the bundled demo fixture.

Three generators:

* random_event_log: small randomized logs for oracle comparisons.
* demo_event_log: the ~200-event fixture with one case per day, mixed
  same-resource and handover transitions, and a smooth seasonal TT curve.
* planted_actor_panel: a daily panel where tomorrow's TT is driven by the
  handover-to-busy count four days earlier, for signal-recovery tests.
"""
from __future__ import annotations

import datetime as dt
from datetime import datetime, timedelta, timezone

import numpy as np

from .behavior import BehaviorType
from .event_log import Event, EventLog, _sorted_events
from .timeseries import DailyCalendar, SeriesPanel


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def random_event_log(
    seed: int,
    *,
    max_events: int = 50,
    n_resources: int | None = None,
    n_cases: int | None = None,
    span_hours: float = 72.0,
) -> EventLog:
    """Small random log: uniform timestamps, random case/resource labels.

    Duplicate timestamps are injected deliberately (zero-duration pairs and
    boundary ties are the interesting classification inputs).
    """
    rng = _rng(seed)
    if n_resources is None:
        n_resources = int(rng.integers(2, 6))
    if n_cases is None:
        n_cases = int(rng.integers(2, 8))
    n_events = int(rng.integers(n_cases * 2, max_events + 1))
    resources = [f"R{i}" for i in range(n_resources)]
    start = datetime(2024, 1, 1, tzinfo=timezone.utc)

    offsets = rng.uniform(0, span_hours * 3600, size=n_events)
    # force some exact ties
    for _ in range(max(1, n_events // 10)):
        i, j = rng.integers(0, n_events, size=2)
        offsets[j] = offsets[i]
    records = []
    for k in range(n_events):
        case = f"c{int(rng.integers(0, n_cases))}"
        ts = start + timedelta(seconds=round(float(offsets[k]), 3))
        records.append((case, f"a{int(rng.integers(0, 6))}", ts, resources[int(rng.integers(0, n_resources))]))
    return EventLog(events=_sorted_events(records), source_name=f"random-{seed}")


def demo_event_log(seed: int = 7, n_days: int = 70) -> EventLog:
    """One three-event case per day with a smooth seasonal duration curve.

    The second and third events keep the first event's resource about half
    the time (continuations/interruptions) and hand over otherwise; case
    spans sometimes cross midnight, so adjacent cases overlap and produce
    busy handovers and interruptions.
    """
    rng = _rng(seed)
    resources = [f"R{i}" for i in range(3)]
    day0 = dt.date(2024, 1, 1)
    records = []
    for i in range(n_days):
        day = day0 + timedelta(days=i)
        season = 1.0 + 0.45 * np.sin(2 * np.pi * i / 14.0) + 0.2 * np.sin(2 * np.pi * i / 5.0)
        start = datetime(day.year, day.month, day.day, 9, 0, tzinfo=timezone.utc) + timedelta(
            minutes=float(rng.uniform(0, 90))
        )
        gap1 = timedelta(hours=float(rng.uniform(2, 14) * season))
        gap2 = timedelta(hours=float(rng.uniform(6, 26) * season))
        r0 = resources[int(rng.integers(0, len(resources)))]
        r1 = r0 if rng.uniform() < 0.45 else resources[int(rng.integers(0, len(resources)))]
        r2 = r1 if rng.uniform() < 0.45 else resources[int(rng.integers(0, len(resources)))]
        case = f"case{i:03d}"
        records.append((case, "register", start, r0))
        records.append((case, "review", start + gap1, r1))
        records.append((case, "close", start + gap1 + gap2, r2))
    return EventLog(events=_sorted_events(records), source_name=f"demo-{seed}")


def planted_actor_panel(seed: int, n_days: int = 500) -> SeriesPanel:
    """Panel whose TT follows 0.6*TT[t-1] + 0.3*Count_HB[t-4] + N(0, 0.25).

    Count_HB is Poisson(25); every other behavior column (including the
    HB duration) is independent noise, so the only predictive signal beyond
    TT's own history sits in the lagged HB counts.
    """
    rng = _rng(seed)
    warm = 10
    total = n_days + warm
    count_hb = rng.poisson(25, size=total).astype(np.int64)
    tt = np.empty(total)
    tt[0] = 0.3 * 25 / 0.4  # the process mean
    noise = rng.normal(0.0, 0.5, size=total)
    for t in range(1, total):
        hb = count_hb[t - 4] if t >= 4 else 25
        tt[t] = 0.6 * tt[t - 1] + 0.3 * hb + noise[t]
    tt = tt[warm:]
    count_hb = count_hb[warm:]

    day0 = dt.date(2022, 1, 1)
    dates = tuple(day0 + timedelta(days=i) for i in range(n_days))
    counts = {
        BehaviorType.C: rng.poisson(40, size=n_days).astype(np.int64),
        BehaviorType.I: rng.poisson(10, size=n_days).astype(np.int64),
        BehaviorType.HI: rng.poisson(15, size=n_days).astype(np.int64),
        BehaviorType.HB: count_hb,
    }
    times = {
        b: rng.uniform(1e3, 5e4, size=n_days) for b in BehaviorType
    }
    return SeriesPanel(
        calendar=DailyCalendar(dates=dates),
        tt=tt,
        n_cases=np.full(n_days, 20, dtype=np.int64),
        counts=counts,
        times_seconds=times,
    )
