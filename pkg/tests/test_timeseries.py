import datetime as dt
from collections import Counter, defaultdict

import numpy as np
import pytest

from helpers import make_log
from ttcast.behavior import BEHAVIOR_ORDER, classify_transitions
from ttcast.errors import DataError
from ttcast.event_log import build_traces, timestamp_us
from ttcast.synthetic import random_event_log
from ttcast.timeseries import (
    DailyCalendar,
    assemble_panel,
    daily_throughput,
    read_panel_csv,
    write_panel_csv,
)


def simple_log():
    # two cases start Jan 1 (durations 2h and 4h), one case starts Jan 3 (1h)
    return make_log(
        [
            ("a1", "s", "2024-01-01T08:00:00", "r1"),
            ("a1", "e", "2024-01-01T10:00:00", "r1"),
            ("a2", "s", "2024-01-01T09:00:00", "r2"),
            ("a2", "e", "2024-01-01T13:00:00", "r2"),
            ("b1", "s", "2024-01-03T10:00:00", "r1"),
            ("b1", "e", "2024-01-03T11:00:00", "r1"),
        ]
    )


def test_daily_throughput_means_by_start_day():
    calendar, tt, n_cases = daily_throughput(simple_log())
    assert calendar.dates == (dt.date(2024, 1, 1), dt.date(2024, 1, 3))
    assert tt.tolist() == [3.0, 1.0]  # (2h+4h)/2, then 1h
    assert n_cases.tolist() == [2, 1]


def test_case_attributed_to_start_day_even_if_it_ends_later():
    log = make_log(
        [
            ("c", "s", "2024-01-01T22:00:00", "r"),
            ("c", "e", "2024-01-03T22:00:00", "r"),
            ("d", "s", "2024-01-02T08:00:00", "r"),
            ("d", "e", "2024-01-02T09:00:00", "r"),
        ]
    )
    calendar, tt, _ = daily_throughput(log)
    assert calendar.dates == (dt.date(2024, 1, 1), dt.date(2024, 1, 2))
    assert tt.tolist() == [48.0, 1.0]


def test_calendar_skips_no_start_days_by_default():
    panel = assemble_panel(simple_log(), [])
    assert len(panel) == 2
    assert panel.diagnostics.calendar_gap_days == 1  # Jan 2 missing from span


def test_dense_calendar_zero_fills_and_carries_tt():
    log = simple_log()
    panel = assemble_panel(log, classify_transitions(log), dense_calendar=True)
    assert [d.isoformat() for d in panel.calendar.dates] == [
        "2024-01-01",
        "2024-01-02",
        "2024-01-03",
    ]
    assert panel.tt.tolist() == [3.0, 3.0, 1.0]  # carried forward on Jan 2
    assert panel.n_cases.tolist() == [2, 0, 1]
    for b in BEHAVIOR_ORDER:
        assert panel.counts[b][1] == 0
        assert panel.times_seconds[b][1] == 0.0


def test_trim_boundary_drops_late_finishers():
    log = make_log(
        [
            ("keep", "s", "2024-01-01T00:00:00", "r"),
            ("keep", "e", "2024-01-02T00:00:00", "r"),
            ("drop", "s", "2024-01-05T00:00:00", "r"),
            ("drop", "e", "2024-01-10T00:00:00", "r"),
        ]
    )
    panel = assemble_panel(log, [], trim_boundary_days=3.0)
    assert panel.calendar.dates == (dt.date(2024, 1, 1),)
    assert panel.diagnostics.dropped_cases == 1


def test_transitions_bucketed_by_from_date():
    log = simple_log()
    transitions = classify_transitions(log)
    panel = assemble_panel(log, transitions)

    expected_counts = defaultdict(Counter)
    expected_times = defaultdict(lambda: defaultdict(float))
    for tr in transitions:
        expected_counts[tr.date][tr.behavior] += 1
        expected_times[tr.date][tr.behavior] += tr.duration_seconds

    for i, day in enumerate(panel.calendar.dates):
        for b in BEHAVIOR_ORDER:
            assert panel.counts[b][i] == expected_counts[day][b]
            assert panel.times_seconds[b][i] == pytest.approx(expected_times[day][b])


def test_bucket_identities_on_random_logs():
    # sum over behaviors of daily counts == total transitions kept, and
    # summed durations == total transition time kept
    for seed in range(10):
        log = random_event_log(seed)
        transitions = classify_transitions(log)
        panel = assemble_panel(log, transitions)
        kept = [tr for tr in transitions if tr.date in panel.calendar.index]
        total_count = sum(int(panel.counts[b].sum()) for b in BEHAVIOR_ORDER)
        assert total_count == len(kept)
        assert panel.diagnostics.dropped_transitions == len(transitions) - len(kept)
        total_time = sum(float(panel.times_seconds[b].sum()) for b in BEHAVIOR_ORDER)
        assert total_time == pytest.approx(sum(tr.duration_seconds for tr in kept))


def test_tt_matches_brute_force_on_random_logs():
    for seed in range(10):
        log = random_event_log(seed)
        by_day = defaultdict(list)
        for trace in build_traces(log).values():
            first, last = trace.events[0], trace.events[-1]
            hours = (timestamp_us(last.timestamp) - timestamp_us(first.timestamp)) / 3.6e9
            by_day[first.timestamp.date()].append(hours)
        calendar, tt, n_cases = daily_throughput(log)
        assert calendar.dates == tuple(sorted(by_day))
        for i, day in enumerate(calendar.dates):
            assert tt[i] == pytest.approx(np.mean(by_day[day]))
            assert n_cases[i] == len(by_day[day])


def test_empty_panel_is_fatal():
    log = make_log([("c", "s", "2024-01-01T00:00:00", "r"), ("c", "e", "2024-01-02T00:00:00", "r")])
    with pytest.raises(DataError, match="no complete cases"):
        assemble_panel(log, [], trim_boundary_days=5.0)


def test_calendar_rejects_unsorted_dates():
    with pytest.raises(ValueError, match="strictly increasing"):
        DailyCalendar(dates=(dt.date(2024, 1, 2), dt.date(2024, 1, 1)))
    with pytest.raises(ValueError, match="strictly increasing"):
        DailyCalendar(dates=(dt.date(2024, 1, 1), dt.date(2024, 1, 1)))


def test_panel_prefix():
    log = random_event_log(5)
    panel = assemble_panel(log, classify_transitions(log))
    assert len(panel) >= 2
    head = panel.prefix(len(panel) - 1)
    assert len(head) == len(panel) - 1
    assert head.calendar.dates == panel.calendar.dates[:-1]
    assert head.tt.tolist() == panel.tt[:-1].tolist()
    with pytest.raises(ValueError):
        panel.prefix(0)
    with pytest.raises(ValueError):
        panel.prefix(len(panel) + 1)


def test_column_accessor():
    log = random_event_log(2)
    panel = assemble_panel(log, classify_transitions(log))
    assert panel.column("TT") is panel.tt
    assert panel.column("n_cases") is panel.n_cases
    assert panel.column("Count_HB") is panel.counts[BEHAVIOR_ORDER[3]]
    assert panel.column("Time_C_seconds") is panel.times_seconds[BEHAVIOR_ORDER[0]]
    with pytest.raises(KeyError):
        panel.column("bogus")


def test_panel_csv_roundtrip(tmp_path):
    log = random_event_log(4)
    panel = assemble_panel(log, classify_transitions(log))
    p1 = tmp_path / "panel.csv"
    p2 = tmp_path / "panel2.csv"
    write_panel_csv(panel, p1)
    back = read_panel_csv(p1)
    assert back.calendar.dates == panel.calendar.dates
    np.testing.assert_array_equal(back.tt, panel.tt)
    np.testing.assert_array_equal(back.n_cases, panel.n_cases)
    for b in BEHAVIOR_ORDER:
        np.testing.assert_array_equal(back.counts[b], panel.counts[b])
        np.testing.assert_array_equal(back.times_seconds[b], panel.times_seconds[b])
    write_panel_csv(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_read_panel_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError, match="panel columns"):
        read_panel_csv(path)
