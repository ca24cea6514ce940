from collections import Counter
from datetime import date

import pytest

from helpers import brute_force_behaviors, make_log, transition_key
from ttcast.behavior import (
    BehaviorType,
    classify_transitions,
    read_enriched_rows,
    write_enriched_csv,
)
from ttcast.errors import DataError
from ttcast.event_log import timestamp_us
from ttcast.synthetic import random_event_log


def labels_of(log):
    return [t.behavior.value for t in classify_transitions(log)]


def test_consolidation_when_resource_stays_idle():
    log = make_log(
        [
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "b", "2024-01-01T11:00:00", "r1"),
        ]
    )
    assert labels_of(log) == ["C"]


def test_interruption_when_resource_touches_other_case_inside():
    log = make_log(
        [
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c2", "x", "2024-01-01T10:00:00", "r1"),
            ("c1", "b", "2024-01-01T11:00:00", "r1"),
        ]
    )
    assert "I" in labels_of(log)


def test_same_resource_boundary_events_do_not_interrupt():
    # other-case events exactly at t0 and t1: the interior is open
    log = make_log(
        [
            ("c2", "x", "2024-01-01T09:00:00", "r1"),
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "b", "2024-01-01T11:00:00", "r1"),
            ("c2", "y", "2024-01-01T11:00:00", "r1"),
        ]
    )
    trans = classify_transitions(log)
    c1 = [t for t in trans if t.case_id == "c1"]
    assert [t.behavior.value for t in c1] == ["C"]


def test_handover_idle_and_busy():
    log = make_log(
        [
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "b", "2024-01-01T11:00:00", "r2"),  # r2 idle in [09, 11)
            ("c2", "x", "2024-01-01T12:30:00", "r2"),
            ("c2", "y", "2024-01-01T14:00:00", "r3"),  # r3 busy: c3 event at 13:00
            ("c3", "z", "2024-01-01T13:00:00", "r3"),
        ]
    )
    by_case = {t.case_id: t.behavior.value for t in classify_transitions(log)}
    assert by_case == {"c1": "HI", "c2": "HB"}


def test_handover_left_boundary_counts_as_busy():
    # receiving resource works another case exactly at t0
    log = make_log(
        [
            ("c2", "x", "2024-01-01T09:00:00", "r2"),
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "b", "2024-01-01T11:00:00", "r2"),
        ]
    )
    trans = {t.case_id: t.behavior.value for t in classify_transitions(log)}
    assert trans["c1"] == "HB"


def test_handover_right_boundary_does_not_count():
    # receiver's other-case event exactly at t1: interval is right-open
    log = make_log(
        [
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "b", "2024-01-01T11:00:00", "r2"),
            ("c2", "x", "2024-01-01T11:00:00", "r2"),
        ]
    )
    trans = {t.case_id: t.behavior.value for t in classify_transitions(log)}
    assert trans["c1"] == "HI"


def test_zero_duration_transitions():
    log = make_log(
        [
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "b", "2024-01-01T09:00:00", "r1"),  # same resource -> C
            ("c2", "a", "2024-01-01T10:00:00", "r1"),
            ("c2", "b", "2024-01-01T10:00:00", "r2"),  # different -> empty [t0,t0) -> HI
        ]
    )
    by_case = {t.case_id: t.behavior.value for t in classify_transitions(log)}
    assert by_case == {"c1": "C", "c2": "HI"}
    durations = [t.duration_seconds for t in classify_transitions(log)]
    assert durations == [0.0, 0.0]


def test_own_case_events_never_count_as_busy():
    # r2's only in-window event belongs to the transitioning case itself
    log = make_log(
        [
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "mid", "2024-01-01T10:00:00", "r2"),
            ("c1", "b", "2024-01-01T11:00:00", "r2"),
        ]
    )
    trans = classify_transitions(log)
    assert [t.behavior.value for t in trans] == ["HI", "C"]


def test_unknown_resource_participates_normally():
    log = make_log(
        [
            ("c1", "a", "2024-01-01T09:00:00", "UNKNOWN"),
            ("c2", "x", "2024-01-01T10:00:00", "UNKNOWN"),
            ("c1", "b", "2024-01-01T11:00:00", "UNKNOWN"),
        ]
    )
    trans = [t for t in classify_transitions(log) if t.case_id == "c1"]
    assert [t.behavior.value for t in trans] == ["I"]


def test_transition_metadata():
    log = make_log(
        [
            ("c1", "a", "2024-01-01T23:30:00", "r1"),
            ("c1", "b", "2024-01-02T00:30:00", "r1"),
        ]
    )
    (t,) = classify_transitions(log)
    assert t.duration_seconds == 3600.0
    assert t.date == date(2024, 1, 1)  # attributed to the from-event's day
    assert t.from_event.activity == "a" and t.to_event.activity == "b"


def test_output_ordered_by_from_timestamp():
    log = make_log(
        [
            ("c2", "a", "2024-01-01T10:00:00", "r2"),
            ("c2", "b", "2024-01-01T12:00:00", "r2"),
            ("c1", "a", "2024-01-01T09:00:00", "r1"),
            ("c1", "b", "2024-01-01T11:00:00", "r1"),
        ]
    )
    stamps = [timestamp_us(t.from_event.timestamp) for t in classify_transitions(log)]
    assert stamps == sorted(stamps)


def test_transition_count_is_events_minus_cases():
    for seed in range(5):
        log = random_event_log(seed)
        cases = {e.case_id for e in log.events}
        assert len(classify_transitions(log)) == len(log.events) - len(cases)


@pytest.mark.parametrize("seed", range(30))
def test_matches_brute_force_on_random_logs(seed):
    log = random_event_log(seed)
    got = Counter(
        transition_key(t.case_id, t.from_event, t.to_event, t.behavior.value)
        for t in classify_transitions(log)
    )
    assert got == brute_force_behaviors(log)


def test_enriched_roundtrip(tmp_path):
    log = random_event_log(3)
    transitions = classify_transitions(log)
    path = tmp_path / "enriched.csv"
    write_enriched_csv(transitions, path)
    back = read_enriched_rows(path)
    assert len(back) == len(transitions)
    for row, tr in zip(back, transitions):
        assert row.case_id == tr.case_id
        assert row.behavior is tr.behavior
        assert row.duration_seconds == tr.duration_seconds
        assert row.date == tr.date


def test_read_enriched_rejects_foreign_header(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DataError, match="enriched"):
        read_enriched_rows(path)


def test_behavior_enum_values():
    assert [b.value for b in BehaviorType] == ["C", "I", "HI", "HB"]
