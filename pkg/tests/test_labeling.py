"""Episode windows, severity bands and target attachment."""

import datetime as dt

import numpy as np
import pytest

from facepheno.data_model import PhqAdministration
from facepheno.errors import DataError
from facepheno.featurize import DayInstance
from facepheno.labeling import (
    EpisodeLabel,
    attach_targets,
    label_windows,
    parse_labels_csv,
    serialize_labels_csv,
    severity,
)


def _admin(pid, day, total, wave="baseline"):
    # spread the total over items, 3 points at a time
    items = []
    left = total
    for _ in range(9):
        take = min(left, 3)
        items.append(take)
        left -= take
    assert left == 0
    return PhqAdministration(pid, wave, dt.date(2024, 3, day), tuple(items))


def test_severity_bands():
    assert severity(0) == "none"
    assert severity(4) == "none"
    assert severity(5) == "mild"
    assert severity(9) == "mild"
    assert severity(10) == "moderate"
    assert severity(14) == "moderate"
    assert severity(15) == "moderately_severe"
    assert severity(19) == "moderately_severe"
    assert severity(20) == "severe"
    assert severity(27) == "severe"
    for bad in (-1, 28):
        with pytest.raises(DataError):
            severity(bad)
    with pytest.raises(DataError):
        severity(2.5)
    with pytest.raises(DataError):
        severity(True)


def test_windows_need_both_endpoints_at_threshold():
    admins = [
        _admin("p01", 1, 7), _admin("p01", 15, 6, "midpoint"),
        _admin("p02", 1, 7), _admin("p02", 15, 4, "midpoint"),
        _admin("p03", 1, 4), _admin("p03", 15, 9, "midpoint"),
    ]
    windows = label_windows(admins)
    assert [(w.participant_id, w.depressive, w.target) for w in windows] == [
        ("p01", True, 6), ("p02", False, 4), ("p03", False, 9),
    ]
    w = windows[0]
    assert w.window_start == dt.date(2024, 3, 1)
    assert w.window_end == dt.date(2024, 3, 14)
    assert (w.phq_start, w.phq_end) == (7, 6)


def test_three_administrations_anchor_two_windows():
    admins = [
        _admin("p01", 1, 7),
        _admin("p01", 15, 12, "midpoint"),
        _admin("p01", 29, 3, "endpoint"),
    ]
    windows = label_windows(admins)
    assert len(windows) == 2
    assert windows[0].window_start == dt.date(2024, 3, 1)
    assert windows[1].window_start == dt.date(2024, 3, 15)
    assert [w.depressive for w in windows] == [True, False]
    assert [w.target for w in windows] == [12, 3]


def test_target_policy_start_uses_the_opening_score():
    admins = [_admin("p01", 1, 7), _admin("p01", 15, 12, "midpoint")]
    assert label_windows(admins, target_policy="start")[0].target == 7
    with pytest.raises(DataError):
        label_windows(admins, target_policy="middle")


def test_single_administration_yields_no_window():
    assert label_windows([_admin("p01", 1, 9)]) == []


def _instance(pid, day):
    return DayInstance(pid, dt.date(2024, 3, day),
                       np.zeros(4), np.zeros(4, dtype=np.int64))


def test_attach_targets_covers_the_window_inclusively():
    windows = label_windows([_admin("p01", 5, 7), _admin("p01", 19, 6, "midpoint")])
    instances = [_instance("p01", d) for d in (4, 5, 12, 18, 19)]
    labeled, dropped = attach_targets(instances, windows)
    assert dropped == 2                      # day 4 before, day 19 after
    assert [li.instance.local_date.day for li in labeled] == [5, 12, 18]
    assert all(li.depressive and li.target == 6 for li in labeled)
    assert all(li.window_start == dt.date(2024, 3, 5) for li in labeled)


def test_attach_targets_drops_unknown_participants():
    windows = label_windows([_admin("p01", 1, 7), _admin("p01", 15, 6, "midpoint")])
    labeled, dropped = attach_targets([_instance("p99", 3)], windows)
    assert labeled == [] and dropped == 1


def test_attach_targets_refuses_overlapping_windows():
    overlapping = [
        EpisodeLabel("p01", dt.date(2024, 3, 1), dt.date(2024, 3, 14), False, 3),
        EpisodeLabel("p01", dt.date(2024, 3, 10), dt.date(2024, 3, 23), True, 9),
    ]
    with pytest.raises(DataError, match="overlap"):
        attach_targets([_instance("p01", 2)], overlapping)


def test_labels_csv_round_trip(tmp_path):
    windows = label_windows([
        _admin("p01", 1, 7), _admin("p01", 15, 6, "midpoint"),
        _admin("p02", 3, 2), _admin("p02", 17, 11, "midpoint"),
    ])
    path = tmp_path / "labels.csv"
    serialize_labels_csv(windows, path)
    back = parse_labels_csv(path)
    assert [(w.participant_id, w.window_start, w.window_end, w.depressive, w.target)
            for w in back] == \
           [(w.participant_id, w.window_start, w.window_end, w.depressive, w.target)
            for w in windows]


def test_labels_csv_rejects_wrong_span(tmp_path):
    path = tmp_path / "labels.csv"
    serialize_labels_csv(label_windows(
        [_admin("p01", 1, 7), _admin("p01", 15, 6, "midpoint")]), path)
    text = path.read_text().replace("2024-03-14", "2024-03-13")
    path.write_text(text)
    with pytest.raises(DataError, match="14"):
        parse_labels_csv(path)
