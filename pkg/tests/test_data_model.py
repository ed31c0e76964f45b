"""Round trips, validation and error reporting of the on-disk formats."""

import datetime as dt
import json

import numpy as np
import pytest

from conftest import make_record, utc_ms
from facepheno.data_model import (
    AU_NAMES,
    DEFAULT_LANDMARK_MAP,
    LANDMARK_REGIONS,
    N_LANDMARKS,
    PhqAdministration,
    local_date,
    parse_frame_stream,
    parse_frame_stream_lenient,
    parse_phq_csv,
    serialize_frame_stream,
    serialize_phq_csv,
    validate_cohort,
)
from facepheno.errors import DataError, FormatError


# ---------------------------------------------------------------------------
# landmark map

def test_landmark_map_covers_all_points_without_gaps():
    assert sum(count for _, count in LANDMARK_REGIONS) == N_LANDMARKS
    assert DEFAULT_LANDMARK_MAP.n_points == N_LANDMARKS
    cursor = 0
    for name, count in LANDMARK_REGIONS:
        rng_ = DEFAULT_LANDMARK_MAP.range(name)
        assert rng_.start == cursor and len(rng_) == count
        cursor = rng_.stop
    assert cursor == N_LANDMARKS


def test_landmark_map_indices_concatenate_in_call_order():
    idx = DEFAULT_LANDMARK_MAP.indices("nose_bridge", "nose_bottom")
    assert idx.tolist() == [126, 127, 128, 129, 130]
    with pytest.raises(DataError):
        DEFAULT_LANDMARK_MAP.range("forehead")


# ---------------------------------------------------------------------------
# frame stream

def test_frame_stream_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(7)
    au = rng.random(len(AU_NAMES))
    au[3] = np.nan  # one unit individually missing
    records = [
        make_record(rng=rng, app_category="social"),
        make_record(session="s02", at=utc_ms(2024, 3, 10, 13, 0), au=au),
        # detector produced nothing beyond the head pose
        make_record(session="s03", smile_prob=None, eye_open_left=None,
                    eye_open_right=None, trigger="app_open"),
    ]
    p1 = tmp_path / "frames.jsonl"
    serialize_frame_stream(records, p1)
    parsed = parse_frame_stream(p1)
    p2 = tmp_path / "again.jsonl"
    serialize_frame_stream(parsed, p2)
    assert p1.read_bytes() == p2.read_bytes()

    assert parsed[0].app_category == "social"
    assert np.allclose(parsed[0].landmarks, records[0].landmarks)
    assert np.isnan(parsed[1].au[3]) and np.allclose(parsed[1].au[:3], au[:3])
    assert parsed[2].smile_prob is None
    assert parsed[2].trigger == "app_open"


def test_lenient_parse_accounts_for_every_line(tmp_path):
    good = json.dumps({
        "participant_id": "p01", "session_id": "s01",
        "captured_at": utc_ms(2024, 3, 10, 12, 0),
        "tz_offset_minutes": 0, "trigger": "unlock",
    })
    bad_json = "{not json"
    bad_value = good.replace('"unlock"', '"shake"')
    path = tmp_path / "frames.jsonl"
    path.write_text('{"format_version": "1"}\n'
                    + "\n".join([good, bad_json, good, bad_value, "", good]) + "\n")

    records, errors = parse_frame_stream_lenient(path)
    assert len(records) == 3
    assert len(errors) == 3
    assert len(records) + len(errors) == 6
    assert [e.line_no for e in errors] == [3, 5, 6]

    with pytest.raises(FormatError, match="line 3"):
        parse_frame_stream(path)


def test_frame_stream_requires_version_header(tmp_path):
    path = tmp_path / "frames.jsonl"
    path.write_text('{"participant_id": "p01"}\n')
    with pytest.raises(FormatError, match="format_version"):
        parse_frame_stream(path)
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(FormatError):
        parse_frame_stream(tmp_path / "empty.jsonl")


@pytest.mark.parametrize("patch", [
    {"trigger": "shake"},
    {"tz_offset_minutes": 15 * 60},
    {"captured_at": 0},
    {"smile_prob": 1.5},
    {"head_yaw": 181.0},
    {"landmarks": [[0.0, 0.0]] * 5},
    {"au": {"AU99": 0.5}},
    {"au": {"AU01": -0.2}},
    {"participant_id": ""},
])
def test_frame_stream_rejects_out_of_contract_values(tmp_path, patch):
    obj = {
        "participant_id": "p01", "session_id": "s01",
        "captured_at": utc_ms(2024, 3, 10, 12, 0),
        "tz_offset_minutes": 0, "trigger": "unlock",
    }
    obj.update(patch)
    path = tmp_path / "frames.jsonl"
    path.write_text('{"format_version": "1"}\n' + json.dumps(obj) + "\n")
    with pytest.raises(FormatError):
        parse_frame_stream(path)


def test_local_date_respects_offset():
    at = utc_ms(2024, 3, 10, 23, 30)
    assert local_date(at, 0) == dt.date(2024, 3, 10)
    assert local_date(at, 120) == dt.date(2024, 3, 11)
    assert local_date(at, -5 * 60) == dt.date(2024, 3, 10)


# ---------------------------------------------------------------------------
# PHQ administrations

def _admin(pid="p01", wave="baseline", day=1, items=(1,) * 9):
    return PhqAdministration(pid, wave, dt.date(2024, 3, day), tuple(items))


def test_phq_csv_round_trip(tmp_path):
    admins = [
        _admin(),
        _admin(wave="midpoint", day=15, items=(3, 2, 1, 0, 3, 2, 1, 0, 3)),
        _admin(pid="p02", items=(0,) * 9),
    ]
    path = tmp_path / "phq.csv"
    serialize_phq_csv(admins, path)
    assert parse_phq_csv(path) == admins
    assert admins[1].total == 15


@pytest.mark.parametrize("mangle", [
    lambda lines: ["format_version,2"] + lines[1:],
    lambda lines: lines[:1] + ["bogus,header"] + lines[2:],
    lambda lines: lines[:2] + [lines[2].replace("baseline", "weekly")],
    lambda lines: lines[:2] + [lines[2].replace("2024-03-01", "03/01/2024")],
    lambda lines: lines[:2] + [lines[2][:-1] + "9"],   # item outside 0..3
    lambda lines: lines[:2] + [lines[2] + ",0"],        # extra field
])
def test_phq_csv_rejects_malformed_rows(tmp_path, mangle):
    path = tmp_path / "phq.csv"
    serialize_phq_csv([_admin()], path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(mangle(lines)) + "\n")
    with pytest.raises(FormatError):
        parse_phq_csv(path)


# ---------------------------------------------------------------------------
# cohort validation

def test_validate_cohort_summarizes_and_flags_unlabelable():
    rng = np.random.default_rng(0)
    records = [
        make_record(rng=rng),
        make_record(session="s02", at=utc_ms(2024, 3, 12, 9, 0)),
        make_record(pid="p02", at=utc_ms(2024, 3, 11, 9, 0)),
    ]
    admins = [_admin(), _admin(wave="midpoint", day=15), _admin(pid="p02")]
    index = validate_cohort(records, admins)

    s1 = index.summaries["p01"]
    assert (s1.n_frames, s1.n_sessions, s1.n_administrations) == (2, 2, 2)
    assert s1.first_date == dt.date(2024, 3, 10)
    assert s1.last_date == dt.date(2024, 3, 12)
    assert index.unlabeled == ("p02",)


def test_validate_cohort_rejects_duplicate_wave():
    admins = [_admin(), _admin(day=20)]
    with pytest.raises(DataError, match="duplicate"):
        validate_cohort([], admins)


def test_validate_cohort_keeps_frameless_participants():
    index = validate_cohort([], [_admin(pid="p09"), _admin(pid="p09", wave="endpoint", day=29)])
    assert index.summaries["p09"].n_frames == 0
    assert index.summaries["p09"].first_date is None
    assert index.unlabeled == ()
