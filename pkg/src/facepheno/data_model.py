"""Record types and file formats for phone-captured facial behavior streams.

Two on-disk formats, both UTF-8 and versioned by a mandatory first line:

* frame stream: one JSON object per line, first line ``{"format_version": "1"}``.
  Missing observations are represented by omitting the field (``null`` is
  accepted on input but never written back).
* PHQ administrations: CSV whose first line is ``format_version,1`` followed by
  a fixed header row.

Parsing is strict by default and reports the offending line number. The
lenient variant keeps going and returns the errors alongside the records, so
that no line is ever silently dropped: every input line is either the version
line, a record, or a reported error.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, FormatError

FRAME_FORMAT_VERSION = "1"
PHQ_FORMAT_VERSION = "1"

# Action units scored by the capture pipeline, in canonical order.
AU_NAMES = (
    "AU01", "AU02", "AU04", "AU06", "AU07", "AU10",
    "AU12", "AU14", "AU15", "AU17", "AU23", "AU24",
)

TRIGGERS = ("unlock", "app_open")

WAVES = ("baseline", "midpoint", "endpoint")

N_LANDMARKS = 133

# Contour regions in storage order. Counts sum to 133.
LANDMARK_REGIONS = (
    ("face_oval", 36),
    ("left_eyebrow_top", 5),
    ("left_eyebrow_bottom", 5),
    ("right_eyebrow_top", 5),
    ("right_eyebrow_bottom", 5),
    ("left_eye", 16),
    ("right_eye", 16),
    ("upper_lip_top", 11),
    ("upper_lip_bottom", 9),
    ("lower_lip_top", 9),
    ("lower_lip_bottom", 9),
    ("nose_bridge", 2),
    ("nose_bottom", 3),
    ("left_cheek", 1),
    ("right_cheek", 1),
)


class LandmarkMap:
    """Named index ranges over the 133-point facial contour set."""

    def __init__(self, regions: Sequence[tuple[str, int]] = LANDMARK_REGIONS):
        self._ranges: dict[str, range] = {}
        start = 0
        for name, count in regions:
            if count <= 0:
                raise DataError(f"region {name!r} has non-positive size {count}")
            if name in self._ranges:
                raise DataError(f"duplicate region name {name!r}")
            self._ranges[name] = range(start, start + count)
            start += count
        self.n_points = start

    @property
    def region_names(self) -> tuple[str, ...]:
        return tuple(self._ranges)

    def range(self, name: str) -> range:
        try:
            return self._ranges[name]
        except KeyError:
            raise DataError(f"unknown landmark region {name!r}") from None

    def indices(self, *names: str) -> np.ndarray:
        out: list[int] = []
        for name in names:
            out.extend(self.range(name))
        return np.asarray(out, dtype=np.int64)


DEFAULT_LANDMARK_MAP = LandmarkMap()


@dataclass(slots=True)
class FrameRecord:
    """One captured frame with whatever the detector managed to score.

    ``landmarks`` is a (133, 2) float array or None when the contour pass
    failed. ``au`` is a length-12 float array ordered per AU_NAMES with NaN
    for individually missing units, or None when the whole block failed.
    Scalar fields are None when missing.
    """

    participant_id: str
    session_id: str
    captured_at: int            # UTC epoch milliseconds
    tz_offset_minutes: int
    trigger: str
    app_category: str | None = None
    landmarks: np.ndarray | None = None
    au: np.ndarray | None = None
    smile_prob: float | None = None
    eye_open_left: float | None = None
    eye_open_right: float | None = None
    head_yaw: float | None = None
    head_pitch: float | None = None
    head_roll: float | None = None


@dataclass(frozen=True, slots=True)
class PhqAdministration:
    participant_id: str
    wave: str
    administered_on: dt.date
    items: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.items)


@dataclass(slots=True)
class ParticipantSummary:
    participant_id: str
    first_date: dt.date | None
    last_date: dt.date | None
    n_sessions: int
    n_frames: int
    n_administrations: int


@dataclass(slots=True)
class CohortIndex:
    """Joined view of frame data and PHQ administrations."""

    summaries: dict[str, ParticipantSummary]
    administrations: dict[str, list[PhqAdministration]]
    unlabeled: tuple[str, ...] = field(default_factory=tuple)


def local_datetime(captured_at_ms: int, tz_offset_minutes: int) -> dt.datetime:
    """Local wall-clock time of a capture (naive datetime)."""
    utc = dt.datetime.fromtimestamp(captured_at_ms / 1000.0, tz=dt.timezone.utc)
    return (utc + dt.timedelta(minutes=tz_offset_minutes)).replace(tzinfo=None)


def local_date(captured_at_ms: int, tz_offset_minutes: int) -> dt.date:
    return local_datetime(captured_at_ms, tz_offset_minutes).date()


# ---------------------------------------------------------------------------
# frame stream

def _check_unit(value: float, name: str) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} outside [0, 1]: {value}")
    return value


def _check_angle(value: float, name: str) -> float:
    value = float(value)
    if not (-180.0 <= value <= 180.0):
        raise ValueError(f"{name} outside [-180, 180]: {value}")
    return value


def _record_from_obj(obj: dict) -> FrameRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")

    def get(key):
        value = obj.get(key)
        return None if value is None else value

    participant_id = get("participant_id")
    session_id = get("session_id")
    if not participant_id or not isinstance(participant_id, str):
        raise ValueError("missing or empty participant_id")
    if not session_id or not isinstance(session_id, str):
        raise ValueError("missing or empty session_id")

    captured_at = get("captured_at")
    if not isinstance(captured_at, int) or captured_at <= 0:
        raise ValueError(f"captured_at must be a positive integer, got {captured_at!r}")
    tz = get("tz_offset_minutes")
    if not isinstance(tz, int) or not (-14 * 60 <= tz <= 14 * 60):
        raise ValueError(f"tz_offset_minutes out of range: {tz!r}")

    trigger = get("trigger")
    if trigger not in TRIGGERS:
        raise ValueError(f"unknown trigger {trigger!r}")
    app_category = get("app_category")
    if app_category is not None and not isinstance(app_category, str):
        raise ValueError("app_category must be a string")

    landmarks = None
    raw_lm = get("landmarks")
    if raw_lm is not None:
        arr = np.asarray(raw_lm, dtype=np.float64)
        if arr.shape != (N_LANDMARKS, 2):
            raise ValueError(f"landmarks must be {N_LANDMARKS} (x, y) pairs, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("landmarks contain non-finite values")
        landmarks = arr

    au = None
    raw_au = get("au")
    if raw_au is not None:
        if not isinstance(raw_au, dict):
            raise ValueError("au must be an object keyed by unit name")
        unknown = set(raw_au) - set(AU_NAMES)
        if unknown:
            raise ValueError(f"unknown action units: {sorted(unknown)}")
        au = np.full(len(AU_NAMES), np.nan)
        for i, name in enumerate(AU_NAMES):
            if name in raw_au and raw_au[name] is not None:
                au[i] = _check_unit(raw_au[name], name)

    kwargs = {}
    for key in ("smile_prob", "eye_open_left", "eye_open_right"):
        value = get(key)
        kwargs[key] = None if value is None else _check_unit(value, key)
    for key in ("head_yaw", "head_pitch", "head_roll"):
        value = get(key)
        kwargs[key] = None if value is None else _check_angle(value, key)

    return FrameRecord(
        participant_id=participant_id,
        session_id=session_id,
        captured_at=captured_at,
        tz_offset_minutes=tz,
        trigger=trigger,
        app_category=app_category,
        landmarks=landmarks,
        au=au,
        **kwargs,
    )


def _record_to_obj(rec: FrameRecord) -> dict:
    obj: dict = {
        "participant_id": rec.participant_id,
        "session_id": rec.session_id,
        "captured_at": rec.captured_at,
        "tz_offset_minutes": rec.tz_offset_minutes,
        "trigger": rec.trigger,
    }
    if rec.app_category is not None:
        obj["app_category"] = rec.app_category
    if rec.landmarks is not None:
        obj["landmarks"] = [[float(x), float(y)] for x, y in rec.landmarks]
    if rec.au is not None:
        obj["au"] = {
            name: float(v)
            for name, v in zip(AU_NAMES, rec.au)
            if not np.isnan(v)
        }
    for key in ("smile_prob", "eye_open_left", "eye_open_right",
                "head_yaw", "head_pitch", "head_roll"):
        value = getattr(rec, key)
        if value is not None:
            obj[key] = float(value)
    return obj


def parse_frame_stream(path) -> list[FrameRecord]:
    """Parse a frame stream file, raising FormatError on the first bad line."""
    records, errors = _parse_frames(path, stop_on_error=True)
    if errors:
        raise errors[0]
    return records


def parse_frame_stream_lenient(path) -> tuple[list[FrameRecord], list[FormatError]]:
    """Parse a frame stream, collecting per-line errors instead of raising.

    Guarantees input lines == version line + len(records) + len(errors),
    counting blank interior lines as errors.
    """
    return _parse_frames(path, stop_on_error=False)


def _parse_frames(path, stop_on_error: bool) -> tuple[list[FrameRecord], list[FormatError]]:
    records: list[FrameRecord] = []
    errors: list[FormatError] = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise FormatError("empty file, expected format_version line", 1)
        try:
            head = json.loads(first)
            version = head.get("format_version") if isinstance(head, dict) else None
        except json.JSONDecodeError:
            version = None
        if version != FRAME_FORMAT_VERSION:
            raise FormatError(
                f"expected format_version {FRAME_FORMAT_VERSION!r} header, got {first.strip()!r}", 1)
        for line_no, line in enumerate(fh, start=2):
            if line.strip() == "":
                err = FormatError("blank line", line_no)
            else:
                try:
                    records.append(_record_from_obj(json.loads(line)))
                    continue
                except (json.JSONDecodeError, ValueError, TypeError) as exc:
                    err = FormatError(str(exc), line_no)
            errors.append(err)
            if stop_on_error:
                break
    return records, errors


def serialize_frame_stream(records: Iterable[FrameRecord], path) -> None:
    """Write records in canonical form (fixed key order, missing fields omitted)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format_version": FRAME_FORMAT_VERSION}) + "\n")
        for rec in records:
            fh.write(json.dumps(_record_to_obj(rec), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# PHQ administrations

PHQ_HEADER = ("participant_id", "wave", "administered_on",
              *[f"item{i}" for i in range(1, 10)])


def parse_phq_csv(path) -> list[PhqAdministration]:
    admins: list[PhqAdministration] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split(",") != ["format_version", PHQ_FORMAT_VERSION]:
        raise FormatError(f"expected 'format_version,{PHQ_FORMAT_VERSION}' first line", 1)
    if len(lines) < 2 or tuple(lines[1].split(",")) != PHQ_HEADER:
        raise FormatError(f"expected header {','.join(PHQ_HEADER)!r}", 2)
    for line_no, line in enumerate(lines[2:], start=3):
        if line.strip() == "":
            raise FormatError("blank line", line_no)
        parts = line.split(",")
        if len(parts) != len(PHQ_HEADER):
            raise FormatError(f"expected {len(PHQ_HEADER)} fields, got {len(parts)}", line_no)
        pid, wave, date_str, *item_strs = parts
        if not pid:
            raise FormatError("empty participant_id", line_no)
        if wave not in WAVES:
            raise FormatError(f"unknown wave {wave!r}", line_no)
        try:
            administered = dt.date.fromisoformat(date_str)
        except ValueError:
            raise FormatError(f"bad date {date_str!r}", line_no) from None
        items = []
        for i, s in enumerate(item_strs, start=1):
            try:
                v = int(s)
            except ValueError:
                raise FormatError(f"item{i} not an integer: {s!r}", line_no) from None
            if not (0 <= v <= 3):
                raise FormatError(f"item{i} outside 0..3: {v}", line_no)
            items.append(v)
        admins.append(PhqAdministration(pid, wave, administered, tuple(items)))
    return admins


def serialize_phq_csv(admins: Iterable[PhqAdministration], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"format_version,{PHQ_FORMAT_VERSION}\n")
        fh.write(",".join(PHQ_HEADER) + "\n")
        for a in admins:
            row = [a.participant_id, a.wave, a.administered_on.isoformat(),
                   *[str(v) for v in a.items]]
            fh.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# cohort validation

def validate_cohort(records: Sequence[FrameRecord],
                    admins: Sequence[PhqAdministration]) -> CohortIndex:
    """Cross-check frames against administrations and build per-participant summaries.

    Duplicate (participant, wave) administrations are an error. Participants
    with fewer than two administrations (or none at all) cannot anchor an
    episode window and are flagged unlabeled rather than rejected.
    """
    admin_map: dict[str, list[PhqAdministration]] = {}
    seen: set[tuple[str, str]] = set()
    for a in admins:
        key = (a.participant_id, a.wave)
        if key in seen:
            raise DataError(f"duplicate administration for participant "
                            f"{a.participant_id!r} wave {a.wave!r}")
        seen.add(key)
        admin_map.setdefault(a.participant_id, []).append(a)
    for pid in admin_map:
        admin_map[pid].sort(key=lambda a: a.administered_on)

    summaries: dict[str, ParticipantSummary] = {}
    sessions: dict[str, set[str]] = {}
    for rec in records:
        s = summaries.get(rec.participant_id)
        date = local_date(rec.captured_at, rec.tz_offset_minutes)
        if s is None:
            summaries[rec.participant_id] = ParticipantSummary(
                rec.participant_id, date, date, 0, 1,
                len(admin_map.get(rec.participant_id, ())))
            sessions[rec.participant_id] = {rec.session_id}
        else:
            s.n_frames += 1
            sessions[rec.participant_id].add(rec.session_id)
            if date < s.first_date:
                s.first_date = date
            if date > s.last_date:
                s.last_date = date
    for pid, sess in sessions.items():
        summaries[pid].n_sessions = len(sess)

    for pid, al in admin_map.items():
        if pid not in summaries:
            summaries[pid] = ParticipantSummary(pid, None, None, 0, 0, len(al))

    unlabeled = tuple(sorted(
        pid for pid in summaries
        if len(admin_map.get(pid, ())) < 2
    ))
    return CohortIndex(summaries=summaries, administrations=admin_map,
                       unlabeled=unlabeled)
