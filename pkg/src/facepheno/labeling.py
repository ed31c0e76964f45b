"""Episode labels from repeated PHQ-9 administrations.

Consecutive administrations of a participant anchor 14-day windows at the
earlier date (end = start + 13 days, inclusive). A window is a depressive
episode when the questionnaire total is at least 5 at both endpoints. The
regression target defaults to the window's ending total; a start-of-window
policy exists for sensitivity checks.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Iterable, Sequence

from .data_model import PhqAdministration
from .errors import DataError
from .featurize import DayInstance

LABELS_FORMAT_VERSION = "1"

WINDOW_DAYS = 14
EPISODE_THRESHOLD = 5

SEVERITY_BANDS = (
    (0, 4, "none"),
    (5, 9, "mild"),
    (10, 14, "moderate"),
    (15, 19, "moderately_severe"),
    (20, 27, "severe"),
)


def severity(total: int) -> str:
    if not isinstance(total, (int,)) or isinstance(total, bool):
        raise DataError(f"PHQ total must be an integer, got {total!r}")
    for lo, hi, name in SEVERITY_BANDS:
        if lo <= total <= hi:
            return name
    raise DataError(f"PHQ total outside 0..27: {total}")


@dataclass(frozen=True, slots=True)
class EpisodeLabel:
    participant_id: str
    window_start: dt.date
    window_end: dt.date
    depressive: bool
    target: int
    # Endpoint totals are None when the label was read back from CSV.
    phq_start: int | None = None
    phq_end: int | None = None


def label_windows(admins: Sequence[PhqAdministration],
                  target_policy: str = "end") -> list[EpisodeLabel]:
    """Windows from consecutive administration pairs, sorted by participant.

    Participants with fewer than two administrations yield no windows; a
    missing endpoint simply drops the would-be window.
    """
    if target_policy not in ("end", "start"):
        raise DataError(f"unknown target policy {target_policy!r}")
    by_pid: dict[str, list[PhqAdministration]] = {}
    for a in admins:
        by_pid.setdefault(a.participant_id, []).append(a)
    labels: list[EpisodeLabel] = []
    for pid in sorted(by_pid):
        seq = sorted(by_pid[pid], key=lambda a: a.administered_on)
        for first, second in zip(seq, seq[1:]):
            start = first.administered_on
            end = start + dt.timedelta(days=WINDOW_DAYS - 1)
            phq_start, phq_end = first.total, second.total
            labels.append(EpisodeLabel(
                participant_id=pid,
                window_start=start,
                window_end=end,
                depressive=(phq_start >= EPISODE_THRESHOLD
                            and phq_end >= EPISODE_THRESHOLD),
                target=phq_end if target_policy == "end" else phq_start,
                phq_start=phq_start,
                phq_end=phq_end,
            ))
    return labels


@dataclass(slots=True)
class LabeledInstance:
    instance: DayInstance
    depressive: bool
    target: int
    window_start: dt.date


def attach_targets(instances: Sequence[DayInstance],
                   windows: Sequence[EpisodeLabel],
                   ) -> tuple[list[LabeledInstance], int]:
    """Attach each instance to the unique window covering its date.

    Instances outside every window are dropped and counted. Overlapping
    windows for one participant are an error: coverage must be unambiguous.
    """
    by_pid: dict[str, list[EpisodeLabel]] = {}
    for w in windows:
        by_pid.setdefault(w.participant_id, []).append(w)
    for pid, ws in by_pid.items():
        ws.sort(key=lambda w: w.window_start)
        for a, b in zip(ws, ws[1:]):
            if b.window_start <= a.window_end:
                raise DataError(
                    f"participant {pid!r}: windows {a.window_start}..{a.window_end} "
                    f"and {b.window_start}..{b.window_end} overlap")

    labeled: list[LabeledInstance] = []
    dropped = 0
    for inst in instances:
        hit = None
        for w in by_pid.get(inst.participant_id, ()):
            if w.window_start <= inst.local_date <= w.window_end:
                hit = w
                break
        if hit is None:
            dropped += 1
        else:
            labeled.append(LabeledInstance(
                instance=inst, depressive=hit.depressive,
                target=hit.target, window_start=hit.window_start))
    return labeled, dropped


# ---------------------------------------------------------------------------
# CSV round trip

LABELS_HEADER = ("participant_id", "window_start", "window_end", "depressive", "target")


def serialize_labels_csv(windows: Iterable[EpisodeLabel], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"format_version,{LABELS_FORMAT_VERSION}\n")
        fh.write(",".join(LABELS_HEADER) + "\n")
        for w in windows:
            fh.write(",".join([
                w.participant_id, w.window_start.isoformat(),
                w.window_end.isoformat(), str(int(w.depressive)), str(w.target),
            ]) + "\n")


def parse_labels_csv(path) -> list[EpisodeLabel]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"format_version,{LABELS_FORMAT_VERSION}":
        raise DataError("labels CSV missing format_version line")
    if len(lines) < 2 or tuple(lines[1].split(",")) != LABELS_HEADER:
        raise DataError("labels CSV header mismatch")
    out: list[EpisodeLabel] = []
    for line_no, line in enumerate(lines[2:], start=3):
        parts = line.split(",")
        if len(parts) != len(LABELS_HEADER):
            raise DataError(f"line {line_no}: expected {len(LABELS_HEADER)} fields")
        start = dt.date.fromisoformat(parts[1])
        end = dt.date.fromisoformat(parts[2])
        if (end - start).days != WINDOW_DAYS - 1:
            raise DataError(f"line {line_no}: window is not {WINDOW_DAYS} days")
        out.append(EpisodeLabel(
            participant_id=parts[0], window_start=start, window_end=end,
            depressive=bool(int(parts[3])), target=int(parts[4]),
        ))
    return out
