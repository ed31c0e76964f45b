"""Seeded synthetic cohort with planted behavioral effects.

The generator simulates a phone that captures short face-frame bursts when
the participant unlocks it or opens an app. Depressive condition is planted
in the generative knobs, never painted onto aggregated features: session
timing, eyelid aperture, mouth-corner geometry, head-yaw drift and
action-unit intensity distributions all shift by amounts proportional to the
configured effect size. At effect size zero every knob collapses to the
baseline and the cohort is pure null.

Channel values follow a three-level hierarchy: a per participant-day latent,
a per-session latent around it, and per-frame noise. The day latents are the
dominant source of day-to-day aggregate variance, which keeps recovered
correlations well away from 1 and gives the planted sum features room to
beat their own mean/median siblings through the session-count channel.

Every participant draws from an independent substream of the master seed, so
regenerating with the same config is byte-identical and adding participants
never perturbs existing ones.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass

import numpy as np

from .data_model import (
    AU_NAMES, FrameRecord, PhqAdministration, WAVES,
    serialize_frame_stream, serialize_phq_csv,
)
from .errors import DataError
from .geometry import DEFAULT_LANDMARK_MAP
from .labeling import EPISODE_THRESHOLD, WINDOW_DAYS
from .provenance import config_hash

TRUTH_FORMAT_VERSION = "1"

# Planted day-feature effects and their signs. The generative knobs below
# are calibrated so that, at effect size 1 and default cohort shape, the
# strongest plants recover at |r| near 0.7 and the weakest near 0.25, with
# each planted stat leading or closely trailing its same-channel siblings.
PLANTED_FEATURES = (
    ("ear_right_sum_morning", 1),
    ("ear_left_sum_morning", 1),
    ("headEulerAngle_Y_sum_morning", -1),
    ("leftEyeOpenProbability_sum_morning", 1),
    ("rightEyeOpenProbability_sum_morning", 1),
    ("AU15_min_afternoon", 1),
    ("smilingProbability_sum_morning", 1),
    ("AU17_sum_midnight", -1),
    ("AU12_median_morning", -1),
    ("smilingProbability_std_evening", 1),
)

_TZ_CHOICES = (0, 60, -300, 540, -120, 120, 330)
_APP_CATEGORIES = ("social", "messaging", "video", "browser")
_MS_PER_DAY = 86_400_000
_MS_PER_EPOCH = 21_600_000
_UNIX_ORDINAL = dt.date(1970, 1, 1).toordinal()

# Baseline action-unit intensities (AU12/AU15/AU17 are modeled separately).
_AU_BASE = {
    "AU01": 0.12, "AU02": 0.10, "AU04": 0.18, "AU06": 0.15, "AU07": 0.14,
    "AU10": 0.12, "AU14": 0.11, "AU23": 0.08, "AU24": 0.09,
}
_AU12_IDX = AU_NAMES.index("AU12")
_AU15_IDX = AU_NAMES.index("AU15")
_AU17_IDX = AU_NAMES.index("AU17")
_PLAIN_AU_IDX = [i for i, n in enumerate(AU_NAMES) if n in _AU_BASE]
_PLAIN_AU_MEANS = np.array([_AU_BASE[AU_NAMES[i]] for i in _PLAIN_AU_IDX])


@dataclass(frozen=True)
class SynthConfig:
    n_participants: int = 25
    study_days: int = 28
    session_rates: tuple[float, float, float, float] = (0.5, 2.0, 3.0, 3.0)
    max_frames_per_session: int = 25
    frame_interval_ms: float = 400.0
    interval_jitter_ms: float = 40.0
    au_failure_rate: float = 0.17
    landmark_failure_rate: float = 0.03
    effect_size: float = 1.0
    seed: int = 7
    start_date: dt.date = dt.date(2024, 3, 4)
    stagger_days: int = 10
    participant_baseline_sd: float = 0.0
    planted: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.planted is not None:
            known = {name for name, _ in PLANTED_FEATURES}
            bad = [n for n in self.planted if n not in known]
            if bad:
                raise DataError(f"unknown planted features: {bad}")
        if self.n_participants < 1 or self.study_days < 1:
            raise DataError("cohort must have participants and days")
        if len(self.session_rates) != 4 or any(r < 0 for r in self.session_rates):
            raise DataError("session_rates must be 4 non-negative epoch rates")
        if not (1 <= self.max_frames_per_session <= 25):
            raise DataError("max_frames_per_session must be in 1..25")
        if self.interval_jitter_ms < 0 or self.interval_jitter_ms > 40.0:
            raise DataError("interval jitter must be within 40 ms")
        if not (0.0 <= self.au_failure_rate < 1.0
                and 0.0 <= self.landmark_failure_rate < 1.0):
            raise DataError("failure rates must be in [0, 1)")
        if self.effect_size < 0:
            raise DataError("effect size must be non-negative")
        if self.stagger_days < 1:
            raise DataError("stagger_days must be positive")

    def semantic_params(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["start_date"] = self.start_date.isoformat()
        obj["session_rates"] = list(self.session_rates)
        if self.planted is not None:
            obj["planted"] = list(self.planted)
        return obj


# Which plants each depressive knob serves. Shared generative levers serve
# several features at once (one eyelid aperture moves both EARs and both
# eye-open channels); the morning rate multiplier serves every morning sum.
_KNOB_OWNERS = {
    "morning_aperture_shift": ("ear_right_sum_morning", "ear_left_sum_morning",
                               "leftEyeOpenProbability_sum_morning",
                               "rightEyeOpenProbability_sum_morning"),
    "morning_yaw_shift": ("headEulerAngle_Y_sum_morning",),
    "morning_au12_shift": ("AU12_median_morning",),
    "morning_smile_shift": ("smilingProbability_sum_morning",),
    "afternoon_au15_floor_shift": ("AU15_min_afternoon",),
    "midnight_au17_shift": ("AU17_sum_midnight",),
    "midnight_rate_mult": ("AU17_sum_midnight",),
    "evening_smile_noise_mult": ("smilingProbability_std_evening",),
}


def _knobs(d: float, planted=None) -> dict:
    """Generative shifts applied during depressive windows.

    The sum-stat plants work through two coupled signals: the morning rate
    multiplier raises the session count while the value shifts raise the
    per-frame level, and only the planted channels receive both. The AU15
    floor shift sits near the 30th percentile of the folded frame noise so
    the epoch minimum pins against it while q1 barely moves.

    ``planted`` restricts which plants are active (None means all): knobs
    owned by unselected plants fall back to their neutral values.
    """
    active = frozenset(dict(PLANTED_FEATURES) if planted is None else planted)
    k = {
        "morning_rate_mult": 1.0 + 1.0 * d,
        "midnight_rate_mult": 1.0 / (1.0 + 0.43 * d),
        "morning_aperture_shift": 0.20 * d,
        "morning_yaw_shift": -3.2 * d,
        "morning_au12_shift": -0.055 * d,
        "morning_smile_shift": 0.12 * d,
        "afternoon_au15_floor_shift": 0.085 * d,
        "midnight_au17_shift": -0.08 * d,
        "evening_smile_noise_mult": 1.0 + 0.7 * d,
    }
    if not any(name.endswith("_sum_morning") for name in active):
        k["morning_rate_mult"] = 1.0
    for knob, owners in _KNOB_OWNERS.items():
        if not any(name in active for name in owners):
            k[knob] = 1.0 if knob.endswith("_mult") else 0.0
    return k


def planted_truth(config: SynthConfig) -> list[dict]:
    if config.effect_size == 0:
        return []
    return [{"feature": name, "direction": sign}
            for name, sign in PLANTED_FEATURES
            if config.planted is None or name in config.planted]


# ---------------------------------------------------------------------------
# face geometry template

def _ellipse(cx, cy, rx, ry, angles_deg) -> np.ndarray:
    a = np.radians(np.asarray(angles_deg, dtype=np.float64))
    return np.stack([cx + rx * np.cos(a), cy + ry * np.sin(a)], axis=1)


def face_template(landmark_map=DEFAULT_LANDMARK_MAP) -> np.ndarray:
    """Neutral 133-point face, origin between the eyes, y growing downward."""
    lm = np.zeros((landmark_map.n_points, 2))

    def put(region, pts):
        idx = landmark_map.range(region)
        if len(idx) != len(pts):
            raise DataError(f"template region {region} size mismatch")
        lm[list(idx)] = pts

    put("face_oval", _ellipse(0, 6, 62, 84, np.linspace(-90, 270, 37)[:-1]))
    put("left_eyebrow_top", _ellipse(-28, -34, 17, 5, np.linspace(200, 340, 5)))
    put("left_eyebrow_bottom", _ellipse(-28, -31, 16, 4, np.linspace(200, 340, 5)))
    put("right_eyebrow_top", _ellipse(28, -34, 17, 5, np.linspace(340, 200, 5)))
    put("right_eyebrow_bottom", _ellipse(28, -31, 16, 4, np.linspace(340, 200, 5)))
    eye_angles = np.arange(16) * 22.5
    put("left_eye", _ellipse(-28, -16, 12.0, 7.5, eye_angles))
    put("right_eye", _ellipse(28, -16, 12.0, 7.5, eye_angles))
    put("upper_lip_top", _ellipse(0, 40, 24, 8, np.linspace(180, 360, 11)))
    put("upper_lip_bottom", _ellipse(0, 41, 21, 3, np.linspace(180, 360, 9)))
    put("lower_lip_top", _ellipse(0, 42, 21, 3, np.linspace(180, 0, 9)))
    put("lower_lip_bottom", _ellipse(0, 43, 24, 9, np.linspace(180, 0, 9)))
    put("nose_bridge", np.array([[0.0, -10.0], [0.0, 0.0]]))
    put("nose_bottom", np.array([[-7.0, 12.0], [0.0, 15.0], [7.0, 12.0]]))
    put("left_cheek", np.array([[-42.0, 16.0]]))
    put("right_cheek", np.array([[42.0, 16.0]]))
    return lm


_TEMPLATE = face_template()
_LEFT_EYE_IDX = DEFAULT_LANDMARK_MAP.indices("left_eye")
_RIGHT_EYE_IDX = DEFAULT_LANDMARK_MAP.indices("right_eye")
_LIP_IDX = DEFAULT_LANDMARK_MAP.indices(
    "upper_lip_top", "upper_lip_bottom", "lower_lip_top", "lower_lip_bottom")
_NOSE_IDX = DEFAULT_LANDMARK_MAP.indices("nose_bridge", "nose_bottom")


# ---------------------------------------------------------------------------
# PHQ plan

def _window_plan(config: SynthConfig) -> list[list[bool]]:
    """Per participant, the intended depressive flag of each label window.

    Participants early in the roster get three administrations (two windows),
    the last quarter two (one window). Depressive windows are spread evenly
    over the flattened window list so no participant block soaks them all up.
    """
    n = config.n_participants
    n_two_admin = n // 4
    windows_per = [2] * (n - n_two_admin) + [1] * n_two_admin
    slots = [(i, j) for i, w in enumerate(windows_per) for j in range(w)]
    total = len(slots)
    target = int(round(total * 14.0 / 44.0))
    chosen: set[int] = set()
    if target:
        for v in np.round(np.linspace(0, total - 1, target)).astype(int):
            v = int(v)
            while v in chosen:
                v = (v + 1) % total
            chosen.add(v)
    plan = [[False] * w for w in windows_per]
    for pos in chosen:
        i, j = slots[pos]
        plan[i][j] = True
    return plan


def _decompose_items(total: int, rng: np.random.Generator) -> tuple[int, ...]:
    items = [0] * 9
    for _ in range(total):
        room = [i for i in range(9) if items[i] < 3]
        items[room[int(rng.integers(len(room)))]] += 1
    return tuple(items)


def _participant_phq(pid: str, start: dt.date, dep_flags: list[bool],
                     rng: np.random.Generator
                     ) -> tuple[list[PhqAdministration], list[dict]]:
    n_admins = len(dep_flags) + 1
    # an administration scores high exactly when it bounds a depressive window
    high = [any(dep_flags[j] for j in (a - 1, a) if 0 <= j < len(dep_flags))
            for a in range(n_admins)]
    admins = []
    for a in range(n_admins):
        total = int(rng.integers(6, 16)) if high[a] else int(rng.integers(0, 5))
        admins.append(PhqAdministration(
            participant_id=pid, wave=WAVES[a],
            administered_on=start + dt.timedelta(days=WINDOW_DAYS * a),
            items=_decompose_items(total, rng)))
    windows = []
    for j, dep in enumerate(dep_flags):
        ws = start + dt.timedelta(days=WINDOW_DAYS * j)
        windows.append({
            "participant_id": pid,
            "window_start": ws.isoformat(),
            "window_end": (ws + dt.timedelta(days=WINDOW_DAYS - 1)).isoformat(),
            "depressive": dep,
            "target": admins[j + 1].total,
        })
        assert dep == (admins[j].total >= EPISODE_THRESHOLD
                       and admins[j + 1].total >= EPISODE_THRESHOLD)
    return admins, windows


# ---------------------------------------------------------------------------
# frame synthesis

def _day_latents(base_shift: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Per participant-day centers: ap, yaw, au12, au17, au15, smile, roll."""
    lat = np.array([
        0.72 + base_shift[0] + rng.normal(0.0, 0.16),
        -3.0 + base_shift[1] + rng.normal(0.0, 3.2),
        0.32 + base_shift[2] + rng.normal(0.0, 0.06),
        0.25 + base_shift[3] + rng.normal(0.0, 0.10),
        rng.normal(0.05, 0.035),
        rng.normal(0.42, 0.10),
        rng.normal(0.0, 4.0),
    ])
    lat[4] = max(lat[4], 0.005)
    return lat


def _session_records(pid: str, session_id: str, utc_start_ms: int,
                     tz: int, epoch: int, dep: bool, knobs: dict,
                     lat: np.ndarray, config: SynthConfig,
                     rng: np.random.Generator) -> list[FrameRecord]:
    n = config.max_frames_per_session
    if n > 4 and rng.random() < 0.10:
        n = int(rng.integers(4, n))

    gaps = np.round(config.frame_interval_ms
                    + rng.uniform(-config.interval_jitter_ms,
                                  config.interval_jitter_ms, n - 1)).astype(np.int64)
    times = utc_start_ms + np.concatenate([[0], np.cumsum(gaps)])

    # day latents, shifted on epoch-specific knobs during depressive windows
    ap_mu, yaw_mu, au12_mu, au17_mu, au15_mu, smile_mu, roll_mu = lat
    au15_floor = 0.0
    smile_mult = 1.0
    if dep:
        if epoch == 1:
            ap_mu += knobs["morning_aperture_shift"]
            yaw_mu += knobs["morning_yaw_shift"]
            au12_mu += knobs["morning_au12_shift"]
            smile_mu += knobs["morning_smile_shift"]
        elif epoch == 2:
            au15_floor = knobs["afternoon_au15_floor_shift"]
        elif epoch == 0:
            au17_mu += knobs["midnight_au17_shift"]
        elif epoch == 3:
            smile_mult = knobs["evening_smile_noise_mult"]

    ap_s = rng.normal(ap_mu, 0.05)
    yaw_s = rng.normal(yaw_mu, 1.5)
    pitch_s = rng.normal(-2.0, 2.5)
    roll_s = rng.normal(roll_mu, 2.0)
    au12_s = rng.normal(au12_mu, 0.03)
    au17_s = rng.normal(au17_mu, 0.05)
    au15_b = rng.normal(au15_mu, 0.008)
    smile_s = rng.normal(smile_mu, 0.05 * smile_mult)
    plain_au_s = _PLAIN_AU_MEANS + rng.normal(0.0, 0.04, len(_PLAIN_AU_IDX))
    scale_s = rng.normal(1.0, 0.05)
    trans_s = rng.uniform(-30.0, 30.0, 2)

    ap = np.clip(ap_s + rng.normal(0.0, 0.10, n), 0.15, 1.30)
    yaw = np.clip(yaw_s + rng.normal(0.0, 0.8, n), -90.0, 90.0)
    pitch = np.clip(pitch_s + rng.normal(0.0, 0.7, n), -90.0, 90.0)
    roll = np.clip(roll_s + rng.normal(0.0, 0.5, n), -90.0, 90.0)
    au12 = np.clip(au12_s + rng.normal(0.0, 0.05, n), 0.0, 1.0)
    au15 = au15_b + np.abs(rng.normal(0.0, 0.18, n))
    # the floor acts on the raw distribution; min pins, upper quantiles don't
    au15 = np.clip(np.maximum(au15, au15_b + au15_floor), 0.0, 1.0)
    au17 = np.clip(au17_s + rng.normal(0.0, 0.10, n), 0.0, 1.0)
    plain = np.clip(plain_au_s + rng.normal(0.0, 0.08, (n, len(_PLAIN_AU_IDX))),
                    0.0, 1.0)
    smile = np.clip(smile_s + 0.20 * (au12 - 0.32)
                    + rng.normal(0.0, 0.10 * smile_mult, n), 0.0, 1.0)
    eye_l = np.clip(0.08 + 0.80 * ap + rng.normal(0.0, 0.04, n), 0.0, 1.0)
    eye_r = np.clip(0.08 + 0.80 * ap + rng.normal(0.0, 0.04, n), 0.0, 1.0)

    au = np.empty((n, len(AU_NAMES)))
    au[:, _PLAIN_AU_IDX] = plain
    au[:, _AU12_IDX] = au12
    au[:, _AU15_IDX] = au15
    au[:, _AU17_IDX] = au17

    # landmarks: template deformed per frame, then a similarity transform.
    # The eyelid geometry tracks a damped aperture so the ratio-based ear
    # channels keep their signal while the raw eye-point displacement (what
    # the movement PCs see) stays small next to the unshifted roll swing.
    g = 0.72 + 0.6 * (ap - 0.72)
    lm = np.broadcast_to(_TEMPLATE, (n, *_TEMPLATE.shape)).copy()
    for idx in (_LEFT_EYE_IDX, _RIGHT_EYE_IDX):
        cy = _TEMPLATE[idx, 1].mean()
        lm[:, idx, 1] = cy + (lm[:, idx, 1] - cy) * g[:, None]
    pull = 3.0 * au12[:, None] * (np.abs(_TEMPLATE[_LIP_IDX, 0]) / 24.0)
    lm[:, _LIP_IDX, 1] -= pull
    lm[:, _LIP_IDX, 0] *= 1.0 + 0.06 * au12[:, None]
    lm[:, _NOSE_IDX, 0] += np.sin(np.radians(yaw))[:, None] * 10.0

    ang = np.radians(roll)
    rot = np.stack([np.stack([np.cos(ang), -np.sin(ang)], axis=1),
                    np.stack([np.sin(ang), np.cos(ang)], axis=1)], axis=1)
    lm = np.einsum("nij,npj->npi", rot, lm) * scale_s
    lm += trans_s + rng.normal(0.0, 1.5, (n, 1, 2))
    lm += rng.normal(0.0, 0.15, lm.shape)
    lm = np.round(lm, 4)

    au_fail = rng.random(n) < config.au_failure_rate
    lm_fail = rng.random(n) < config.landmark_failure_rate
    app_open = rng.random(n) < 0.3
    app_cat = rng.integers(0, len(_APP_CATEGORIES), n)

    records = []
    for f in range(n):
        records.append(FrameRecord(
            participant_id=pid,
            session_id=session_id,
            captured_at=int(times[f]),
            tz_offset_minutes=tz,
            trigger="app_open" if app_open[f] else "unlock",
            app_category=_APP_CATEGORIES[app_cat[f]] if app_open[f] else None,
            landmarks=None if lm_fail[f] else lm[f],
            au=None if au_fail[f] else np.round(au[f], 6),
            smile_prob=round(float(smile[f]), 6),
            eye_open_left=round(float(eye_l[f]), 6),
            eye_open_right=round(float(eye_r[f]), 6),
            head_yaw=round(float(yaw[f]), 3),
            head_pitch=round(float(pitch[f]), 3),
            head_roll=round(float(roll[f]), 3),
        ))
    return records


def generate_cohort(config: SynthConfig
                    ) -> tuple[list[FrameRecord], list[PhqAdministration], dict]:
    """Frames, PHQ administrations and the ground-truth manifest."""
    knobs = _knobs(config.effect_size, config.planted)
    plan = _window_plan(config)
    records: list[FrameRecord] = []
    admins: list[PhqAdministration] = []
    truth_windows: list[dict] = []

    for i in range(config.n_participants):
        pid = f"p{i + 1:02d}"
        tz = _TZ_CHOICES[i % len(_TZ_CHOICES)]
        start = config.start_date + dt.timedelta(days=i % config.stagger_days)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7919, i]))
        rng_phq = np.random.default_rng(np.random.SeedSequence([config.seed, 104729, i]))

        p_admins, p_windows = _participant_phq(pid, start, plan[i], rng_phq)
        admins.extend(p_admins)
        truth_windows.extend(p_windows)
        dep_days = set()
        for j, dep in enumerate(plan[i]):
            if dep:
                dep_days.update(range(WINDOW_DAYS * j, WINDOW_DAYS * (j + 1)))

        base_shift = (rng.normal(0.0, config.participant_baseline_sd, 4)
                      if config.participant_baseline_sd > 0 else np.zeros(4))

        for day in range(config.study_days):
            date = start + dt.timedelta(days=day)
            day_local_ms = (date.toordinal() - _UNIX_ORDINAL) * _MS_PER_DAY
            dep = day in dep_days
            lat = _day_latents(base_shift, rng)
            for epoch in range(4):
                rate = config.session_rates[epoch]
                if dep and epoch == 1:
                    rate *= knobs["morning_rate_mult"]
                elif dep and epoch == 0:
                    rate *= knobs["midnight_rate_mult"]
                n_sessions = min(int(rng.poisson(rate)), 12)
                for s in range(n_sessions):
                    margin = config.max_frames_per_session * 450 + 1000
                    local = day_local_ms + epoch * _MS_PER_EPOCH \
                        + int(rng.uniform(0, _MS_PER_EPOCH - margin))
                    records.extend(_session_records(
                        pid, f"{pid}-{date.isoformat()}-e{epoch}-s{s}",
                        local - tz * 60_000, tz, epoch, dep, knobs,
                        lat, config, rng))

    truth = {
        "format_version": TRUTH_FORMAT_VERSION,
        "kind": "truth_manifest",
        "seed": config.seed,
        "config_hash": config_hash(config.semantic_params()),
        "config": config.semantic_params(),
        "effect_size": config.effect_size,
        "planted": planted_truth(config),
        "knobs": knobs,
        "windows": truth_windows,
        "n_windows": len(truth_windows),
        "n_depressive_windows": sum(w["depressive"] for w in truth_windows),
        "n_records": len(records),
    }
    return records, admins, truth


def write_cohort(config: SynthConfig, out_dir) -> dict:
    """Generate and persist a cohort; returns the artifact paths."""
    import os

    records, admins, truth = generate_cohort(config)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "frames": os.path.join(out_dir, "frames.jsonl"),
        "phq": os.path.join(out_dir, "phq.csv"),
        "truth": os.path.join(out_dir, "manifest.truth"),
    }
    serialize_frame_stream(records, paths["frames"])
    serialize_phq_csv(admins, paths["phq"])
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def load_truth(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("kind") != "truth_manifest" \
            or obj.get("format_version") != TRUTH_FORMAT_VERSION:
        raise DataError(f"not a truth manifest: {path}")
    return obj
