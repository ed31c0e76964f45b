"""Epoch-aggregated day features.

Every captured frame contributes up to 40 per-frame channel values (12 action
units, 3 classifier probabilities, 3 head Euler angles, 2 eye-aspect ratios,
10 IVA PCA scores and their 10 velocities). A participant-day is summarized
by aggregating each channel within four fixed local-time epochs:

    [00:00, 06:00) midnight   [06:00, 12:00) morning
    [12:00, 18:00) afternoon  [18:00, 24:00) evening

with eight statistics per (channel, epoch): min, max, mean, median, sum,
population std, and linearly interpolated quartiles. 40 x 8 x 4 = 1280
features per day, named ``{channel}_{stat}_{epoch}``. Channels missing for
every frame of an epoch yield missing features, never zeros.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data_model import AU_NAMES, FrameRecord, local_datetime
from .errors import DataError
from .geometry import PcaModel, apply_pca, compute_iva_raw_batch, iva_dynamics
from .data_model import DEFAULT_LANDMARK_MAP

EPOCH_NAMES = ("midnight", "morning", "afternoon", "evening")
STAT_NAMES = ("min", "max", "mean", "median", "sum", "std", "q1", "q3")

FEATURES_FORMAT_VERSION = "1"


def epoch_of_hour(hour: float) -> int:
    if not (0.0 <= hour < 24.0):
        raise DataError(f"hour outside [0, 24): {hour}")
    return int(hour // 6.0)


def assign_epoch(captured_at_ms: int, tz_offset_minutes: int) -> str:
    """Epoch name for a capture instant, by local wall-clock time."""
    local = local_datetime(captured_at_ms, tz_offset_minutes)
    return EPOCH_NAMES[epoch_of_hour(local.hour + local.minute / 60.0
                                      + local.second / 3600.0
                                      + local.microsecond / 3.6e9)]


def aggregate_epoch(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """The eight summary statistics of one channel within one epoch.

    NaNs are treated as missing observations. An empty (or all-missing)
    input yields all-NaN output. Quartiles interpolate linearly at rank
    p * (n - 1); std is the population standard deviation.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[~np.isnan(v)]
    if v.size == 0:
        return np.full(len(STAT_NAMES), np.nan)
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    return np.array([
        v.min(), v.max(), v.mean(), med, v.sum(),
        v.std(), q1, q3,
    ])


def aggregate_groups(values: np.ndarray, group_ids: np.ndarray,
                     n_groups: int) -> np.ndarray:
    """Vectorized aggregate_epoch over many groups at once.

    Returns (n_groups, 8); groups with no finite observation are all-NaN.
    Matches aggregate_epoch to floating-point noise (same interpolation and
    normalization conventions).
    """
    values = np.asarray(values, dtype=np.float64)
    group_ids = np.asarray(group_ids)
    keep = ~np.isnan(values)
    v = values[keep]
    g = group_ids[keep]
    out = np.full((n_groups, len(STAT_NAMES)), np.nan)
    if v.size == 0:
        return out
    order = np.lexsort((v, g))
    v = v[order]
    g = g[order]
    counts = np.bincount(g, minlength=n_groups)
    present = counts > 0
    starts = np.zeros(n_groups, dtype=np.int64)
    starts[1:] = np.cumsum(counts)[:-1]
    # Sums run over the sorted order so results do not depend on how the
    # caller happened to order equal-valued frames.
    comp_starts = starts[present]
    comp_counts = counts[present]
    sums = np.add.reduceat(v, comp_starts)
    means = sums / comp_counts
    mean_of = np.empty(n_groups)
    mean_of[present] = means
    var = np.add.reduceat((v - mean_of[g]) ** 2, comp_starts) / comp_counts

    out[present, 0] = v[comp_starts]
    out[present, 1] = v[comp_starts + comp_counts - 1]
    out[present, 2] = means
    out[present, 4] = sums
    out[present, 5] = np.sqrt(np.maximum(var, 0.0))
    for col, q in ((3, 0.50), (6, 0.25), (7, 0.75)):
        rank = q * (counts[present] - 1)
        lo = np.floor(rank).astype(np.int64)
        hi = np.ceil(rank).astype(np.int64)
        frac = rank - lo
        base = starts[present]
        out[present, col] = (v[base + lo] * (1.0 - frac) + v[base + hi] * frac)
    return out


# ---------------------------------------------------------------------------
# channel inventory

_SCALAR_CHANNELS = (
    "smilingProbability", "leftEyeOpenProbability", "rightEyeOpenProbability",
    "headEulerAngle_X", "headEulerAngle_Y", "headEulerAngle_Z",
    "ear_left", "ear_right",
)


@dataclass(frozen=True)
class ChannelInventory:
    """Ordered per-frame channel names; the feature layout derives from it."""

    channels: tuple[str, ...]
    n_iva_pcs: int = 10

    @classmethod
    def default(cls, n_iva_pcs: int = 10, acceleration: bool = False) -> "ChannelInventory":
        channels = list(AU_NAMES) + list(_SCALAR_CHANNELS)
        channels += [f"iva_pc{i}" for i in range(1, n_iva_pcs + 1)]
        channels += [f"iva_vel{i}" for i in range(1, n_iva_pcs + 1)]
        if acceleration:
            channels += [f"iva_acc{i}" for i in range(1, n_iva_pcs + 1)]
        return cls(channels=tuple(channels), n_iva_pcs=n_iva_pcs)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_features(self) -> int:
        return self.n_channels * len(STAT_NAMES) * len(EPOCH_NAMES)

    def feature_names(self) -> list[str]:
        """Epoch-major layout: epochs, then channels, then statistics."""
        return [
            f"{ch}_{stat}_{epoch}"
            for epoch in EPOCH_NAMES
            for ch in self.channels
            for stat in STAT_NAMES
        ]


DEFAULT_INVENTORY = ChannelInventory.default()


@dataclass(slots=True)
class DayInstance:
    participant_id: str
    local_date: dt.date
    features: np.ndarray        # (n_features,) with NaN for missing
    frame_counts: np.ndarray    # (4,) frames observed per epoch


# ---------------------------------------------------------------------------
# building instances from records

def ear_batch(eye_points: np.ndarray) -> np.ndarray:
    """Vectorized eye-aspect ratio over (n, 16, 2) contours."""
    pts = np.asarray(eye_points, dtype=np.float64)
    width = np.linalg.norm(pts[:, 0] - pts[:, 8], axis=1)
    if np.any(width <= 0.0):
        raise DataError("degenerate eye contour: zero horizontal extent")
    v1 = np.linalg.norm(pts[:, 3] - pts[:, 13], axis=1)
    v2 = np.linalg.norm(pts[:, 5] - pts[:, 11], axis=1)
    return (v1 + v2) / (2.0 * width)


def base_channel_matrix(records: Sequence[FrameRecord],
                        landmark_map=DEFAULT_LANDMARK_MAP) -> np.ndarray:
    """Per-frame values for the 20 channels that need no PCA model.

    Column order: the 12 AUs, then smiling/eye probabilities, head Euler
    X (pitch), Y (yaw), Z (roll), then left/right EAR.
    """
    n = len(records)
    out = np.full((n, 20), np.nan)
    for i, rec in enumerate(records):
        if rec.au is not None:
            out[i, :12] = rec.au
        for j, key in enumerate(("smile_prob", "eye_open_left", "eye_open_right",
                                 "head_pitch", "head_yaw", "head_roll")):
            value = getattr(rec, key)
            if value is not None:
                out[i, 12 + j] = value
    has_lm = np.array([rec.landmarks is not None for rec in records])
    if has_lm.any():
        lms = np.stack([rec.landmarks for i, rec in enumerate(records) if has_lm[i]])
        out[has_lm, 18] = ear_batch(lms[:, landmark_map.indices("left_eye")])
        out[has_lm, 19] = ear_batch(lms[:, landmark_map.indices("right_eye")])
    return out


def iva_channel_matrix(records: Sequence[FrameRecord], pca: PcaModel,
                       pairs: np.ndarray, acceleration: bool = False,
                       landmark_map=DEFAULT_LANDMARK_MAP) -> np.ndarray:
    """Per-frame IVA scores and velocities under a fitted PCA model.

    Records are processed in (participant, session, time) order internally;
    rows of the result stay aligned with the input order.
    """
    n = len(records)
    k = pca.k
    order = sorted(range(n), key=lambda i: (records[i].participant_id,
                                            records[i].session_id,
                                            records[i].captured_at))
    scores = np.full((n, k), np.nan)
    has_lm = [i for i in order if records[i].landmarks is not None]
    if has_lm:
        lms = np.stack([records[i].landmarks for i in has_lm])
        angles = compute_iva_raw_batch(lms, pairs, landmark_map)
        scores[has_lm] = apply_pca(pca, angles)
    t = np.array([records[i].captured_at for i in order], dtype=np.int64)
    sess = np.array([(records[i].participant_id, records[i].session_id) for i in order])
    sess_keys = np.array([f"{p}\x00{s}" for p, s in sess])
    dyn = iva_dynamics(scores[order], t, sess_keys, acceleration=acceleration)
    cols = [scores]
    if acceleration:
        vel_o, acc_o = dyn
        vel = np.full((n, k), np.nan)
        acc = np.full((n, k), np.nan)
        vel[order] = vel_o
        acc[order] = acc_o
        cols += [vel, acc]
    else:
        vel = np.full((n, k), np.nan)
        vel[order] = dyn
        cols.append(vel)
    return np.concatenate(cols, axis=1)


def instances_from_channels(participant_ids: np.ndarray,
                            date_ordinals: np.ndarray,
                            epoch_idx: np.ndarray,
                            channels: np.ndarray,
                            inventory: ChannelInventory) -> list[DayInstance]:
    """Aggregate a per-frame channel matrix into DayInstances.

    Output is sorted by (participant, date). Frame order does not matter:
    aggregation is permutation-invariant.
    """
    if channels.shape[1] != inventory.n_channels:
        raise DataError(f"channel matrix has {channels.shape[1]} columns, "
                        f"inventory expects {inventory.n_channels}")
    day_keys = np.array([f"{p}\x00{d}" for p, d in zip(participant_ids, date_ordinals)])
    uniq, day_of_frame = np.unique(day_keys, return_inverse=True)
    n_days = len(uniq)
    group = day_of_frame * len(EPOCH_NAMES) + epoch_idx
    n_groups = n_days * len(EPOCH_NAMES)

    cube = np.full((n_days, len(EPOCH_NAMES), inventory.n_channels, len(STAT_NAMES)), np.nan)
    for c in range(inventory.n_channels):
        agg = aggregate_groups(channels[:, c], group, n_groups)
        cube[:, :, c, :] = agg.reshape(n_days, len(EPOCH_NAMES), len(STAT_NAMES))
    counts = np.bincount(group, minlength=n_groups).reshape(n_days, len(EPOCH_NAMES))

    first_frame = np.full(n_days, -1, dtype=np.int64)
    for i in range(len(day_of_frame) - 1, -1, -1):
        first_frame[day_of_frame[i]] = i
    out = []
    for d in range(n_days):
        i = first_frame[d]
        out.append(DayInstance(
            participant_id=str(participant_ids[i]),
            local_date=dt.date.fromordinal(int(date_ordinals[i])),
            features=cube[d].reshape(-1),
            frame_counts=counts[d],
        ))
    out.sort(key=lambda inst: (inst.participant_id, inst.local_date))
    return out


def build_day_instances(records: Sequence[FrameRecord], pca: PcaModel,
                        pairs: np.ndarray,
                        inventory: ChannelInventory = DEFAULT_INVENTORY,
                        acceleration: bool = False) -> list[DayInstance]:
    """DayInstances for a set of frame records under a fitted PCA model."""
    if not records:
        return []
    base = base_channel_matrix(records)
    iva = iva_channel_matrix(records, pca, pairs, acceleration=acceleration)
    channels = np.concatenate([base, iva], axis=1)
    pid = np.array([r.participant_id for r in records])
    dates = np.array([local_datetime(r.captured_at, r.tz_offset_minutes).date().toordinal()
                      for r in records], dtype=np.int64)
    epochs = np.array([EPOCH_NAMES.index(assign_epoch(r.captured_at, r.tz_offset_minutes))
                       for r in records], dtype=np.int64)
    return instances_from_channels(pid, dates, epochs, channels, inventory)


# ---------------------------------------------------------------------------
# CSV round trip

def export_instances_csv(instances: Sequence[DayInstance],
                         inventory: ChannelInventory, path,
                         meta: dict | None = None) -> None:
    """Write the day-feature matrix: id columns, named features, epoch frame counts.

    Missing values become empty cells. An optional provenance line is
    written as a leading comment.
    """
    names = inventory.feature_names()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if meta is not None:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        count_cols = [f"frames_{e}" for e in EPOCH_NAMES]
        fh.write(",".join(["participant_id", "local_date", *names, *count_cols]) + "\n")
        for inst in instances:
            if len(inst.features) != len(names):
                raise DataError("instance feature length does not match inventory")
            cells = [inst.participant_id, inst.local_date.isoformat()]
            cells += ["" if np.isnan(v) else repr(float(v)) for v in inst.features]
            cells += [str(int(c)) for c in inst.frame_counts]
            fh.write(",".join(cells) + "\n")


def import_instances_csv(path, inventory: ChannelInventory = DEFAULT_INVENTORY,
                         ) -> tuple[list[DayInstance], dict | None]:
    names = inventory.feature_names()
    count_cols = [f"frames_{e}" for e in EPOCH_NAMES]
    expected = ["participant_id", "local_date", *names, *count_cols]
    meta = None
    instances: list[DayInstance] = []
    with open(path, "r", encoding="utf-8") as fh:
        line = fh.readline()
        line_no = 1
        if line.startswith("#"):
            try:
                meta = json.loads(line[1:].strip())
            except json.JSONDecodeError:
                meta = None
            line = fh.readline()
            line_no += 1
        header = line.rstrip("\n").split(",")
        if header != expected:
            raise DataError("feature CSV header does not match the channel inventory")
        for line in fh:
            line_no += 1
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(expected):
                raise DataError(f"line {line_no}: expected {len(expected)} cells, got {len(parts)}")
            feat = np.array([np.nan if c == "" else float(c)
                             for c in parts[2:2 + len(names)]])
            counts = np.array([int(c) for c in parts[2 + len(names):]], dtype=np.int64)
            instances.append(DayInstance(
                participant_id=parts[0],
                local_date=dt.date.fromisoformat(parts[1]),
                features=feat,
                frame_counts=counts,
            ))
    return instances, meta
