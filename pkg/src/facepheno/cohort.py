"""Columnar cohort assembly for evaluation at scale.

build_day_instances is fine for a handful of participants, but leave-one-out
protocols refit the angle PCA once per fold, and recomputing raw angles from
FrameRecord objects every time would dominate the run. This module converts
records into flat arrays once, caches the raw angle matrix (spilling to a
temporary file when it would not fit comfortably in memory), and re-aggregates
only the PCA-dependent channels per fold. The base channels are aggregated a
single time and shared.

Everything here is a faster path to the same numbers as featurize; tests pin
the equivalence.
"""

from __future__ import annotations

import datetime as dt
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .data_model import FrameRecord, PhqAdministration
from .errors import DataError
from .featurize import (
    EPOCH_NAMES, STAT_NAMES, ChannelInventory, DayInstance,
    aggregate_groups, base_channel_matrix,
)
from .geometry import (
    DEFAULT_LANDMARK_MAP, PcaModel, apply_pca, build_pair_list,
    compute_iva_raw_batch, fit_pca, iva_dynamics,
)
from .labeling import label_windows

_MS_PER_DAY = 86_400_000
_MS_PER_EPOCH = 21_600_000
_UNIX_ORDINAL = dt.date(1970, 1, 1).toordinal()

# Fixed chunk sizes keep floating-point results independent of memory pressure
# and worker count.
_ANGLE_CHUNK = 2048
_PCA_FIT_ROWS = 256


class FrameTable:
    """Frame records as parallel arrays, sorted by (participant, session, time).

    The sort makes sessions contiguous, which is what the velocity pass
    needs, and makes every derived quantity independent of input order.
    """

    __slots__ = ("pids", "pid_code", "session_code", "captured_at",
                 "epoch_idx", "date_ord", "base", "lm_row", "lm_stack")

    def __init__(self, records: list[FrameRecord],
                 landmark_map=DEFAULT_LANDMARK_MAP):
        n = len(records)
        if n == 0:
            raise DataError("no frame records")
        pid_arr = np.array([r.participant_id for r in records])
        sess_arr = np.array([r.session_id for r in records])
        t_arr = np.array([r.captured_at for r in records], dtype=np.int64)
        order = np.lexsort((t_arr, sess_arr, pid_arr))
        recs = [records[i] for i in order]

        pid_sorted = pid_arr[order]
        sess_sorted = sess_arr[order]
        uniq_pids, self.pid_code = np.unique(pid_sorted, return_inverse=True)
        self.pids = [str(p) for p in uniq_pids]
        self.captured_at = t_arr[order]
        new_sess = np.ones(n, dtype=bool)
        new_sess[1:] = (pid_sorted[1:] != pid_sorted[:-1]) | (sess_sorted[1:] != sess_sorted[:-1])
        self.session_code = np.cumsum(new_sess) - 1

        tz = np.array([r.tz_offset_minutes for r in recs], dtype=np.int64)
        local_ms = self.captured_at + tz * 60_000
        self.date_ord = local_ms // _MS_PER_DAY + _UNIX_ORDINAL
        self.epoch_idx = (local_ms % _MS_PER_DAY) // _MS_PER_EPOCH

        self.base = base_channel_matrix(recs, landmark_map)

        self.lm_row = np.full(n, -1, dtype=np.int64)
        n_lm = sum(1 for r in recs if r.landmarks is not None)
        self.lm_stack = np.empty((n_lm, landmark_map.n_points, 2), dtype=np.float32)
        j = 0
        for i, rec in enumerate(recs):
            if rec.landmarks is not None:
                self.lm_stack[j] = rec.landmarks
                self.lm_row[i] = j
                j += 1

    @property
    def n_frames(self) -> int:
        return len(self.captured_at)


class AngleStore:
    """Raw IVA angle matrix for every frame that has landmarks.

    Stored as float32: angle noise floor is far above float32 resolution and
    the full matrix for a month-long cohort runs to gigabytes. Larger-than-RAM
    stores back onto an unlinked temporary file.
    """

    def __init__(self, lm_stack: np.ndarray, pairs: np.ndarray,
                 landmark_map=DEFAULT_LANDMARK_MAP,
                 ram_limit_bytes: int = 512 << 20, workdir=None):
        n = len(lm_stack)
        self.n_pairs = len(pairs)
        nbytes = n * self.n_pairs * 4
        if nbytes <= ram_limit_bytes:
            self._file = None
            self.angles = np.empty((n, self.n_pairs), dtype=np.float32)
        else:
            self._file = tempfile.NamedTemporaryFile(
                prefix="facepheno-angles-", suffix=".f32", dir=workdir)
            self.angles = np.memmap(self._file, dtype=np.float32,
                                    mode="w+", shape=(n, self.n_pairs))
        for lo in range(0, n, _ANGLE_CHUNK):
            hi = min(lo + _ANGLE_CHUNK, n)
            self.angles[lo:hi] = compute_iva_raw_batch(
                lm_stack[lo:hi], pairs, landmark_map)

    def __len__(self) -> int:
        return len(self.angles)

    def rows(self, idx: np.ndarray) -> np.ndarray:
        return np.asarray(self.angles[idx], dtype=np.float64)

    def fit_pca_subsample(self, eligible_rows: np.ndarray, k: int,
                          max_rows: int = _PCA_FIT_ROWS) -> PcaModel:
        """Fit PCA on an even deterministic subsample of the eligible rows."""
        rows = np.asarray(eligible_rows, dtype=np.int64)
        if len(rows) < k + 1:
            raise DataError(
                f"need at least k+1={k + 1} frames with landmarks to fit the "
                f"angle projection, got {len(rows)}")
        stride = max(1, len(rows) // max_rows)
        return fit_pca(self.rows(rows[::stride]), k)

    def project(self, model: PcaModel) -> np.ndarray:
        """Scores (n_rows, k) under the model, chunked float64 math."""
        n = len(self.angles)
        out = np.empty((n, model.k), dtype=np.float64)
        for lo in range(0, n, _ANGLE_CHUNK):
            hi = min(lo + _ANGLE_CHUNK, n)
            out[lo:hi] = apply_pca(model, self.rows(np.arange(lo, hi)))
        return out


@dataclass
class CohortDataset:
    """Shared featurization state plus day-level labels.

    base_agg holds the aggregated statistics for the 20 channels that do not
    depend on a PCA model; per-fold featurization only fills in the IVA half.
    """

    table: FrameTable
    inventory: ChannelInventory
    pairs: np.ndarray
    angles: AngleStore
    acceleration: bool
    # day-level arrays, sorted by (participant, local date)
    day_pid_code: np.ndarray
    day_date_ord: np.ndarray
    day_of_frame: np.ndarray     # (n_frames,) index into days
    group_ids: np.ndarray        # (n_frames,) day * 4 + epoch
    counts: np.ndarray           # (n_days, 4)
    base_agg: np.ndarray         # (n_days, 4, 20, 8)
    y_class: np.ndarray          # (n_days,) {0,1}, -1 where unlabeled
    y_target: np.ndarray         # (n_days,) float, NaN where unlabeled
    window_start_ord: np.ndarray  # (n_days,) int, -1 where unlabeled
    feature_names_cache: list[str] = field(default_factory=list, repr=False)

    @property
    def n_days(self) -> int:
        return len(self.day_pid_code)

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.y_class >= 0

    def day_pid(self, d: int) -> str:
        return self.table.pids[int(self.day_pid_code[d])]

    def day_date(self, d: int) -> dt.date:
        return dt.date.fromordinal(int(self.day_date_ord[d]))

    def feature_names(self) -> list[str]:
        if not self.feature_names_cache:
            self.feature_names_cache = self.inventory.feature_names()
        return self.feature_names_cache


def build_dataset(records: list[FrameRecord],
                  administrations: list[PhqAdministration],
                  n_iva_pcs: int = 10, acceleration: bool = False,
                  pairs: np.ndarray | None = None,
                  target_policy: str = "end",
                  ram_limit_bytes: int = 512 << 20,
                  workdir=None) -> CohortDataset:
    table = FrameTable(records)
    if pairs is None:
        pairs = build_pair_list()
    inventory = ChannelInventory.default(n_iva_pcs=n_iva_pcs,
                                         acceleration=acceleration)
    angles = AngleStore(table.lm_stack, pairs,
                        ram_limit_bytes=ram_limit_bytes, workdir=workdir)

    day_key = table.pid_code.astype(np.int64) * 4_000_000 + table.date_ord
    uniq_keys, day_of_frame = np.unique(day_key, return_inverse=True)
    n_days = len(uniq_keys)
    day_pid_code = uniq_keys // 4_000_000
    day_date_ord = uniq_keys % 4_000_000
    group_ids = day_of_frame * len(EPOCH_NAMES) + table.epoch_idx
    n_groups = n_days * len(EPOCH_NAMES)
    counts = np.bincount(group_ids, minlength=n_groups).reshape(n_days, len(EPOCH_NAMES))

    n_base = table.base.shape[1]
    base_agg = np.full((n_days, len(EPOCH_NAMES), n_base, len(STAT_NAMES)), np.nan)
    for c in range(n_base):
        agg = aggregate_groups(table.base[:, c], group_ids, n_groups)
        base_agg[:, :, c, :] = agg.reshape(n_days, len(EPOCH_NAMES), len(STAT_NAMES))

    y_class = np.full(n_days, -1, dtype=np.int64)
    y_target = np.full(n_days, np.nan)
    window_start_ord = np.full(n_days, -1, dtype=np.int64)
    by_pid: dict[str, list] = {}
    for w in label_windows(administrations, target_policy=target_policy):
        by_pid.setdefault(w.participant_id, []).append(w)
    for d in range(n_days):
        pid = table.pids[int(day_pid_code[d])]
        date = dt.date.fromordinal(int(day_date_ord[d]))
        for w in by_pid.get(pid, ()):
            if w.window_start <= date <= w.window_end:
                y_class[d] = int(w.depressive)
                y_target[d] = float(w.target)
                window_start_ord[d] = w.window_start.toordinal()
                break

    return CohortDataset(
        table=table, inventory=inventory, pairs=pairs, angles=angles,
        acceleration=acceleration,
        day_pid_code=day_pid_code, day_date_ord=day_date_ord,
        day_of_frame=day_of_frame, group_ids=group_ids, counts=counts,
        base_agg=base_agg, y_class=y_class, y_target=y_target,
        window_start_ord=window_start_ord,
    )


def iva_channel_agg(dataset: CohortDataset, model: PcaModel) -> np.ndarray:
    """Aggregated statistics for the PCA-dependent channels under one model.

    Returns (n_days, 4, n_iva_channels, 8).
    """
    table = dataset.table
    n = table.n_frames
    k = model.k
    has_lm = table.lm_row >= 0
    scores = np.full((n, k), np.nan)
    scores[has_lm] = dataset.angles.project(model)[table.lm_row[has_lm]]
    dyn = iva_dynamics(scores, table.captured_at, table.session_code,
                       acceleration=dataset.acceleration)
    if dataset.acceleration:
        channels = np.concatenate([scores, dyn[0], dyn[1]], axis=1)
    else:
        channels = np.concatenate([scores, dyn], axis=1)
    n_ch = channels.shape[1]
    n_groups = dataset.n_days * len(EPOCH_NAMES)
    agg = np.full((dataset.n_days, len(EPOCH_NAMES), n_ch, len(STAT_NAMES)), np.nan)
    for c in range(n_ch):
        a = aggregate_groups(channels[:, c], dataset.group_ids, n_groups)
        agg[:, :, c, :] = a.reshape(dataset.n_days, len(EPOCH_NAMES), len(STAT_NAMES))
    return agg


def assemble_features(dataset: CohortDataset, iva_agg: np.ndarray) -> np.ndarray:
    """Day feature matrix (n_days, n_features) from shared base + fold IVA."""
    cube = np.concatenate([dataset.base_agg, iva_agg], axis=2)
    expected = dataset.inventory.n_channels
    if cube.shape[2] != expected:
        raise DataError(f"assembled {cube.shape[2]} channels, "
                        f"inventory expects {expected}")
    return cube.reshape(dataset.n_days, -1)


def featurize_with_model(dataset: CohortDataset, model: PcaModel) -> np.ndarray:
    return assemble_features(dataset, iva_channel_agg(dataset, model))


def fit_reference_pca(dataset: CohortDataset,
                      restrict_rows: np.ndarray | None = None) -> PcaModel:
    """PCA over (a deterministic subsample of) the frames with landmarks.

    restrict_rows, when given, is a boolean mask over frames; only frames
    under the mask contribute to the fit.
    """
    table = dataset.table
    eligible = table.lm_row >= 0
    if restrict_rows is not None:
        eligible = eligible & restrict_rows
    return dataset.angles.fit_pca_subsample(
        table.lm_row[eligible], dataset.inventory.n_iva_pcs)


def to_instances(dataset: CohortDataset, X: np.ndarray) -> list[DayInstance]:
    """DayInstance view of an assembled feature matrix."""
    return [
        DayInstance(participant_id=dataset.day_pid(d),
                    local_date=dataset.day_date(d),
                    features=X[d],
                    frame_counts=dataset.counts[d])
        for d in range(dataset.n_days)
    ]


def first_k_days_mask(dataset: CohortDataset, k: int) -> np.ndarray:
    """Day mask keeping each participant's first k observed days."""
    if k < 1:
        raise DataError(f"day budget must be positive, got {k}")
    mask = np.zeros(dataset.n_days, dtype=bool)
    for code in np.unique(dataset.day_pid_code):
        # day arrays are sorted by (participant, date), so the first k
        # positions of each participant block are their earliest days
        idx = np.flatnonzero(dataset.day_pid_code == code)
        mask[idx[:k]] = True
    return mask
