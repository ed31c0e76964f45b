"""Geometric channels derived from the 133-point facial contour set.

Three families live here:

* eye-aspect ratio (EAR) over each 16-point eye contour,
* inter-vector angles (IVA): the angle subtended at the nose centroid by
  pairs of contour points, reduced to a few PCA scores per frame,
* first/second time derivatives of those scores within a capture session.

The default IVA pair list takes every pair of points whose macro regions
differ (eyes, eyebrows, mouth, jawline, cheeks), which over the default map
yields 6464 pairs. Nose points are excluded from pairing because they define
the vertex. The list is configurable for smaller probes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data_model import DEFAULT_LANDMARK_MAP, LandmarkMap
from .errors import DataError

PCA_FORMAT_VERSION = "1"

# Macro regions used for the cross-region pairing policy. Nose regions are
# deliberately absent: their centroid is the angle vertex.
MACRO_REGIONS = (
    ("jawline", ("face_oval",)),
    ("left_eyebrow", ("left_eyebrow_top", "left_eyebrow_bottom")),
    ("right_eyebrow", ("right_eyebrow_top", "right_eyebrow_bottom")),
    ("left_eye", ("left_eye",)),
    ("right_eye", ("right_eye",)),
    ("mouth", ("upper_lip_top", "upper_lip_bottom",
               "lower_lip_top", "lower_lip_bottom")),
    ("cheeks", ("left_cheek", "right_cheek")),
)


def compute_ear(points: np.ndarray) -> float:
    """Eye-aspect ratio of one 16-point eye contour.

    Points are ordered around the contour starting at the inner corner with
    the upper arc first, so p0-p8 is the horizontal extent and (p3, p13),
    (p5, p11) are two vertical extents:

        EAR = (|p3 - p13| + |p5 - p11|) / (2 |p0 - p8|)
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (16, 2):
        raise DataError(f"eye contour must be 16 (x, y) points, got shape {pts.shape}")
    width = np.linalg.norm(pts[0] - pts[8])
    if width <= 0.0:
        raise DataError("degenerate eye contour: zero horizontal extent")
    v1 = np.linalg.norm(pts[3] - pts[13])
    v2 = np.linalg.norm(pts[5] - pts[11])
    return float((v1 + v2) / (2.0 * width))


def build_pair_list(landmark_map: LandmarkMap = DEFAULT_LANDMARK_MAP,
                    policy: str = "cross_region",
                    explicit_pairs: list[tuple[int, int]] | None = None,
                    ) -> np.ndarray:
    """Index pairs whose subtended angle becomes an IVA observation.

    ``cross_region`` (default): all (i, j), i < j, with i and j in different
    macro regions, ordered lexicographically. ``explicit``: the caller's own
    list, validated against the map.
    """
    if policy == "explicit":
        if not explicit_pairs:
            raise DataError("explicit pair policy requires a non-empty pair list")
        pairs = np.asarray(explicit_pairs, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise DataError("pair list must be (n, 2) index pairs")
        if pairs.min() < 0 or pairs.max() >= landmark_map.n_points:
            raise DataError("pair index outside landmark map")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise DataError("pair with identical endpoints")
        return pairs
    if policy != "cross_region":
        raise DataError(f"unknown pair policy {policy!r}")

    region_of = np.full(landmark_map.n_points, -1, dtype=np.int64)
    for macro_idx, (_, parts) in enumerate(MACRO_REGIONS):
        idx = landmark_map.indices(*parts)
        region_of[idx] = macro_idx
    member = np.flatnonzero(region_of >= 0)
    ii, jj = np.meshgrid(member, member, indexing="ij")
    keep = (ii < jj) & (region_of[ii] != region_of[jj])
    return np.stack([ii[keep], jj[keep]], axis=1)


def nose_centroid(landmarks: np.ndarray,
                  landmark_map: LandmarkMap = DEFAULT_LANDMARK_MAP) -> np.ndarray:
    return np.asarray(landmarks, dtype=np.float64)[landmark_map.indices("nose_bottom")].mean(axis=0)


def compute_iva_raw(landmarks: np.ndarray, pairs: np.ndarray,
                    landmark_map: LandmarkMap = DEFAULT_LANDMARK_MAP) -> np.ndarray:
    """Angles (radians) at the nose centroid for each landmark pair of one frame."""
    return compute_iva_raw_batch(np.asarray(landmarks, dtype=np.float64)[None], pairs,
                                 landmark_map)[0]


def compute_iva_raw_batch(landmarks: np.ndarray, pairs: np.ndarray,
                          landmark_map: LandmarkMap = DEFAULT_LANDMARK_MAP,
                          out: np.ndarray | None = None) -> np.ndarray:
    """Vectorized IVA over a (n, 133, 2) landmark stack. Returns (n, n_pairs)."""
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.ndim != 3 or lm.shape[1] != landmark_map.n_points or lm.shape[2] != 2:
        raise DataError(f"expected (n, {landmark_map.n_points}, 2) landmarks, got {lm.shape}")
    centroid = lm[:, landmark_map.indices("nose_bottom"), :].mean(axis=1)
    vec = lm - centroid[:, None, :]
    norm = np.linalg.norm(vec, axis=2)
    used = np.unique(pairs)
    if np.any(norm[:, used] <= 0.0):
        raise DataError("landmark coincides with nose centroid; angle undefined")
    unit = vec / np.maximum(norm, 1e-300)[:, :, None]
    a = unit[:, pairs[:, 0], :]
    b = unit[:, pairs[:, 1], :]
    cosang = np.clip(np.einsum("npk,npk->np", a, b), -1.0, 1.0)
    if out is not None:
        np.arccos(cosang, out=out)
        return out
    return np.arccos(cosang)


# ---------------------------------------------------------------------------
# PCA

@dataclass(slots=True)
class PcaModel:
    """Linear projection fit on raw angle vectors.

    components has shape (k, d) with orthonormal rows; explained_variance is
    descending and non-negative. Sign convention: each component's
    largest-magnitude entry is positive, so refits are reproducible.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]


def fit_pca(X: np.ndarray, k: int) -> PcaModel:
    """Fit a k-component PCA on the complete rows of X.

    Equivalent to an eigendecomposition of the mean-centered covariance,
    computed through a thin SVD so wide matrices (d in the thousands) stay
    tractable. Variances use the n-1 normalization.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("fit_pca expects a 2-d matrix")
    complete = ~np.isnan(X).any(axis=1)
    Xc = X[complete]
    n, d = Xc.shape
    if k < 1 or k > d:
        raise DataError(f"component count k={k} outside 1..{d}")
    if n < k + 1:
        raise DataError(
            f"need at least k+1={k + 1} complete rows to fit {k} components, "
            f"got {n}; reduce k or supply more data")
    mean = Xc.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc - mean, full_matrices=False)
    components = vt[:k].copy()
    variances = (s[:k] ** 2) / (n - 1)
    # Orient each component so its largest-magnitude entry is positive.
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components,
                    explained_variance=np.maximum(variances, 0.0))


def apply_pca(model: PcaModel, X: np.ndarray) -> np.ndarray:
    """Project rows onto the components; missing entries impute to the mean."""
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None]
    if X.shape[1] != model.d:
        raise DataError(f"expected {model.d} columns, got {X.shape[1]}")
    centered = X - model.mean
    centered = np.where(np.isnan(centered), 0.0, centered)
    scores = centered @ model.components.T
    return scores[0] if squeeze else scores


def save_pca(model: PcaModel, path) -> None:
    obj = {
        "format_version": PCA_FORMAT_VERSION,
        "k": model.k,
        "d": model.d,
        "mean": model.mean.tolist(),
        "components": model.components.tolist(),
        "explained_variance": model.explained_variance.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_pca(path) -> PcaModel:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format_version") != PCA_FORMAT_VERSION:
        raise DataError(f"unsupported PCA model version {obj.get('format_version')!r}")
    model = PcaModel(
        mean=np.asarray(obj["mean"], dtype=np.float64),
        components=np.asarray(obj["components"], dtype=np.float64),
        explained_variance=np.asarray(obj["explained_variance"], dtype=np.float64),
    )
    if model.components.shape != (obj["k"], obj["d"]):
        raise DataError("PCA model shape mismatch")
    return model


# ---------------------------------------------------------------------------
# dynamics

def iva_dynamics(scores: np.ndarray, captured_at_ms: np.ndarray,
                 session_ids: np.ndarray, acceleration: bool = False,
                 ) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Per-frame score velocities (units per second) within each session.

    Rows must be ordered session-contiguously with strictly increasing
    timestamps inside a session; sessions are never chained, so each
    session's first frame has no velocity (NaN). With ``acceleration`` the
    second derivative is returned as well (NaN for the first two frames).
    """
    scores = np.asarray(scores, dtype=np.float64)
    t = np.asarray(captured_at_ms, dtype=np.int64)
    sess = np.asarray(session_ids)
    if scores.ndim != 2 or len(t) != len(scores) or len(sess) != len(scores):
        raise DataError("scores, timestamps and session ids must align")
    n = len(scores)
    vel = np.full_like(scores, np.nan)
    if n == 0:
        return (vel, vel.copy()) if acceleration else vel
    same = sess[1:] == sess[:-1]
    dt_s = (t[1:] - t[:-1]) / 1000.0
    if np.any(same & (dt_s <= 0.0)):
        raise DataError("non-increasing timestamps within a session")
    with np.errstate(invalid="ignore", divide="ignore"):
        dv = (scores[1:] - scores[:-1]) / dt_s[:, None]
    vel[1:][same] = dv[same]
    if not acceleration:
        return vel
    acc = np.full_like(scores, np.nan)
    with np.errstate(invalid="ignore"):
        da = (vel[1:] - vel[:-1]) / dt_s[:, None]
    acc[1:][same] = da[same]
    return vel, acc
