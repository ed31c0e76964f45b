"""Correlation screening of day features against the episode label.

Pearson r is computed pairwise-complete per feature. Two-sided p-values come
from the exact Student-t distribution: with nu = n - 2 degrees of freedom,

    t = r * sqrt(nu / (1 - r^2)),   p = I_{nu/(nu+t^2)}(nu/2, 1/2)

where I is the regularized incomplete beta function, evaluated with the
continued-fraction expansion (Lentz's method), good to ~1e-14. A feature
passes the screen when p < alpha and |r| >= r_min; survivors are ranked by
|r| descending with ties broken by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError

_BETA_EPS = 1e-15
_BETA_MAX_ITER = 400


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < 1e-300:
        d = 1e-300
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise DataError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise DataError("incomplete beta requires positive shape parameters")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, dof: float) -> float:
    """CDF of Student's t distribution with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise DataError(f"degrees of freedom must be positive, got {dof}")
    t = float(t)
    if t != t:
        raise DataError("t statistic is NaN")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    x = dof / (dof + t * t)
    tail = 0.5 * betainc_reg(dof / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def pearson(x: Sequence[float] | np.ndarray,
            y: Sequence[float] | np.ndarray) -> tuple[float, float]:
    """Pearson r and two-sided p over pairwise-complete observations.

    Returns (nan, nan) when fewer than 3 complete pairs remain or either
    side has zero variance.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError("pearson inputs must have equal length")
    keep = ~(np.isnan(x) | np.isnan(y))
    x, y = x[keep], y[keep]
    n = x.size
    if n < 3:
        return (math.nan, math.nan)
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx <= 0.0 or syy <= 0.0:
        return (math.nan, math.nan)
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    p = _pearson_p(r, n)
    return (r, p)


def _pearson_p(r: float, n: int) -> float:
    nu = n - 2
    if 1.0 - r * r <= 0.0:
        return 0.0
    t2 = r * r * nu / (1.0 - r * r)
    # Two-sided p = P(|T| >= t) = I_{nu/(nu+t^2)}(nu/2, 1/2).
    return betainc_reg(nu / 2.0, 0.5, nu / (nu + t2))


# ---------------------------------------------------------------------------
# feature screen

@dataclass(frozen=True, slots=True)
class ScreenRow:
    feature: str
    r: float
    p: float
    n: int
    depressive_mean: float
    depressive_sd: float
    non_depressive_mean: float
    non_depressive_sd: float


@dataclass(slots=True)
class ScreenResult:
    rows: list[ScreenRow]          # passing features, |r| descending
    significant_total: int         # features with p < alpha before the r cut
    n_features: int
    alpha: float
    r_min: float

    def feature_names(self) -> list[str]:
        return [row.feature for row in self.rows]


def screen_features(X: np.ndarray, y: np.ndarray,
                    feature_names: Sequence[str],
                    alpha: float = 0.05, r_min: float = 0.20) -> ScreenResult:
    """Correlate every feature with the binary episode label.

    X may contain NaN (missing); each feature uses its own complete rows.
    Group means/SDs describe the feature within depressive and
    non-depressive instances (population SD).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError("screen_features expects X (n, d) aligned with y (n,)")
    if X.shape[1] != len(feature_names):
        raise DataError("feature_names length does not match X columns")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("labels must be binary 0/1")

    n, d = X.shape
    mask = np.isfinite(X)
    nj = mask.sum(axis=0)
    Xz = np.where(mask, X, 0.0)

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_x = Xz.sum(axis=0) / nj
        sum_y = mask.T @ y
        mean_y = sum_y / nj
        Xc = np.where(mask, X - mean_x, 0.0)
        Yc = (y[:, None] - mean_y) * mask
        sxy = (Xc * Yc).sum(axis=0)
        sxx = (Xc * Xc).sum(axis=0)
        syy = (Yc * Yc).sum(axis=0)
        r = sxy / np.sqrt(sxx * syy)
    defined = (nj >= 3) & (sxx > 0.0) & (syy > 0.0)
    r = np.clip(np.where(defined, r, np.nan), -1.0, 1.0)

    p = np.full(d, np.nan)
    for j in np.flatnonzero(defined):
        p[j] = _pearson_p(float(r[j]), int(nj[j]))

    significant_total = int(np.sum(p[defined] < alpha))

    dep = y == 1.0
    rows: list[ScreenRow] = []
    for j in np.flatnonzero(defined & (p < alpha) & (np.abs(r) >= r_min)):
        col = X[:, j]
        dv = col[dep & mask[:, j]]
        nv = col[~dep & mask[:, j]]
        rows.append(ScreenRow(
            feature=feature_names[j],
            r=float(r[j]), p=float(p[j]), n=int(nj[j]),
            depressive_mean=float(dv.mean()) if dv.size else math.nan,
            depressive_sd=float(dv.std()) if dv.size else math.nan,
            non_depressive_mean=float(nv.mean()) if nv.size else math.nan,
            non_depressive_sd=float(nv.std()) if nv.size else math.nan,
        ))
    rows.sort(key=lambda row: (-abs(row.r), row.feature))
    return ScreenResult(rows=rows, significant_total=significant_total,
                        n_features=d, alpha=alpha, r_min=r_min)


def write_screen_csv(result: ScreenResult, path, meta: dict | None = None) -> None:
    """Correlation table in the usual report layout, one row per survivor."""
    import json

    with open(path, "w", encoding="utf-8", newline="") as fh:
        if meta is not None:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write("# significant_total=%d of %d at alpha=%s\n"
                 % (result.significant_total, result.n_features, result.alpha))
        fh.write("feature,p_value,r_value,depressive_mean_sd,non_depressive_mean_sd\n")
        for row in result.rows:
            fh.write(",".join([
                row.feature, repr(row.p), repr(row.r),
                f"{row.depressive_mean:.2f} ({row.depressive_sd:.2f})",
                f"{row.non_depressive_mean:.2f} ({row.non_depressive_sd:.2f})",
            ]) + "\n")
