"""Models and training-side transforms.

Everything here consumes training rows only; the evaluation protocols are
responsible for never letting held-out rows in. The boosted model is a
classic gradient machine: stage t fits a squared-error tree to the negative
gradients with Newton leaf values (sum g / sum h), grown leaf-wise up to
max_leaves. Logistic task predicts probabilities through a sigmoid;
l2 task predicts the raw accumulated score.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import _trees
from .errors import DataError
from .metrics import auroc, mean_absolute_error

MODEL_FORMAT_VERSION = "1"

TASKS = ("classification", "regression")

STD_FLOOR = 1e-9
_LOGIT_CLIP = 20.0


@dataclass(slots=True)
class Preprocessor:
    """Mean imputation followed by z-scoring, fit on training rows.

    The imputation value and the centering value coincide (the training
    column mean over observed entries; 0.0 for all-missing columns). The
    scale is the population std of the imputed training column, floored at
    1e-9 so constant columns map to zero.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Preprocessor":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataError("preprocessor needs a non-empty (n, d) matrix")
        n = X.shape[0]
        observed = np.isfinite(X)
        counts = observed.sum(axis=0)
        sums = np.where(observed, X, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore"):
            mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        centered_sq = np.where(observed, (X - mean) ** 2, 0.0)
        std = np.sqrt(centered_sq.sum(axis=0) / n)
        return cls(mean=mean, std=np.maximum(std, STD_FLOOR))

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.mean.shape[0]:
            raise DataError(f"expected {self.mean.shape[0]} columns, got {X.shape[1]}")
        filled = np.where(np.isfinite(X), X, self.mean)
        return (filled - self.mean) / self.std


def smote(X: np.ndarray, y: np.ndarray, k: int = 5,
          rng: np.random.Generator | int | None = 0) -> tuple[np.ndarray, np.ndarray]:
    """Oversample the minority class to parity with synthetic interpolants.

    Each synthetic row is m + lambda * (n - m) for a random minority row m,
    one of its k nearest minority neighbors n (k clipped to minority-1) and
    lambda uniform in [0, 1). Expects complete (already imputed) data.
    Balanced input is returned unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(y) != len(X):
        raise DataError("smote expects X (n, d) aligned with y (n,)")
    if not np.all(np.isfinite(X)):
        raise DataError("smote requires complete data; impute first")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) != 2:
        raise DataError(f"smote expects exactly 2 classes, got {len(classes)}")
    if counts[0] == counts[1]:
        return X.copy(), y.copy()
    minority = classes[np.argmin(counts)]
    n_min = int(counts.min())
    n_need = int(counts.max() - counts.min())
    if n_min < 2:
        raise DataError("minority class needs at least 2 rows for smote")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    k_eff = min(k, n_min - 1)
    if k_eff < 1:
        raise DataError("smote neighbor count must be positive")

    Xm = X[y == minority]
    d2 = ((Xm[:, None, :] - Xm[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]

    base = rng.integers(0, n_min, size=n_need)
    pick = rng.integers(0, k_eff, size=n_need)
    lam = rng.random(n_need)
    anchor = Xm[base]
    other = Xm[neighbors[base, pick]]
    synth = anchor + lam[:, None] * (other - anchor)
    X_out = np.concatenate([X, synth], axis=0)
    y_out = np.concatenate([y, np.full(n_need, minority, dtype=y.dtype)])
    return X_out, y_out


def gini_select(X: np.ndarray, y: np.ndarray,
                min_split: int = 2) -> tuple[np.ndarray, np.ndarray, float]:
    """Features whose CART Gini importance exceeds the mean importance.

    A single best-split classification tree is grown until its nodes are
    pure (or too small to split); importances are node-weighted impurity
    decreases normalized to sum 1. The keep threshold is exactly
    1 / n_features, the mean of a normalized vector.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(y) != len(X):
        raise DataError("gini_select expects X (n, d) aligned with y (n,)")
    if not np.all(np.isfinite(X)):
        raise DataError("gini_select requires complete data; impute first")
    y01 = _as_binary(y)
    imp = _trees.gini_importances(X, y01, min_split)
    total = imp.sum()
    if total <= 0.0:
        raise DataError("selection tree made no splits; labels may be single-class")
    imp = imp / total
    threshold = 1.0 / X.shape[1]
    selected = np.flatnonzero(imp > threshold)
    return selected, imp, threshold


def _as_binary(y) -> np.ndarray:
    arr = np.asarray(y)
    if arr.dtype == bool:
        return arr.astype(np.int64)
    out = arr.astype(np.float64)
    if not np.all(np.isin(out, (0.0, 1.0))):
        raise DataError("labels must be binary 0/1")
    return out.astype(np.int64)


# ---------------------------------------------------------------------------
# gradient boosted trees

@dataclass(frozen=True, slots=True)
class Hyperparameters:
    learning_rate: float = 0.1
    n_trees: int = 100
    max_leaves: int = 31
    min_samples_leaf: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.n_trees < 1 or self.max_leaves < 2 or self.min_samples_leaf < 1:
            raise DataError("tree counts and sizes must be positive (max_leaves >= 2)")


def default_grid() -> list[Hyperparameters]:
    return [
        Hyperparameters(lr, t, leaves, m)
        for lr in (0.05, 0.1)
        for t in (100, 200)
        for leaves in (15, 31)
        for m in (5, 20)
    ]


@dataclass(slots=True)
class GbdtModel:
    task: str
    hp: Hyperparameters
    init_score: float
    trees: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    n_features: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict_gbdt(self, X)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_gbdt(X: np.ndarray, y: np.ndarray, task: str,
             hp: Hyperparameters, seed: int = 0) -> GbdtModel:
    """Deterministic exact-greedy gradient boosting.

    The fit itself draws no random numbers (no subsampling); ``seed`` is
    accepted for interface symmetry with the stochastic stages.
    """
    del seed
    X = np.ascontiguousarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError("gbdt requires complete data; impute first")
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    n = X.shape[0]
    if n < 2:
        raise DataError("need at least 2 rows to fit")

    if task == "classification":
        y01 = _as_binary(y).astype(np.float64)
        p0 = min(max(float(y01.mean()), 1e-12), 1.0 - 1e-12)
        init = math.log(p0 / (1.0 - p0))
        value_clip = _LOGIT_CLIP
    else:
        y01 = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y01)):
            raise DataError("regression targets must be finite")
        init = float(y01.mean())
        value_clip = np.inf

    F = np.full(n, init)
    trees = []
    out = np.empty(n)
    Xt, ord0 = _trees.presort_columns(X)
    for _ in range(hp.n_trees):
        if task == "classification":
            p = _sigmoid(F)
            g = y01 - p
            h = p * (1.0 - p)
        else:
            g = y01 - F
            h = np.ones(n)
        nodes = _trees.build_gbdt_tree(Xt, ord0, g, h, hp.max_leaves,
                                       hp.min_samples_leaf, value_clip)
        _trees.predict_tree(*nodes, X, out)
        F += hp.learning_rate * out
        trees.append(nodes)
    return GbdtModel(task=task, hp=hp, init_score=init, trees=trees,
                     n_features=X.shape[1])


def predict_gbdt(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """Probabilities for classification, raw scores for regression."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DataError(f"expected (n, {model.n_features}) feature matrix")
    F = np.full(X.shape[0], model.init_score)
    out = np.empty(X.shape[0])
    for nodes in model.trees:
        _trees.predict_tree(*nodes, X, out)
        F += model.hp.learning_rate * out
    if model.task == "classification":
        return _sigmoid(F)
    return F


def save_gbdt(model: GbdtModel, path, extra: dict | None = None) -> None:
    obj = {
        "format_version": MODEL_FORMAT_VERSION,
        "task": model.task,
        "hp": asdict(model.hp),
        "init_score": model.init_score,
        "n_features": model.n_features,
        "trees": [
            {
                "feature": f.tolist(), "threshold": t.tolist(),
                "left": l.tolist(), "right": r.tolist(), "value": v.tolist(),
            }
            for f, t, l, r, v in model.trees
        ],
    }
    if extra:
        obj.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_gbdt(path) -> GbdtModel:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model version {obj.get('format_version')!r}")
    trees = [
        (np.asarray(t["feature"], np.int64), np.asarray(t["threshold"]),
         np.asarray(t["left"], np.int64), np.asarray(t["right"], np.int64),
         np.asarray(t["value"]))
        for t in obj["trees"]
    ]
    return GbdtModel(task=obj["task"], hp=Hyperparameters(**obj["hp"]),
                     init_score=obj["init_score"], trees=trees,
                     n_features=obj["n_features"])


# ---------------------------------------------------------------------------
# inner cross-validated grid search

def stratified_folds(y: np.ndarray, n_folds: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Fold assignment (n,) balancing class counts across folds."""
    y = np.asarray(y)
    fold_of = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        fold_of[members] = np.arange(len(members)) % n_folds
    return fold_of


def shuffled_folds(n: int, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    fold_of = np.arange(n) % n_folds
    return fold_of[rng.permutation(n)]


def grid_search(X: np.ndarray, y: np.ndarray, task: str,
                grid: Sequence[Hyperparameters], seed: int = 0,
                n_folds: int = 3) -> tuple[Hyperparameters, list[dict]]:
    """Pick hyperparameters by inner cross-validation on the training set.

    Classification folds are stratified on the label and candidates score by
    mean AUROC; regression folds are plain shuffled splits scoring mean MAE.
    A candidate is skipped when any of its validation folds has a
    single-class truth (AUROC undefined); if every candidate is skipped the
    search fails. Ties keep the earliest grid entry. A one-candidate grid
    returns immediately.
    """
    if len(grid) == 0:
        raise DataError("empty hyperparameter grid")
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    if len(grid) == 1:
        return grid[0], [{"hp": grid[0], "score": math.nan, "skipped": False}]

    X = np.asarray(X, dtype=np.float64)
    y_arr = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if task == "classification":
        fold_of = stratified_folds(y_arr, n_folds, rng)
    else:
        fold_of = shuffled_folds(len(y_arr), n_folds, rng)

    table: list[dict] = []
    best_hp = None
    best_score = None
    for hp in grid:
        scores = []
        skipped = False
        for f in range(n_folds):
            tr = fold_of != f
            va = ~tr
            if not va.any() or not tr.any():
                skipped = True
                break
            if task == "classification":
                if len(np.unique(y_arr[va])) < 2 or len(np.unique(y_arr[tr])) < 2:
                    skipped = True
                    break
                model = fit_gbdt(X[tr], y_arr[tr], task, hp)
                score = auroc(y_arr[va], predict_gbdt(model, X[va]))
                if math.isnan(score):
                    skipped = True
                    break
            else:
                model = fit_gbdt(X[tr], y_arr[tr], task, hp)
                score = mean_absolute_error(y_arr[va], predict_gbdt(model, X[va]))
            scores.append(score)
        if skipped:
            table.append({"hp": hp, "score": math.nan, "skipped": True})
            continue
        mean_score = float(np.mean(scores))
        table.append({"hp": hp, "score": mean_score, "skipped": False})
        better = (
            best_score is None
            or (task == "classification" and mean_score > best_score)
            or (task == "regression" and mean_score < best_score)
        )
        if better:
            best_score = mean_score
            best_hp = hp
    if best_hp is None:
        raise DataError("every grid candidate was skipped (degenerate inner folds)")
    return best_hp, table
