"""Leave-one-out evaluation schemes and their serialized reports.

Two schemes:

* ``lopo`` (universal): one fold per participant; the fold's angle PCA and
  every downstream stage see only the other participants.
* ``lopdo`` (hybrid): one fold per (participant, day); training data is every
  labeled instance dated strictly before the test day. The angle PCA is fit
  once on the cohort's earliest days and folds inside that prefix are
  skipped, so no fold's featurization ever looks at its own present/future.

Reports are plain dicts with a canonical JSON form. They deliberately carry
no timing or host information: two runs with the same seed and configuration
must serialize to identical bytes regardless of worker count. Each fold
records the manifest an auditor needs (who/when was trained on), and
``audit_report`` re-checks those manifests from the serialized form alone.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import multiprocessing
import zlib

import numpy as np

from .cohort import (
    CohortDataset, featurize_with_model, first_k_days_mask, fit_reference_pca,
)
from .data_model import AU_NAMES
from .errors import DataError
from .featurize import ChannelInventory, EPOCH_NAMES, STAT_NAMES
from .learn import (
    Hyperparameters, Preprocessor, default_grid, fit_gbdt, gini_select,
    grid_search, predict_gbdt, smote,
)
from .metrics import auroc, classification_metrics, mean_absolute_error
from .provenance import canonical_json, config_hash
from .stats import screen_features

REPORT_FORMAT_VERSION = "1"

TASKS = ("classification", "regression")
SUBSETS = ("EOP", "SP", "HEA", "AU", "EAR", "IVA", "TSF", "FS", "ALL")

# Feature counts the fixed subsets must resolve to under the default
# 40-channel inventory; any other count means the inventory drifted.
_FIXED_CARDINALITY = {"EOP": 64, "SP": 32, "HEA": 96, "AU": 384,
                      "EAR": 64, "IVA": 640, "ALL": 1280}

_SUBSET_CHANNELS = {
    "EOP": ("leftEyeOpenProbability", "rightEyeOpenProbability"),
    "SP": ("smilingProbability",),
    "HEA": ("headEulerAngle_X", "headEulerAngle_Y", "headEulerAngle_Z"),
    "AU": tuple(AU_NAMES),
    "EAR": ("ear_left", "ear_right"),
}


@dataclasses.dataclass(frozen=True)
class EvalSpec:
    task: str
    subset: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        if self.subset not in SUBSETS:
            raise DataError(f"unknown feature subset {self.subset!r}")

    @property
    def tag(self) -> str:
        return f"{self.task}:{self.subset}"


def resolve_fixed_columns(inventory: ChannelInventory) -> dict[str, np.ndarray]:
    """Column indices for every fixed subset, epoch-major like the layout."""
    n_ch = inventory.n_channels
    n_stats = len(STAT_NAMES)

    def cols_for(ch_idx: list[int]) -> np.ndarray:
        return np.array([
            (e * n_ch + c) * n_stats + s
            for e in range(len(EPOCH_NAMES))
            for c in ch_idx
            for s in range(n_stats)
        ], dtype=np.int64)

    out = {}
    for name, members in _SUBSET_CHANNELS.items():
        out[name] = cols_for([i for i, ch in enumerate(inventory.channels)
                              if ch in members])
    out["IVA"] = cols_for([i for i, ch in enumerate(inventory.channels)
                           if ch.startswith("iva_")])
    out["ALL"] = np.arange(inventory.n_features, dtype=np.int64)

    is_default = (inventory.channels == ChannelInventory.default().channels)
    if is_default:
        for name, expected in _FIXED_CARDINALITY.items():
            if len(out[name]) != expected:
                raise DataError(
                    f"subset {name} resolved to {len(out[name])} features, "
                    f"expected {expected}: channel inventory drift")
    return out


# ---------------------------------------------------------------------------
# one fold x one spec

def _spec_stream(seed: int, fold_id: int, spec: EvalSpec, stage: int) -> list[int]:
    # Stable across worker counts and across which specs share a run.
    return [seed, fold_id, zlib.crc32(spec.tag.encode()), stage]


def _skip(reason: str) -> dict:
    return {"skipped": reason}


def _run_fold_spec(X: np.ndarray, feature_names: list[str],
                   name_to_col: dict[str, int],
                   y_class: np.ndarray, y_target: np.ndarray,
                   train_idx: np.ndarray, test_idx: np.ndarray,
                   spec: EvalSpec, fixed_cols: dict[str, np.ndarray],
                   grid: list[Hyperparameters], alpha: float, r_min: float,
                   seed: int, fold_id: int, min_train_rows: int) -> dict:
    """Select, preprocess, balance, tune, fit and predict for one fold."""
    if len(train_idx) < min_train_rows:
        return _skip("insufficient_train")
    y_bin_tr = y_class[train_idx]
    if len(np.unique(y_bin_tr)) < 2:
        # both selection and (for classification) the model need contrast
        return _skip("single_class_train")
    ytr = y_bin_tr if spec.task == "classification" else y_target[train_idx]
    Xtr_raw = X[train_idx]
    notes = []

    selected_names = None
    if spec.subset == "TSF":
        screened = screen_features(Xtr_raw, y_bin_tr, feature_names,
                                   alpha=alpha, r_min=r_min)
        selected_names = screened.feature_names()
        if not selected_names:
            return _skip("empty_selection")
        cols = np.array([name_to_col[n] for n in selected_names], dtype=np.int64)
    elif spec.subset == "FS":
        pre0 = Preprocessor.fit(Xtr_raw)
        try:
            cols, _, _ = gini_select(pre0.transform(Xtr_raw), y_bin_tr)
        except DataError:
            return _skip("no_splits")
        if len(cols) == 0:
            return _skip("empty_selection")
        selected_names = [feature_names[c] for c in cols]
    else:
        cols = fixed_cols[spec.subset]

    pre = Preprocessor.fit(Xtr_raw[:, cols])
    Xtr = pre.transform(Xtr_raw[:, cols])
    Xte = pre.transform(X[test_idx][:, cols])

    if spec.task == "classification":
        minority = np.bincount(ytr.astype(np.int64)).min()
        if minority >= 2:
            rng = np.random.default_rng(_spec_stream(seed, fold_id, spec, 1))
            Xtr, ytr = smote(Xtr, ytr, k=5, rng=rng)
        else:
            notes.append("smote_bypassed")

    grid_seed = int(np.random.SeedSequence(
        _spec_stream(seed, fold_id, spec, 2)).generate_state(1)[0])
    try:
        best_hp, _ = grid_search(Xtr, ytr, spec.task, grid, seed=grid_seed)
    except DataError:
        return _skip("grid_degenerate")
    model = fit_gbdt(Xtr, ytr, spec.task, best_hp)
    scores = predict_gbdt(model, Xte)

    truth = y_class[test_idx] if spec.task == "classification" else y_target[test_idx]
    return {
        "skipped": None,
        "y_true": [float(v) for v in truth],
        "y_score": [float(s) for s in scores],
        "hp": dataclasses.asdict(best_hp),
        "n_features": int(len(cols)),
        "selected": selected_names,
        "notes": notes,
    }


# ---------------------------------------------------------------------------
# fold construction

def _labeled_days(dataset: CohortDataset, day_mask) -> np.ndarray:
    labeled = dataset.labeled_mask
    if day_mask is not None:
        labeled = labeled & np.asarray(day_mask, dtype=bool)
    return np.flatnonzero(labeled)


def _day_ids(dataset: CohortDataset, days: np.ndarray) -> list[list[str]]:
    return [[dataset.day_pid(d), dataset.day_date(d).isoformat()] for d in days]


def _iso_dates(dataset: CohortDataset, days: np.ndarray) -> list[str]:
    ords = sorted(set(int(dataset.day_date_ord[d]) for d in days))
    return [dt.date.fromordinal(o).isoformat() for o in ords]


def _lopo_folds(dataset: CohortDataset, day_mask) -> list[dict]:
    labeled = _labeled_days(dataset, day_mask)
    codes = np.unique(dataset.day_pid_code[labeled])
    if len(codes) < 3:
        raise DataError(f"leave-one-participant-out needs at least 3 "
                        f"participants with labeled days, got {len(codes)}")
    folds = []
    for fid, code in enumerate(codes):
        test = labeled[dataset.day_pid_code[labeled] == code]
        train = labeled[dataset.day_pid_code[labeled] != code]
        train_pids = sorted({dataset.day_pid(d) for d in train})
        folds.append({
            "fold_id": fid,
            "key": dataset.table.pids[int(code)],
            "test_days": test,
            "train_days": train,
            "manifest": {
                "test_ids": _day_ids(dataset, test),
                "train_size": int(len(train)),
                "train_participants": train_pids,
                "pca": {"participants": train_pids},
            },
        })
    return folds


def _lopdo_folds(dataset: CohortDataset, day_mask, time_rule: str,
                 pca_prefix_ords: list[int]) -> list[dict]:
    labeled = _labeled_days(dataset, day_mask)
    order = labeled[np.lexsort((dataset.day_pid_code[labeled],
                                dataset.day_date_ord[labeled]))]
    date_ord = dataset.day_date_ord
    pid_code = dataset.day_pid_code
    prefix_max = max(pca_prefix_ords)
    pca_dates = [dt.date.fromordinal(o).isoformat() for o in sorted(pca_prefix_ords)]
    folds = []
    for fid, d in enumerate(order):
        t_ord = int(date_ord[d])
        if time_rule == "global":
            train = labeled[(date_ord[labeled] < t_ord)]
        else:  # own past plus everything from other participants
            train = labeled[(pid_code[labeled] != pid_code[d])
                            | (date_ord[labeled] < t_ord)]
        own = train[pid_code[train] == pid_code[d]]
        fold = {
            "fold_id": fid,
            "key": f"{dataset.day_pid(d)}|{dataset.day_date(d).isoformat()}",
            "test_days": np.array([d]),
            "train_days": train,
            "manifest": {
                "test_ids": _day_ids(dataset, np.array([d])),
                "test_date": dataset.day_date(d).isoformat(),
                "train_size": int(len(train)),
                "train_dates": _iso_dates(dataset, train),
                "own_train_dates": _iso_dates(dataset, own),
                "pca": {"dates": pca_dates},
            },
        }
        if t_ord <= prefix_max:
            fold["forced_skip"] = "pca_prefix"
        folds.append(fold)
    return folds


def _frame_prefix_ords(dataset: CohortDataset, n_dates: int) -> list[int]:
    """Earliest n distinct local dates that have frames with landmarks."""
    has_lm = dataset.table.lm_row >= 0
    ords = np.unique(dataset.table.date_ord[has_lm])
    k = dataset.inventory.n_iva_pcs
    for n in range(n_dates, len(ords) + 1):
        chosen = ords[:n]
        rows = has_lm & np.isin(dataset.table.date_ord, chosen)
        if rows.sum() >= k + 1:
            return [int(o) for o in chosen]
    raise DataError("not enough landmark frames to fit the angle projection")


# ---------------------------------------------------------------------------
# worker plumbing; module-level so fork-based pools can reach it

_CTX: dict = {}


def _fold_worker(fold_id: int) -> list[dict]:
    ctx = _CTX
    dataset: CohortDataset = ctx["dataset"]
    fold = ctx["folds"][fold_id]
    if ctx["scheme"] == "lopo":
        test_code = dataset.table.pids.index(fold["key"])
        frames = dataset.table.pid_code != test_code
        model = fit_reference_pca(dataset, frames)
        X = featurize_with_model(dataset, model)
    else:
        X = ctx["X"]

    results = []
    for spec in ctx["specs"]:
        if fold.get("forced_skip"):
            res = _skip(fold["forced_skip"])
        else:
            res = _run_fold_spec(
                X, ctx["feature_names"], ctx["name_to_col"],
                dataset.y_class, dataset.y_target,
                fold["train_days"], fold["test_days"],
                spec, ctx["fixed_cols"], ctx["grid"],
                ctx["alpha"], ctx["r_min"], ctx["seed"], fold_id,
                ctx["min_train_rows"])
        res.update(fold_id=fold_id, key=fold["key"], **fold["manifest"])
        results.append(res)
    return results


# ---------------------------------------------------------------------------
# aggregation and reports

def aggregate_from_folds(task: str, folds: list[dict]) -> dict:
    """Pooled metrics over every prediction of the non-skipped folds."""
    y_true, y_score, n_feats = [], [], []
    for f in folds:
        if f["skipped"]:
            continue
        y_true.extend(f["y_true"])
        y_score.extend(f["y_score"])
        n_feats.append(f["n_features"])
    agg = {"n_instances": len(y_true),
           "n_features": int(round(float(np.mean(n_feats)))) if n_feats else None,
           "auroc": None, "accuracy": None, "precision": None,
           "recall": None, "f1": None, "mae": None}
    if not y_true:
        return agg
    yt = np.asarray(y_true)
    ys = np.asarray(y_score)
    if task == "classification":
        a = auroc(yt.astype(np.int64), ys)
        agg["auroc"] = None if np.isnan(a) else float(a)
        cm = classification_metrics(yt.astype(np.int64), ys)
        agg.update(accuracy=cm.accuracy, precision=cm.precision,
                   recall=cm.recall, f1=cm.f1)
    else:
        agg["mae"] = float(mean_absolute_error(yt, ys))
    return agg


def _grid_json(grid: list[Hyperparameters]) -> list[dict]:
    return [dataclasses.asdict(hp) for hp in grid]


def report_params(dataset: CohortDataset, scheme: str, spec: EvalSpec,
                  grid: list[Hyperparameters], time_rule: str,
                  min_train_rows: int, alpha: float, r_min: float,
                  day_budget: int | None) -> dict:
    """Semantic parameters of one report; the config hash covers these."""
    return {
        "scheme": scheme,
        "task": spec.task,
        "subset": spec.subset,
        "time_rule": time_rule,
        "min_train_rows": min_train_rows,
        "alpha": alpha,
        "r_min": r_min,
        "day_budget": day_budget,
        "grid": _grid_json(grid),
        "inventory": {
            "n_channels": dataset.inventory.n_channels,
            "n_iva_pcs": dataset.inventory.n_iva_pcs,
            "acceleration": dataset.acceleration,
        },
        "n_pairs": int(len(dataset.pairs)),
    }


def run_scheme(dataset: CohortDataset, scheme: str,
               specs: list[EvalSpec], seed: int,
               grid: list[Hyperparameters] | None = None,
               jobs: int = 1, min_train_rows: int = 20,
               time_rule: str = "global", day_mask=None,
               alpha: float = 0.05, r_min: float = 0.20,
               day_budget: int | None = None,
               prefix_dates: int = 2,
               _lopdo_cache: tuple | None = None) -> list[dict]:
    """Evaluate every spec under one scheme, sharing fold featurization.

    Returns one report dict per spec, in spec order. Fold results are keyed
    and ordered deterministically, so the serialized reports are identical
    across worker counts.
    """
    if scheme not in ("lopo", "lopdo"):
        raise DataError(f"unknown scheme {scheme!r}")
    if time_rule not in ("global", "participant"):
        raise DataError(f"unknown time rule {time_rule!r}")
    if grid is None:
        grid = default_grid()
    if not specs:
        raise DataError("no evaluation specs given")

    fixed_cols = resolve_fixed_columns(dataset.inventory)
    feature_names = dataset.feature_names()
    name_to_col = {n: i for i, n in enumerate(feature_names)}

    ctx = {
        "dataset": dataset, "scheme": scheme, "specs": specs,
        "feature_names": feature_names, "name_to_col": name_to_col,
        "fixed_cols": fixed_cols, "grid": list(grid),
        "alpha": alpha, "r_min": r_min, "seed": seed,
        "min_train_rows": min_train_rows,
    }
    pca_info: dict
    if scheme == "lopo":
        folds = _lopo_folds(dataset, day_mask)
        pca_info = {"policy": "per_fold_train_participants"}
    else:
        if _lopdo_cache is not None:
            prefix_ords, X = _lopdo_cache
        else:
            prefix_ords = _frame_prefix_ords(dataset, prefix_dates)
            rows = np.isin(dataset.table.date_ord, prefix_ords)
            X = featurize_with_model(dataset, fit_reference_pca(dataset, rows))
        folds = _lopdo_folds(dataset, day_mask, time_rule, prefix_ords)
        ctx["X"] = X
        pca_info = {"policy": "prefix_dates",
                    "dates": [dt.date.fromordinal(o).isoformat()
                              for o in sorted(prefix_ords)]}
    ctx["folds"] = folds

    global _CTX
    _CTX = ctx
    try:
        n_jobs = max(1, min(jobs, len(folds)))
        if n_jobs == 1:
            per_fold = [_fold_worker(f["fold_id"]) for f in folds]
        else:
            mp = multiprocessing.get_context("fork")
            with mp.Pool(n_jobs) as pool:
                per_fold = pool.map(_fold_worker, [f["fold_id"] for f in folds],
                                    chunksize=max(1, len(folds) // (n_jobs * 4)))
    finally:
        _CTX = {}

    reports = []
    for si, spec in enumerate(specs):
        fold_results = [row[si] for row in per_fold]
        params = report_params(dataset, scheme, spec, grid, time_rule,
                               min_train_rows, alpha, r_min, day_budget)
        reports.append({
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "model_report",
            "seed": seed,
            "config_hash": config_hash(params),
            "params": params,
            "scheme": scheme,
            "task": spec.task,
            "subset": spec.subset,
            "time_rule": time_rule,
            "pca": pca_info,
            "n_labeled_instances": int(len(_labeled_days(dataset, day_mask))),
            "n_folds": len(fold_results),
            "n_skipped": sum(1 for f in fold_results if f["skipped"]),
            "folds": fold_results,
            "aggregate": aggregate_from_folds(spec.task, fold_results),
        })
    return reports


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(report))
        fh.write("\n")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("kind") not in ("model_report", "min_days_curve"):
        raise DataError(f"not an evaluation artifact: {path}")
    if obj.get("format_version") != REPORT_FORMAT_VERSION:
        raise DataError(f"unsupported report version {obj.get('format_version')!r}")
    return obj


# ---------------------------------------------------------------------------
# leakage audit: consumes only the serialized report

def audit_report(report: dict) -> dict:
    """Re-check the train/test manifests of a serialized report.

    Works entirely from the report dict (as parsed back from disk); it never
    touches the dataset, so a passing audit certifies what was written, not
    what the evaluator intended.
    """
    violations = []
    scheme = report.get("scheme")
    time_rule = report.get("time_rule", "global")
    checked = 0

    def flag(fold, rule, detail):
        violations.append({"fold": fold["key"], "rule": rule, "detail": detail})

    for fold in report.get("folds", ()):
        if fold.get("skipped"):
            continue
        checked += 1
        if scheme == "lopo":
            pid = fold["key"]
            if pid in fold["train_participants"]:
                flag(fold, "participant_overlap",
                     "test participant appears in the training set")
            for test_pid, _ in fold["test_ids"]:
                if test_pid != pid:
                    flag(fold, "test_identity",
                         f"test instance belongs to {test_pid}")
            if pid in fold["pca"]["participants"]:
                flag(fold, "pca_overlap",
                     "angle projection was fit on the test participant")
            extra = set(fold["pca"]["participants"]) - set(fold["train_participants"])
            if extra:
                flag(fold, "pca_overlap",
                     f"projection fit on non-training participants {sorted(extra)}")
        elif scheme == "lopdo":
            test_date = fold["test_date"]
            train_dates = fold["own_train_dates"] if time_rule == "participant" \
                else fold["train_dates"]
            late = [d for d in train_dates if d >= test_date]
            if late:
                flag(fold, "time_order",
                     f"training dates not before {test_date}: {late[:3]}")
            pca_late = [d for d in fold["pca"]["dates"] if d >= test_date]
            if pca_late:
                flag(fold, "pca_time_order",
                     f"projection fit on dates not before {test_date}: {pca_late}")
            for _, date in fold["test_ids"]:
                if date != test_date:
                    flag(fold, "test_identity",
                         f"test instance dated {date} in fold {test_date}")
        else:
            flag(fold, "scheme", f"unknown scheme {scheme!r}")
    return {
        "kind": "leakage_audit",
        "scheme": scheme,
        "time_rule": time_rule,
        "config_hash": report.get("config_hash"),
        "seed": report.get("seed"),
        "n_folds_checked": checked,
        "n_violations": len(violations),
        "violations": violations,
    }


# ---------------------------------------------------------------------------
# observation-budget curve

def min_days_curve(dataset: CohortDataset, spec: EvalSpec, seed: int,
                   grid: list[Hyperparameters] | None = None,
                   k_max: int | None = None, jobs: int = 1,
                   min_train_rows: int = 20, time_rule: str = "global",
                   alpha: float = 0.05, r_min: float = 0.20,
                   prefix_dates: int = 2) -> dict:
    """AUROC (or MAE) as each participant's history is capped at k days.

    The day-feature matrix is computed once and shared across every budget;
    only the instance restriction changes per point.
    """
    if k_max is None:
        k_max = int(np.max(np.bincount(dataset.day_pid_code)))
    if k_max < 1:
        raise DataError("k_max must be positive")
    prefix_ords = _frame_prefix_ords(dataset, prefix_dates)
    rows = np.isin(dataset.table.date_ord, prefix_ords)
    X = featurize_with_model(dataset, fit_reference_pca(dataset, rows))

    points = []
    for k in range(1, k_max + 1):
        mask = first_k_days_mask(dataset, k)
        report = run_scheme(
            dataset, "lopdo", [spec], seed, grid=grid, jobs=jobs,
            min_train_rows=min_train_rows, time_rule=time_rule,
            day_mask=mask, alpha=alpha, r_min=r_min, day_budget=k,
            _lopdo_cache=(prefix_ords, X))[0]
        agg = report["aggregate"]
        points.append({
            "k": k,
            "auroc": agg["auroc"],
            "mae": agg["mae"],
            "n_instances": agg["n_instances"],
            "n_folds": report["n_folds"],
            "n_skipped": report["n_skipped"],
        })

    params = report_params(dataset, "lopdo", spec,
                           grid if grid is not None else default_grid(),
                           time_rule, min_train_rows, alpha, r_min, None)
    params["k_max"] = k_max
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "kind": "min_days_curve",
        "seed": seed,
        "config_hash": config_hash(params),
        "params": params,
        "scheme": "lopdo",
        "task": spec.task,
        "subset": spec.subset,
        "k_max": k_max,
        "points": points,
    }
