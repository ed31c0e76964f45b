"""Delimited metric tables and figures from evaluation artifacts.

Consumes the serialized report dicts produced by evaluate; refuses to combine
artifacts whose lineage (seed, inventory, pair count) disagrees, since a table
mixing cohorts would be quietly meaningless. Figures render to SVG with fixed
hash salt and no embedded timestamps, so reruns produce identical bytes.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "facepheno"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402
from .metrics import roc_points  # noqa: E402

METRICS_HEADER = ("Model", "MAE", "Accuracy", "Precision", "Recall", "F1",
                  "AUROC", "No. of Features")


def model_label(report: dict) -> str:
    return f"{report['scheme']}:{report['task']}:{report['subset']}"


def check_lineage(artifacts: list[dict]) -> None:
    """All artifacts must come from the same cohort run configuration."""
    if not artifacts:
        raise DataError("no artifacts to combine")
    ref = artifacts[0]
    for art in artifacts[1:]:
        if art.get("seed") != ref.get("seed"):
            raise DataError(
                f"artifact lineage mismatch: seed {art.get('seed')} vs "
                f"{ref.get('seed')}")
        for key in ("inventory", "n_pairs", "alpha", "r_min"):
            if art.get("params", {}).get(key) != ref.get("params", {}).get(key):
                raise DataError(f"artifact lineage mismatch on {key}")


def _fmt(value, nd: int = 4) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, f".{nd}f")
    return str(value)


def write_metrics_csv(reports: list[dict], path) -> None:
    """One row per model, paper-style column layout."""
    check_lineage(reports)
    meta = {
        "kind": "metrics_table",
        "seed": reports[0].get("seed"),
        "sources": [{"model": model_label(r), "config_hash": r["config_hash"]}
                    for r in reports],
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write(",".join(METRICS_HEADER) + "\n")
        for r in reports:
            agg = r["aggregate"]
            fh.write(",".join([
                model_label(r),
                _fmt(agg.get("mae")),
                _fmt(agg.get("accuracy")),
                _fmt(agg.get("precision")),
                _fmt(agg.get("recall")),
                _fmt(agg.get("f1")),
                _fmt(agg.get("auroc")),
                _fmt(agg.get("n_features")),
            ]) + "\n")


def _pooled_predictions(report: dict) -> tuple[np.ndarray, np.ndarray]:
    y_true, y_score = [], []
    for fold in report["folds"]:
        if fold["skipped"]:
            continue
        y_true.extend(fold["y_true"])
        y_score.extend(fold["y_score"])
    return np.asarray(y_true), np.asarray(y_score)


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_roc_svg(report: dict, path) -> None:
    if report.get("task") != "classification":
        raise DataError("ROC curves are only defined for classification reports")
    y_true, y_score = _pooled_predictions(report)
    if len(y_true) == 0:
        raise DataError("report has no predictions to plot")
    fpr, tpr = roc_points(y_true, y_score)
    auc = report["aggregate"].get("auroc")
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], linestyle="--", color="0.6", linewidth=1)
    label = model_label(report)
    if auc is not None:
        label += f" (AUROC {auc:.3f})"
    ax.plot(fpr, tpr, drawstyle="steps-post", color="#1f77b4", label=label)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save_svg(fig, path)


def write_min_days_csv(curve: dict, path) -> None:
    if curve.get("kind") != "min_days_curve":
        raise DataError("not a day-budget curve artifact")
    meta = {"kind": "min_days_table", "seed": curve.get("seed"),
            "config_hash": curve.get("config_hash"),
            "model": f"lopdo:{curve['task']}:{curve['subset']}"}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write("k,auroc,mae,n_instances,n_folds,n_skipped\n")
        for pt in curve["points"]:
            fh.write(",".join([
                str(pt["k"]), _fmt(pt.get("auroc")), _fmt(pt.get("mae")),
                str(pt["n_instances"]), str(pt["n_folds"]), str(pt["n_skipped"]),
            ]) + "\n")


def write_min_days_svg(curve: dict, path) -> None:
    if curve.get("kind") != "min_days_curve":
        raise DataError("not a day-budget curve artifact")
    metric = "auroc" if curve["task"] == "classification" else "mae"
    ks = [pt["k"] for pt in curve["points"] if pt.get(metric) is not None]
    vals = [pt[metric] for pt in curve["points"] if pt.get(metric) is not None]
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.plot(ks, vals, marker="o", markersize=3.5, color="#1f77b4")
    ax.set_xlabel("days of observation per participant")
    ax.set_ylabel(metric.upper() if metric == "mae" else "AUROC")
    ax.set_title(f"lopdo:{curve['task']}:{curve['subset']}", fontsize=9)
    if metric == "auroc":
        ax.axhline(0.5, linestyle=":", color="0.6", linewidth=1)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    _save_svg(fig, path)
