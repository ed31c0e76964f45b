"""Delimited outputs and figure rendering."""

import json

import pytest

from facepheno.errors import DataError
from facepheno.report import (
    check_lineage, model_label, write_metrics_csv, write_min_days_csv,
    write_min_days_svg, write_roc_svg,
)

_PARAMS = {"alpha": 0.05, "r_min": 0.2, "n_pairs": 64,
           "inventory": {"n_channels": 40, "n_iva_pcs": 10,
                         "acceleration": False}}


def fake_report(scheme="lopdo", task="classification", subset="TSF",
                seed=11, **over):
    report = {
        "kind": "model_report", "format_version": "1", "seed": seed,
        "config_hash": "abc123", "scheme": scheme, "task": task,
        "subset": subset, "time_rule": "global", "params": dict(_PARAMS),
        "n_folds": 3, "n_skipped": 1,
        "folds": [
            {"skipped": None, "key": "a", "y_true": [1.0, 0.0],
             "y_score": [0.9, 0.2], "n_features": 12},
            {"skipped": None, "key": "b", "y_true": [1.0, 0.0],
             "y_score": [0.4, 0.6], "n_features": 14},
            {"skipped": "insufficient_train", "key": "c"},
        ],
        "aggregate": {"n_instances": 4, "n_features": 13, "auroc": 0.75,
                      "accuracy": 0.75, "precision": 2 / 3, "recall": 1.0,
                      "f1": 0.8, "mae": None},
    }
    report.update(over)
    return report


def fake_curve():
    return {
        "kind": "min_days_curve", "format_version": "1", "seed": 11,
        "config_hash": "def456", "scheme": "lopdo", "task": "classification",
        "subset": "TSF", "k_max": 3, "params": dict(_PARAMS),
        "points": [
            {"k": 1, "auroc": None, "mae": None, "n_instances": 0,
             "n_folds": 5, "n_skipped": 5},
            {"k": 2, "auroc": 0.7, "mae": None, "n_instances": 8,
             "n_folds": 10, "n_skipped": 2},
            {"k": 3, "auroc": 0.8, "mae": None, "n_instances": 15,
             "n_folds": 15, "n_skipped": 0},
        ],
    }


def test_metrics_csv_layout(tmp_path):
    reg_agg = {"n_instances": 4, "n_features": 20, "auroc": None,
               "accuracy": None, "precision": None, "recall": None,
               "f1": None, "mae": 3.25}
    path = tmp_path / "metrics.csv"
    write_metrics_csv([fake_report(),
                       fake_report(task="regression", aggregate=reg_agg)],
                      path)
    lines = path.read_text().splitlines()
    meta = json.loads(lines[0].lstrip("# "))
    assert meta["kind"] == "metrics_table" and meta["seed"] == 11
    assert lines[1] == ("Model,MAE,Accuracy,Precision,Recall,F1,AUROC,"
                        "No. of Features")
    cls_row = lines[2].split(",")
    assert cls_row[0] == "lopdo:classification:TSF"
    assert cls_row[1] == ""              # MAE blank for classification
    assert cls_row[6] == "0.7500"
    assert cls_row[7] == "13"
    reg_row = lines[3].split(",")
    assert reg_row[1] == "3.2500"
    assert reg_row[6] == ""              # AUROC blank for regression


def test_lineage_refuses_mixed_seeds(tmp_path):
    with pytest.raises(DataError):
        write_metrics_csv([fake_report(), fake_report(seed=12)],
                          tmp_path / "x.csv")


def test_lineage_refuses_mixed_screen_params():
    other = fake_report()
    other["params"] = {**_PARAMS, "alpha": 0.01}
    with pytest.raises(DataError):
        check_lineage([fake_report(), other])


def test_lineage_refuses_mixed_inventories():
    other = fake_report()
    other["params"] = {**_PARAMS,
                       "inventory": {"n_channels": 50, "n_iva_pcs": 10,
                                     "acceleration": True}}
    with pytest.raises(DataError):
        check_lineage([fake_report(), other])


def test_model_label():
    assert model_label(fake_report()) == "lopdo:classification:TSF"


def test_roc_svg_renders_deterministically(tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    write_roc_svg(fake_report(), a)
    write_roc_svg(fake_report(), b)
    content = a.read_text()
    assert content.startswith("<?xml")
    assert "0.75" in content        # AUROC in the legend
    assert a.read_bytes() == b.read_bytes()


def test_roc_svg_refuses_regression(tmp_path):
    reg = fake_report(task="regression")
    with pytest.raises(DataError):
        write_roc_svg(reg, tmp_path / "r.svg")


def test_min_days_csv_layout(tmp_path):
    path = tmp_path / "curve.csv"
    write_min_days_csv(fake_curve(), path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    assert lines[1] == "k,auroc,mae,n_instances,n_folds,n_skipped"
    assert lines[2] == "1,,,0,5,5"
    assert lines[3].startswith("2,0.7")
    assert len(lines) == 5


def test_min_days_svg_renders_and_skips_undefined(tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    write_min_days_svg(fake_curve(), a)
    write_min_days_svg(fake_curve(), b)
    assert a.read_bytes() == b.read_bytes()
    assert a.stat().st_size > 1000
