"""Exit codes, flag/config precedence and artifact flow of the console tool."""

import json

import pytest

from facepheno.cli import main
from facepheno.provenance import canonical_json

COMPACT = ["--grid", "compact"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def features_csv(cohort_dir, workdir):
    out = workdir / "features.csv"
    assert main(["featurize", "--frames", str(cohort_dir / "frames.jsonl"),
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def labels_csv(cohort_dir, workdir):
    out = workdir / "labels.csv"
    assert main(["label", "--phq", str(cohort_dir / "phq.csv"),
                 "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def eval_dir(cohort_dir, workdir):
    out = workdir / "eval"
    code = main(["evaluate", "--frames", str(cohort_dir / "frames.jsonl"),
                 "--phq", str(cohort_dir / "phq.csv"),
                 "--out-dir", str(out), "--subsets", "TSF,SP",
                 "--seed", "11", "--min-train-rows", "8", *COMPACT])
    assert code == 0
    return out


def test_no_arguments_is_a_usage_error():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_unknown_subset_is_a_usage_error(cohort_dir, workdir, capsys):
    code = main(["evaluate", "--frames", str(cohort_dir / "frames.jsonl"),
                 "--phq", str(cohort_dir / "phq.csv"),
                 "--out-dir", str(workdir / "x"), "--subsets", "NOPE"])
    assert code == 2
    assert "usage error" in capsys.readouterr().err


def test_missing_input_file_exits_three(workdir, capsys):
    code = main(["label", "--phq", str(workdir / "absent.csv"),
                 "--out", str(workdir / "y.csv")])
    assert code == 3


def test_bad_grid_is_a_usage_error(features_csv, labels_csv, workdir):
    code = main(["train", "--features", str(features_csv),
                 "--labels", str(labels_csv),
                 "--out", str(workdir / "m.json"),
                 "--grid", "{not json"])
    assert code == 2


def test_featurize_embeds_provenance(features_csv):
    head = features_csv.read_text().splitlines()[0]
    meta = json.loads(head.lstrip("# "))
    assert meta["kind"] == "day_features"
    assert "config_hash" in meta
    log = json.loads((features_csv.parent / "features.csv.runlog.json")
                     .read_text())
    assert log["command"] == "featurize"
    assert log["inputs"]["frames"]["sha256"]


def test_screen_and_flag_precedence(features_csv, labels_csv, workdir):
    config = workdir / "screen.json"
    config.write_text(json.dumps({"alpha": 0.5, "r_min": 0.0}))
    out = workdir / "screen.csv"
    assert main(["screen", "--features", str(features_csv),
                 "--labels", str(labels_csv), "--out", str(out),
                 "--config", str(config), "--alpha", "0.001"]) == 0
    log = json.loads((workdir / "screen.csv.runlog.json").read_text())
    assert log["params"]["alpha"] == 0.001   # flag beats config
    assert log["params"]["r_min"] == 0.0     # config beats default


def test_unknown_config_key_is_a_usage_error(features_csv, labels_csv,
                                             workdir):
    config = workdir / "bad.json"
    config.write_text(json.dumps({"alhpa": 0.5}))
    code = main(["screen", "--features", str(features_csv),
                 "--labels", str(labels_csv),
                 "--out", str(workdir / "s2.csv"), "--config", str(config)])
    assert code == 2


def test_train_writes_model_with_lineage(features_csv, labels_csv, workdir):
    out = workdir / "model.json"
    assert main(["train", "--features", str(features_csv),
                 "--labels", str(labels_csv), "--out", str(out),
                 "--subset", "SP", "--seed", "11", *COMPACT]) == 0
    payload = json.loads(out.read_text())
    assert payload["subset"] == "SP"
    assert len(payload["selected_columns"]) == 32
    assert len(payload["preprocessor"]["mean"]) == 32
    assert payload["seed"] == 11
    assert payload["n_features"] == 32 and payload["trees"]


def test_evaluate_writes_reports_and_audits(eval_dir):
    for subset in ("TSF", "SP"):
        report = json.loads(
            (eval_dir / f"report_lopdo_classification_{subset}.json")
            .read_text())
        assert report["kind"] == "model_report"
        assert report["subset"] == subset
        audit = json.loads(
            (eval_dir / f"audit_lopdo_classification_{subset}.json")
            .read_text())
        assert audit["n_violations"] == 0
    log = json.loads((eval_dir / "evaluate.runlog.json").read_text())
    assert log["seed"] == 11


def test_evaluate_reports_identical_across_jobs(cohort_dir, workdir,
                                                eval_dir):
    out = workdir / "eval_j2"
    assert main(["evaluate", "--frames", str(cohort_dir / "frames.jsonl"),
                 "--phq", str(cohort_dir / "phq.csv"),
                 "--out-dir", str(out), "--subsets", "TSF,SP",
                 "--seed", "11", "--min-train-rows", "8",
                 "--jobs", "2", *COMPACT]) == 0
    for name in ("report_lopdo_classification_TSF.json",
                 "report_lopdo_classification_SP.json"):
        assert (out / name).read_bytes() == (eval_dir / name).read_bytes()


def test_min_days_and_report_flow(cohort_dir, workdir, eval_dir):
    md = workdir / "mindays"
    assert main(["min-days", "--frames", str(cohort_dir / "frames.jsonl"),
                 "--phq", str(cohort_dir / "phq.csv"),
                 "--out-dir", str(md), "--subset", "SP", "--seed", "11",
                 "--k-max", "3", "--min-train-rows", "5", *COMPACT]) == 0
    stem = md / "min_days_classification_SP"
    summary = workdir / "summary"
    assert main(["report",
                 str(eval_dir / "report_lopdo_classification_TSF.json"),
                 str(eval_dir / "report_lopdo_classification_SP.json"),
                 str(stem) + ".json",
                 "--out-dir", str(summary)]) == 0
    lines = (summary / "metrics.csv").read_text().splitlines()
    assert lines[1].startswith("Model,MAE,")
    assert len(lines) == 4
    assert (summary / "roc_lopdo_classification_TSF.svg").exists()
    assert (summary / "min_days_classification_SP.svg").exists()


def test_report_refuses_mixed_lineage(workdir):
    base = {
        "kind": "model_report", "format_version": "1", "config_hash": "x",
        "scheme": "lopdo", "task": "classification", "subset": "SP",
        "time_rule": "global", "n_folds": 0, "n_skipped": 0, "folds": [],
        "params": {"alpha": 0.05, "r_min": 0.2, "n_pairs": 4,
                   "inventory": {"n_channels": 40, "n_iva_pcs": 10,
                                 "acceleration": False}},
        "aggregate": {"n_instances": 0, "n_features": None, "auroc": None,
                      "accuracy": None, "precision": None, "recall": None,
                      "f1": None, "mae": None},
    }
    a, b = workdir / "fa.json", workdir / "fb.json"
    a.write_text(canonical_json({**base, "seed": 1}) + "\n")
    b.write_text(canonical_json({**base, "seed": 2}) + "\n")
    assert main(["report", str(a), str(b),
                 "--out-dir", str(workdir / "mixed")]) == 3


def test_synth_cli_roundtrip(workdir):
    out = workdir / "tiny"
    assert main(["synth", "--out", str(out), "--participants", "2",
                 "--days", "3", "--seed", "5"]) == 0
    assert (out / "frames.jsonl").exists()
    manifest = json.loads((out / "manifest.truth").read_text())
    assert manifest["kind"] == "truth_manifest"
    log = json.loads((out / "synth.runlog.json").read_text())
    assert log["params"]["n_participants"] == 2
