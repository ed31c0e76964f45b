"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 bad or inconsistent data, 4 internal
failure. Every command accepts ``--config FILE`` (JSON, keys matching the
flag names with underscores); explicit flags win over the file. Each command
writes a machine-readable run log next to its outputs recording the resolved
parameters, input digests and runtime.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
import time

import numpy as np

from .cohort import build_dataset, featurize_with_model, fit_reference_pca, to_instances
from .data_model import parse_frame_stream, parse_phq_csv
from .errors import DataError
from .evaluate import (
    SUBSETS, TASKS, EvalSpec, audit_report, load_report, min_days_curve,
    resolve_fixed_columns, run_scheme, write_report,
)
from .featurize import ChannelInventory, export_instances_csv, import_instances_csv
from .geometry import save_pca
from .labeling import attach_targets, label_windows, parse_labels_csv, serialize_labels_csv
from .learn import (
    Hyperparameters, Preprocessor, default_grid, fit_gbdt, gini_select,
    grid_search, save_gbdt, smote,
)
from .provenance import config_hash, write_run_log
from .report import (
    check_lineage, model_label, write_metrics_csv, write_min_days_csv,
    write_min_days_svg, write_roc_svg,
)
from .stats import screen_features, write_screen_csv
from .synth import SynthConfig, write_cohort


class UsageError(Exception):
    pass


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return obj


def _resolve(args, defaults: dict) -> dict:
    """Merge flag values over config-file values over defaults."""
    cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        v = getattr(args, key, None)
        out[key] = cfg.get(key, default) if v is None else v
    return out


def _parse_grid(spec: str | None) -> list[Hyperparameters] | None:
    if spec is None or spec == "default":
        return None
    if spec == "compact":
        return [Hyperparameters(0.1, 100, 15, 5)]
    text = spec
    if not spec.lstrip().startswith("{"):
        try:
            with open(spec, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"grid spec is neither a preset, JSON nor a "
                             f"readable file: {spec}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"bad grid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError("grid JSON must be an object of value lists")
    known = ("learning_rate", "n_trees", "max_leaves", "min_samples_leaf")
    extra = set(obj) - set(known)
    if extra:
        raise UsageError(f"unknown grid keys: {sorted(extra)}")

    def axis(key, fallback):
        v = obj.get(key, [fallback])
        return v if isinstance(v, list) else [v]

    try:
        return [Hyperparameters(lr, int(t), int(l), int(m))
                for lr in axis("learning_rate", 0.1)
                for t in axis("n_trees", 100)
                for l in axis("max_leaves", 31)
                for m in axis("min_samples_leaf", 5)]
    except (TypeError, ValueError, DataError) as exc:
        raise UsageError(f"bad grid values: {exc}") from exc


def _grid_params(grid: list[Hyperparameters] | None) -> list[dict]:
    import dataclasses
    return [dataclasses.asdict(hp) for hp in (grid or default_grid())]


def _safe_label(report: dict) -> str:
    return model_label(report).replace(":", "_")


def _load_instances(path, n_iva_pcs: int, acceleration: bool):
    inventory = ChannelInventory.default(n_iva_pcs=n_iva_pcs,
                                         acceleration=acceleration)
    instances, meta = import_instances_csv(path, inventory)
    return instances, meta, inventory


def _labeled_matrix(instances, windows):
    labeled, dropped = attach_targets(instances, windows)
    if not labeled:
        raise DataError("no instances fall inside a label window")
    X = np.stack([li.instance.features for li in labeled])
    y_class = np.array([int(li.depressive) for li in labeled])
    y_target = np.array([float(li.target) for li in labeled])
    return labeled, dropped, X, y_class, y_target


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    t0 = time.monotonic()
    p = _resolve(args, {
        "participants": 25, "days": 28, "effect_size": 1.0, "seed": 7,
        "stagger_days": 10, "au_failure_rate": 0.17,
        "landmark_failure_rate": 0.03, "baseline_sd": 0.0,
    })
    config = SynthConfig(
        n_participants=int(p["participants"]), study_days=int(p["days"]),
        effect_size=float(p["effect_size"]), seed=int(p["seed"]),
        stagger_days=int(p["stagger_days"]),
        au_failure_rate=float(p["au_failure_rate"]),
        landmark_failure_rate=float(p["landmark_failure_rate"]),
        participant_baseline_sd=float(p["baseline_sd"]))
    paths = write_cohort(config, args.out)
    write_run_log(os.path.join(args.out, "synth.runlog.json"), "synth",
                  config.semantic_params(), config.seed, {},
                  list(paths.values()), time.monotonic() - t0)
    print(f"wrote cohort to {args.out} "
          f"(hash {config_hash(config.semantic_params())}, seed {config.seed})")
    return 0


def cmd_featurize(args) -> int:
    t0 = time.monotonic()
    p = _resolve(args, {"iva_pcs": 10, "acceleration": False})
    records = parse_frame_stream(args.frames)
    dataset = build_dataset(records, [], n_iva_pcs=int(p["iva_pcs"]),
                            acceleration=bool(p["acceleration"]))
    model = fit_reference_pca(dataset)
    X = featurize_with_model(dataset, model)
    params = {"command": "featurize", "iva_pcs": int(p["iva_pcs"]),
              "acceleration": bool(p["acceleration"]),
              "n_pairs": int(len(dataset.pairs))}
    meta = {"kind": "day_features", "config_hash": config_hash(params),
            "seed": None,
            "inventory": {"n_iva_pcs": int(p["iva_pcs"]),
                          "acceleration": bool(p["acceleration"])}}
    export_instances_csv(to_instances(dataset, X), dataset.inventory,
                         args.out, meta)
    outputs = [args.out]
    if args.pca_out:
        save_pca(model, args.pca_out)
        outputs.append(args.pca_out)
    write_run_log(args.out + ".runlog.json", "featurize", params, None,
                  {"frames": args.frames}, outputs, time.monotonic() - t0)
    print(f"wrote {dataset.n_days} day instances x "
          f"{dataset.inventory.n_features} features to {args.out}")
    return 0


def cmd_label(args) -> int:
    t0 = time.monotonic()
    p = _resolve(args, {"target_policy": "end"})
    admins = parse_phq_csv(args.phq)
    windows = label_windows(admins, target_policy=p["target_policy"])
    serialize_labels_csv(windows, args.out)
    params = {"command": "label", "target_policy": p["target_policy"]}
    write_run_log(args.out + ".runlog.json", "label", params, None,
                  {"phq": args.phq}, [args.out], time.monotonic() - t0)
    dep = sum(1 for w in windows if w.depressive)
    print(f"wrote {len(windows)} windows ({dep} depressive) to {args.out}")
    return 0


def cmd_screen(args) -> int:
    t0 = time.monotonic()
    p = _resolve(args, {"alpha": 0.05, "r_min": 0.20,
                        "iva_pcs": 10, "acceleration": False})
    instances, _, inventory = _load_instances(
        args.features, int(p["iva_pcs"]), bool(p["acceleration"]))
    windows = parse_labels_csv(args.labels)
    labeled, dropped, X, y_class, _ = _labeled_matrix(instances, windows)
    result = screen_features(X, y_class, inventory.feature_names(),
                             alpha=float(p["alpha"]), r_min=float(p["r_min"]))
    params = {"command": "screen", "alpha": float(p["alpha"]),
              "r_min": float(p["r_min"]), "iva_pcs": int(p["iva_pcs"]),
              "acceleration": bool(p["acceleration"])}
    write_screen_csv(result, args.out, meta={
        "kind": "screen_table", "config_hash": config_hash(params),
        "seed": None, "n_instances": len(labeled),
        "n_dropped_instances": dropped})
    write_run_log(args.out + ".runlog.json", "screen", params, None,
                  {"features": args.features, "labels": args.labels},
                  [args.out], time.monotonic() - t0)
    print(f"{result.significant_total} of {result.n_features} features "
          f"significant at alpha={p['alpha']}; {len(result.rows)} pass "
          f"|r| >= {p['r_min']}")
    return 0


def cmd_train(args) -> int:
    t0 = time.monotonic()
    p = _resolve(args, {
        "task": "classification", "subset": "TSF", "seed": 0,
        "grid": None, "alpha": 0.05, "r_min": 0.20,
        "iva_pcs": 10, "acceleration": False,
    })
    if p["task"] not in TASKS:
        raise UsageError(f"unknown task {p['task']!r}")
    if p["subset"] not in SUBSETS:
        raise UsageError(f"unknown subset {p['subset']!r}")
    grid = _parse_grid(p["grid"]) or default_grid()
    seed = int(p["seed"])

    instances, _, inventory = _load_instances(
        args.features, int(p["iva_pcs"]), bool(p["acceleration"]))
    windows = parse_labels_csv(args.labels)
    _, _, X, y_class, y_target = _labeled_matrix(instances, windows)
    names = inventory.feature_names()

    if p["subset"] == "TSF":
        screened = screen_features(X, y_class, names,
                                   alpha=float(p["alpha"]),
                                   r_min=float(p["r_min"]))
        chosen = screened.feature_names()
        if not chosen:
            raise DataError("screen selected no features; nothing to train on")
        idx = {n: i for i, n in enumerate(names)}
        cols = np.array([idx[n] for n in chosen], dtype=np.int64)
    elif p["subset"] == "FS":
        pre0 = Preprocessor.fit(X)
        cols, _, _ = gini_select(pre0.transform(X), y_class)
        if len(cols) == 0:
            raise DataError("selection kept no features; nothing to train on")
    else:
        cols = resolve_fixed_columns(inventory)[p["subset"]]

    pre = Preprocessor.fit(X[:, cols])
    Xs = pre.transform(X[:, cols])
    y = y_class if p["task"] == "classification" else y_target
    if p["task"] == "classification":
        if len(np.unique(y)) < 2:
            raise DataError("training labels are single-class")
        if np.bincount(y).min() >= 2:
            Xs, y = smote(Xs, y, k=5, rng=np.random.default_rng([seed, 1]))
    best_hp, _ = grid_search(Xs, y, p["task"], grid, seed=seed)
    model = fit_gbdt(Xs, y, p["task"], best_hp)

    params = {"command": "train", "task": p["task"], "subset": p["subset"],
              "alpha": float(p["alpha"]), "r_min": float(p["r_min"]),
              "grid": _grid_params(grid), "iva_pcs": int(p["iva_pcs"]),
              "acceleration": bool(p["acceleration"])}
    save_gbdt(model, args.out, extra={
        "config_hash": config_hash(params), "seed": seed,
        "subset": p["subset"],
        "selected_columns": [int(c) for c in cols],
        "selected_names": [names[c] for c in cols],
        "preprocessor": {"mean": pre.mean.tolist(), "std": pre.std.tolist()},
    })
    write_run_log(args.out + ".runlog.json", "train", params, seed,
                  {"features": args.features, "labels": args.labels},
                  [args.out], time.monotonic() - t0)
    print(f"trained {p['task']}:{p['subset']} on {len(X)} instances, "
          f"{len(cols)} features; model at {args.out}")
    return 0


def _build_eval_dataset(args, p):
    records = parse_frame_stream(args.frames)
    admins = parse_phq_csv(args.phq)
    return build_dataset(records, admins, n_iva_pcs=int(p["iva_pcs"]),
                         acceleration=bool(p["acceleration"]))


_EVAL_DEFAULTS = {
    "scheme": "lopdo", "task": "classification", "subsets": "TSF",
    "seed": 7, "jobs": 1, "grid": None, "min_train_rows": 20,
    "time_rule": "global", "alpha": 0.05, "r_min": 0.20,
    "iva_pcs": 10, "acceleration": False,
}


def cmd_evaluate(args) -> int:
    t0 = time.monotonic()
    p = _resolve(args, _EVAL_DEFAULTS)
    subset_list = [s.strip() for s in str(p["subsets"]).split(",") if s.strip()]
    if not subset_list:
        raise UsageError("no feature subsets given")
    bad = [s for s in subset_list if s not in SUBSETS]
    if bad:
        raise UsageError(f"unknown feature subsets {bad}; choose from {SUBSETS}")
    specs = [EvalSpec(p["task"], s) for s in subset_list]
    grid = _parse_grid(p["grid"])
    dataset = _build_eval_dataset(args, p)
    reports = run_scheme(
        dataset, p["scheme"], specs, int(p["seed"]), grid=grid,
        jobs=int(p["jobs"]), min_train_rows=int(p["min_train_rows"]),
        time_rule=p["time_rule"], alpha=float(p["alpha"]),
        r_min=float(p["r_min"]))

    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    total_violations = 0
    for report in reports:
        label = _safe_label(report)
        rpath = os.path.join(args.out_dir, f"report_{label}.json")
        write_report(report, rpath)
        audit = audit_report(load_report(rpath))
        apath = os.path.join(args.out_dir, f"audit_{label}.json")
        with open(apath, "w", encoding="utf-8") as fh:
            json.dump(audit, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs += [rpath, apath]
        total_violations += audit["n_violations"]
        agg = report["aggregate"]
        headline = (f"auroc={agg['auroc']:.4f}" if agg["auroc"] is not None
                    else f"mae={agg['mae']:.4f}" if agg["mae"] is not None
                    else "no pooled metric")
        print(f"{model_label(report)}: {headline} over {agg['n_instances']} "
              f"instances ({report['n_skipped']}/{report['n_folds']} folds "
              f"skipped); audit violations: {audit['n_violations']}")

    params = {"command": "evaluate", "scheme": p["scheme"], "task": p["task"],
              "subsets": subset_list, "time_rule": p["time_rule"],
              "min_train_rows": int(p["min_train_rows"]),
              "alpha": float(p["alpha"]), "r_min": float(p["r_min"]),
              "grid": _grid_params(grid), "iva_pcs": int(p["iva_pcs"]),
              "acceleration": bool(p["acceleration"])}
    write_run_log(os.path.join(args.out_dir, "evaluate.runlog.json"),
                  "evaluate", params, int(p["seed"]),
                  {"frames": args.frames, "phq": args.phq}, outputs,
                  time.monotonic() - t0)
    if total_violations:
        print(f"internal error: {total_violations} leakage violations",
              file=sys.stderr)
        return 4
    return 0


def cmd_min_days(args) -> int:
    t0 = time.monotonic()
    defaults = dict(_EVAL_DEFAULTS)
    defaults.pop("scheme")
    defaults.pop("subsets")
    defaults["subset"] = "TSF"
    defaults["k_max"] = None
    p = _resolve(args, defaults)
    grid = _parse_grid(p["grid"])
    dataset = _build_eval_dataset(args, p)
    curve = min_days_curve(
        dataset, EvalSpec(p["task"], p["subset"]), int(p["seed"]), grid=grid,
        k_max=None if p["k_max"] is None else int(p["k_max"]),
        jobs=int(p["jobs"]), min_train_rows=int(p["min_train_rows"]),
        time_rule=p["time_rule"], alpha=float(p["alpha"]),
        r_min=float(p["r_min"]))

    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, f"min_days_{p['task']}_{p['subset']}")
    write_report(curve, stem + ".json")
    write_min_days_csv(curve, stem + ".csv")
    write_min_days_svg(curve, stem + ".svg")

    params = {"command": "min-days", "task": p["task"], "subset": p["subset"],
              "time_rule": p["time_rule"], "k_max": curve["k_max"],
              "min_train_rows": int(p["min_train_rows"]),
              "alpha": float(p["alpha"]), "r_min": float(p["r_min"]),
              "grid": _grid_params(grid), "iva_pcs": int(p["iva_pcs"]),
              "acceleration": bool(p["acceleration"])}
    write_run_log(stem + ".runlog.json", "min-days", params, int(p["seed"]),
                  {"frames": args.frames, "phq": args.phq},
                  [stem + ".json", stem + ".csv", stem + ".svg"],
                  time.monotonic() - t0)
    defined = [pt for pt in curve["points"] if pt["auroc"] is not None
               or pt["mae"] is not None]
    print(f"curve over k=1..{curve['k_max']} written to {stem}.json "
          f"({len(defined)} defined points)")
    return 0


def cmd_report(args) -> int:
    t0 = time.monotonic()
    artifacts = [load_report(path) for path in args.artifacts]
    check_lineage(artifacts)
    model_reports = [a for a in artifacts if a["kind"] == "model_report"]
    curves = [a for a in artifacts if a["kind"] == "min_days_curve"]
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    if model_reports:
        table = os.path.join(args.out_dir, "metrics.csv")
        write_metrics_csv(model_reports, table)
        outputs.append(table)
        for r in model_reports:
            if r["task"] == "classification" \
                    and r["aggregate"]["n_instances"] > 0:
                path = os.path.join(args.out_dir, f"roc_{_safe_label(r)}.svg")
                write_roc_svg(r, path)
                outputs.append(path)
    for curve in curves:
        stem = os.path.join(args.out_dir,
                            f"min_days_{curve['task']}_{curve['subset']}")
        write_min_days_csv(curve, stem + ".csv")
        write_min_days_svg(curve, stem + ".svg")
        outputs += [stem + ".csv", stem + ".svg"]
    params = {"command": "report", "n_model_reports": len(model_reports),
              "n_curves": len(curves)}
    write_run_log(os.path.join(args.out_dir, "report.runlog.json"), "report",
                  params, None, {str(i): p for i, p in enumerate(args.artifacts)},
                  outputs, time.monotonic() - t0)
    print(f"wrote {len(outputs)} artifacts to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(sp, *flags):
    sp.add_argument("--config", help="JSON file of defaults; flags win")
    if "seed" in flags:
        sp.add_argument("--seed", type=int)
    if "jobs" in flags:
        sp.add_argument("--jobs", type=int, help="worker processes; output "
                        "is identical for every value")
    if "grid" in flags:
        sp.add_argument("--grid", help="'default', 'compact', inline JSON or "
                        "a JSON file of hyperparameter value lists")
    if "inventory" in flags:
        sp.add_argument("--iva-pcs", type=int, dest="iva_pcs")
        sp.add_argument("--acceleration", action=argparse.BooleanOptionalAction,
                        default=None)
    if "screenp" in flags:
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--r-min", type=float, dest="r_min")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facepheno",
        description="Day-level facial-behavior features and depressive-episode "
                    "models from phone face-frame streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a seeded synthetic cohort")
    sp.add_argument("--out", required=True)
    sp.add_argument("--participants", type=int)
    sp.add_argument("--days", type=int)
    sp.add_argument("--effect-size", type=float, dest="effect_size")
    sp.add_argument("--stagger-days", type=int, dest="stagger_days")
    sp.add_argument("--au-failure-rate", type=float, dest="au_failure_rate")
    sp.add_argument("--landmark-failure-rate", type=float,
                    dest="landmark_failure_rate")
    sp.add_argument("--baseline-sd", type=float, dest="baseline_sd")
    _add_common(sp, "seed")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("featurize", help="frames to day feature vectors")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pca-out", dest="pca_out")
    _add_common(sp, "inventory")
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("label", help="PHQ administrations to episode windows")
    sp.add_argument("--phq", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--target-policy", dest="target_policy",
                    choices=("end", "start"))
    _add_common(sp)
    sp.set_defaults(func=cmd_label)

    sp = sub.add_parser("screen", help="correlation screen of day features")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    _add_common(sp, "screenp", "inventory")
    sp.set_defaults(func=cmd_screen)

    sp = sub.add_parser("train", help="fit one model on all labeled days")
    sp.add_argument("--features", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--task", choices=TASKS)
    sp.add_argument("--subset", choices=SUBSETS)
    _add_common(sp, "seed", "grid", "screenp", "inventory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="leave-one-out evaluation")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--phq", required=True)
    sp.add_argument("--out-dir", required=True, dest="out_dir")
    sp.add_argument("--scheme", choices=("lopo", "lopdo"))
    sp.add_argument("--task", choices=TASKS)
    sp.add_argument("--subsets", help="comma-separated feature subsets")
    sp.add_argument("--min-train-rows", type=int, dest="min_train_rows")
    sp.add_argument("--time-rule", choices=("global", "participant"),
                    dest="time_rule")
    _add_common(sp, "seed", "jobs", "grid", "screenp", "inventory")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("min-days", help="metric vs days of observation")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--phq", required=True)
    sp.add_argument("--out-dir", required=True, dest="out_dir")
    sp.add_argument("--task", choices=TASKS)
    sp.add_argument("--subset", choices=SUBSETS)
    sp.add_argument("--k-max", type=int, dest="k_max")
    sp.add_argument("--min-train-rows", type=int, dest="min_train_rows")
    sp.add_argument("--time-rule", choices=("global", "participant"),
                    dest="time_rule")
    _add_common(sp, "seed", "jobs", "grid", "screenp", "inventory")
    sp.set_defaults(func=cmd_min_days)

    sp = sub.add_parser("report", help="tables and figures from report JSONs")
    sp.add_argument("artifacts", nargs="+")
    sp.add_argument("--out-dir", required=True, dest="out_dir")
    _add_common(sp)
    sp.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        import traceback
        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
