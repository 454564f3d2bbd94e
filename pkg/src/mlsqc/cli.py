"""Command-line pipeline over the file formats of the ingest module.

Subcommands compose through the feature-table CSV: `label` writes distance
and label columns with feature placeholders, `features` fills the feature,
neighborhood-size, and spatial-fold columns, and `train-eval` consumes the
completed table. All randomness flows from the single root seed in the run
configuration; per-stage seeds are derived from it with fixed salts and
logged to standard error. Machine-readable outputs go to files only.

Exit codes: 0 success, 2 bad input or configuration, 3 degenerate data,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import boosting, forest, synth
from .core import PointCloud, assign_folds, build_index, grid_partition
from .evaluation import LabeledSamples, run_cv, write_report, write_scores_csv
from .features import FEATURE_NAMES, apply_standardizer, extract_all
from .forest import ForestParams
from .boosting import GbtParams
from .ingest import (FeatureTable, load_config, merge_config, read_cloud,
                     read_feature_table, write_cloud, write_feature_table)
from .labeling import apply_cutoff, c2c_distances, label as label_distances

CONFIG_ENV = "MLSQC_CONFIG"
FIXED_CLOCK = "1970-01-01T00:00:00Z"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_IO = 4

_SALT_SYNTH = 21
_SALT_FOLDS = 22

# ValueError messages that signal a data pathology rather than bad usage
_DEGENERATE_MARKERS = (
    "missing a class",
    "single class",
    "single-class",
    "degenerate",
    "too few",
    "need at least 2 folds",
    "no positive labels",
    "empty reference",
    "empty cloud",
)


class UsageError(Exception):
    pass


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _derive_seed(root_seed: int, salt: int) -> int:
    return int(np.random.SeedSequence([root_seed, salt]).generate_state(1)[0])


def _parse_overrides(tokens: list[str]) -> dict:
    """--section.key=value tokens into a nested override dict. Values are
    parsed as JSON, falling back to plain strings."""
    override: dict = {}
    for token in tokens:
        if not token.startswith("--") or "=" not in token:
            raise UsageError(f"unrecognized argument: {token}")
        key, _, raw = token[2:].partition("=")
        if not key:
            raise UsageError(f"unrecognized argument: {token}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = override
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"conflicting override for '{key}'")
        node[parts[-1]] = value
    return override


def _effective_config(args, extra: list[str]) -> dict:
    path = args.config or os.environ.get(CONFIG_ENV) or None
    config = load_config(path)
    return merge_config(config, _parse_overrides(extra))


def _scene_from_config(config: dict, seed: int) -> synth.SceneSpec:
    section = dict(config["synth"])
    section.pop("error")
    return synth.SceneSpec(
        floor_extent=tuple(section["floor_extent"]),
        wall_height=section["wall_height"],
        perimeter_walls=section["perimeter_walls"],
        interior_walls=tuple(tuple(w) for w in section["interior_walls"]),
        n_boxes=section["n_boxes"],
        box_size_range=tuple(section["box_size_range"]),
        box_height_range=tuple(section["box_height_range"]),
        clutter_density=section["clutter_density"],
        density=section["density"],
        mls_fraction=section["mls_fraction"],
        seed=seed,
    )


def _error_from_config(config: dict) -> synth.ErrorModel:
    return synth.ErrorModel(**config["synth"]["error"])


def cmd_synth(config: dict, out_dir: str) -> int:
    seed = _derive_seed(config["seed"], _SALT_SYNTH)
    _log(f"seeds: root={config['seed']} synth={seed}")
    spec = _scene_from_config(config, seed)
    result = synth.synthesize(spec, _error_from_config(config))
    os.makedirs(out_dir, exist_ok=True)
    write_cloud(result.reference, os.path.join(out_dir, "reference.ply"))
    write_cloud(result.mls, os.path.join(out_dir, "mls.ply"))
    synth.write_truth(result, os.path.join(out_dir, "truth.csv"))
    _log(f"reference: {result.reference.xyz.shape[0]} points; "
         f"mls: {result.mls.xyz.shape[0]} points")
    return EXIT_OK


def cmd_label(config: dict, mls_path: str, ref_path: str, out_path: str) -> int:
    mls = read_cloud(mls_path)
    reference = read_cloud(ref_path)
    cutoff = config["labeling"]["cutoff"]
    threshold = config["labeling"]["threshold"]
    distances = c2c_distances(mls, build_index(reference))
    retained = apply_cutoff(distances, cutoff)
    kept = np.flatnonzero(retained)
    labels = label_distances(distances[kept], t_d=threshold, cutoff=cutoff)
    n = distances.shape[0]
    _log(f"cutoff {cutoff:g}: retained {kept.size} of {n} points "
         f"({n - kept.size} dropped); qualified {int(labels.sum())} "
         f"unqualified {int(labels.size - labels.sum())}")
    table = FeatureTable(
        point_index=kept.astype(np.int64),
        features=np.full((kept.size, len(FEATURE_NAMES)), np.nan),
        optn=np.full(kept.size, -1, dtype=np.int64),
        c2c=distances[kept],
        label=labels.astype(np.int64),
    )
    write_feature_table(table, out_path)
    return EXIT_OK


def cmd_features(config: dict, mls_path: str, table_path: str,
                 out_path: str | None) -> int:
    cloud = read_cloud(mls_path)
    table = read_feature_table(table_path)
    if table.n == 0:
        raise ValueError(f"{table_path}: empty cloud (no rows to extract)")
    if int(table.point_index.max()) >= cloud.xyz.shape[0]:
        raise ValueError(f"{table_path}: point_index exceeds cloud size")
    section = config["features"]
    retained = PointCloud(np.ascontiguousarray(cloud.xyz[table.point_index]))
    feats, optn, status = extract_all(
        retained, k_min=section["k_min"], k_max=section["k_max"],
        step=section["k_step"], bin_size=section["bin_size"],
        leaf_size=section["leaf_size"])
    ok = status == 0
    if not ok.any():
        raise ValueError("degenerate cloud: no point has a valid neighborhood")
    _log(f"features: {int(ok.sum())} of {table.n} points "
         f"({int((~ok).sum())} degenerate rows dropped)")

    fold_seed = _derive_seed(config["seed"], _SALT_FOLDS)
    _log(f"seeds: root={config['seed']} folds={fold_seed}")
    ok_cloud = PointCloud(np.ascontiguousarray(retained.xyz[ok]))
    partition = grid_partition(ok_cloud, config["folds"]["cell_size"])
    folds = assign_folds(partition, config["folds"]["n_folds"], seed=fold_seed)

    out = FeatureTable(
        point_index=table.point_index[ok],
        features=feats[ok],
        optn=optn[ok],
        c2c=None if table.c2c is None else table.c2c[ok],
        label=None if table.label is None else table.label[ok],
        fold=folds.point_folds.astype(np.int64),
        cell_row=partition.cells[:, 0].astype(np.int64),
        cell_col=partition.cells[:, 1].astype(np.int64),
    )
    write_feature_table(out, out_path or table_path)
    return EXIT_OK


def cmd_train_eval(config: dict, table_path: str, out_dir: str,
                   fixed_clock: bool) -> int:
    table = read_feature_table(table_path)
    samples = LabeledSamples.from_table(table, FEATURE_NAMES)
    if np.isnan(samples.features).any():
        raise ValueError(
            f"{table_path}: feature columns not computed (placeholder rows)")
    rf_params = ForestParams(**config["rf"])
    gbt_section = dict(config["gbt"])
    validation_fraction = gbt_section.pop("validation_fraction")
    gbt_params = GbtParams.from_dict(gbt_section)
    section = config["eval"]

    report = run_cv(
        samples, rf_params, gbt_params, seed=config["seed"],
        threshold=section["threshold"], top_k=section["top_k"],
        confidence=section["confidence"],
        validation_fraction=validation_fraction,
        keep_models=True, progress=_log)
    _log("seeds: " + json.dumps({"root": config["seed"],
                                 "derived": report.config["derived_seeds"]},
                                sort_keys=True))

    os.makedirs(out_dir, exist_ok=True)
    clock = FIXED_CLOCK if fixed_clock else (
        datetime.datetime.now(datetime.timezone.utc)
        .strftime("%Y-%m-%dT%H:%M:%SZ"))
    write_report(report, os.path.join(out_dir, "report.json"),
                 extra={"generated_at": clock, "run_config": config})
    write_scores_csv(report, os.path.join(out_dir, "scores.csv"))
    for kind, prefix, saver in (
            ("random_forest", "rf", forest.save_model),
            ("gradient_boosted_trees", "gbt", boosting.save_model)):
        for fold_report, model in zip(report.fold_reports[kind],
                                      report.models[kind]):
            saver(model, os.path.join(out_dir,
                                      f"{prefix}_fold{fold_report.fold}.json"))
    _log(f"wrote report.json, scores.csv, and "
         f"{2 * len(report.fold_reports['random_forest'])} model files "
         f"to {out_dir}")
    return EXIT_OK


def cmd_predict(model_path: str, table_path: str, out_path: str) -> int:
    with open(model_path, "r") as fh:
        kind = json.load(fh).get("model_kind")
    if kind == forest.MODEL_KIND:
        model = forest.load_model(model_path)
        predict = forest.predict_proba
    elif kind == boosting.MODEL_KIND:
        model = boosting.load_model(model_path)
        predict = boosting.predict_proba
    else:
        raise ValueError(f"{model_path}: unknown model kind {kind!r}")

    table = read_feature_table(table_path)
    X = table.features
    if len(model.feature_names) != X.shape[1]:
        raise ValueError(
            f"feature arity mismatch: model has {len(model.feature_names)} "
            f"features, table has {X.shape[1]}")
    if np.isnan(X).any():
        raise ValueError(
            f"{table_path}: feature columns not computed (placeholder rows)")
    if model.standardizer is not None:
        X = apply_standardizer(model.standardizer, X)
    scores = predict(model, X)
    with open(out_path, "w") as fh:
        fh.write("point_index,score\n")
        for i in range(table.n):
            fh.write(f"{int(table.point_index[i])},{scores[i]:.9g}\n")
    _log(f"scored {table.n} points with {kind}")
    return EXIT_OK


def cmd_report(report_path: str) -> int:
    with open(report_path, "r") as fh:
        doc = json.load(fh)
    print(f"report generated at {doc.get('generated_at', 'unknown time')}")
    for kind, section in doc["models"].items():
        agg = section["aggregate"]
        parts = []
        for metric in ("roc_auc", "ap", "precision", "recall", "f1"):
            m = agg[metric]
            parts.append(f"{metric} {m['mean']:.4f} +- {m['ci_half_width']:.4f}")
        print(f"{kind}: " + " | ".join(parts))
        print(f"  top features: {', '.join(section['top_features'][:10])}")
    corr = doc["importance_correlation"]
    r_top = corr["top_features"]
    print(f"importance correlation: all {corr['all_features']:.4f}, "
          f"top {'n/a' if r_top is None else format(r_top, '.4f')}")
    config = doc["config"]
    print(f"run: {config['n_points']} points, {config['n_folds']} folds, "
          f"seed {config['seed']}, class counts {config['class_counts']}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlsqc",
        description="Point-level quality evaluation of scanned point clouds.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help=f"run configuration JSON (default: ${CONFIG_ENV})")

    p = sub.add_parser("synth", help="generate a synthetic scene pair")
    common(p)
    p.add_argument("out_dir")

    p = sub.add_parser("label", help="C2C distances and quality labels")
    common(p)
    p.add_argument("mls")
    p.add_argument("reference")
    p.add_argument("out")

    p = sub.add_parser("features", help="fill feature and fold columns")
    common(p)
    p.add_argument("mls")
    p.add_argument("table")
    p.add_argument("--out", default=None,
                   help="output table (default: rewrite input)")

    p = sub.add_parser("train-eval", help="cross-validated training report")
    common(p)
    p.add_argument("table")
    p.add_argument("out_dir")
    p.add_argument("--fixed-clock", action="store_true",
                   help="use a constant timestamp for byte-identical reports")

    p = sub.add_parser("predict", help="score a table with a saved model")
    common(p)
    p.add_argument("model")
    p.add_argument("table")
    p.add_argument("out")

    p = sub.add_parser("report", help="print a human-readable digest")
    p.add_argument("report")
    return parser


def _dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command == "report":
        if extra:
            raise UsageError(f"unrecognized argument: {extra[0]}")
        return cmd_report(args.report)
    if args.command == "predict":
        if extra:
            raise UsageError(f"unrecognized argument: {extra[0]}")
        return cmd_predict(args.model, args.table, args.out)
    config = _effective_config(args, extra)
    if args.command == "synth":
        return cmd_synth(config, args.out_dir)
    if args.command == "label":
        return cmd_label(config, args.mls, args.reference, args.out)
    if args.command == "features":
        return cmd_features(config, args.mls, args.table, args.out)
    if args.command == "train-eval":
        return cmd_train_eval(config, args.table, args.out_dir,
                              args.fixed_clock)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        return _dispatch(argv)
    except UsageError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except ValueError as exc:
        _log(f"error: {exc}")
        message = str(exc)
        if any(marker in message for marker in _DEGENERATE_MARKERS):
            return EXIT_DEGENERATE
        return EXIT_USAGE
    except OSError as exc:
        _log(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
