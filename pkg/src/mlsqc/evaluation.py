"""Discrimination metrics and the spatially-blocked cross-validation driver.

Metrics: ROC-AUC as the rank statistic (ties get half credit, which equals
trapezoidal integration of the ROC curve), average precision as the
step-wise sum P_n (R_n - R_{n-1}) over descending distinct-score thresholds,
and precision/recall/F1 at a fixed probability threshold with score >=
threshold counting as a positive prediction.

run_cv holds out one fold at a time, fits the standardizer on the training
side only, trains both model families, scores the held-out fold, and
aggregates fold metrics as mean plus a Student-t 95% confidence half-width.
The boosted model's early-stopping validation set is carved from the
training side by spatial cell, never from the test fold.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import boosting
from . import forest
from .boosting import GbtParams
from .features import apply_standardizer, fit_standardizer
from .forest import ForestParams
from .ingest import FeatureTable

__all__ = [
    "METRIC_NAMES",
    "LabeledSamples",
    "FoldReport",
    "AggregateReport",
    "roc_auc",
    "average_precision",
    "prf_at_threshold",
    "mean_ci",
    "importance_correlation",
    "run_cv",
    "write_report",
    "write_scores_csv",
]

METRIC_NAMES = ("roc_auc", "ap", "precision", "recall", "f1")

_SALT_RF = 1
_SALT_GBT = 2
_SALT_VAL = 3


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape[0] != y.shape[0]:
        raise ValueError("scores and labels lengths differ")
    if s.shape[0] == 0:
        raise ValueError("empty inputs")
    y = y.astype(np.int64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    tied pairs counting one half."""
    s, y = _scores_labels(scores, labels)
    n = s.shape[0]
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: labels contain a single class")
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    group_start = np.r_[True, s_sorted[1:] != s_sorted[:-1]]
    gid = np.cumsum(group_start) - 1
    counts = np.bincount(gid)
    starts = np.r_[0, np.cumsum(counts[:-1])]
    avg_rank = starts + (counts + 1) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = avg_rank[gid]
    rank_sum_pos = ranks[y == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum of precision at each distinct descending-score threshold weighted
    by the recall increment there; tied scores share one threshold."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision undefined: no positive labels")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    cum_tp = np.cumsum(y_sorted)
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    idx = np.flatnonzero(last_of_group)
    tp = cum_tp[idx].astype(np.float64)
    predicted = (idx + 1).astype(np.float64)
    precision = tp / predicted
    recall = tp / n_pos
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


def prf_at_threshold(scores, labels, threshold: float = 0.5):
    """Precision, recall, and F1 with score >= threshold predicting positive.
    Precision is 0 when nothing is predicted positive; F1 is 0 when both
    precision and recall are 0."""
    s, y = _scores_labels(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def mean_ci(fold_values, confidence: float = 0.95):
    """Arithmetic mean and Student-t half-width t_{1-(1-c)/2, n-1} * s/sqrt(n)
    with the sample standard deviation."""
    v = np.asarray(fold_values, dtype=np.float64).ravel()
    if v.shape[0] < 2:
        raise ValueError("mean_ci needs at least 2 values")
    mean = float(np.mean(v))
    s = float(np.std(v, ddof=1))
    t = float(stats.t.ppf(0.5 + confidence / 2.0, v.shape[0] - 1))
    return mean, float(t * s / np.sqrt(v.shape[0]))


def importance_correlation(imp_a, imp_b) -> float:
    """Pearson correlation of two aligned importance vectors."""
    a = np.asarray(imp_a, dtype=np.float64).ravel()
    b = np.asarray(imp_b, dtype=np.float64).ravel()
    if a.shape[0] != b.shape[0]:
        raise ValueError("importance vectors have different lengths")
    if a.shape[0] < 2:
        raise ValueError("importance vectors need at least 2 entries")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.sum(da * da))
    nb = np.sqrt(np.sum(db * db))
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined correlation: constant importance vector")
    return float(np.sum(da * db) / (na * nb))


@dataclass
class LabeledSamples:
    """Feature matrix with labels and a spatial fold id per row. cell_row and
    cell_col carry each row's blocking-grid cell so validation carves can
    respect spatial structure; they are optional for plain matrices."""

    features: np.ndarray
    labels: np.ndarray
    fold: np.ndarray
    feature_names: tuple[str, ...]
    point_index: np.ndarray | None = None
    cell_row: np.ndarray | None = None
    cell_col: np.ndarray | None = None

    @classmethod
    def from_table(cls, table: FeatureTable, feature_names) -> "LabeledSamples":
        if table.label is None:
            raise ValueError("feature table has no label column")
        if table.fold is None:
            raise ValueError("feature table has no fold column")
        return cls(
            features=np.asarray(table.features, dtype=np.float64),
            labels=np.asarray(table.label, dtype=np.int64),
            fold=np.asarray(table.fold, dtype=np.int64),
            feature_names=tuple(feature_names),
            point_index=np.asarray(table.point_index, dtype=np.int64),
            cell_row=(None if table.cell_row is None
                      else np.asarray(table.cell_row, dtype=np.int64)),
            cell_col=(None if table.cell_col is None
                      else np.asarray(table.cell_col, dtype=np.int64)),
        )


@dataclass(frozen=True)
class FoldReport:
    fold: int
    roc_auc: float
    ap: float
    precision: float
    recall: float
    f1: float
    n_test: int
    extra: dict | None = None

    def metrics(self) -> dict:
        return {"roc_auc": self.roc_auc, "ap": self.ap,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1}

    def to_dict(self) -> dict:
        doc = {"fold": self.fold, "n_test": self.n_test, **self.metrics()}
        if self.extra:
            doc.update(self.extra)
        return doc


@dataclass
class AggregateReport:
    fold_reports: dict
    aggregates: dict
    importances: dict
    importance_r_all: float
    importance_r_top: float | None
    top_features: dict
    config: dict
    scores: dict
    models: dict | None = None

    def to_dict(self) -> dict:
        models = {}
        for kind, reports in self.fold_reports.items():
            models[kind] = {
                "folds": [r.to_dict() for r in reports],
                "aggregate": self.aggregates[kind],
                "importance": self.importances[kind],
                "top_features": self.top_features[kind],
            }
        return {
            "config": self.config,
            "models": models,
            "importance_correlation": {
                "all_features": self.importance_r_all,
                "top_features": self.importance_r_top,
            },
        }


def _derive_seed(root_seed: int, salt: int, fold: int) -> int:
    state = np.random.SeedSequence([root_seed, salt, fold]).generate_state(1)
    return int(state[0])


def _carve_validation(train_idx, samples, rng, fraction):
    """Indices (into train_idx) held out for early stopping: a fraction of
    the spatial cells when cell columns exist, a fraction of rows otherwise."""
    if samples.cell_row is not None and samples.cell_col is not None:
        key = (samples.cell_row[train_idx].astype(np.int64) << 21) \
            | samples.cell_col[train_idx].astype(np.int64)
        cells = np.unique(key)
        rng.shuffle(cells)
        n_val_cells = max(1, int(round(fraction * cells.size)))
        if n_val_cells >= cells.size:
            n_val_cells = cells.size - 1
        if n_val_cells < 1:
            raise ValueError("too few cells to carve a validation set")
        val_mask = np.isin(key, cells[:n_val_cells])
    else:
        n = train_idx.shape[0]
        n_val = max(1, int(round(fraction * n)))
        if n_val >= n:
            raise ValueError("too few rows to carve a validation set")
        perm = rng.permutation(n)
        val_mask = np.zeros(n, dtype=bool)
        val_mask[perm[:n_val]] = True
    return val_mask


def run_cv(samples: LabeledSamples, rf_params: ForestParams | None = None,
           gbt_params: GbtParams | None = None, seed: int = 0, *,
           threshold: float = 0.5, top_k: int = 20, confidence: float = 0.95,
           validation_fraction: float = 0.1, keep_models: bool = False,
           progress=None) -> AggregateReport:
    """Hold out each fold once, train both models on the rest, and aggregate.

    Per fold: standardizer fitted on training rows only and applied to both
    sides; the forest trains on the full training side; the boosted model
    gives up a seeded validation carve for early stopping. Per-fold model
    seeds are derived from the root seed with fixed salts.
    """
    if rf_params is None:
        rf_params = ForestParams()
    if gbt_params is None:
        gbt_params = GbtParams()
    X = np.asarray(samples.features, dtype=np.float64)
    y = np.asarray(samples.labels, dtype=np.int64)
    fold = np.asarray(samples.fold, dtype=np.int64)
    n = X.shape[0]
    if y.shape[0] != n or fold.shape[0] != n:
        raise ValueError("features, labels, and fold lengths differ")
    fold_ids = np.unique(fold)
    if fold_ids.size < 2:
        raise ValueError("need at least 2 folds")
    for f in fold_ids:
        labels_f = y[fold == f]
        if labels_f.min() == labels_f.max():
            raise ValueError(f"fold {int(f)} is missing a class")

    feature_names = tuple(samples.feature_names)
    n_features = X.shape[1]
    rf_reports: list[FoldReport] = []
    gbt_reports: list[FoldReport] = []
    imp_rf = np.zeros(n_features)
    imp_gbt = np.zeros(n_features)
    rf_scores = np.full(n, np.nan)
    gbt_scores = np.full(n, np.nan)
    models = {"random_forest": [], "gradient_boosted_trees": []} if keep_models else None
    derived_seeds = {}

    for f in fold_ids:
        f = int(f)
        test_mask = fold == f
        train_idx = np.flatnonzero(~test_mask)
        test_idx = np.flatnonzero(test_mask)
        std = fit_standardizer(X[train_idx])
        X_train = apply_standardizer(std, X[train_idx])
        X_test = apply_standardizer(std, X[test_idx])
        y_train = y[train_idx]
        y_test = y[test_idx]

        rf_seed = _derive_seed(seed, _SALT_RF, f)
        gbt_seed = _derive_seed(seed, _SALT_GBT, f)
        val_seed = _derive_seed(seed, _SALT_VAL, f)
        derived_seeds[str(f)] = {"rf": rf_seed, "gbt": gbt_seed,
                                 "validation": val_seed}

        rf_model = forest.fit_forest(X_train, y_train,
                                     replace(rf_params, seed=rf_seed),
                                     feature_names=feature_names)
        rf_model.standardizer = std
        s_rf = forest.predict_proba(rf_model, X_test)
        rf_scores[test_idx] = s_rf

        rng = np.random.default_rng(val_seed)
        val_mask = _carve_validation(train_idx, samples, rng,
                                     validation_fraction)
        fit_rows = ~val_mask
        if y_train[fit_rows].min() == y_train[fit_rows].max():
            raise ValueError(
                f"validation carve left fold {f} training single-class")
        gbt_model = boosting.fit_gbt(
            X_train[fit_rows], y_train[fit_rows],
            X_train[val_mask], y_train[val_mask],
            replace(gbt_params, seed=gbt_seed), feature_names=feature_names)
        gbt_model.standardizer = std
        s_gbt = boosting.predict_proba(gbt_model, X_test)
        gbt_scores[test_idx] = s_gbt

        for kind, s, model_reports in (("rf", s_rf, rf_reports),
                                       ("gbt", s_gbt, gbt_reports)):
            p, r, f1 = prf_at_threshold(s, y_test, threshold)
            extra = None
            if kind == "gbt":
                extra = {"best_iteration": gbt_model.best_iteration,
                         "rounds_completed": len(gbt_model.trees)}
            model_reports.append(FoldReport(
                fold=f, roc_auc=roc_auc(s, y_test),
                ap=average_precision(s, y_test),
                precision=p, recall=r, f1=f1, n_test=int(test_idx.size),
                extra=extra))

        imp_rf += rf_model.importance
        imp_gbt += gbt_model.importance
        if keep_models:
            models["random_forest"].append(rf_model)
            models["gradient_boosted_trees"].append(gbt_model)
        if progress is not None:
            progress(f"fold {f}: rf auc={rf_reports[-1].roc_auc:.4f} "
                     f"ap={rf_reports[-1].ap:.4f}; "
                     f"gbt auc={gbt_reports[-1].roc_auc:.4f} "
                     f"ap={gbt_reports[-1].ap:.4f} "
                     f"(best_iteration={gbt_model.best_iteration})")

    imp_rf /= fold_ids.size
    imp_gbt /= fold_ids.size

    aggregates = {}
    fold_reports = {"random_forest": rf_reports,
                    "gradient_boosted_trees": gbt_reports}
    for kind, reports in fold_reports.items():
        agg = {}
        for metric in METRIC_NAMES:
            values = [getattr(r, metric) for r in reports]
            mean, half = mean_ci(values, confidence)
            agg[metric] = {"mean": mean, "ci_half_width": half,
                           "folds": values}
        aggregates[kind] = agg

    r_all = importance_correlation(imp_rf, imp_gbt)
    k = min(top_k, n_features)
    combined = (imp_rf + imp_gbt) / 2.0
    top_idx = np.argsort(-combined, kind="stable")[:k]
    try:
        r_top = importance_correlation(imp_rf[top_idx], imp_gbt[top_idx])
    except ValueError:
        r_top = None

    importances = {
        "random_forest": {nm: float(v) for nm, v in zip(feature_names, imp_rf)},
        "gradient_boosted_trees": {nm: float(v)
                                   for nm, v in zip(feature_names, imp_gbt)},
    }
    top_features = {
        "random_forest": [feature_names[i]
                          for i in np.argsort(-imp_rf, kind="stable")[:k]],
        "gradient_boosted_trees": [feature_names[i]
                                   for i in np.argsort(-imp_gbt, kind="stable")[:k]],
    }

    point_index = (samples.point_index if samples.point_index is not None
                   else np.arange(n, dtype=np.int64))
    scores = {"point_index": point_index, "fold": fold, "label": y,
              "rf_score": rf_scores, "gbt_score": gbt_scores}
    config = {
        "seed": seed,
        "threshold": threshold,
        "top_k": top_k,
        "confidence": confidence,
        "validation_fraction": validation_fraction,
        "n_points": n,
        "n_folds": int(fold_ids.size),
        "class_counts": [int(np.sum(y == 0)), int(np.sum(y == 1))],
        "rf": rf_params.to_dict(),
        "gbt": gbt_params.to_dict(),
        "derived_seeds": derived_seeds,
    }
    return AggregateReport(fold_reports=fold_reports, aggregates=aggregates,
                           importances=importances, importance_r_all=r_all,
                           importance_r_top=r_top, top_features=top_features,
                           config=config, scores=scores, models=models)


def write_report(report: AggregateReport, path, extra: dict | None = None) -> None:
    import json

    doc = report.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_scores_csv(report: AggregateReport, path) -> None:
    s = report.scores
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("point_index,fold,label,rf_score,gbt_score\n")
        for i in range(s["label"].shape[0]):
            fh.write(f"{int(s['point_index'][i])},{int(s['fold'][i])},"
                     f"{int(s['label'][i])},{s['rf_score'][i]:.9g},"
                     f"{s['gbt_score'][i]:.9g}\n")
