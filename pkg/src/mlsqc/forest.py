"""Random forest for binary quality classification.

Per tree, a seeded fraction of rows is drawn without replacement and a
Gini-greedy tree is grown to a depth cap. Class imbalance is handled by
balanced sample weights w_c = n / (2 n_c). Very large training sets are
pre-subsampled once (seeded, logged) before any tree is fit. Feature
importance is the impurity decrease accumulated per split, averaged over
trees and normalized to sum 1.
"""

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import forest as _kern

MODEL_KIND = "random_forest"


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    max_depth: int = 20
    max_samples: float = 0.5
    min_samples_leaf: int = 1
    class_weight: Optional[str] = "balanced"
    n_jobs: int = 1
    seed: int = 0
    subsample_cap_rows: int = 1000000
    subsample_cap_fraction: float = 0.3

    def to_dict(self):
        return {
            "n_estimators": self.n_estimators, "max_depth": self.max_depth,
            "max_samples": self.max_samples, "min_samples_leaf": self.min_samples_leaf,
            "class_weight": self.class_weight, "n_jobs": self.n_jobs, "seed": self.seed,
            "subsample_cap_rows": self.subsample_cap_rows,
            "subsample_cap_fraction": self.subsample_cap_fraction,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass
class Tree:
    feature: np.ndarray     # int64, -1 on leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob1: np.ndarray


@dataclass
class ForestModel:
    params: ForestParams
    feature_names: list
    trees: list
    importance: np.ndarray
    metadata: dict
    standardizer: Optional[object] = None
    _flat: Optional[tuple] = field(default=None, repr=False)

    @property
    def n_features(self):
        return len(self.feature_names)

    def flattened(self):
        if self._flat is None:
            offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                offsets[i + 1] = offsets[i] + t.feature.shape[0]
            self._flat = (
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([t.left for t in self.trees]),
                np.concatenate([t.right for t in self.trees]),
                np.concatenate([t.prob1 for t in self.trees]),
                offsets,
            )
        return self._flat


def _fit_one_tree(X, y, w, params, tree_index):
    rng = np.random.default_rng(params.seed + tree_index)
    n = X.shape[0]
    m = int(np.floor(params.max_samples * n))
    m = max(m, 2)
    rows = rng.choice(n, size=m, replace=False)
    V = np.ascontiguousarray(X[rows])
    yv = np.ascontiguousarray(y[rows])
    wv = np.ascontiguousarray(w[rows])
    order = np.ascontiguousarray(np.argsort(V, axis=0, kind="stable").T)

    cap = 2 * m + 1
    feature = np.empty(cap, dtype=np.int64)
    threshold = np.empty(cap, dtype=np.float64)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    prob1 = np.empty(cap, dtype=np.float64)
    imp = np.zeros(X.shape[1], dtype=np.float64)
    count = _kern.grow_tree(V, yv, wv, order, params.max_depth,
                            params.min_samples_leaf, feature, threshold,
                            left, right, prob1, imp)
    tree = Tree(feature=feature[:count].copy(), threshold=threshold[:count].copy(),
                left=left[:count].copy(), right=right[:count].copy(),
                prob1=prob1[:count].copy())
    return tree, imp


def fit_forest(X, y, params=None, feature_names=None):
    """Fit the forest; deterministic given (X, y, params)."""
    params = params or ForestParams()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2D matrix")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")
    classes = np.unique(y)
    if not np.array_equal(classes, [0, 1]):
        raise ValueError("degenerate labels: need both classes 0 and 1")
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(X.shape[1])]

    n_original = X.shape[0]
    subsampled = False
    if n_original > params.subsample_cap_rows:
        keep = int(np.floor(params.subsample_cap_fraction * n_original))
        rng = np.random.default_rng([params.seed, 0x5ca1ab1e])
        rows = rng.choice(n_original, size=keep, replace=False)
        X = np.ascontiguousarray(X[rows])
        y = y[rows]
        subsampled = True
        print(f"forest: training rows {n_original} exceed cap "
              f"{params.subsample_cap_rows}; subsampled to {keep}", file=sys.stderr)
        if not np.array_equal(np.unique(y), [0, 1]):
            raise ValueError("degenerate labels: need both classes 0 and 1")

    n = X.shape[0]
    n1 = int(y.sum())
    n0 = n - n1
    if params.class_weight == "balanced":
        w_per_class = np.array([n / (2.0 * n0), n / (2.0 * n1)])
    elif params.class_weight is None:
        w_per_class = np.array([1.0, 1.0])
    else:
        raise ValueError(f"unsupported class_weight '{params.class_weight}'")
    w = w_per_class[y]

    indices = range(params.n_estimators)
    if params.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=params.n_jobs) as pool:
            results = list(pool.map(lambda t: _fit_one_tree(X, y, w, params, t), indices))
    else:
        results = [_fit_one_tree(X, y, w, params, t) for t in indices]

    trees = [r[0] for r in results]
    imp_sum = np.zeros(X.shape[1])
    for _, imp in results:
        imp_sum += imp
    imp_mean = imp_sum / params.n_estimators
    total = imp_mean.sum()
    importance = imp_mean / total if total > 0 else imp_mean

    metadata = {
        "n_rows": int(n), "n_rows_original": int(n_original),
        "class_counts": [int(n0), int(n1)], "subsampled": subsampled,
        "assumed_defaults": {"criterion": "gini",
                             "min_samples_leaf": params.min_samples_leaf},
    }
    return ForestModel(params=params, feature_names=list(feature_names),
                       trees=trees, importance=importance, metadata=metadata)


def predict_proba(model, X):
    """Mean per-tree leaf probability of the qualified class."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError("feature arity does not match the trained model")
    feature, threshold, left, right, prob1, offsets = model.flattened()
    return _kern.predict_forest(X, feature, threshold, left, right, prob1, offsets)


def forest_importance(model):
    """Importance by feature name, normalized to sum 1."""
    return {name: float(v) for name, v in zip(model.feature_names, model.importance)}


def save_model(model, path):
    doc = {
        "model_kind": MODEL_KIND,
        "feature_names": model.feature_names,
        "params": model.params.to_dict(),
        "metadata": model.metadata,
        "importance": model.importance.tolist(),
        "standardizer": model.standardizer.to_dict() if model.standardizer else None,
        "trees": [{
            "feature": t.feature.tolist(),
            "threshold": t.threshold.tolist(),
            "left": t.left.tolist(),
            "right": t.right.tolist(),
            "prob1": t.prob1.tolist(),
        } for t in model.trees],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path):
    from .features import Standardizer
    with open(path, "r") as fh:
        doc = json.load(fh)
    if doc.get("model_kind") != MODEL_KIND:
        raise ValueError(f"{path}: not a random_forest model file")
    trees = [Tree(feature=np.asarray(t["feature"], dtype=np.int64),
                  threshold=np.asarray(t["threshold"], dtype=np.float64),
                  left=np.asarray(t["left"], dtype=np.int64),
                  right=np.asarray(t["right"], dtype=np.int64),
                  prob1=np.asarray(t["prob1"], dtype=np.float64))
             for t in doc["trees"]]
    std = Standardizer.from_dict(doc["standardizer"]) if doc.get("standardizer") else None
    return ForestModel(params=ForestParams.from_dict(doc["params"]),
                       feature_names=doc["feature_names"], trees=trees,
                       importance=np.asarray(doc["importance"], dtype=np.float64),
                       metadata=doc["metadata"], standardizer=std)
