"""Gradient-boosted trees with a logistic objective and early stopping.

Second-order (Newton) boosting on histogram-binned features. Each round
computes gradients g = p - y and hessians h = p(1 - p), both scaled by
scale_pos_weight on positive rows, samples rows and columns at the
configured rates, and grows one depth-limited regression tree maximizing

    gain = 1/2 [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - (G_L+G_R)^2/(H_L+H_R+lam)]

over histogram bin boundaries, with leaf weight -G/(H+lam). Margins start
at logit 0 (probability 0.5). Validation logloss is tracked per round,
unweighted; training stops once it has failed to improve for
early_stopping_rounds consecutive rounds, and best_iteration is the argmin.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._kernels.gbt import add_tree_codes, add_tree_raw, fit_tree_hist, predict_margin
from .features import Standardizer

__all__ = [
    "GbtParams",
    "GbtTree",
    "GbtModel",
    "fit_gbt",
    "predict_proba",
    "gbt_importance",
    "grad_hess",
    "logloss",
    "save_model",
    "load_model",
]

MODEL_KIND = "gradient_boosted_trees"


@dataclass(frozen=True)
class GbtParams:
    """Boosting hyperparameters; scale_pos_weight None means adaptive
    (negative-to-positive count ratio of the training set)."""

    num_boost_round: int = 1000
    eta: float = 0.05
    max_depth: int = 8
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    early_stopping_rounds: int = 50
    n_bins: int = 256
    lam: float = 1.0
    min_child_weight: float = 1.0
    gamma: float = 0.0
    scale_pos_weight: float | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "num_boost_round": self.num_boost_round,
            "eta": self.eta,
            "max_depth": self.max_depth,
            "subsample": self.subsample,
            "colsample_bytree": self.colsample_bytree,
            "early_stopping_rounds": self.early_stopping_rounds,
            "n_bins": self.n_bins,
            "lambda": self.lam,
            "min_child_weight": self.min_child_weight,
            "gamma": self.gamma,
            "scale_pos_weight": self.scale_pos_weight,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass
class GbtTree:
    """One regression tree. feature[i] < 0 marks a leaf; internal nodes
    send rows with value <= threshold to the left child."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray


@dataclass
class GbtModel:
    params: GbtParams
    feature_names: tuple[str, ...]
    trees: list[GbtTree]
    best_iteration: int
    importance: np.ndarray
    val_history: np.ndarray
    metadata: dict
    standardizer: Standardizer | None = None
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def flattened(self) -> tuple:
        """Concatenated node arrays plus per-tree offsets, cached."""
        if self._flat is None:
            offsets = np.zeros(len(self.trees) + 1, dtype=np.int64)
            for i, t in enumerate(self.trees):
                offsets[i + 1] = offsets[i] + t.feature.shape[0]
            if self.trees:
                feature = np.concatenate([t.feature for t in self.trees])
                threshold = np.concatenate([t.threshold for t in self.trees])
                left = np.concatenate([t.left for t in self.trees])
                right = np.concatenate([t.right for t in self.trees])
                weight = np.concatenate([t.weight for t in self.trees])
            else:
                feature = np.empty(0, dtype=np.int64)
                threshold = np.empty(0, dtype=np.float64)
                left = np.empty(0, dtype=np.int64)
                right = np.empty(0, dtype=np.int64)
                weight = np.empty(0, dtype=np.float64)
            self._flat = (feature, threshold, left, right, weight, offsets[:-1])
        return self._flat


def _bin_edges(col: np.ndarray, n_bins: int) -> np.ndarray:
    """Boundary values for one feature: the sorted unique values (minus the
    last) when few enough, otherwise deduplicated quantiles. A value x lands
    in bin searchsorted(edges, x, side='left'), so bin <= j is exactly
    x <= edges[j]."""
    u = np.unique(col)
    if u.size <= 1:
        return np.empty(0, dtype=np.float64)
    if u.size <= n_bins:
        return u[:-1].astype(np.float64)
    qs = np.quantile(col, np.arange(1, n_bins) / n_bins)
    return np.unique(qs)


def _bin_matrix(X: np.ndarray, n_bins: int) -> tuple[np.ndarray, list[np.ndarray]]:
    n, f = X.shape
    codes = np.empty((n, f), dtype=np.uint8)
    edges_per_feature = []
    for j in range(f):
        edges = _bin_edges(X[:, j], n_bins)
        codes[:, j] = np.searchsorted(edges, X[:, j], side="left")
        edges_per_feature.append(edges)
    return codes, edges_per_feature


def grad_hess(y: np.ndarray, margins: np.ndarray,
              scale_pos_weight: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-row gradient and hessian of the weighted logistic loss at the
    given margins; positive rows carry weight scale_pos_weight."""
    y = np.asarray(y, dtype=np.float64)
    p = expit(np.asarray(margins, dtype=np.float64))
    w = np.where(y == 1, scale_pos_weight, 1.0)
    return (p - y) * w, p * (1.0 - p) * w


def logloss(y: np.ndarray, p: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-15, 1.0 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _validate_matrix(X: np.ndarray, name: str) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2D matrix")
    return X


def fit_gbt(X_train, y_train, X_val, y_val, params: GbtParams | None = None,
            feature_names=None) -> GbtModel:
    if params is None:
        params = GbtParams()
    X = _validate_matrix(X_train, "X_train")
    y = np.asarray(y_train).astype(np.int64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError("X_train and y_train row counts differ")
    Xv = np.asarray(X_val, dtype=np.float64)
    if Xv.ndim != 2 or Xv.shape[0] == 0:
        raise ValueError("empty validation set")
    if Xv.shape[1] != X.shape[1]:
        raise ValueError("validation feature arity does not match training")
    yv = np.asarray(y_val).astype(np.int64).ravel()
    if yv.shape[0] != Xv.shape[0]:
        raise ValueError("X_val and y_val row counts differ")
    Xv = np.ascontiguousarray(Xv)

    n, n_features = X.shape
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != n:
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("degenerate labels: need both classes 0 and 1")
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(n_features))
    else:
        feature_names = tuple(feature_names)
        if len(feature_names) != n_features:
            raise ValueError("feature_names length does not match X_train")

    spw = params.scale_pos_weight
    if spw is None:
        spw = n_neg / n_pos

    codes, edges_per_feature = _bin_matrix(X, params.n_bins)
    n_edges = np.array([e.size for e in edges_per_feature], dtype=np.int64)
    edges_off = np.zeros(n_features + 1, dtype=np.int64)
    np.cumsum(n_edges, out=edges_off[1:])
    edges_flat = (np.concatenate(edges_per_feature)
                  if edges_off[-1] > 0 else np.empty(0, dtype=np.float64))

    cap = 2 ** (params.max_depth + 1) + 1
    feat_buf = np.empty(cap, dtype=np.int64)
    bin_buf = np.empty(cap, dtype=np.int64)
    left_buf = np.empty(cap, dtype=np.int64)
    right_buf = np.empty(cap, dtype=np.int64)
    weight_buf = np.empty(cap, dtype=np.float64)
    importance_raw = np.zeros(n_features, dtype=np.float64)

    n_sample = max(1, int(np.floor(params.subsample * n)))
    n_cols = max(1, int(np.floor(params.colsample_bytree * n_features)))
    yf = y.astype(np.float64)
    margins = np.zeros(n, dtype=np.float64)
    margins_val = np.zeros(Xv.shape[0], dtype=np.float64)

    trees: list[GbtTree] = []
    history: list[float] = []
    best_val = np.inf
    best_iter = -1
    since_best = 0
    for r in range(params.num_boost_round):
        g, h = grad_hess(yf, margins, spw)

        rng = np.random.default_rng([params.seed, r])
        if n_sample < n:
            rows = np.sort(rng.choice(n, size=n_sample, replace=False))
        else:
            rows = np.arange(n, dtype=np.int64)
        if n_cols < n_features:
            cols = np.sort(rng.choice(n_features, size=n_cols, replace=False))
        else:
            cols = np.arange(n_features, dtype=np.int64)

        node_count = fit_tree_hist(
            codes, g, h, rows, cols, n_edges, params.max_depth, params.lam,
            params.min_child_weight, params.gamma,
            feat_buf, bin_buf, left_buf, right_buf, weight_buf, importance_raw)

        feature = feat_buf[:node_count].copy()
        bin_id = bin_buf[:node_count].copy()
        threshold = np.zeros(node_count, dtype=np.float64)
        internal = feature >= 0
        if internal.any():
            threshold[internal] = edges_flat[edges_off[feature[internal]]
                                             + bin_id[internal]]
        tree = GbtTree(feature, threshold, left_buf[:node_count].copy(),
                       right_buf[:node_count].copy(), weight_buf[:node_count].copy())
        trees.append(tree)

        add_tree_codes(codes, feature, bin_id, tree.left, tree.right,
                       tree.weight, params.eta, margins)
        add_tree_raw(Xv, feature, threshold, tree.left, tree.right,
                     tree.weight, params.eta, margins_val)

        vll = logloss(yv, expit(margins_val))
        history.append(vll)
        if vll < best_val:
            best_val = vll
            best_iter = r
            since_best = 0
        else:
            since_best += 1
            if since_best >= params.early_stopping_rounds:
                break

    total = importance_raw.sum()
    importance = importance_raw / total if total > 0 else importance_raw
    metadata = {
        "n_rows": n,
        "n_validation_rows": int(Xv.shape[0]),
        "class_counts": [n_neg, n_pos],
        "scale_pos_weight": float(spw),
        "rounds_completed": len(trees),
        "best_val_logloss": (float(best_val) if np.isfinite(best_val) else None),
        "assumed_defaults": {"lambda": params.lam,
                             "min_child_weight": params.min_child_weight,
                             "gamma": params.gamma},
    }
    return GbtModel(params=params, feature_names=feature_names, trees=trees,
                    best_iteration=best_iter, importance=importance,
                    val_history=np.array(history, dtype=np.float64),
                    metadata=metadata)


def predict_proba(model: GbtModel, X, up_to: int | None = None) -> np.ndarray:
    """sigmoid of the summed margin over trees 0..up_to inclusive; up_to
    defaults to the model's best_iteration."""
    X = _validate_matrix(X, "X")
    if X.shape[1] != model.n_features:
        raise ValueError("feature arity does not match the trained model")
    if up_to is None:
        up_to = model.best_iteration
    n_trees = up_to + 1
    if n_trees < 0 or n_trees > len(model.trees):
        raise ValueError("up_to is outside the trained tree range")
    feature, threshold, left, right, weight, offsets = model.flattened()
    if n_trees == 0:
        return np.full(X.shape[0], 0.5)
    margin = predict_margin(X, feature, threshold, left, right, weight,
                            offsets, model.params.eta, n_trees)
    return expit(margin)


def gbt_importance(model: GbtModel) -> dict[str, float]:
    return {name: float(v) for name, v in zip(model.feature_names, model.importance)}


def _tree_to_dict(t: GbtTree) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "weight": t.weight.tolist(),
    }


def _tree_from_dict(d: dict) -> GbtTree:
    return GbtTree(
        feature=np.asarray(d["feature"], dtype=np.int64),
        threshold=np.asarray(d["threshold"], dtype=np.float64),
        left=np.asarray(d["left"], dtype=np.int64),
        right=np.asarray(d["right"], dtype=np.int64),
        weight=np.asarray(d["weight"], dtype=np.float64),
    )


def save_model(model: GbtModel, path) -> None:
    doc = {
        "model_kind": MODEL_KIND,
        "feature_names": list(model.feature_names),
        "params": model.params.to_dict(),
        "best_iteration": model.best_iteration,
        "metadata": model.metadata,
        "importance": model.importance.tolist(),
        "val_history": model.val_history.tolist(),
        "trees": [_tree_to_dict(t) for t in model.trees],
    }
    if model.standardizer is not None:
        doc["standardizer"] = model.standardizer.to_dict()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> GbtModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("model_kind") != MODEL_KIND:
        raise ValueError(f"not a {MODEL_KIND} model file")
    std = (Standardizer.from_dict(doc["standardizer"])
           if "standardizer" in doc else None)
    return GbtModel(
        params=GbtParams.from_dict(doc["params"]),
        feature_names=tuple(doc["feature_names"]),
        trees=[_tree_from_dict(t) for t in doc["trees"]],
        best_iteration=int(doc["best_iteration"]),
        importance=np.asarray(doc["importance"], dtype=np.float64),
        val_history=np.asarray(doc["val_history"], dtype=np.float64),
        metadata=doc["metadata"],
        standardizer=std,
    )
