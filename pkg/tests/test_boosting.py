"""Boosting module: binning, Newton steps, early stopping, serialization."""

import numpy as np
import pytest

from mlsqc.boosting import (
    GbtModel,
    GbtParams,
    GbtTree,
    _bin_edges,
    fit_gbt,
    gbt_importance,
    grad_hess,
    load_model,
    logloss,
    predict_proba,
    save_model,
)


def weighted_logloss_sum(y, margins, spw):
    p = 1.0 / (1.0 + np.exp(-margins))
    w = np.where(y == 1, spw, 1.0)
    return np.sum(-w * (y * np.log(p) + (1 - y) * np.log(1 - p)))


def traverse(tree: GbtTree, row: np.ndarray) -> float:
    node = 0
    while tree.feature[node] >= 0:
        if row[tree.feature[node]] <= tree.threshold[node]:
            node = tree.left[node]
        else:
            node = tree.right[node]
    return tree.weight[node]


def oracle_proba(model: GbtModel, X: np.ndarray, up_to: int) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        margin = sum(traverse(model.trees[t], X[i]) for t in range(up_to + 1))
        out[i] = 1.0 / (1.0 + np.exp(-model.params.eta * margin))
    return out


def make_classification(n, n_features, seed, imbalance=0.5, noise=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_features))
    score = X[:, 0] + 0.5 * X[:, min(1, n_features - 1)] + noise * rng.normal(size=n)
    thr = np.quantile(score, 1.0 - imbalance)
    y = (score > thr).astype(np.int64)
    return X, y


class TestGradHess:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        y = rng.integers(0, 2, size=200).astype(np.float64)
        m = rng.uniform(-4.0, 4.0, size=200)
        for spw in (1.0, 3.5):
            g, h = grad_hess(y, m, spw)
            eps = 1e-6
            w = np.where(y == 1, spw, 1.0)

            def loss(margins):
                p = 1.0 / (1.0 + np.exp(-margins))
                return -w * (y * np.log(p) + (1 - y) * np.log(1 - p))

            g_fd = (loss(m + eps) - loss(m - eps)) / (2 * eps)
            gp, _ = grad_hess(y, m + eps, spw)
            gm, _ = grad_hess(y, m - eps, spw)
            h_fd = (gp - gm) / (2 * eps)
            np.testing.assert_allclose(g, g_fd, rtol=1e-4)
            np.testing.assert_allclose(h, h_fd, rtol=1e-4)

    def test_values_at_zero_margin(self):
        y = np.array([0.0, 1.0])
        g, h = grad_hess(y, np.zeros(2), 2.0)
        np.testing.assert_allclose(g, [0.5, -1.0])
        np.testing.assert_allclose(h, [0.25, 0.5])


class TestLogloss:
    def test_perfect_prediction_near_zero(self):
        assert logloss(np.array([1, 1]), np.array([1 - 1e-15, 1 - 1e-15])) < 1e-12

    def test_coin_flip_is_ln2(self):
        y = np.array([0, 1, 1, 0, 1])
        assert logloss(y, np.full(5, 0.5)) == pytest.approx(np.log(2), rel=1e-12)

    def test_random_case_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, size=50)
        p = rng.uniform(0.01, 0.99, size=50)
        expected = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert logloss(y, p) == pytest.approx(expected, rel=1e-12)

    def test_clamps_extreme_probabilities(self):
        v = logloss(np.array([1, 0]), np.array([0.0, 1.0]))
        assert np.isfinite(v)
        assert v == pytest.approx(-np.log(1e-15), rel=1e-3)


class TestBinning:
    def test_few_uniques_every_value_is_a_boundary(self):
        col = np.array([3.0, 1.0, 2.0, 1.0, 3.0])
        edges = _bin_edges(col, 256)
        np.testing.assert_array_equal(edges, [1.0, 2.0])
        codes = np.searchsorted(edges, col, side="left")
        np.testing.assert_array_equal(codes, [2, 0, 1, 0, 2])

    def test_constant_feature_has_no_boundaries(self):
        assert _bin_edges(np.full(10, 4.2), 256).size == 0

    def test_many_uniques_capped_and_increasing(self):
        rng = np.random.default_rng(0)
        col = rng.normal(size=5000)
        edges = _bin_edges(col, 256)
        assert 1 <= edges.size <= 255
        assert np.all(np.diff(edges) > 0)
        codes = np.searchsorted(edges, col, side="left")
        assert codes.max() <= 255

    def test_boundary_value_goes_left(self):
        edges = _bin_edges(np.array([1.0, 2.0, 3.0]), 256)
        assert np.searchsorted(edges, 1.0, side="left") == 0
        assert np.searchsorted(edges, 1.0000001, side="left") == 1


class TestFitBasics:
    def test_zero_rounds_predicts_half(self):
        X, y = make_classification(40, 3, seed=1)
        model = fit_gbt(X, y, X, y, GbtParams(num_boost_round=0))
        assert model.best_iteration == -1
        assert model.trees == []
        np.testing.assert_array_equal(predict_proba(model, X), np.full(40, 0.5))

    def test_single_stump_leaf_closed_form(self):
        X, y = make_classification(60, 2, seed=2, imbalance=0.4)
        params = GbtParams(num_boost_round=1, max_depth=0, subsample=1.0,
                           colsample_bytree=1.0, scale_pos_weight=2.0)
        model = fit_gbt(X, y, X, y, params)
        tree = model.trees[0]
        assert tree.feature[0] == -1
        w = np.where(y == 1, 2.0, 1.0)
        g = np.sum((0.5 - y) * w)
        h = np.sum(0.25 * w)
        expected_weight = -g / (h + 1.0)
        assert tree.weight[0] == pytest.approx(expected_weight, rel=1e-12)
        p = predict_proba(model, X)
        expected_p = 1.0 / (1.0 + np.exp(-0.05 * expected_weight))
        np.testing.assert_allclose(p, expected_p, rtol=1e-12)

    def test_predictions_match_traversal_oracle(self):
        X, y = make_classification(300, 5, seed=3, imbalance=0.3)
        Xq, _ = make_classification(100, 5, seed=4)
        params = GbtParams(num_boost_round=25, early_stopping_rounds=10, seed=5)
        model = fit_gbt(X, y, X[:60], y[:60], params)
        got = predict_proba(model, Xq)
        want = oracle_proba(model, Xq, model.best_iteration)
        np.testing.assert_allclose(got, want, atol=1e-12)
        assert np.all((got > 0) & (got < 1))

    def test_up_to_selects_prefix(self):
        X, y = make_classification(200, 3, seed=6)
        model = fit_gbt(X, y, X[:50], y[:50],
                        GbtParams(num_boost_round=10, early_stopping_rounds=10))
        p0 = predict_proba(model, X[:20], up_to=0)
        np.testing.assert_allclose(p0, oracle_proba(model, X[:20], 0), atol=1e-12)
        pm1 = predict_proba(model, X[:20], up_to=-1)
        np.testing.assert_array_equal(pm1, np.full(20, 0.5))
        with pytest.raises(ValueError, match="tree range"):
            predict_proba(model, X[:20], up_to=len(model.trees))

    def test_single_class_training_rejected(self):
        X = np.random.default_rng(0).normal(size=(30, 2))
        y = np.ones(30, dtype=np.int64)
        with pytest.raises(ValueError, match="both classes"):
            fit_gbt(X, y, X, y, GbtParams(num_boost_round=2))

    def test_empty_validation_rejected(self):
        X, y = make_classification(30, 2, seed=1)
        with pytest.raises(ValueError, match="empty validation"):
            fit_gbt(X, y, np.empty((0, 2)), np.empty(0), GbtParams(num_boost_round=2))

    def test_arity_mismatch_rejected(self):
        X, y = make_classification(40, 3, seed=1)
        model = fit_gbt(X, y, X, y, GbtParams(num_boost_round=2,
                                              early_stopping_rounds=5))
        with pytest.raises(ValueError, match="arity"):
            predict_proba(model, X[:, :2])
        with pytest.raises(ValueError, match="arity"):
            fit_gbt(X, y, X[:, :2], y, GbtParams(num_boost_round=2))


class TestTrainingDynamics:
    def test_training_logloss_non_increasing_full_batch(self):
        X, y = make_classification(400, 4, seed=8, imbalance=0.5, noise=1.5)
        params = GbtParams(num_boost_round=40, subsample=1.0, colsample_bytree=1.0,
                           early_stopping_rounds=40, scale_pos_weight=1.0)
        model = fit_gbt(X, y, X, y, params)
        losses = [logloss(y, predict_proba(model, X, up_to=r))
                  for r in range(-1, len(model.trees))]
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-12)

    def test_separable_training_loss_strictly_decreases(self):
        rng = np.random.default_rng(9)
        X = np.vstack([rng.uniform(0, 1, size=(40, 2)),
                       rng.uniform(2, 3, size=(40, 2))])
        y = np.repeat([0, 1], 40)
        params = GbtParams(num_boost_round=30, subsample=1.0, colsample_bytree=1.0,
                           early_stopping_rounds=30)
        model = fit_gbt(X, y, X, y, params)
        losses = [logloss(y, predict_proba(model, X, up_to=r))
                  for r in range(-1, len(model.trees))]
        assert np.all(np.diff(losses) < 0)

    def test_no_early_stop_on_noiseless_separable(self):
        rng = np.random.default_rng(10)
        X = np.vstack([rng.uniform(0, 1, size=(40, 2)),
                       rng.uniform(2, 3, size=(40, 2))])
        y = np.repeat([0, 1], 40)
        params = GbtParams(num_boost_round=60, subsample=1.0, colsample_bytree=1.0,
                           early_stopping_rounds=50)
        model = fit_gbt(X, y, X, y, params)
        assert len(model.trees) == 60
        assert model.best_iteration == 59

    def test_early_stopping_picks_argmin_on_overfit(self):
        rng = np.random.default_rng(11)
        n = 120
        signal = rng.normal(size=n)
        noise_id = rng.normal(size=n)
        X = np.column_stack([signal, noise_id])
        y = (signal + 1.2 * rng.normal(size=n) > 0).astype(np.int64)
        Xv = np.column_stack([rng.normal(size=200), rng.normal(size=200)])
        yv = (Xv[:, 0] + 1.2 * rng.normal(size=200) > 0).astype(np.int64)
        params = GbtParams(num_boost_round=400, eta=0.3, max_depth=8,
                           subsample=1.0, colsample_bytree=1.0,
                           early_stopping_rounds=20, min_child_weight=0.0)
        model = fit_gbt(X, y, Xv, yv, params)
        assert model.best_iteration == int(np.argmin(model.val_history))
        assert len(model.trees) < 400
        assert len(model.val_history) == model.best_iteration + 1 + 20
        assert model.metadata["best_val_logloss"] == pytest.approx(
            model.val_history.min())


class TestHistogramConsistency:
    def test_root_split_matches_exhaustive_scan(self):
        rng = np.random.default_rng(12)
        n, F = 240, 4
        X = rng.integers(0, 12, size=(n, F)).astype(np.float64)
        y = ((X[:, 1] > 5) ^ (rng.random(n) < 0.25)).astype(np.int64)
        params = GbtParams(num_boost_round=1, subsample=1.0, colsample_bytree=1.0,
                           scale_pos_weight=1.0)
        model = fit_gbt(X, y, X, y, params)
        tree = model.trees[0]
        assert tree.feature[0] >= 0

        g = 0.5 - y.astype(np.float64)
        h = np.full(n, 0.25)
        G, H = g.sum(), h.sum()
        lam, mcw = 1.0, 1.0
        parent = G * G / (H + lam)
        best = (0.0, -1, np.nan)
        for f in range(F):
            for v in np.unique(X[:, f])[:-1]:
                mask = X[:, f] <= v
                cl = int(mask.sum())
                if cl == 0 or cl == n:
                    continue
                gl, hl = g[mask].sum(), h[mask].sum()
                hr = H - hl
                if hl < mcw or hr < mcw:
                    continue
                gr = G - gl
                gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
                if gain > best[0]:
                    best = (gain, f, v)
        assert tree.feature[0] == best[1]
        assert tree.threshold[0] == best[2]

    def test_tie_break_prefers_lowest_feature(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0],
                      [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]])
        y = np.array([0, 0, 1, 1, 0, 0, 1, 1])
        params = GbtParams(num_boost_round=1, max_depth=1, subsample=1.0,
                           colsample_bytree=1.0, scale_pos_weight=1.0)
        model = fit_gbt(X, y, X, y, params)
        assert model.trees[0].feature[0] == 0


class TestWeighting:
    def test_balanced_data_spw_is_one_and_neutral(self):
        X, y = make_classification(200, 3, seed=13, imbalance=0.5)
        assert y.sum() * 2 == y.size
        params = GbtParams(num_boost_round=15, early_stopping_rounds=15, seed=1)
        auto = fit_gbt(X, y, X[:40], y[:40], params)
        explicit = fit_gbt(X, y, X[:40], y[:40],
                           GbtParams(num_boost_round=15, early_stopping_rounds=15,
                                     seed=1, scale_pos_weight=1.0))
        assert auto.metadata["scale_pos_weight"] == 1.0
        np.testing.assert_array_equal(predict_proba(auto, X),
                                      predict_proba(explicit, X))

    def test_imbalanced_data_records_ratio(self):
        X, y = make_classification(300, 3, seed=14, imbalance=0.25)
        model = fit_gbt(X, y, X[:60], y[:60],
                        GbtParams(num_boost_round=3, early_stopping_rounds=5))
        n_pos = int(y.sum())
        assert model.metadata["scale_pos_weight"] == pytest.approx(
            (y.size - n_pos) / n_pos)

    def test_spw_shifts_predictions_upward(self):
        X, y = make_classification(400, 3, seed=15, imbalance=0.2, noise=1.0)
        base = fit_gbt(X, y, X[:80], y[:80],
                       GbtParams(num_boost_round=30, early_stopping_rounds=30,
                                 scale_pos_weight=1.0))
        weighted = fit_gbt(X, y, X[:80], y[:80],
                           GbtParams(num_boost_round=30, early_stopping_rounds=30))
        assert predict_proba(weighted, X).mean() > predict_proba(base, X).mean()


class TestImportance:
    def test_single_informative_feature_dominates(self):
        rng = np.random.default_rng(16)
        n = 300
        y = rng.integers(0, 2, size=n)
        X = np.column_stack([y + rng.uniform(-0.2, 0.2, size=n),
                             np.full(n, 7.0),
                             rng.normal(size=n)])
        model = fit_gbt(X, y.astype(np.int64), X[:60], y[:60].astype(np.int64),
                        GbtParams(num_boost_round=10, early_stopping_rounds=10,
                                  subsample=1.0, colsample_bytree=1.0),
                        feature_names=("signal", "flat", "noise"))
        imp = gbt_importance(model)
        assert imp["signal"] > 0.9
        assert imp["flat"] == 0.0
        assert sum(imp.values()) == pytest.approx(1.0, abs=1e-12)

    def test_importance_sums_to_one(self):
        X, y = make_classification(250, 6, seed=17)
        model = fit_gbt(X, y, X[:50], y[:50],
                        GbtParams(num_boost_round=8, early_stopping_rounds=8))
        assert model.importance.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(model.importance >= 0)


class TestDeterminism:
    def test_same_seed_identical(self):
        X, y = make_classification(300, 4, seed=18, imbalance=0.4)
        params = GbtParams(num_boost_round=12, early_stopping_rounds=12, seed=42)
        a = fit_gbt(X, y, X[:60], y[:60], params)
        b = fit_gbt(X, y, X[:60], y[:60], params)
        assert len(a.trees) == len(b.trees)
        for ta, tb in zip(a.trees, b.trees):
            np.testing.assert_array_equal(ta.feature, tb.feature)
            np.testing.assert_array_equal(ta.threshold, tb.threshold)
            np.testing.assert_array_equal(ta.weight, tb.weight)
        np.testing.assert_array_equal(a.val_history, b.val_history)
        np.testing.assert_array_equal(predict_proba(a, X), predict_proba(b, X))

    def test_different_seed_differs(self):
        X, y = make_classification(300, 4, seed=18, imbalance=0.4)
        a = fit_gbt(X, y, X[:60], y[:60],
                    GbtParams(num_boost_round=12, early_stopping_rounds=12, seed=1))
        b = fit_gbt(X, y, X[:60], y[:60],
                    GbtParams(num_boost_round=12, early_stopping_rounds=12, seed=2))
        assert not np.array_equal(predict_proba(a, X), predict_proba(b, X))


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        X, y = make_classification(200, 5, seed=19, imbalance=0.35)
        params = GbtParams(num_boost_round=10, early_stopping_rounds=10, seed=3)
        model = fit_gbt(X, y, X[:40], y[:40], params,
                        feature_names=tuple(f"feat_{i}" for i in range(5)))
        path = tmp_path / "gbt.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.params == model.params
        assert loaded.feature_names == model.feature_names
        assert loaded.best_iteration == model.best_iteration
        np.testing.assert_array_equal(loaded.importance, model.importance)
        np.testing.assert_array_equal(loaded.val_history, model.val_history)
        np.testing.assert_array_equal(predict_proba(loaded, X),
                                      predict_proba(model, X))
        assert loaded.metadata["assumed_defaults"]["lambda"] == 1.0

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"model_kind": "random_forest"}')
        with pytest.raises(ValueError, match="gradient_boosted_trees"):
            load_model(path)
