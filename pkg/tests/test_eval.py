"""Metric implementations against brute-force oracles, and the CV driver."""

import json

import numpy as np
import pytest

from mlsqc.boosting import GbtParams
from mlsqc.core import PointCloud, assign_folds, grid_partition
from mlsqc.evaluation import (
    LabeledSamples,
    average_precision,
    importance_correlation,
    mean_ci,
    prf_at_threshold,
    roc_auc,
    run_cv,
    write_report,
    write_scores_csv,
)
from mlsqc.forest import ForestParams
from mlsqc.forest import predict_proba as rf_predict

T975_DF4 = 2.7764451052  # Student-t 97.5th percentile, 4 degrees of freedom


def pair_auc(scores, labels):
    """O(n^2) pair counting: wins plus half-credit ties over all
    positive/negative pairs."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    pos = s[y == 1]
    neg = s[y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (pos.size * neg.size)


def sweep_ap(scores, labels):
    """Evaluate precision/recall at every distinct score as a threshold
    (descending) and accumulate step areas."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    thresholds = np.unique(s)[::-1]
    ap = 0.0
    r_prev = 0.0
    for t in thresholds:
        pred = s >= t
        tp = int(np.sum(pred & (y == 1)))
        prec = tp / int(pred.sum())
        rec = tp / n_pos
        ap += (rec - r_prev) * prec
        r_prev = rec
    return ap


class TestRocAuc:
    def test_perfect_ranking(self):
        assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0

    def test_hand_counted_pairs(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_all_tied_scores(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="undefined AUC"):
            roc_auc([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError, match="undefined AUC"):
            roc_auc([0.1, 0.2], [0, 0])

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 60))
            y = rng.integers(0, 2, size=n)
            if y.min() == y.max():
                y[0] = 1 - y[0]
            if rng.random() < 0.5:
                s = rng.random(n)
            else:
                s = rng.integers(0, 5, size=n) / 4.0
            assert roc_auc(s, y) == pytest.approx(pair_auc(s, y), abs=1e-9)

    def test_reversed_ranking(self):
        assert roc_auc([0.2, 0.3, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


class TestAveragePrecision:
    def test_hand_example(self):
        assert average_precision([0.9, 0.5, 0.4], [1, 0, 1]) == pytest.approx(5 / 6)

    def test_positives_ranked_first(self):
        assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError, match="no positive"):
            average_precision([0.4, 0.6], [0, 0])

    def test_all_positive_is_one(self):
        assert average_precision([0.3, 0.9], [1, 1]) == pytest.approx(1.0)

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(2, 60))
            y = rng.integers(0, 2, size=n)
            if y.sum() == 0:
                y[0] = 1
            if rng.random() < 0.5:
                s = rng.random(n)
            else:
                s = rng.integers(0, 5, size=n) / 4.0
            assert average_precision(s, y) == pytest.approx(sweep_ap(s, y),
                                                            abs=1e-9)


class TestPrfAtThreshold:
    def test_f1_is_harmonic_mean(self):
        s = [0.9, 0.1, 0.9, 0.1]
        y = [1, 1, 0, 0]
        p, r, f1 = prf_at_threshold(s, y)
        assert (p, r) == (0.5, 0.5)
        assert f1 == pytest.approx(0.5)

    def test_all_correct(self):
        assert prf_at_threshold([0.9, 0.8, 0.1], [1, 1, 0]) == (1.0, 1.0, 1.0)

    def test_hand_counts(self):
        p, r, f1 = prf_at_threshold([0.9, 0.8, 0.3, 0.7, 0.6], [1, 1, 1, 0, 0])
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(2 / 3)
        assert f1 == pytest.approx(4 / 7)

    def test_nothing_predicted_positive(self):
        assert prf_at_threshold([0.1, 0.2], [1, 0], 0.5) == (0.0, 0.0, 0.0)

    def test_boundary_score_counts_positive(self):
        p, r, _ = prf_at_threshold([0.5], [1], 0.5)
        assert (p, r) == (1.0, 1.0)

    def test_recall_non_increasing_in_threshold(self):
        rng = np.random.default_rng(2)
        s = rng.random(200)
        y = rng.integers(0, 2, size=200)
        y[0] = 1
        recalls = [prf_at_threshold(s, y, t)[1] for t in np.linspace(0, 1, 21)]
        assert np.all(np.diff(recalls) <= 0)


class TestMeanCi:
    def test_published_roc_auc_row(self):
        folds = [0.8576, 0.8719, 0.8818, 0.8775, 0.8835]
        mean, hw = mean_ci(folds)
        assert round(mean, 4) == 0.8745
        v = np.asarray(folds)
        expected_hw = T975_DF4 * v.std(ddof=1) / np.sqrt(5)
        assert hw == pytest.approx(expected_hw, abs=1e-9)
        assert hw == pytest.approx(0.012958, abs=1e-6)

    def test_published_recall_row(self):
        mean, hw = mean_ci([0.7520, 0.7690, 0.7788, 0.7941, 0.7985])
        assert round(mean, 4) == 0.7785
        assert hw == pytest.approx(0.023526, abs=1e-6)

    def test_identical_values_zero_width(self):
        mean, hw = mean_ci([0.25, 0.25, 0.25])
        assert mean == 0.25
        assert hw == 0.0

    def test_short_input_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            mean_ci([0.5])

    def test_two_values_use_t_with_one_dof(self):
        mean, hw = mean_ci([0.0, 1.0])
        assert mean == 0.5
        # t_{0.975,1} = 12.7062; s = sqrt(0.5); hw = t * s / sqrt(2)
        assert hw == pytest.approx(12.706204736 * np.sqrt(0.5) / np.sqrt(2),
                                   rel=1e-9)


class TestImportanceCorrelation:
    def test_identical_vectors(self):
        v = [0.5, 0.2, 0.3]
        assert importance_correlation(v, v) == pytest.approx(1.0)

    def test_negated_vector(self):
        v = np.array([0.5, 0.2, 0.3])
        assert importance_correlation(v, -v) == pytest.approx(-1.0)

    def test_matches_covariance_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.random(21)
        b = rng.random(21)
        num = np.sum((a - a.mean()) * (b - b.mean()))
        den = np.sqrt(np.sum((a - a.mean()) ** 2) * np.sum((b - b.mean()) ** 2))
        assert importance_correlation(a, b) == pytest.approx(num / den, abs=1e-12)

    def test_constant_vector_rejected(self):
        with pytest.raises(ValueError, match="undefined correlation"):
            importance_correlation([0.5, 0.5, 0.5], [0.1, 0.2, 0.7])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="lengths"):
            importance_correlation([0.1, 0.9], [0.1, 0.2, 0.7])


def make_spatial_samples(seed=0, n=2000, n_noise=3, with_cells=True):
    """Synthetic spatially-folded samples: one informative feature plus
    noise columns, folds assigned by 10 m grid cells over a 50x50 extent."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 50, size=(n, 2))
    cloud = PointCloud(np.column_stack([xy, np.zeros(n)]))
    part = grid_partition(cloud, cell_size=10.0)
    folds = assign_folds(part, n_folds=5, seed=seed)
    latent = rng.normal(size=n)
    y = (latent + 0.8 * rng.normal(size=n) > 0).astype(np.int64)
    feats = np.column_stack([latent + 0.3 * rng.normal(size=n)]
                            + [rng.normal(size=n) for _ in range(n_noise)])
    names = tuple(["signal"] + [f"noise_{i}" for i in range(n_noise)])
    return LabeledSamples(
        features=feats, labels=y, fold=folds.point_folds, feature_names=names,
        point_index=np.arange(n, dtype=np.int64),
        cell_row=part.cells[:, 0] if with_cells else None,
        cell_col=part.cells[:, 1] if with_cells else None,
    )


FAST_RF = ForestParams(n_estimators=20, max_depth=12)
FAST_GBT = GbtParams(num_boost_round=60, early_stopping_rounds=15)


class TestRunCv:
    def test_report_structure_and_bounds(self):
        samples = make_spatial_samples(seed=4)
        report = run_cv(samples, FAST_RF, FAST_GBT, seed=7)
        for kind in ("random_forest", "gradient_boosted_trees"):
            reports = report.fold_reports[kind]
            assert len(reports) == 5
            for fr in reports:
                for name, value in fr.metrics().items():
                    assert 0.0 <= value <= 1.0, (kind, name)
                p, r = fr.precision, fr.recall
                expected_f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
                assert fr.f1 == pytest.approx(expected_f1, abs=1e-9)
            agg = report.aggregates[kind]
            for metric, entry in agg.items():
                assert entry["mean"] == pytest.approx(np.mean(entry["folds"]))
            imp = report.importances[kind]
            assert sum(imp.values()) == pytest.approx(1.0, abs=1e-9)
            assert report.top_features[kind][0] == "signal"
        assert -1.0 <= report.importance_r_all <= 1.0
        assert report.models is None

    def test_signal_detected(self):
        samples = make_spatial_samples(seed=5)
        report = run_cv(samples, FAST_RF, FAST_GBT, seed=1)
        for kind in ("random_forest", "gradient_boosted_trees"):
            assert report.aggregates[kind]["roc_auc"]["mean"] > 0.75

    def test_scores_cover_every_point_once(self):
        samples = make_spatial_samples(seed=6, n=1500)
        report = run_cv(samples, FAST_RF, FAST_GBT, seed=2)
        for key in ("rf_score", "gbt_score"):
            s = report.scores[key]
            assert np.all(np.isfinite(s))
            assert np.all((s >= 0) & (s <= 1))
        np.testing.assert_array_equal(report.scores["fold"], samples.fold)
        np.testing.assert_array_equal(report.scores["label"], samples.labels)

    def test_determinism(self):
        samples = make_spatial_samples(seed=8, n=1200)
        a = run_cv(samples, FAST_RF, FAST_GBT, seed=3)
        b = run_cv(samples, FAST_RF, FAST_GBT, seed=3)
        assert a.to_dict() == b.to_dict()
        np.testing.assert_array_equal(a.scores["rf_score"], b.scores["rf_score"])
        np.testing.assert_array_equal(a.scores["gbt_score"], b.scores["gbt_score"])

    def test_fold_missing_class_named(self):
        samples = make_spatial_samples(seed=9, n=800)
        y = samples.labels.copy()
        y[samples.fold == 3] = 1
        broken = LabeledSamples(samples.features, y, samples.fold,
                                samples.feature_names, samples.point_index,
                                samples.cell_row, samples.cell_col)
        with pytest.raises(ValueError, match="fold 3"):
            run_cv(broken, FAST_RF, FAST_GBT)

    def test_too_few_folds_rejected(self):
        samples = make_spatial_samples(seed=10, n=400)
        single = LabeledSamples(samples.features, samples.labels,
                                np.zeros_like(samples.fold),
                                samples.feature_names)
        with pytest.raises(ValueError, match="2 folds"):
            run_cv(single, FAST_RF, FAST_GBT)

    def test_kept_models_reproduce_heldout_scores(self):
        samples = make_spatial_samples(seed=11, n=1000)
        report = run_cv(samples, FAST_RF, FAST_GBT, seed=4, keep_models=True)
        rf_models = report.models["random_forest"]
        assert len(rf_models) == 5
        fold_ids = sorted(int(f) for f in np.unique(samples.fold))
        for model, f in zip(rf_models, fold_ids):
            mask = samples.fold == f
            std = model.standardizer
            assert std is not None
            transformed = (samples.features[mask] - std.mean) / std.scale
            got = rf_predict(model, transformed)
            np.testing.assert_allclose(got, report.scores["rf_score"][mask],
                                       atol=1e-12)

    def test_permutation_null_auc_near_half(self):
        samples = make_spatial_samples(seed=12, n=2000)
        rng = np.random.default_rng(99)
        shuffled = LabeledSamples(samples.features,
                                  rng.permutation(samples.labels),
                                  samples.fold, samples.feature_names,
                                  samples.point_index, samples.cell_row,
                                  samples.cell_col)
        report = run_cv(shuffled, FAST_RF, FAST_GBT, seed=5)
        for kind in ("random_forest", "gradient_boosted_trees"):
            assert 0.42 <= report.aggregates[kind]["roc_auc"]["mean"] <= 0.58

    def test_row_carve_fallback_without_cells(self):
        samples = make_spatial_samples(seed=13, n=900, with_cells=False)
        report = run_cv(samples, FAST_RF, FAST_GBT, seed=6)
        assert np.all(np.isfinite(report.scores["gbt_score"]))

    def test_report_and_scores_files(self, tmp_path):
        samples = make_spatial_samples(seed=14, n=800)
        report = run_cv(samples, FAST_RF, FAST_GBT, seed=7)
        jpath = tmp_path / "report.json"
        cpath = tmp_path / "scores.csv"
        write_report(report, jpath, extra={"generated_at": "fixed"})
        write_scores_csv(report, cpath)
        doc = json.loads(jpath.read_text())
        assert doc["generated_at"] == "fixed"
        assert set(doc["models"]) == {"random_forest", "gradient_boosted_trees"}
        assert "all_features" in doc["importance_correlation"]
        lines = cpath.read_text().strip().split("\n")
        assert lines[0] == "point_index,fold,label,rf_score,gbt_score"
        assert len(lines) == 801
