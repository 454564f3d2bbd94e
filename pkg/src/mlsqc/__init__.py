"""Point-level quality classification for mobile laser scanning clouds.

The package grades every point of an MLS cloud against a surveyed
reference: cloud-to-cloud distances provide binary quality labels,
eigenvalue and height features describe each point's neighborhood at its
entropy-optimal scale, and two tree ensembles trained under spatially
blocked cross-validation rank how well local geometry predicts the label.
"""

from .boosting import GbtModel, GbtParams, fit_gbt
from .core import (FoldAssignment, GridPartition, PointCloud, SpatialIndex,
                   assign_folds, build_index, build_index_xy, grid_partition)
from .evaluation import (AggregateReport, FoldReport, LabeledSamples,
                         average_precision, importance_correlation, mean_ci,
                         prf_at_threshold, roc_auc, run_cv, write_report,
                         write_scores_csv)
from .features import (FEATURE_NAMES, Standardizer, apply_standardizer,
                       extract_all, extract_features, fit_standardizer,
                       optimal_k)
from .forest import ForestModel, ForestParams, fit_forest
from .ingest import (FeatureTable, default_config, load_config, merge_config,
                     read_cloud, read_feature_table, write_cloud,
                     write_feature_table)
from .labeling import C2CResult, apply_cutoff, c2c_distances, compute_c2c, label
from .synth import ErrorModel, SceneSpec, default_error_model, default_scene, synthesize

__version__ = "0.1.0"

__all__ = [
    "AggregateReport", "C2CResult", "ErrorModel", "FEATURE_NAMES",
    "FeatureTable", "FoldAssignment", "FoldReport", "ForestModel",
    "ForestParams", "GbtModel", "GbtParams", "GridPartition",
    "LabeledSamples", "PointCloud", "SceneSpec", "SpatialIndex",
    "Standardizer", "__version__", "apply_cutoff", "apply_standardizer",
    "assign_folds", "average_precision", "build_index", "build_index_xy",
    "c2c_distances", "compute_c2c", "default_config", "default_error_model",
    "default_scene", "extract_all", "extract_features", "fit_forest",
    "fit_gbt", "fit_standardizer", "grid_partition", "importance_correlation",
    "label", "load_config", "mean_ci", "merge_config", "optimal_k",
    "prf_at_threshold", "read_cloud", "read_feature_table", "roc_auc",
    "run_cv", "synthesize", "write_cloud", "write_feature_table",
    "write_report", "write_scores_csv",
]
