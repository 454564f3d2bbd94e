"""Cloud-to-cloud distances and binary quality labels.

C2C is directed: for each scanned point, the Euclidean distance to its
nearest reference point. Points at or beyond the cutoff (default 0.100 m)
are dropped from analysis; retained points are qualified (1) when strictly
below the quality threshold t_d (default 0.020 m), else unqualified (0).
Both comparisons are strict so boundary behavior is deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .core import PointCloud


@dataclass(frozen=True)
class C2CResult:
    distances: np.ndarray     # (n,) meters, >= 0
    retained: np.ndarray      # (n,) bool, distance < cutoff
    cutoff: float


def c2c_distances(mls, reference_index):
    """Per-point distance from each MLS point to its nearest reference point."""
    if reference_index.count == 0:
        raise ValueError("empty reference cloud")
    xyz = mls.xyz if isinstance(mls, PointCloud) else np.asarray(mls, dtype=np.float64)
    _, dist = reference_index.query(xyz, 1)
    return dist[:, 0]


def apply_cutoff(distances, cutoff=0.100):
    """Retention mask: strictly below the cutoff."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    return np.asarray(distances, dtype=np.float64) < cutoff


def label(distances, t_d=0.020, cutoff=0.100):
    """Binary quality labels: 1 where distance < t_d (strict), else 0."""
    if t_d <= 0:
        raise ValueError("threshold must be positive")
    if t_d >= cutoff:
        raise ValueError("threshold must be below cutoff")
    return (np.asarray(distances, dtype=np.float64) < t_d).astype(np.int8)


def compute_c2c(mls, reference_index, cutoff=0.100):
    d = c2c_distances(mls, reference_index)
    return C2CResult(distances=d, retained=apply_cutoff(d, cutoff), cutoff=float(cutoff))
