"""Per-point geometric features at an eigenentropy-optimal neighborhood scale.

A point's neighborhood at candidate size k is itself plus its k nearest
neighbors (k+1 points in total; the +1 in the density formulas). The optimal
k minimizes the eigenentropy of the normalized covariance eigenvalues over a
configurable range, ties resolving to the smallest k.

The 21 features per point, in the canonical column order below: eight 3D
eigenvalue shape descriptors, verticality, four height statistics, 3D and 2D
neighborhood radii and densities, two 2D eigenvalue descriptors, and three
statistics of the point's XY accumulation-map bin.
"""

from dataclasses import dataclass

import numpy as np

from . import core
from ._kernels import geom

FEATURE_NAMES = (
    "linearity",
    "planarity",
    "sphericity",
    "omnivariance",
    "anisotropy",
    "eigenentropy",
    "sum_eigenvalues",
    "change_curvature",
    "verticality",
    "Z_vals",
    "delta_z",
    "std_z",
    "radius_3D",
    "density",
    "radius_2D",
    "density_2D",
    "sum_eigenvalues_2D",
    "ratio_eigenvalues_2D",
    "frequency_acc_map",
    "delta_z_acc_map",
    "std_z_acc_map",
)

STATUS_OK = geom.OK
STATUS_DEGENERATE = geom.DEGENERATE
STATUS_ZERO_RADIUS = geom.ZERO_RADIUS


def _tree_args(index):
    return (index.coords, index.perm, index.split_dim, index.split_val,
            index.left, index.right, index.start, index.end)


def _check_k_range(index, k_min, k_max, step):
    if k_min < 3:
        raise ValueError("k_min must be at least 3")
    if step < 1:
        raise ValueError("step must be at least 1")
    if k_max < k_min:
        raise ValueError("k_max must be at least k_min")
    if k_max > index.count - 1:
        raise ValueError("k_max must be at most cloud size minus 1")


def optimal_k(point_index, index, k_min=10, k_max=100, step=1):
    """Neighborhood size minimizing eigenentropy for one point."""
    _check_k_range(index, k_min, k_max, step)
    qidx = np.asarray([point_index], dtype=np.int64)
    out = geom.optn_batch(*_tree_args(index), qidx, k_min, k_max, step)
    if out[0] < 0:
        raise ValueError("degenerate neighborhood")
    return int(out[0])


@dataclass(frozen=True)
class EigenDecomp:
    """Eigenpairs of a neighborhood covariance, eigenvalues descending."""

    eigenvalues: np.ndarray    # (3,) descending, clamped to >= 0
    eigenvectors: np.ndarray   # (3, 3), column i pairs with eigenvalues[i]
    normal: np.ndarray         # unit eigenvector of the smallest eigenvalue


def eigen_decompose(neighborhood):
    """Population covariance about the centroid, decomposed symmetrically."""
    pts = np.asarray(neighborhood, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("neighborhood must be an (m, 3) array")
    if pts.shape[0] < 3:
        raise ValueError("neighborhood needs at least 3 points")
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w[::-1], 0.0)
    v = v[:, ::-1]
    return EigenDecomp(eigenvalues=w, eigenvectors=v, normal=v[:, 2])


@dataclass(frozen=True)
class AccumulationMap:
    """Dense XY grid of per-bin point statistics (count, z range, z std)."""

    bin_size: float
    origin: np.ndarray         # (2,) XY minimum of the source cloud
    count: np.ndarray          # (rows, cols) int64
    delta_z: np.ndarray        # (rows, cols) z max - z min (0 in empty bins)
    std_z: np.ndarray          # (rows, cols) population std (0 in empty bins)

    def bins_of(self, xy):
        rows = np.floor((xy[:, 1] - self.origin[1]) / self.bin_size).astype(np.int64)
        cols = np.floor((xy[:, 0] - self.origin[0]) / self.bin_size).astype(np.int64)
        if (rows.size and (rows.min() < 0 or cols.min() < 0
                           or rows.max() >= self.count.shape[0]
                           or cols.max() >= self.count.shape[1])):
            raise ValueError("point outside accumulation map")
        return rows, cols

    def lookup(self, xy):
        """Per-point (frequency, delta_z, std_z) of each point's bin."""
        xy = np.asarray(xy, dtype=np.float64)
        rows, cols = self.bins_of(xy)
        return (self.count[rows, cols].astype(np.float64),
                self.delta_z[rows, cols],
                self.std_z[rows, cols])


def build_acc_map(cloud, bin_size=0.25):
    """Bin a cloud on the XY plane and record per-bin z statistics."""
    if bin_size <= 0:
        raise ValueError("bin_size must be positive")
    xyz = cloud.xyz if isinstance(cloud, core.PointCloud) else np.asarray(cloud, dtype=np.float64)
    if xyz.shape[0] == 0:
        raise ValueError("empty cloud")
    origin = xyz[:, :2].min(axis=0)
    rows = np.floor((xyz[:, 1] - origin[1]) / bin_size).astype(np.int64)
    cols = np.floor((xyz[:, 0] - origin[0]) / bin_size).astype(np.int64)
    nrows = int(rows.max()) + 1
    ncols = int(cols.max()) + 1
    flat = rows * ncols + cols
    nbins = nrows * ncols

    count = np.bincount(flat, minlength=nbins)
    z0 = xyz[:, 2] - xyz[:, 2].mean()           # shift improves sum-of-squares accuracy
    zsum = np.bincount(flat, weights=z0, minlength=nbins)
    zsq = np.bincount(flat, weights=z0 * z0, minlength=nbins)
    zmin = np.full(nbins, np.inf)
    zmax = np.full(nbins, -np.inf)
    np.minimum.at(zmin, flat, z0)
    np.maximum.at(zmax, flat, z0)

    occupied = count > 0
    delta = np.zeros(nbins)
    delta[occupied] = zmax[occupied] - zmin[occupied]
    std = np.zeros(nbins)
    mean = np.zeros(nbins)
    mean[occupied] = zsum[occupied] / count[occupied]
    var = np.zeros(nbins)
    var[occupied] = zsq[occupied] / count[occupied] - mean[occupied] ** 2
    std = np.sqrt(np.maximum(var, 0.0))

    return AccumulationMap(
        bin_size=float(bin_size),
        origin=origin,
        count=count.reshape(nrows, ncols),
        delta_z=delta.reshape(nrows, ncols),
        std_z=std.reshape(nrows, ncols),
    )


@dataclass(frozen=True)
class FeatureVector:
    """The 21 canonical features of one point plus its neighborhood size."""

    values: np.ndarray     # (21,) in FEATURE_NAMES order
    optn: int

    def as_dict(self):
        out = {name: float(v) for name, v in zip(FEATURE_NAMES, self.values)}
        out["optn"] = self.optn
        return out


def _raise_for_status(status):
    if status == STATUS_DEGENERATE:
        raise ValueError("degenerate neighborhood")
    if status == STATUS_ZERO_RADIUS:
        raise ValueError("zero radius")


def extract_features(point_index, cloud, index, index_2d, acc_map, optn):
    """All 21 features of one point at a given neighborhood size."""
    if index_2d.count != index.count:
        raise ValueError("2D index does not match the cloud")
    if optn < 2:
        raise ValueError("optn must be at least 2")
    if optn > index.count - 1:
        raise ValueError("optn must be at most cloud size minus 1")
    qidx = np.asarray([point_index], dtype=np.int64)
    optn_in = np.asarray([optn], dtype=np.int64)
    feats, _, status = geom.extract_batch(
        *_tree_args(index), *_tree_args(index_2d),
        qidx, 10, 10, 1, optn_in, False)
    _raise_for_status(int(status[0]))
    xyz = cloud.xyz if isinstance(cloud, core.PointCloud) else np.asarray(cloud, dtype=np.float64)
    freq, dz, sz = acc_map.lookup(xyz[point_index: point_index + 1, :2])
    values = np.empty(len(FEATURE_NAMES))
    values[:18] = feats[0]
    values[18] = freq[0]
    values[19] = dz[0]
    values[20] = sz[0]
    return FeatureVector(values=values, optn=int(optn))


def extract_all(cloud, k_min=10, k_max=100, step=1, bin_size=0.25, leaf_size=32):
    """OptN scan plus features for every point of a cloud.

    Returns (features (n, 21), optn (n,), status (n,)). Rows with non-zero
    status hold NaN features and optn -1; callers drop them (with a count)
    rather than propagate NaNs.
    """
    xyz = cloud.xyz if isinstance(cloud, core.PointCloud) else np.asarray(cloud, dtype=np.float64)
    index = core.build_index(xyz, leaf_size=leaf_size)
    _check_k_range(index, k_min, k_max, step)
    index_2d = core.build_index_xy(np.ascontiguousarray(xyz[:, :2]), leaf_size=leaf_size)
    acc_map = build_acc_map(xyz, bin_size=bin_size)

    qidx = np.arange(xyz.shape[0], dtype=np.int64)
    feats18, optn, status = geom.extract_batch(
        *_tree_args(index), *_tree_args(index_2d),
        qidx, k_min, k_max, step, np.zeros(1, dtype=np.int64), True)

    features = np.empty((xyz.shape[0], len(FEATURE_NAMES)))
    features[:, :18] = feats18
    freq, dz, sz = acc_map.lookup(xyz[:, :2])
    features[:, 18] = freq
    features[:, 19] = dz
    features[:, 20] = sz
    features[status != STATUS_OK] = np.nan
    return features, optn, status


@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-score transform learned from training rows only."""

    mean: np.ndarray
    scale: np.ndarray          # std, replaced by 1.0 on constant features
    constant: np.ndarray       # bool mask of zero-variance features

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "constant": self.constant.astype(int).tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(mean=np.asarray(doc["mean"], dtype=np.float64),
                   scale=np.asarray(doc["scale"], dtype=np.float64),
                   constant=np.asarray(doc["constant"], dtype=bool))


def fit_standardizer(train_rows):
    """Column means and population stds of the training matrix."""
    X = np.asarray(train_rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    mean = X.mean(axis=0)
    std = np.sqrt(((X - mean) ** 2).mean(axis=0))
    constant = std == 0.0
    scale = np.where(constant, 1.0, std)
    return Standardizer(mean=mean, scale=scale, constant=constant)


def apply_standardizer(standardizer, rows):
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != standardizer.mean.shape[0]:
        raise ValueError("feature arity does not match the standardizer")
    return (X - standardizer.mean) / standardizer.scale
