"""Point-cloud data model, exact spatial indexing, and spatial fold blocking.

Points are (n, 3) float64 arrays in metric coordinates; row order is identity
(point indices index into the array). The spatial index is an exact kd-tree,
and kNN ties at equal distance always resolve to the smaller point index so
query answers are unique and reproducible.

Cross-validation folds are blocked on a 2D XY grid: points are binned into
square cells, and whole cells (never individual points) are dealt to folds,
so no fold shares a cell with another.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import kdtree


def _as_coords(points, dim):
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected an (n, {dim}) coordinate array, got shape {arr.shape}")
    return arr


class PointCloud:
    """Ordered collection of 3D points; indices are identities."""

    def __init__(self, xyz):
        xyz = _as_coords(xyz, 3)
        if not np.all(np.isfinite(xyz)):
            raise ValueError("coordinates must be finite (no NaN/Inf)")
        self.xyz = xyz

    @property
    def count(self):
        return self.xyz.shape[0]

    def __len__(self):
        return self.count


class SpatialIndex:
    """Exact kd-tree over a fixed coordinate array (2D or 3D)."""

    def __init__(self, coords, leaf_size):
        self.coords = coords
        self.leaf_size = leaf_size
        (self.perm, self.split_dim, self.split_val,
         self.left, self.right, self.start, self.end) = kdtree.build_tree(coords, leaf_size)

    @property
    def count(self):
        return self.coords.shape[0]

    def query(self, queries, k):
        """Batch kNN: (m, d) queries -> ((m, k) indices, (m, k) distances).

        Results are sorted ascending by distance; equal distances resolve to
        the smaller point index.
        """
        queries = _as_coords(queries, self.coords.shape[1])
        if k < 1:
            raise ValueError("k must be at least 1")
        if k > self.count:
            raise ValueError("k exceeds cloud size")
        return kdtree.knn_batch(self.coords, self.perm, self.split_dim, self.split_val,
                                self.left, self.right, self.start, self.end, queries, k)


def build_index(cloud, leaf_size=32):
    """Index a PointCloud (or raw (n, 3) array) for exact kNN queries."""
    coords = cloud.xyz if isinstance(cloud, PointCloud) else _as_coords(cloud, 3)
    if coords.shape[0] == 0:
        raise ValueError("empty cloud")
    if leaf_size < 1:
        raise ValueError("leaf_size must be at least 1")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite (no NaN/Inf)")
    return SpatialIndex(coords, leaf_size)


def build_index_xy(xy, leaf_size=32):
    """Index raw (n, 2) planimetric coordinates for exact 2D kNN queries."""
    coords = _as_coords(xy, 2)
    if coords.shape[0] == 0:
        raise ValueError("empty cloud")
    if leaf_size < 1:
        raise ValueError("leaf_size must be at least 1")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite (no NaN/Inf)")
    return SpatialIndex(coords, leaf_size)


def knn(index, query, k):
    """k nearest stored points to one query point.

    Returns a list of (point_index, distance) pairs, ascending by distance,
    ties broken by smaller point index.
    """
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    idx, dist = index.query(query, k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def nearest(index, query):
    """Nearest stored point to one query point as (point_index, distance)."""
    return knn(index, query, 1)[0]


@dataclass(frozen=True)
class GridPartition:
    """XY grid binning of a cloud: cell id of point p is
    (floor((y - origin_y)/cell_size), floor((x - origin_x)/cell_size))."""

    cell_size: float
    origin: np.ndarray          # (2,) XY of the bounding-box minimum
    cells: np.ndarray           # (n, 2) int64 rows of (row, col) per point

    def unique_cells(self):
        """Distinct non-empty cells in lexicographic (row, col) order."""
        return np.unique(self.cells, axis=0)


def grid_partition(cloud, cell_size):
    """Bin every point of a cloud into square XY cells."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    coords = cloud.xyz if isinstance(cloud, PointCloud) else _as_coords(cloud, 3)
    if coords.shape[0] == 0:
        raise ValueError("empty cloud")
    origin = coords[:, :2].min(axis=0)
    col = np.floor((coords[:, 0] - origin[0]) / cell_size).astype(np.int64)
    row = np.floor((coords[:, 1] - origin[1]) / cell_size).astype(np.int64)
    return GridPartition(cell_size=float(cell_size), origin=origin,
                         cells=np.stack([row, col], axis=1))


@dataclass(frozen=True)
class FoldAssignment:
    """Deal of grid cells to folds; points inherit the fold of their cell."""

    n_folds: int
    seed: int
    cell_ids: np.ndarray        # (m, 2) distinct cells
    cell_folds: np.ndarray      # (m,) fold of each cell
    point_folds: np.ndarray     # (n,) fold of each point

    def fold_of_cell(self):
        return {(int(r), int(c)): int(f)
                for (r, c), f in zip(self.cell_ids, self.cell_folds)}


def assign_folds(partition, n_folds=5, seed=0):
    """Deal non-empty grid cells round-robin to folds after a seeded shuffle.

    Per-fold cell counts differ by at most 1, and every point of a cell lands
    in that cell's fold, so folds are spatially disjoint at cell granularity.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    cell_ids, inverse = np.unique(partition.cells, axis=0, return_inverse=True)
    m = cell_ids.shape[0]
    if m < n_folds:
        raise ValueError("too few cells")
    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    cell_folds = np.empty(m, dtype=np.int64)
    cell_folds[order] = np.arange(m, dtype=np.int64) % n_folds
    point_folds = cell_folds[inverse.ravel()]
    return FoldAssignment(n_folds=int(n_folds), seed=int(seed), cell_ids=cell_ids,
                          cell_folds=cell_folds, point_folds=point_folds)
