"""Exact kd-tree: array-based construction plus compiled query kernels.

The tree is a balanced median split (argpartition at the count midpoint of
the widest-extent axis), stored as flat arrays so the query kernels can run
under numba. Queries are exact; neighbor ties at equal distance are resolved
toward the smaller point index, which makes every query answer unique.
"""

import numpy as np

from . import njit


def build_tree(coords, leaf_size):
    """Build the flat node arrays for ``coords`` ((n, d) float64).

    Returns (perm, split_dim, split_val, left, right, start, end) where
    leaves have split_dim == -1 and own perm[start:end].
    """
    n = coords.shape[0]
    perm = np.arange(n, dtype=np.int64)
    split_dim = []
    split_val = []
    left = []
    right = []
    start = []
    end = []

    def new_node():
        split_dim.append(-1)
        split_val.append(0.0)
        left.append(-1)
        right.append(-1)
        start.append(0)
        end.append(0)
        return len(split_dim) - 1

    def build(lo, hi):
        node = new_node()
        if hi - lo <= leaf_size:
            start[node] = lo
            end[node] = hi
            return node
        sub = coords[perm[lo:hi]]
        dim = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        mid = (lo + hi) // 2
        order = np.argpartition(sub[:, dim], mid - lo)
        perm[lo:hi] = perm[lo:hi][order]
        split_dim[node] = dim
        split_val[node] = coords[perm[mid], dim]
        left[node] = build(lo, mid)
        right[node] = build(mid, hi)
        return node

    import sys

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 64 + 4 * int(np.ceil(np.log2(max(n, 2))))))
    try:
        build(0, n)
    finally:
        sys.setrecursionlimit(old_limit)

    return (
        perm,
        np.asarray(split_dim, dtype=np.int64),
        np.asarray(split_val, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(start, dtype=np.int64),
        np.asarray(end, dtype=np.int64),
    )


@njit(cache=True)
def _heap_push(heap_d2, heap_i, d2, idx):
    # bounded max-heap ordered by (d2, idx); root holds the current worst
    k = heap_d2.shape[0]
    top_d2 = heap_d2[0]
    top_i = heap_i[0]
    if d2 > top_d2 or (d2 == top_d2 and idx >= top_i):
        return
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= k:
            break
        if child + 1 < k:
            if heap_d2[child + 1] > heap_d2[child] or (
                heap_d2[child + 1] == heap_d2[child] and heap_i[child + 1] > heap_i[child]
            ):
                child += 1
        if heap_d2[child] > d2 or (heap_d2[child] == d2 and heap_i[child] > idx):
            heap_d2[pos] = heap_d2[child]
            heap_i[pos] = heap_i[child]
            pos = child
        else:
            break
    heap_d2[pos] = d2
    heap_i[pos] = idx


@njit(cache=True)
def _knn_one(coords, perm, split_dim, split_val, left, right, start, end,
             q, heap_d2, heap_i, node_stack, bound_stack):
    k = heap_d2.shape[0]
    d = coords.shape[1]
    for j in range(k):
        heap_d2[j] = np.inf
        heap_i[j] = np.iinfo(np.int64).max
    sp = 0
    node_stack[sp] = 0
    bound_stack[sp] = 0.0
    sp += 1
    while sp > 0:
        sp -= 1
        node = node_stack[sp]
        bound = bound_stack[sp]
        if bound > heap_d2[0]:
            continue
        dim = split_dim[node]
        if dim < 0:
            for j in range(start[node], end[node]):
                p = perm[j]
                d2 = 0.0
                for a in range(d):
                    diff = coords[p, a] - q[a]
                    d2 += diff * diff
                _heap_push(heap_d2, heap_i, d2, p)
            continue
        diff = q[dim] - split_val[node]
        if diff <= 0.0:
            near = left[node]
            far = right[node]
        else:
            near = right[node]
            far = left[node]
        far_bound = diff * diff
        if far_bound > bound:
            bound_far = far_bound
        else:
            bound_far = bound
        node_stack[sp] = far
        bound_stack[sp] = bound_far
        sp += 1
        node_stack[sp] = near
        bound_stack[sp] = bound
        sp += 1


@njit(cache=True)
def _heap_sort_result(heap_d2, heap_i, out_idx, out_dist):
    # insertion sort ascending by (d2, idx); k is small
    k = heap_d2.shape[0]
    for j in range(1, k):
        d2 = heap_d2[j]
        ix = heap_i[j]
        pos = j - 1
        while pos >= 0 and (heap_d2[pos] > d2 or (heap_d2[pos] == d2 and heap_i[pos] > ix)):
            heap_d2[pos + 1] = heap_d2[pos]
            heap_i[pos + 1] = heap_i[pos]
            pos -= 1
        heap_d2[pos + 1] = d2
        heap_i[pos + 1] = ix
    for j in range(k):
        out_idx[j] = heap_i[j]
        out_dist[j] = np.sqrt(heap_d2[j])


@njit(cache=True)
def knn_batch(coords, perm, split_dim, split_val, left, right, start, end, queries, k):
    """kNN for each query row; results ascending by (distance, index)."""
    m = queries.shape[0]
    out_idx = np.empty((m, k), dtype=np.int64)
    out_dist = np.empty((m, k), dtype=np.float64)
    depth_cap = 4 * (np.int64(np.log2(coords.shape[0] + 1)) + 8)
    heap_d2 = np.empty(k, dtype=np.float64)
    heap_i = np.empty(k, dtype=np.int64)
    node_stack = np.empty(depth_cap, dtype=np.int64)
    bound_stack = np.empty(depth_cap, dtype=np.float64)
    for i in range(m):
        _knn_one(coords, perm, split_dim, split_val, left, right, start, end,
                 queries[i], heap_d2, heap_i, node_stack, bound_stack)
        _heap_sort_result(heap_d2, heap_i, out_idx[i], out_dist[i])
    return out_idx, out_dist
