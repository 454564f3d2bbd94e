"""Compiled histogram tree growing and traversal for gradient boosting.

Training rows are pre-binned to uint8 codes; each node accumulates per-bin
gradient/hessian/count histograms for the sampled features and scans bin
boundaries for the split maximizing the regularized Newton gain. A split at
boundary j sends codes <= j left, which by construction of the bin edges is
exactly the predicate (raw value <= edge_j) used at prediction time.

Equal-gain ties resolve to the lowest feature index, then the lowest
boundary, via strict-improvement comparisons over an ascending scan.
"""

import numpy as np

from . import njit


@njit(cache=True, nogil=True)
def fit_tree_hist(B, g, h, rows, cols, n_edges, max_depth, lam, min_child_weight,
                  gamma, feature, bin_id, left, right, weight, importance):
    """Grow one regression tree on binned data; returns the node count.

    rows is partitioned in place. Node arrays are preallocated by the caller
    (2^(max_depth+1)+1 slots). Split gains accumulate into importance.
    """
    n_rows = rows.shape[0]
    scratch = np.empty(n_rows, dtype=np.int64)
    hist_g = np.empty(256, dtype=np.float64)
    hist_h = np.empty(256, dtype=np.float64)
    hist_c = np.empty(256, dtype=np.int64)

    g_root = 0.0
    h_root = 0.0
    for i in range(n_rows):
        g_root += g[rows[i]]
        h_root += h[rows[i]]

    cap = feature.shape[0]
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_g = np.empty(cap, dtype=np.float64)
    st_h = np.empty(cap, dtype=np.float64)
    sp = 0
    st_node[sp] = 0
    st_start[sp] = 0
    st_end[sp] = n_rows
    st_depth[sp] = 0
    st_g[sp] = g_root
    st_h[sp] = h_root
    sp += 1
    node_count = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        g_node = st_g[sp]
        h_node = st_h[sp]

        best_gain = gamma
        best_f = -1
        best_bin = -1
        best_gl = 0.0
        best_hl = 0.0
        if depth < max_depth and end - start >= 2:
            parent_score = g_node * g_node / (h_node + lam)
            for ci in range(cols.shape[0]):
                f = cols[ci]
                nb = n_edges[f] + 1
                if nb < 2:
                    continue
                for b in range(nb):
                    hist_g[b] = 0.0
                    hist_h[b] = 0.0
                    hist_c[b] = 0
                for j in range(start, end):
                    r = rows[j]
                    b = B[r, f]
                    hist_g[b] += g[r]
                    hist_h[b] += h[r]
                    hist_c[b] += 1
                gl = 0.0
                hl = 0.0
                cl = 0
                for b in range(nb - 1):
                    gl += hist_g[b]
                    hl += hist_h[b]
                    cl += hist_c[b]
                    cr = (end - start) - cl
                    if cl == 0 or cr == 0:
                        continue
                    hr = h_node - hl
                    if hl < min_child_weight or hr < min_child_weight:
                        continue
                    gr = g_node - gl
                    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                                  - parent_score)
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_bin = b
                        best_gl = gl
                        best_hl = hl

        if best_f < 0:
            feature[node] = -1
            bin_id[node] = -1
            left[node] = -1
            right[node] = -1
            weight[node] = -g_node / (h_node + lam)
            continue

        importance[best_f] += best_gain

        li = start
        nr = 0
        for j in range(start, end):
            r = rows[j]
            if B[r, best_f] <= best_bin:
                rows[li] = r
                li += 1
            else:
                scratch[nr] = r
                nr += 1
        for j in range(nr):
            rows[li + j] = scratch[j]

        left_id = node_count
        right_id = node_count + 1
        node_count += 2
        feature[node] = best_f
        bin_id[node] = best_bin
        left[node] = left_id
        right[node] = right_id
        weight[node] = 0.0

        st_node[sp] = right_id
        st_start[sp] = li
        st_end[sp] = end
        st_depth[sp] = depth + 1
        st_g[sp] = g_node - best_gl
        st_h[sp] = h_node - best_hl
        sp += 1
        st_node[sp] = left_id
        st_start[sp] = start
        st_end[sp] = li
        st_depth[sp] = depth + 1
        st_g[sp] = best_gl
        st_h[sp] = best_hl
        sp += 1

    return node_count


@njit(cache=True, nogil=True)
def add_tree_codes(B, feature, bin_id, left, right, weight, eta, margins):
    """margins += eta * tree(x) over pre-binned rows (training-side update)."""
    for i in range(B.shape[0]):
        node = 0
        while feature[node] >= 0:
            if B[i, feature[node]] <= bin_id[node]:
                node = left[node]
            else:
                node = right[node]
        margins[i] += eta * weight[node]


@njit(cache=True, nogil=True)
def add_tree_raw(X, feature, threshold, left, right, weight, eta, margins):
    """margins += eta * tree(x) over raw feature rows (validation/test side)."""
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        margins[i] += eta * weight[node]


@njit(cache=True, nogil=True)
def predict_margin(X, feature, threshold, left, right, weight, offsets, eta, n_trees):
    """Summed margin over the first n_trees flattened trees."""
    nq = X.shape[0]
    out = np.zeros(nq, dtype=np.float64)
    for i in range(nq):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += weight[base + node]
        out[i] = eta * acc
    return out
