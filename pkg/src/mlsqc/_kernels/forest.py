"""Compiled decision-tree growing and traversal for the random forest.

Trees grow greedily on weighted Gini impurity with an exhaustive scan over
all features. Each feature's rows are argsorted once per tree; splits then
partition the per-feature orderings stably, so no per-node sorting happens
and every node scan is O(features x rows).

Tie-breaking is fixed everywhere: a split must be strictly better to replace
the incumbent, and features/thresholds are scanned in ascending order, so
equal-quality splits resolve to the lowest feature index, then the lowest
threshold. Thresholds are midpoints of adjacent distinct values, nudged down
to the lower value if rounding lands the midpoint on the upper one (rule:
value <= threshold goes left).
"""

import numpy as np

from . import njit


@njit(cache=True, nogil=True)
def grow_tree(V, yv, wv, order, max_depth, min_samples_leaf,
              feature, threshold, left, right, prob1, importance):
    """Grow one tree over the gathered sample matrix V (m, F).

    order is (F, m): per-feature argsort positions into V's rows; it is
    partitioned in place. Node arrays must be preallocated to 2m+1; returns
    the number of nodes written. importance (F,) accumulates the weighted
    impurity decrease of every split.
    """
    m, n_features = V.shape
    scratch = np.empty(m, dtype=np.int64)

    node_count = 1
    # stack rows: node id, start, end, depth
    cap = 2 * m + 2
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[sp] = 0
    st_start[sp] = 0
    st_end[sp] = m
    st_depth[sp] = 0
    sp += 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]

        w0 = 0.0
        w1 = 0.0
        for j in range(start, end):
            r = order[0, j]
            if yv[r] == 1:
                w1 += wv[r]
            else:
                w0 += wv[r]
        w_total = w0 + w1
        node_gini = 1.0 - (w0 * w0 + w1 * w1) / (w_total * w_total)

        leaf = (depth >= max_depth or w0 == 0.0 or w1 == 0.0
                or (end - start) < 2 * min_samples_leaf)

        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        if not leaf:
            for f in range(n_features):
                wl0 = 0.0
                wl1 = 0.0
                for j in range(start, end - 1):
                    r = order[f, j]
                    if yv[r] == 1:
                        wl1 += wv[r]
                    else:
                        wl0 += wv[r]
                    v = V[r, f]
                    vnext = V[order[f, j + 1], f]
                    if vnext > v:
                        n_left = j - start + 1
                        n_right = end - j - 1
                        if n_left < min_samples_leaf or n_right < min_samples_leaf:
                            continue
                        wr0 = w0 - wl0
                        wr1 = w1 - wl1
                        wl = wl0 + wl1
                        wr = wr0 + wr1
                        score = (wl - (wl0 * wl0 + wl1 * wl1) / wl
                                 + wr - (wr0 * wr0 + wr1 * wr1) / wr)
                        if score < best_score:
                            thr = 0.5 * (v + vnext)
                            if thr == vnext:
                                thr = v
                            best_score = score
                            best_f = f
                            best_thr = thr

        if leaf or best_f < 0:
            feature[node] = -1
            threshold[node] = 0.0
            left[node] = -1
            right[node] = -1
            prob1[node] = w1 / w_total
            continue

        importance[best_f] += w_total * node_gini - best_score

        # stable partition of every feature ordering on the chosen split
        mid = start
        for f in range(n_features):
            li = start
            nr = 0
            for j in range(start, end):
                r = order[f, j]
                if V[r, best_f] <= best_thr:
                    order[f, li] = r
                    li += 1
                else:
                    scratch[nr] = r
                    nr += 1
            for j in range(nr):
                order[f, li + j] = scratch[j]
            mid = li

        left_id = node_count
        right_id = node_count + 1
        node_count += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = left_id
        right[node] = right_id
        prob1[node] = w1 / w_total

        st_node[sp] = right_id
        st_start[sp] = mid
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = left_id
        st_start[sp] = start
        st_end[sp] = mid
        st_depth[sp] = depth + 1
        sp += 1

    return node_count


@njit(cache=True, nogil=True)
def predict_forest(X, feature, threshold, left, right, prob1, offsets):
    """Mean leaf probability of class 1 over the flattened trees."""
    nq = X.shape[0]
    n_trees = offsets.shape[0] - 1
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
            acc += prob1[base + node]
        out[i] = acc / n_trees
    return out
