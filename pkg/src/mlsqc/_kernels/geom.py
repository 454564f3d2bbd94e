"""Compiled per-point geometry: eigenentropy-optimal neighborhood search and
the eigenvalue/height/density feature block.

All neighborhood statistics are accumulated relative to the query point, not
raw coordinates: covariance is translation-invariant and the shift avoids the
catastrophic cancellation that sum-of-squares accumulators hit when scene
coordinates are large compared to neighborhood extents.

The candidate-k scan uses a closed-form symmetric 3x3 eigensolver; the final
decomposition at OptN uses np.linalg.eigh because the feature block also
needs the normal vector.
"""

import numpy as np

from . import njit
from .kdtree import _knn_one, _heap_sort_result

OK = 0
DEGENERATE = 1
ZERO_RADIUS = 2


@njit(cache=True)
def _sym3_eigvals(a00, a01, a02, a11, a12, a22):
    """Eigenvalues of a symmetric 3x3 matrix, descending (trigonometric form)."""
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    if p1 == 0.0:
        hi = max(a00, max(a11, a22))
        lo = min(a00, min(a11, a22))
        return hi, (a00 + a11 + a22) - hi - lo, lo
    q = (a00 + a11 + a22) / 3.0
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    if p == 0.0:
        return q, q, q
    b00 = (a00 - q) / p
    b11 = (a11 - q) / p
    b22 = (a22 - q) / p
    b01 = a01 / p
    b02 = a02 / p
    b12 = a12 / p
    detb = (b00 * (b11 * b22 - b12 * b12)
            - b01 * (b01 * b22 - b12 * b02)
            + b02 * (b01 * b12 - b11 * b02))
    r = detb / 2.0
    if r < -1.0:
        r = -1.0
    elif r > 1.0:
        r = 1.0
    phi = np.arccos(r) / 3.0
    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam2 = 3.0 * q - lam1 - lam3
    return lam1, lam2, lam3


@njit(cache=True)
def _entropy(e1, e2, e3):
    # normalized eigenvalues; 0 * ln 0 := 0
    out = 0.0
    if e1 > 0.0:
        out -= e1 * np.log(e1)
    if e2 > 0.0:
        out -= e2 * np.log(e2)
    if e3 > 0.0:
        out -= e3 * np.log(e3)
    return out


@njit(cache=True)
def _entropy_scan(coords, idx_buf, qx, qy, qz, k_min, k_max, step):
    """argmin over candidate k of neighborhood eigenentropy; -1 if every
    candidate neighborhood is fully degenerate. Ties keep the smallest k."""
    best_e = np.inf
    best_k = -1
    s1x = 0.0
    s1y = 0.0
    s1z = 0.0
    sxx = 0.0
    sxy = 0.0
    sxz = 0.0
    syy = 0.0
    syz = 0.0
    szz = 0.0
    for j in range(k_max + 1):
        p = idx_buf[j]
        dx = coords[p, 0] - qx
        dy = coords[p, 1] - qy
        dz = coords[p, 2] - qz
        s1x += dx
        s1y += dy
        s1z += dz
        sxx += dx * dx
        sxy += dx * dy
        sxz += dx * dz
        syy += dy * dy
        syz += dy * dz
        szz += dz * dz
        if j >= k_min and (j - k_min) % step == 0:
            m = float(j + 1)
            mx = s1x / m
            my = s1y / m
            mz = s1z / m
            cxx = sxx / m - mx * mx
            cxy = sxy / m - mx * my
            cxz = sxz / m - mx * mz
            cyy = syy / m - my * my
            cyz = syz / m - my * mz
            czz = szz / m - mz * mz
            l1, l2, l3 = _sym3_eigvals(cxx, cxy, cxz, cyy, cyz, czz)
            if l1 < 0.0:
                l1 = 0.0
            if l2 < 0.0:
                l2 = 0.0
            if l3 < 0.0:
                l3 = 0.0
            s = l1 + l2 + l3
            if s > 0.0:
                e = _entropy(l1 / s, l2 / s, l3 / s)
                if e < best_e:
                    best_e = e
                    best_k = j
    return best_k


@njit(cache=True)
def optn_batch(coords, perm3, sdim3, sval3, left3, right3, start3, end3,
               qidx, k_min, k_max, step):
    """Optimal neighborhood size for each query index (-1 where degenerate)."""
    n = qidx.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    kq = k_max + 1
    heap_d2 = np.empty(kq, dtype=np.float64)
    heap_i = np.empty(kq, dtype=np.int64)
    idx_buf = np.empty(kq, dtype=np.int64)
    dist_buf = np.empty(kq, dtype=np.float64)
    cap3 = 4 * (np.int64(np.log2(coords.shape[0] + 1)) + 8)
    stack3 = np.empty(cap3, dtype=np.int64)
    bstack3 = np.empty(cap3, dtype=np.float64)
    for t in range(n):
        ip = qidx[t]
        _knn_one(coords, perm3, sdim3, sval3, left3, right3, start3, end3,
                 coords[ip], heap_d2, heap_i, stack3, bstack3)
        _heap_sort_result(heap_d2, heap_i, idx_buf, dist_buf)
        out[t] = _entropy_scan(coords, idx_buf, coords[ip, 0], coords[ip, 1],
                               coords[ip, 2], k_min, k_max, step)
    return out


@njit(cache=True)
def extract_batch(coords,
                  perm3, sdim3, sval3, left3, right3, start3, end3,
                  xy,
                  perm2, sdim2, sval2, left2, right2, start2, end2,
                  qidx, k_min, k_max, step, optn_in, compute_optn):
    """OptN scan plus the 18 neighborhood features for each query index.

    Returns (features (n, 18), optn (n,), status (n,)). Status 0 rows are
    valid; 1 marks a fully degenerate neighborhood, 2 a zero kNN radius.
    Feature columns follow the canonical order up to ratio_eigenvalues_2D;
    the three accumulation-map columns are appended by the caller.
    """
    n = qidx.shape[0]
    feats = np.full((n, 18), np.nan)
    optn_out = np.full(n, -1, dtype=np.int64)
    status = np.zeros(n, dtype=np.int8)

    if compute_optn:
        kcap = k_max + 1
    else:
        kcap = 2
        for t in range(n):
            if optn_in[t] + 1 > kcap:
                kcap = optn_in[t] + 1
    heap_d2 = np.empty(kcap, dtype=np.float64)
    heap_i = np.empty(kcap, dtype=np.int64)
    idx_buf = np.empty(kcap, dtype=np.int64)
    dist_buf = np.empty(kcap, dtype=np.float64)
    cap3 = 4 * (np.int64(np.log2(coords.shape[0] + 1)) + 8)
    cap2 = 4 * (np.int64(np.log2(xy.shape[0] + 1)) + 8)
    stack3 = np.empty(cap3, dtype=np.int64)
    bstack3 = np.empty(cap3, dtype=np.float64)
    stack2 = np.empty(cap2, dtype=np.int64)
    bstack2 = np.empty(cap2, dtype=np.float64)
    cov = np.empty((3, 3), dtype=np.float64)

    for t in range(n):
        ip = qidx[t]
        qx = coords[ip, 0]
        qy = coords[ip, 1]
        qz = coords[ip, 2]

        if compute_optn:
            kq = k_max + 1
        else:
            kq = optn_in[t] + 1
        _knn_one(coords, perm3, sdim3, sval3, left3, right3, start3, end3,
                 coords[ip], heap_d2[:kq], heap_i[:kq], stack3, bstack3)
        _heap_sort_result(heap_d2[:kq], heap_i[:kq], idx_buf[:kq], dist_buf[:kq])

        if compute_optn:
            best_k = _entropy_scan(coords, idx_buf, qx, qy, qz, k_min, k_max, step)
            if best_k < 0:
                status[t] = DEGENERATE
                continue
            optn = best_k
        else:
            optn = optn_in[t]

        m = optn + 1
        r3d = dist_buf[optn]
        if r3d <= 0.0:
            status[t] = ZERO_RADIUS
            continue

        # final pass over the OptN neighborhood: covariance + z extremes
        s1x = 0.0
        s1y = 0.0
        s1z = 0.0
        sxx = 0.0
        sxy = 0.0
        sxz = 0.0
        syy = 0.0
        syz = 0.0
        szz = 0.0
        zmin = np.inf
        zmax = -np.inf
        for j in range(m):
            p = idx_buf[j]
            dx = coords[p, 0] - qx
            dy = coords[p, 1] - qy
            dz = coords[p, 2] - qz
            s1x += dx
            s1y += dy
            s1z += dz
            sxx += dx * dx
            sxy += dx * dy
            sxz += dx * dz
            syy += dy * dy
            syz += dy * dz
            szz += dz * dz
            if coords[p, 2] < zmin:
                zmin = coords[p, 2]
            if coords[p, 2] > zmax:
                zmax = coords[p, 2]
        fm = float(m)
        mx = s1x / fm
        my = s1y / fm
        mz = s1z / fm
        cov[0, 0] = sxx / fm - mx * mx
        cov[0, 1] = sxy / fm - mx * my
        cov[0, 2] = sxz / fm - mx * mz
        cov[1, 0] = cov[0, 1]
        cov[1, 1] = syy / fm - my * my
        cov[1, 2] = syz / fm - my * mz
        cov[2, 0] = cov[0, 2]
        cov[2, 1] = cov[1, 2]
        cov[2, 2] = szz / fm - mz * mz
        w, v = np.linalg.eigh(cov)
        l1 = w[2] if w[2] > 0.0 else 0.0
        l2 = w[1] if w[1] > 0.0 else 0.0
        l3 = w[0] if w[0] > 0.0 else 0.0
        s = l1 + l2 + l3
        if s <= 0.0 or l1 <= 0.0:
            status[t] = DEGENERATE
            continue
        e1 = l1 / s
        e2 = l2 / s
        e3 = l3 / s
        nz = v[2, 0]

        # 2D neighborhood: its own kNN with the same k
        _knn_one(xy, perm2, sdim2, sval2, left2, right2, start2, end2,
                 xy[ip], heap_d2[:m], heap_i[:m], stack2, bstack2)
        _heap_sort_result(heap_d2[:m], heap_i[:m], idx_buf[:m], dist_buf[:m])
        r2d = dist_buf[optn]
        if r2d <= 0.0:
            status[t] = ZERO_RADIUS
            continue
        s1x = 0.0
        s1y = 0.0
        sxx = 0.0
        sxy = 0.0
        syy = 0.0
        for j in range(m):
            p = idx_buf[j]
            dx = xy[p, 0] - qx
            dy = xy[p, 1] - qy
            s1x += dx
            s1y += dy
            sxx += dx * dx
            sxy += dx * dy
            syy += dy * dy
        mx = s1x / fm
        my = s1y / fm
        cxx = sxx / fm - mx * mx
        cxy = sxy / fm - mx * my
        cyy = syy / fm - my * my
        half = 0.5 * (cxx + cyy)
        root = np.sqrt(0.25 * (cxx - cyy) ** 2 + cxy * cxy)
        mu1 = half + root
        mu2 = half - root
        if mu1 < 0.0:
            mu1 = 0.0
        if mu2 < 0.0:
            mu2 = 0.0
        if mu1 <= 0.0:
            status[t] = DEGENERATE
            continue

        row = feats[t]
        row[0] = (e1 - e2) / e1                      # linearity
        row[1] = (e2 - e3) / e1                      # planarity
        row[2] = e3 / e1                             # sphericity
        row[3] = np.cbrt(e1 * e2 * e3)               # omnivariance
        row[4] = (e1 - e3) / e1                      # anisotropy
        row[5] = _entropy(e1, e2, e3)                # eigenentropy
        row[6] = s                                   # sum_eigenvalues
        row[7] = e3                                  # change_curvature
        row[8] = 1.0 - abs(nz)                       # verticality
        row[9] = qz                                  # Z_vals
        row[10] = zmax - zmin                        # delta_z
        czz = cov[2, 2]
        row[11] = np.sqrt(czz) if czz > 0.0 else 0.0  # std_z
        row[12] = r3d                                # radius_3D
        row[13] = fm / ((4.0 / 3.0) * np.pi * r3d ** 3)   # density
        row[14] = r2d                                # radius_2D
        row[15] = fm / (np.pi * r2d * r2d)           # density_2D
        row[16] = mu1 + mu2                          # sum_eigenvalues_2D
        row[17] = mu2 / mu1                          # ratio_eigenvalues_2D
        optn_out[t] = optn

    return feats, optn_out, status
