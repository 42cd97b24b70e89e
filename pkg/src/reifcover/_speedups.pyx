# cython: language_level=3
"""Compiled kernels for the two sequential hot loops.

greedy_pack walks candidates in canonical order and keeps those whose
scaled balls stay disjoint from every earlier keeper; goodness_scan runs
the farthest-point witness search per (center, scale) pair.  Both have
pure numpy twins in _purekernels with identical semantics; tests compare
the backends directly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def greedy_pack(double[:, ::1] coords, double[::1] radii,
                long long[::1] indptr, long long[::1] indices, double factor):
    """Boolean keep-mask for greedy packing with per-pair limit (r_i+r_j)*factor.

    Neighbor lists must contain every candidate that could conflict; rows are
    processed in index order and a candidate is dropped as soon as one kept
    neighbor sits closer than the limit.
    """
    cdef Py_ssize_t m = coords.shape[0]
    cdef Py_ssize_t n = coords.shape[1]
    mask_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] mask = mask_arr
    cdef Py_ssize_t i, j, t, d
    cdef double d2, lim, diff
    cdef int ok
    for i in range(m):
        ok = 1
        for t in range(indptr[i], indptr[i + 1]):
            j = indices[t]
            if j == i or not mask[j]:
                continue
            d2 = 0.0
            for d in range(n):
                diff = coords[i, d] - coords[j, d]
                d2 += diff * diff
            lim = (radii[i] + radii[j]) * factor
            if d2 < lim * lim:
                ok = 0
                break
        if ok:
            mask[i] = 1
    return mask_arr.view(np.bool_)


def goodness_scan(double[:, ::1] pts, long long[::1] indptr, long long[::1] indices,
                  double[:, ::1] centers, double[::1] scales, Py_ssize_t k, double eps):
    """Witness search for (k, eps)-independence inside each neighbor block.

    Returns (slack, witness_indices).  slack[i] = best over seeds of
    (min residual - eps*scale_i); witness rows hold global point indices,
    -1-padded when the block has fewer than k+1 points.
    """
    cdef Py_ssize_t m = centers.shape[0]
    cdef Py_ssize_t n = pts.shape[1]
    slack_arr = np.empty(m, dtype=np.float64)
    wit_arr = np.full((m, k + 1), -1, dtype=np.int64)
    cdef double[::1] slack = slack_arr
    cdef long long[:, ::1] wit = wit_arr
    dirs_arr = np.zeros((k, n), dtype=np.float64)
    w_arr = np.zeros(n, dtype=np.float64)
    chosen_arr = np.zeros(k + 1, dtype=np.int64)
    best_wit_arr = np.zeros(k + 1, dtype=np.int64)
    seeds_arr = np.zeros(3, dtype=np.int64)
    cdef double[:, ::1] dirs = dirs_arr
    cdef double[::1] w = w_arr
    cdef long long[::1] chosen = chosen_arr
    cdef long long[::1] best_wit = best_wit_arr
    cdef long long[::1] seeds = seeds_arr
    cdef Py_ssize_t i, lo, hi, cnt, t, d, step, nd, s, si, nseeds, best_t, p, s2
    cdef long long gp
    cdef double thresh, best_slack, d2, best_d2, proj, val, acc, minres, resid, cand
    cdef double nrm

    for i in range(m):
        lo = indptr[i]
        hi = indptr[i + 1]
        cnt = hi - lo
        thresh = eps * scales[i]
        if cnt < k + 1:
            slack[i] = -thresh
            for t in range(cnt):
                wit[i, t] = indices[lo + t]
            continue

        # deterministic seed pool: farthest from the ball center,
        # smallest coordinate sum, block head
        best_t = 0
        best_d2 = -1.0
        for t in range(cnt):
            gp = indices[lo + t]
            d2 = 0.0
            for d in range(n):
                val = pts[gp, d] - centers[i, d]
                d2 += val * val
            if d2 > best_d2:
                best_d2 = d2
                best_t = t
        seeds[0] = best_t
        best_t = 0
        acc = 1e308
        for t in range(cnt):
            gp = indices[lo + t]
            val = 0.0
            for d in range(n):
                val += pts[gp, d]
            if val < acc:
                acc = val
                best_t = t
        seeds[1] = best_t
        seeds[2] = 0
        nseeds = 3

        best_slack = -1e308
        for si in range(nseeds):
            s = seeds[si]
            if si > 0:
                if s == seeds[0] or (si == 2 and s == seeds[1]):
                    continue
            gp = indices[lo + s]
            chosen[0] = gp
            nd = 0
            minres = 1e308
            for step in range(k):
                best_t = -1
                best_d2 = -1.0
                for t in range(cnt):
                    p = indices[lo + t]
                    d2 = 0.0
                    for d in range(n):
                        val = pts[p, d] - pts[gp, d]
                        w[d] = val
                        d2 += val * val
                    for s2 in range(nd):
                        proj = 0.0
                        for d in range(n):
                            proj += w[d] * dirs[s2, d]
                        d2 -= proj * proj
                    if d2 > best_d2:
                        best_d2 = d2
                        best_t = t
                if best_d2 < 0.0:
                    best_d2 = 0.0
                resid = sqrt(best_d2)
                p = indices[lo + best_t]
                chosen[step + 1] = p
                if resid < minres:
                    minres = resid
                if resid > 0.0:
                    # orthogonalize the winning offset against accepted dirs
                    for d in range(n):
                        w[d] = pts[p, d] - pts[gp, d]
                    for s2 in range(nd):
                        proj = 0.0
                        for d in range(n):
                            proj += w[d] * dirs[s2, d]
                        for d in range(n):
                            w[d] -= proj * dirs[s2, d]
                    nrm = 0.0
                    for d in range(n):
                        nrm += w[d] * w[d]
                    nrm = sqrt(nrm)
                    if nrm > 0.0:
                        for d in range(n):
                            dirs[nd, d] = w[d] / nrm
                        nd += 1
                if minres == 0.0:
                    break
            cand = minres - thresh
            if cand > best_slack:
                best_slack = cand
                for t in range(k + 1):
                    best_wit[t] = chosen[t]
            if best_slack >= 0.0:
                break
        slack[i] = best_slack
        for t in range(k + 1):
            wit[i, t] = best_wit[t]
    return slack_arr, wit_arr
