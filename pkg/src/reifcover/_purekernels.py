"""Pure numpy twins of the compiled kernels.

Semantics must match reifcover._speedups exactly: same seed pool, same
tie-breaking (strict improvement, first index wins), same slack values up
to floating-point associativity.  The compiled module is the performance
path; this one is the always-available reference.
"""

from __future__ import annotations

import numpy as np


def greedy_pack(coords: np.ndarray, radii: np.ndarray, indptr: np.ndarray,
                indices: np.ndarray, factor: float) -> np.ndarray:
    m = coords.shape[0]
    mask = np.zeros(m, dtype=bool)
    for i in range(m):
        nbrs = indices[indptr[i]:indptr[i + 1]]
        nbrs = nbrs[(nbrs != i) & mask[nbrs]]
        if nbrs.size:
            d2 = np.sum((coords[nbrs] - coords[i]) ** 2, axis=1)
            lim = (radii[nbrs] + radii[i]) * factor
            if np.any(d2 < lim * lim):
                continue
        mask[i] = True
    return mask


def _greedy_witness(pts: np.ndarray, block: np.ndarray, seed_local: int, k: int):
    """Farthest-point traversal from one seed; returns (min residual, witness)."""
    base = pts[block[seed_local]]
    rel = pts[block] - base
    nd = 0
    dirs = np.zeros((k, pts.shape[1]))
    chosen = np.empty(k + 1, dtype=np.int64)
    chosen[0] = block[seed_local]
    min_res = np.inf
    d2 = np.sum(rel * rel, axis=1)
    for step in range(k):
        if nd:
            proj = rel @ dirs[:nd].T
            cur = d2 - np.sum(proj * proj, axis=1)
        else:
            cur = d2
        best_t = int(np.argmax(cur))
        best_d2 = max(float(cur[best_t]), 0.0)
        res = np.sqrt(best_d2)
        chosen[step + 1] = block[best_t]
        min_res = min(min_res, res)
        if res > 0.0:
            w = rel[best_t].copy()
            if nd:
                w -= (w @ dirs[:nd].T) @ dirs[:nd]
            nrm = float(np.linalg.norm(w))
            if nrm > 0.0:
                dirs[nd] = w / nrm
                nd += 1
        if min_res == 0.0:
            break
    return min_res, chosen


def goodness_scan(pts: np.ndarray, indptr: np.ndarray, indices: np.ndarray,
                  centers: np.ndarray, scales: np.ndarray, k: int, eps: float):
    m = centers.shape[0]
    slack = np.empty(m, dtype=np.float64)
    wit = np.full((m, k + 1), -1, dtype=np.int64)
    for i in range(m):
        block = indices[indptr[i]:indptr[i + 1]]
        thresh = eps * scales[i]
        if block.size < k + 1:
            slack[i] = -thresh
            wit[i, :block.size] = block
            continue
        bp = pts[block]
        seed_far = int(np.argmax(np.sum((bp - centers[i]) ** 2, axis=1)))
        seed_min = int(np.argmin(np.sum(bp, axis=1)))
        seeds = [seed_far]
        if seed_min != seed_far:
            seeds.append(seed_min)
        if 0 not in seeds:
            seeds.append(0)
        best = -np.inf
        for s in seeds:
            min_res, chosen = _greedy_witness(pts, block, s, k)
            cand = min_res - thresh
            if cand > best:
                best = cand
                wit[i] = chosen
            if best >= 0.0:
                break
        slack[i] = best
    return slack, wit
