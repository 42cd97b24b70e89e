"""Per-ball plane fitting, goodness classification, and the two radius fields.

The sample cloud stands in for the underlying closed set, so every "for all
points" condition here is an exact statement over samples.  Classification
sweeps optionally decimate the candidate pool per scale; a passing witness is
always made of real cloud points, and any failing scan is repeated against
the full pool before a ball is called bad, so verdicts are exact either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from ._backend import goodness_scan, greedy_pack
from .calibration import CalibrationForm, evaluate_on_vectors
from .errors import DegenerateInput, EmptyBall, ParamOutOfRange
from .geometry import (
    AffinePlane,
    Ball,
    Frame,
    IndependenceWitness,
    affine_residuals,
    as_point_array,
    orient_frame,
    orthonormalize,
)

DEFAULT_LADDER_RATIO = 0.5
EXTENSION_CAP = 2.0
VITALI_FACTOR = 0.2
# comparability scale floor and fitting scale, relative to (r_y ∨ r)
COMPARABILITY_FACTOR = 0.01
FIT_SCALE_FACTOR_DEFAULT = 100.0
# candidate decimation pitch for classification sweeps, relative to the scale
DECIMATION_PITCH = 0.02
DECIMATION_MIN_SIZE = 4000
_CSR_BUDGET = 30_000_000


class PointCloud:
    """Finite sample cloud with a spatial index and a target dimension."""

    def __init__(self, points, k: int):
        pts = as_point_array(points)
        if pts.shape[0] == 0:
            raise DegenerateInput("point cloud must contain at least one point")
        if not (1 <= k < pts.shape[1]):
            raise DegenerateInput(
                f"target dimension {k} invalid for ambient dimension {pts.shape[1]}"
            )
        self.points = pts
        self.k = int(k)
        self.n = pts.shape[1]
        self.tree = cKDTree(pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def query_ball(self, center, radius: float, workers: int = 1) -> np.ndarray:
        """Indices of cloud points in the closed ball, ascending."""
        idx = self.tree.query_ball_point(
            np.asarray(center, dtype=np.float64), radius, workers=workers
        )
        return np.asarray(sorted(idx), dtype=np.int64)

    def clipped(self, ball: Ball) -> np.ndarray:
        return self.points[self.query_ball(ball.center, ball.radius)]

    def decimated_indices(self, pitch: float) -> np.ndarray:
        """One representative index per grid cell of the given pitch.

        Deterministic: the lowest index in each occupied cell wins.
        """
        if pitch <= 0:
            raise ParamOutOfRange(f"decimation pitch must be positive, got {pitch}")
        keys = np.floor(self.points / pitch).astype(np.int64)
        _, first = np.unique(keys, axis=0, return_index=True)
        return np.sort(first)


def csr_neighbors(
    tree: cKDTree, centers: np.ndarray, radii, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor lists for many balls as a CSR pair (indptr, indices)."""
    lists = tree.query_ball_point(centers, radii, workers=workers, return_sorted=True)
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    indptr = np.zeros(len(lists) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    if indptr[-1] == 0:
        return indptr, np.empty(0, dtype=np.int64)
    indices = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists])
    return indptr, indices


@dataclass(frozen=True)
class ScaleLadder:
    """Descending geometric list of working scales."""

    r_max: float = 1.0
    r0: float = 0.01
    ratio: float = DEFAULT_LADDER_RATIO

    def __post_init__(self):
        if not (0 < self.r0 <= self.r_max):
            raise ParamOutOfRange(f"need 0 < r0 <= r_max, got r0={self.r0} r_max={self.r_max}")
        if not (0 < self.ratio < 1):
            raise ParamOutOfRange(f"ladder ratio must lie in (0,1), got {self.ratio}")

    @property
    def scales(self) -> np.ndarray:
        count = int(math.floor(math.log(self.r0 / self.r_max) / math.log(self.ratio) + 1e-9)) + 1
        count = max(count, 1)
        return self.r_max * self.ratio ** np.arange(count)


class PlaneFit(NamedTuple):
    plane: AffinePlane
    delta_actual: float
    count: int
    degenerate: bool


@dataclass
class BallAnalysis:
    """Classification outcome for one ball.

    For a good ball `plane` is the fitted k-plane.  For a bad ball it is the
    lower-dimensional flat spanned by the failing witness prefix, and
    delta_actual then measures the certified tube half-width over the radius.
    """

    ball: Ball
    plane: AffinePlane
    delta_actual: float
    good: bool
    witness: IndependenceWitness
    calib_value: float | None = None


def _complete_frame(rows: np.ndarray, n: int, k: int) -> np.ndarray:
    """Extend orthonormal rows to k rows with axis directions, deterministically."""
    out = list(rows)
    for axis in range(n):
        if len(out) == k:
            break
        v = np.zeros(n)
        v[axis] = 1.0
        for u in out:
            v -= (v @ u) * u
        norm = np.linalg.norm(v)
        if norm > 0.5:
            out.append(v / norm)
    return np.array(out)


def _oriented(vectors: np.ndarray, at: np.ndarray, form: CalibrationForm | None) -> np.ndarray:
    if form is None or vectors.shape[0] != form.degree:
        return orient_frame(vectors)
    plus = evaluate_on_vectors(form, at, vectors)
    flipped = vectors.copy()
    flipped[-1] = -flipped[-1]
    minus = evaluate_on_vectors(form, at, flipped)
    if minus > plus:
        return flipped
    if minus == plus:
        return orient_frame(vectors)
    return vectors


def best_fit_plane(
    cloud: PointCloud, ball: Ball, form: CalibrationForm | None = None
) -> PlaneFit:
    """Principal-component k-plane through the centroid of the clipped points."""
    pts = cloud.clipped(ball)
    if pts.shape[0] == 0:
        raise EmptyBall(f"no cloud points in ball at {ball.center} radius {ball.radius}")
    k = cloud.k
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(svals > max(svals[0] if svals.size else 0.0, 1e-300) * 1e-12))
    degenerate = pts.shape[0] <= k or rank < k
    rows = vt[: min(k, rank)] if svals.size else np.zeros((0, cloud.n))
    if rows.shape[0] < k:
        rows = _complete_frame(rows, cloud.n, k)
    frame = Frame(_oriented(rows, centroid, form))
    plane = AffinePlane(centroid, frame)
    delta = float(np.max(plane.distance(pts))) / ball.radius if ball.radius > 0 else 0.0
    return PlaneFit(plane, delta, pts.shape[0], degenerate)


def _disk_distances(points: np.ndarray, plane: AffinePlane, ball: Ball) -> np.ndarray:
    """Exact distances from points to plane∩ball (a k-disk)."""
    q = plane.project(ball.center[None, :])[0]
    h = float(np.linalg.norm(q - ball.center))
    if h > ball.radius:
        return np.full(points.shape[0], np.inf)
    disk_r = math.sqrt(max(ball.radius**2 - h**2, 0.0))
    feet = plane.project(points)
    w = feet - q
    dw = np.linalg.norm(w, axis=1)
    scale = np.ones_like(dw)
    far = dw > disk_r
    scale[far] = disk_r / dw[far]
    closest = q + w * scale[:, None]
    return np.linalg.norm(points - closest, axis=1)


def _disk_grid(plane: AffinePlane, ball: Ball, per_axis: int) -> np.ndarray:
    """Sample points of plane∩ball on a tangential grid."""
    q = plane.project(ball.center[None, :])[0]
    h = float(np.linalg.norm(q - ball.center))
    if h > ball.radius:
        return np.empty((0, plane.n))
    disk_r = math.sqrt(max(ball.radius**2 - h**2, 0.0))
    k = plane.k
    axes = [np.linspace(-disk_r, disk_r, per_axis) for _ in range(k)]
    mesh = np.meshgrid(*axes, indexing="ij") if k else []
    coords = np.stack([m.ravel() for m in mesh], axis=1) if k else np.zeros((1, 0))
    keep = np.linalg.norm(coords, axis=1) <= disk_r
    return q + coords[keep] @ plane.frame.vectors


class BetaResult(NamedTuple):
    value: float
    plane: AffinePlane
    upper_bound: bool


def beta_infty(
    cloud: PointCloud, x, r: float, grid: int = 65, refine: bool = True
) -> BetaResult:
    """Two-sided Hausdorff flatness of the clipped cloud, normalized by r.

    The reported value is an upper bound for the infimum over planes: the
    plane search is a principal-component start refined by a derivative-free
    local optimization, not an exact minimization.
    """
    center = np.asarray(x, dtype=np.float64)
    ball = Ball(center, r)
    pts = cloud.clipped(ball)
    if pts.shape[0] == 0:
        raise EmptyBall(f"no cloud points in ball at {center} radius {r}")
    k, n = cloud.k, cloud.n
    start = best_fit_plane(cloud, ball)
    local_tree = cKDTree(pts)

    def two_sided(plane: AffinePlane) -> float:
        d1 = np.max(_disk_distances(pts, plane, ball))
        samples = _disk_grid(plane, ball, grid)
        if samples.shape[0] == 0:
            return float(d1)
        d2, _ = local_tree.query(samples, k=1)
        return float(max(d1, np.max(d2)))

    base_frame = start.plane.frame
    comp = base_frame.complement()
    m = n - k

    def build(params: np.ndarray) -> AffinePlane | None:
        off = params[:m]
        rot = params[m:].reshape(k, m)
        base = start.plane.base + off @ comp.vectors
        raw = base_frame.vectors + rot @ comp.vectors
        try:
            frame, _ = orthonormalize(raw, 1e-9)
        except DegenerateInput:
            return None
        return AffinePlane(base, frame)

    best_plane = start.plane
    best = two_sided(best_plane)
    if refine and pts.shape[0] > 1 and m > 0:
        def objective(params):
            plane = build(params)
            if plane is None:
                return best + r
            return two_sided(plane)

        x0 = np.zeros(m + k * m)
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"maxiter": 120 * len(x0), "xatol": 1e-4 * r, "fatol": 1e-6 * r},
        )
        cand = build(res.x)
        if cand is not None:
            val = two_sided(cand)
            if val < best:
                best, best_plane = val, cand
    return BetaResult(best / r, best_plane, True)


def _witness_from_scan(
    cloud: PointCloud, ball: Ball, eps: float, row_idx: np.ndarray, slack: float
) -> IndependenceWitness:
    valid = row_idx[row_idx >= 0]
    pts = cloud.points[valid]
    if pts.shape[0] == 0:
        return IndependenceWitness(
            pts, np.empty(0), eps * ball.radius, slack, False
        )
    res = affine_residuals(pts) if pts.shape[0] > 1 else np.empty(0)
    return IndependenceWitness(pts, res, eps * ball.radius, slack, slack >= 0.0)


def classify_ball(
    cloud: PointCloud, ball: Ball, eps: float, form: CalibrationForm | None = None
) -> BallAnalysis:
    """Good/bad verdict for one ball with a witness or a certified flat."""
    idx = cloud.query_ball(ball.center, ball.radius)
    indptr = np.array([0, idx.shape[0]], dtype=np.int64)
    slacks, wits = goodness_scan(
        cloud.points,
        indptr,
        idx,
        np.atleast_2d(np.asarray(ball.center, dtype=np.float64)),
        np.array([ball.radius]),
        cloud.k,
        eps,
    )
    slack = float(slacks[0])
    witness = _witness_from_scan(cloud, ball, eps, wits[0], slack)
    if witness.verdict:
        fit = best_fit_plane(cloud, ball, form)
        calib = None
        if form is not None and form.degree == cloud.k:
            calib = evaluate_on_vectors(form, ball.center, fit.plane.frame.vectors)
        return BallAnalysis(ball, fit.plane, fit.delta_actual, True, witness, calib)
    # bad ball: the witness prefix spans a flat whose eps*r tube holds the
    # ball; the prefix ends before the first sub-threshold residual
    chosen = witness.points
    if chosen.shape[0] > 1:
        res = affine_residuals(chosen)
        cut = int(np.argmax(res < eps * ball.radius)) if np.any(res < eps * ball.radius) else len(res)
        chosen = chosen[: cut + 1]
    if chosen.shape[0] == 0:
        plane = AffinePlane(ball.center, Frame(np.zeros((0, cloud.n))))
        return BallAnalysis(ball, plane, 0.0, False, witness, None)
    if chosen.shape[0] == 1:
        frame = Frame(np.zeros((0, cloud.n)))
    else:
        frame, _ = orthonormalize(chosen[1:] - chosen[0], 1e-14)
    plane = AffinePlane(chosen[0], frame)
    pts = cloud.points[idx]
    width = float(np.max(plane.distance(pts))) if pts.shape[0] else 0.0
    return BallAnalysis(ball, plane, width / ball.radius, False, witness, None)


def classify_many(
    cloud: PointCloud,
    centers: np.ndarray,
    radius,
    eps: float,
    candidate_idx: np.ndarray | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized goodness scans; returns (slack, witness index) per center.

    Witness indices refer to the full cloud even when a candidate subset is
    supplied.  Scans run in center chunks to bound CSR memory.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    count = centers.shape[0]
    radii = np.broadcast_to(np.asarray(radius, dtype=np.float64), (count,)).copy()
    if candidate_idx is None:
        tree, pts, remap = cloud.tree, cloud.points, None
    else:
        remap = np.asarray(candidate_idx, dtype=np.int64)
        pts = cloud.points[remap]
        tree = cKDTree(pts)
    slacks = np.empty(count)
    wits = np.full((count, cloud.k + 1), -1, dtype=np.int64)
    # rough per-ball neighbor estimate drives the chunk size
    probe_at = centers[:: max(1, count // 8)][:8]
    probe = tree.query_ball_point(probe_at, radii[:: max(1, count // 8)][:8], return_length=True)
    est = max(int(np.max(probe)), 1)
    chunk = max(1, min(count, _CSR_BUDGET // est))
    for lo in range(0, count, chunk):
        hi = min(lo + chunk, count)
        cc = np.ascontiguousarray(centers[lo:hi])
        rr = np.ascontiguousarray(radii[lo:hi])
        indptr, indices = csr_neighbors(tree, cc, rr, workers)
        s, w = goodness_scan(pts, indptr, indices, cc, rr, cloud.k, eps)
        slacks[lo:hi] = s
        wits[lo:hi] = w
    if remap is not None:
        found = wits >= 0
        wits[found] = remap[wits[found]]
    return slacks, wits


class RadiusField:
    """Selected centers with their stop scales, plus the Lipschitz extension."""

    def __init__(
        self,
        centers: np.ndarray,
        s_values: np.ndarray,
        r0: float,
        r_max: float,
        s_lower: np.ndarray | None = None,
    ):
        self.centers = as_point_array(centers)
        self.s_values = np.asarray(s_values, dtype=np.float64)
        if self.centers.shape[0] != self.s_values.shape[0]:
            raise DegenerateInput("centers and s values disagree in length")
        self.r0 = float(r0)
        self.r_max = float(r_max)
        self.s_lower = (
            np.asarray(s_lower, dtype=np.float64) if s_lower is not None else self.s_values.copy()
        )
        self.tree = cKDTree(self.centers)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def bad_mask(self) -> np.ndarray:
        return self.s_values > self.r0 * (1 + 1e-12)

    def extension(self, queries) -> np.ndarray:
        """r at each query: min over centers c of max(5|y−c|, s_c), capped at 2.

        Agrees with s on the centers, dominates d(y, C), and is 5-Lipschitz;
        all three follow from the closed form plus fifth-ball disjointness.
        """
        q = as_point_array(queries, self.centers.shape[1])
        nn_d, nn_i = self.tree.query(q, k=1)
        bound = np.minimum(EXTENSION_CAP, np.maximum(5.0 * nn_d, self.s_values[nn_i]))
        lists = self.tree.query_ball_point(q, bound / 5.0 * (1 + 1e-12))
        out = np.empty(q.shape[0])
        for i, neigh in enumerate(lists):
            if not neigh:
                out[i] = EXTENSION_CAP
                continue
            idx = np.asarray(neigh, dtype=np.int64)
            d = np.linalg.norm(self.centers[idx] - q[i], axis=1)
            out[i] = min(EXTENSION_CAP, float(np.min(np.maximum(5.0 * d, self.s_values[idx]))))
        return out


def _vitali_select(points: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Greedy selection, descending s, with exactly disjoint fifth-balls."""
    order = np.argsort(-s, kind="stable")
    pts, rad = points[order], s[order]
    tree = cKDTree(pts)
    query_r = (rad + rad[0]) / 5.0
    total = tree.query_ball_point(pts[0], float(query_r[0]), return_length=True)
    est = max(total, 1) * pts.shape[0]
    if est <= _CSR_BUDGET:
        indptr, indices = csr_neighbors(tree, pts, query_r)
        keep = greedy_pack(pts, rad, indptr, indices, VITALI_FACTOR)
    else:
        # incremental fallback when the conflict lists would not fit: an
        # indexed prefix of kept points plus a brute-checked recent tail
        keep = np.zeros(pts.shape[0], dtype=bool)
        indexed: list[int] = []
        tail: list[int] = []
        kept_tree = None
        for i in range(pts.shape[0]):
            ok = True
            if kept_tree is not None:
                for j in kept_tree.query_ball_point(pts[i], float(query_r[i])):
                    gi = indexed[j]
                    if np.linalg.norm(pts[i] - pts[gi]) < (rad[i] + rad[gi]) / 5.0:
                        ok = False
                        break
            if ok and tail:
                tarr = np.asarray(tail)
                d = np.linalg.norm(pts[tarr] - pts[i], axis=1)
                if np.any(d < (rad[i] + rad[tarr]) / 5.0):
                    ok = False
            if ok:
                keep[i] = True
                tail.append(i)
                if len(tail) >= 256:
                    indexed.extend(tail)
                    tail = []
                    kept_tree = cKDTree(pts[indexed])
    return np.sort(order[keep])


def compute_s_field(
    cloud: PointCloud,
    ladder: ScaleLadder,
    eps: float,
    decimate: bool | None = None,
    workers: int = 1,
) -> RadiusField:
    """Stop scale per point over the discrete ladder, then Vitali selection.

    s_x is the finest ladder scale at which this and every coarser ladder
    ball centered at x is good; r0 when the whole ladder is good, r_max when
    even the top ball is bad.  The continuous-scale value is only bracketed
    by adjacent ladder rungs; s_lower records the bracket floor.
    """
    n_pts = cloud.size
    if decimate is None:
        decimate = n_pts > DECIMATION_MIN_SIZE
    scales = ladder.scales
    all_good = np.ones(n_pts, dtype=bool)
    s_val = np.full(n_pts, ladder.r_max)
    s_low = np.full(n_pts, ladder.r_max)
    prev_scale = ladder.r_max
    for depth, t in enumerate(scales):
        active = np.flatnonzero(all_good)
        if active.size == 0:
            break
        cand = None
        if decimate:
            idx = cloud.decimated_indices(t * DECIMATION_PITCH)
            if idx.size < n_pts * 0.9:
                cand = idx
        slacks, _ = classify_many(
            cloud, cloud.points[active], t, eps, candidate_idx=cand, workers=workers
        )
        good = slacks >= 0.0
        if cand is not None and not np.all(good):
            # a failed decimated scan is only a hint; recheck in full
            retry = active[~good]
            full_slacks, _ = classify_many(cloud, cloud.points[retry], t, eps, workers=workers)
            good[~good] = full_slacks >= 0.0
        good_idx = active[good]
        s_val[good_idx] = t
        bad_idx = active[~good]
        if depth == 0:
            s_val[bad_idx] = ladder.r_max
            s_low[bad_idx] = ladder.r_max
        else:
            s_val[bad_idx] = prev_scale
            s_low[bad_idx] = t
        all_good[bad_idx] = False
        prev_scale = t
    finished = all_good
    s_val[finished] = ladder.r0
    s_low[finished] = ladder.r0
    selected = _vitali_select(cloud.points, s_val)
    return RadiusField(
        cloud.points[selected], s_val[selected], ladder.r0, ladder.r_max, s_low[selected]
    )


def effective_radii(
    r_values: np.ndarray, r: float, fit_scale_factor: float = FIT_SCALE_FACTOR_DEFAULT
) -> tuple[np.ndarray, np.ndarray]:
    """Comparability radius and fitting radius derived from extension values.

    The comparability radius is (r_y ∨ r)/100, which is 1/20-Lipschitz when
    r_y is 5-Lipschitz.  The fitting radius is fit_scale_factor times the
    max, with the default reproducing the construction's 10^4 multiple of
    the comparability radius.
    """
    vals = np.maximum(np.asarray(r_values, dtype=np.float64), r)
    return vals * COMPARABILITY_FACTOR, vals * fit_scale_factor
