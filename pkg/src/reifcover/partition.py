"""Maximal center selection and a C2 partition of unity on scaled balls.

Centers are chosen greedily so that quarter-radius balls stay pairwise
disjoint while full-radius balls cover the working domain.  Weights come
from a fixed piecewise-quintic bump rescaled per center, normalized by the
local sum.  Derivative sups are reported in scaled form so they can be
compared across refinement levels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ._backend import greedy_pack
from .errors import ConfigError, DegenerateInput, NotCovered
from .geometry import Ball, as_point_array
from .multiscale import csr_neighbors

PLATEAU_END = 1.0
SUPPORT_END = 4.0
QUARTER_FACTOR = 0.25
GRID_DIVISOR = 8.0
RADIUS_LIPSCHITZ = 1.0 / 20.0
FD_STEP_FACTOR = 1e-5
_PAIR_BUDGET = 30_000_000


class BumpProfile:
    """Quintic plateau bump: 1 out to the plateau end, 0 beyond the support end.

    The transition is the standard quintic smoothstep, so the profile and its
    first two derivatives are continuous everywhere and the extrema have
    closed forms.  For the default window [1, 4] the stored bounds are
    |h'| <= 0.625 and |h''| <= 10/(9*sqrt(3)).
    """

    def __init__(self, plateau_end: float = PLATEAU_END, support_end: float = SUPPORT_END):
        if not (0.0 < plateau_end < support_end):
            raise ConfigError("bump profile needs 0 < plateau end < support end")
        self.plateau_end = float(plateau_end)
        self.support_end = float(support_end)
        self.width = self.support_end - self.plateau_end
        self.deriv1_bound = 1.875 / self.width
        self.deriv2_bound = (10.0 / np.sqrt(3.0)) / self.width**2

    def _u(self, t: np.ndarray) -> np.ndarray:
        return np.clip((t - self.plateau_end) / self.width, 0.0, 1.0)

    def value(self, t) -> np.ndarray:
        u = self._u(np.asarray(t, dtype=np.float64))
        return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)

    def deriv(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        u = self._u(t)
        inside = (t > self.plateau_end) & (t < self.support_end)
        return np.where(inside, -30.0 * u**2 * (1.0 - u) ** 2 / self.width, 0.0)

    def deriv2(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        u = self._u(t)
        inside = (t > self.plateau_end) & (t < self.support_end)
        return np.where(inside, -60.0 * u * (2.0 * u - 1.0) * (u - 1.0) / self.width**2, 0.0)

    def joint_error(self) -> float:
        """Worst mismatch of h, h', h'' between adjacent pieces at the joints."""

        def transition(u: float) -> tuple[float, float, float]:
            return (
                1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2),
                -30.0 * u**2 * (1.0 - u) ** 2 / self.width,
                -60.0 * u * (2.0 * u - 1.0) * (u - 1.0) / self.width**2,
            )

        worst = 0.0
        for flat, u in (((1.0, 0.0, 0.0), 0.0), ((0.0, 0.0, 0.0), 1.0)):
            for a, b in zip(flat, transition(u)):
                worst = max(worst, abs(a - b))
        return worst


def _lex_sorted(points: np.ndarray) -> np.ndarray:
    order = np.lexsort(points.T[::-1])
    return points[order]


def _greedy_disjoint(points: np.ndarray, radii: np.ndarray, factor: float) -> np.ndarray:
    """Greedy mask over the given order keeping factor-scaled balls disjoint."""
    m = points.shape[0]
    if m == 0:
        return np.zeros(0, dtype=bool)
    tree = cKDTree(points)
    query_r = (radii + float(np.max(radii))) * factor
    probe = tree.query_ball_point(points[0], float(query_r[0]), return_length=True)
    if max(int(probe), 1) * m <= _PAIR_BUDGET:
        indptr, indices = csr_neighbors(tree, points, query_r)
        return greedy_pack(points, radii, indptr, indices, factor)
    mask = np.zeros(m, dtype=bool)
    kept: list[int] = []
    prefix_tree = None
    prefix_len = 0
    for i in range(m):
        ok = True
        if prefix_tree is not None:
            near = prefix_tree.query_ball_point(points[i], float(query_r[i]))
            for j in near:
                jj = kept[j]
                lim = (radii[i] + radii[jj]) * factor
                if np.dot(points[i] - points[jj], points[i] - points[jj]) < lim * lim:
                    ok = False
                    break
        if ok:
            for jj in kept[prefix_len:]:
                lim = (radii[i] + radii[jj]) * factor
                if np.dot(points[i] - points[jj], points[i] - points[jj]) < lim * lim:
                    ok = False
                    break
        if ok:
            mask[i] = True
            kept.append(i)
            if len(kept) - prefix_len >= 256:
                prefix_tree = cKDTree(points[kept])
                prefix_len = len(kept)
    return mask


def _validate_field(
    points: np.ndarray, radii: np.ndarray, rng: np.random.Generator, sample_pairs: int = 4096
) -> None:
    if np.any(radii <= 0.0) or not np.all(np.isfinite(radii)):
        raise DegenerateInput("radius field must be positive and finite on the domain")
    m = points.shape[0]
    if m < 2:
        return
    a = rng.integers(0, m, size=sample_pairs)
    b = rng.integers(0, m, size=sample_pairs)
    sep = np.linalg.norm(points[a] - points[b], axis=1)
    excess = np.abs(radii[a] - radii[b]) - RADIUS_LIPSCHITZ * sep
    tol = 1e-9 * max(1.0, float(np.max(radii)))
    if np.any(excess > tol):
        raise DegenerateInput("radius field is not 1/20-Lipschitz on the sampled pairs")


def select_centers(
    domain: Ball,
    radius_field: Callable[[np.ndarray], np.ndarray],
    extra_candidates: np.ndarray | None = None,
    validate: bool = True,
    include_grid: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy maximal center set with disjoint quarter-balls over the domain.

    Candidates are a uniform grid of pitch min(radius)/8 across the domain
    ball plus any supplied cloud points, traversed in lexicographic order so
    the selection is reproducible.  Maximality of the greedy set plus the
    1/20 Lipschitz bound on the radius field gives full-ball coverage.  With
    include_grid off the candidate set is just the supplied points, and the
    coverage guarantee shrinks to those points.
    """
    center = np.asarray(domain.center, dtype=np.float64)
    n = center.shape[0]
    radius = float(domain.radius)
    extra = (
        as_point_array(extra_candidates, n)
        if extra_candidates is not None and len(extra_candidates)
        else np.zeros((0, n))
    )
    if extra.shape[0]:
        keep = np.linalg.norm(extra - center, axis=1) <= radius * (1 + 1e-12)
        extra = extra[keep]

    # certified lower bound for min radius over the ball, probed coarsely
    probe_axis = np.linspace(-radius, radius, 9)
    probe = np.stack(np.meshgrid(*([probe_axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    probe = probe[np.linalg.norm(probe, axis=1) <= radius * (1 + 1e-12)] + center
    probe_pts = np.vstack([probe, extra, center[None, :]])
    probe_vals = np.asarray(radius_field(probe_pts), dtype=np.float64)
    if np.any(probe_vals <= 0.0):
        raise DegenerateInput("radius field must be positive on the domain")
    coarse_pitch = probe_axis[1] - probe_axis[0] if len(probe_axis) > 1 else 0.0
    certified_min = float(np.min(probe_vals)) - RADIUS_LIPSCHITZ * coarse_pitch * np.sqrt(n)
    if certified_min <= 0.0:
        certified_min = float(np.min(probe_vals)) * 0.5
    pitch = certified_min / GRID_DIVISOR

    if include_grid:
        axes = [np.arange(c - radius, c + radius + pitch * 0.5, pitch) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        grid = grid[np.linalg.norm(grid - center, axis=1) <= radius * (1 + 1e-12)]
    else:
        grid = np.zeros((0, n))
    if grid.shape[0] + extra.shape[0] == 0:
        raise DegenerateInput("no candidates inside the domain ball")
    candidates = _lex_sorted(np.vstack([grid, extra]))
    radii = np.asarray(radius_field(candidates), dtype=np.float64)
    if validate:
        _validate_field(candidates, radii, np.random.default_rng(0))
    mask = _greedy_disjoint(candidates, radii, QUARTER_FACTOR)
    return candidates[mask], radii[mask]


class PartitionOfUnity:
    """Normalized bump weights subordinate to support balls of radius 4 r."""

    def __init__(self, centers: np.ndarray, radii: np.ndarray, profile: BumpProfile | None = None):
        self.centers = as_point_array(centers)
        self.radii = np.asarray(radii, dtype=np.float64)
        if self.centers.shape[0] != self.radii.shape[0]:
            raise DegenerateInput("centers and radii disagree in length")
        if self.centers.shape[0] == 0:
            raise DegenerateInput("partition needs at least one center")
        if np.any(self.radii <= 0.0):
            raise DegenerateInput("partition radii must be positive")
        self.profile = profile if profile is not None else BumpProfile()
        self.tree = cKDTree(self.centers)
        self.rmax = float(np.max(self.radii))

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def quarter_disjointness_slack(self) -> float:
        """Min over near pairs of |x_i - x_j| - (r_i + r_j)/4; >= 0 when valid."""
        if self.size < 2:
            return np.inf
        # any violating pair is closer than rmax/2, so this query is exhaustive
        # for the sign of the slack; the value is reported over pairs within rmax
        pairs = self.tree.query_pairs(self.rmax * (1 + 1e-12), output_type="ndarray")
        if pairs.shape[0] == 0:
            return np.inf
        d = np.linalg.norm(self.centers[pairs[:, 0]] - self.centers[pairs[:, 1]], axis=1)
        lim = (self.radii[pairs[:, 0]] + self.radii[pairs[:, 1]]) * QUARTER_FACTOR
        return float(np.min(d - lim))

    def coverage_mask(self, points: np.ndarray) -> np.ndarray:
        """True where a point lies inside some full-radius center ball."""
        pts = as_point_array(points, self.centers.shape[1])
        lists = self.tree.query_ball_point(pts, self.rmax * (1 + 1e-12))
        out = np.zeros(pts.shape[0], dtype=bool)
        for i, neigh in enumerate(lists):
            if not neigh:
                continue
            idx = np.asarray(neigh, dtype=np.int64)
            d = np.linalg.norm(self.centers[idx] - pts[i], axis=1)
            out[i] = bool(np.any(d <= self.radii[idx] * (1 + 1e-12)))
        return out

    def raw_bumps(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR triplet (indptr, center indices, bump values) of nonzero bumps."""
        pts = as_point_array(points, self.centers.shape[1])
        reach = self.profile.support_end * self.rmax
        lists = self.tree.query_ball_point(pts, reach)
        indptr = np.zeros(pts.shape[0] + 1, dtype=np.int64)
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        for i, neigh in enumerate(lists):
            if neigh:
                idx = np.asarray(neigh, dtype=np.int64)
                d = np.linalg.norm(self.centers[idx] - pts[i], axis=1)
                v = self.profile.value(d / self.radii[idx])
                nz = v > 0.0
                idx, v = idx[nz], v[nz]
                order = np.argsort(idx)
                cols.append(idx[order])
                vals.append(v[order])
                indptr[i + 1] = indptr[i] + idx.shape[0]
            else:
                indptr[i + 1] = indptr[i]
        if cols:
            return indptr, np.concatenate(cols), np.concatenate(vals)
        return indptr, np.zeros(0, dtype=np.int64), np.zeros(0)

    def evaluate_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Normalized weights per point as a CSR triplet; rows sum to one."""
        indptr, cols, vals = self.raw_bumps(points)
        counts = np.diff(indptr)
        if np.any(counts == 0):
            bad = int(np.argmax(counts == 0))
            raise NotCovered(f"point index {bad} has no active bump")
        sums = np.add.reduceat(vals, indptr[:-1])
        return indptr, cols, vals / np.repeat(sums, counts)

    def evaluate(self, y: np.ndarray) -> list[tuple[int, float]]:
        indptr, cols, weights = self.evaluate_many(np.asarray(y, dtype=np.float64)[None, :])
        return [(int(c), float(w)) for c, w in zip(cols, weights)]

    def dump_csv(self, path: str) -> None:
        data = np.column_stack([self.centers, self.radii])
        np.savetxt(path, data, delimiter=",", fmt="%.17g")


def evaluate_partition(pou: PartitionOfUnity, y: np.ndarray) -> list[tuple[int, float]]:
    """Weights (center index, value) at y; raises NotCovered off the support."""
    return pou.evaluate(y)


def _phi_single(pou: PartitionOfUnity, alpha: int, pts: np.ndarray) -> np.ndarray:
    """phi_alpha at each point; NotCovered if any point has zero bump mass."""
    indptr, cols, vals = pou.raw_bumps(pts)
    counts = np.diff(indptr)
    if np.any(counts == 0):
        raise NotCovered("derivative probe fell outside the covered region")
    sums = np.add.reduceat(vals, indptr[:-1])
    out = np.zeros(pts.shape[0])
    hit = cols == alpha
    rows = np.repeat(np.arange(pts.shape[0]), counts)
    out[rows[hit]] = vals[hit]
    return out / sums


@dataclass(frozen=True)
class DerivativeBoundReport:
    order: int
    scaled_sups: tuple[float, ...]
    max_overlap: int
    probe_count: int
    step_factor: float


def derivative_bound_report(
    pou: PartitionOfUnity, probes: np.ndarray, order: int = 2
) -> DerivativeBoundReport:
    """Measured sup of r^j * |d^j phi| over probes by central differences.

    The step is FD_STEP_FACTOR times the radius of the center being
    differentiated, and the reported sup for each order j is the max over
    centers, probes, and coordinate directions of r^j times the absolute
    finite difference.  Scaling makes the numbers dilation invariant.
    """
    if order not in (1, 2):
        raise ConfigError("derivative report supports orders 1 and 2")
    pts = as_point_array(probes, pou.centers.shape[1])
    n = pts.shape[1]
    # stencil points sit up to 2h from the probe, so widen the support reach
    # accordingly or boundary centers would drop out of the difference
    reach = (pou.profile.support_end + 3.0 * FD_STEP_FACTOR) * pou.rmax
    indptr_nz, _, _ = pou.raw_bumps(pts)
    max_overlap = int(np.max(np.diff(indptr_nz)))
    sup1 = 0.0
    sup2 = 0.0
    for y in pts:
        active = pou.tree.query_ball_point(y, reach)
        for alpha in active:
            r = float(pou.radii[alpha])
            h = FD_STEP_FACTOR * r
            shifts = np.eye(n) * h
            plus = _phi_single(pou, alpha, y[None, :] + shifts)
            minus = _phi_single(pou, alpha, y[None, :] - shifts)
            grad = (plus - minus) / (2.0 * h)
            sup1 = max(sup1, r * float(np.max(np.abs(grad))))
            if order >= 2:
                base = float(_phi_single(pou, alpha, y[None, :])[0])
                diag = (plus - 2.0 * base + minus) / h**2
                worst = float(np.max(np.abs(diag)))
                for i in range(n):
                    for j in range(i + 1, n):
                        quad = np.array(
                            [
                                y + shifts[i] + shifts[j],
                                y + shifts[i] - shifts[j],
                                y - shifts[i] + shifts[j],
                                y - shifts[i] - shifts[j],
                            ]
                        )
                        q = _phi_single(pou, alpha, quad)
                        worst = max(worst, abs((q[0] - q[1] - q[2] + q[3]) / (4.0 * h**2)))
                sup2 = max(sup2, r**2 * worst)
    sups = (sup1,) if order == 1 else (sup1, sup2)
    return DerivativeBoundReport(
        order=order,
        scaled_sups=sups,
        max_overlap=max_overlap,
        probe_count=pts.shape[0],
        step_factor=FD_STEP_FACTOR,
    )


def build_partition(
    domain: Ball,
    radius_field: Callable[[np.ndarray], np.ndarray],
    extra_candidates: np.ndarray | None = None,
    profile: BumpProfile | None = None,
    validate: bool = True,
) -> PartitionOfUnity:
    """Select centers on the domain and wrap them as a partition of unity."""
    centers, radii = select_centers(domain, radius_field, extra_candidates, validate=validate)
    return PartitionOfUnity(centers, radii, profile)
