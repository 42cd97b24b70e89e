"""Exact geometric primitives: frames, planes, projectors, balls, witnesses.

Everything downstream (plane fitting, partition supports, slab covers)
reduces to the operations in this module, so tolerances here are the
tightest in the package: frames are orthonormal to 1e-12, projectors
symmetric to 1e-12 and idempotent to 1e-10.  Membership predicates use
closed balls; a point exactly on the boundary is inside.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInput, RankMismatch

FRAME_ORTHO_TOL = 1e-12
PROJ_SYM_TOL = 1e-12
PROJ_IDEM_TOL = 1e-10
PROJ_TRACE_TOL = 1e-10


def as_point_array(points, dim: int | None = None) -> np.ndarray:
    """Coerce to a float64 (m, n) array, promoting a single point to m=1."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DegenerateInput(f"expected points of shape (m, n), got {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DegenerateInput(f"expected ambient dimension {dim}, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True)
class Frame:
    """Ordered orthonormal rows spanning a k-dimensional subspace of R^n.

    k = 0 (zero rows) is legal and denotes the trivial subspace; it shows up
    as the direction space of 0-dimensional planes in slab covers.
    """

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise DegenerateInput(f"frame must be a (k, n) matrix, got shape {v.shape}")
        object.__setattr__(self, "vectors", v)
        if v.shape[0] > v.shape[1]:
            raise DegenerateInput(f"frame rank {v.shape[0]} exceeds ambient dimension {v.shape[1]}")
        if v.shape[0] > 0:
            gram = v @ v.T
            err = np.max(np.abs(gram - np.eye(v.shape[0])))
            if err > FRAME_ORTHO_TOL:
                raise DegenerateInput(f"frame rows not orthonormal: deviation {err:.3e}")

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def projector(self) -> np.ndarray:
        return self.vectors.T @ self.vectors

    def complement(self) -> "Frame":
        """Orthonormal basis of the orthogonal complement."""
        n, k = self.n, self.k
        if k == 0:
            return Frame(np.eye(n))
        if k == n:
            return Frame(np.zeros((0, n)))
        # null space of the row span, via full SVD
        _, _, vt = np.linalg.svd(self.vectors, full_matrices=True)
        return Frame(vt[k:])


@dataclass(frozen=True)
class AffinePlane:
    """Affine k-plane given by a base point and a direction frame."""

    base: np.ndarray
    frame: Frame

    def __post_init__(self):
        b = np.asarray(self.base, dtype=np.float64).reshape(-1)
        if b.shape[0] != self.frame.n:
            raise DegenerateInput("plane base and frame live in different dimensions")
        object.__setattr__(self, "base", b)

    @property
    def k(self) -> int:
        return self.frame.k

    @property
    def n(self) -> int:
        return self.frame.n

    def project(self, points) -> np.ndarray:
        pts = as_point_array(points, self.n)
        rel = pts - self.base
        if self.k == 0:
            return np.broadcast_to(self.base, pts.shape).copy()
        return self.base + (rel @ self.frame.vectors.T) @ self.frame.vectors

    def distance(self, points) -> np.ndarray:
        pts = as_point_array(points, self.n)
        return np.linalg.norm(pts - self.project(pts), axis=1)

    def tangential_coords(self, points) -> np.ndarray:
        pts = as_point_array(points, self.n)
        return (pts - self.base) @ self.frame.vectors.T


@dataclass(frozen=True)
class ProjectionOperator:
    """Validated orthogonal projection matrix with integer rank."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DegenerateInput(f"projector must be square, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)
        if np.max(np.abs(m - m.T)) > PROJ_SYM_TOL:
            raise DegenerateInput("projector not symmetric within 1e-12")
        if np.max(np.abs(m @ m - m)) > PROJ_IDEM_TOL:
            raise DegenerateInput("projector not idempotent within 1e-10")
        tr = float(np.trace(m))
        if abs(tr - round(tr)) > PROJ_TRACE_TOL:
            raise DegenerateInput(f"projector trace {tr} not within 1e-10 of an integer")

    @classmethod
    def from_frame(cls, frame: Frame) -> "ProjectionOperator":
        return cls(frame.projector())

    @property
    def rank(self) -> int:
        return round(float(np.trace(self.matrix)))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, points) -> np.ndarray:
        return as_point_array(points, self.n) @ self.matrix


@dataclass(frozen=True)
class Ball:
    """Closed ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius >= 0.0:
            raise DegenerateInput(f"ball radius must be nonnegative, got {self.radius}")

    @property
    def n(self) -> int:
        return self.center.shape[0]

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = as_point_array(points, self.n)
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius + tol

    def scaled(self, factor: float) -> "Ball":
        return Ball(self.center, self.radius * factor)


class IndependenceWitness(NamedTuple):
    """Outcome of an eps-independence test on an ordered candidate set."""

    points: np.ndarray        # (k+1, n) the tested candidates, in order
    residuals: np.ndarray     # (k,) distance of e_{i+1} to the affine span of e_0..e_i
    threshold: float          # eps * r
    slack: float              # min residual minus threshold; >= 0 passes
    verdict: bool


class OrthonormalizationReport(NamedTuple):
    """Pivot norms and measured expansion-coefficient bound from Gram-Schmidt."""

    pivot_norms: np.ndarray      # (k,) residual norm consumed at each step
    coefficients: np.ndarray     # (k, k) expansion of each input in the output frame
    coeff_bound: float           # max |coefficient| / |input vector|
    eps: float
    scale: float


class HausdorffResult(NamedTuple):
    value: float
    empty_clip: bool


def orthonormalize(vectors, eps: float, scale: float = 1.0) -> tuple[Frame, OrthonormalizationReport]:
    """Gram-Schmidt with a quantitative pivot floor.

    Every residual must have norm at least eps * scale, otherwise the input
    is declared degenerate.  The report carries the measured bound c with
    |lambda_ij| <= c * |v_i| for the expansion of each input vector in the
    returned frame; callers use it to size safe perturbations.
    """
    v = as_point_array(vectors)
    k, n = v.shape
    if k == 0:
        raise DegenerateInput("cannot orthonormalize an empty set of vectors")
    if k > n:
        raise DegenerateInput(f"{k} vectors cannot be independent in dimension {n}")
    if not (eps > 0 and scale > 0):
        raise DegenerateInput("eps and scale must be positive")
    basis = np.zeros((k, n))
    pivots = np.zeros(k)
    for i in range(k):
        w = v[i].copy()
        # two rounds of projection for numerical orthogonality
        for _ in range(2):
            if i:
                w -= (w @ basis[:i].T) @ basis[:i]
        norm = float(np.linalg.norm(w))
        if norm < eps * scale:
            raise DegenerateInput(
                f"pivot {i} has residual norm {norm:.3e} below eps*scale = {eps * scale:.3e}"
            )
        pivots[i] = norm
        basis[i] = w / norm
    frame = Frame(basis)
    coeffs = v @ basis.T
    in_norms = np.linalg.norm(v, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(coeffs) / in_norms[:, None]
    bound = float(np.max(ratios[in_norms > 0, :])) if np.any(in_norms > 0) else 0.0
    return frame, OrthonormalizationReport(pivots, coeffs, bound, eps, scale)


def affine_residuals(points) -> np.ndarray:
    """Distances of e_{i+1} to the affine span of e_0..e_i, for i = 0..k-1.

    Degenerate intermediate steps contribute a zero residual and no new
    direction, so later residuals remain meaningful.
    """
    pts = as_point_array(points)
    m, n = pts.shape
    if m < 2:
        return np.zeros(0)
    diffs = pts[1:] - pts[0]
    dirs = np.zeros((0, n))
    out = np.zeros(m - 1)
    for i in range(m - 1):
        w = diffs[i].copy()
        for _ in range(2):
            if len(dirs):
                w -= (w @ dirs.T) @ dirs
        norm = float(np.linalg.norm(w))
        out[i] = norm
        if norm > 1e-14 * max(1.0, float(np.linalg.norm(diffs[i]))):
            dirs = np.vstack([dirs, w / norm])
    return out


def eps_linear_independence(points, eps: float, r: float) -> IndependenceWitness:
    """Test an ordered set e_0..e_k for eps-independence at scale r.

    Each e_{i+1} must lie outside the closed eps*r neighborhood of the
    affine span of its predecessors.  Exclusion is closed-ball: a residual
    exactly equal to eps*r has slack 0 and passes.
    """
    pts = as_point_array(points)
    if pts.shape[0] < 2:
        raise DegenerateInput("independence test needs at least two points")
    if not (eps > 0 and r > 0):
        raise DegenerateInput("eps and r must be positive")
    res = affine_residuals(pts)
    threshold = eps * r
    slack = float(np.min(res) - threshold)
    return IndependenceWitness(pts, res, threshold, slack, slack >= 0.0)


def _coerce_projector(obj) -> np.ndarray:
    if isinstance(obj, ProjectionOperator):
        return obj.matrix
    if isinstance(obj, Frame):
        return obj.projector()
    if isinstance(obj, AffinePlane):
        return obj.frame.projector()
    m = np.asarray(obj, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DegenerateInput("cannot interpret object as a projector")
    return ProjectionOperator(m).matrix


def grassmann_distance(a, b) -> float:
    """Spectral-norm distance between two subspace projectors of equal rank."""
    pa, pb = _coerce_projector(a), _coerce_projector(b)
    if pa.shape != pb.shape:
        raise RankMismatch(f"ambient dimensions differ: {pa.shape[0]} vs {pb.shape[0]}")
    ra, rb = round(float(np.trace(pa))), round(float(np.trace(pb)))
    if ra != rb:
        raise RankMismatch(f"subspace ranks differ: {ra} vs {rb}")
    return float(np.max(np.abs(np.linalg.eigvalsh(pa - pb))))


def one_sided_hausdorff(a_points, b, clip: Ball | None = None) -> HausdorffResult:
    """sup over a in A∩clip of dist(a, B).

    The clip restricts the supremum side only; B (a point set or an
    AffinePlane) is used in full.  An empty A∩clip yields 0 with the empty
    flag set.
    """
    a = as_point_array(a_points)
    if clip is not None:
        a = a[clip.contains(a)]
    if a.shape[0] == 0:
        return HausdorffResult(0.0, True)
    if isinstance(b, AffinePlane):
        return HausdorffResult(float(np.max(b.distance(a))), False)
    bp = as_point_array(b)
    if bp.shape[0] == 0:
        raise DegenerateInput("distance to an empty target set is undefined")
    # chunk the pairwise distance computation to bound memory
    out = 0.0
    step = max(1, int(4e6) // max(bp.shape[0], 1))
    for lo in range(0, a.shape[0], step):
        block = a[lo : lo + step]
        d2 = np.sum((block[:, None, :] - bp[None, :, :]) ** 2, axis=2)
        out = max(out, float(np.sqrt(np.max(np.min(d2, axis=1)))))
    return HausdorffResult(out, False)


def hausdorff_distance(a_points, b_points, clip: Ball | None = None) -> HausdorffResult:
    """Symmetric Hausdorff distance between two point sets, clipped."""
    left = one_sided_hausdorff(a_points, b_points, clip)
    right = one_sided_hausdorff(b_points, a_points, clip)
    return HausdorffResult(max(left.value, right.value), left.empty_clip or right.empty_clip)


def orient_frame(vectors: np.ndarray) -> np.ndarray:
    """Flip the last row if needed so the first nonzero Plucker coordinate is positive.

    Gives every spanning set of a given subspace the same orientation, which
    keeps calibration evaluations deterministic when no form is supplied.
    """
    v = np.array(vectors, dtype=np.float64)
    k, n = v.shape
    if k == 0:
        return v
    best = 0.0
    for cols in itertools.combinations(range(n), k):
        d = float(np.linalg.det(v[:, cols]))
        if abs(d) > 1e-12 * max(1.0, abs(best)):
            if d < 0:
                v[-1] = -v[-1]
            return v
        if abs(d) > abs(best):
            best = d
    if best < 0:
        v[-1] = -v[-1]
    return v


def batched_eigh_descending(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a stack of symmetric matrices, eigenvalues descending.

    The n = 2 case uses the closed form, which is both faster and exactly
    deterministic; larger n defers to LAPACK.  Returned eigenvectors are the
    columns of the second array.
    """
    m = np.asarray(mats, dtype=np.float64)
    single = m.ndim == 2
    if single:
        m = m[None]
    n = m.shape[-1]
    if n == 2:
        a, bb, c = m[:, 0, 0], m[:, 1, 1], m[:, 0, 1]
        half_tr = 0.5 * (a + bb)
        half_diff = 0.5 * (a - bb)
        rad = np.hypot(half_diff, c)
        vals = np.stack([half_tr + rad, half_tr - rad], axis=1)
        # stable eigenvector branch for the top eigenvalue
        v0 = np.where(half_diff[:, None] >= 0,
                      np.stack([rad + half_diff, c], axis=1),
                      np.stack([c, rad - half_diff], axis=1))
        norm = np.linalg.norm(v0, axis=1)
        degenerate = norm < 1e-300
        v0[degenerate] = (1.0, 0.0)
        norm[degenerate] = 1.0
        v0 /= norm[:, None]
        vecs = np.empty_like(m)
        vecs[:, :, 0] = v0
        vecs[:, 0, 1] = -v0[:, 1]
        vecs[:, 1, 1] = v0[:, 0]
    else:
        w, v = np.linalg.eigh(m)
        vals = w[:, ::-1].copy()
        vecs = v[:, :, ::-1].copy()
    if single:
        return vals[0], vecs[0]
    return vals, vecs


def unit_ball_volume(k: int) -> float:
    """Volume of the k-dimensional unit ball."""
    return math.pi ** (k / 2.0) / math.gamma(k / 2.0 + 1.0)
