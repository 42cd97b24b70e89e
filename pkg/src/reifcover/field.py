"""Averaged-projector subspace field and its smoothness diagnostics.

At each query point the partition weights average the per-center plane
projectors into a matrix M, whose top eigenvectors span the local plane.
The affine projection built from that plane and the weighted center ell
yields the potential phi = half the squared distance to the plane, whose
zero set is the approximating manifold.  The checks in this module measure
the derivative bounds the construction is supposed to satisfy, always by
central finite differences so the measurements stay independent of the
formulas under test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, DegenerateInput, EigengapTooSmall, EmptyBall
from .geometry import (
    AffinePlane,
    Ball,
    Frame,
    as_point_array,
    batched_eigh_descending,
    one_sided_hausdorff,
    orthonormalize,
)
from .multiscale import COMPARABILITY_FACTOR, FIT_SCALE_FACTOR_DEFAULT, PointCloud, best_fit_plane
from .partition import PartitionOfUnity

GAP_MIN_DEFAULT = 0.5
BLOCK_DEGENERACY_TOL = 1e-8
FD_STEP_FACTOR = 1e-5
# second differences step on a fixed fraction of the local radius: the field
# varies on that scale, and a shorter step lets eigendecomposition roundoff
# (absolute, not relative to the local radius) swamp a constant field
FD_SECOND_STEP_FACTOR = 0.25
TRACE_FIRST_STEP = 1e-5
TRACE_SECOND_STEP = 5e-4
V_NORM_LIMIT = 0.1


@dataclass(frozen=True)
class SubspaceFieldSample:
    y: np.ndarray
    M: np.ndarray
    eigvals: np.ndarray
    gap: float
    Lhat: Frame
    ell: np.ndarray
    m: np.ndarray
    phi: float
    grad: np.ndarray
    hess: np.ndarray
    degenerate_block: bool

    def plane(self) -> AffinePlane:
        return AffinePlane(self.ell, self.Lhat)


class SubspaceField:
    """Partition-averaged projector field over a fixed set of center planes."""

    def __init__(
        self,
        pou: PartitionOfUnity,
        planes: list[AffinePlane],
        k: int,
        r: float,
        fit_radii: np.ndarray | None = None,
        deltas: np.ndarray | None = None,
        gap_min: float = GAP_MIN_DEFAULT,
        fit_scale_factor: float = FIT_SCALE_FACTOR_DEFAULT,
    ):
        if len(planes) != pou.size:
            raise DegenerateInput("one plane per partition center is required")
        if not planes:
            raise DegenerateInput("field needs at least one plane")
        n = planes[0].n
        for pl in planes:
            if pl.k != k or pl.n != n:
                raise DegenerateInput("all center planes must share dimension and ambient")
        self.pou = pou
        self.planes = planes
        self.k = int(k)
        self.n = int(n)
        self.r = float(r)
        self.gap_min = float(gap_min)
        self.projectors = np.stack([pl.frame.projector() for pl in planes])
        self.bases = np.stack([pl.base for pl in planes])
        if fit_radii is None:
            fit_radii = fit_scale_factor * pou.radii / COMPARABILITY_FACTOR
        self.fit_radii = np.asarray(fit_radii, dtype=np.float64)
        self.deltas = None if deltas is None else np.asarray(deltas, dtype=np.float64)

    def weights(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.pou.evaluate_many(points)

    def assemble(self, points: np.ndarray):
        """Batched M, eigensystem, ell, projector, m, phi at each point."""
        pts = as_point_array(points, self.n)
        indptr, cols, w = self.weights(pts)
        counts = np.diff(indptr)
        rows = np.repeat(np.arange(pts.shape[0]), counts)
        M = np.zeros((pts.shape[0], self.n, self.n))
        np.add.at(M, rows, w[:, None, None] * self.projectors[cols])
        vals, vecs = batched_eigh_descending(M)
        if self.k < self.n:
            gaps = vals[:, self.k - 1] - vals[:, self.k]
        else:
            gaps = vals[:, self.k - 1]
        if np.any(gaps < self.gap_min):
            worst = int(np.argmin(gaps))
            raise EigengapTooSmall(
                f"eigengap {gaps[worst]:.6f} below {self.gap_min} at point index {worst}"
            )
        # projection of each point onto each contributing plane, then averaged
        rel = pts[rows] - self.bases[cols]
        proj_pts = self.bases[cols] + np.einsum("mij,mj->mi", self.projectors[cols], rel)
        ell = np.zeros_like(pts)
        np.add.at(ell, rows, w[:, None] * proj_pts)
        top = vecs[:, :, : self.k]
        proj = top @ np.swapaxes(top, 1, 2)
        m = ell + np.einsum("bij,bj->bi", proj, pts - ell)
        diff = pts - m
        phi = 0.5 * np.sum(diff * diff, axis=1)
        return M, vals, vecs, ell, proj, m, phi

    def phi_many(self, points: np.ndarray) -> np.ndarray:
        return self.assemble(points)[6]

    def m_many(self, points: np.ndarray) -> np.ndarray:
        return self.assemble(points)[5]

    def proj_many(self, points: np.ndarray) -> np.ndarray:
        return self.assemble(points)[4]

    def ell_many(self, points: np.ndarray) -> np.ndarray:
        return self.assemble(points)[3]

    def relative_maps(self, points: np.ndarray, beta: int):
        """Small difference maps evaluated without large-term cancellation.

        Returns ell - z, m - z, and (M - P_beta)[z] per point.  Each is built
        from per-center differences that are already deviation-sized, so the
        values carry absolute rounding proportional to their own magnitude
        instead of to |z|; second differences of these stay meaningful.
        """
        pts = as_point_array(points, self.n)
        indptr, cols, w = self.weights(pts)
        counts = np.diff(indptr)
        rows = np.repeat(np.arange(pts.shape[0]), counts)
        rel = pts[rows] - self.bases[cols]
        proj_pts = self.bases[cols] + np.einsum("mij,mj->mi", self.projectors[cols], rel)
        pdiff = proj_pts - pts[rows]
        ell_tilde = np.zeros_like(pts)
        np.add.at(ell_tilde, rows, w[:, None] * pdiff)
        proj = self.assemble(pts)[4]
        m_tilde = ell_tilde - np.einsum("bij,bj->bi", proj, ell_tilde)
        diffs = self.projectors[cols] - self.projectors[beta]
        applied = np.einsum("mij,mj->mi", diffs, pts[rows])
        avg_diff = np.zeros_like(pts)
        np.add.at(avg_diff, rows, w[:, None] * applied)
        return ell_tilde, m_tilde, avg_diff

    def step_scale(self, y: np.ndarray) -> float:
        """Deterministic local radius for finite-difference steps."""
        _, cols, _ = self.weights(np.asarray(y, dtype=np.float64)[None, :])
        return float(np.min(self.pou.radii[cols]))

    def fit_radius_at(self, y: np.ndarray) -> float:
        """Fit radius of the heaviest contributing center at y."""
        _, cols, w = self.weights(np.asarray(y, dtype=np.float64)[None, :])
        return float(self.fit_radii[cols[int(np.argmax(w))]])

    def heaviest_center(self, y: np.ndarray) -> int:
        _, cols, w = self.weights(np.asarray(y, dtype=np.float64)[None, :])
        return int(cols[int(np.argmax(w))])

    def delta_at(self, y: np.ndarray) -> float | None:
        if self.deltas is None:
            return None
        _, cols, _ = self.weights(np.asarray(y, dtype=np.float64)[None, :])
        return float(np.max(self.deltas[cols]))

    def sample(self, y: np.ndarray) -> SubspaceFieldSample:
        yv = np.asarray(y, dtype=np.float64).reshape(-1)
        M, vals, vecs, ell, proj, m, phi = self.assemble(yv[None, :])
        scale = self.step_scale(yv)
        h = FD_STEP_FACTOR * scale
        shifts = np.eye(self.n) * h
        plus = self.phi_many(yv[None, :] + shifts)
        minus = self.phi_many(yv[None, :] - shifts)
        grad = (plus - minus) / (2.0 * h)
        # Hessian on the wider step: the potential carries absolute rounding
        # from |y|-sized intermediates that a short step would amplify
        h2 = FD_SECOND_STEP_FACTOR * scale
        shifts2 = np.eye(self.n) * h2
        plus2 = self.phi_many(yv[None, :] + shifts2)
        minus2 = self.phi_many(yv[None, :] - shifts2)
        hess = np.zeros((self.n, self.n))
        base = float(phi[0])
        np.fill_diagonal(hess, (plus2 - 2.0 * base + minus2) / h2**2)
        for i in range(self.n):
            for j in range(i + 1, self.n):
                quad = np.array(
                    [
                        yv + shifts2[i] + shifts2[j],
                        yv + shifts2[i] - shifts2[j],
                        yv - shifts2[i] + shifts2[j],
                        yv - shifts2[i] - shifts2[j],
                    ]
                )
                q = self.phi_many(quad)
                hess[i, j] = hess[j, i] = (q[0] - q[1] - q[2] + q[3]) / (4.0 * h2**2)
        block = vals[0, : self.k]
        degenerate = bool(block.size > 1 and np.min(-np.diff(block)) < BLOCK_DEGENERACY_TOL)
        top = vecs[0, :, : self.k].T
        gap = float(vals[0, self.k - 1] - (vals[0, self.k] if self.k < self.n else 0.0))
        return SubspaceFieldSample(
            y=yv,
            M=M[0],
            eigvals=vals[0],
            gap=gap,
            Lhat=Frame(top),
            ell=ell[0],
            m=m[0],
            phi=base,
            grad=grad,
            hess=hess,
            degenerate_block=degenerate,
        )

    @classmethod
    def from_cloud(
        cls,
        cloud: PointCloud,
        pou: PartitionOfUnity,
        r: float,
        fit_scale_factor: float = FIT_SCALE_FACTOR_DEFAULT,
        gap_min: float = GAP_MIN_DEFAULT,
        form=None,
    ) -> "SubspaceField":
        """Fit one plane per partition center at its fitting radius."""
        fit_radii = fit_scale_factor * pou.radii / COMPARABILITY_FACTOR
        planes = []
        deltas = np.zeros(pou.size)
        for alpha in range(pou.size):
            ball = Ball(pou.centers[alpha], float(fit_radii[alpha]))
            fit = best_fit_plane(cloud, ball, form=form)
            planes.append(fit.plane)
            idx = cloud.query_ball(ball.center, ball.radius)
            if idx.size:
                deltas[alpha] = float(np.max(fit.plane.distance(cloud.points[idx]))) / ball.radius
        return cls(
            pou,
            planes,
            cloud.k,
            r,
            fit_radii=fit_radii,
            deltas=deltas,
            gap_min=gap_min,
            fit_scale_factor=fit_scale_factor,
        )


def field_sample(
    pou: PartitionOfUnity,
    ball_planes: list[AffinePlane],
    y: np.ndarray,
    r: float,
    gap_min: float = GAP_MIN_DEFAULT,
) -> SubspaceFieldSample:
    """One-shot sample of the averaged-projector field at y."""
    k = ball_planes[0].k if ball_planes else 0
    field = SubspaceField(pou, ball_planes, k, r, gap_min=gap_min)
    return field.sample(y)


def _matrix_fd(fn, y: np.ndarray, h: float, h2: float | None = None):
    """Central first and second differences of a matrix- or vector-valued map.

    First differences use step h; second differences use h2 (default h),
    which callers widen when the map's values are unit-scale and the
    second-difference roundoff would otherwise swamp the signal.
    """
    n = y.shape[0]
    if h2 is None:
        h2 = h
    shifts = np.eye(n) * h
    base = fn(y[None, :])[0]
    plus = fn(y[None, :] + shifts)
    minus = fn(y[None, :] - shifts)
    first = (plus - minus) / (2.0 * h)
    shifts2 = np.eye(n) * h2
    plus2 = fn(y[None, :] + shifts2)
    minus2 = fn(y[None, :] - shifts2)
    second = {}
    for i in range(n):
        second[(i, i)] = (plus2[i] - 2.0 * base + minus2[i]) / h2**2
        for j in range(i + 1, n):
            quad = np.array(
                [
                    y + shifts2[i] + shifts2[j],
                    y + shifts2[i] - shifts2[j],
                    y - shifts2[i] + shifts2[j],
                    y - shifts2[i] - shifts2[j],
                ]
            )
            q = fn(quad)
            second[(i, j)] = (q[0] - q[1] - q[2] + q[3]) / (4.0 * h2**2)
    return base, first, second


def _op_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.ndim == 2 else float(np.linalg.norm(a))


@dataclass(frozen=True)
class ProjectorDerivativeReport:
    scaled_grad_proj: float
    scaled_hess_proj: float
    grad_m_minus_proj: float
    scaled_hess_m: float
    ell_minus_proj_first: float
    scaled_ell_second: float
    averaged_minus_center_first: float
    scaled_averaged_second: float
    step: float
    fit_radius: float
    local_radius: float


def projector_derivative_check(field: SubspaceField, y: np.ndarray) -> ProjectorDerivativeReport:
    """Finite-difference smoothness report for the projector, m, ell, and M maps.

    Scaled norms use the fitting radius for the projector and m and the
    comparability radius for the center maps, mirroring how each bound is
    stated.  All derivatives are centered differences at a step proportional
    to the local radius.
    """
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    rtil = field.step_scale(yv)
    rbar = field.fit_radius_at(yv)
    h = FD_STEP_FACTOR * rtil
    h2 = FD_SECOND_STEP_FACTOR * rtil
    beta = field.heaviest_center(yv)

    proj_base, proj_first, proj_second = _matrix_fd(field.proj_many, yv, h, h2)

    def ell_tilde(pts):
        return field.relative_maps(pts, beta)[0]

    def m_tilde(pts):
        return field.relative_maps(pts, beta)[1]

    def avg_diff(pts):
        return field.relative_maps(pts, beta)[2]

    # m and ell differ from their tilde maps by the identity, which drops out
    # of every second difference and shifts the Jacobian by I
    _, mt_first, mt_second = _matrix_fd(m_tilde, yv, h, h2)
    _, elt_first, elt_second = _matrix_fd(ell_tilde, yv, h, h2)
    _, avg_first, avg_second = _matrix_fd(avg_diff, yv, h, h2)
    grad_m = mt_first.T + np.eye(yv.shape[0])

    def ell_minus_proj(pts):
        prj = field.proj_many(pts)
        ell = field.ell_many(pts)
        return ell - np.einsum("bij,bj->bi", prj, pts)

    _, emp_first, _ = _matrix_fd(ell_minus_proj, yv, h, h2)

    return ProjectorDerivativeReport(
        scaled_grad_proj=rbar * max(_op_norm(g) for g in proj_first),
        scaled_hess_proj=rbar**2 * max(_op_norm(g) for g in proj_second.values()),
        grad_m_minus_proj=_op_norm(grad_m - proj_base),
        scaled_hess_m=rbar * max(float(np.linalg.norm(g)) for g in mt_second.values()),
        ell_minus_proj_first=max(float(np.linalg.norm(g)) for g in emp_first),
        scaled_ell_second=rtil * max(float(np.linalg.norm(g)) for g in elt_second.values()),
        averaged_minus_center_first=max(float(np.linalg.norm(g)) for g in avg_first),
        scaled_averaged_second=rtil * max(float(np.linalg.norm(g)) for g in avg_second.values()),
        step=h,
        fit_radius=rbar,
        local_radius=rtil,
    )


@dataclass(frozen=True)
class PlaneClosenessReport:
    cloud_plane_dist: float
    plane_refit_dist: float
    fit_radius: float
    delta: float | None
    cloud_plane_ratio: float | None
    plane_refit_ratio: float | None


def _disk_samples(plane: AffinePlane, center: np.ndarray, radius: float, per_axis: int = 41):
    """Grid sample of the plane patch inside the ball around center."""
    anchor = plane.project(center[None, :])[0]
    axis = np.linspace(-radius, radius, per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * plane.k), indexing="ij"), axis=-1).reshape(-1, plane.k)
    pts = anchor + mesh @ plane.frame.vectors
    keep = np.linalg.norm(pts - center, axis=1) <= radius * (1 + 1e-12)
    return pts[keep]


def plane_closeness_check(
    field: SubspaceField, cloud: PointCloud, y: np.ndarray
) -> PlaneClosenessReport:
    """Hausdorff distances between the cloud, the field plane, and a refit plane."""
    yv = np.asarray(y, dtype=np.float64).reshape(-1)
    sample = field.sample(yv)
    rbar = field.fit_radius_at(yv)
    ball = Ball(yv, rbar)
    idx = cloud.query_ball(yv, rbar)
    if idx.size == 0:
        raise EmptyBall("no cloud points within the fitting radius of the query")
    plane = sample.plane()
    near = cloud.points[idx]
    # one-sided on purpose: the cloud may have holes, so only cloud-to-plane
    # distance is meaningful at this scale
    d1, _ = one_sided_hausdorff(near, plane, clip=ball)

    wide = Ball(yv, 10.0 * rbar)
    refit = best_fit_plane(cloud, wide).plane
    disk_small = _disk_samples(plane, yv, 10.0 * rbar)
    disk_refit = _disk_samples(refit, yv, 10.0 * rbar)
    a, _ = one_sided_hausdorff(disk_small, refit, clip=None)
    b, _ = one_sided_hausdorff(disk_refit, plane, clip=None)
    d2 = max(a, b)

    delta = field.delta_at(yv)
    scale = None if delta is None or delta * rbar < 1e-15 else delta * rbar
    return PlaneClosenessReport(
        cloud_plane_dist=d1,
        plane_refit_dist=d2,
        fit_radius=rbar,
        delta=delta,
        cloud_plane_ratio=None if scale is None else d1 / scale,
        plane_refit_ratio=None if scale is None else d2 / scale,
    )


class TraceFunctionalProbe:
    """Rotation probe for the averaged trace: a base plane, a graph map, a direction."""

    def __init__(self, base: Frame, v: np.ndarray, w: np.ndarray, u: np.ndarray):
        self.base = base
        self.v = np.asarray(v, dtype=np.float64)
        n, k = base.n, base.k
        if self.v.shape != (n - k, k):
            raise ConfigError("graph map must send the base plane to its normal space")
        if _op_norm(self.v) > V_NORM_LIMIT + 1e-12:
            raise ConfigError("graph map norm exceeds the trust region 0.1")
        self.normal = _normal_frame(base)
        self.w = _unit_in_span(np.asarray(w, dtype=np.float64), base.vectors, "w")
        self.u = _unit_in_span(np.asarray(u, dtype=np.float64), self.normal, "u")

    def graph_frame(self) -> np.ndarray:
        """Orthonormal basis of the graph of v over the base plane."""
        raw = self.base.vectors + self.v.T @ self.normal
        frame, _ = orthonormalize(raw, eps=1e-12)
        return frame.vectors

    def lifted_direction(self) -> np.ndarray:
        coords = self.base.vectors @ self.w
        lifted = self.w + (self.v @ coords) @ self.normal
        return lifted / np.linalg.norm(lifted)


def _normal_frame(base: Frame) -> np.ndarray:
    n, k = base.n, base.k
    full = np.vstack([base.vectors, np.eye(n)])
    q, _ = np.linalg.qr(full.T)
    normal = q[:, k:n].T
    return normal


def _unit_in_span(vec: np.ndarray, span_rows: np.ndarray, name: str) -> np.ndarray:
    norm = np.linalg.norm(vec)
    if norm < 1e-14:
        raise ConfigError(f"{name} must be nonzero")
    unit = vec / norm
    coords = span_rows @ unit
    residual = unit - coords @ span_rows
    if np.linalg.norm(residual) > 1e-8:
        raise ConfigError(f"{name} must lie in its prescribed subspace")
    return unit


def trace_functional_derivatives(
    probe: TraceFunctionalProbe, M: np.ndarray
) -> tuple[float, float]:
    """Closed-form first and second rotation derivatives of the subspace trace.

    The rotation tilts the graph-lifted direction toward the chosen normal;
    the first derivative is twice the cross term of M between the two, and
    the second is twice the difference of the diagonal terms.
    """
    M = np.asarray(M, dtype=np.float64)
    G = probe.graph_frame()
    P = G.T @ G
    e_w = probe.lifted_direction()
    u = probe.u - P @ probe.u
    un = np.linalg.norm(u)
    if un < 1e-12:
        raise ConfigError("normal direction degenerates on the graph plane")
    u = u / un
    first = 2.0 * float(e_w @ M @ u)
    second = 2.0 * (float(u @ M @ u) - float(e_w @ M @ e_w))
    return first, second


def rotated_subspace_trace(probe: TraceFunctionalProbe, M: np.ndarray, theta: float) -> float:
    """Trace of M over the probe subspace rotated by angle theta."""
    M = np.asarray(M, dtype=np.float64)
    G = probe.graph_frame()
    P = G.T @ G
    e_w = probe.lifted_direction()
    u = probe.u - P @ probe.u
    u = u / np.linalg.norm(u)
    A = np.outer(u, e_w) - np.outer(e_w, u)
    R = expm(theta * A)
    Pt = R @ P @ R.T
    return float(np.trace(Pt @ M))


def numeric_trace_derivatives(
    probe: TraceFunctionalProbe,
    M: np.ndarray,
    step: float = TRACE_FIRST_STEP,
    second_step: float = TRACE_SECOND_STEP,
) -> tuple[float, float]:
    """Finite-difference companion to the closed-form rotation derivatives.

    The second derivative nests two central differences: inner first
    derivatives at the base step, an outer difference at a wider step, which
    keeps roundoff well below the agreement tolerance.
    """

    def first_at(theta: float) -> float:
        a = rotated_subspace_trace(probe, M, theta + step)
        b = rotated_subspace_trace(probe, M, theta - step)
        return (a - b) / (2.0 * step)

    first = first_at(0.0)
    second = (first_at(second_step) - first_at(-second_step)) / (2.0 * second_step)
    return first, second


@dataclass(frozen=True)
class PhiPropertiesReport:
    phi: float
    grad_norm: float
    gradient_defect: float | None
    hessian_defect: float
    degenerate_block: bool


def phi_properties_check(field: SubspaceField, y: np.ndarray) -> PhiPropertiesReport:
    """Defects of the potential against its model identities.

    The gradient identity compares the squared gradient with twice the
    potential, relative to the potential; the Hessian is compared with the
    normal projector of the local plane.
    """
    sample = field.sample(y)
    grad_sq = float(sample.grad @ sample.grad)
    defect = None
    if sample.phi > 1e-14:
        defect = abs(grad_sq - 2.0 * sample.phi) / sample.phi
    normal_proj = np.eye(field.n) - sample.Lhat.projector()
    hess_defect = _op_norm(sample.hess - normal_proj)
    return PhiPropertiesReport(
        phi=sample.phi,
        grad_norm=float(np.sqrt(grad_sq)),
        gradient_defect=defect,
        hessian_defect=hess_defect,
        degenerate_block=sample.degenerate_block,
    )


def dump_field_csv(field: SubspaceField, points: np.ndarray, path: str) -> None:
    """Write per-point eigenvalues, gap, potential, and gradient norm."""
    pts = as_point_array(points, field.n)
    rows = []
    for y in pts:
        s = field.sample(y)
        rows.append(
            np.concatenate(
                [y, s.eigvals, [s.gap, s.phi, float(np.linalg.norm(s.grad))]]
            )
        )
    np.savetxt(path, np.asarray(rows), delimiter=",", fmt="%.17g")
