"""Zero-set manifold of the distance potential: fiber solves, graph patches,
measure quadrature, and tangent calibration checks.

The manifold at scale r is the zero set of the potential's gradient, found by
damped Newton along fibers normal to the local plane.  Patches record the
graph over the local plane on a regular grid; excluded cells (failed or
uncovered fibers) are legal and leave holes.
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import (
    EigengapTooSmall,
    EmptyBall,
    FiberDegenerate,
    NoConvergence,
    NotCovered,
)
from .field import FD_STEP_FACTOR, SubspaceField
from .geometry import AffinePlane, Frame

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-10
PHI_SCALE_TOL = 1e-14
HESS_MIN_EIG = 0.5
TRUST_FACTOR = 0.5
UNIQUENESS_TOL = 1e-8
RESTART_OFFSET_FACTOR = 0.05
GRID_PITCH_FACTOR = 0.25
CHART_EXTENT_FACTOR = 4.0
BOUNDARY_SUBSAMPLE = 32
_DAMPING_TRIES = 12


@dataclass(frozen=True)
class FiberSolution:
    """Converged zero of the potential on one fiber."""

    point: np.ndarray
    iterations: int
    residual: float
    offset: float
    restart_gap: float | None


def _gradient(field: SubspaceField, z: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the potential and the displacement to the projected point.

    Uses the identity grad = (I - Jm)^T (z - m) with the Jacobian of m by
    central differences; the product form keeps the value accurate near the
    zero set where the displacement itself is tiny.
    """
    n = z.shape[0]
    shifts = np.eye(n) * h
    pts = np.concatenate([z[None, :], z[None, :] + shifts, z[None, :] - shifts])
    d = pts - field.m_many(pts)
    jac_d = (d[1 : n + 1] - d[n + 1 :]).T / (2.0 * h)
    return jac_d.T @ d[0], d[0]


def solve_zero_on_fiber(
    field: SubspaceField,
    anchor: np.ndarray,
    ell: np.ndarray,
    fiber: Frame | None = None,
    max_iter: int = NEWTON_MAX_ITER,
    tol: float = NEWTON_TOL,
    check_uniqueness: bool = True,
) -> FiberSolution:
    """Damped Newton for the potential zero on the fiber through ell.

    The fiber is ell + the span of the anchor plane's normal space.  The
    Newton model Hessian is the normal projector of the field at the current
    iterate, which the potential's Hessian approximates up to the deviation.
    """
    anchor = np.asarray(anchor, dtype=np.float64).reshape(-1)
    ell = np.asarray(ell, dtype=np.float64).reshape(-1)
    if fiber is None:
        fiber = field.sample(anchor).Lhat.complement()
    rows = fiber.vectors
    # start where the field has support: slide along the fiber to the foot
    # of the center closest to the fiber line, else a base plane far from
    # the data leaves the whole fiber outside every bump
    delta = field.pou.centers - ell
    normal_part = delta @ rows.T
    inplane = delta - normal_part @ rows
    near_i = int(np.argmin(np.einsum("ij,ij->i", inplane, inplane)))
    seed = ell + normal_part[near_i] @ rows
    h = FD_STEP_FACTOR * field.step_scale(seed)
    trust = TRUST_FACTOR * field.fit_radius_at(seed)

    def newton(start: np.ndarray) -> tuple[np.ndarray, int, float]:
        z = start.copy()
        grad, _ = _gradient(field, z, h)
        res = float(np.linalg.norm(grad))
        it = 0
        while res > tol:
            if it >= max_iter:
                raise NoConvergence(
                    f"fiber solve stalled after {max_iter} iterations, residual {res:.3e}"
                )
            proj = field.proj_many(z[None, :])[0]
            restricted = rows @ (np.eye(z.shape[0]) - proj) @ rows.T
            min_eig = float(np.linalg.eigvalsh(restricted)[0])
            if min_eig < HESS_MIN_EIG:
                raise FiberDegenerate(
                    f"restricted curvature {min_eig:.3f} below {HESS_MIN_EIG} on the fiber"
                )
            step = -np.linalg.solve(restricted, rows @ grad)
            lam = 1.0
            for _ in range(_DAMPING_TRIES):
                cand = z + lam * (step @ rows)
                try:
                    cgrad, _ = _gradient(field, cand, h)
                except NotCovered:
                    # candidate left the covered region; a shorter step may stay inside
                    lam *= 0.5
                    continue
                cres = float(np.linalg.norm(cgrad))
                if cres < res:
                    break
                lam *= 0.5
            else:
                raise NoConvergence(
                    f"damping failed to reduce the residual from {res:.3e}"
                )
            z, grad, res = cand, cgrad, cres
            it += 1
            if float(np.linalg.norm(z - seed)) > trust:
                raise NoConvergence(
                    f"iterate left the trust region of radius {trust:.3e}"
                )
        return z, it, res

    z, iterations, residual = newton(seed)
    restart_gap = None
    if check_uniqueness:
        offset = RESTART_OFFSET_FACTOR * field.step_scale(seed)
        z2, _, _ = newton(seed + offset * rows[0])
        restart_gap = float(np.linalg.norm(z2 - z))
        if restart_gap > UNIQUENESS_TOL:
            raise NoConvergence(
                f"perturbed restart found a different zero, gap {restart_gap:.3e}"
            )
    return FiberSolution(
        point=z,
        iterations=iterations,
        residual=residual,
        offset=float(np.linalg.norm(z - ell)),
        restart_gap=restart_gap,
    )


@dataclass
class GraphPatch:
    """Sampled graph of the manifold over one local plane.

    values holds fiber coordinates of the solved points on a regular node
    grid; mask marks solved nodes.  Interpolation is piecewise linear (per
    segment for curves, per triangle for surfaces), so the recorded Lipschitz
    constant is the exact maximum slope of the interpolant.
    """

    plane: AffinePlane
    fiber: Frame
    axis: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    pitch: float
    extent: float
    lip: float = 0.0
    anchor: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.plane.k

    def node_points(self) -> np.ndarray:
        """Ambient positions of the solved nodes."""
        coords = _node_coords(self.axis, self.k)
        flat_mask = self.mask.reshape(-1)
        vals = self.values.reshape(-1, self.values.shape[-1])
        base = self.plane.base + coords @ self.plane.frame.vectors
        pts = base + vals @ self.fiber.vectors
        return pts[flat_mask]

    def interpolate(self, coords: np.ndarray) -> np.ndarray | None:
        """Graph value at tangential coords, None outside the solved region."""
        t = np.asarray(coords, dtype=np.float64).reshape(-1)
        if t.shape[0] != self.k:
            raise ValueError(f"expected {self.k} tangential coordinates")
        lo = self.axis[0]
        idx = np.floor((t - lo) / self.pitch).astype(int)
        idx = np.clip(idx, 0, self.axis.shape[0] - 2)
        u = (t - (lo + idx * self.pitch)) / self.pitch
        if np.any(u < -1e-9) or np.any(u > 1 + 1e-9):
            return None
        if self.k == 1:
            i = idx[0]
            if not (self.mask[i] and self.mask[i + 1]):
                return None
            return (1 - u[0]) * self.values[i] + u[0] * self.values[i + 1]
        if self.k == 2:
            i, j = idx
            corners = self.mask[i : i + 2, j : j + 2]
            if not np.all(corners):
                return None
            g00 = self.values[i, j]
            g10 = self.values[i + 1, j]
            g01 = self.values[i, j + 1]
            g11 = self.values[i + 1, j + 1]
            if u[0] + u[1] <= 1.0:
                return g00 + u[0] * (g10 - g00) + u[1] * (g01 - g00)
            return g11 + (1 - u[0]) * (g01 - g11) + (1 - u[1]) * (g10 - g11)
        raise NotImplementedError("interpolation implemented for curves and surfaces")

    def vertical_distance(self, point: np.ndarray) -> float | None:
        """Distance from the point to the graph along its fiber, if covered."""
        p = np.asarray(point, dtype=np.float64).reshape(-1)
        t = self.plane.tangential_coords(p[None, :])[0]
        g = self.interpolate(t)
        if g is None:
            return None
        ambient = self.plane.base + t @ self.plane.frame.vectors + g @ self.fiber.vectors
        return float(np.linalg.norm(p - ambient))

    def simplex_gradients(self):
        """Yield the constant Jacobian of every fully solved simplex."""
        if self.k == 1:
            for i in range(self.axis.shape[0] - 1):
                if self.mask[i] and self.mask[i + 1]:
                    yield (self.values[i + 1] - self.values[i])[None, :] / self.pitch
            return
        if self.k == 2:
            m = self.axis.shape[0]
            for i in range(m - 1):
                for j in range(m - 1):
                    if not np.all(self.mask[i : i + 2, j : j + 2]):
                        continue
                    g00 = self.values[i, j]
                    g10 = self.values[i + 1, j]
                    g01 = self.values[i, j + 1]
                    g11 = self.values[i + 1, j + 1]
                    yield np.stack([g10 - g00, g01 - g00]) / self.pitch
                    yield np.stack([g11 - g01, g11 - g10]) / self.pitch
            return
        raise NotImplementedError("simplices implemented for curves and surfaces")

    def measured_lip(self) -> float:
        worst = 0.0
        for jac in self.simplex_gradients():
            worst = max(worst, float(np.linalg.norm(jac, 2)))
        return worst


def _node_coords(axis: np.ndarray, k: int) -> np.ndarray:
    grids = np.meshgrid(*([axis] * k), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@dataclass
class ApproximatingManifold:
    """Union of graph patches approximating the cloud at one scale."""

    r: float
    patches: list[GraphPatch]
    samples: np.ndarray
    skipped: list[tuple[np.ndarray, str]] = dataclass_field(default_factory=list)

    @property
    def sample_count(self) -> int:
        return self.samples.shape[0]

    def vertical_distance(self, point: np.ndarray) -> float | None:
        """Smallest per-patch fiber distance, None if no patch covers it."""
        best = None
        for patch in self.patches:
            d = patch.vertical_distance(point)
            if d is not None and (best is None or d < best):
                best = d
        return best


@dataclass(frozen=True)
class ChartSpec:
    """One requested chart: anchor point, half-extent, and grid pitch."""

    anchor: np.ndarray
    extent: float
    pitch: float


def default_charts(
    field: SubspaceField,
    grid_pitch_factor: float = GRID_PITCH_FACTOR,
    chart_extent_factor: float = CHART_EXTENT_FACTOR,
) -> list[ChartSpec]:
    """One chart per partition center, sized by the local radius."""
    return [
        ChartSpec(
            anchor=field.pou.centers[alpha],
            extent=chart_extent_factor * float(field.pou.radii[alpha]),
            pitch=grid_pitch_factor * float(field.pou.radii[alpha]),
        )
        for alpha in range(field.pou.size)
    ]


_FIBER_ERRORS = (NoConvergence, FiberDegenerate, NotCovered, EigengapTooSmall, EmptyBall)


def build_manifold(
    field: SubspaceField,
    charts: list[ChartSpec] | None = None,
    check_uniqueness: bool = False,
    max_iter: int = NEWTON_MAX_ITER,
    tol: float = NEWTON_TOL,
) -> ApproximatingManifold:
    """Solve a fiber grid per chart and stitch the results into patches.

    Fiber failures and uncovered nodes are excluded cells, not errors; a
    chart whose anchor cannot be sampled is skipped and recorded.
    """
    if charts is None:
        charts = default_charts(field)
    patches: list[GraphPatch] = []
    samples: list[np.ndarray] = []
    skipped: list[tuple[np.ndarray, str]] = []
    phi_cap = PHI_SCALE_TOL * field.r**2
    for spec in charts:
        anchor = np.asarray(spec.anchor, dtype=np.float64).reshape(-1)
        try:
            anchor_sample = field.sample(anchor)
        except _FIBER_ERRORS as exc:
            skipped.append((anchor, str(exc)))
            continue
        plane = anchor_sample.plane()
        fiber = anchor_sample.Lhat.complement()
        half = int(round(spec.extent / spec.pitch))
        axis = np.arange(-half, half + 1) * spec.pitch
        k = plane.k
        shape = (axis.shape[0],) * k
        values = np.zeros(shape + (field.n - k,))
        mask = np.zeros(shape, dtype=bool)
        coords = _node_coords(axis, k)
        for flat_idx, t in enumerate(coords):
            ell = plane.base + t @ plane.frame.vectors
            try:
                sol = solve_zero_on_fiber(
                    field,
                    anchor,
                    ell,
                    fiber=fiber,
                    max_iter=max_iter,
                    tol=tol,
                    check_uniqueness=check_uniqueness,
                )
            except _FIBER_ERRORS:
                continue
            z = sol.point
            phi = 0.5 * float(np.sum((z - field.m_many(z[None, :])[0]) ** 2))
            if sol.residual > tol or phi > phi_cap:
                continue
            idx = np.unravel_index(flat_idx, shape)
            values[idx] = fiber.vectors @ (z - ell)
            mask[idx] = True
            samples.append(z)
        patch = GraphPatch(
            plane=plane,
            fiber=fiber,
            axis=axis,
            values=values,
            mask=mask,
            pitch=spec.pitch,
            extent=spec.extent,
            anchor=anchor,
        )
        patch.lip = patch.measured_lip()
        patches.append(patch)
    pts = np.asarray(samples) if samples else np.zeros((0, field.n))
    return ApproximatingManifold(r=field.r, patches=patches, samples=pts, skipped=skipped)


def _cell_weights(axis: np.ndarray, pitch: float, extent: float, k: int) -> np.ndarray:
    """Fraction of each grid cell inside the domain ball of radius extent.

    Curves clip cells against the interval exactly; surfaces subsample cells
    that straddle the circle.  The weights multiply the midpoint integrand,
    which keeps the quadrature error at the smooth-term order instead of the
    much larger raw digitization error of the boundary.
    """
    lo = axis[:-1]
    hi = axis[1:]
    if k == 1:
        clipped = np.clip(np.minimum(hi, extent) - np.maximum(lo, -extent), 0.0, None)
        return clipped / pitch
    if k == 2:
        centers = (lo + hi) / 2
        cx, cy = np.meshgrid(centers, centers, indexing="ij")
        r2 = extent * extent
        corner_in = [
            ((cx + sx * pitch / 2) ** 2 + (cy + sy * pitch / 2) ** 2 <= r2)
            for sx in (-1.0, 1.0)
            for sy in (-1.0, 1.0)
        ]
        all_in = np.logical_and.reduce(corner_in)
        any_in = np.logical_or.reduce(corner_in)
        weights = np.where(all_in, 1.0, 0.0)
        offs = (np.arange(BOUNDARY_SUBSAMPLE) + 0.5) / BOUNDARY_SUBSAMPLE - 0.5
        ox, oy = np.meshgrid(offs, offs, indexing="ij")
        for i, j in zip(*np.nonzero(any_in & ~all_in)):
            sx = cx[i, j] + ox * pitch
            sy = cy[i, j] + oy * pitch
            weights[i, j] = float(np.mean(sx**2 + sy**2 <= r2))
        return weights
    raise NotImplementedError("cell weights implemented for curves and surfaces")


def patch_measure(patch: GraphPatch) -> float:
    """Midpoint quadrature of the graph area over the patch's domain ball."""
    k = patch.k
    weights = _cell_weights(patch.axis, patch.pitch, patch.extent, k)
    cell_volume = patch.pitch**k
    total = 0.0
    if k == 1:
        for i in range(patch.axis.shape[0] - 1):
            if not (patch.mask[i] and patch.mask[i + 1]) or weights[i] == 0.0:
                continue
            jac = (patch.values[i + 1] - patch.values[i])[None, :] / patch.pitch
            gram = np.eye(1) + jac @ jac.T
            total += float(np.sqrt(np.linalg.det(gram))) * weights[i] * cell_volume
        return total
    if k == 2:
        m = patch.axis.shape[0]
        for i in range(m - 1):
            for j in range(m - 1):
                if weights[i, j] == 0.0 or not np.all(patch.mask[i : i + 2, j : j + 2]):
                    continue
                g00 = patch.values[i, j]
                g10 = patch.values[i + 1, j]
                g01 = patch.values[i, j + 1]
                g11 = patch.values[i + 1, j + 1]
                dx = (g10 + g11 - g00 - g01) / (2.0 * patch.pitch)
                dy = (g01 + g11 - g00 - g10) / (2.0 * patch.pitch)
                jac = np.stack([dx, dy])
                gram = np.eye(2) + jac @ jac.T
                total += float(np.sqrt(np.linalg.det(gram))) * weights[i, j] * cell_volume
        return total
    raise NotImplementedError("measure implemented for curves and surfaces")


def manifold_measure(manifold: ApproximatingManifold) -> float:
    return sum(patch_measure(p) for p in manifold.patches)


@dataclass(frozen=True)
class TangentCalibrationReport:
    min_value: float
    passed: bool
    threshold: float
    simplex_count: int


def tangent_calibration_check(
    manifold: ApproximatingManifold, form, alpha: float
) -> TangentCalibrationReport:
    """Evaluate the calibration on every tangent simplex of every patch.

    Tangent frames are the oriented orthonormalizations of the lifted plane
    directions; orientation follows the chart axis order.
    """
    from .calibration import evaluate_on_vectors
    from .geometry import orthonormalize

    worst = np.inf
    count = 0
    for patch in manifold.patches:
        plane_rows = patch.plane.frame.vectors
        fiber_rows = patch.fiber.vectors
        anchor = patch.plane.base
        for jac in patch.simplex_gradients():
            lifted = plane_rows + jac @ fiber_rows
            frame, _ = orthonormalize(lifted, eps=1e-12)
            value = evaluate_on_vectors(form, anchor, frame.vectors)
            worst = min(worst, value)
            count += 1
    if count == 0:
        return TangentCalibrationReport(np.nan, False, alpha / 4.0, 0)
    return TangentCalibrationReport(
        min_value=float(worst),
        passed=bool(worst >= alpha / 4.0),
        threshold=alpha / 4.0,
        simplex_count=count,
    )


def dump_manifold_csv(manifold: ApproximatingManifold, path: str) -> None:
    """Write the solved sample points, one row per point."""
    np.savetxt(path, manifold.samples, delimiter=",", fmt="%.17g")
