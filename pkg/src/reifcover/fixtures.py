"""Deterministic test-set generators with known ground truth.

Every generator is a pure function of its parameters; runs are byte-identical.
Ground truth (exact lengths, areas, reference planes) travels with the cloud
so tests never re-derive it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ParamOutOfRange
from .geometry import AffinePlane, Frame
from .multiscale import PointCloud

KOCH_ETA_MAX = math.sqrt(3.0) / 2.0

KINDS = ("koch", "holed_segment", "plane_subset", "tilted_graph", "point", "parallel_planes")


class FixtureResult(NamedTuple):
    cloud: PointCloud
    truth: dict
    plane: AffinePlane | None


def step_ratio(eta: float) -> float:
    """Length multiplier of one subdivision step: two thirds plus two slants."""
    return (2.0 + math.sqrt(1.0 + 4.0 * eta * eta)) / 3.0


def koch(etas, depth: int) -> tuple[PointCloud, float]:
    """Vertices of the level-`depth` snowflake polyline over [0,1]x{0}.

    Level j replaces each segment's middle third by the two upper sides of an
    isosceles triangle of height etas[j] times the third's length.  Returns
    the cloud and the exact polyline length, the product of the per-step
    ratios.
    """
    etas = [float(e) for e in etas]
    if depth < 0:
        raise ParamOutOfRange(f"depth must be nonnegative, got {depth}")
    if len(etas) < depth:
        raise ParamOutOfRange(f"need {depth} eta values, got {len(etas)}")
    for e in etas[:depth]:
        if not (0.0 <= e <= KOCH_ETA_MAX + 1e-15):
            raise ParamOutOfRange(f"eta {e} outside [0, sqrt(3)/2]")
    verts = np.array([[0.0, 0.0], [1.0, 0.0]])
    length = 1.0
    for j in range(depth):
        eta = etas[j]
        a, b = verts[:-1], verts[1:]
        s = b - a
        left = np.stack([-s[:, 1], s[:, 0]], axis=1)
        p1 = a + s / 3.0
        p2 = a + 2.0 * s / 3.0
        apex = a + 0.5 * s + (eta / 3.0) * left
        quads = np.stack([a, p1, apex, p2], axis=1).reshape(-1, 2)
        verts = np.vstack([quads, verts[-1:]])
        length *= step_ratio(eta)
    return PointCloud(verts, k=1), length


def polyline_length(vertices: np.ndarray) -> float:
    diffs = np.diff(np.asarray(vertices, dtype=np.float64), axis=0)
    return float(np.sum(np.linalg.norm(diffs, axis=1)))


def holed_segment(resolution: int = 100) -> PointCloud:
    """Two unit-half segments with a gap, plus the isolated origin."""
    if resolution < 2:
        raise ParamOutOfRange(f"resolution must be at least 2, got {resolution}")
    xs = np.concatenate(
        [
            np.linspace(-1.0, -0.5, resolution),
            np.linspace(0.5, 1.0, resolution),
            [0.0],
        ]
    )
    pts = np.stack([xs, np.zeros_like(xs)], axis=1)
    return PointCloud(pts, k=1)


def tilted_graph(
    slope: float,
    resolution: int = 401,
    wavelength: float | None = None,
    amplitude: float = 0.0,
    ambient: int = 2,
) -> FixtureResult:
    """Graph y = slope*x (+ optional sine ripple) over [-1, 1].

    The sine terms exist for controlled-flatness sweeps; with them absent the
    cloud is an exact line and the reference plane is that line.
    """
    if resolution < 2:
        raise ParamOutOfRange(f"resolution must be at least 2, got {resolution}")
    if ambient not in (2, 3):
        raise ParamOutOfRange(f"ambient dimension must be 2 or 3, got {ambient}")
    if wavelength is not None and wavelength <= 0:
        raise ParamOutOfRange(f"wavelength must be positive, got {wavelength}")
    x = np.linspace(-1.0, 1.0, resolution)
    y = slope * x
    if wavelength is not None and amplitude != 0.0:
        y = y + amplitude * np.sin(x / wavelength)
    cols = [x, y] + ([np.zeros_like(x)] if ambient == 3 else [])
    pts = np.stack(cols, axis=1)
    direction = np.zeros(ambient)
    direction[0], direction[1] = 1.0, slope
    direction /= np.linalg.norm(direction)
    plane = AffinePlane(np.zeros(ambient), Frame(direction[None, :]))
    if wavelength is not None and amplitude != 0.0:
        # arclength of the sampled graph on a fine grid
        fine = np.linspace(-1.0, 1.0, max(20001, 40 * resolution))
        fy = slope * fine + amplitude * np.sin(fine / wavelength)
        measure = polyline_length(np.stack([fine, fy], axis=1))
    else:
        measure = 2.0 * math.hypot(1.0, slope)
    truth = {"measure": measure, "slope": slope}
    return FixtureResult(PointCloud(pts, k=1), truth, plane)


def plane_subset(
    holes=(), resolution: int = 64, radius: float = 1.0
) -> FixtureResult:
    """Grid samples of a flat disk in R^3 with circular holes removed.

    holes is a sequence of (cx, cy, rho); each hole must sit strictly inside
    the disk and the holes must be pairwise disjoint, so the exact area is
    pi*(radius^2 - sum rho_i^2).
    """
    if resolution < 2:
        raise ParamOutOfRange(f"resolution must be at least 2, got {resolution}")
    if radius <= 0:
        raise ParamOutOfRange(f"disk radius must be positive, got {radius}")
    holes = [(float(a), float(b), float(r)) for a, b, r in holes]
    for cx, cy, rho in holes:
        if rho <= 0 or math.hypot(cx, cy) + rho >= radius:
            raise ParamOutOfRange(f"hole ({cx},{cy},{rho}) not strictly inside the disk")
    for i in range(len(holes)):
        for j in range(i + 1, len(holes)):
            ax, ay, ar = holes[i]
            bx, by, br = holes[j]
            if math.hypot(ax - bx, ay - by) < ar + br:
                raise ParamOutOfRange("holes overlap")
    axis = np.linspace(-radius, radius, resolution)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    flat = np.stack([gx.ravel(), gy.ravel()], axis=1)
    keep = np.linalg.norm(flat, axis=1) <= radius
    for cx, cy, rho in holes:
        keep &= np.linalg.norm(flat - [cx, cy], axis=1) > rho
    kept = flat[keep]
    pts = np.concatenate([kept, np.zeros((kept.shape[0], 1))], axis=1)
    area = math.pi * (radius**2 - sum(r * r for _, _, r in holes))
    plane = AffinePlane(np.zeros(3), Frame(np.eye(3)[:2]))
    return FixtureResult(PointCloud(pts, k=2), {"measure": area, "radius": radius}, plane)


def parallel_planes(gap: float, resolution: int = 201) -> FixtureResult:
    """Two parallel unit-length lines at vertical distance `gap`."""
    if gap <= 0:
        raise ParamOutOfRange(f"gap must be positive, got {gap}")
    if resolution < 2:
        raise ParamOutOfRange(f"resolution must be at least 2, got {resolution}")
    x = np.linspace(-1.0, 1.0, resolution)
    top = np.stack([x, np.full_like(x, gap / 2.0)], axis=1)
    bottom = np.stack([x, np.full_like(x, -gap / 2.0)], axis=1)
    pts = np.vstack([top, bottom])
    plane = AffinePlane(np.zeros(2), Frame(np.eye(2)[:1]))
    return FixtureResult(PointCloud(pts, k=1), {"measure": 4.0, "gap": gap}, plane)


def single_point(ambient: int = 2) -> PointCloud:
    if ambient < 2:
        raise ParamOutOfRange(f"ambient dimension must be at least 2, got {ambient}")
    return PointCloud(np.zeros((1, ambient)), k=1)


@dataclass
class FixtureSpec:
    """Serializable description of one generated test set."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParamOutOfRange(f"unknown fixture kind {self.kind!r}, expected one of {KINDS}")

    @classmethod
    def from_dict(cls, data: dict) -> "FixtureSpec":
        kind = data.get("kind")
        params = {key: val for key, val in data.items() if key != "kind"}
        return cls(str(kind), params)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def generate(spec: FixtureSpec) -> FixtureResult:
    """Build the cloud plus ground truth for a fixture spec."""
    p = spec.params
    if spec.kind == "koch":
        depth = int(p.get("depth", 3))
        etas = p.get("etas")
        if etas is None:
            etas = [float(p.get("eta", KOCH_ETA_MAX))] * depth
        cloud, length = koch(etas, depth)
        return FixtureResult(cloud, {"measure": length, "depth": depth}, None)
    if spec.kind == "holed_segment":
        cloud = holed_segment(int(p.get("resolution", 100)))
        return FixtureResult(cloud, {"measure": 1.0}, None)
    if spec.kind == "tilted_graph":
        return tilted_graph(
            float(p.get("slope", 0.0)),
            int(p.get("resolution", 401)),
            p.get("wavelength"),
            float(p.get("amplitude", 0.0)),
            int(p.get("ambient", 2)),
        )
    if spec.kind == "plane_subset":
        return plane_subset(
            p.get("holes", ()), int(p.get("resolution", 64)), float(p.get("radius", 1.0))
        )
    if spec.kind == "parallel_planes":
        return parallel_planes(float(p.get("gap", 0.2)), int(p.get("resolution", 201)))
    cloud = single_point(int(p.get("ambient", 2)))
    return FixtureResult(cloud, {"measure": 0.0}, None)
