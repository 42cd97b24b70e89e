"""Constant-plus-polynomial k-forms and their comass validation.

A form is stored on strictly increasing multi-indices, so antisymmetry holds
by construction.  The optional position-dependent part is a polynomial field
of degree at most 3 per coefficient, which keeps validation reproducible.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInput, DegreeMismatch
from .geometry import AffinePlane, Frame

COMASS_TOL = 1e-9
PERTURBATION_BALL_RADIUS = 2.0
MAX_POLY_DEGREE = 3
_SUP_NORM_SAMPLES = 4096

MultiIndex = tuple[int, ...]
# monomial: (powers per ambient coordinate, coefficient)
Monomial = tuple[tuple[int, ...], float]


def _check_multi_index(idx, degree: int, ambient: int) -> MultiIndex:
    t = tuple(int(i) for i in idx)
    if len(t) != degree:
        raise ConfigError(f"multi-index {t} has length {len(t)}, expected {degree}")
    if any(i < 0 or i >= ambient for i in t):
        raise ConfigError(f"multi-index {t} out of range for ambient dimension {ambient}")
    if any(a >= b for a, b in zip(t, t[1:])):
        raise ConfigError(f"multi-index {t} must be strictly increasing")
    return t


@dataclass
class CalibrationForm:
    """k-form with a constant part, an optional polynomial part, and a budget eta."""

    degree: int
    ambient: int
    constant: dict[MultiIndex, float]
    perturbation: dict[MultiIndex, tuple[Monomial, ...]] = field(default_factory=dict)
    eta: float = 0.0

    def __post_init__(self):
        if self.degree < 1 or self.degree > self.ambient:
            raise ConfigError(
                f"form degree {self.degree} invalid in ambient dimension {self.ambient}"
            )
        if self.eta < 0:
            raise ConfigError(f"eta must be nonnegative, got {self.eta}")
        self.constant = {
            _check_multi_index(i, self.degree, self.ambient): float(c)
            for i, c in self.constant.items()
        }
        pert = {}
        for idx, monos in self.perturbation.items():
            key = _check_multi_index(idx, self.degree, self.ambient)
            clean = []
            for powers, coeff in monos:
                p = tuple(int(e) for e in powers)
                if len(p) != self.ambient or any(e < 0 for e in p):
                    raise ConfigError(f"bad monomial powers {p}")
                if sum(p) > MAX_POLY_DEGREE:
                    raise ConfigError(
                        f"perturbation degree {sum(p)} exceeds the cap {MAX_POLY_DEGREE}"
                    )
                clean.append((p, float(coeff)))
            pert[key] = tuple(clean)
        self.perturbation = pert
        if self.perturbation:
            sup = self._perturbation_sup_norm()
            if sup > self.eta + COMASS_TOL:
                raise DegenerateInput(
                    f"perturbation norm {sup:.6g} exceeds eta {self.eta:.6g} on the "
                    f"radius-{PERTURBATION_BALL_RADIUS:g} ball"
                )

    @property
    def indices(self) -> tuple[MultiIndex, ...]:
        keys = set(self.constant) | set(self.perturbation)
        return tuple(sorted(keys))

    def coefficients_at(self, points: np.ndarray) -> np.ndarray:
        """Coefficient vectors (m, #indices) of the full form at each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty((pts.shape[0], len(self.indices)))
        for col, idx in enumerate(self.indices):
            acc = np.full(pts.shape[0], self.constant.get(idx, 0.0))
            for powers, coeff in self.perturbation.get(idx, ()):
                term = np.full(pts.shape[0], coeff)
                for axis, e in enumerate(powers):
                    if e:
                        term = term * pts[:, axis] ** e
                acc = acc + term
            out[:, col] = acc
        return out

    def _perturbation_sup_norm(self) -> float:
        # Euclidean norm of the coefficient vector dominates the comass, so a
        # sampled sup of it certifies the eta budget conservatively.
        rng = np.random.default_rng(0)
        raw = rng.standard_normal((_SUP_NORM_SAMPLES, self.ambient))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        radii = rng.uniform(0.0, 1.0, _SUP_NORM_SAMPLES) ** (1.0 / self.ambient)
        pts = raw * (PERTURBATION_BALL_RADIUS * radii)[:, None]
        pts[0] = 0.0
        coeffs = np.empty((pts.shape[0], len(self.indices)))
        for col, idx in enumerate(self.indices):
            acc = np.zeros(pts.shape[0])
            for powers, coeff in self.perturbation.get(idx, ()):
                term = np.full(pts.shape[0], coeff)
                for axis, e in enumerate(powers):
                    if e:
                        term = term * pts[:, axis] ** e
                acc += term
            coeffs[:, col] = acc
        return float(np.max(np.linalg.norm(coeffs, axis=1)))

    def constant_part(self) -> "CalibrationForm":
        return CalibrationForm(self.degree, self.ambient, dict(self.constant), {}, self.eta)


class ComassReport:
    """Outcome of a comass search; the max is a certified lower bound only."""

    def __init__(self, max_value: float, argmax_frame: Frame, samples: int, eta: float):
        self.max_value = max_value
        self.argmax_frame = argmax_frame
        self.samples = samples
        self.eta = eta
        self.passed = max_value <= 1.0 + eta + COMASS_TOL

    def __repr__(self):
        verdict = "passed" if self.passed else "failed"
        return (
            f"ComassReport(max_value={self.max_value:.12g}, samples={self.samples}, "
            f"{verdict})"
        )


def evaluate_on_vectors(form: CalibrationForm, at, vectors) -> float:
    """Apply the form at a point to k arbitrary vectors (rows)."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != form.degree:
        raise DegreeMismatch(
            f"form of degree {form.degree} applied to {v.shape[0] if v.ndim == 2 else '?'} vectors"
        )
    if v.shape[1] != form.ambient:
        raise DegreeMismatch(
            f"vectors live in R^{v.shape[1]}, form is defined on R^{form.ambient}"
        )
    coeffs = form.coefficients_at(np.asarray(at, dtype=np.float64))[0]
    total = 0.0
    for c, idx in zip(coeffs, form.indices):
        if c != 0.0:
            total += c * float(np.linalg.det(v[:, idx]))
    return total


def evaluate(form: CalibrationForm, at, plane: AffinePlane) -> float:
    """Value of the form at a point on the plane's oriented frame."""
    if plane.k != form.degree:
        raise DegreeMismatch(
            f"form degree {form.degree} does not match plane dimension {plane.k}"
        )
    return evaluate_on_vectors(form, at, plane.frame.vectors)


def evaluate_frames(form: CalibrationForm, points: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Vectorized form values for a batch of (point, frame) pairs.

    frames has shape (m, k, n) with orthonormal oriented rows.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    fr = np.asarray(frames, dtype=np.float64)
    if fr.ndim != 3 or fr.shape[1] != form.degree or fr.shape[2] != form.ambient:
        raise DegreeMismatch(f"frame batch shape {fr.shape} incompatible with the form")
    coeffs = form.coefficients_at(pts)
    vals = np.zeros(fr.shape[0])
    for col, idx in enumerate(form.indices):
        sub = fr[:, :, idx]
        vals += coeffs[:, col] * np.linalg.det(sub)
    return vals


def _haar_frames(rng: np.random.Generator, count: int, k: int, n: int) -> np.ndarray:
    """Haar-ish random orthonormal k-frames in R^n, sign-fixed."""
    g = rng.standard_normal((count, n, k))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diagonal(r, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    return (q * signs[:, None, :]).transpose(0, 2, 1)


def _ascend(form: CalibrationForm, x0: np.ndarray, f0: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Local ascent over (position, frame) from one start, QR retraction."""
    k, n = form.degree, form.ambient
    x, fr = x0.copy(), f0.copy()
    val = evaluate_on_vectors(form, x, fr)
    step = 0.1
    h = 1e-6
    has_position_part = bool(form.perturbation)
    for _ in range(300):
        grad_f = np.zeros_like(fr)
        for a in range(k):
            for b in range(n):
                fr[a, b] += h
                up = evaluate_on_vectors(form, x, fr)
                fr[a, b] -= 2 * h
                dn = evaluate_on_vectors(form, x, fr)
                fr[a, b] += h
                grad_f[a, b] = (up - dn) / (2 * h)
        if has_position_part:
            grad_x = np.zeros_like(x)
            for b in range(n):
                x[b] += h
                up = evaluate_on_vectors(form, x, fr)
                x[b] -= 2 * h
                dn = evaluate_on_vectors(form, x, fr)
                x[b] += h
                grad_x[b] = (up - dn) / (2 * h)
        else:
            grad_x = np.zeros_like(x)
        moved = False
        while step > 1e-12:
            cand_f = fr + step * grad_f
            q, r = np.linalg.qr(cand_f.T)
            signs = np.sign(np.diag(r))
            signs[signs == 0] = 1.0
            cand_f = (q * signs).T
            cand_x = x + step * grad_x
            nx = float(np.linalg.norm(cand_x))
            if nx > PERTURBATION_BALL_RADIUS:
                cand_x = cand_x * (PERTURBATION_BALL_RADIUS / nx)
            cand_val = evaluate_on_vectors(form, cand_x, cand_f)
            if cand_val > val + 1e-15:
                x, fr, val = cand_x, cand_f, cand_val
                step *= 1.3
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return val, x, fr


def validate_eta_calibration(form: CalibrationForm, budget: int = 2000, seed: int = 0) -> ComassReport:
    """Search for the comass over random oriented planes, refined by ascent.

    The returned maximum is a lower bound on the true sup; the passed flag
    compares it against 1 + eta.
    """
    if budget < 1:
        raise ConfigError(f"sample budget must be at least 1, got {budget}")
    rng = np.random.default_rng(seed)
    k, n = form.degree, form.ambient
    frames = _haar_frames(rng, budget, k, n)
    if form.perturbation:
        raw = rng.standard_normal((budget, n))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        radii = rng.uniform(0.0, 1.0, budget) ** (1.0 / n)
        points = raw * (PERTURBATION_BALL_RADIUS * radii)[:, None]
    else:
        points = np.zeros((budget, n))
    vals = evaluate_frames(form, points, frames)
    order = np.argsort(vals)[::-1]
    best_val = -math.inf
    best_frame = frames[order[0]]
    for i in order[: min(8, budget)]:
        val, _, fr = _ascend(form, points[i], frames[i])
        if val > best_val:
            best_val, best_frame = val, fr
    return ComassReport(best_val, Frame(best_frame), budget, form.eta)


def volume_form(k: int, ambient: int, scale: float = 1.0, eta: float = 0.0) -> CalibrationForm:
    """The scaled volume form of the first k coordinate directions."""
    return CalibrationForm(k, ambient, {tuple(range(k)): scale}, {}, eta)


def form_to_dict(form: CalibrationForm) -> dict:
    out = {
        "degree": form.degree,
        "ambient": form.ambient,
        "eta": form.eta,
        "constant": [
            {"index": list(i), "coeff": c} for i, c in sorted(form.constant.items())
        ],
    }
    if form.perturbation:
        out["perturbation"] = [
            {
                "index": list(i),
                "monomials": [{"powers": list(p), "coeff": c} for p, c in monos],
            }
            for i, monos in sorted(form.perturbation.items())
        ]
    return out


def form_from_dict(data: dict) -> CalibrationForm:
    try:
        degree = int(data["degree"])
        ambient = int(data["ambient"])
        constant = {
            tuple(entry["index"]): float(entry["coeff"]) for entry in data["constant"]
        }
        pert = {}
        for entry in data.get("perturbation", []):
            pert[tuple(entry["index"])] = tuple(
                (tuple(m["powers"]), float(m["coeff"])) for m in entry["monomials"]
            )
        eta = float(data.get("eta", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed calibration spec: {exc}") from exc
    return CalibrationForm(degree, ambient, constant, pert, eta)


def load_form(path) -> CalibrationForm:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read calibration spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"calibration spec {path} is not valid JSON: {exc}") from exc
    return form_from_dict(data)


def all_multi_indices(k: int, n: int):
    """Strictly increasing k-tuples in range(n), lexicographic."""
    return itertools.combinations(range(n), k)
