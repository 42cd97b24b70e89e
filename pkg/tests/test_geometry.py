"""Tests for frames, planes, projectors, independence, and set distances."""
import math

import numpy as np
import pytest

from reifcover.errors import DegenerateInput, RankMismatch
from reifcover.geometry import (
    AffinePlane,
    Ball,
    Frame,
    ProjectionOperator,
    affine_residuals,
    as_point_array,
    batched_eigh_descending,
    eps_linear_independence,
    grassmann_distance,
    hausdorff_distance,
    one_sided_hausdorff,
    orient_frame,
    orthonormalize,
    unit_ball_volume,
)


def line_frame(theta, dim=2):
    v = np.zeros(dim)
    v[0], v[1] = math.cos(theta), math.sin(theta)
    return Frame(np.array([v]))


class TestFrame:
    def test_orthonormal_accepted(self):
        f = Frame(np.eye(3)[:2])
        assert f.k == 2 and f.n == 3

    def test_non_orthonormal_rejected(self):
        with pytest.raises(DegenerateInput):
            Frame(np.array([[1.0, 1.0]]))

    def test_non_orthogonal_rejected(self):
        v = np.array([[1.0, 0.0], [math.sqrt(0.5), math.sqrt(0.5)]])
        with pytest.raises(DegenerateInput):
            Frame(v)

    def test_zero_dimensional_frame_is_legal(self):
        f = Frame(np.zeros((0, 4)))
        assert f.k == 0
        assert np.allclose(f.projector(), np.zeros((4, 4)))

    def test_projector_and_complement(self):
        f = line_frame(0.3, dim=3)
        p = f.projector()
        q = f.complement()
        assert q.k == 2
        # complement spans the orthogonal space
        assert np.allclose(q.vectors @ f.vectors.T, 0.0, atol=1e-12)
        assert np.allclose(p + q.projector(), np.eye(3), atol=1e-12)


class TestProjectionOperator:
    def test_from_frame_roundtrip(self):
        f = Frame(np.eye(4)[:2])
        op = ProjectionOperator.from_frame(f)
        assert op.rank == 2
        assert np.allclose(op.matrix, np.diag([1.0, 1.0, 0.0, 0.0]))

    def test_rejects_non_symmetric(self):
        m = np.array([[1.0, 0.1], [0.0, 0.0]])
        with pytest.raises(DegenerateInput):
            ProjectionOperator(m)

    def test_rejects_non_idempotent(self):
        m = 0.5 * np.eye(2)
        with pytest.raises(DegenerateInput):
            ProjectionOperator(m)

    def test_apply_projects(self):
        op = ProjectionOperator.from_frame(line_frame(0.0))
        out = op.apply(np.array([[3.0, 4.0]]))
        assert np.allclose(out, [[3.0, 0.0]])


class TestOrthonormalize:
    def test_two_vectors_plane(self):
        frame, rep = orthonormalize(np.array([[1.0, 0.0], [1.0, 1.0]]), 0.1)
        assert np.allclose(frame.vectors, np.eye(2), atol=1e-14)
        # the leading vector's self-coefficient always realizes ratio 1
        assert rep.coeff_bound == pytest.approx(1.0, abs=1e-12)
        assert rep.pivot_norms[1] == pytest.approx(1.0)

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateInput):
            orthonormalize(np.array([[1.0, 0.0], [1.0, 1e-9]]), 1e-6)

    def test_pivot_floor_scales_with_r(self):
        vecs = np.array([[1.0, 0.0], [1.0, 0.05]])
        frame, _ = orthonormalize(vecs, 0.01, scale=1.0)
        assert frame.k == 2
        with pytest.raises(DegenerateInput):
            orthonormalize(vecs, 0.01, scale=10.0)

    def test_random_outputs_orthonormal(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = rng.integers(2, 6)
            k = int(rng.integers(1, n + 1))
            vecs = rng.standard_normal((k, n))
            try:
                frame, rep = orthonormalize(vecs, 1e-8)
            except DegenerateInput:
                continue
            gram = frame.vectors @ frame.vectors.T
            assert np.allclose(gram, np.eye(k), atol=1e-12)
            # expansion reconstructs the inputs
            rebuilt = rep.coefficients @ frame.vectors
            assert np.allclose(rebuilt, vecs, atol=1e-10)


class TestIndependence:
    def test_simplex_passes(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        wit = eps_linear_independence(pts, 0.5, 1.0)
        assert wit.verdict
        assert np.min(wit.residuals) == pytest.approx(1.0)

    def test_collinear_fails(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        wit = eps_linear_independence(pts, 0.1, 1.0)
        assert not wit.verdict
        assert wit.slack < 0

    def test_closed_ball_boundary_passes(self):
        # residual exactly eps*r counts as independent
        eps, r = 0.25, 2.0
        pts = np.array([[0.0, 0.0], [eps * r, 0.0]])
        wit = eps_linear_independence(pts, eps, r)
        assert wit.verdict
        assert wit.slack == pytest.approx(0.0, abs=1e-15)

    def test_just_inside_fails(self):
        eps, r = 0.25, 2.0
        pts = np.array([[0.0, 0.0], [eps * r * (1 - 1e-9), 0.0]])
        wit = eps_linear_independence(pts, eps, r)
        assert not wit.verdict

    def test_residuals_match_affine_distances(self):
        rng = np.random.default_rng(3)
        pts = rng.standard_normal((4, 5))
        res = affine_residuals(pts)
        # residual i is the distance from point i to the span of the earlier ones
        for i in range(1, 4):
            base = pts[0]
            diffs = pts[1:i] - base
            if len(diffs):
                q, _ = np.linalg.qr(diffs.T, mode="reduced")
                proj = (pts[i] - base) @ q @ q.T
            else:
                proj = np.zeros(5)
            expect = np.linalg.norm(pts[i] - base - proj)
            assert res[i - 1] == pytest.approx(expect, rel=1e-10)


class TestPerturbationStability:
    def test_battery(self):
        # For an eps-independent set, any perturbation of each point by at
        # most delta0 = eps / (4 max(1, c)) keeps the set eps/2-independent,
        # with c the measured expansion coefficient bound.
        rng = np.random.default_rng(20250817)
        eps = 0.25
        for n, k in [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2)]:
            for _ in range(1000):
                while True:
                    pts = rng.uniform(-1.0, 1.0, size=(k + 1, n))
                    wit = eps_linear_independence(pts, eps, 1.0)
                    if wit.verdict:
                        break
                _, rep = orthonormalize(pts[1:] - pts[0], eps, 1.0)
                delta0 = eps / (4.0 * max(1.0, rep.coeff_bound))
                pert = rng.standard_normal((k + 1, n))
                pert *= delta0 / np.linalg.norm(pert, axis=1)[:, None]
                pert *= rng.uniform(0.0, 1.0, size=(k + 1, 1))
                out = eps_linear_independence(pts + pert, eps / 2.0, 1.0)
                assert out.verdict, (n, k, pts, pert)


class TestInvariances:
    def test_orthonormalize_commutes_with_rotation(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            n = int(rng.integers(2, 5))
            k = int(rng.integers(1, n + 1))
            vecs = rng.standard_normal((k, n))
            rot, _ = np.linalg.qr(rng.standard_normal((n, n)))
            try:
                f_plain, _ = orthonormalize(vecs, 1e-9)
            except DegenerateInput:
                continue
            f_rot, _ = orthonormalize(vecs @ rot.T, 1e-9)
            rotated_span = Frame(f_plain.vectors @ rot.T)
            assert grassmann_distance(f_rot, rotated_span) < 1e-9

    def test_independence_invariant_under_similarity(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            pts = rng.uniform(-1.0, 1.0, size=(3, 3))
            eps, r = 0.2, 1.0
            base = eps_linear_independence(pts, eps, r)
            shift = rng.uniform(-50.0, 50.0, size=3)
            lam = float(rng.uniform(0.01, 100.0))
            moved = eps_linear_independence(pts * lam + shift, eps, r * lam)
            assert base.verdict == moved.verdict

    def test_grassmann_triangle_inequality(self):
        rng = np.random.default_rng(43)
        for _ in range(200):
            frames = []
            for _ in range(3):
                f, _ = orthonormalize(rng.standard_normal((2, 4)), 1e-9)
                frames.append(f)
            ab = grassmann_distance(frames[0], frames[1])
            bc = grassmann_distance(frames[1], frames[2])
            ac = grassmann_distance(frames[0], frames[2])
            assert ac <= ab + bc + 1e-9


class TestGrassmann:
    def test_lines_at_pi_over_six(self):
        d = grassmann_distance(line_frame(0.0), line_frame(math.pi / 6))
        assert d == pytest.approx(0.5, abs=1e-12)

    def test_symmetric_and_zero_on_equal(self):
        a, b = line_frame(0.1, 3), line_frame(0.7, 3)
        assert grassmann_distance(a, b) == pytest.approx(grassmann_distance(b, a))
        assert grassmann_distance(a, a) == pytest.approx(0.0, abs=1e-14)

    def test_orthogonal_lines_distance_one(self):
        d = grassmann_distance(line_frame(0.0), line_frame(math.pi / 2))
        assert d == pytest.approx(1.0, abs=1e-12)

    def test_rank_mismatch_raises(self):
        plane = Frame(np.eye(3)[:2])
        line = line_frame(0.0, 3)
        with pytest.raises(RankMismatch):
            grassmann_distance(plane, line)

    def test_mixed_input_types(self):
        f = line_frame(0.4)
        p = ProjectionOperator.from_frame(f)
        assert grassmann_distance(f, p) == pytest.approx(0.0, abs=1e-14)
        assert grassmann_distance(p.matrix, line_frame(0.9)) > 0


class TestHausdorff:
    def test_parallel_lines_offset(self):
        # dense samples of one line against the offset line, both directions
        xs = np.linspace(-1.0, 1.0, 4001)
        low = np.stack([xs, np.zeros_like(xs)], axis=1)
        high = low + np.array([0.0, 0.2])
        clip = Ball(np.zeros(2), 1.0)
        plane_low = AffinePlane(np.zeros(2), line_frame(0.0))
        plane_high = AffinePlane(np.array([0.0, 0.2]), line_frame(0.0))
        fwd = one_sided_hausdorff(low, plane_high, clip)
        back = one_sided_hausdorff(high, plane_low, clip)
        assert fwd.value == pytest.approx(0.2, abs=1e-12)
        assert back.value == pytest.approx(0.2, abs=1e-12)
        assert not fwd.empty_clip and not back.empty_clip

    def test_empty_clip_flagged(self):
        a = np.array([[0.0, 5.0], [3.0, 5.0]])
        b = AffinePlane(np.zeros(2), line_frame(0.0))
        res = one_sided_hausdorff(a, b, Ball(np.zeros(2), 1.0))
        assert res.value == 0.0
        assert res.empty_clip

    def test_point_in_plane_subset_is_zero(self):
        plane = AffinePlane(np.zeros(3), Frame(np.eye(3)[:2]))
        pts = np.array([[0.3, -0.1, 0.0], [0.0, 0.0, 0.0]])
        res = one_sided_hausdorff(pts, plane, Ball(np.zeros(3), 1.0))
        assert res.value == pytest.approx(0.0, abs=1e-15)

    def test_point_above_plane(self):
        plane = AffinePlane(np.zeros(2), line_frame(0.0))
        res = one_sided_hausdorff(np.array([[0.0, 0.1]]), plane, Ball(np.zeros(2), 1.0))
        assert res.value == pytest.approx(0.1)

    def test_point_sets(self):
        a = np.array([[0.0, 0.0], [1.0, 0.0]])
        b = np.array([[0.0, 0.1]])
        res = one_sided_hausdorff(a, b, Ball(np.zeros(2), 2.0))
        assert res.value == pytest.approx(math.hypot(1.0, 0.1))

    def test_symmetrized(self):
        a = np.array([[0.0, 0.0]])
        b = np.array([[0.0, 0.3], [0.0, -0.4]])
        clip = Ball(np.zeros(2), 1.0)
        assert hausdorff_distance(a, b, clip).value == pytest.approx(0.4)

    def test_clip_restricts_supremum(self):
        # far-away sample points fall outside the ball and are ignored
        a = np.array([[0.0, 0.05], [10.0, 3.0]])
        b = AffinePlane(np.zeros(2), line_frame(0.0))
        res = one_sided_hausdorff(a, b, Ball(np.zeros(2), 1.0))
        assert res.value == pytest.approx(0.05)

    def test_plane_target_matches_dense_sampling(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            frame, _ = orthonormalize(rng.standard_normal((2, 3)), 1e-9)
            plane = AffinePlane(rng.uniform(-0.2, 0.2, 3), frame)
            pts = rng.uniform(-0.5, 0.5, size=(50, 3))
            clip = Ball(np.zeros(3), 1.0)
            got = one_sided_hausdorff(pts, plane, clip)
            # dense reference: measure against a wide sampled patch instead
            uu = rng.uniform(-8.0, 8.0, size=(200000, 2))
            samples = plane.base + uu @ frame.vectors
            ref = one_sided_hausdorff(pts, samples, clip)
            assert got.value <= ref.value + 1e-12
            assert got.value >= ref.value - 0.05


class TestOrientFrame:
    def test_sign_convention_idempotent(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            frame, _ = orthonormalize(rng.standard_normal((2, 4)), 1e-9)
            v = orient_frame(frame.vectors)
            again = orient_frame(v)
            assert np.array_equal(v, again)

    def test_opposite_orientation_maps_to_same_representative(self):
        frame, _ = orthonormalize(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]), 1e-9)
        v = orient_frame(frame.vectors)
        flipped = v.copy()
        flipped[-1] = -flipped[-1]
        w = orient_frame(flipped)
        assert np.allclose(v, w, atol=1e-15)

    def test_span_preserved(self):
        rng = np.random.default_rng(6)
        vecs, _ = orthonormalize(rng.standard_normal((2, 4)), 1e-9)
        f = Frame(orient_frame(vecs.vectors))
        assert grassmann_distance(f, vecs) < 1e-12


class TestBatchedEigh:
    def test_matches_numpy(self):
        rng = np.random.default_rng(9)
        mats = rng.standard_normal((40, 3, 3))
        mats = 0.5 * (mats + mats.transpose(0, 2, 1))
        vals, vecs = batched_eigh_descending(mats)
        for i in range(40):
            ref = np.linalg.eigvalsh(mats[i])[::-1]
            assert np.allclose(vals[i], ref, atol=1e-12)
            rebuilt = (vecs[i] * vals[i]) @ vecs[i].T
            assert np.allclose(rebuilt, mats[i], atol=1e-10)

    def test_two_by_two_analytic_path(self):
        rng = np.random.default_rng(13)
        mats = rng.standard_normal((100, 2, 2))
        mats = 0.5 * (mats + mats.transpose(0, 2, 1))
        vals, vecs = batched_eigh_descending(mats)
        assert np.all(vals[:, 0] >= vals[:, 1])
        for i in range(100):
            rebuilt = (vecs[i] * vals[i]) @ vecs[i].T
            assert np.allclose(rebuilt, mats[i], atol=1e-12)


class TestBallAndVolume:
    def test_contains_is_closed(self):
        b = Ball(np.zeros(2), 1.0)
        assert b.contains(np.array([[1.0, 0.0]]))[0]
        assert not b.contains(np.array([[1.0 + 1e-12, 0.0]]))[0]

    def test_scaled(self):
        b = Ball(np.ones(3), 2.0).scaled(0.5)
        assert b.radius == 1.0
        assert np.allclose(b.center, np.ones(3))

    def test_unit_ball_volume(self):
        assert unit_ball_volume(1) == pytest.approx(2.0)
        assert unit_ball_volume(2) == pytest.approx(math.pi)
        assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0)


class TestAsPointArray:
    def test_promotes_single_point(self):
        arr = as_point_array([1.0, 2.0], 2)
        assert arr.shape == (1, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(DegenerateInput):
            as_point_array(np.zeros((3, 2)), 3)
