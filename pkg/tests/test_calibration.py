"""Tests for form representation, evaluation, and comass validation."""
import json
import math

import numpy as np
import pytest

from reifcover.calibration import (
    CalibrationForm,
    evaluate,
    evaluate_frames,
    evaluate_on_vectors,
    form_from_dict,
    form_to_dict,
    load_form,
    validate_eta_calibration,
    volume_form,
)
from reifcover.errors import ConfigError, DegenerateInput, DegreeMismatch
from reifcover.geometry import AffinePlane, Frame


def coordinate_plane(k, n):
    return AffinePlane(np.zeros(n), Frame(np.eye(n)[:k]))


class TestConstruction:
    def test_multi_index_must_increase(self):
        with pytest.raises(ConfigError):
            CalibrationForm(2, 4, {(1, 0): 1.0})

    def test_multi_index_range_checked(self):
        with pytest.raises(ConfigError):
            CalibrationForm(2, 3, {(1, 3): 1.0})

    def test_negative_eta_rejected(self):
        with pytest.raises(ConfigError):
            CalibrationForm(1, 2, {(0,): 1.0}, eta=-0.1)

    def test_perturbation_degree_capped(self):
        pert = {(0, 1): (((4, 0, 0, 0), 0.01),)}
        with pytest.raises(ConfigError):
            CalibrationForm(2, 4, {(0, 1): 1.0}, pert, eta=1.0)

    def test_perturbation_exceeding_eta_rejected(self):
        # constant perturbation of size 0.2 against eta = 0.1
        pert = {(0, 1): (((0, 0, 0, 0), 0.2),)}
        with pytest.raises(DegenerateInput):
            CalibrationForm(2, 4, {(0, 1): 1.0}, pert, eta=0.1)

    def test_perturbation_within_eta_accepted(self):
        pert = {(0, 1): (((0, 0, 0, 0), 0.05),)}
        form = CalibrationForm(2, 4, {(0, 1): 1.0}, pert, eta=0.1)
        assert form.indices == ((0, 1),)


class TestEvaluate:
    def test_volume_form_on_matching_plane(self):
        form = volume_form(2, 4)
        assert evaluate(form, np.zeros(4), coordinate_plane(2, 4)) == pytest.approx(1.0)

    def test_rotated_frame_gives_cosine(self):
        form = volume_form(2, 4)
        theta = 0.7
        vecs = np.eye(4)[:2].copy()
        # rotate the last frame vector into the next coordinate direction
        vecs[1] = math.cos(theta) * np.eye(4)[1] + math.sin(theta) * np.eye(4)[2]
        plane = AffinePlane(np.zeros(4), Frame(vecs))
        assert evaluate(form, np.zeros(4), plane) == pytest.approx(math.cos(theta))

    def test_reversed_orientation_negates(self):
        form = volume_form(2, 4)
        vecs = np.eye(4)[:2].copy()
        vecs[1] = -vecs[1]
        plane = AffinePlane(np.zeros(4), Frame(vecs))
        assert evaluate(form, np.zeros(4), plane) == pytest.approx(-1.0)

    def test_degree_mismatch_raises(self):
        form = volume_form(2, 4)
        with pytest.raises(DegreeMismatch):
            evaluate(form, np.zeros(4), coordinate_plane(1, 4))

    def test_ambient_mismatch_raises(self):
        form = volume_form(2, 4)
        with pytest.raises(DegreeMismatch):
            evaluate_on_vectors(form, np.zeros(3), np.eye(3)[:2])

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(2)
        pert = {(0, 2): (((1, 0, 0, 0), 0.02), ((0, 0, 1, 2), 0.01))}
        form = CalibrationForm(2, 4, {(0, 1): 1.0, (2, 3): 0.3}, pert, eta=1.0)
        frames = []
        pts = rng.uniform(-1, 1, size=(20, 4))
        for _ in range(20):
            q, _ = np.linalg.qr(rng.standard_normal((4, 2)))
            frames.append(q.T)
        frames = np.array(frames)
        batch = evaluate_frames(form, pts, frames)
        for i in range(20):
            one = evaluate_on_vectors(form, pts[i], frames[i])
            assert batch[i] == pytest.approx(one, abs=1e-13)


class TestMultilinearity:
    def test_linear_in_each_slot(self):
        rng = np.random.default_rng(3)
        form = CalibrationForm(2, 4, {(0, 1): 0.7, (1, 3): -0.4, (0, 2): 0.2})
        for _ in range(50):
            v = rng.standard_normal((2, 4))
            w = rng.standard_normal(4)
            a, b = rng.standard_normal(2)
            slot = int(rng.integers(0, 2))
            mixed = v.copy()
            mixed[slot] = a * v[slot] + b * w
            other = v.copy()
            other[slot] = w
            lhs = evaluate_on_vectors(form, np.zeros(4), mixed)
            rhs = a * evaluate_on_vectors(form, np.zeros(4), v) + b * evaluate_on_vectors(
                form, np.zeros(4), other
            )
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_alternating(self):
        rng = np.random.default_rng(4)
        form = CalibrationForm(2, 4, {(0, 1): 0.7, (2, 3): 0.1})
        for _ in range(50):
            v = rng.standard_normal((2, 4))
            swapped = v[::-1].copy()
            assert evaluate_on_vectors(form, np.zeros(4), v) == pytest.approx(
                -evaluate_on_vectors(form, np.zeros(4), swapped), abs=1e-10
            )
            repeated = np.stack([v[0], v[0]])
            assert evaluate_on_vectors(form, np.zeros(4), repeated) == pytest.approx(
                0.0, abs=1e-10
            )


class TestComass:
    def test_unit_volume_form_passes(self):
        report = validate_eta_calibration(volume_form(2, 4), budget=500, seed=1)
        assert report.passed
        assert report.max_value == pytest.approx(1.0, abs=1e-7)

    def test_scaled_form_fails(self):
        form = volume_form(2, 4, scale=1.5, eta=0.1)
        report = validate_eta_calibration(form, budget=500, seed=1)
        assert not report.passed
        assert report.max_value > 1.1

    def test_mixed_two_form_comass_is_one(self):
        # max of P(0,1) + 0.05 P(2,3) over oriented 2-planes in R^4
        form = CalibrationForm(2, 4, {(0, 1): 1.0, (2, 3): 0.05}, eta=0.05)
        report = validate_eta_calibration(form, budget=1500, seed=7)
        assert report.max_value == pytest.approx(1.0, abs=1e-6)
        assert report.passed

    def test_deterministic_under_seed(self):
        form = CalibrationForm(2, 4, {(0, 1): 1.0, (2, 3): 0.05}, eta=0.05)
        r1 = validate_eta_calibration(form, budget=300, seed=11)
        r2 = validate_eta_calibration(form, budget=300, seed=11)
        assert r1.max_value == r2.max_value
        assert np.array_equal(r1.argmax_frame.vectors, r2.argmax_frame.vectors)

    def test_argmax_frame_attains_reported_value(self):
        form = CalibrationForm(2, 4, {(0, 1): 1.0, (2, 3): 0.05}, eta=0.05)
        report = validate_eta_calibration(form, budget=500, seed=3)
        plane = AffinePlane(np.zeros(4), report.argmax_frame)
        assert evaluate(form, np.zeros(4), plane) == pytest.approx(
            report.max_value, abs=1e-9
        )

    def test_budget_validation(self):
        with pytest.raises(ConfigError):
            validate_eta_calibration(volume_form(1, 2), budget=0)


class TestPerturbationBound:
    def test_full_form_stays_within_eta_of_constant_part(self):
        pert = {
            (0, 1): (((1, 0, 0), 0.01), ((0, 2, 0), 0.005)),
            (0, 2): (((0, 0, 1), 0.008),),
        }
        form = CalibrationForm(2, 3, {(0, 1): 1.0}, pert, eta=0.1)
        const = form.constant_part()
        rng = np.random.default_rng(6)
        for _ in range(100):
            x = rng.uniform(-1.0, 1.0, 3)
            if np.linalg.norm(x) > 2.0:
                continue
            q, _ = np.linalg.qr(rng.standard_normal((3, 2)))
            vecs = q.T
            diff = abs(
                evaluate_on_vectors(form, x, vecs) - evaluate_on_vectors(const, x, vecs)
            )
            assert diff <= form.eta + 1e-9


class TestSerialization:
    def test_roundtrip(self):
        pert = {(0, 2): (((1, 0, 0, 0), 0.02),)}
        form = CalibrationForm(2, 4, {(0, 1): 1.0, (2, 3): 0.05}, pert, eta=0.5)
        again = form_from_dict(form_to_dict(form))
        assert again.constant == form.constant
        assert again.perturbation == form.perturbation
        assert again.eta == form.eta

    def test_load_form_file(self, tmp_path):
        path = tmp_path / "form.json"
        path.write_text(
            json.dumps(
                {
                    "degree": 1,
                    "ambient": 2,
                    "eta": 0.0,
                    "constant": [{"index": [0], "coeff": 1.0}],
                }
            )
        )
        form = load_form(path)
        assert form.degree == 1
        line = AffinePlane(np.zeros(2), Frame(np.eye(2)[:1]))
        assert evaluate(form, np.zeros(2), line) == pytest.approx(1.0)

    def test_malformed_spec_raises_config_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\"degree\": 2}")
        with pytest.raises(ConfigError):
            load_form(path)

    def test_unreadable_file_raises_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_form(tmp_path / "missing.json")

    def test_invalid_json_raises_config_error(self, tmp_path):
        path = tmp_path / "trunc.json"
        path.write_text("{\"degree\": 2,")
        with pytest.raises(ConfigError):
            load_form(path)
