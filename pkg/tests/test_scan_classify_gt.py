import math

import numpy as np
import pytest

from scan_classify_gt import (
    MAP_LABEL,
    NON_MAP_LABEL,
    ClassifierParams,
    FineLabel,
    GroundTruthLabeler,
    ObservationHistory,
    classify_scan_gt,
    ltf_probability,
    stf_likelihood,
)
from world import DomainError, LineWorld, Pose, Scan, SensorSpec, rectangle, simulate_scan


@pytest.fixture
def furnished_room(square_room) -> LineWorld:
    return LineWorld(square_room.bounds, square_room.segments, (rectangle(6.5, 4.5, 7.5, 5.5),))


class TestLtfProbability:
    def test_on_line(self):
        assert ltf_probability([1.0, 0.0], [0.0, 0.0, 2.0, 0.0], 0.0025) == pytest.approx(1.0)

    def test_squared_distance_equals_sigma(self):
        assert ltf_probability([1.0, 0.1], [0.0, 0.0, 2.0, 0.0], 0.01) == pytest.approx(math.exp(-1))

    def test_five_centimeters(self):
        assert ltf_probability([1.0, 0.05], [0.0, 0.0, 2.0, 0.0], 0.0025) == pytest.approx(0.3679, abs=1e-4)

    def test_one_meter_off_is_zero(self):
        assert ltf_probability([1.0, 1.0], [0.0, 0.0, 2.0, 0.0], 0.0025) == pytest.approx(0.0, abs=1e-100)

    def test_no_expected_line(self):
        assert ltf_probability([1.0, 1.0], None, 0.0025) == 0.0

    def test_beyond_the_segment_end(self):
        # On the infinite line through the segment, 0.1 m past its end.
        assert ltf_probability([2.1, 0.0], [0.0, 0.0, 2.0, 0.0], 0.01) == pytest.approx(math.exp(-1))
        assert ltf_probability([3.0, 0.0], [0.0, 0.0, 2.0, 0.0], 0.0025) == pytest.approx(0.0, abs=1e-100)

    def test_bad_sigma(self):
        with pytest.raises(DomainError):
            ltf_probability([0.0, 0.0], [0.0, 0.0, 1.0, 0.0], 0.0)


class TestStfLikelihood:
    def test_identical_point(self):
        history = ObservationHistory(10)
        history.push(0, [[2.0, 3.0], [4.0, 4.0]])
        p, matched = stf_likelihood([2.0, 3.0], history, 0.0025)
        assert p == pytest.approx(1.0)
        np.testing.assert_allclose(matched, [2.0, 3.0])

    def test_empty_history(self):
        p, matched = stf_likelihood([2.0, 3.0], ObservationHistory(10), 0.0025)
        assert p == 0.0
        assert matched is None

    def test_window_drops_old_scans(self):
        history = ObservationHistory(2)
        for step in range(4):
            history.push(step, [[float(step), 0.0]])
        assert history.steps == [2, 3]
        p, _ = stf_likelihood([0.0, 0.0], history, 0.0025)
        assert p < 1e-100

    def test_nearest_matches_exhaustive_search(self, rng):
        history = ObservationHistory(5)
        for step in range(5):
            history.push(step, rng.uniform(0, 10, (40, 2)))
        query = rng.uniform(0, 10, (50, 2))
        dist, idx = history.nearest(query)
        pts = history.points()
        brute = np.hypot(*(query[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
        np.testing.assert_allclose(dist, brute.min(axis=1))
        np.testing.assert_allclose(dist, brute[np.arange(len(query)), idx])


class TestClassifyScan:
    def test_empty_room_is_all_map(self, square_room):
        spec = SensorSpec(n_beams=90, lidar_noise_sigma=0.0)
        pose = Pose(3.0, 4.0, 0.2)
        classified, _ = classify_scan_gt(square_room, pose, simulate_scan(square_room, pose, spec), ClassifierParams(), ObservationHistory())
        assert np.all(classified.fine_labels == FineLabel.LTF)
        assert np.all(classified.labels == MAP_LABEL)

    def test_static_object_dynamic_then_static(self, furnished_room):
        spec = SensorSpec(n_beams=90, lidar_noise_sigma=0.0)
        params = ClassifierParams()
        history = ObservationHistory(params.history_window)
        pose = Pose(5.0, 5.0, 0.0)
        first, history = classify_scan_gt(furnished_room, pose, simulate_scan(furnished_room, pose, spec, timestamp=0), params, history)
        second, history = classify_scan_gt(furnished_room, pose, simulate_scan(furnished_room, pose, spec, timestamp=1), params, history)
        assert first.labels[0] == NON_MAP_LABEL
        assert first.fine_labels[0] == FineLabel.DF
        assert second.labels[0] == NON_MAP_LABEL
        assert second.fine_labels[0] == FineLabel.STF
        assert np.array_equal(first.non_map_mask, second.non_map_mask)
        assert second.counts()["DF"] == 0

    def test_no_hit_beams_count_as_map(self):
        from world import Bounds

        world = LineWorld(Bounds(0.0, 0.0, 30.0, 30.0), [[20.0, 0.0, 20.0, 30.0]])
        spec = SensorSpec(n_beams=8, lidar_noise_sigma=0.0)
        pose = Pose(15.0, 15.0, 0.0)
        classified, _ = classify_scan_gt(world, pose, simulate_scan(world, pose, spec), ClassifierParams(), ObservationHistory())
        assert classified.fine_labels[4] == FineLabel.NO_HIT
        assert classified.labels[4] == MAP_LABEL

    def test_point_off_the_map_is_non_map(self, square_room):
        # A single beam reading 1 m short of the wall it points at.
        scan = Scan(np.array([4.0]), np.array([True]), 10.0)
        classified, _ = classify_scan_gt(square_room, Pose(5.0, 5.0, 0.0), scan, ClassifierParams(), ObservationHistory())
        assert classified.labels[0] == NON_MAP_LABEL

    def test_beam_count_mismatch_raises(self, square_room):
        history = ObservationHistory(10, n_beams=16)
        pose = Pose(5.0, 5.0)
        scan = simulate_scan(square_room, pose, SensorSpec(n_beams=8))
        with pytest.raises(DomainError):
            classify_scan_gt(square_room, pose, scan, ClassifierParams(), history)

    def test_history_receives_only_non_ltf_points(self, furnished_room):
        spec = SensorSpec(n_beams=90, lidar_noise_sigma=0.0)
        pose = Pose(5.0, 5.0, 0.0)
        classified, history = classify_scan_gt(
            furnished_room, pose, simulate_scan(furnished_room, pose, spec), ClassifierParams(), ObservationHistory()
        )
        assert len(history.points()) == int(np.sum(classified.fine_labels == FineLabel.DF))


class TestLabeler:
    def test_reset_forgets_history(self, furnished_room):
        spec = SensorSpec(n_beams=90, lidar_noise_sigma=0.0)
        labeler = GroundTruthLabeler(furnished_room)
        pose = Pose(5.0, 5.0, 0.0)
        labeler.step(pose, simulate_scan(furnished_room, pose, spec))
        labeler.step(pose, simulate_scan(furnished_room, pose, spec, timestamp=1))
        assert labeler.last.fine_labels[0] == FineLabel.STF
        labeler.reset()
        labeler.step(pose, simulate_scan(furnished_room, pose, spec, timestamp=2))
        assert labeler.last.fine_labels[0] == FineLabel.DF

    def test_params_validation(self):
        with pytest.raises(DomainError):
            ClassifierParams(tau_ltf=1.0)
        assert ClassifierParams.from_settings({"history_window": 4.0}).history_window == 4
