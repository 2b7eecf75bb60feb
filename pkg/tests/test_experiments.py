import math

import numpy as np
import pandas as pd
import pytest

from experiments import (
    ExperimentSpec,
    PlannerVariant,
    WorldCase,
    ablation_variants,
    aggregate,
    compare_planners,
    evaluate_labeler,
    run_ablation,
    run_experiment,
    run_trial,
    spec_from_settings,
    trial_start,
)
from planner import LabelMode, UtilityWeights
from scan_classify_gt import GroundTruthLabeler
from scan_classify_learned import TcnConfig, TrainConfig, generate_dataset
from settings import default_settings
from world import Bounds, DomainError, LineWorld, MotionSpec, Pose, SensorSpec, rectangle, rectangle_segments, save_world

SPEC = SensorSpec(n_beams=360, lidar_noise_sigma=0.0)
PLANNERS = (
    PlannerVariant("informed-gt", LabelMode.GROUND_TRUTH),
    PlannerVariant("mfe", LabelMode.NONE),
)


def _room(width: float, height: float, targets=(), objects=()) -> LineWorld:
    return LineWorld(
        Bounds(0.0, 0.0, width, height),
        rectangle_segments(0.0, 0.0, width, height),
        objects,
        targets,
        Pose(width / 2.0, height / 2.0, 0.0),
    )


@pytest.fixture
def world_files(tmp_path):
    return [
        save_world(_room(6.0, 4.0, targets=((1.0, 2.0, 0.15),)), tmp_path / "worlds" / "a.json"),
        save_world(_room(5.0, 5.0, targets=((4.0, 4.0, 0.15),)), tmp_path / "worlds" / "b.json"),
    ]


@pytest.fixture
def small_experiment(world_files) -> ExperimentSpec:
    cases = tuple(WorldCase("file", i, "easy", 90.0, world_file=str(p)) for i, p in enumerate(world_files))
    return ExperimentSpec(cases, PLANNERS, (0, 1), spec=SPEC)


def _trials(rows) -> pd.DataFrame:
    base = dict(planner="p", archetype="apartment", world="apartment-0", difficulty="easy", seed=0,
                budget=100.0, termination="detected", plan_steps=3, error="")
    return pd.DataFrame([{**base, **row} for row in rows])


class TestSweep:
    def test_counts(self, small_experiment, tmp_path):
        messages = []
        table = run_experiment(small_experiment, log_emit=messages.append)
        assert small_experiment.n_episodes == 8
        assert len(table.trials) == 8
        assert len(table.cells) == 4
        assert set(table.cells["trials"]) == {2}
        assert (table.trials["error"] == "").all()
        assert any(m.startswith("[START] 8 episodes") for m in messages)

    def test_found_trials_charge_detection_time(self, small_experiment):
        trials = run_experiment(small_experiment).trials
        found = trials[trials["found"]]
        assert len(found) > 0
        np.testing.assert_allclose(found["time_charged"], found["detection_time"])
        assert (found["time_charged"] <= found["budget"]).all()
        missed = trials[~trials["found"]]
        assert (missed["time_charged"] == missed["budget"]).all()

    def test_deterministic(self, small_experiment):
        a = run_experiment(small_experiment).trials
        b = run_experiment(small_experiment).trials
        pd.testing.assert_frame_equal(a, b)

    def test_write_tables(self, small_experiment, tmp_path):
        paths = run_experiment(small_experiment).write(tmp_path / "out")
        assert [p.name for p in paths] == ["results.csv", "trials.csv", "results.xlsx"]
        assert all(p.exists() for p in paths)
        assert len(pd.read_csv(paths[1])) == 8

    def test_missing_world_becomes_error_record(self):
        case = WorldCase("apartment", 0, "easy", 120.0)
        record = run_trial((PLANNERS[0], case, None, 0, 5, ExperimentSpec((case,), PLANNERS, (5,))))
        assert not record.found
        assert record.termination == "error"
        assert record.time_charged == 120.0
        assert "DomainError" in record.error

    def test_unbuildable_world_is_logged(self, tmp_path):
        case = WorldCase("file", 0, "easy", 30.0, world_file=str(tmp_path / "missing.json"))
        messages = []
        table = run_experiment(ExperimentSpec((case,), PLANNERS[:1], (0,), spec=SPEC), log_emit=messages.append)
        assert table.cells["errors"].tolist() == [1]
        assert any(m.startswith("[FAIL] world file-0") for m in messages)

    def test_trial_start_keeps_position(self):
        world = _room(6.0, 4.0)
        a, b = trial_start(world, 3), trial_start(world, 3)
        assert (a.x, a.y) == (3.0, 2.0)
        assert a.theta == b.theta
        assert -math.pi <= a.theta <= math.pi


@pytest.mark.slow
class TestHardApartments:
    """Small hard apartments: dense furniture, target in the far half."""

    def test_informed_planner_beats_frontier_exploration(self):
        cases = tuple(
            WorldCase("apartment", i, "hard", 180.0, size=(12.0, 16.0), object_density=0.9,
                      target_half="opposite", world_seed=100 + i)
            for i in range(4)
        )
        spec = ExperimentSpec(cases, PLANNERS, (0, 1, 2), spec=SensorSpec(n_beams=360))
        table = run_experiment(spec)
        assert (table.trials["error"] == "").all()
        row = compare_planners(table.cells, "informed-gt", "mfe").iloc[0]
        assert row["difficulty"] == "hard"
        assert row["informed-gt_success"] >= 95.0
        assert row["ratio"] <= 0.9


class TestAggregate:
    def test_failures_charged_full_budget(self):
        trials = _trials([
            {"trial": t, "found": False, "detection_time": float("nan"), "time_charged": 100.0, "termination": "budget"}
            for t in range(3)
        ])
        cells = aggregate(trials)
        assert cells["mean_time"].tolist() == [100.0]
        assert cells["success_rate"].tolist() == [0.0]

    def test_mixed_cell(self):
        trials = _trials([
            {"trial": 0, "found": True, "detection_time": 20.0, "time_charged": 20.0},
            {"trial": 1, "found": True, "detection_time": 40.0, "time_charged": 40.0},
            {"trial": 2, "found": False, "detection_time": float("nan"), "time_charged": 100.0, "error": "boom"},
        ])
        cells = aggregate(trials)
        row = cells.iloc[0]
        assert row["mean_time"] == pytest.approx(160.0 / 3.0)
        assert row["median_time"] == 40.0
        assert row["success_rate"] == pytest.approx(200.0 / 3.0)
        assert row["errors"] == 1

    def test_compare_planners(self):
        cells = pd.DataFrame([
            {"planner": "informed", "archetype": "office", "difficulty": "hard", "median_time": 50.0, "success_rate": 90.0},
            {"planner": "mfe", "archetype": "office", "difficulty": "hard", "median_time": 100.0, "success_rate": 70.0},
            {"planner": "informed", "archetype": "hallway", "difficulty": "easy", "median_time": 10.0, "success_rate": 100.0},
        ])
        summary = compare_planners(cells, "informed", "mfe")
        assert len(summary) == 1
        assert summary["ratio"].tolist() == [0.5]
        assert summary["mfe_success"].tolist() == [70.0]


class TestSettings:
    def test_generated_sweep(self):
        spec = spec_from_settings(default_settings())
        assert len(spec.cases) == 8
        assert len(spec.planners) == 3
        assert spec.n_episodes == 8 * 3 * 10
        hard = [c for c in spec.cases if c.difficulty == "hard" and c.archetype == "apartment"]
        assert all(c.target_half == "opposite" and c.budget == 180.0 for c in hard)
        assert spec.spec.n_beams == 897

    def test_world_files(self):
        spec = spec_from_settings(default_settings(), world_files=["x.json"])
        assert [(c.archetype, c.difficulty) for c in spec.cases] == [("file", "easy"), ("file", "hard")]

    def test_weight_override_per_planner(self):
        settings = default_settings()
        settings["bench"]["planners"] = [{"name": "no-nonmap", "label_mode": "none", "weights": {"w_nonmap": 0.0}}]
        variant = spec_from_settings(settings).planners[0]
        assert variant.weights.w_nonmap == 0.0
        assert variant.weights.w_dist == UtilityWeights.from_settings(settings["planner"]).w_dist

    def test_unknown_difficulty(self):
        settings = default_settings()
        settings["bench"]["difficulties"] = ["nightmare"]
        with pytest.raises(DomainError):
            spec_from_settings(settings)


class _Passthrough:
    def __init__(self, world):
        self.inner = GroundTruthLabeler(world)

    def reset(self):
        self.inner.reset()

    def step(self, pose, scan):
        return self.inner.step(pose, scan)


class TestClassifierEvaluation:
    def test_ground_truth_scores_perfectly(self):
        world = LineWorld(
            Bounds(0.0, 0.0, 10.0, 10.0), rectangle_segments(0.0, 0.0, 10.0, 10.0), (rectangle(4.5, 4.5, 5.5, 5.5),)
        )
        path = [Pose(2.0, 2.0, 0.0), Pose(8.0, 2.0, 0.0)]
        report = evaluate_labeler(
            _Passthrough, [world], [[path]], spec=SensorSpec(n_beams=64, lidar_noise_sigma=0.0), motion=MotionSpec(v_robot=1.0)
        )
        assert report.mean == 1.0
        assert report.stderr == 0.0
        assert 0.5 <= report.majority_baseline <= 1.0
        assert report.per_world["scans"].tolist() == [30]

    def test_no_paths(self):
        with pytest.raises(DomainError):
            evaluate_labeler(_Passthrough, [], [])


class TestAblation:
    def test_variant_names(self):
        variants = ablation_variants("noise_sweep", TrainConfig(), TcnConfig(n_beams=16), (0.0, 0.25))
        assert [name for name, _, _ in variants] == ["noise_0.00", "noise_0.25"]
        assert variants[1][1].corruption_rate == 0.25
        encoder = ablation_variants("label_encoder", TrainConfig(), TcnConfig(n_beams=16), ())
        assert [m.use_label_encoder for _, _, m in encoder] == [True, False]

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            ablation_variants("dropout", TrainConfig(), TcnConfig(n_beams=16), ())

    def test_run_label_encoder_ablation(self, tmp_path):
        rooms = [
            LineWorld(Bounds(0.0, 0.0, 10.0, 10.0), rectangle_segments(0.0, 0.0, 10.0, 10.0), (rectangle(*box),))
            for box in ((4.5, 4.5, 5.5, 5.5), (3.0, 4.0, 4.0, 6.0), (5.5, 3.5, 7.0, 5.0))
        ]
        loop = [Pose(2.0, 2.0, 0.0), Pose(8.0, 2.0, 0.0), Pose(8.0, 8.0, 0.0), Pose(2.0, 8.0, 0.0)]
        dataset = generate_dataset(
            rooms, [[loop]] * 3, SensorSpec(n_beams=16, lidar_noise_sigma=0.0), seed=0, motion=MotionSpec(v_robot=1.0)
        )
        result = run_ablation(
            "label_encoder", dataset,
            TrainConfig(epochs=3, batch_size=8, learning_rate=0.01, test_fraction=0.34, seed=3),
            TcnConfig(n_beams=16, k=3, hidden_channels=2),
            out_dir=tmp_path,
        )
        assert len(result.curves) == 2 * 3 * 2
        assert result.final["variant"].tolist() == ["with_label_encoder", "without_label_encoder"]
        assert {"train_accuracy", "test_accuracy"} <= set(result.final.columns)
        assert (tmp_path / "ablation_curves.csv").exists()
        assert (tmp_path / "ablation_final.csv").exists()
