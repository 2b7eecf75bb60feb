import dataclasses

import numpy as np
import pytest
import torch
from torch.func import functional_call

from scan_classify_gt import MAP_LABEL, NON_MAP_LABEL
from scan_classify_learned import (
    CircularEncoder,
    HistoryBuffer,
    LearnedLabeler,
    ScanDataset,
    TcnConfig,
    TcnModel,
    TrainConfig,
    accuracy,
    classify_threshold,
    corrupt_labels,
    evaluate_on_dataset,
    ewa_labels,
    forward,
    generate_dataset,
    infer_step,
    load_model,
    save_model,
    split_worlds,
    train,
    window_ends,
)
from world import Bounds, DomainError, LineWorld, MotionSpec, Pose, SensorSpec, rectangle, rectangle_segments, simulate_scan

N_BEAMS = 16
SPEC = SensorSpec(n_beams=N_BEAMS, lidar_noise_sigma=0.0)
MOTION = MotionSpec(v_robot=1.0)
LOOP = [Pose(2.0, 2.0, 0.0), Pose(8.0, 2.0, 0.0), Pose(8.0, 8.0, 0.0), Pose(2.0, 8.0, 0.0)]


def _room(box) -> LineWorld:
    return LineWorld(Bounds(0.0, 0.0, 10.0, 10.0), rectangle_segments(0.0, 0.0, 10.0, 10.0), (rectangle(*box),))


@pytest.fixture(scope="module")
def toy_dataset() -> ScanDataset:
    worlds = [_room((4.5, 4.5, 5.5, 5.5)), _room((3.0, 4.0, 4.0, 6.0)), _room((5.5, 3.5, 7.0, 5.0))]
    return generate_dataset(worlds, [[LOOP]] * len(worlds), SPEC, seed=0, motion=MOTION)


def _tiny_config(**overrides) -> TcnConfig:
    return TcnConfig(**{"n_beams": N_BEAMS, "k": 3, "hidden_channels": 2, **overrides})


class TestEwa:
    def test_constant_columns(self):
        assert ewa_labels(np.ones((4, 8))) == pytest.approx(np.ones(4))
        assert ewa_labels(-np.ones((4, 8))) == pytest.approx(-np.ones(4))

    def test_newest_weighted(self):
        assert ewa_labels(np.array([[1.0, -1.0]]), 0.5)[0] == pytest.approx(-1.0 / 3.0)

    def test_bounded_by_inputs(self, rng):
        est = rng.choice([-1.0, 1.0], size=(50, 8))
        avg = ewa_labels(est, 0.5)
        assert np.all(avg <= est.max(axis=1) + 1e-12)
        assert np.all(avg >= est.min(axis=1) - 1e-12)


class TestCorruption:
    def test_exact_flip_count(self, rng):
        labels = np.ones((6, N_BEAMS, 4))
        flipped = corrupt_labels(labels, 0.25, rng)
        assert np.all(np.sum(flipped != labels, axis=(1, 2)) == round(0.25 * N_BEAMS * 4))

    def test_zero_rate_is_identity(self, rng):
        labels = rng.choice([-1.0, 1.0], size=(3, N_BEAMS, 4))
        np.testing.assert_array_equal(corrupt_labels(labels, 0.0, rng), labels)


class TestHistoryBuffer:
    def test_bootstrap_is_zero(self):
        buf = HistoryBuffer.bootstrap(N_BEAMS, 4)
        assert buf.poses.shape == (3, 4)
        assert buf.ranges.shape == (N_BEAMS, 4)
        assert buf.est_labels.shape == (N_BEAMS, 3)
        assert not buf.poses.any() and not buf.ranges.any() and not buf.est_labels.any()

    def test_newest_column_last(self):
        buf = HistoryBuffer.bootstrap(N_BEAMS, 3)
        buf.push_observation(Pose(1.0, 0.0), np.full(N_BEAMS, 1.0))
        buf.push_observation(Pose(2.0, 0.0), np.full(N_BEAMS, 2.0))
        np.testing.assert_allclose(buf.poses[0], [0.0, 1.0, 2.0])
        np.testing.assert_allclose(buf.ranges[:, -1], 2.0)

    def test_wrong_beam_count(self):
        with pytest.raises(DomainError):
            HistoryBuffer.bootstrap(N_BEAMS, 3).push_observation(Pose(0, 0), np.ones(N_BEAMS + 1))


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        model = TcnModel(_tiny_config())
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        buf = HistoryBuffer.bootstrap(N_BEAMS, 3)
        buf.push_observation(Pose(1.0, 2.0, 0.3), np.linspace(1.0, 5.0, N_BEAMS))
        logits = forward(model, buf, np.zeros(N_BEAMS))
        np.testing.assert_array_equal(logits, np.zeros(N_BEAMS))
        assert np.all(classify_threshold(logits) == MAP_LABEL)

    def test_output_in_open_interval(self, rng):
        torch.manual_seed(0)
        model = TcnModel(_tiny_config())
        buf = HistoryBuffer.bootstrap(N_BEAMS, 3)
        for _ in range(3):
            buf.push_observation(Pose(*rng.uniform(-20, 20, 3)), rng.uniform(0.1, 10.0, N_BEAMS))
        logits = forward(model, buf, rng.uniform(-1, 1, N_BEAMS))
        assert np.all(np.abs(logits) < 1.0)

    def test_shape_mismatch(self):
        model = TcnModel(_tiny_config())
        with pytest.raises(DomainError):
            forward(model, HistoryBuffer.bootstrap(N_BEAMS, 4), np.zeros(N_BEAMS))

    @pytest.mark.parametrize("logit, label", [(0.0, MAP_LABEL), (-0.3, NON_MAP_LABEL), (0.7, MAP_LABEL)])
    def test_threshold(self, logit, label):
        assert classify_threshold(np.array([logit]))[0] == label

    def test_label_encoder_ablation_ignores_labels(self, rng):
        torch.manual_seed(0)
        model = TcnModel(_tiny_config(use_label_encoder=False)).double()
        poses = torch.as_tensor(rng.normal(size=(2, 3, 3)))
        ranges = torch.as_tensor(rng.uniform(0.1, 10.0, (2, N_BEAMS, 3)))
        a = model(poses, ranges, torch.ones(2, N_BEAMS, 3, dtype=torch.float64))
        b = model(poses, ranges, -torch.ones(2, N_BEAMS, 3, dtype=torch.float64))
        assert torch.equal(a, b)

    @pytest.mark.parametrize("seed", range(100))
    def test_gradient_check(self, seed):
        rng = np.random.default_rng(seed)
        torch.manual_seed(seed)
        model = TcnModel(_tiny_config()).double()
        names = [n for n, _ in model.named_parameters()]
        params = tuple(p.detach().clone().requires_grad_(True) for p in model.parameters())
        poses = torch.as_tensor(rng.normal(size=(2, 3, 3)))
        ranges = torch.as_tensor(rng.uniform(0.5, 10.0, (2, N_BEAMS, 3)))
        labels = torch.as_tensor(rng.choice([-1.0, 1.0], size=(2, N_BEAMS, 3)))
        target = torch.as_tensor(rng.choice([-1.0, 1.0], size=(2, N_BEAMS)))

        def loss(*flat):
            out = functional_call(model, dict(zip(names, flat)), (poses, ranges, labels))
            return torch.mean((out - target) ** 2)

        assert torch.autograd.gradcheck(loss, params, eps=1e-6, atol=1e-6, rtol=1e-4)


class TestCircularEquivariance:
    @pytest.mark.parametrize("shift", [1, 5, N_BEAMS - 1])
    def test_conv_stage_commutes_with_rotation(self, rng, shift):
        torch.manual_seed(0)
        encoder = CircularEncoder(3, 2).double()
        x = torch.as_tensor(rng.normal(size=(2, N_BEAMS, 3)))
        with torch.no_grad():
            rotated = encoder.conv_stage(torch.roll(x, shift, dims=1))
            expected = torch.roll(encoder.conv_stage(x), shift, dims=2)
        torch.testing.assert_close(rotated, expected)

    def test_encoder_output_rotates_with_the_scan(self, rng):
        torch.manual_seed(1)
        encoder = CircularEncoder(3, 4).double()
        x = torch.as_tensor(rng.uniform(0.1, 1.0, (1, N_BEAMS, 3)))
        with torch.no_grad():
            torch.testing.assert_close(encoder(torch.roll(x, 3, dims=1)), torch.roll(encoder(x), 3, dims=1))


class TestSteadyState:
    def _positive_gate_model(self, seed: int) -> TcnModel:
        torch.manual_seed(seed)
        model = TcnModel(_tiny_config()).double().eval()
        with torch.no_grad():
            model.label_encoder.proj.weight.mul_(0.1)
            model.label_encoder.proj.bias.fill_(5.0)
        return model

    @pytest.mark.parametrize("seed", range(5))
    def test_labels_settle_at_a_standstill(self, square_room, seed):
        model = self._positive_gate_model(seed)
        buf = HistoryBuffer.bootstrap(N_BEAMS, 3)
        pose = Pose(4.0, 6.0, 0.7)
        scan = simulate_scan(square_room, pose, SPEC)
        history = []
        for _ in range(10):
            labels, buf = infer_step(model, buf, pose, scan)
            history.append(labels.copy())
        for later in history[3:]:
            np.testing.assert_array_equal(later, history[2])

    def test_labeler_without_label_feedback_is_stable(self, square_room):
        torch.manual_seed(3)
        labeler = LearnedLabeler(TcnModel(_tiny_config(use_label_encoder=False)))
        pose = Pose(6.0, 3.0, -1.2)
        scan = simulate_scan(square_room, pose, SPEC)
        history = [labeler.step(pose, scan) for _ in range(8)]
        for later in history[3:]:
            np.testing.assert_array_equal(later, history[2])


class TestInference:
    def test_bootstrap_steps_run(self, square_room):
        torch.manual_seed(0)
        model = TcnModel(_tiny_config()).eval()
        buf = HistoryBuffer.bootstrap(N_BEAMS, 3)
        pose = Pose(5.0, 5.0, 0.0)
        for step in range(5):
            labels, buf = infer_step(model, buf, pose, simulate_scan(square_room, pose, SPEC, timestamp=step))
            assert labels.shape == (N_BEAMS,)
            assert set(np.unique(labels)) <= {MAP_LABEL, NON_MAP_LABEL}
        np.testing.assert_array_equal(buf.est_labels[:, -1], labels)

    def test_labeler_reset(self, square_room):
        labeler = LearnedLabeler(TcnModel(_tiny_config()))
        pose = Pose(5.0, 5.0, 0.0)
        labeler.step(pose, simulate_scan(square_room, pose, SPEC))
        labeler.reset()
        assert not labeler.buffer.ranges.any()


class TestAccuracy:
    def test_identical_and_opposite(self):
        truth = np.array([1, -1, 1, 1])
        assert accuracy(truth, truth) == 1.0
        assert accuracy(-truth, truth) == 0.0

    def test_partial(self):
        truth = np.ones(897, dtype=np.int8)
        pred = truth.copy()
        pred[:100] = -1
        assert accuracy(pred, truth) == pytest.approx(1 - 100 / 897)
        assert accuracy(pred, truth) == pytest.approx(0.8885, abs=1e-4)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            accuracy(np.ones(3), np.ones(4))


class TestDataset:
    def test_one_run_per_trajectory(self, square_room):
        ds = generate_dataset([square_room], [[LOOP[:2]]], SPEC, motion=MOTION)
        assert len(ds) == 30
        assert set(ds.run_id.tolist()) == {0}
        assert ds.n_beams == N_BEAMS

    def test_empty_trajectory(self, square_room):
        with pytest.raises(DomainError):
            generate_dataset([square_room], [[[Pose(1.0, 1.0)]]], SPEC)

    def test_save_load(self, toy_dataset, tmp_path):
        loaded = ScanDataset.load(toy_dataset.save(tmp_path / "ds.npz"))
        np.testing.assert_array_equal(loaded.ranges, toy_dataset.ranges)
        np.testing.assert_array_equal(loaded.labels, toy_dataset.labels)
        np.testing.assert_array_equal(loaded.run_id, toy_dataset.run_id)
        assert loaded.max_range == toy_dataset.max_range

    def test_windows_stay_inside_runs(self, toy_dataset):
        ends = window_ends(toy_dataset, 3)
        assert len(ends) == len(toy_dataset) - 2 * len(toy_dataset.runs())
        assert np.all(toy_dataset.run_id[ends] == toy_dataset.run_id[ends - 2])

    def test_split_by_world(self):
        train_w, test_w = split_worlds(np.repeat(np.arange(4), 10), 0.25, seed=0)
        assert len(test_w) == 1
        assert sorted(train_w + test_w) == [0, 1, 2, 3]


class TestTraining:
    def _config(self, **overrides) -> TrainConfig:
        base = dict(epochs=20, batch_size=8, learning_rate=0.01, test_fraction=0.34, seed=3)
        base.update(overrides)
        return TrainConfig(**base)

    def test_loss_decreases(self, toy_dataset):
        result = train(toy_dataset, self._config(), _tiny_config())
        assert len(result.history) == 20
        assert result.history[-1].train_loss < result.history[0].train_loss
        assert len(result.test_worlds) == 1
        assert 0.0 <= result.history[-1].test_accuracy <= 1.0

    def test_deterministic(self, toy_dataset):
        cfg = self._config(epochs=2)
        a = train(toy_dataset, cfg, _tiny_config()).model.state_dict()
        b = train(toy_dataset, cfg, _tiny_config()).model.state_dict()
        assert all(torch.equal(a[name], b[name]) for name in a)

    def test_too_small_dataset(self, toy_dataset):
        small = toy_dataset.subset(np.arange(len(toy_dataset)) < 5)
        with pytest.raises(DomainError):
            train(small, self._config(), _tiny_config())

    def test_evaluate_on_dataset(self, toy_dataset):
        model = TcnModel(_tiny_config())
        mean, stderr = evaluate_on_dataset(model, toy_dataset)
        assert 0.0 <= mean <= 1.0
        assert stderr >= 0.0


class TestModelFile:
    def test_save_and_load(self, tmp_path, rng):
        torch.manual_seed(0)
        model = TcnModel(_tiny_config())
        loaded = load_model(save_model(model, tmp_path / "model.pt"))
        assert loaded.config == model.config
        buf = HistoryBuffer.bootstrap(N_BEAMS, 3)
        buf.push_observation(Pose(1.0, 1.0, 0.0), rng.uniform(0.5, 9.0, N_BEAMS))
        ewa = np.zeros(N_BEAMS)
        np.testing.assert_allclose(forward(loaded, buf, ewa), forward(model, buf, ewa))

    def test_shape_manifest_checked(self, tmp_path):
        path = save_model(TcnModel(_tiny_config()), tmp_path / "model.pt")
        archive = torch.load(path, weights_only=True)
        archive["config"] = dataclasses.asdict(_tiny_config(hidden_channels=3))
        torch.save(archive, path)
        with pytest.raises(DomainError):
            load_model(path)
