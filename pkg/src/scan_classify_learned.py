"""
Map-free per-beam scan classifier.

Three temporal-convolutional encoders read a short history of poses, range
scans and past label estimates; their outputs are combined into one logit per
beam. Labels are produced auto-regressively: at run time the label history
is the model's own previous output.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from reporting import LogEmit, emit
from scan_classify_gt import MAP_LABEL, NON_MAP_LABEL, ClassifierParams, GroundTruthLabeler
from settings import check_keys
from world import DomainError, LineWorld, MotionSpec, Pose, Scan, SensorSpec, move_robot

DATASET_FORMAT_VERSION = 1
MODEL_FORMAT_VERSION = 1


# ===== Dataset =====

@dataclass(frozen=True, eq=False)
class DatasetTuple:
    pose: Pose
    ranges: np.ndarray
    labels: np.ndarray
    run_id: int
    step: int
    world_id: int = 0


@dataclass(eq=False)
class ScanDataset:
    """Column store of dataset tuples, ordered by run and then by step."""

    poses: np.ndarray  # [N, 3]
    ranges: np.ndarray  # [N, n_beams] float32
    labels: np.ndarray  # [N, n_beams] int8
    run_id: np.ndarray
    world_id: np.ndarray
    step: np.ndarray
    scan_rate_hz: float = 5.0
    max_range: float = 10.0

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        self.ranges = np.asarray(self.ranges, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.run_id = np.asarray(self.run_id, dtype=np.int64)
        self.world_id = np.asarray(self.world_id, dtype=np.int64)
        self.step = np.asarray(self.step, dtype=np.int64)
        n = len(self.poses)
        if self.ranges.ndim != 2 or self.labels.shape != self.ranges.shape or len(self.ranges) != n:
            raise DomainError("dataset ranges and labels must both be [N, n_beams]")
        if not (len(self.run_id) == len(self.world_id) == len(self.step) == n):
            raise DomainError("dataset index columns must have one entry per tuple")
        if n and not np.all(np.isin(self.labels, (MAP_LABEL, NON_MAP_LABEL))):
            raise DomainError("dataset labels must be -1 or +1")

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i: int) -> DatasetTuple:
        return DatasetTuple(
            Pose.from_array(self.poses[i]),
            self.ranges[i].astype(float),
            self.labels[i].copy(),
            int(self.run_id[i]),
            int(self.step[i]),
            int(self.world_id[i]),
        )

    def __iter__(self) -> Iterator[DatasetTuple]:
        return (self[i] for i in range(len(self)))

    @property
    def n_beams(self) -> int:
        return self.ranges.shape[1]

    @classmethod
    def from_tuples(cls, tuples: Sequence[DatasetTuple], scan_rate_hz: float = 5.0, max_range: float = 10.0) -> "ScanDataset":
        if not tuples:
            raise DomainError("cannot build a dataset from zero tuples")
        return cls(
            np.array([t.pose.as_array() for t in tuples]),
            np.stack([t.ranges for t in tuples]),
            np.stack([t.labels for t in tuples]),
            np.array([t.run_id for t in tuples]),
            np.array([t.world_id for t in tuples]),
            np.array([t.step for t in tuples]),
            scan_rate_hz,
            max_range,
        )

    def subset(self, mask: np.ndarray) -> "ScanDataset":
        return ScanDataset(
            self.poses[mask], self.ranges[mask], self.labels[mask],
            self.run_id[mask], self.world_id[mask], self.step[mask],
            self.scan_rate_hz, self.max_range,
        )

    def runs(self) -> list[np.ndarray]:
        """Index arrays of the contiguous runs, in storage order."""
        if len(self) == 0:
            return []
        breaks = np.flatnonzero(np.diff(self.run_id) != 0) + 1
        return np.split(np.arange(len(self)), breaks)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            np.savez_compressed(
                f,
                format_version=np.array(DATASET_FORMAT_VERSION),
                n_beams=np.array(self.n_beams),
                scan_rate_hz=np.array(self.scan_rate_hz),
                max_range=np.array(self.max_range),
                poses=self.poses,
                ranges=self.ranges,
                labels=self.labels,
                run_id=self.run_id,
                world_id=self.world_id,
                step=self.step,
            )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ScanDataset":
        with np.load(path) as data:
            version = int(data["format_version"])
            if version != DATASET_FORMAT_VERSION:
                raise DomainError(f"unsupported dataset format version {version}")
            ds = cls(
                data["poses"], data["ranges"], data["labels"],
                data["run_id"], data["world_id"], data["step"],
                float(data["scan_rate_hz"]), float(data["max_range"]),
            )
            if ds.n_beams != int(data["n_beams"]):
                raise DomainError("dataset header n_beams does not match the stored scans")
        return ds


def generate_dataset(
    worlds: Sequence[LineWorld],
    trajectories: Sequence[Sequence[Sequence[Pose]]],
    spec: SensorSpec,
    gt_params: ClassifierParams = ClassifierParams(),
    seed: int = 0,
    motion: MotionSpec = MotionSpec(),
    log_emit: LogEmit | None = None,
) -> ScanDataset:
    """
    Drive every waypoint path of ``trajectories[w]`` through ``worlds[w]``,
    labelling each scan with the ground-truth classifier. One path is one run.
    """
    if len(worlds) != len(trajectories):
        raise DomainError("one list of trajectories is needed per world")
    tuples: list[DatasetTuple] = []
    run_id = 0
    for world_id, (world, paths) in enumerate(zip(worlds, trajectories)):
        for path in paths:
            if len(path) < 2:
                raise DomainError(f"trajectory {run_id} of world {world_id} is empty")
            emit(log_emit, f"[START] world {world_id} run {run_id}")
            traj = move_robot(world, path, spec, motion, rng_seed=seed * 100_003 + run_id)
            if not traj.samples:
                raise DomainError(f"trajectory {run_id} of world {world_id} is empty")
            labeler = GroundTruthLabeler(world, gt_params)
            for pose, scan in traj.samples:
                labels = labeler.step(pose, scan)
                tuples.append(DatasetTuple(pose, scan.ranges.copy(), labels.copy(), run_id, scan.timestamp, world_id))
            emit(log_emit, f"[DONE] world {world_id} run {run_id}: {len(traj.samples)} scans, {traj.elapsed:.1f} s")
            run_id += 1
    return ScanDataset.from_tuples(tuples, spec.scan_rate_hz, spec.lidar_max_range)


# ===== History buffer and label averaging =====

@dataclass(eq=False)
class HistoryBuffer:
    """Sliding windows, columns oldest to newest."""

    poses: np.ndarray  # [3, k]
    ranges: np.ndarray  # [n_beams, k]
    est_labels: np.ndarray  # [n_beams, k - 1]

    @classmethod
    def bootstrap(cls, n_beams: int, k: int) -> "HistoryBuffer":
        if k < 2:
            raise DomainError("history length k must be at least 2")
        return cls(np.zeros((3, k)), np.zeros((n_beams, k)), np.zeros((n_beams, k - 1)))

    @property
    def k(self) -> int:
        return self.poses.shape[1]

    @property
    def n_beams(self) -> int:
        return self.ranges.shape[0]

    def push_observation(self, pose: Pose, ranges: np.ndarray) -> None:
        ranges = np.asarray(ranges, dtype=float)
        if ranges.shape != (self.n_beams,):
            raise DomainError(f"scan has {ranges.shape[0]} beams, buffer expects {self.n_beams}")
        self.poses = np.roll(self.poses, -1, axis=1)
        self.poses[:, -1] = pose.as_array()
        self.ranges = np.roll(self.ranges, -1, axis=1)
        self.ranges[:, -1] = ranges

    def push_labels(self, labels: np.ndarray) -> None:
        self.est_labels = np.roll(self.est_labels, -1, axis=1)
        self.est_labels[:, -1] = labels


def ewa_weights(columns: int, decay: float) -> np.ndarray:
    """Normalized weights decay**age, oldest column first; the newest column has age 0."""
    if columns < 1:
        raise DomainError("EWA needs at least one label column (k >= 2)")
    w = decay ** np.arange(columns - 1, -1, -1, dtype=float)
    return w / w.sum()


def ewa_labels(est_labels: np.ndarray, decay: float = 0.5) -> np.ndarray:
    est_labels = np.asarray(est_labels, dtype=float)
    return est_labels @ ewa_weights(est_labels.shape[-1], decay)


def corrupt_labels(labels: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Flip exactly round(rate * labels-per-sample) entries of each sample [B, ...]."""
    labels = np.asarray(labels)
    flat = labels.reshape(len(labels), -1).copy()
    n_flip = int(round(rate * flat.shape[1]))
    if n_flip > 0:
        keys = rng.random(flat.shape)
        picks = np.argpartition(keys, n_flip - 1, axis=1)[:, :n_flip]
        rows = np.arange(len(flat))[:, None]
        flat[rows, picks] = -flat[rows, picks]
    return flat.reshape(labels.shape)


# ===== Model =====

@dataclass(frozen=True)
class TcnConfig:
    n_beams: int = 897
    k: int = 9
    hidden_channels: int = 8
    pose_scale: float = 20.0
    range_scale: float = 10.0
    ewa_decay: float = 0.5
    use_label_encoder: bool = True

    def __post_init__(self):
        if self.k < 2 or self.n_beams < 1 or self.hidden_channels < 1:
            raise DomainError("k must be >= 2 and n_beams, hidden_channels positive")

    @classmethod
    def from_settings(cls, section: dict, **overrides) -> "TcnConfig":
        check_keys("model", section, ("k", "hidden_channels", "pose_scale", "use_label_encoder"))
        kwargs = {**section, **overrides}
        for key in ("k", "hidden_channels", "n_beams"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        return cls(**kwargs)


class CircularEncoder(nn.Module):
    """[k, k] convolution over (beam, time) with scan-wise circular padding, then a per-beam projection."""

    def __init__(self, k: int, hidden: int):
        super().__init__()
        self.k = k
        self.conv = nn.Conv2d(1, hidden, kernel_size=(k, k))
        self.proj = nn.Linear(hidden, 1)

    def conv_stage(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-activation conv output [B, hidden, n_beams] for input [B, n_beams, k]."""
        left = (self.k - 1) // 2
        right = self.k - 1 - left
        padded = F.pad(x.unsqueeze(1), (0, 0, left, right), mode="circular")
        return self.conv(padded).squeeze(-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.tanh(self.conv_stage(x))
        return torch.tanh(self.proj(h.transpose(1, 2)).squeeze(-1))


class PoseEncoder(nn.Module):
    def __init__(self, k: int, hidden: int, n_beams: int):
        super().__init__()
        self.conv = nn.Conv2d(1, hidden, kernel_size=(1, 3), padding=(0, 1))
        self.proj = nn.Linear(hidden * 3 * k, n_beams)

    def forward(self, poses: torch.Tensor) -> torch.Tensor:
        h = torch.tanh(self.conv(poses.unsqueeze(1)))
        return torch.tanh(self.proj(h.flatten(1)))


class TcnModel(nn.Module):
    def __init__(self, config: TcnConfig = TcnConfig()):
        super().__init__()
        self.config = config
        self.scan_encoder = CircularEncoder(config.k, config.hidden_channels)
        self.label_encoder = CircularEncoder(config.k, config.hidden_channels)
        self.pose_encoder = PoseEncoder(config.k, config.hidden_channels, config.n_beams)

    def normalize(self, poses: torch.Tensor, ranges: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        scale = poses.new_tensor([self.config.pose_scale, self.config.pose_scale, math.pi]).view(1, 3, 1)
        return poses / scale, ranges / self.config.range_scale

    def forward(self, poses: torch.Tensor, ranges: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """poses [B, 3, k], ranges [B, n, k], labels [B, n, k] (k-1 estimates plus their EWA) -> logits [B, n]."""
        poses, ranges = self.normalize(poses, ranges)
        corrected = self.pose_encoder(poses) + self.scan_encoder(ranges)
        if self.config.use_label_encoder:
            gate = self.label_encoder(labels)
        else:
            gate = torch.ones_like(corrected)
        return torch.tanh(corrected * gate)

    def shape_manifest(self) -> dict[str, list[int]]:
        return {name: list(t.shape) for name, t in self.state_dict().items()}


def _check_buffer(model: TcnModel, buffer: HistoryBuffer, ewa: np.ndarray) -> None:
    cfg = model.config
    expected = ((3, cfg.k), (cfg.n_beams, cfg.k), (cfg.n_beams, cfg.k - 1), (cfg.n_beams,))
    actual = (buffer.poses.shape, buffer.ranges.shape, buffer.est_labels.shape, np.shape(ewa))
    if actual != expected:
        raise DomainError(f"history shapes {actual} do not match the model's {expected}")


def label_input(est_labels: np.ndarray, ewa: np.ndarray) -> np.ndarray:
    return np.concatenate((est_labels, ewa[..., None]), axis=-1)


def forward(model: TcnModel, buffer: HistoryBuffer, ewa: np.ndarray) -> np.ndarray:
    """Logits in (-1, 1) for the newest scan of ``buffer``."""
    ewa = np.asarray(ewa, dtype=float)
    _check_buffer(model, buffer, ewa)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        logits = model(
            torch.as_tensor(buffer.poses[None], dtype=dtype),
            torch.as_tensor(buffer.ranges[None], dtype=dtype),
            torch.as_tensor(label_input(buffer.est_labels, ewa)[None], dtype=dtype),
        )
    return logits[0].double().numpy()


def classify_threshold(logits: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(logits) >= 0.0, MAP_LABEL, NON_MAP_LABEL).astype(np.int8)


def infer_step(model: TcnModel, buffer: HistoryBuffer, new_pose: Pose, new_scan: Scan) -> tuple[np.ndarray, HistoryBuffer]:
    buffer.push_observation(new_pose, new_scan.ranges)
    ewa = ewa_labels(buffer.est_labels, model.config.ewa_decay)
    labels = classify_threshold(forward(model, buffer, ewa))
    buffer.push_labels(labels)
    return labels, buffer


def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DomainError(f"label vectors differ in length: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise DomainError("cannot score empty label vectors")
    return float(np.mean(pred == truth))


class LearnedLabeler:
    """Auto-regressive labelling of one run with a trained model."""

    def __init__(self, model: TcnModel):
        self.model = model.eval()
        self.buffer = HistoryBuffer.bootstrap(model.config.n_beams, model.config.k)

    def reset(self) -> None:
        self.buffer = HistoryBuffer.bootstrap(self.model.config.n_beams, self.model.config.k)

    def step(self, pose: Pose, scan: Scan) -> np.ndarray:
        labels, self.buffer = infer_step(self.model, self.buffer, pose, scan)
        return labels


# ===== Training =====

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    corruption_rate: float = 0.10
    ewa_decay: float = 0.5
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if not (0.0 <= self.corruption_rate <= 0.5):
            raise DomainError("corruption_rate must lie in [0, 0.5]")
        if not (0.0 < self.ewa_decay < 1.0):
            raise DomainError("ewa_decay must lie in (0, 1)")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise DomainError("batch_size and learning_rate must be positive")
        if not (0.0 <= self.test_fraction < 1.0):
            raise DomainError("test_fraction must lie in [0, 1)")

    @classmethod
    def from_settings(cls, section: dict) -> "TrainConfig":
        check_keys("training", section, [f.name for f in dataclasses.fields(cls)])
        kwargs = dict(section)
        for key in ("epochs", "batch_size", "seed"):
            if key in kwargs:
                kwargs[key] = int(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float


@dataclass(eq=False)
class TrainResult:
    model: TcnModel
    history: list[EpochStats]
    train_worlds: list[int]
    test_worlds: list[int]


def window_ends(dataset: ScanDataset, k: int) -> np.ndarray:
    """Indices whose k-1 predecessors are the consecutive earlier steps of the same run."""
    if len(dataset) < k:
        return np.zeros(0, dtype=np.int64)
    ends = np.arange(k - 1, len(dataset))
    start = ends - (k - 1)
    same_run = dataset.run_id[ends] == dataset.run_id[start]
    contiguous = (dataset.step[ends] - dataset.step[start]) == (k - 1)
    return ends[same_run & contiguous]


def split_worlds(world_ids: np.ndarray, test_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Held-out split by environment, never by time."""
    worlds = np.unique(world_ids)
    if len(worlds) < 2 or test_fraction <= 0:
        return worlds.tolist(), []
    n_test = min(max(int(round(test_fraction * len(worlds))), 1), len(worlds) - 1)
    order = np.random.default_rng(seed).permutation(worlds)
    return sorted(order[n_test:].tolist()), sorted(order[:n_test].tolist())


def window_batch(
    dataset: ScanDataset, ends: np.ndarray, k: int, corruption_rate: float, decay: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Model inputs for k-windows ending at ``ends``: ground-truth label history, corrupted, plus its EWA."""
    idx = ends[:, None] + np.arange(-(k - 1), 1)[None, :]
    poses = dataset.poses[idx].transpose(0, 2, 1)
    ranges = dataset.ranges[idx].transpose(0, 2, 1).astype(float)
    history = dataset.labels[idx[:, :-1]].transpose(0, 2, 1).astype(float)
    history = corrupt_labels(history, corruption_rate, rng)
    labels = label_input(history, ewa_labels(history, decay))
    return poses, ranges, labels, dataset.labels[ends].astype(float)


def replay_accuracy(model: TcnModel, dataset: ScanDataset) -> np.ndarray:
    """
    Auto-regressive replay of every run from a zero buffer, all runs stepped
    together. Returns the per-tuple accuracy in storage order.
    """
    cfg = model.config
    runs = dataset.runs()
    result = np.zeros(len(dataset))
    if not runs:
        return result
    n_runs, k, n = len(runs), cfg.k, dataset.n_beams
    lengths = np.array([len(r) for r in runs])
    poses = np.zeros((n_runs, 3, k))
    ranges = np.zeros((n_runs, n, k))
    est = np.zeros((n_runs, n, k - 1))
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    for t in range(int(lengths.max())):
        active = np.flatnonzero(lengths > t)
        idx = np.array([runs[r][t] for r in active])
        poses[active] = np.roll(poses[active], -1, axis=2)
        poses[active, :, -1] = dataset.poses[idx]
        ranges[active] = np.roll(ranges[active], -1, axis=2)
        ranges[active, :, -1] = dataset.ranges[idx]
        hist = est[active]
        with torch.no_grad():
            logits = model(
                torch.as_tensor(poses[active], dtype=dtype),
                torch.as_tensor(ranges[active], dtype=dtype),
                torch.as_tensor(label_input(hist, ewa_labels(hist, cfg.ewa_decay)), dtype=dtype),
            ).double().numpy()
        labels = classify_threshold(logits)
        est[active] = np.roll(hist, -1, axis=2)
        est[active, :, -1] = labels
        result[idx] = np.mean(labels == dataset.labels[idx], axis=1)
    model.train(was_training)
    return result


def evaluate_on_dataset(model: TcnModel, dataset: ScanDataset) -> tuple[float, float]:
    """Mean and standard error of the per-scan accuracy over an auto-regressive replay."""
    acc = replay_accuracy(model, dataset)
    if len(acc) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    stderr = float(np.std(acc, ddof=1) / math.sqrt(len(acc))) if len(acc) > 1 else 0.0
    return float(np.mean(acc)), stderr


def train(
    dataset: ScanDataset,
    config: TrainConfig = TrainConfig(),
    model_config: TcnConfig | None = None,
    log_emit: LogEmit | None = None,
) -> TrainResult:
    """SGD on k-windows of the training worlds; held-out accuracy is an auto-regressive replay of the test worlds."""
    if model_config is None:
        model_config = TcnConfig(n_beams=dataset.n_beams, range_scale=dataset.max_range)
    model_config = dataclasses.replace(model_config, ewa_decay=config.ewa_decay)
    if model_config.n_beams != dataset.n_beams:
        raise DomainError(f"model expects {model_config.n_beams} beams, dataset has {dataset.n_beams}")
    k = model_config.k

    train_worlds, test_worlds = split_worlds(dataset.world_id, config.test_fraction, config.seed)
    train_set = dataset.subset(np.isin(dataset.world_id, train_worlds))
    test_set = dataset.subset(np.isin(dataset.world_id, test_worlds)) if test_worlds else None
    ends = window_ends(train_set, k)
    if len(ends) < config.batch_size:
        raise DomainError(f"dataset holds {len(ends)} training windows, fewer than one batch of {config.batch_size}")

    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    model = TcnModel(model_config)
    optimizer = torch.optim.SGD(model.parameters(), lr=config.learning_rate, momentum=config.momentum)
    loss_fn = nn.MSELoss()
    emit(log_emit, f"[START] training on worlds {train_worlds} ({len(ends)} windows), held out {test_worlds}")

    history: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        rng = np.random.default_rng([config.seed, epoch])
        order = ends[torch.randperm(len(ends), generator=generator).numpy()]
        loss_sum, correct, seen = 0.0, 0, 0
        for b in range(0, len(order), config.batch_size):
            batch = order[b : b + config.batch_size]
            poses, ranges, labels, target = window_batch(train_set, batch, k, config.corruption_rate, config.ewa_decay, rng)
            logits = model(
                torch.as_tensor(poses, dtype=torch.float32),
                torch.as_tensor(ranges, dtype=torch.float32),
                torch.as_tensor(labels, dtype=torch.float32),
            )
            target_t = torch.as_tensor(target, dtype=torch.float32)
            loss = loss_fn(logits, target_t)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach()) * len(batch)
            pred = torch.where(logits.detach() >= 0, 1.0, -1.0)
            correct += int((pred == target_t).sum())
            seen += target_t.numel()
        test_acc = float(np.mean(replay_accuracy(model, test_set))) if test_set is not None else float("nan")
        stats = EpochStats(epoch, loss_sum / len(order), correct / seen, test_acc)
        history.append(stats)
        emit(
            log_emit,
            f"[EPOCH {epoch}/{config.epochs}] loss={stats.train_loss:.4f} "
            f"train_acc={stats.train_accuracy:.4f} test_acc={stats.test_accuracy:.4f}",
        )
    emit(log_emit, "[DONE] training")
    model.eval()
    return TrainResult(model, history, train_worlds, test_worlds)


# ===== Model file =====

def save_model(model: TcnModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": MODEL_FORMAT_VERSION,
            "config": dataclasses.asdict(model.config),
            "shapes": model.shape_manifest(),
            "state_dict": model.state_dict(),
        },
        path,
    )
    return path


def load_model(path: str | Path) -> TcnModel:
    archive = torch.load(path, map_location="cpu", weights_only=True)
    if archive.get("format_version") != MODEL_FORMAT_VERSION:
        raise DomainError(f"unsupported model format version {archive.get('format_version')!r}")
    model = TcnModel(TcnConfig(**archive["config"]))
    expected = model.shape_manifest()
    if archive["shapes"] != expected:
        raise DomainError("model file shape manifest does not match its config")
    model.load_state_dict(archive["state_dict"])
    return model.eval()
