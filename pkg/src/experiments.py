"""
Experiment orchestration: planner comparison sweeps, classifier ablations and
held-out classifier evaluation. Tables go out as CSV plus a styled workbook.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from planner import LabelMode, PlannerConfig, UtilityWeights, search_episode
from reporting import LogEmit, emit, write_csv, write_workbook
from scan_classify_gt import MAP_LABEL, ClassifierParams, GroundTruthLabeler, Labeler
from scan_classify_learned import (
    LearnedLabeler,
    ScanDataset,
    TcnConfig,
    TcnModel,
    TrainConfig,
    accuracy,
    generate_dataset,
    load_model,
    train,
)
from settings import check_keys
from world import DomainError, LineWorld, MotionSpec, Pose, SensorSpec, load_world, move_robot
from world_gen import generate_world, sample_trajectory

DIFFICULTIES = ("easy", "hard")
ABLATION_KINDS = ("label_encoder", "noise_sweep")


# ===== Comparison sweep =====

@dataclass(frozen=True)
class PlannerVariant:
    name: str
    label_mode: LabelMode
    weights: UtilityWeights = UtilityWeights()


@dataclass(frozen=True)
class WorldCase:
    archetype: str
    index: int
    difficulty: str
    budget: float
    size: tuple = (20.0, 30.0)
    object_density: float = 0.6
    target_half: str = "same"
    world_seed: int = 0
    world_file: str | None = None

    @property
    def label(self) -> str:
        return f"{self.archetype}-{self.index}"

    def build(self) -> LineWorld:
        if self.world_file:
            return load_world(self.world_file)
        return generate_world(self.archetype, self.size, self.object_density, self.world_seed, self.target_half)


@dataclass(frozen=True)
class ExperimentSpec:
    cases: tuple
    planners: tuple
    seeds: tuple
    spec: SensorSpec = SensorSpec()
    motion: MotionSpec = MotionSpec()
    planner_config: PlannerConfig = PlannerConfig()
    gt_params: ClassifierParams = ClassifierParams()
    model_path: str | None = None
    workers: int = 1

    @property
    def n_episodes(self) -> int:
        return len(self.cases) * len(self.planners) * len(self.seeds)


@dataclass(frozen=True)
class TrialRecord:
    planner: str
    archetype: str
    world: str
    difficulty: str
    trial: int
    seed: int
    found: bool
    detection_time: float
    time_charged: float
    budget: float
    termination: str
    plan_steps: int
    error: str = ""


@dataclass(eq=False)
class ResultTable:
    cells: pd.DataFrame
    trials: pd.DataFrame

    def write(self, out_dir: Path) -> list[Path]:
        out_dir = Path(out_dir)
        return [
            write_csv(self.cells, out_dir / "results.csv"),
            write_csv(self.trials, out_dir / "trials.csv"),
            write_workbook({"Cells": self.cells, "Trials": self.trials}, out_dir / "results.xlsx"),
        ]


def spec_from_settings(settings: dict, model_path: str | None = None, world_files: Sequence[str] = ()) -> ExperimentSpec:
    """Sweep over generated worlds (or the given world files) as configured in the ``bench`` section."""
    bench = settings["bench"]
    check_keys(
        "bench", bench,
        ("archetypes", "worlds_per_archetype", "difficulties", "trials", "seed", "workers",
         "planners", "sizes", "budgets", "difficulty_knobs"),
    )
    base_weights = UtilityWeights.from_settings(settings["planner"])
    planners = []
    for entry in bench["planners"]:
        weights = dataclasses.replace(base_weights, **entry.get("weights", {}))
        planners.append(PlannerVariant(entry["name"], LabelMode(entry["label_mode"]), weights))
    seed = int(bench["seed"])
    cases = []
    for difficulty in bench["difficulties"]:
        if difficulty not in DIFFICULTIES:
            raise DomainError(f"unknown difficulty '{difficulty}'")
        if world_files:
            for i, path in enumerate(world_files):
                cases.append(WorldCase("file", i, difficulty, float(bench["budgets"]["apartment"][difficulty]), world_file=str(path)))
            continue
        for a_idx, archetype in enumerate(bench["archetypes"]):
            knobs = bench["difficulty_knobs"][archetype][difficulty]
            for i in range(int(bench["worlds_per_archetype"])):
                cases.append(
                    WorldCase(
                        archetype, i, difficulty,
                        float(bench["budgets"][archetype][difficulty]),
                        tuple(bench["sizes"][archetype]),
                        float(knobs["object_density"]),
                        knobs["target_half"],
                        world_seed=seed * 10_000 + a_idx * 100 + i,
                    )
                )
    seeds = tuple(seed * 1000 + t for t in range(int(bench["trials"])))
    return ExperimentSpec(
        tuple(cases),
        tuple(planners),
        seeds,
        SensorSpec.from_settings(settings["sensor"]),
        MotionSpec.from_settings(settings["motion"]),
        PlannerConfig.from_settings(settings["mapping"], settings["planner"]),
        ClassifierParams.from_settings(settings["ground_truth"]),
        model_path,
        int(bench["workers"]),
    )


_MODEL_CACHE: dict[str, TcnModel] = {}


def _cached_model(path: str | None) -> TcnModel | None:
    if path is None:
        return None
    if path not in _MODEL_CACHE:
        _MODEL_CACHE[path] = load_model(path)
    return _MODEL_CACHE[path]


def trial_start(world: LineWorld, seed: int) -> Pose:
    """The world's start position with a heading drawn from the trial seed."""
    heading = float(np.random.default_rng([seed, 7]).uniform(-math.pi, math.pi))
    return Pose(world.start_pose.x, world.start_pose.y, heading)


def run_trial(job: tuple) -> TrialRecord:
    """One episode; any exception becomes a failed record."""
    variant, case, world, trial, seed, exp = job
    base = dict(
        planner=variant.name, archetype=case.archetype, world=case.label, difficulty=case.difficulty,
        trial=trial, seed=seed, budget=case.budget,
    )
    try:
        if world is None:
            raise DomainError("world could not be generated")
        model = _cached_model(exp.model_path) if variant.label_mode == LabelMode.LEARNED else None
        result = search_episode(
            world, exp.spec, variant.weights, variant.label_mode, case.budget, seed,
            model=model, config=exp.planner_config, motion=exp.motion, gt_params=exp.gt_params,
            start_pose=trial_start(world, seed),
        )
    except Exception as exc:
        return TrialRecord(**base, found=False, detection_time=float("nan"), time_charged=case.budget,
                           termination="error", plan_steps=0, error=f"{type(exc).__name__}: {exc}")
    charged = result.detection_time if result.found else case.budget
    return TrialRecord(
        **base, found=result.found,
        detection_time=result.detection_time if result.found else float("nan"),
        time_charged=float(charged), termination=result.termination.value, plan_steps=len(result.steps),
    )


def aggregate(trials: pd.DataFrame) -> pd.DataFrame:
    """Per (planner, world, difficulty) cell: failures are charged the full budget."""
    keys = ["planner", "archetype", "world", "difficulty"]
    grouped = trials.groupby(keys, sort=False)
    cells = grouped.agg(
        trials=("trial", "count"),
        mean_time=("time_charged", "mean"),
        median_time=("time_charged", "median"),
        success_rate=("found", "mean"),
        budget=("budget", "first"),
        errors=("error", lambda s: int((s != "").sum())),
    ).reset_index()
    cells["success_rate"] = cells["success_rate"] * 100.0
    return cells


def run_experiment(spec: ExperimentSpec, out_dir: Path | None = None, log_emit: LogEmit | None = None) -> ResultTable:
    worlds: dict[WorldCase, LineWorld | None] = {}
    for case in spec.cases:
        try:
            worlds[case] = case.build()
            emit(log_emit, f"[WORLD] {case.label} {case.difficulty}: {len(worlds[case].objects)} objects")
        except Exception as exc:
            worlds[case] = None
            emit(log_emit, f"[FAIL] world {case.label} {case.difficulty}: {exc}")

    jobs = [
        (variant, case, worlds[case], t, seed, spec)
        for case in spec.cases
        for variant in spec.planners
        for t, seed in enumerate(spec.seeds)
    ]
    emit(log_emit, f"[START] {len(jobs)} episodes on {max(spec.workers, 1)} worker(s)")
    records: list[TrialRecord] = []
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            for job, record in zip(jobs, pool.map(run_trial, jobs)):
                records.append(record)
                _log_trial(log_emit, record)
    else:
        for job in jobs:
            record = run_trial(job)
            records.append(record)
            _log_trial(log_emit, record)

    trials = pd.DataFrame([dataclasses.asdict(r) for r in records])
    table = ResultTable(aggregate(trials), trials)
    if out_dir is not None:
        for path in table.write(out_dir):
            emit(log_emit, f"[DONE] wrote {path}")
    return table


def _log_trial(log_emit: LogEmit | None, r: TrialRecord) -> None:
    tag = "[FAIL]" if r.error else "[DONE]"
    outcome = f"found in {r.detection_time:.1f} s" if r.found else f"{r.termination}"
    suffix = f": {r.error}" if r.error else ""
    emit(log_emit, f"{tag} {r.planner} {r.world} {r.difficulty} trial {r.trial}: {outcome}{suffix}")


def compare_planners(cells: pd.DataFrame, informed: str, baseline: str) -> pd.DataFrame:
    """Per archetype and difficulty: median time ratio informed / baseline and success rates."""
    rows = []
    for (archetype, difficulty), group in cells.groupby(["archetype", "difficulty"], sort=False):
        a = group[group["planner"] == informed]
        b = group[group["planner"] == baseline]
        if a.empty or b.empty:
            continue
        rows.append({
            "archetype": archetype,
            "difficulty": difficulty,
            f"{informed}_median": float(a["median_time"].median()),
            f"{baseline}_median": float(b["median_time"].median()),
            "ratio": float(a["median_time"].median() / b["median_time"].median()),
            f"{informed}_success": float(a["success_rate"].mean()),
            f"{baseline}_success": float(b["success_rate"].mean()),
        })
    return pd.DataFrame(rows)


# ===== Datasets and classifier evaluation =====

def dataset_worlds(settings: dict, seed_offset: int = 0, count: int | None = None) -> list[LineWorld]:
    """Training (or, with an offset, held-out) environments cycling through the configured archetypes."""
    ds = settings["dataset"]
    check_keys("dataset", ds, ("worlds", "archetypes", "minutes_per_world", "trajectories_per_world", "object_density", "seed"))
    sizes = settings["bench"]["sizes"]
    n = int(ds["worlds"]) if count is None else count
    worlds = []
    for i in range(n):
        archetype = ds["archetypes"][i % len(ds["archetypes"])]
        worlds.append(generate_world(archetype, tuple(sizes[archetype]), float(ds["object_density"]), int(ds["seed"]) * 1000 + seed_offset + i))
    return worlds


def dataset_trajectories(worlds: Sequence[LineWorld], settings: dict, seed_offset: int = 0) -> list[list[list[Pose]]]:
    ds = settings["dataset"]
    motion = MotionSpec.from_settings(settings["motion"])
    per_world = int(ds["trajectories_per_world"])
    duration = float(ds["minutes_per_world"]) * 60.0 / per_world
    seed = int(ds["seed"])
    return [
        [sample_trajectory(w, duration, seed * 1000 + seed_offset + 17 * w_idx + j, motion) for j in range(per_world)]
        for w_idx, w in enumerate(worlds)
    ]


def build_dataset(settings: dict, log_emit: LogEmit | None = None) -> tuple[ScanDataset, list[LineWorld]]:
    worlds = dataset_worlds(settings)
    emit(log_emit, f"[START] dataset over {len(worlds)} world(s)")
    trajectories = dataset_trajectories(worlds, settings)
    dataset = generate_dataset(
        worlds, trajectories,
        SensorSpec.from_settings(settings["sensor"]),
        ClassifierParams.from_settings(settings["ground_truth"]),
        seed=int(settings["dataset"]["seed"]),
        motion=MotionSpec.from_settings(settings["motion"]),
        log_emit=log_emit,
    )
    emit(log_emit, f"[DONE] dataset: {len(dataset)} tuples, {len(dataset.runs())} runs")
    return dataset, worlds


@dataclass(eq=False)
class ClassifierReport:
    mean: float
    stderr: float
    majority_baseline: float
    per_world: pd.DataFrame


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    stderr = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(np.mean(values)), stderr


def evaluate_labeler(
    make_labeler: Callable[[LineWorld], Labeler],
    worlds: Sequence[LineWorld],
    trajectories: Sequence[Sequence[Sequence[Pose]]],
    gt_params: ClassifierParams = ClassifierParams(),
    spec: SensorSpec = SensorSpec(),
    motion: MotionSpec = MotionSpec(),
    seed: int = 0,
    log_emit: LogEmit | None = None,
) -> ClassifierReport:
    """Per-scan accuracy of any labeler against the ground-truth labels along the given paths."""
    acc, world_ids, map_fraction = [], [], []
    run = 0
    for w_idx, (world, paths) in enumerate(zip(worlds, trajectories)):
        for path in paths:
            traj = move_robot(world, path, spec, motion, rng_seed=seed * 100_003 + run)
            truth = GroundTruthLabeler(world, gt_params)
            labeler = make_labeler(world)
            labeler.reset()
            for pose, scan in traj.samples:
                expected = truth.step(pose, scan)
                acc.append(accuracy(labeler.step(pose, scan), expected))
                map_fraction.append(float(np.mean(expected == MAP_LABEL)))
                world_ids.append(w_idx)
            emit(log_emit, f"[DONE] world {w_idx} run {run}: {len(traj.samples)} scans")
            run += 1
    acc_arr, ids, frac = np.array(acc), np.array(world_ids), np.array(map_fraction)
    if len(acc_arr) == 0:
        raise DomainError("no scans to evaluate")
    majority = frac if frac.mean() >= 0.5 else 1.0 - frac
    rows = []
    for w in np.unique(ids):
        m, s = _mean_stderr(acc_arr[ids == w])
        rows.append({"world": int(w), "scans": int(np.sum(ids == w)), "accuracy": m, "stderr": s,
                     "majority_baseline": float(majority[ids == w].mean())})
    mean, stderr = _mean_stderr(acc_arr)
    return ClassifierReport(mean, stderr, float(majority.mean()), pd.DataFrame(rows))


def evaluate_classifier(
    model: TcnModel,
    worlds: Sequence[LineWorld],
    trajectories: Sequence[Sequence[Sequence[Pose]]],
    gt_params: ClassifierParams = ClassifierParams(),
    spec: SensorSpec = SensorSpec(),
    motion: MotionSpec = MotionSpec(),
    seed: int = 0,
    log_emit: LogEmit | None = None,
) -> ClassifierReport:
    """Auto-regressive inference of ``model`` along held-out trajectories, scored against ground truth."""
    return evaluate_labeler(lambda _world: LearnedLabeler(model), worlds, trajectories, gt_params, spec, motion, seed, log_emit)


# ===== Ablations =====

@dataclass(eq=False)
class AblationResult:
    curves: pd.DataFrame
    final: pd.DataFrame

    def write(self, out_dir: Path) -> list[Path]:
        out_dir = Path(out_dir)
        return [
            write_csv(self.curves, out_dir / "ablation_curves.csv"),
            write_csv(self.final, out_dir / "ablation_final.csv"),
        ]


def ablation_variants(kind: str, train_config: TrainConfig, model_config: TcnConfig, noise_rates: Sequence[float]):
    if kind == "label_encoder":
        return [
            ("with_label_encoder", train_config, dataclasses.replace(model_config, use_label_encoder=True)),
            ("without_label_encoder", train_config, dataclasses.replace(model_config, use_label_encoder=False)),
        ]
    if kind == "noise_sweep":
        return [
            (f"noise_{rate:.2f}", dataclasses.replace(train_config, corruption_rate=float(rate)), model_config)
            for rate in noise_rates
        ]
    raise DomainError(f"unknown ablation '{kind}', expected one of {', '.join(ABLATION_KINDS)}")


def run_ablation(
    kind: str,
    dataset: ScanDataset,
    train_config: TrainConfig = TrainConfig(),
    model_config: TcnConfig | None = None,
    noise_rates: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
    moving_average: int = 5,
    out_dir: Path | None = None,
    log_emit: LogEmit | None = None,
) -> AblationResult:
    """Train every variant with the same seed and report per-epoch and final accuracies."""
    if model_config is None:
        model_config = TcnConfig(n_beams=dataset.n_beams, range_scale=dataset.max_range)
    rows = []
    for name, cfg, mcfg in ablation_variants(kind, train_config, model_config, noise_rates):
        emit(log_emit, f"[START] {name}")
        result = train(dataset, cfg, mcfg, log_emit=log_emit)
        for stats in result.history:
            rows.append({"variant": name, "epoch": stats.epoch, "split": "train", "accuracy": stats.train_accuracy})
            rows.append({"variant": name, "epoch": stats.epoch, "split": "test", "accuracy": stats.test_accuracy})
        emit(log_emit, f"[DONE] {name}: test accuracy {result.history[-1].test_accuracy:.4f}")
    curves = pd.DataFrame(rows)
    curves["accuracy_ma5"] = curves.groupby(["variant", "split"], sort=False)["accuracy"].transform(
        lambda s: s.rolling(moving_average, min_periods=1).mean()
    )
    last = curves[curves["epoch"] == curves["epoch"].max()]
    final = last.pivot(index="variant", columns="split", values="accuracy").reindex(curves["variant"].unique())
    final = final.rename(columns={"train": "train_accuracy", "test": "test_accuracy"}).reset_index()
    final.columns.name = None
    result = AblationResult(curves, final)
    if out_dir is not None:
        for path in result.write(out_dir):
            emit(log_emit, f"[DONE] wrote {path}")
    return result
