#!/usr/bin/env python3
"""
Scout Station: command-line harness and desktop hub for the visual-search
simulator. ``python src/main.py <command> ...`` runs a harness step; no
command (or ``station``) opens the desktop window.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from app_paths import RUNS_DIR
from reporting import emit, ensure_unique_path, write_csv, write_jsonl
from settings import SettingsError, load_settings

try:
    from PySide6.QtGui import QIcon
    from PySide6.QtWidgets import QApplication, QWidget
    from qfluentwidgets import (
        FluentIcon as FIF,
        MessageBox,
        MSFluentWindow,
        NavigationItemPosition,
        Theme,
        setTheme,
    )

    GUI_AVAILABLE = True
except ImportError:
    GUI_AVAILABLE = False

HELD_OUT_OFFSET = 500


def apply_seed(settings: dict, seed: int | None) -> dict:
    """A global --seed overrides every configured seed."""
    if seed is not None:
        for section in ("dataset", "training", "bench"):
            settings[section]["seed"] = int(seed)
    return settings


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out).expanduser() if args.out else RUNS_DIR / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_or_build_dataset(args, settings):
    from experiments import build_dataset
    from scan_classify_learned import ScanDataset

    if args.dataset:
        dataset = ScanDataset.load(args.dataset)
        print(f"Dataset: {args.dataset} ({len(dataset)} tuples)")
        return dataset
    dataset, _ = build_dataset(settings, log_emit=print)
    return dataset


def _model_config(settings, dataset):
    from scan_classify_learned import TcnConfig

    return TcnConfig.from_settings(settings["model"], n_beams=dataset.n_beams, range_scale=dataset.max_range)


# ===== Commands =====

def cmd_gen_world(args, settings) -> int:
    from mapping import export_snapshot
    from world import save_world
    from world_gen import generate_world, truth_map

    size = tuple(args.size) if args.size else tuple(settings["bench"]["sizes"][args.archetype])
    seed = args.seed if args.seed is not None else 0
    world = generate_world(
        args.archetype, size, args.density, seed, args.target_half,
        n_targets=args.targets, loop_prob=args.loop_prob,
    )
    out = _out_dir(args)
    path = save_world(world, ensure_unique_path(out / f"world_{args.archetype}_{seed}.json"))
    print(f"World: {path}")
    print(f"Segments: {len(world.segments)}  Objects: {len(world.objects)}  Targets: {len(world.targets)}")
    if args.snapshot:
        smap = truth_map(world, settings["mapping"]["resolution"], clearance=0.0)
        pgm, _ = export_snapshot(smap, path.with_name(path.stem + "_truth"))
        print(f"Snapshot: {pgm}")
    return 0


def cmd_gen_dataset(args, settings) -> int:
    from experiments import build_dataset

    dataset, _ = build_dataset(settings, log_emit=print)
    path = dataset.save(ensure_unique_path(_out_dir(args) / "dataset.npz"))
    print(f"Dataset: {path}")
    return 0


def cmd_train(args, settings) -> int:
    import pandas as pd

    from scan_classify_learned import TrainConfig, save_model, train

    dataset = _load_or_build_dataset(args, settings)
    config = TrainConfig.from_settings(settings["training"])
    if args.epochs:
        config = dataclasses.replace(config, epochs=args.epochs)
    result = train(dataset, config, _model_config(settings, dataset), log_emit=print)
    out = _out_dir(args)
    model_path = save_model(result.model, ensure_unique_path(out / "model.pt"))
    curves = write_csv(pd.DataFrame([dataclasses.asdict(s) for s in result.history]), out / "training_curves.csv")
    print(f"Model: {model_path}")
    print(f"Curves: {curves}")
    print(f"Held-out worlds: {result.test_worlds}")
    return 0


def cmd_eval_classifier(args, settings) -> int:
    from experiments import dataset_trajectories, dataset_worlds, evaluate_classifier
    from scan_classify_gt import ClassifierParams
    from scan_classify_learned import load_model
    from world import MotionSpec, SensorSpec

    model = load_model(args.model)
    worlds = dataset_worlds(settings, seed_offset=HELD_OUT_OFFSET, count=args.worlds)
    trajectories = dataset_trajectories(worlds, settings, seed_offset=HELD_OUT_OFFSET)
    report = evaluate_classifier(
        model, worlds, trajectories,
        ClassifierParams.from_settings(settings["ground_truth"]),
        SensorSpec.from_settings(settings["sensor"]),
        MotionSpec.from_settings(settings["motion"]),
        seed=int(settings["dataset"]["seed"]) + HELD_OUT_OFFSET,
        log_emit=print,
    )
    path = write_csv(report.per_world, _out_dir(args) / "classifier_eval.csv")
    print(f"Accuracy: {report.mean * 100:.2f}% +/- {report.stderr * 100:.2f}%")
    print(f"Majority-label baseline: {report.majority_baseline * 100:.2f}%")
    print(f"Per-world table: {path}")
    return 0


def cmd_ablate(args, settings) -> int:
    from experiments import run_ablation
    from scan_classify_learned import TrainConfig

    dataset = _load_or_build_dataset(args, settings)
    config = TrainConfig.from_settings(settings["training"])
    if args.epochs:
        config = dataclasses.replace(config, epochs=args.epochs)
    ablation = settings["ablation"]
    result = run_ablation(
        args.kind, dataset, config, _model_config(settings, dataset),
        noise_rates=ablation["noise_rates"], moving_average=int(ablation["moving_average"]),
        out_dir=_out_dir(args), log_emit=print,
    )
    print(result.final.to_string(index=False))
    return 0


def cmd_search(args, settings) -> int:
    from experiments import trial_start
    from mapping import export_snapshot
    from planner import LabelMode, PlannerConfig, UtilityWeights, search_episode
    from scan_classify_gt import ClassifierParams
    from scan_classify_learned import load_model
    from world import MotionSpec, SensorSpec, load_world
    from world_gen import generate_world

    seed = args.seed if args.seed is not None else 0
    if args.world:
        world = load_world(args.world)
    else:
        knobs = settings["bench"]["difficulty_knobs"][args.archetype][args.difficulty]
        world = generate_world(
            args.archetype, tuple(settings["bench"]["sizes"][args.archetype]),
            float(knobs["object_density"]), seed, knobs["target_half"],
        )
    label_mode = LabelMode(args.label_mode)
    weights = UtilityWeights.from_settings(settings["planner"])
    if label_mode == LabelMode.NONE:
        weights = dataclasses.replace(weights, w_nonmap=0.0)
    if label_mode == LabelMode.LEARNED and not args.model:
        raise ValueError("--model is required for --label-mode learned")
    model = load_model(args.model) if label_mode == LabelMode.LEARNED else None
    budget = args.budget if args.budget else float(settings["bench"]["budgets"].get(args.archetype, {}).get(args.difficulty, 180.0))

    result = search_episode(
        world, SensorSpec.from_settings(settings["sensor"]), weights, label_mode, budget, seed,
        model=model,
        config=PlannerConfig.from_settings(settings["mapping"], settings["planner"]),
        motion=MotionSpec.from_settings(settings["motion"]),
        gt_params=ClassifierParams.from_settings(settings["ground_truth"]),
        start_pose=trial_start(world, seed),
        log_emit=print,
    )
    out = _out_dir(args)
    steps = write_jsonl(ensure_unique_path(out / f"episode_{label_mode.value}_{seed}.jsonl"), result.step_records())
    summary_path = steps.with_suffix(".summary.json")
    summary_path.write_text(json.dumps(result.summary(), indent=2), encoding="utf-8")
    lidar_pgm, _ = export_snapshot(result.lidar_map, steps.with_name(steps.stem + "_lidar"))
    visual_pgm, _ = export_snapshot(result.visual_map, steps.with_name(steps.stem + "_visual"))
    outcome = f"found after {result.detection_time:.1f} s" if result.found else f"not found ({result.termination.value})"
    print(f"Outcome: {outcome}")
    print(f"Step log: {steps}")
    print(f"Maps: {lidar_pgm}, {visual_pgm}")
    return 0


def cmd_bench(args, settings) -> int:
    from experiments import compare_planners, run_experiment, spec_from_settings

    if args.trials:
        settings["bench"]["trials"] = args.trials
    if args.workers:
        settings["bench"]["workers"] = args.workers
    spec = spec_from_settings(settings, model_path=args.model, world_files=args.worlds or ())
    if args.model is None:
        dropped = [p.name for p in spec.planners if p.label_mode.value == "learned"]
        if dropped:
            emit(print, f"[SKIP] no --model given, leaving out {', '.join(dropped)}")
            spec = dataclasses.replace(spec, planners=tuple(p for p in spec.planners if p.name not in dropped))
    out = _out_dir(args)
    emit(print, f"[START] bench: {spec.n_episodes} episodes")
    table = run_experiment(spec, out, log_emit=print)
    names = [p.name for p in spec.planners]
    baseline = next((p.name for p in spec.planners if p.label_mode.value == "none"), None)
    if baseline is not None:
        for informed in names:
            if informed == baseline:
                continue
            cmp = compare_planners(table.cells, informed, baseline)
            if not cmp.empty:
                path = write_csv(cmp, out / f"compare_{informed}_vs_{baseline}.csv")
                print(cmp.to_string(index=False))
                print(f"Comparison: {path}")
    return 0


def cmd_station(args, settings) -> int:
    if not GUI_AVAILABLE:
        raise RuntimeError("the desktop station needs PySide6 and PySide6-Fluent-Widgets")
    return run_station()


HANDLERS = {
    "gen-world": cmd_gen_world,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval-classifier": cmd_eval_classifier,
    "ablate": cmd_ablate,
    "search": cmd_search,
    "bench": cmd_bench,
    "station": cmd_station,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Indoor visual-search simulator: worlds, scan classifiers, the search planner and experiments."
    )
    parser.add_argument("--config", help="JSON file merged over the default settings.")
    parser.add_argument("--seed", type=int, help="Overrides every configured seed.")
    parser.add_argument("--out", help="Output folder. Defaults to runs/<command>.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-world", help="Generate one world and save it as JSON.")
    p.add_argument("--archetype", choices=("apartment", "office", "hallway"), default="apartment")
    p.add_argument("--size", type=float, nargs=2, metavar=("W", "H"), help="Meters; defaults to the bench size.")
    p.add_argument("--density", type=float, default=0.6, help="Furniture objects per 10 m^2 of floor.")
    p.add_argument("--target-half", choices=("same", "opposite"), default="same")
    p.add_argument("--targets", type=int, default=1)
    p.add_argument("--loop-prob", type=float, default=0.3)
    p.add_argument("--snapshot", action="store_true", help="Also write the true occupancy as PGM.")

    sub.add_parser("gen-dataset", help="Generate a labelled scan dataset.")

    for name, help_text in (("train", "Train the learned scan classifier."), ("ablate", "Run a classifier ablation.")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--dataset", help="Dataset .npz; generated from settings when omitted.")
        p.add_argument("--epochs", type=int)
        if name == "ablate":
            p.add_argument("--kind", choices=("label_encoder", "noise_sweep"), default="label_encoder")

    p = sub.add_parser("eval-classifier", help="Score a trained model on unseen worlds.")
    p.add_argument("--model", required=True)
    p.add_argument("--worlds", type=int, default=4, help="Number of held-out worlds.")

    p = sub.add_parser("search", help="Run a single search episode.")
    p.add_argument("--world", help="World JSON; generated when omitted.")
    p.add_argument("--archetype", choices=("apartment", "office", "hallway"), default="apartment")
    p.add_argument("--difficulty", choices=("easy", "hard"), default="easy")
    p.add_argument("--label-mode", choices=("ground_truth", "learned", "none"), default="ground_truth")
    p.add_argument("--budget", type=float, help="Seconds; defaults to the bench budget.")
    p.add_argument("--model", help="Model file for --label-mode learned.")

    p = sub.add_parser("bench", help="Planner comparison sweep.")
    p.add_argument("--model", help="Model file for learned-label planners.")
    p.add_argument("--worlds", nargs="*", help="World JSON files instead of generated worlds.")
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)

    sub.add_parser("station", help="Open the desktop station.")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.command = args.command or "station"
    try:
        settings = apply_seed(load_settings(args.config), args.seed)
        return HANDLERS[args.command](args, settings)
    except (SettingsError, ValueError, OSError, RuntimeError) as e:
        print(f"Error: {e}")
        return 1


# ===== Desktop station =====

if GUI_AVAILABLE:
    from PycroGrid import PycroGrid

    class Window(MSFluentWindow):
        def __init__(self):
            super().__init__()
            setTheme(Theme.DARK)
            self.tool_pages: dict[str, QWidget] = {}

            self.hubGrid = PycroGrid(self)
            self.hubGrid.setObjectName("homeInterface")
            self.hubGrid.launched.connect(self.addToolPage)

            self.initNavigation()
            self.initWindow()

        def initNavigation(self):
            self.addSubInterface(self.hubGrid, FIF.APPLICATION, "Hub", FIF.APPLICATION, NavigationItemPosition.TOP)
            self.navigationInterface.addItem(
                routeKey="Help",
                icon=FIF.INFO,
                text="About",
                onClick=self.showMessageBox,
                selectable=False,
                position=NavigationItemPosition.BOTTOM,
            )
            self.navigationInterface.setCurrentItem(self.hubGrid.objectName())

        def initWindow(self):
            self.resize(1100, 760)
            self.setWindowIcon(QIcon(FIF.SEARCH.path()))
            self.setWindowTitle("Scout Station")
            screen = QApplication.primaryScreen()
            if screen is not None:
                geo = screen.availableGeometry()
                self.move(geo.width() // 2 - self.width() // 2, geo.height() // 2 - self.height() // 2)

        def addToolPage(self, route_key: str, text: str, page: QWidget):
            """Show a launched pycro; relaunching replaces its page with a fresh one."""
            old = self.tool_pages.pop(route_key, None)
            if old is not None:
                self.navigationInterface.removeWidget(route_key)
                self.stackedWidget.removeWidget(old)
                old.deleteLater()
            page.setObjectName(route_key)
            self.tool_pages[route_key] = page
            self.addSubInterface(page, FIF.ROBOT, text, FIF.ROBOT, NavigationItemPosition.SCROLL)
            self.switchTo(page)

        def showMessageBox(self):
            w = MessageBox(
                "Scout Station",
                "Simulated indoor visual search: LiDAR and camera mapping, scan classification "
                "and a frontier planner that favours unexplained, non-permanent objects.",
                self,
            )
            w.yesButton.setText("OK")
            w.cancelButton.hide()
            w.exec()


def run_station() -> int:
    app = QApplication.instance() or QApplication(sys.argv[:1])
    app.setApplicationName("Scout Station")
    app.setApplicationDisplayName("Scout Station")
    app.setOrganizationName("ScoutStation")
    w = Window()
    w.show()
    return app.exec()


if __name__ == "__main__":
    sys.exit(main())
