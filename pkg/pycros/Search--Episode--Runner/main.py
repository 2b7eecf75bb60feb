#!/usr/bin/env python3
from __future__ import annotations

import json
import sys
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from PIL import Image, ImageDraw

SRC_DIR = Path(__file__).resolve().parents[2] / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from app_paths import RUNS_DIR  # noqa: E402
from experiments import trial_start  # noqa: E402
from mapping import SearchMap, export_snapshot, snapshot_image  # noqa: E402
from planner import EpisodeResult, LabelMode, PlannerConfig, UtilityWeights, search_episode  # noqa: E402
from reporting import emit, ensure_unique_path, write_jsonl  # noqa: E402
from scan_classify_gt import ClassifierParams  # noqa: E402
from settings import load_settings  # noqa: E402
from world import LineWorld, MotionSpec, SensorSpec, load_world  # noqa: E402
from world_gen import generate_world  # noqa: E402

try:
    from PIL.ImageQt import ImageQt
    from PySide6.QtCore import Qt, Signal
    from PySide6.QtGui import QPixmap
    from PySide6.QtWidgets import (
        QDoubleSpinBox,
        QFileDialog,
        QGridLayout,
        QHBoxLayout,
        QLabel,
        QSizePolicy,
        QSpinBox,
        QTextEdit,
        QVBoxLayout,
        QWidget,
    )
    from qfluentwidgets import ComboBox, MessageBox, PrimaryPushButton

    GUI_AVAILABLE = True
except ImportError:
    GUI_AVAILABLE = False

PATH_COLOR = (220, 40, 40)
TARGET_COLOR = (30, 170, 60)


@dataclass
class EpisodeOutput:
    world: LineWorld
    result: EpisodeResult
    step_log: Path
    snapshots: list[Path]


def run_episode(
    world_file: str | None,
    archetype: str = "apartment",
    difficulty: str = "easy",
    label_mode: str = "ground_truth",
    seed: int = 0,
    budget: float | None = None,
    model_file: str | None = None,
    out_dir: Path | None = None,
    log_emit: Callable[[str], None] | None = None,
    settings: dict | None = None,
) -> EpisodeOutput:
    settings = settings or load_settings()
    bench = settings["bench"]
    if world_file:
        world = load_world(world_file)
        emit(log_emit, f"World: {Path(world_file).name}")
    else:
        knobs = bench["difficulty_knobs"][archetype][difficulty]
        world = generate_world(archetype, tuple(bench["sizes"][archetype]), float(knobs["object_density"]), seed, knobs["target_half"])
        emit(log_emit, f"World: generated {archetype} ({difficulty}), {len(world.objects)} objects")
    mode = LabelMode(label_mode)
    weights = UtilityWeights.from_settings(settings["planner"])
    model = None
    if mode == LabelMode.LEARNED:
        if not model_file:
            raise ValueError("Learned labels need a trained model file.")
        from scan_classify_learned import load_model

        model = load_model(model_file)
    if budget is None:
        budget = float(bench["budgets"].get(archetype, {}).get(difficulty, 180.0))

    result = search_episode(
        world, SensorSpec.from_settings(settings["sensor"]), weights, mode, budget, seed,
        model=model,
        config=PlannerConfig.from_settings(settings["mapping"], settings["planner"]),
        motion=MotionSpec.from_settings(settings["motion"]),
        gt_params=ClassifierParams.from_settings(settings["ground_truth"]),
        start_pose=trial_start(world, seed),
        log_emit=log_emit,
    )
    out_dir = Path(out_dir) if out_dir else RUNS_DIR / "search"
    step_log = write_jsonl(ensure_unique_path(out_dir / f"episode_{mode.value}_{seed}.jsonl"), result.step_records())
    step_log.with_suffix(".summary.json").write_text(json.dumps(result.summary(), indent=2), encoding="utf-8")
    snapshots = [
        export_snapshot(result.lidar_map, step_log.with_name(step_log.stem + "_lidar"))[0],
        export_snapshot(result.visual_map, step_log.with_name(step_log.stem + "_visual"))[0],
    ]
    return EpisodeOutput(world, result, step_log, snapshots)


def render_episode(smap: SearchMap, world: LineWorld, result: EpisodeResult, scale: int = 3) -> Image.Image:
    """Map snapshot with the executed path and the targets drawn on top."""
    img = snapshot_image(smap).convert("RGB")
    height = img.height
    img = img.resize((img.width * scale, height * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)

    def px(x: float, y: float) -> tuple[float, float]:
        return (
            (x - smap.origin[0]) / smap.resolution * scale,
            (height - (y - smap.origin[1]) / smap.resolution) * scale,
        )

    points = [px(p.x, p.y) for p in result.path]
    if len(points) > 1:
        draw.line(points, fill=PATH_COLOR, width=2)
    for t in world.targets:
        cx, cy = px(t.x, t.y)
        r = max(t.radius / smap.resolution, 2.0) * scale
        draw.ellipse((cx - r, cy - r, cx + r, cy + r), outline=TARGET_COLOR, width=2)
    return img


if GUI_AVAILABLE:
    class MainWidget(QWidget):
        log_message = Signal(str)
        processing_done = Signal(object, str)

        def __init__(self):
            super().__init__()
            self.setObjectName("search_episode_runner_widget")
            self.world_file: str | None = None
            self.model_file: str | None = None
            self._build_ui()
            self._connect_signals()

        def _build_ui(self):
            self.desc_label = QLabel("", self)
            self.desc_label.setWordWrap(True)
            self.desc_label.setSizePolicy(QSizePolicy.Expanding, QSizePolicy.Preferred)
            self.desc_label.setAlignment(Qt.AlignLeft | Qt.AlignTop)
            self.desc_label.setStyleSheet(
                "color: #dcdcdc; background: transparent; padding: 6px; "
                "border: 1px solid #3a3a3a; border-radius: 6px;"
            )
            self._load_long_description()

            self.world_btn = PrimaryPushButton("Select world JSON (optional)", self)
            self.model_btn = PrimaryPushButton("Select model", self)
            self.run_btn = PrimaryPushButton("Run episode", self)

            self.archetype_combo = ComboBox(self)
            self.archetype_combo.addItems(["apartment", "office", "hallway"])
            self.difficulty_combo = ComboBox(self)
            self.difficulty_combo.addItems(["easy", "hard"])
            self.mode_combo = ComboBox(self)
            self.mode_combo.addItems([m.value for m in LabelMode])
            self.seed_spin = QSpinBox(self)
            self.seed_spin.setRange(0, 1_000_000)
            self.budget_spin = QDoubleSpinBox(self)
            self.budget_spin.setRange(10.0, 3600.0)
            self.budget_spin.setValue(180.0)
            self.budget_spin.setSuffix(" s")

            self.selection_label = QLabel("World: generated   Model: none", self)
            self.selection_label.setStyleSheet("color: #dcdcdc; background: transparent; padding-left: 2px;")

            self.lidar_view = QLabel("LiDAR map", self)
            self.visual_view = QLabel("Visual map", self)
            for view in (self.lidar_view, self.visual_view):
                view.setAlignment(Qt.AlignCenter)
                view.setMinimumSize(260, 260)
                view.setStyleSheet("background: #1f1f1f; color: #888; border: 1px solid #3a3a3a; border-radius: 6px;")

            self.log_box = QTextEdit(self)
            self.log_box.setReadOnly(True)
            self.log_box.setPlaceholderText("Live process log will appear here")
            self.log_box.setStyleSheet(
                "QTextEdit{background: #1f1f1f; color: #d0d0d0; "
                "border: 1px solid #3a3a3a; border-radius: 6px;}"
            )

            main_layout = QVBoxLayout(self)
            main_layout.setContentsMargins(16, 16, 16, 16)
            main_layout.setSpacing(12)
            main_layout.addWidget(self.desc_label)

            btn_row = QHBoxLayout()
            btn_row.addStretch(1)
            btn_row.addWidget(self.world_btn)
            btn_row.addWidget(self.model_btn)
            btn_row.addStretch(1)
            main_layout.addLayout(btn_row)
            main_layout.addWidget(self.selection_label)

            grid = QGridLayout()
            grid.setColumnStretch(3, 1)
            for row, (text, widget) in enumerate(
                (("Archetype", self.archetype_combo), ("Difficulty", self.difficulty_combo), ("Labels", self.mode_combo))
            ):
                grid.addWidget(QLabel(text, self), row, 0, Qt.AlignLeft)
                grid.addWidget(widget, row, 1, Qt.AlignLeft)
            grid.addWidget(QLabel("Seed", self), 0, 2, Qt.AlignLeft)
            grid.addWidget(self.seed_spin, 0, 3, Qt.AlignLeft)
            grid.addWidget(QLabel("Budget", self), 1, 2, Qt.AlignLeft)
            grid.addWidget(self.budget_spin, 1, 3, Qt.AlignLeft)
            main_layout.addLayout(grid)

            run_row = QHBoxLayout()
            run_row.addStretch(1)
            run_row.addWidget(self.run_btn)
            run_row.addStretch(1)
            main_layout.addLayout(run_row)

            maps_row = QHBoxLayout()
            maps_row.addWidget(self.lidar_view, 1)
            maps_row.addWidget(self.visual_view, 1)
            main_layout.addLayout(maps_row, 2)
            main_layout.addWidget(self.log_box, 1)

        def _connect_signals(self):
            self.world_btn.clicked.connect(self.select_world)
            self.model_btn.clicked.connect(self.select_model)
            self.run_btn.clicked.connect(self.run_process)
            self.log_message.connect(self.append_log)
            self.processing_done.connect(self.on_processing_done)

        def _load_long_description(self):
            md_path = Path(__file__).with_name("description.md")
            if not md_path.exists():
                return
            body = [ln for ln in md_path.read_text(encoding="utf-8").splitlines() if not ln.startswith(">")]
            self.desc_label.setText("\n".join(body).strip())

        def _refresh_selection(self):
            world = Path(self.world_file).name if self.world_file else "generated"
            model = Path(self.model_file).name if self.model_file else "none"
            self.selection_label.setText(f"World: {world}   Model: {model}")

        def select_world(self):
            path, _ = QFileDialog.getOpenFileName(self, "Select world", str(RUNS_DIR), "World JSON (*.json);;All Files (*)")
            self.world_file = path or None
            self._refresh_selection()

        def select_model(self):
            path, _ = QFileDialog.getOpenFileName(self, "Select model", str(RUNS_DIR), "Model (*.pt);;All Files (*)")
            self.model_file = path or None
            self._refresh_selection()

        def _set_controls_enabled(self, enabled: bool):
            for w in (self.world_btn, self.model_btn, self.run_btn, self.archetype_combo, self.difficulty_combo,
                      self.mode_combo, self.seed_spin, self.budget_spin):
                w.setEnabled(enabled)

        def run_process(self):
            kwargs = dict(
                world_file=self.world_file,
                archetype=self.archetype_combo.currentText(),
                difficulty=self.difficulty_combo.currentText(),
                label_mode=self.mode_combo.currentText(),
                seed=int(self.seed_spin.value()),
                budget=float(self.budget_spin.value()),
                model_file=self.model_file,
            )
            if kwargs["label_mode"] == LabelMode.LEARNED.value and not self.model_file:
                MessageBox("Warning", "Learned labels need a trained model file.", self).exec()
                return
            self.log_box.clear()
            self._set_controls_enabled(False)

            def worker():
                try:
                    out = run_episode(**kwargs, log_emit=self.log_message.emit)
                    self.processing_done.emit(out, "")
                except Exception as e:
                    self.log_message.emit(f"Fatal error: {e}")
                    self.processing_done.emit(None, str(e))

            threading.Thread(target=worker, daemon=True).start()

        def append_log(self, text: str):
            self.log_box.append(text)
            self.log_box.ensureCursorVisible()

        def _show_map(self, view: QLabel, image: Image.Image):
            pixmap = QPixmap.fromImage(ImageQt(image))
            view.setPixmap(pixmap.scaled(view.size(), Qt.KeepAspectRatio, Qt.SmoothTransformation))

        def on_processing_done(self, out, error: str):
            self._set_controls_enabled(True)
            if out is None:
                MessageBox("Episode failed", error, self).exec()
                return
            r = out.result
            self._show_map(self.lidar_view, render_episode(r.lidar_map, out.world, r))
            self._show_map(self.visual_view, render_episode(r.visual_map, out.world, r))
            outcome = f"Target found after {r.detection_time:.1f} s" if r.found else f"Not found ({r.termination.value})"
            self.log_message.emit(outcome)
            self.log_message.emit(f"Step log: {out.step_log}")
            for p in out.snapshots:
                self.log_message.emit(f" - {p}")


def get_widget():
    return MainWidget()
