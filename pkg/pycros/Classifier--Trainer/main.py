#!/usr/bin/env python3
from __future__ import annotations

import dataclasses
import sys
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import pandas as pd

SRC_DIR = Path(__file__).resolve().parents[2] / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from app_paths import RUNS_DIR  # noqa: E402
from experiments import ClassifierReport, build_dataset, dataset_trajectories, dataset_worlds, evaluate_classifier  # noqa: E402
from reporting import emit, ensure_unique_path, write_csv  # noqa: E402
from scan_classify_gt import ClassifierParams  # noqa: E402
from scan_classify_learned import ScanDataset, TcnConfig, TrainConfig, save_model, train  # noqa: E402
from settings import load_settings  # noqa: E402
from world import MotionSpec, SensorSpec  # noqa: E402

try:
    from PySide6.QtCore import Qt, Signal
    from PySide6.QtWidgets import (
        QCheckBox,
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
    from qfluentwidgets import MessageBox, PrimaryPushButton

    GUI_AVAILABLE = True
except ImportError:
    GUI_AVAILABLE = False

HELD_OUT_OFFSET = 500


@dataclass
class TrainerOutput:
    model_path: Path
    curves_path: Path
    report: ClassifierReport | None


def train_and_evaluate(
    dataset_file: str | None = None,
    epochs: int | None = None,
    eval_worlds: int = 0,
    use_label_encoder: bool = True,
    out_dir: Path | None = None,
    log_emit: Callable[[str], None] | None = None,
    settings: dict | None = None,
) -> TrainerOutput:
    """Dataset (loaded or generated), training, then optional scoring on freshly generated worlds."""
    settings = settings or load_settings()
    out_dir = Path(out_dir) if out_dir else RUNS_DIR / "train"
    if dataset_file:
        dataset = ScanDataset.load(dataset_file)
        emit(log_emit, f"Dataset: {Path(dataset_file).name} ({len(dataset)} tuples)")
    else:
        dataset, _ = build_dataset(settings, log_emit=log_emit)
        saved = dataset.save(ensure_unique_path(out_dir / "dataset.npz"))
        emit(log_emit, f"Dataset saved: {saved}")

    config = TrainConfig.from_settings(settings["training"])
    if epochs:
        config = dataclasses.replace(config, epochs=int(epochs))
    model_config = TcnConfig.from_settings(
        settings["model"], n_beams=dataset.n_beams, range_scale=dataset.max_range, use_label_encoder=use_label_encoder
    )
    result = train(dataset, config, model_config, log_emit=log_emit)
    model_path = save_model(result.model, ensure_unique_path(out_dir / "model.pt"))
    curves_path = write_csv(pd.DataFrame([dataclasses.asdict(s) for s in result.history]), out_dir / "training_curves.csv")

    report = None
    if eval_worlds > 0:
        worlds = dataset_worlds(settings, seed_offset=HELD_OUT_OFFSET, count=eval_worlds)
        report = evaluate_classifier(
            result.model, worlds, dataset_trajectories(worlds, settings, seed_offset=HELD_OUT_OFFSET),
            ClassifierParams.from_settings(settings["ground_truth"]),
            SensorSpec.from_settings(settings["sensor"]),
            MotionSpec.from_settings(settings["motion"]),
            seed=int(settings["dataset"]["seed"]) + HELD_OUT_OFFSET,
            log_emit=log_emit,
        )
        write_csv(report.per_world, out_dir / "classifier_eval.csv")
    return TrainerOutput(model_path, curves_path, report)


if GUI_AVAILABLE:
    class MainWidget(QWidget):
        log_message = Signal(str)
        processing_done = Signal(object, str)

        def __init__(self):
            super().__init__()
            self.setObjectName("classifier_trainer_widget")
            self.dataset_file: str | None = None
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

            self.select_btn = PrimaryPushButton("Select dataset (optional)", self)
            self.run_btn = PrimaryPushButton("Train", self)
            self.dataset_label = QLabel("Dataset: generate from settings", self)
            self.dataset_label.setStyleSheet("color: #dcdcdc; background: transparent; padding-left: 2px;")

            self.epochs_spin = QSpinBox(self)
            self.epochs_spin.setRange(1, 500)
            self.epochs_spin.setValue(int(load_settings()["training"]["epochs"]))
            self.eval_spin = QSpinBox(self)
            self.eval_spin.setRange(0, 50)
            self.eval_spin.setValue(2)
            self.encoder_check = QCheckBox("Use label encoder", self)
            self.encoder_check.setChecked(True)

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
            btn_row.addWidget(self.select_btn)
            btn_row.addStretch(1)
            main_layout.addLayout(btn_row)
            main_layout.addWidget(self.dataset_label)

            grid = QGridLayout()
            grid.setColumnStretch(1, 1)
            grid.addWidget(QLabel("Epochs", self), 0, 0, Qt.AlignLeft)
            grid.addWidget(self.epochs_spin, 0, 1, Qt.AlignLeft)
            grid.addWidget(QLabel("Held-out worlds to score", self), 1, 0, Qt.AlignLeft)
            grid.addWidget(self.eval_spin, 1, 1, Qt.AlignLeft)
            grid.addWidget(self.encoder_check, 2, 0, 1, 2, Qt.AlignLeft)
            main_layout.addLayout(grid)

            run_row = QHBoxLayout()
            run_row.addStretch(1)
            run_row.addWidget(self.run_btn)
            run_row.addStretch(1)
            main_layout.addLayout(run_row)
            main_layout.addWidget(self.log_box, 1)

        def _connect_signals(self):
            self.select_btn.clicked.connect(self.select_dataset)
            self.run_btn.clicked.connect(self.run_process)
            self.log_message.connect(self.append_log)
            self.processing_done.connect(self.on_processing_done)

        def _load_long_description(self):
            md_path = Path(__file__).with_name("description.md")
            if not md_path.exists():
                return
            body = [ln for ln in md_path.read_text(encoding="utf-8").splitlines() if not ln.startswith(">")]
            self.desc_label.setText("\n".join(body).strip())

        def select_dataset(self):
            path, _ = QFileDialog.getOpenFileName(self, "Select dataset", str(RUNS_DIR), "Dataset (*.npz);;All Files (*)")
            self.dataset_file = path or None
            name = Path(path).name if path else "generate from settings"
            self.dataset_label.setText(f"Dataset: {name}")

        def _set_controls_enabled(self, enabled: bool):
            for w in (self.select_btn, self.run_btn, self.epochs_spin, self.eval_spin, self.encoder_check):
                w.setEnabled(enabled)

        def run_process(self):
            kwargs = dict(
                dataset_file=self.dataset_file,
                epochs=int(self.epochs_spin.value()),
                eval_worlds=int(self.eval_spin.value()),
                use_label_encoder=self.encoder_check.isChecked(),
            )
            self.log_box.clear()
            self.log_message.emit("Starting training run...")
            self._set_controls_enabled(False)

            def worker():
                try:
                    self.processing_done.emit(train_and_evaluate(**kwargs, log_emit=self.log_message.emit), "")
                except Exception as e:
                    self.log_message.emit(f"Fatal error: {e}")
                    self.processing_done.emit(None, str(e))

            threading.Thread(target=worker, daemon=True).start()

        def append_log(self, text: str):
            self.log_box.append(text)
            self.log_box.ensureCursorVisible()

        def on_processing_done(self, out, error: str):
            self._set_controls_enabled(True)
            if out is None:
                MessageBox("Training failed", error, self).exec()
                return
            lines = [f"Model: {out.model_path.name}", f"Curves: {out.curves_path.name}"]
            if out.report is not None:
                lines.append(f"Held-out accuracy: {out.report.mean * 100:.2f}% +/- {out.report.stderr * 100:.2f}%")
                lines.append(f"Majority baseline: {out.report.majority_baseline * 100:.2f}%")
            for ln in lines:
                self.log_message.emit(ln)
            msg = MessageBox("Training complete", "\n".join(lines), self)
            msg.yesButton.setText("OK")
            msg.cancelButton.hide()
            msg.exec()


def get_widget():
    return MainWidget()
