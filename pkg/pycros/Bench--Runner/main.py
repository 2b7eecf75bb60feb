#!/usr/bin/env python3
from __future__ import annotations

import dataclasses
import sys
import threading
from pathlib import Path
from typing import Callable

SRC_DIR = Path(__file__).resolve().parents[2] / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from app_paths import RUNS_DIR  # noqa: E402
from experiments import ResultTable, run_experiment, spec_from_settings  # noqa: E402
from planner import LabelMode  # noqa: E402
from reporting import emit  # noqa: E402
from settings import load_settings  # noqa: E402

try:
    from PySide6.QtCore import Qt, Signal
    from PySide6.QtWidgets import (
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


def run_bench(
    world_files: list[str] | None = None,
    model_file: str | None = None,
    trials: int | None = None,
    workers: int | None = None,
    out_dir: Path | None = None,
    log_emit: Callable[[str], None] | None = None,
    settings: dict | None = None,
) -> tuple[ResultTable, Path]:
    settings = settings or load_settings()
    if trials:
        settings["bench"]["trials"] = int(trials)
    if workers:
        settings["bench"]["workers"] = int(workers)
    spec = spec_from_settings(settings, model_path=model_file, world_files=world_files or ())
    if not model_file:
        kept = tuple(p for p in spec.planners if p.label_mode != LabelMode.LEARNED)
        if len(kept) != len(spec.planners):
            emit(log_emit, "[SKIP] no model selected, learned-label planners left out")
        spec = dataclasses.replace(spec, planners=kept)
    out_dir = Path(out_dir) if out_dir else RUNS_DIR / "bench"
    return run_experiment(spec, out_dir, log_emit=log_emit), out_dir


if GUI_AVAILABLE:
    class MainWidget(QWidget):
        log_message = Signal(str)
        processing_done = Signal(object, str)

        def __init__(self):
            super().__init__()
            self.setObjectName("bench_runner_widget")
            self.world_files: list[str] = []
            self.model_file: str | None = None
            self.output_dir: Path = RUNS_DIR / "bench"
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

            self.worlds_btn = PrimaryPushButton("Select world files (optional)", self)
            self.model_btn = PrimaryPushButton("Select model", self)
            self.output_btn = PrimaryPushButton("Output folder", self)
            self.run_btn = PrimaryPushButton("Run bench", self)

            bench = load_settings()["bench"]
            self.trials_spin = QSpinBox(self)
            self.trials_spin.setRange(1, 1000)
            self.trials_spin.setValue(int(bench["trials"]))
            self.workers_spin = QSpinBox(self)
            self.workers_spin.setRange(1, 64)
            self.workers_spin.setValue(max(1, int(bench["workers"])))

            self.files_box = QTextEdit(self)
            self.files_box.setReadOnly(True)
            self.files_box.setPlaceholderText("Worlds are generated from settings unless files are selected")
            self.log_box = QTextEdit(self)
            self.log_box.setReadOnly(True)
            self.log_box.setPlaceholderText("Live process log will appear here")
            for box in (self.files_box, self.log_box):
                box.setStyleSheet(
                    "QTextEdit{background: #1f1f1f; color: #d0d0d0; "
                    "border: 1px solid #3a3a3a; border-radius: 6px;}"
                )

            main_layout = QVBoxLayout(self)
            main_layout.setContentsMargins(16, 16, 16, 16)
            main_layout.setSpacing(12)
            main_layout.addWidget(self.desc_label)

            btn_row = QHBoxLayout()
            btn_row.addStretch(1)
            for b in (self.worlds_btn, self.model_btn, self.output_btn):
                btn_row.addWidget(b)
            btn_row.addStretch(1)
            main_layout.addLayout(btn_row)

            grid = QGridLayout()
            grid.setColumnStretch(1, 1)
            grid.addWidget(QLabel("Trials per cell", self), 0, 0, Qt.AlignLeft)
            grid.addWidget(self.trials_spin, 0, 1, Qt.AlignLeft)
            grid.addWidget(QLabel("Worker processes", self), 1, 0, Qt.AlignLeft)
            grid.addWidget(self.workers_spin, 1, 1, Qt.AlignLeft)
            main_layout.addLayout(grid)

            run_row = QHBoxLayout()
            run_row.addStretch(1)
            run_row.addWidget(self.run_btn)
            run_row.addStretch(1)
            main_layout.addLayout(run_row)

            boxes_row = QHBoxLayout()
            boxes_row.addWidget(self.files_box, 1)
            boxes_row.addWidget(self.log_box, 2)
            main_layout.addLayout(boxes_row, 1)
            self._refresh_files()

        def _connect_signals(self):
            self.worlds_btn.clicked.connect(self.select_worlds)
            self.model_btn.clicked.connect(self.select_model)
            self.output_btn.clicked.connect(self.select_output)
            self.run_btn.clicked.connect(self.run_process)
            self.log_message.connect(self.append_log)
            self.processing_done.connect(self.on_processing_done)

        def _load_long_description(self):
            md_path = Path(__file__).with_name("description.md")
            if not md_path.exists():
                return
            body = [ln for ln in md_path.read_text(encoding="utf-8").splitlines() if not ln.startswith(">")]
            self.desc_label.setText("\n".join(body).strip())

        def _refresh_files(self):
            lines = list(self.world_files) or ["(generated worlds)"]
            lines.append(f"Model: {self.model_file or 'none'}")
            lines.append(f"Output: {self.output_dir}")
            self.files_box.setPlainText("\n".join(lines))

        def select_worlds(self):
            files, _ = QFileDialog.getOpenFileNames(self, "Select world files", str(RUNS_DIR), "World JSON (*.json);;All Files (*)")
            self.world_files = list(files)
            self._refresh_files()

        def select_model(self):
            path, _ = QFileDialog.getOpenFileName(self, "Select model", str(RUNS_DIR), "Model (*.pt);;All Files (*)")
            self.model_file = path or None
            self._refresh_files()

        def select_output(self):
            folder = QFileDialog.getExistingDirectory(self, "Select output folder", str(self.output_dir))
            if folder:
                self.output_dir = Path(folder)
                self._refresh_files()

        def _set_controls_enabled(self, enabled: bool):
            for w in (self.worlds_btn, self.model_btn, self.output_btn, self.run_btn, self.trials_spin, self.workers_spin):
                w.setEnabled(enabled)

        def run_process(self):
            kwargs = dict(
                world_files=list(self.world_files),
                model_file=self.model_file,
                trials=int(self.trials_spin.value()),
                workers=int(self.workers_spin.value()),
                out_dir=self.output_dir,
            )
            self.log_box.clear()
            self._set_controls_enabled(False)

            def worker():
                try:
                    table, out = run_bench(**kwargs, log_emit=self.log_message.emit)
                    self.processing_done.emit(table, str(out))
                except Exception as e:
                    self.log_message.emit(f"Fatal error: {e}")
                    self.processing_done.emit(None, str(e))

            threading.Thread(target=worker, daemon=True).start()

        def append_log(self, text: str):
            self.log_box.append(text)
            self.log_box.ensureCursorVisible()

        def on_processing_done(self, table, detail: str):
            self._set_controls_enabled(True)
            if table is None:
                MessageBox("Bench failed", detail, self).exec()
                return
            errors = int(table.cells["errors"].sum()) if not table.cells.empty else 0
            lines = [f"Cells: {len(table.cells)}", f"Trials: {len(table.trials)}", f"Crashed trials: {errors}", "", f"Output: {detail}"]
            title = "Bench complete" if errors == 0 else "Bench finished with issues"
            msg = MessageBox(title, "\n".join(lines), self)
            msg.yesButton.setText("OK")
            msg.cancelButton.hide()
            msg.exec()


def get_widget():
    return MainWidget()
