from __future__ import annotations

import importlib.util
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from app_paths import PYCROS_DIR, SETTINGS_JSON
from settings import default_settings, write_station_prefs

try:
    from PySide6.QtCore import QFileSystemWatcher, Qt, QTimer, Signal
    from PySide6.QtWidgets import (
        QFrame,
        QGridLayout,
        QHBoxLayout,
        QLabel,
        QScrollArea,
        QSizePolicy,
        QTextBrowser,
        QVBoxLayout,
        QWidget,
    )
    from qfluentwidgets import LineEdit, MessageBox, PrimaryPushButton, isDarkTheme

    GUI_AVAILABLE = True
except ImportError:
    GUI_AVAILABLE = False

RECENT_LIMIT = 50


@dataclass
class PycroInfo:
    name: str
    display_name: str
    folder: Path
    main_py: Path
    requirements: Path | None
    short_desc: str = ""
    long_desc: str = ""
    info_lines: list[str] = field(default_factory=list)

    @property
    def has_python(self) -> bool:
        return self.main_py.is_file()


def parse_description(path: Path) -> tuple[str, str, list[str]]:
    """Split description.md into the quoted summary, the body and the ``> [!info]`` block lines."""
    short_lines: list[str] = []
    info_lines: list[str] = []
    long_lines: list[str] = []
    if not path.is_file():
        return "", "", []
    info_mode = False
    for raw in path.read_text(encoding="utf-8").splitlines():
        s = raw.rstrip()
        if s.strip().lower().startswith("> [!info]"):
            info_mode = True
            continue
        if s.startswith(">"):
            content = s.lstrip("> ").strip()
            if info_mode:
                info_lines.append(content)
            else:
                short_lines.append(content)
        else:
            info_mode = False
            long_lines.append(s)
    short_desc = "\n".join(ln for ln in short_lines if ln).strip()
    return short_desc, "\n".join(long_lines).strip(), info_lines


def scan_pycros(root: Path = PYCROS_DIR) -> list[PycroInfo]:
    infos = []
    if not root.is_dir():
        return infos
    for folder in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(("_", "."))):
        short_desc, long_desc, info_lines = parse_description(folder / "description.md")
        req = folder / "requirements.txt"
        infos.append(
            PycroInfo(
                name=folder.name,
                display_name=folder.name.replace("--", " "),
                folder=folder,
                main_py=folder / "main.py",
                requirements=req if req.is_file() else None,
                short_desc=short_desc,
                long_desc=long_desc,
                info_lines=info_lines,
            )
        )
    return infos


def sort_recent(infos: list[PycroInfo], recent: list[str]) -> list[PycroInfo]:
    """Recently launched first, the rest alphabetically."""
    order = {name: i for i, name in reversed(list(enumerate(recent)))}
    return sorted(infos, key=lambda i: (order.get(i.name, 10**9), i.display_name.lower()))


def record_launch(name: str, recent: list[str], path: Path = SETTINGS_JSON) -> list[str]:
    updated = [name] + [x for x in recent if x != name]
    updated = updated[:RECENT_LIMIT]
    write_station_prefs({"recently_launched": updated}, path)
    return updated


def load_pycro_module(info: PycroInfo) -> Any | None:
    """Import a pycro's main.py fresh, so edits show up on the next launch."""
    if not info.has_python:
        return None
    module_name = f"pycro_{re.sub(r'[^A-Za-z0-9_]', '_', info.name)}"
    sys.modules.pop(module_name, None)
    spec = importlib.util.spec_from_file_location(module_name, info.main_py)
    if spec is None or spec.loader is None:
        return None
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    spec.loader.exec_module(module)
    return module


if GUI_AVAILABLE:

    def _load_pycro_widget(info: PycroInfo) -> QWidget | None:
        try:
            module = load_pycro_module(info)
        except Exception as e:
            print(f"Failed to import '{info.name}': {e}")
            return None
        if module is None:
            return None
        factory = getattr(module, "get_widget", None) or getattr(module, "MainWidget", None)
        if not callable(factory):
            return None
        try:
            w = factory()
        except Exception as e:
            print(f"Failed to build '{info.name}': {e}")
            return None
        return w if isinstance(w, QWidget) else None

    class PycroGrid(QScrollArea):
        """Scrollable grid of pycro cards; launching one hands its widget to the window."""

        launched = Signal(str, str, QWidget)

        def __init__(self, parent=None, root: Path = PYCROS_DIR):
            super().__init__(parent)
            self._root = root
            try:
                self._recent = list(default_settings().get("station", {}).get("recently_launched", []))
            except Exception:
                self._recent = []
            self._all_infos: list[PycroInfo] = []
            self._cards: list[PycroCard] = []

            self.setWidgetResizable(True)
            self.setFrameShape(QFrame.NoFrame)
            self.setStyleSheet("QScrollArea{background: transparent; border: none;}")
            self.viewport().setStyleSheet("background: transparent;")

            self._content = QWidget(self)
            self._content.setStyleSheet("background: transparent;")
            layout = QVBoxLayout(self._content)
            layout.setContentsMargins(0, 0, 0, 0)
            layout.setSpacing(8)

            search_row = QHBoxLayout()
            search_row.setContentsMargins(12, 12, 12, 0)
            self._search_field = LineEdit(self._content)
            self._search_field.setPlaceholderText("Search pycros...")
            self._search_field.textChanged.connect(lambda _: self._apply_filter())
            search_row.addWidget(self._search_field)
            layout.addLayout(search_row)

            self._grid_host = QWidget(self._content)
            self._grid = QGridLayout(self._grid_host)
            self._grid.setContentsMargins(12, 12, 12, 12)
            self._grid.setSpacing(12)
            layout.addWidget(self._grid_host, 1)
            self.setWidget(self._content)

            self._empty_label = QLabel("Pycros will appear here", self._content)
            self._empty_label.setAlignment(Qt.AlignCenter)
            self._empty_label.setStyleSheet("color: #aaa; font-size: 14px;")

            self._watcher = QFileSystemWatcher(self)
            if self._root.is_dir():
                self._watcher.addPath(os.fspath(self._root))
            self._debounce_timer = QTimer(self)
            self._debounce_timer.setSingleShot(True)
            self._debounce_timer.setInterval(250)
            self._debounce_timer.timeout.connect(self.refresh)
            self._watcher.directoryChanged.connect(lambda _: self._debounce_timer.start())

            QTimer.singleShot(0, self.refresh)

        def refresh(self):
            self._all_infos = scan_pycros(self._root)
            self._apply_filter()

        def _apply_filter(self):
            query = (self._search_field.text() or "").strip().lower()
            infos = [
                i for i in self._all_infos
                if not query or query in i.display_name.lower() or query in i.short_desc.lower()
            ]
            self._rebuild(sort_recent(infos, self._recent))

        def _rebuild(self, infos: list[PycroInfo]):
            for card in self._cards:
                self._grid.removeWidget(card)
                card.deleteLater()
            self._cards = [PycroCard(info, self) for info in infos]
            while self._grid.count():
                self._grid.takeAt(0)
            if not self._cards:
                self._empty_label.show()
                self._grid.addWidget(self._empty_label, 0, 0)
                return
            self._empty_label.hide()
            columns = max(1, (self.viewport().width() - 24) // 312)
            for n, card in enumerate(self._cards):
                self._grid.addWidget(card, n // columns, n % columns)
            self._grid.setRowStretch(len(self._cards) // columns + 1, 1)
            self._grid.setColumnStretch(columns, 1)

        def resizeEvent(self, event):
            super().resizeEvent(event)
            if self._cards:
                QTimer.singleShot(0, self._apply_filter)

        def launch(self, info: PycroInfo):
            page = _load_pycro_widget(info)
            if page is None:
                MessageBox("Launch failed", f"Could not load {info.display_name} (missing MainWidget/get_widget).", self).exec()
                return
            try:
                self._recent = record_launch(info.name, self._recent)
            except Exception as e:
                print(f"Could not save launch history: {e}")
            self.launched.emit(info.name, info.display_name, page)

    class PycroCard(QWidget):
        def __init__(self, info: PycroInfo, grid: PycroGrid):
            super().__init__(grid)
            self.info = info
            self.setObjectName(f"card__{re.sub(r'[^A-Za-z0-9_]', '_', info.name)}")
            self.setAttribute(Qt.WA_StyledBackground, True)
            self.setSizePolicy(QSizePolicy.Fixed, QSizePolicy.Fixed)
            self.setMinimumSize(280, 200)
            self.setMaximumSize(300, 240)
            bg = "#242424" if isDarkTheme() else "#F2F2F2"
            border = "rgba(255,255,255,0.08)" if isDarkTheme() else "rgba(0,0,0,0.08)"
            self.setStyleSheet(
                f"QWidget#{self.objectName()}{{background-color:{bg}; border:1px solid {border}; border-radius:8px;}}"
            )

            v = QVBoxLayout(self)
            v.setContentsMargins(12, 12, 12, 12)
            v.setSpacing(8)
            title = QLabel(info.display_name, self)
            title.setWordWrap(True)
            title.setStyleSheet(
                f"background: transparent; border: none; color: {'#fff' if isDarkTheme() else '#111'}; font-size:16px; font-weight:600;"
            )
            if info.info_lines:
                title.setToolTip("\n".join(info.info_lines))
            v.addWidget(title)

            desc = QTextBrowser(self)
            desc.setPlainText(info.short_desc)
            desc.setMaximumHeight(90)
            desc.setFrameStyle(QFrame.NoFrame)
            desc.setStyleSheet(
                f"QTextBrowser{{background: transparent; border: none; color: {'#bbb' if isDarkTheme() else '#444'}; font-size:12px;}}"
            )
            v.addWidget(desc)
            v.addStretch(1)

            self.launch_btn = PrimaryPushButton("Launch", self)
            self.launch_btn.setFixedSize(90, 28)
            self.launch_btn.setCursor(Qt.PointingHandCursor)
            self.launch_btn.clicked.connect(lambda: grid.launch(self.info))
            self.launch_btn.setVisible(info.has_python)
            h = QHBoxLayout()
            h.addWidget(self.launch_btn)
            h.addStretch(1)
            v.addLayout(h)
