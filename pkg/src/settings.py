"""
Configuration layer. Every default lives in settings.json next to this file;
a user file passed with --config is merged over it section by section.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Iterable

from app_paths import SETTINGS_JSON


class SettingsError(ValueError):
    pass


def _read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = json.load(f)
    except json.JSONDecodeError as e:
        raise SettingsError(f"{path.name} is not valid JSON: {e}") from e
    if not isinstance(loaded, dict):
        raise SettingsError(f"{path.name} must hold a JSON object at the top level.")
    return loaded


def default_settings() -> dict:
    return _read_json(SETTINGS_JSON)


def merge_settings(base: dict, override: dict) -> dict:
    """Overlay ``override`` on ``base``; unknown sections or section keys are rejected."""
    merged = copy.deepcopy(base)
    unknown_sections = sorted(set(override) - set(base))
    if unknown_sections:
        raise SettingsError(f"Unknown settings section(s): {', '.join(unknown_sections)}")
    for name, section in override.items():
        if not isinstance(section, dict):
            raise SettingsError(f"Settings section '{name}' must be an object.")
        unknown = sorted(set(section) - set(base[name]))
        if unknown:
            raise SettingsError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
        for key, value in section.items():
            if isinstance(value, dict) and isinstance(merged[name].get(key), dict):
                merged[name][key] = {**merged[name][key], **copy.deepcopy(value)}
            else:
                merged[name][key] = copy.deepcopy(value)
    return merged


def load_settings(path: str | Path | None = None) -> dict:
    settings = default_settings()
    if path:
        user_path = Path(path).expanduser()
        if not user_path.exists():
            raise SettingsError(f"Config file not found: {user_path}")
        settings = merge_settings(settings, _read_json(user_path))
    return settings


def check_keys(section_name: str, section: dict, allowed: Iterable[str]) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise SettingsError(f"Unknown key(s) in section '{section_name}': {', '.join(unknown)}")


def write_station_prefs(updates: dict[str, Any], path: Path = SETTINGS_JSON) -> dict:
    """Read-modify-write of the ``station`` section (desktop preferences)."""
    settings = _read_json(path)
    station = settings.setdefault("station", {})
    station.update(updates)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(settings, f, indent=4)
    return settings
