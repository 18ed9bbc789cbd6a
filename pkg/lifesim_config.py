#!/usr/bin/env python3
"""
lifesim_config.py — Read-only LifeSimConfig shared by the CLI and services.

Reads lifesim-config.json (or the file named by LIFESIM_CONFIG) and turns each
section into the dataclass its module expects:

    humanizer → HumanizerConfig      vision   → ThresholdParams
    geometry  → GeometryRules        agent    → ActionBudget (+ connect timeouts)
    recorder  → RecorderPolicy       canvas   → CanvasParams
    textgen   → TextgenParams        paths / logging → plain values

Environment overrides (a .env file is honoured):
    LIFESIM_CONFIG        path of the JSON file
    LIFESIM_LOG_LEVEL     logging.level
    LIFESIM_TEXTGEN_URL   textgen.remote_url

reload() re-reads the file only when its mtime changed; it is guarded by an
RLock so readers on other threads never see a half-parsed config.  The file is
opened read-only; nothing in this module writes to it.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv

from agent_actions import ActionBudget
from humanizer import HumanizerConfig
from recorder import RecorderPolicy
from scenario_canvas import CanvasParams
from textgen import TextgenParams
from vision import GeometryRules, ThresholdParams

load_dotenv()

logger = logging.getLogger("lifesim.config")

REPO_ROOT = Path(__file__).parent
CONFIG_PATH = Path(os.getenv("LIFESIM_CONFIG", str(REPO_ROOT / "lifesim-config.json")))

SECTIONS = ("humanizer", "vision", "geometry", "agent", "recorder", "canvas", "textgen",
            "paths", "logging")


class LifeSimConfig:
    """
    Thread-safe for concurrent reads; reload() is protected by a lock.
    Missing file or sections fall back to module defaults.
    """

    def __init__(self, path: Path = CONFIG_PATH):
        self._path = Path(path)
        self._lock = threading.RLock()
        self._raw: dict[str, Any] = {}
        self._mtime: float = 0.0
        self.reload()

    # ── Load / reload ─────────────────────────────────────────────────────────

    @property
    def path(self) -> Path:
        return self._path

    def reload(self) -> bool:
        """Re-read the file if it changed since the last load. True when re-loaded."""
        if not self._path.exists():
            logger.warning("config file not found at %s, using defaults", self._path)
            return False
        mtime = self._path.stat().st_mtime
        if mtime == self._mtime:
            return False
        with self._lock:
            try:
                raw = json.loads(self._path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                logger.error("failed to load %s: %s", self._path, exc)
                return False
            self._raw = {k: v for k, v in raw.items() if k in SECTIONS}
            self._mtime = mtime
            logger.debug("config loaded from %s: sections %s", self._path, sorted(self._raw))
            return True

    def section(self, name: str) -> dict:
        with self._lock:
            return dict(self._raw.get(name, {}))

    # ── Typed views ───────────────────────────────────────────────────────────

    @property
    def humanizer(self) -> HumanizerConfig:
        return HumanizerConfig.from_dict(self.section("humanizer"))

    @property
    def vision(self) -> ThresholdParams:
        return ThresholdParams.from_dict(self.section("vision"))

    @property
    def geometry(self) -> GeometryRules:
        return GeometryRules.from_dict(self.section("geometry"))

    @property
    def budget(self) -> ActionBudget:
        return ActionBudget.from_dict(self.section("agent"))

    @property
    def connect_timeout(self) -> float:
        return float(self.section("agent").get("connect_timeout_s", 10.0))

    @property
    def io_timeout(self) -> float:
        return float(self.section("agent").get("io_timeout_s", 10.0))

    @property
    def recorder(self) -> RecorderPolicy:
        return RecorderPolicy.from_dict(self.section("recorder"))

    @property
    def canvas(self) -> CanvasParams:
        return CanvasParams.from_dict(self.section("canvas"))

    @property
    def textgen(self) -> TextgenParams:
        raw = self.section("textgen")
        url = os.getenv("LIFESIM_TEXTGEN_URL")
        if url:
            raw["remote_url"] = url
        return TextgenParams.from_dict(raw)

    def resolve(self, relative: str) -> Path:
        """Paths in the config are relative to the config file."""
        p = Path(relative)
        return p if p.is_absolute() else self._path.parent / p

    def path_for(self, key: str, default: str) -> Path:
        return self.resolve(self.section("paths").get(key, default))

    @property
    def log_level(self) -> str:
        return (os.getenv("LIFESIM_LOG_LEVEL") or self.section("logging").get("level", "INFO")).upper()


# ── Module-level singleton ────────────────────────────────────────────────────
#
#   from lifesim_config import lifesim_cfg

lifesim_cfg = LifeSimConfig()


if __name__ == "__main__":
    print(f"Config: {lifesim_cfg.path}")
    print(f"Humanizer: {lifesim_cfg.humanizer}")
    print(f"Vision: {lifesim_cfg.vision}")
    print(f"Budget: {lifesim_cfg.budget}")
    print(f"Recorder: {lifesim_cfg.recorder}")
    print(f"Canvas: {lifesim_cfg.canvas}")
    print(f"Textgen: {lifesim_cfg.textgen}")
    print(f"Log level: {lifesim_cfg.log_level}")
