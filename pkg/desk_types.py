#!/usr/bin/env python3
"""
desk_types.py — Screen-level value types shared by every layer.

  Rect          axis-aligned pixel rectangle (x, y, w, h)
  Frame         one screen capture: RGBA8 pixels, alpha fixed at 255
  PointerEvent  pointer position + 8-bit button mask
  KeyEvent      X11 keysym + down flag

Frames hold their pixels as a numpy array of shape (height, width, 4), dtype
uint8, row-major, so "pixel count = width × height" holds by construction.
Timestamps (`captured_at`, `at`) are monotonic milliseconds as floats.

Image files (templates, prototypes, keyframes) are decoded and encoded with
OpenCV; any format cv2 reads is accepted (PNG, PPM/PGM/PBM, ...).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import cv2
import numpy as np

from lifesim_errors import LifeSimError

# ─── Constants ────────────────────────────────────────────────────────────────

BUTTON_LEFT   = 0x01
BUTTON_MIDDLE = 0x02
BUTTON_RIGHT  = 0x04
WHEEL_UP      = 0x08
WHEEL_DOWN    = 0x10

BUTTON_BITS: dict[str, int] = {
    "left":   BUTTON_LEFT,
    "middle": BUTTON_MIDDLE,
    "right":  BUTTON_RIGHT,
}


def monotonic_ms() -> float:
    return time.monotonic() * 1000.0


# ─── Geometry ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center(self) -> tuple[int, int]:
        return (self.x + self.w // 2, self.y + self.h // 2)

    def contains(self, px: float, py: float) -> bool:
        return self.x <= px < self.right and self.y <= py < self.bottom

    def inside(self, width: int, height: int) -> bool:
        return (self.w > 0 and self.h > 0 and self.x >= 0 and self.y >= 0
                and self.right <= width and self.bottom <= height)

    def union(self, other: "Rect") -> "Rect":
        x0 = min(self.x, other.x)
        y0 = min(self.y, other.y)
        x1 = max(self.right, other.right)
        y1 = max(self.bottom, other.bottom)
        return Rect(x0, y0, x1 - x0, y1 - y0)

    def shifted(self, dx: int, dy: int) -> "Rect":
        return Rect(self.x + dx, self.y + dy, self.w, self.h)

    def distance_to(self, px: float, py: float) -> float:
        """Euclidean distance from a point to the nearest pixel of the rect (0 inside)."""
        dx = max(self.x - px, 0.0, px - (self.right - 1))
        dy = max(self.y - py, 0.0, py - (self.bottom - 1))
        return float(np.hypot(dx, dy))

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values) -> "Rect":
        x, y, w, h = (int(v) for v in values)
        return cls(x, y, w, h)


# ─── Frames ───────────────────────────────────────────────────────────────────

@dataclass
class Frame:
    """One screen capture. `pixels` is (height, width, 4) uint8 RGBA."""
    width:       int
    height:      int
    pixels:      np.ndarray = field(repr=False)
    captured_at: float = 0.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame dimensions must be positive, got {self.width}x{self.height}")
        if self.pixels.shape != (self.height, self.width, 4) or self.pixels.dtype != np.uint8:
            raise ValueError(
                f"frame pixels must be uint8 ({self.height}, {self.width}, 4), "
                f"got {self.pixels.dtype} {self.pixels.shape}"
            )

    @classmethod
    def from_rgb(cls, rgb: np.ndarray, captured_at: float = 0.0) -> "Frame":
        h, w = rgb.shape[:2]
        px = np.empty((h, w, 4), dtype=np.uint8)
        px[..., :3] = rgb[..., :3]
        px[..., 3] = 255
        return cls(w, h, px, captured_at)

    @classmethod
    def solid(cls, width: int, height: int, rgb: tuple[int, int, int]) -> "Frame":
        px = np.empty((height, width, 4), dtype=np.uint8)
        px[..., 0], px[..., 1], px[..., 2] = rgb
        px[..., 3] = 255
        return cls(width, height, px)

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[..., :3]

    def luma(self) -> np.ndarray:
        return rgb_to_luma(self.pixels)

    def crop(self, rect: Rect) -> "Frame":
        if not rect.inside(self.width, self.height):
            raise ValueError(f"crop {rect} outside {self.width}x{self.height} frame")
        px = self.pixels[rect.y:rect.bottom, rect.x:rect.right].copy()
        return Frame(rect.w, rect.h, px, self.captured_at)

    def same_pixels(self, other: "Frame") -> bool:
        return (self.width == other.width and self.height == other.height
                and bool(np.array_equal(self.pixels, other.pixels)))


def rgb_to_luma(pixels: np.ndarray) -> np.ndarray:
    """Rec.601 luma, integer-rounded: (299 R + 587 G + 114 B + 500) // 1000."""
    p = pixels.astype(np.uint32)
    y = (299 * p[..., 0] + 587 * p[..., 1] + 114 * p[..., 2] + 500) // 1000
    return y.astype(np.uint8)


# ─── Input events ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PointerEvent:
    x:       int
    y:       int
    buttons: int = 0
    at:      float = 0.0

    def as_dict(self) -> dict:
        return {"type": "pointer", "x": self.x, "y": self.y,
                "buttons": self.buttons, "at": self.at}


@dataclass(frozen=True)
class KeyEvent:
    keysym:  int
    pressed: bool
    at:      float = 0.0

    def as_dict(self) -> dict:
        return {"type": "key", "keysym": self.keysym,
                "pressed": self.pressed, "at": self.at}


InputEvent = Union[PointerEvent, KeyEvent]


def event_from_dict(raw: dict) -> InputEvent:
    if raw.get("type") == "pointer":
        return PointerEvent(int(raw["x"]), int(raw["y"]), int(raw.get("buttons", 0)),
                            float(raw.get("at", 0.0)))
    if raw.get("type") == "key":
        return KeyEvent(int(raw["keysym"]), bool(raw["pressed"]), float(raw.get("at", 0.0)))
    raise ValueError(f"unknown event type {raw.get('type')!r}")


# ─── Image files ──────────────────────────────────────────────────────────────

class MissingImage(LifeSimError):
    code = "missing-image"

    def __init__(self, path: Union[str, Path]):
        super().__init__(f"image file not found or unreadable: {path}", path=str(path))
        self.path = str(path)


def load_image(path: Union[str, Path]) -> Frame:
    """Decode any cv2-readable image (grey or colour) into an RGBA Frame."""
    p = Path(path)
    if not p.is_file():
        raise MissingImage(p)
    bgr = cv2.imread(str(p), cv2.IMREAD_COLOR)
    if bgr is None:
        raise MissingImage(p)
    return Frame.from_rgb(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))


def save_image(frame: Frame, path: Union[str, Path]) -> Path:
    """Write a frame losslessly; the format follows the file extension."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    bgr = cv2.cvtColor(np.ascontiguousarray(frame.rgb), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(p), bgr):
        raise OSError(f"could not encode image {p}")
    return p
