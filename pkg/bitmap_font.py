#!/usr/bin/env python3
"""
bitmap_font.py — The 5×7 monospace glyph table used by simdesk and the OCR.

The table lives in font5x7.txt next to this module (see its header for the
format).  Loading enforces the two layout rules OCR depends on:

  * every glyph except space has ink in column 0 (left-aligned cells)
  * every glyph except space has ink in row 6 (shared baseline, no descenders)

and that no two glyphs share a bitmap.  Text advances 6 pixels per
character (5 columns of glyph + 1 column of spacing); characters missing
from the table advance without drawing.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from lifesim_errors import ParseError

FONT_PATH = Path(__file__).parent / "font5x7.txt"

GLYPH_W = 5
GLYPH_H = 7
ADVANCE = GLYPH_W + 1


class BitmapFont:
    def __init__(self, glyphs: dict[str, np.ndarray]):
        self.glyphs = glyphs
        self._by_bits: dict[bytes, str] = {g.tobytes(): ch for ch, g in glyphs.items()}

    @property
    def alphabet(self) -> str:
        return "".join(self.glyphs)

    def glyph(self, ch: str) -> Optional[np.ndarray]:
        return self.glyphs.get(ch)

    def lookup(self, cell: np.ndarray) -> Optional[str]:
        """Exact match of a (7, 5) boolean cell against the table."""
        if cell.shape != (GLYPH_H, GLYPH_W):
            return None
        return self._by_bits.get(np.ascontiguousarray(cell, dtype=bool).tobytes())

    @staticmethod
    def text_width(text: str) -> int:
        return ADVANCE * len(text) - 1 if text else 0

    def rasterize(self, text: str) -> np.ndarray:
        """Boolean ink mask of shape (7, text_width)."""
        mask = np.zeros((GLYPH_H, max(self.text_width(text), 0)), dtype=bool)
        for i, ch in enumerate(text):
            g = self.glyphs.get(ch)
            if g is not None:
                mask[:, i * ADVANCE:i * ADVANCE + GLYPH_W] = g
        return mask

    def draw(self, canvas: np.ndarray, x: int, y: int, text: str,
             colour: tuple[int, int, int],
             clip: Optional[tuple[int, int, int, int]] = None) -> None:
        """
        Paint `text` with its top-left cell corner at (x, y) into an RGBA
        canvas.  `clip` is (x0, y0, x1, y1), exclusive; defaults to the canvas.
        """
        if not text:
            return
        ch_, cw_ = canvas.shape[:2]
        x0, y0, x1, y1 = clip if clip is not None else (0, 0, cw_, ch_)
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, cw_), min(y1, ch_)
        mask = self.rasterize(text)
        mh, mw = mask.shape
        sx0, sy0 = max(x0 - x, 0), max(y0 - y, 0)
        sx1, sy1 = min(x1 - x, mw), min(y1 - y, mh)
        if sx1 <= sx0 or sy1 <= sy0:
            return
        sub = mask[sy0:sy1, sx0:sx1]
        region = canvas[y + sy0:y + sy1, x + sx0:x + sx1]
        region[sub, 0] = colour[0]
        region[sub, 1] = colour[1]
        region[sub, 2] = colour[2]


def parse_font(text: str, source: str = "<font>") -> BitmapFont:
    glyphs: dict[str, np.ndarray] = {}
    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if not line.startswith("char "):
            raise ParseError(f"{source}:{i}: expected 'char X', got {line!r}", path=source)
        name = line[5:].strip()
        ch = " " if name == "space" else name
        if len(ch) != 1:
            raise ParseError(f"{source}:{i}: glyph name {name!r} is not one character", path=source)
        rows = [r.strip() for r in lines[i:i + GLYPH_H]]
        i += GLYPH_H
        if len(rows) != GLYPH_H or any(len(r) != GLYPH_W or set(r) - {".", "#"} for r in rows):
            raise ParseError(f"{source}: glyph {name!r} must be 7 rows of 5 '.'/'#' cells", path=source)
        bits = np.array([[c == "#" for c in r] for r in rows], dtype=bool)
        if ch != " " and not (bits[:, 0].any() and bits[GLYPH_H - 1].any()):
            raise ParseError(f"{source}: glyph {name!r} needs ink in column 0 and row 6", path=source)
        if ch in glyphs:
            raise ParseError(f"{source}: glyph {name!r} defined twice", path=source)
        glyphs[ch] = bits

    seen: dict[bytes, str] = {}
    for ch, bits in glyphs.items():
        key = bits.tobytes()
        if key in seen:
            raise ParseError(f"{source}: glyphs {seen[key]!r} and {ch!r} share a bitmap", path=source)
        seen[key] = ch
    return BitmapFont(glyphs)


def load_font(path: Path = FONT_PATH) -> BitmapFont:
    return parse_font(Path(path).read_text(encoding="utf-8"), str(path))


@lru_cache(maxsize=1)
def default_font() -> BitmapFont:
    return load_font(FONT_PATH)
