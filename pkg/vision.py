#!/usr/bin/env python3
"""
vision.py — Screen understanding for the agent, inside a human reaction budget.

Three independent techniques, all deterministic and all working on luma:

  1. Template matching      zncc_map / match_template
       zero-mean normalized cross-correlation at every offset; cross term by
       FFT, window statistics by summed-area tables, exact integer arithmetic
       up to the final division.  Flat templates fall back to 1 − MAD/255.

  2. Zone detection          detect_zones
       adaptive_threshold  →  connected_components (8-connected)
                           →  merge_text_runs (glyphs into words)
                           →  GeometryRules (icon / button / text-line)
                           →  ZoneClassifier (confidence, may relabel "unknown")
                           →  drop confidence < 0.5

  3. Text                    ocr_line / ocr_text / find_links
       exact cell matching against the 5×7 bitmap font; links are found by
       colour mask and read with the same cell matcher.

Everything is a pure function of its inputs; a classifier model is read-only
after load, so frames can be analysed in parallel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import cv2
import numpy as np

from bitmap_font import ADVANCE, GLYPH_H, GLYPH_W, BitmapFont, default_font
from desk_types import Frame, Rect, rgb_to_luma
from lifesim_errors import LifeSimError

if TYPE_CHECKING:
    from zone_classifier import ZoneClassifier

logger = logging.getLogger("lifesim.vision")

GrayImage = np.ndarray      # (height, width) uint8 luma

ZONE_KINDS = ("icon", "button", "text-line", "window", "unknown")


class TemplateLargerThanFrame(LifeSimError):
    code = "template-larger-than-frame"

    def __init__(self, template: tuple[int, int], frame: tuple[int, int]):
        super().__init__(f"template {template[0]}x{template[1]} larger than frame "
                         f"{frame[0]}x{frame[1]}", template=list(template), frame=list(frame))


# ─── Parameters ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ThresholdParams:
    radius:           int = 7
    offset:           int = 10       # C
    merge_gap:        int = 4
    merge_overlap:    float = 0.5
    merge_max_height: int = 32
    min_confidence:   float = 0.5
    ink_delta:        int = 24
    link_tolerance:   int = 16
    link_min_height:  int = 5

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "ThresholdParams":
        raw = dict(raw or {})
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown vision fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class SizeRule:
    kind:       str
    min_aspect: float
    max_aspect: float
    min_w:      int
    max_w:      int
    min_h:      int
    max_h:      int
    min_fill:   float = 0.0

    def matches(self, w: int, h: int, fill: float) -> bool:
        aspect = w / h
        return (self.min_aspect <= aspect <= self.max_aspect
                and self.min_w <= w <= self.max_w
                and self.min_h <= h <= self.max_h
                and fill >= self.min_fill)


_UNBOUNDED = 1 << 30


@dataclass(frozen=True)
class GeometryRules:
    """Per-kind size predicates, evaluated in order; the first match wins."""
    rules: tuple[SizeRule, ...] = (
        SizeRule("icon",      0.75, 1.33, 12, 128, 12, 128),
        SizeRule("button",    1.5,  12.0, 1, _UNBOUNDED, 16, 64),
        SizeRule("text-line", 3.0,  float("inf"), 1, _UNBOUNDED, 6, 32),
    )

    def candidate_kind(self, w: int, h: int, fill: float = 1.0) -> Optional[str]:
        if w <= 0 or h <= 0:
            return None
        for rule in self.rules:
            if rule.matches(w, h, fill):
                return rule.kind
        return None

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "GeometryRules":
        """{"icon": {"min_aspect": ..}, ...} overrides individual bounds, keeping order."""
        if not raw:
            return cls()
        out = []
        for rule in cls().rules:
            over = dict(raw.get(rule.kind, {}))
            bad = set(over) - {f.name for f in fields(SizeRule)} - {"kind"}
            if bad:
                raise ValueError(f"unknown geometry fields for {rule.kind}: {sorted(bad)}")
            out.append(SizeRule(**{**rule.__dict__, **over}))
        return cls(tuple(out))


# ─── Result types ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Component:
    rect:  Rect
    count: int


@dataclass(frozen=True)
class Match:
    rect:  Rect
    score: float


@dataclass(frozen=True)
class ZoneOfInterest:
    rect:       Rect
    kind:       str
    confidence: float

    def as_dict(self) -> dict:
        return {"rect": self.rect.as_list(), "kind": self.kind,
                "confidence": round(float(self.confidence), 6)}

    @classmethod
    def from_dict(cls, raw: dict) -> "ZoneOfInterest":
        kind = str(raw["kind"])
        if kind not in ZONE_KINDS:
            raise ValueError(f"unknown zone kind {kind!r}")
        conf = float(raw["confidence"])
        if not 0.0 <= conf <= 1.0:
            raise ValueError(f"zone confidence {conf} outside [0, 1]")
        return cls(Rect.from_list(raw["rect"]), kind, conf)


@dataclass(frozen=True)
class Link:
    rect: Rect
    text: str

    def as_dict(self) -> dict:
        return {"rect": self.rect.as_list(), "text": self.text}


# ─── Luma and summed-area tables ──────────────────────────────────────────────

def to_gray(image: Union[Frame, np.ndarray]) -> GrayImage:
    if isinstance(image, Frame):
        return image.luma()
    arr = np.asarray(image)
    if arr.ndim == 2:
        return arr.astype(np.uint8, copy=False)
    return rgb_to_luma(arr)


def _sat(values: np.ndarray) -> np.ndarray:
    """Summed-area table with a zero first row/column, int64."""
    h, w = values.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = values.astype(np.int64).cumsum(axis=0).cumsum(axis=1)
    return sat


def _box(sat: np.ndarray, y0, y1, x0, x1) -> np.ndarray:
    return sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]


# ─── Adaptive threshold ───────────────────────────────────────────────────────

def adaptive_threshold(img: GrayImage, radius: int = 7, offset: int = 10) -> np.ndarray:
    """
    Foreground iff intensity < mean of the (2r+1)² window − offset, the window
    clamped to the image.  Compared as v·n < sum − offset·n so it stays exact.
    """
    if radius < 1:
        raise ValueError(f"threshold radius must be ≥ 1, got {radius}")
    img = to_gray(img)
    h, w = img.shape
    if h == 0 or w == 0:
        return np.zeros((h, w), dtype=bool)
    sat = _sat(img)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - radius, 0, h)[:, None]
    y1 = np.clip(ys + radius + 1, 0, h)[:, None]
    x0 = np.clip(xs - radius, 0, w)[None, :]
    x1 = np.clip(xs + radius + 1, 0, w)[None, :]
    total = _box(sat, y0, y1, x0, x1)
    n = (y1 - y0) * (x1 - x0)
    return img.astype(np.int64) * n < total - offset * n


# ─── Connected components ─────────────────────────────────────────────────────

def connected_components(mask: np.ndarray) -> list[Component]:
    """8-connected components, largest first; equal sizes in row-major order."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0 or not mask.any():
        return []
    n, _labels, stats, _centroids = cv2.connectedComponentsWithStats(
        mask.astype(np.uint8), connectivity=8)
    comps = [
        Component(Rect(int(stats[i, cv2.CC_STAT_LEFT]), int(stats[i, cv2.CC_STAT_TOP]),
                       int(stats[i, cv2.CC_STAT_WIDTH]), int(stats[i, cv2.CC_STAT_HEIGHT])),
                  int(stats[i, cv2.CC_STAT_AREA]))
        for i in range(1, n)
    ]
    comps.sort(key=lambda c: (-c.count, c.rect.y, c.rect.x))
    return comps


def merge_text_runs(components: list[Component], params: ThresholdParams = ThresholdParams()
                    ) -> list[Component]:
    """
    Join components lying side by side on a line: both at most
    `merge_max_height` tall, horizontal gap ≤ `merge_gap`, vertical overlap ≥
    `merge_overlap` of the shorter one.  Repeats until nothing merges.
    """
    small = [c for c in components if c.rect.h <= params.merge_max_height]
    rest = [c for c in components if c.rect.h > params.merge_max_height]

    def joinable(a: Rect, b: Rect) -> bool:
        if a.h > params.merge_max_height or b.h > params.merge_max_height:
            return False
        gap = max(a.x, b.x) - min(a.right, b.right)
        if gap > params.merge_gap:
            return False
        overlap = min(a.bottom, b.bottom) - max(a.y, b.y)
        return overlap / min(a.h, b.h) >= params.merge_overlap

    changed = True
    while changed:
        changed = False
        small.sort(key=lambda c: (c.rect.x, c.rect.y))
        out: list[Component] = []
        used = [False] * len(small)
        for i, ci in enumerate(small):
            if used[i]:
                continue
            rect, count = ci.rect, ci.count
            for j in range(i + 1, len(small)):
                if used[j]:
                    continue
                cj = small[j]
                if cj.rect.x > rect.right + params.merge_gap:
                    break
                if joinable(rect, cj.rect):
                    rect, count = rect.union(cj.rect), count + cj.count
                    used[j] = True
                    changed = True
            out.append(Component(rect, count))
        small = out
    merged = small + rest
    merged.sort(key=lambda c: (-c.count, c.rect.y, c.rect.x))
    return merged


# ─── Template matching ────────────────────────────────────────────────────────

def zncc_map(frame: Union[Frame, GrayImage], template: Union[Frame, GrayImage]) -> np.ndarray:
    """ZNCC score at every valid offset, shape (H − th + 1, W − tw + 1)."""
    f = to_gray(frame).astype(np.int64)
    t = to_gray(template).astype(np.int64)
    fh, fw = f.shape
    th, tw = t.shape
    if th > fh or tw > fw:
        raise TemplateLargerThanFrame((tw, th), (fw, fh))
    oh, ow = fh - th + 1, fw - tw + 1
    n = th * tw
    ys, xs = np.arange(oh)[:, None], np.arange(ow)[None, :]

    t_sum = int(t.sum())
    t_var_n = n * int((t * t).sum()) - t_sum * t_sum
    if t_var_n == 0:
        diff = np.abs(f - t_sum // n)
        mad = _box(_sat(diff), ys, ys + th, xs, xs + tw) / n
        return 1.0 - mad / 255.0

    sat1 = _sat(f)
    sat2 = _sat(f * f)
    s1 = _box(sat1, ys, ys + th, xs, xs + tw)
    s2 = _box(sat2, ys, ys + th, xs, xs + tw)
    f_var_n = n * s2 - s1 * s1

    spectrum = np.fft.rfft2(f.astype(np.float64))
    kernel = np.conj(np.fft.rfft2(t.astype(np.float64), s=(fh, fw)))
    cross = np.fft.irfft2(spectrum * kernel, s=(fh, fw))[:oh, :ow]
    cross = np.rint(cross).astype(np.int64)

    numer = (n * cross - s1 * t_sum).astype(np.float64)
    denom = np.sqrt(f_var_n.astype(np.float64) * float(t_var_n))
    scores = np.zeros((oh, ow), dtype=np.float64)
    ok = f_var_n > 0
    scores[ok] = numer[ok] / denom[ok]
    return np.clip(scores, -1.0, 1.0)


def match_template(frame: Union[Frame, GrayImage], template: Union[Frame, GrayImage],
                   threshold: float = 0.8) -> list[Match]:
    """
    Offsets scoring ≥ threshold after non-maximum suppression (radius half
    the template size), best first, ties in row-major order.
    """
    t = to_gray(template)
    th, tw = t.shape
    scores = zncc_map(frame, t)
    ys, xs = np.nonzero(scores >= threshold)
    if ys.size == 0:
        return []
    vals = scores[ys, xs]
    order = np.lexsort((xs, ys, -vals))
    ry, rx = th // 2, tw // 2
    suppressed = np.zeros(scores.shape, dtype=bool)
    out: list[Match] = []
    for k in order:
        y, x = int(ys[k]), int(xs[k])
        if suppressed[y, x]:
            continue
        out.append(Match(Rect(x, y, tw, th), float(vals[k])))
        suppressed[max(0, y - ry):y + ry + 1, max(0, x - rx):x + rx + 1] = True
    return out


# ─── Zones ────────────────────────────────────────────────────────────────────

def detect_zones(frame: Frame, rules: Optional[GeometryRules] = None,
                 classifier: Optional["ZoneClassifier"] = None,
                 params: ThresholdParams = ThresholdParams()) -> list[ZoneOfInterest]:
    """
    Candidate zones with kinds from the geometric rules.  With a classifier
    each zone gets the classifier's confidence (and "unknown" when another
    kind is strictly closer); without one every candidate has confidence 1.
    """
    rules = rules or GeometryRules()
    mask = adaptive_threshold(frame.luma(), params.radius, params.offset)
    comps = merge_text_runs(connected_components(mask), params)

    zones: list[ZoneOfInterest] = []
    for comp in comps:
        r = comp.rect
        kind = rules.candidate_kind(r.w, r.h, comp.count / r.area)
        if kind is None:
            continue
        if classifier is None:
            zones.append(ZoneOfInterest(r, kind, 1.0))
            continue
        label, conf = classifier.classify(frame, r, candidate=kind)
        if conf < params.min_confidence:
            continue
        zones.append(ZoneOfInterest(r, label, conf))
    zones.sort(key=lambda z: (z.rect.y, z.rect.x))
    logger.debug("detect_zones: %d components → %d zones", len(comps), len(zones))
    return zones


def classify_zone(frame: Frame, rect: Rect, model: "ZoneClassifier") -> tuple[str, float]:
    if not rect.inside(frame.width, frame.height):
        raise ValueError(f"zone {rect} outside {frame.width}x{frame.height} frame")
    return model.classify(frame, rect)


# ─── OCR ──────────────────────────────────────────────────────────────────────

def _ink_mask(frame: Frame, rect: Rect, ink_delta: int) -> np.ndarray:
    """Pixels whose luma differs from the modal luma of rect + 1 px ring."""
    luma = frame.luma()
    x0, y0 = max(rect.x - 1, 0), max(rect.y - 1, 0)
    x1, y1 = min(rect.right + 1, frame.width), min(rect.bottom + 1, frame.height)
    around = luma[y0:y1, x0:x1]
    background = int(np.bincount(around.ravel(), minlength=256).argmax())
    inner = luma[rect.y:rect.bottom, rect.x:rect.right].astype(np.int16)
    return np.abs(inner - background) > ink_delta


def _read_cells(ink: np.ndarray, font: BitmapFont) -> str:
    """One text line: cells start at the first ink column and end on the bottom-most ink row."""
    cols = np.nonzero(ink.any(axis=0))[0]
    if cols.size == 0:
        return ""
    rows = np.nonzero(ink.any(axis=1))[0]
    first, last = int(cols[0]), int(cols[-1])
    bottom = int(rows[-1])
    top = bottom - GLYPH_H + 1
    h, w = ink.shape
    chars = [" "] * (first // ADVANCE)
    for cx in range(first, last + 1, ADVANCE):
        cell = np.zeros((GLYPH_H, GLYPH_W), dtype=bool)
        sy0, sx1 = max(top, 0), min(cx + GLYPH_W, w)
        cell[sy0 - top:, :sx1 - cx] = ink[sy0:bottom + 1, cx:sx1]
        ch = font.lookup(cell)
        chars.append(ch if ch is not None else "?")
    return "".join(chars).rstrip(" ")


def ocr_line(frame: Frame, rect: Rect, font: Optional[BitmapFont] = None,
             ink_delta: int = 24) -> str:
    """Read a single line of bitmap-font text; unmatched cells become '?'."""
    if rect.w <= 0 or rect.h <= 0:
        return ""
    if not rect.inside(frame.width, frame.height):
        raise ValueError(f"OCR rect {rect} outside {frame.width}x{frame.height} frame")
    return _read_cells(_ink_mask(frame, rect, ink_delta), font or default_font())


def ocr_text(frame: Frame, rect: Rect, font: Optional[BitmapFont] = None,
             ink_delta: int = 24) -> str:
    """Multi-line read: lines are peeled bottom-up, GLYPH_H rows at a time."""
    if rect.w <= 0 or rect.h <= 0:
        return ""
    font = font or default_font()
    ink = _ink_mask(frame, rect, ink_delta)
    lines: list[str] = []
    remaining = ink.copy()
    while remaining.any():
        bottom = int(np.nonzero(remaining.any(axis=1))[0][-1])
        top = max(bottom - GLYPH_H + 1, 0)
        band = np.zeros_like(remaining)
        band[top:bottom + 1] = remaining[top:bottom + 1]
        lines.append(_read_cells(band, font))
        remaining[top:bottom + 1] = False
    return "\n".join(reversed(lines))


# ─── Links ────────────────────────────────────────────────────────────────────

def colour_mask(frame: Frame, colour: tuple[int, int, int], tolerance: int = 16) -> np.ndarray:
    diff = np.abs(frame.rgb.astype(np.int16) - np.array(colour, dtype=np.int16))
    return (diff <= tolerance).all(axis=-1)


def find_links(frame: Frame, link_colour: tuple[int, int, int], tolerance: int = 16,
               font: Optional[BitmapFont] = None,
               params: ThresholdParams = ThresholdParams()) -> list[Link]:
    """Link-coloured text runs and their text, top-to-bottom then left-to-right."""
    font = font or default_font()
    mask = colour_mask(frame, link_colour, tolerance)
    runs = merge_text_runs(connected_components(mask), params)
    links = []
    for run in runs:
        r = run.rect
        if r.h < params.link_min_height:
            continue
        links.append(Link(r, _read_cells(mask[r.y:r.bottom, r.x:r.right], font)))
    links.sort(key=lambda lk: (lk.rect.y, lk.rect.x))
    return links


# ─── Debug export and bundled analysis ────────────────────────────────────────

def save_mask_pbm(mask: np.ndarray, path: Union[str, Path]) -> Path:
    """Portable bitmap, foreground drawn black."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    img = np.where(np.asarray(mask, dtype=bool), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(p), img, [cv2.IMWRITE_PXM_BINARY, 1]):
        raise OSError(f"could not write mask {p}")
    return p


def analyze_frame(frame: Frame, classifier: Optional["ZoneClassifier"] = None,
                  rules: Optional[GeometryRules] = None,
                  link_colour: Optional[tuple[int, int, int]] = None,
                  params: ThresholdParams = ThresholdParams()) -> dict:
    zones = detect_zones(frame, rules, classifier, params)
    out_zones = []
    for z in zones:
        entry = z.as_dict()
        if z.kind in ("text-line", "button"):
            entry["text"] = ocr_line(frame, z.rect, ink_delta=params.ink_delta).strip()
        out_zones.append(entry)
    report = {"width": frame.width, "height": frame.height, "zones": out_zones}
    if link_colour is not None:
        report["links"] = [lk.as_dict() for lk in
                           find_links(frame, link_colour, params.link_tolerance, params=params)]
    return report
