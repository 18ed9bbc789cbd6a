#!/usr/bin/env python3
"""
zone_classifier.py — Pluggable zone classifiers for vision.detect_zones.

    ZoneClassifier          interface: classify(frame, rect, candidate) → (kind, confidence)
    PrototypeClassifier     nearest prototype by normalized L2 on a 32×32 luma descriptor
    FontTextClassifier      text lines: confidence = fraction of cells the bitmap font reads
    CompositeClassifier     text-line candidates → font model, everything else → prototypes

Prototype descriptor: the crop is scaled to 32×32 by nearest neighbour, made
zero-mean and scaled to unit RMS (a uniform crop becomes the zero vector).
distance = RMS(a − b) / 2, so two descriptors are between 0 and 1 apart;
confidence = exp(−distance / τ) with τ = 0.5.

A neural model slots in by implementing ZoneClassifier.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

from bitmap_font import BitmapFont, default_font
from desk_types import Frame, Rect, load_image
from lifesim_errors import LifeSimError
import vision

logger = logging.getLogger("lifesim.classifier")

DESCRIPTOR_SIZE = 32
TAU = 0.5


class EmptyPrototypeSet(LifeSimError):
    code = "empty-prototype-set"


class ZoneClassifier(ABC):

    @abstractmethod
    def classify(self, frame: Frame, rect: Rect,
                 candidate: Optional[str] = None) -> tuple[str, float]:
        """(kind, confidence in [0, 1]); `candidate` is the geometric-rule guess, if any."""


# ─── Prototype model ──────────────────────────────────────────────────────────

def descriptor(gray: np.ndarray) -> np.ndarray:
    small = cv2.resize(np.ascontiguousarray(gray, dtype=np.uint8),
                       (DESCRIPTOR_SIZE, DESCRIPTOR_SIZE), interpolation=cv2.INTER_NEAREST)
    v = small.astype(np.float64).ravel()
    v -= v.mean()
    rms = math.sqrt(float(np.mean(v * v)))
    if rms < 1e-9:
        return np.zeros_like(v)
    return v / rms


def descriptor_distance(a: np.ndarray, b: np.ndarray) -> float:
    return math.sqrt(float(np.mean((a - b) ** 2))) / 2.0


class PrototypeClassifier(ZoneClassifier):
    """
    Prototypes are grouped by kind; kind order is the order given (profile
    order), and it breaks ties between kinds.
    """

    def __init__(self, prototypes: Sequence[tuple[str, np.ndarray]], tau: float = TAU):
        if not prototypes:
            raise EmptyPrototypeSet("classifier needs at least one prototype")
        self.tau = tau
        self.kinds: list[str] = []
        self._by_kind: dict[str, list[np.ndarray]] = {}
        for kind, gray in prototypes:
            if kind not in self._by_kind:
                self.kinds.append(kind)
                self._by_kind[kind] = []
            self._by_kind[kind].append(descriptor(gray))

    @classmethod
    def from_frames(cls, prototypes: Sequence[tuple[str, Frame]], tau: float = TAU
                    ) -> "PrototypeClassifier":
        return cls([(kind, f.luma()) for kind, f in prototypes], tau)

    @classmethod
    def from_files(cls, files: dict[str, list[Path]], tau: float = TAU) -> "PrototypeClassifier":
        pairs = [(kind, load_image(p).luma()) for kind, paths in files.items() for p in paths]
        logger.debug("loaded %d prototypes for kinds %s", len(pairs), list(files))
        return cls(pairs, tau)

    def distances(self, gray: np.ndarray) -> dict[str, float]:
        d = descriptor(gray)
        return {kind: min(descriptor_distance(d, p) for p in protos)
                for kind, protos in self._by_kind.items()}

    def classify(self, frame: Frame, rect: Rect,
                 candidate: Optional[str] = None) -> tuple[str, float]:
        gray = frame.luma()[rect.y:rect.bottom, rect.x:rect.right]
        dist = self.distances(gray)
        best = min(self.kinds, key=lambda k: dist[k])   # first kind wins ties
        if candidate is None:
            return best, math.exp(-dist[best] / self.tau)
        if candidate in dist and dist[candidate] <= dist[best]:
            return candidate, math.exp(-dist[candidate] / self.tau)
        if candidate in dist:
            return "unknown", math.exp(-dist[candidate] / self.tau)
        return "unknown", math.exp(-dist[best] / self.tau)


# ─── Font model ───────────────────────────────────────────────────────────────

class FontTextClassifier(ZoneClassifier):

    def __init__(self, font: Optional[BitmapFont] = None, ink_delta: int = 24):
        self.font = font or default_font()
        self.ink_delta = ink_delta

    def classify(self, frame: Frame, rect: Rect,
                 candidate: Optional[str] = None) -> tuple[str, float]:
        text = vision.ocr_line(frame, rect, self.font, self.ink_delta).strip()
        cells = [c for c in text if c != " "]
        if not cells:
            return "text-line", 0.0
        return "text-line", sum(c != "?" for c in cells) / len(cells)


class CompositeClassifier(ZoneClassifier):

    def __init__(self, prototypes: PrototypeClassifier, text: Optional[FontTextClassifier] = None):
        self.prototypes = prototypes
        self.text = text or FontTextClassifier()

    def classify(self, frame: Frame, rect: Rect,
                 candidate: Optional[str] = None) -> tuple[str, float]:
        if candidate == "text-line":
            return self.text.classify(frame, rect, candidate)
        return self.prototypes.classify(frame, rect, candidate)
