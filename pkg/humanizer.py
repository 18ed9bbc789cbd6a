#!/usr/bin/env python3
"""
humanizer.py — Turn intended gestures into human-plausible input streams.

A script says "click the compose button"; a person moves the mouse along a
slightly curved, slightly shaky path, slows down near the target, holds the
button for a few dozen milliseconds, and types with irregular rhythm.  This
module produces those streams so the instrumented machine never sees
instantaneous jumps or metronomic keystrokes.

    plan_trajectory(from, to)  → Trajectory   one sample per tick, curved + jittered
    click_events(point, n)     → [PointerEvent] press/release pairs
    keystroke_schedule(text)   → [KeyEvent]   log-normal gaps, shift handling
    idle_jitter(center, ms)    → Trajectory   small mean-reverting drift

Movement model:
  duration   T(d) = a + b·√d   (short moves are slower on average than long ones)
  path       quadratic Bezier, control point displaced perpendicular to the
             chord by gamma·d·u, u ~ N(0,1) clipped to [−2, 2]
  speed      smoothstep on the curve parameter (ease in, ease out)
  shake      Gaussian jitter through a one-pole low-pass (inertia)
  cap        no tick moves further than vmax·tick; a capped path keeps going
             with capped ticks until it lands exactly on the target

Every function takes an explicit numpy Generator; identical config + seed
gives identical streams.  Nothing here touches a session.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from desk_types import BUTTON_BITS, KeyEvent, PointerEvent
from keysyms import XK_Shift_L, UnmappableCharacter, char_to_keystroke
from lifesim_errors import OutOfBounds

Point = tuple[int, int]

SENTENCE_END = frozenset(".!?")


# ─── Config ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class HumanizerConfig:
    tick_ms:           float = 10.0
    duration_base_ms:  float = 80.0
    duration_gain:     float = 14.0
    gamma:             float = 0.12
    jitter_sigma:      float = 1.2
    inertia_alpha:     float = 0.3
    vmax_px_per_ms:    float = 4.0
    key_mu:            float = math.log(120.0)
    key_sigma:         float = 0.45
    key_min_ms:        float = 30.0
    key_max_ms:        float = 500.0
    hold_min_ms:       float = 40.0
    hold_max_ms:       float = 90.0
    sentence_pause_min_ms: float = 200.0
    sentence_pause_max_ms: float = 600.0
    shift_lead_min_ms: float = 15.0
    shift_lead_max_ms: float = 45.0
    click_gap_min_ms:  float = 60.0
    click_gap_max_ms:  float = 140.0
    idle_amplitude_px: float = 4.0
    rng_seed:          Optional[int] = None

    def __post_init__(self) -> None:
        positive = ("tick_ms", "duration_base_ms", "duration_gain", "vmax_px_per_ms",
                    "key_sigma", "key_min_ms", "hold_min_ms", "idle_amplitude_px")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"humanizer {name} must be positive, got {getattr(self, name)}")
        if self.gamma < 0 or self.jitter_sigma < 0:
            raise ValueError("humanizer gamma and jitter_sigma must be non-negative")
        if not 0.0 < self.inertia_alpha < 1.0:
            raise ValueError(f"humanizer inertia_alpha must be in (0, 1), got {self.inertia_alpha}")
        if self.vmax_px_per_ms * self.tick_ms < 2.0:
            raise ValueError("humanizer vmax_px_per_ms × tick_ms must allow at least 2 px per tick")
        for lo, hi in (("key_min_ms", "key_max_ms"), ("hold_min_ms", "hold_max_ms"),
                       ("sentence_pause_min_ms", "sentence_pause_max_ms"),
                       ("shift_lead_min_ms", "shift_lead_max_ms"),
                       ("click_gap_min_ms", "click_gap_max_ms")):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"humanizer {lo} must not exceed {hi}")

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "HumanizerConfig":
        """Partial mapping → config; missing fields keep their defaults."""
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown humanizer fields: {sorted(unknown)}")
        return cls(**raw)

    def merged(self, overrides: Optional[dict]) -> "HumanizerConfig":
        base = asdict(self)
        base.update(overrides or {})
        return HumanizerConfig.from_dict(base)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


# ─── Trajectory ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Trajectory:
    samples: tuple[tuple[int, int, float], ...]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def start(self) -> Point:
        return self.samples[0][:2]

    @property
    def end(self) -> Point:
        return self.samples[-1][:2]

    @property
    def duration_ms(self) -> float:
        return self.samples[-1][2] - self.samples[0][2]

    def pointer_events(self, buttons: int = 0) -> list[PointerEvent]:
        return [PointerEvent(x, y, buttons, at) for x, y, at in self.samples]


def movement_duration(d: float, cfg: HumanizerConfig) -> float:
    return cfg.duration_base_ms + cfg.duration_gain * math.sqrt(max(d, 0.0))


def _check_point(p: Point, bounds: Optional[tuple[int, int]]) -> None:
    x, y = p
    if x < 0 or y < 0 or (bounds is not None and (x >= bounds[0] or y >= bounds[1])):
        raise OutOfBounds(f"point {p} outside screen {bounds}", point=list(p))


def _capped_step(cur: np.ndarray, target: np.ndarray, cap: float) -> np.ndarray:
    delta = target - cur
    dist = float(np.hypot(*delta))
    if dist <= cap:
        return target.copy()
    return cur + np.trunc(delta * (cap / dist))


def plan_trajectory(start: Point, to: Point, cfg: HumanizerConfig,
                    rng: np.random.Generator, start_at: float = 0.0,
                    bounds: Optional[tuple[int, int]] = None) -> Trajectory:
    """
    Humanized movement from `start` to `to`.  `bounds` = (width, height)
    validates the endpoints and keeps every sample on screen.
    """
    _check_point(start, bounds)
    _check_point(to, bounds)
    p0 = np.array(start, dtype=float)
    p2 = np.array(to, dtype=float)
    d = float(np.hypot(*(p2 - p0)))
    if d == 0.0:
        return Trajectory(((int(start[0]), int(start[1]), float(start_at)),))

    n = max(1, math.ceil(movement_duration(d, cfg) / cfg.tick_ms))
    chord = (p2 - p0) / d
    normal = np.array([-chord[1], chord[0]])
    u = float(np.clip(rng.standard_normal(), -2.0, 2.0))
    ctrl = (p0 + p2) / 2.0 + normal * cfg.gamma * d * u

    t = np.arange(1, n + 1) / n
    s = (3.0 - 2.0 * t) * t * t
    path = ((1 - s) ** 2)[:, None] * p0 + (2 * s * (1 - s))[:, None] * ctrl + (s ** 2)[:, None] * p2

    noise = rng.normal(0.0, cfg.jitter_sigma, size=(n, 2))
    shake = np.zeros(2)
    for i in range(n):
        shake = shake + cfg.inertia_alpha * (noise[i] - shake)
        path[i] += shake
    path[-1] = p2

    cap = cfg.vmax_px_per_ms * cfg.tick_ms
    hi = np.array([bounds[0] - 1, bounds[1] - 1], dtype=float) if bounds else None
    cur = p0.copy()
    samples: list[tuple[int, int, float]] = [(int(p0[0]), int(p0[1]), float(start_at))]

    def emit(target: np.ndarray) -> None:
        nonlocal cur
        q = np.rint(target)
        if hi is not None:
            q = np.clip(q, 0.0, hi)
        cur = _capped_step(cur, q, cap)
        samples.append((int(cur[0]), int(cur[1]), start_at + len(samples) * cfg.tick_ms))

    for point in path:
        emit(point)
    while not np.array_equal(cur, p2):
        emit(p2)
    return Trajectory(tuple(samples))


# ─── Clicks ───────────────────────────────────────────────────────────────────

def click_events(point: Point, button: str, clicks: int, cfg: HumanizerConfig,
                 rng: np.random.Generator, start_at: float = 0.0,
                 held_mask: int = 0) -> list[PointerEvent]:
    if button not in BUTTON_BITS:
        raise ValueError(f"unknown button {button!r}")
    if clicks < 1:
        raise ValueError("clicks must be at least 1")
    bit = BUTTON_BITS[button]
    x, y = point
    t = start_at
    events: list[PointerEvent] = []
    for i in range(clicks):
        if i:
            t += float(rng.uniform(cfg.click_gap_min_ms, cfg.click_gap_max_ms))
        events.append(PointerEvent(x, y, held_mask | bit, t))
        t += float(rng.uniform(cfg.hold_min_ms, cfg.hold_max_ms))
        events.append(PointerEvent(x, y, held_mask, t))
    return events


# ─── Keystrokes ───────────────────────────────────────────────────────────────

def _key_gap(cfg: HumanizerConfig, rng: np.random.Generator) -> float:
    return float(np.clip(rng.lognormal(cfg.key_mu, cfg.key_sigma), cfg.key_min_ms, cfg.key_max_ms))


def keystroke_schedule(text: str, cfg: HumanizerConfig, rng: np.random.Generator,
                       start_at: float = 0.0) -> list[KeyEvent]:
    """
    Press/release pairs for every character.  The gap runs from one
    character's last release to the next character's first press.
    """
    strokes = []
    for pos, ch in enumerate(text):
        try:
            strokes.append((ch, *char_to_keystroke(ch)))
        except UnmappableCharacter:
            raise UnmappableCharacter(ch, pos) from None

    events: list[KeyEvent] = []
    t = start_at
    for i, (ch, keysym, shifted) in enumerate(strokes):
        if i:
            t += _key_gap(cfg, rng)
            if strokes[i - 1][0] in SENTENCE_END:
                t += float(rng.uniform(cfg.sentence_pause_min_ms, cfg.sentence_pause_max_ms))
        if shifted:
            events.append(KeyEvent(XK_Shift_L, True, t))
            t += float(rng.uniform(cfg.shift_lead_min_ms, cfg.shift_lead_max_ms))
        events.append(KeyEvent(keysym, True, t))
        t += float(rng.uniform(cfg.hold_min_ms, cfg.hold_max_ms))
        events.append(KeyEvent(keysym, False, t))
        if shifted:
            t += float(rng.uniform(cfg.shift_lead_min_ms, cfg.shift_lead_max_ms))
            events.append(KeyEvent(XK_Shift_L, False, t))
    return events


# ─── Idle ─────────────────────────────────────────────────────────────────────

def idle_jitter(center: Point, duration_ms: float, cfg: HumanizerConfig,
                rng: np.random.Generator, start_at: float = 0.0,
                bounds: Optional[tuple[int, int]] = None) -> Trajectory:
    """
    Mean-reverting drift around `center`, one sample per tick from `start_at`
    through `start_at + duration_ms` inclusive, clipped to the idle radius.
    """
    if duration_ms < 0:
        raise ValueError("idle duration must be non-negative")
    _check_point(center, bounds)
    ticks = [i * cfg.tick_ms for i in range(1, int(duration_ms // cfg.tick_ms) + 1)]
    if duration_ms > 0 and (not ticks or ticks[-1] < duration_ms):
        ticks.append(float(duration_ms))
    c = np.array(center, dtype=float)
    radius = cfg.idle_amplitude_px
    cur = c.copy()
    samples = [(int(c[0]), int(c[1]), float(start_at))]
    for dt in ticks:
        cur = cur + cfg.inertia_alpha * (c - cur) + rng.normal(0.0, cfg.jitter_sigma, size=2)
        off = cur - c
        norm = float(np.hypot(*off))
        if norm > radius:
            cur = c + off * (radius / norm)
        q = np.rint(cur)
        if float(np.hypot(*(q - c))) > radius:
            q = c + np.trunc(cur - c)
        if bounds is not None:
            q = np.clip(q, 0.0, [bounds[0] - 1, bounds[1] - 1])
        samples.append((int(q[0]), int(q[1]), start_at + dt))
    return Trajectory(tuple(samples))
