#!/usr/bin/env python3
"""
recorder.py — Record a human demonstration and turn it into replayable actions.

Capture side:
    RecordingTap(session)        a Channel that forwards to the live session and
                                 logs every input event, taking keyframes
                                   • when a movement starts (first motion after
                                     ≥150 ms of quiet, or after a click or key)
                                   • just before every button press
                                   • every 1 000 ms from a cadence thread
    RecordingProxy(tap)          RFB server backend: an operator's VNC viewer
                                 connects to the proxy and drives the target
                                 through the tap (`agent record --listen`)
    record(session, until, driver)

Analysis side:
    segment(recording)           → [move | click(n, button) | type(text) | idle]
                                   contiguous half-open spans covering the timeline
    extract_target(recording, s) → (rect, template) by differencing the keyframe
                                   at movement start with the keyframe just before
                                   the press: the hovered element lights up
    build_replay(...)            → profile.json + templates/target-N.png + script.json
    propose_annotations(frame)   → candidate zones for dataset labelling

On disk a recording is:
    events.jsonl        one {"at", "type", ...payload} object per line
    recording.json      {"width", "height", "keyframes": [{"index", "at", "file"}]}
    keyframes/NNNN.png  lossless keyframe images
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

import vision
from agent_actions import UnitAction, click, dump_script, type_text, wait
from desk_types import (BUTTON_BITS, Frame, InputEvent, KeyEvent, PointerEvent, Rect,
                        event_from_dict, load_image, monotonic_ms, save_image)
from keysyms import SHIFT_KEYSYMS, XK_BackSpace, keysym_to_char
from lifesim_errors import LifeSimError, ParseError
from rfb_channel import Channel
from rfb_server import FramebufferBackend

logger = logging.getLogger("lifesim.recorder")

BUTTON_NAMES = {bit: name for name, bit in BUTTON_BITS.items()}


class EmptyRecording(LifeSimError):
    code = "empty-recording"


class NoDiffFound(LifeSimError):
    code = "no-diff-found"

    def __init__(self, point: tuple[int, int]):
        super().__init__(f"no changed region near click at {point}", point=list(point))
        self.point = point


class MissingKeyframe(LifeSimError):
    code = "missing-keyframe"


# ─── Policy ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RecorderPolicy:
    quiet_ms:        float = 150.0
    cadence_ms:      float = 1000.0
    press_window_ms: float = 50.0
    gap_ms:          float = 800.0
    double_click_ms: float = 400.0
    double_click_px: float = 3.0
    diff_threshold:  int = 12
    proximity_px:    float = 100.0
    fallback_size:   int = 24

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "RecorderPolicy":
        raw = dict(raw or {})
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown recorder fields: {sorted(unknown)}")
        return cls(**raw)


# ─── Recording ────────────────────────────────────────────────────────────────

@dataclass
class Recording:
    width:     int
    height:    int
    events:    list[InputEvent] = field(default_factory=list)
    keyframes: list[tuple[float, Frame]] = field(default_factory=list)

    def keyframe_at_or_before(self, t: float) -> Optional[tuple[float, Frame]]:
        best = None
        for at, frame in self.keyframes:
            if at <= t:
                best = (at, frame)
            else:
                break
        return best


# ─── Capture ──────────────────────────────────────────────────────────────────

class RecordingTap(Channel):
    """Forwarding channel that records what passes through it."""

    def __init__(self, inner: Channel, policy: RecorderPolicy = RecorderPolicy()):
        self.inner = inner
        self.policy = policy
        self._lock = threading.RLock()
        self._start = monotonic_ms()
        self._events: list[InputEvent] = []
        self._keyframes: list[tuple[float, Frame]] = []
        self._last_at: Optional[float] = None
        self._last_was_input = True          # click or key: next motion starts a movement
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    # ── Lifecycle ─────────────────────────────────────────────────────────────

    def start(self) -> "RecordingTap":
        with self._lock:
            self._start = monotonic_ms()
            self._keyframe()
        self._thread = threading.Thread(target=self._cadence, name="recorder-cadence", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def _cadence(self) -> None:
        while not self._stop.wait(self.policy.cadence_ms / 1000.0):
            try:
                with self._lock:
                    self._keyframe()
            except LifeSimError as exc:
                logger.warning("cadence keyframe failed, stopping cadence: %s", exc)
                return

    def _now(self) -> float:
        return monotonic_ms() - self._start

    def _keyframe(self) -> None:
        frame = self.inner.capture_frame()
        self._keyframes.append((self._now(), frame))

    def recording(self) -> Recording:
        with self._lock:
            return Recording(self.inner.width, self.inner.height,
                             list(self._events), list(self._keyframes))

    # ── Channel interface ─────────────────────────────────────────────────────

    @property
    def width(self) -> int:
        return self.inner.width

    @property
    def height(self) -> int:
        return self.inner.height

    @property
    def pointer_position(self) -> tuple[int, int]:
        return self.inner.pointer_position

    @property
    def button_mask(self) -> int:
        return self.inner.button_mask

    def capture_frame(self) -> Frame:
        with self._lock:
            return self.inner.capture_frame()

    def send_pointer(self, event: PointerEvent) -> None:
        with self._lock:
            now = self._now()
            moved = (event.x, event.y) != self.inner.pointer_position
            held = self.inner.button_mask
            pressed = event.buttons & ~held
            quiet = self._last_at is None or now - self._last_at >= self.policy.quiet_ms
            if pressed:
                self._keyframe()
            elif moved and event.buttons == held and (quiet or self._last_was_input):
                self._keyframe()
            self.inner.send_pointer(event)
            at = self._now()
            self._events.append(PointerEvent(event.x, event.y, event.buttons, at))
            self._last_at = at
            if event.buttons != held:
                self._last_was_input = True
            elif moved:
                self._last_was_input = False

    def send_key(self, event: KeyEvent) -> None:
        with self._lock:
            self.inner.send_key(event)
            at = self._now()
            self._events.append(KeyEvent(event.keysym, event.pressed, at))
            self._last_at = at
            self._last_was_input = True

    def close(self) -> None:
        self.stop()
        self.inner.close()


class RecordingProxy(FramebufferBackend):
    """Lets a VNC viewer drive the target through a RecordingTap."""

    def __init__(self, tap: RecordingTap):
        self.tap = tap

    @property
    def size(self) -> tuple[int, int]:
        return (self.tap.width, self.tap.height)

    def framebuffer(self) -> np.ndarray:
        return self.tap.capture_frame().pixels

    def pointer(self, buttons: int, x: int, y: int) -> None:
        if 0 <= x < self.tap.width and 0 <= y < self.tap.height:
            self.tap.send_pointer(PointerEvent(x, y, buttons))

    def key(self, down: bool, keysym: int) -> None:
        self.tap.send_key(KeyEvent(keysym, down))


def record(session: Channel, until: Union[float, threading.Event, Callable[[], bool]] = 0.0,
           driver: Optional[Callable[[RecordingTap], None]] = None,
           policy: RecorderPolicy = RecorderPolicy()) -> Recording:
    """
    Tap `session` until the stop condition: seconds elapsed (float), an Event
    being set, or a predicate turning true.  `driver` plays the human's part
    in unattended runs.
    """
    tap = RecordingTap(session, policy).start()
    started = time.monotonic()
    try:
        if driver is not None:
            driver(tap)
        if isinstance(until, threading.Event):
            until.wait()
        elif callable(until):
            while not until():
                time.sleep(0.05)
        else:
            remaining = float(until) - (time.monotonic() - started)
            if remaining > 0:
                time.sleep(remaining)
    finally:
        tap.stop()
    rec = tap.recording()
    logger.info("recorded %d events, %d keyframes", len(rec.events), len(rec.keyframes))
    return rec


# ─── Segmentation ─────────────────────────────────────────────────────────────

@dataclass
class Target:
    rect:      Rect
    template:  Frame
    extracted: bool = True       # False: fixed-size fallback crop


@dataclass
class ActionSegment:
    kind:        str                        # "move" | "click" | "type" | "idle"
    t0:          float
    t1:          float
    button:      Optional[str] = None
    clicks:      int = 0
    text:        str = ""
    point:       Optional[tuple[int, int]] = None
    press_at:    Optional[float] = None
    move_start:  Optional[float] = None
    target:      Optional[Target] = None

    def as_dict(self) -> dict:
        out: dict = {"kind": self.kind, "span": [round(self.t0, 3), round(self.t1, 3)]}
        if self.kind == "click":
            out.update(button=self.button, clicks=self.clicks, point=list(self.point))
            if self.target is not None:
                out["target"] = self.target.rect.as_list()
        elif self.kind == "type":
            out["text"] = self.text
        elif self.kind == "move" and self.point is not None:
            out["to"] = list(self.point)
        return out


def _category(ev: InputEvent, mask: int) -> str:
    if isinstance(ev, KeyEvent):
        return "key"
    if ev.buttons & ~mask:
        return "press"
    if ev.buttons != mask:
        return "release"
    return "motion"


def segment(recording: Recording, gap_ms: Optional[float] = None,
            policy: RecorderPolicy = RecorderPolicy()) -> list[ActionSegment]:
    if not recording.events:
        raise EmptyRecording("recording has no input events")
    gap = policy.gap_ms if gap_ms is None else gap_ms
    events = sorted(recording.events, key=lambda e: e.at)

    groups: list[dict] = []
    mask = 0
    shift = False
    for ev in events:
        cat = _category(ev, mask)
        cur = groups[-1] if groups else None
        joined = False
        if cur is not None and ev.at - cur["last"] < gap:
            if cat == "motion" and cur["kind"] == "move":
                joined = True
            elif cat == "release" and cur["kind"] in ("click", "move"):
                joined = True
            elif cat == "press" and cur["kind"] == "click":
                bit = ev.buttons & ~mask
                lx, ly = cur["last_press"]
                if (bit == cur["bit"] and ev.at - cur["last_press_at"] <= policy.double_click_ms
                        and float(np.hypot(ev.x - lx, ev.y - ly)) <= policy.double_click_px):
                    joined = True
            elif cat == "key" and cur["kind"] == "type":
                joined = True
            elif cat == "motion" and cur["kind"] == "click" and mask:
                joined = True       # jitter while a button is held
        if not joined:
            kind = {"motion": "move", "press": "click", "release": "move", "key": "type"}[cat]
            cur = {"kind": kind, "first": ev.at, "last": ev.at, "clicks": 0, "text": "",
                   "bit": 0, "point": None, "press_at": None, "last_press": None,
                   "last_press_at": None}
            groups.append(cur)
        cur["last"] = ev.at

        if cat == "press":
            bit = ev.buttons & ~mask
            if cur["clicks"] == 0:
                cur["bit"] = bit & -bit
                cur["point"] = (ev.x, ev.y)
                cur["press_at"] = ev.at
            cur["clicks"] += 1
            cur["last_press"] = (ev.x, ev.y)
            cur["last_press_at"] = ev.at
        elif cat == "motion" and cur["kind"] == "move":
            cur["point"] = (ev.x, ev.y)
        elif cat == "key":
            if ev.keysym in SHIFT_KEYSYMS:
                shift = ev.pressed
            elif ev.pressed:
                if ev.keysym == XK_BackSpace:
                    cur["text"] = cur["text"][:-1]
                else:
                    ch = keysym_to_char(ev.keysym, shift)
                    if ch is not None:
                        cur["text"] += ch
        if isinstance(ev, PointerEvent):
            mask = ev.buttons

    segments: list[ActionSegment] = []
    for i, g in enumerate(groups):
        nxt = groups[i + 1]["first"] if i + 1 < len(groups) else None
        if nxt is None:
            end = g["last"]
        elif nxt - g["last"] >= gap:
            end = g["last"]
        else:
            end = nxt
        seg = ActionSegment(g["kind"], g["first"], end)
        if g["kind"] == "click":
            seg.button = BUTTON_NAMES.get(g["bit"], f"button{g['bit']}")
            seg.clicks = g["clicks"]
            seg.point = g["point"]
            seg.press_at = g["press_at"]
            prev = segments[-1] if segments else None
            seg.move_start = prev.t0 if prev is not None and prev.kind == "move" else g["press_at"]
        elif g["kind"] == "type":
            seg.text = g["text"]
        else:
            seg.point = g["point"]
        segments.append(seg)
        if nxt is not None and end != nxt:
            segments.append(ActionSegment("idle", end, nxt))
    return segments


# ─── Target extraction ────────────────────────────────────────────────────────

def extract_target(recording: Recording, seg: ActionSegment,
                   policy: RecorderPolicy = RecorderPolicy()) -> Target:
    """
    Difference the keyframe at movement start against the keyframe taken just
    before the press; the changed component under (or nearest) the click point
    is the target, cropped from the un-highlighted frame.
    """
    if seg.kind != "click" or seg.press_at is None or seg.point is None:
        raise ValueError(f"extract_target needs a click segment, got {seg.kind}")
    before = recording.keyframe_at_or_before(seg.move_start if seg.move_start is not None
                                             else seg.press_at)
    at_press = recording.keyframe_at_or_before(seg.press_at)
    if before is None:
        raise MissingKeyframe(f"no keyframe at movement start {seg.move_start:.0f} ms")
    if at_press is None or seg.press_at - at_press[0] > policy.press_window_ms:
        raise MissingKeyframe(f"no keyframe within {policy.press_window_ms:.0f} ms before "
                              f"press at {seg.press_at:.0f} ms")
    a = before[1].luma().astype(np.int16)
    b = at_press[1].luma().astype(np.int16)
    mask = np.abs(a - b) > policy.diff_threshold
    comps = vision.connected_components(mask)

    px, py = seg.point
    containing = [c for c in comps if c.rect.contains(px, py)]
    if containing:
        chosen = min(containing, key=lambda c: (c.rect.area, c.rect.y, c.rect.x))
    else:
        near = [(c.rect.distance_to(px, py), c.rect.y, c.rect.x, c) for c in comps]
        near = [n for n in near if n[0] <= policy.proximity_px]
        if not near:
            raise NoDiffFound(seg.point)
        chosen = min(near, key=lambda n: n[:3])[3]
    return Target(chosen.rect, before[1].crop(chosen.rect))


def fallback_target(frame: Frame, point: tuple[int, int], size: int = 24) -> Target:
    """Fixed-size crop centred on the click, shifted to stay on screen."""
    w, h = min(size, frame.width), min(size, frame.height)
    x = min(max(point[0] - w // 2, 0), frame.width - w)
    y = min(max(point[1] - h // 2, 0), frame.height - h)
    rect = Rect(x, y, w, h)
    return Target(rect, frame.crop(rect), extracted=False)


def extract_targets(recording: Recording, segments: list[ActionSegment],
                    policy: RecorderPolicy = RecorderPolicy()) -> list[ActionSegment]:
    """Attach a target to every click segment, falling back to a fixed crop."""
    for seg in segments:
        if seg.kind != "click" or seg.button not in BUTTON_BITS:
            continue
        try:
            seg.target = extract_target(recording, seg, policy)
        except NoDiffFound:
            kf = recording.keyframe_at_or_before(seg.move_start if seg.move_start is not None
                                                 else seg.press_at)
            seg.target = fallback_target(kf[1], seg.point, policy.fallback_size)
            logger.debug("no highlight under click at %s, using %dpx crop", seg.point,
                         policy.fallback_size)
    return segments


# ─── Replay ───────────────────────────────────────────────────────────────────

def replay_script(segments: list[ActionSegment]) -> list[UnitAction]:
    actions: list[UnitAction] = []
    n = 0
    for seg in segments:
        if seg.kind == "click" and seg.button in BUTTON_BITS:
            actions.append(click(f"target-{n}", seg.button, seg.clicks))
            n += 1
        elif seg.kind == "type" and seg.text:
            actions.append(type_text(seg.text))
        elif seg.kind == "idle":
            actions.append(wait(int(seg.t1 - seg.t0)))
    return actions


def build_replay(segments: list[ActionSegment], out_dir: Union[str, Path],
                 name: str = "replay") -> tuple[Path, Path]:
    """Write a fresh profile (one template per click target) and the replay script."""
    out = Path(out_dir)
    (out / "templates").mkdir(parents=True, exist_ok=True)
    elements = {}
    n = 0
    for seg in segments:
        if seg.kind != "click" or seg.button not in BUTTON_BITS:
            continue
        if seg.target is None:
            raise ValueError(f"click segment at {seg.t0:.0f} ms has no target; run extract_targets")
        rel = f"templates/target-{n}.png"
        save_image(seg.target.template, out / rel)
        elements[f"target-{n}"] = {
            "strategies": [{"template": rel, "threshold": 0.9}],
            "activate": {"button": seg.button, "clicks": seg.clicks},
            "verify": "highlight" if seg.target.extracted else "none",
        }
        n += 1
    manifest = out / "profile.json"
    manifest.write_text(json.dumps({"name": name, "elements": elements}, indent=2) + "\n",
                        encoding="utf-8")
    script = dump_script(replay_script(segments), out / "script.json")
    logger.info("replay written to %s (%d targets)", out, n)
    return manifest, script


# ─── Annotations ──────────────────────────────────────────────────────────────

def propose_annotations(frame: Frame, classifier=None,
                        rules: Optional[vision.GeometryRules] = None,
                        params: vision.ThresholdParams = vision.ThresholdParams()
                        ) -> list[vision.ZoneOfInterest]:
    return vision.detect_zones(frame, rules, classifier, params)


def save_annotations(zones: list[vision.ZoneOfInterest], path: Union[str, Path],
                     image: Optional[str] = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    doc = {"image": image, "zones": [z.as_dict() for z in zones]}
    p.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return p


def load_annotations(path: Union[str, Path]) -> list[vision.ZoneOfInterest]:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
        return [vision.ZoneOfInterest.from_dict(z) for z in doc["zones"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{p}: {exc}", path=str(p)) from exc


# ─── Persistence ──────────────────────────────────────────────────────────────

def save_recording(recording: Recording, out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    (out / "keyframes").mkdir(parents=True, exist_ok=True)
    with (out / "events.jsonl").open("w", encoding="utf-8") as fh:
        for ev in recording.events:
            fh.write(json.dumps(ev.as_dict()) + "\n")
    index = []
    for i, (at, frame) in enumerate(recording.keyframes):
        rel = f"keyframes/{i:04d}.png"
        save_image(frame, out / rel)
        index.append({"index": i, "at": at, "file": rel})
    meta = {"width": recording.width, "height": recording.height, "keyframes": index}
    (out / "recording.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    logger.info("recording saved to %s (%d events, %d keyframes)", out,
                len(recording.events), len(index))
    return out


def load_recording(directory: Union[str, Path]) -> Recording:
    root = Path(directory)
    try:
        meta = json.loads((root / "recording.json").read_text(encoding="utf-8"))
        events = [event_from_dict(json.loads(line))
                  for line in (root / "events.jsonl").read_text(encoding="utf-8").splitlines()
                  if line.strip()]
        width, height = int(meta["width"]), int(meta["height"])
        entries = sorted(meta["keyframes"], key=lambda k: k["index"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{root}: {exc}", path=str(root)) from exc
    keyframes = []
    for entry in entries:
        frame = load_image(root / entry["file"])
        frame.captured_at = float(entry["at"])
        keyframes.append((float(entry["at"]), frame))
    return Recording(width, height, events, keyframes)
