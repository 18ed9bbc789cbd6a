#!/usr/bin/env python3
"""
simdesk.py — Deterministic synthetic desktop, served over RFB.

A Scene is a small GUI state machine: icons, buttons, windows, text areas,
text labels and links, painted in list order onto a solid background with
the 5×7 bitmap font.  It is the hermetic stand-in for an instrumented
machine: the agent connects to it exactly as it would to a real VNC console.

    render(scene)             → Frame   (pure; depends only on scene state)
    scene_step(scene, event)  → Scene'  (pure; input applied to a copy)
    scene_advance(scene, t)   → Scene'  (applies behaviours that came due)
    serve(scene, port)        → ServerHandle (rfb_server.RFBServer underneath)

Interaction rules:
  hover        the topmost visible element under the cursor has its fill
               lightened by its highlight delta
  click        a left press on a text area focuses it; a left press on empty
               desktop clears focus; a button/link with an on-click behaviour
               fires when the press is released over it
  double-click two left presses within 400 ms and 3 px on the same element;
               an on-double-click behaviour (icons) fires on the release that
               completes it
  behaviour    show/hide a window `latency_ms` after firing; `event:
               "mail-sent"` also records and clears the text areas of the
               window being hidden
  keys         a key press on the focused text area appends the mapped
               character (Shift upper-cases), Return adds a newline,
               BackSpace deletes

Every input event and every state transition is appended to `event_log`
with a strictly increasing `seq` and non-decreasing `at`.

Scene file (JSON, see scenes/demo.json):
  {"width": 640, "height": 400, "background": [r, g, b],
   "elements": [{"id", "kind", "rect": [x, y, w, h], "label",
                 "style": {"base", "text", "highlight", "link"},
                 "behaviour": {"on", "show", "hide", "latency_ms", "event"},
                 "parent", "visible", "placeholder"}, ...]}
"""

from __future__ import annotations

import copy
import json
import logging
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from bitmap_font import ADVANCE, GLYPH_H, GLYPH_W, BitmapFont, default_font
from desk_types import BUTTON_LEFT, Frame, InputEvent, KeyEvent, PointerEvent, Rect, monotonic_ms
from keysyms import SHIFT_KEYSYMS, XK_BackSpace, keysym_to_char
from lifesim_errors import LifeSimError, ParseError
from rfb_server import FramebufferBackend, RFBServer

logger = logging.getLogger("lifesim.simdesk")

SCENES_DIR = Path(__file__).parent / "scenes"

# ─── Constants ────────────────────────────────────────────────────────────────

KINDS = ("icon", "button", "window", "text-area", "text-label", "link")

DOUBLE_CLICK_MS: float = 400.0
DOUBLE_CLICK_PX: float = 3.0
TEXT_INSET: int = 3
TITLE_INSET: int = 4
LINE_PITCH: int = GLYPH_H + 2

RGB = tuple[int, int, int]


class SceneInvalid(LifeSimError):
    code = "scene-invalid"


# ─── Data classes ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Style:
    base:      RGB
    text:      RGB
    highlight: int = 0
    link:      bool = False


DEFAULT_STYLES: dict[str, Style] = {
    "icon":       Style(base=(40, 80, 160),   text=(255, 255, 255), highlight=24),
    "button":     Style(base=(40, 120, 80),   text=(255, 255, 255), highlight=24),
    "window":     Style(base=(236, 236, 240), text=(20, 20, 20),    highlight=0),
    "text-area":  Style(base=(200, 204, 212), text=(30, 30, 30),    highlight=16),
    "text-label": Style(base=(20, 20, 20),    text=(20, 20, 20),    highlight=0),
    "link":       Style(base=(30, 60, 220),   text=(30, 60, 220),   highlight=0, link=True),
}


@dataclass(frozen=True)
class Behaviour:
    on:         str = "double-click"          # "click" | "double-click"
    show:       Optional[str] = None
    hide:       Optional[str] = None
    latency_ms: Union[int, tuple[int, int]] = 0
    event:      Optional[str] = None


@dataclass
class Element:
    id:          str
    kind:        str
    rect:        Rect
    label:       str = ""
    style:       Style = field(default_factory=lambda: DEFAULT_STYLES["button"])
    behaviour:   Optional[Behaviour] = None
    parent:      Optional[str] = None
    visible:     bool = True
    placeholder: str = ""
    text:        str = ""


@dataclass
class _Pending:
    due:       float
    source:    str
    behaviour: Behaviour


@dataclass
class Scene:
    width:       int
    height:      int
    background:  RGB
    elements:    list[Element]
    focus:       Optional[str] = None
    event_log:   list[dict] = field(default_factory=list)
    rng_seed:    Optional[int] = None
    cursor:      Optional[tuple[int, int]] = None
    buttons:     int = 0
    now_ms:      float = 0.0
    shift:       bool = False
    pending:     list[_Pending] = field(default_factory=list)
    last_press:  Optional[tuple[float, int, int, Optional[str]]] = None
    armed:       Optional[str] = None
    seq:         int = 0
    _rng:        Optional[np.random.Generator] = field(default=None, repr=False, compare=False)

    # ── Lookup ────────────────────────────────────────────────────────────────

    def element(self, element_id: Optional[str]) -> Optional[Element]:
        if element_id is None:
            return None
        for el in self.elements:
            if el.id == element_id:
                return el
        return None

    def is_visible(self, el: Element) -> bool:
        while el is not None:
            if not el.visible:
                return False
            el = self.element(el.parent)
        return True

    def hit(self, x: int, y: int) -> Optional[Element]:
        """Topmost visible element containing (x, y), in paint order."""
        for el in reversed(self.elements):
            if el.rect.contains(x, y) and self.is_visible(el):
                return el
        return None

    def hovered(self) -> Optional[Element]:
        return self.hit(*self.cursor) if self.cursor is not None else None

    def copy(self) -> "Scene":
        return replace(
            self,
            elements=[replace(el) for el in self.elements],
            event_log=list(self.event_log),
            pending=list(self.pending),
            _rng=copy.deepcopy(self._rng),
        )

    # ── Mutation (single owner) ───────────────────────────────────────────────

    def _log(self, at: float, entry: dict) -> None:
        self.seq += 1
        self.event_log.append({"seq": self.seq, "at": at, **entry})

    def _transition(self, at: float, element: str, change: str, **extra) -> None:
        self._log(at, {"type": "transition", "element": element, "change": change, **extra})

    def advance(self, now: float) -> None:
        """Apply every pending behaviour due at or before `now`."""
        self.now_ms = max(self.now_ms, now)
        due = sorted((p for p in self.pending if p.due <= self.now_ms), key=lambda p: p.due)
        if not due:
            return
        self.pending = [p for p in self.pending if p.due > self.now_ms]
        for p in due:
            self._fire(p)

    def _fire(self, p: _Pending) -> None:
        b = p.behaviour
        at = max(p.due, self.event_log[-1]["at"] if self.event_log else p.due)
        if b.show:
            target = self.element(b.show)
            if target is not None and not target.visible:
                target.visible = True
                self._transition(at, target.id, "show", source=p.source)
        if b.hide:
            target = self.element(b.hide)
            if target is not None and target.visible:
                fields: dict[str, str] = {}
                if b.event:
                    for el in self.elements:
                        if el.kind == "text-area" and self._within(el, target.id):
                            fields[el.id] = el.text
                            el.text = ""
                target.visible = False
                extra = {"event": b.event, "fields": fields} if b.event else {}
                self._transition(at, target.id, "hide", source=p.source, **extra)
                focused = self.element(self.focus)
                if focused is not None and not self.is_visible(focused):
                    self.focus = None
                    self._transition(at, focused.id, "blur")
        elif b.event:
            self._transition(at, p.source, "event", event=b.event)

    def _within(self, el: Element, ancestor_id: str) -> bool:
        parent = self.element(el.parent)
        while parent is not None:
            if parent.id == ancestor_id:
                return True
            parent = self.element(parent.parent)
        return False

    def _latency(self, b: Behaviour) -> float:
        if isinstance(b.latency_ms, tuple):
            if self._rng is None:
                self._rng = np.random.default_rng(self.rng_seed if self.rng_seed is not None else 0)
            lo, hi = b.latency_ms
            return float(self._rng.integers(lo, hi + 1))
        return float(b.latency_ms)

    def apply(self, event: InputEvent) -> None:
        """In-place scene_step; the served scene uses this directly."""
        self.advance(event.at)
        at = max(self.now_ms, self.event_log[-1]["at"] if self.event_log else 0.0)
        if isinstance(event, PointerEvent):
            self._log(at, {"type": "pointer", "x": event.x, "y": event.y, "buttons": event.buttons})
            self._pointer(event, at)
        else:
            self._log(at, {"type": "key", "keysym": event.keysym, "pressed": event.pressed})
            self._key(event, at)
        self.advance(at)

    def _pointer(self, ev: PointerEvent, at: float) -> None:
        self.cursor = (ev.x, ev.y)
        pressed = ev.buttons & ~self.buttons
        released = self.buttons & ~ev.buttons
        self.buttons = ev.buttons
        target = self.hit(ev.x, ev.y)
        target_id = target.id if target is not None else None

        if pressed & BUTTON_LEFT:
            lp = self.last_press
            is_double = (
                lp is not None and at - lp[0] <= DOUBLE_CLICK_MS
                and float(np.hypot(ev.x - lp[1], ev.y - lp[2])) <= DOUBLE_CLICK_PX
                and lp[3] == target_id
            )
            self.last_press = None if is_double else (at, ev.x, ev.y, target_id)

            if target is None:
                if self.focus is not None:
                    self._transition(at, self.focus, "blur")
                    self.focus = None
            elif target.kind == "text-area":
                if self.focus != target.id:
                    self.focus = target.id
                    self._transition(at, target.id, "focus")

            b = target.behaviour if target is not None else None
            if b is not None:
                if b.on == "click" or (b.on == "double-click" and is_double):
                    self.armed = target.id

        if released & BUTTON_LEFT and self.armed is not None:
            armed = self.element(self.armed)
            self.armed = None
            if armed is not None and target_id == armed.id and armed.behaviour is not None:
                b = armed.behaviour
                self.pending.append(_Pending(at + self._latency(b), armed.id, b))

    def _key(self, ev: KeyEvent, at: float) -> None:
        if ev.keysym in SHIFT_KEYSYMS:
            self.shift = ev.pressed
            return
        if not ev.pressed:
            return
        focused = self.element(self.focus)
        if focused is None or focused.kind != "text-area" or not self.is_visible(focused):
            return
        if ev.keysym == XK_BackSpace:
            focused.text = focused.text[:-1]
            return
        ch = keysym_to_char(ev.keysym, self.shift)
        if ch is not None and ch != "\t":
            focused.text += ch


# ─── Pure operations ──────────────────────────────────────────────────────────

def scene_step(scene: Scene, event: InputEvent) -> Scene:
    nxt = scene.copy()
    nxt.apply(event)
    return nxt


def scene_advance(scene: Scene, now: float) -> Scene:
    nxt = scene.copy()
    nxt.advance(now)
    return nxt


def _lighten(rgb: RGB, delta: int) -> RGB:
    return tuple(int(min(255, max(0, c + delta))) for c in rgb)  # type: ignore[return-value]


def render(scene: Scene, font: Optional[BitmapFont] = None) -> Frame:
    font = font or default_font()
    canvas = np.empty((scene.height, scene.width, 4), dtype=np.uint8)
    canvas[..., :3] = scene.background
    canvas[..., 3] = 255
    hovered = scene.hovered()

    for el in scene.elements:
        if not scene.is_visible(el):
            continue
        r = el.rect
        clip = (r.x, r.y, r.right, r.bottom)
        st = el.style
        fill = _lighten(st.base, st.highlight) if el is hovered and st.highlight else st.base

        if el.kind in ("icon", "button", "window", "text-area"):
            canvas[r.y:r.bottom, r.x:r.right, :3] = fill

        if el.kind == "icon" and el.label:
            gx = r.x + (r.w - GLYPH_W) // 2
            gy = r.y + (r.h - GLYPH_H) // 2
            font.draw(canvas, gx, gy, el.label[0], st.text, clip)
        elif el.kind == "button":
            tx = r.x + (r.w - font.text_width(el.label)) // 2
            ty = r.y + (r.h - GLYPH_H) // 2
            font.draw(canvas, tx, ty, el.label, st.text, clip)
        elif el.kind == "window":
            font.draw(canvas, r.x + TITLE_INSET, r.y + TITLE_INSET, el.label, st.text, clip)
        elif el.kind == "text-area":
            content = el.text if el.text else el.placeholder
            for i, line in enumerate(content.split("\n")):
                font.draw(canvas, r.x + TEXT_INSET, r.y + TEXT_INSET + i * LINE_PITCH,
                          line, st.text, clip)
        elif el.kind == "text-label":
            font.draw(canvas, r.x, r.y, el.label, st.text, clip)
        elif el.kind == "link":
            font.draw(canvas, r.x, r.y, el.label, fill if st.link else st.text, clip)

    return Frame(scene.width, scene.height, canvas, scene.now_ms)


def scene_fingerprint(scene: Scene) -> dict:
    """Final-state digest: what two runs must agree on to count as the same outcome."""
    transitions = [
        {k: v for k, v in e.items() if k not in ("seq", "at", "source")}
        for e in scene.event_log if e["type"] == "transition"
    ]
    return {
        "focus": scene.focus,
        "elements": {el.id: {"visible": scene.is_visible(el), "text": el.text}
                     for el in scene.elements},
        "transitions": transitions,
    }


# ─── Validation ───────────────────────────────────────────────────────────────

def validate_scene(scene: Scene) -> Scene:
    if scene.width <= 0 or scene.height <= 0:
        raise SceneInvalid(f"scene size {scene.width}x{scene.height} must be positive")
    seen: dict[str, Element] = {}
    for el in scene.elements:
        if el.id in seen:
            raise SceneInvalid(f"duplicate element id {el.id!r}", element=el.id)
        if el.kind not in KINDS:
            raise SceneInvalid(f"element {el.id!r} has unknown kind {el.kind!r}", element=el.id)
        if not el.rect.inside(scene.width, scene.height):
            raise SceneInvalid(f"element {el.id!r} rect {el.rect.as_list()} outside "
                               f"{scene.width}x{scene.height} scene", element=el.id)
        if el.parent is not None:
            parent = seen.get(el.parent)
            if parent is None or parent.kind != "window":
                raise SceneInvalid(f"element {el.id!r} parent {el.parent!r} must be an earlier window",
                                   element=el.id)
        seen[el.id] = el
    for el in scene.elements:
        b = el.behaviour
        if b is None:
            continue
        for ref in (b.show, b.hide):
            if ref is not None and ref not in seen:
                raise SceneInvalid(f"element {el.id!r} behaviour references unknown {ref!r}",
                                   element=el.id)
    if scene.focus is not None and scene.focus not in seen:
        raise SceneInvalid(f"focus {scene.focus!r} is not an element")
    return scene


# ─── Scene files ──────────────────────────────────────────────────────────────

def _check_rgb(v: tuple[int, int, int]) -> tuple[int, int, int]:
    if any(not 0 <= c <= 255 for c in v):
        raise ValueError(f"colour {v} outside 0–255")
    return v


class _StyleDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    base:      Optional[tuple[int, int, int]] = None
    text:      Optional[tuple[int, int, int]] = None
    highlight: Optional[int] = None
    link:      Optional[bool] = None

    @field_validator("base", "text")
    @classmethod
    def _rgb(cls, v):
        return _check_rgb(v) if v is not None else v


class _BehaviourDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    on:         Literal["click", "double-click"] = "double-click"
    show:       Optional[str] = None
    hide:       Optional[str] = None
    latency_ms: Union[int, tuple[int, int]] = Field(default=0)
    event:      Optional[str] = None


class _ElementDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id:          str = Field(min_length=1)
    kind:        Literal["icon", "button", "window", "text-area", "text-label", "link"]
    rect:        tuple[int, int, int, int]
    label:       str = ""
    style:       Optional[_StyleDoc] = None
    behaviour:   Optional[_BehaviourDoc] = None
    parent:      Optional[str] = None
    visible:     Optional[bool] = None
    placeholder: str = ""


class _SceneDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    width:      int = Field(gt=0, le=4096)
    height:     int = Field(gt=0, le=4096)
    background: tuple[int, int, int] = (0, 0, 0)
    elements:   list[_ElementDoc] = Field(default_factory=list)
    rng_seed:   Optional[int] = None

    @field_validator("background")
    @classmethod
    def _rgb(cls, v):
        return _check_rgb(v)


def _element_from_doc(doc: _ElementDoc) -> Element:
    st = DEFAULT_STYLES[doc.kind]
    if doc.style is not None:
        st = Style(
            base=doc.style.base if doc.style.base is not None else st.base,
            text=doc.style.text if doc.style.text is not None else
                 (doc.style.base if doc.kind == "link" and doc.style.base is not None else st.text),
            highlight=doc.style.highlight if doc.style.highlight is not None else st.highlight,
            link=doc.style.link if doc.style.link is not None else st.link,
        )
    beh = None
    if doc.behaviour is not None:
        bd = doc.behaviour
        beh = Behaviour(on=bd.on, show=bd.show, hide=bd.hide,
                        latency_ms=tuple(bd.latency_ms) if isinstance(bd.latency_ms, tuple) else bd.latency_ms,
                        event=bd.event)
    visible = doc.visible if doc.visible is not None else doc.kind != "window"
    return Element(id=doc.id, kind=doc.kind, rect=Rect.from_list(doc.rect), label=doc.label,
                   style=st, behaviour=beh, parent=doc.parent, visible=visible,
                   placeholder=doc.placeholder)


def scene_from_dict(raw: dict, source: str = "<scene>") -> Scene:
    try:
        doc = _SceneDoc.model_validate(raw)
    except ValidationError as exc:
        raise ParseError(f"{source}: {exc}", path=source) from exc
    scene = Scene(width=doc.width, height=doc.height, background=tuple(doc.background),
                  elements=[_element_from_doc(e) for e in doc.elements], rng_seed=doc.rng_seed)
    return validate_scene(scene)


def resolve_scene_path(name_or_path: Union[str, Path]) -> Path:
    """A bare name like "demo" refers to scenes/demo.json."""
    p = Path(name_or_path)
    if p.suffix == "" and not p.exists():
        return SCENES_DIR / f"{p.name}.json"
    return p


def load_scene(name_or_path: Union[str, Path]) -> Scene:
    path = resolve_scene_path(name_or_path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"scene file not found: {path}", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}", path=str(path)) from exc
    return scene_from_dict(raw, str(path))


# ─── Randomized scenes ────────────────────────────────────────────────────────

def random_scene(rng: np.random.Generator, width: int = 320, height: int = 200,
                 count: int = 6, kinds: tuple[str, ...] = ("icon", "button"),
                 labelled: bool = True, gap: int = 8, margin: int = 4) -> Scene:
    """
    Non-overlapping elements of the given kinds, each darker than a light
    background and separated by at least `gap` pixels.  Sizes stay inside the
    default geometric rule ranges for icons and buttons.
    """
    background = tuple(int(v) for v in rng.integers(180, 241, size=3))
    elements: list[Element] = []
    placed: list[Rect] = []
    for i in range(count):
        kind = str(kinds[int(rng.integers(len(kinds)))])
        for _attempt in range(200):
            if kind == "icon":
                w = int(rng.integers(12, 49))
                h = int(np.clip(round(w * rng.uniform(0.8, 1.25)), 12, 128))
            elif kind == "button":
                h = int(rng.integers(16, 41))
                w = int(round(h * rng.uniform(1.6, 8.0)))
            else:
                w, h = int(rng.integers(20, 80)), int(rng.integers(10, 30))
            if w + 2 * margin >= width or h + 2 * margin >= height:
                continue
            x = int(rng.integers(margin, width - margin - w + 1))
            y = int(rng.integers(margin, height - margin - h + 1))
            rect = Rect(x, y, w, h)
            if all(rect.x >= p.right + gap or p.x >= rect.right + gap or
                   rect.y >= p.bottom + gap or p.y >= rect.bottom + gap for p in placed):
                break
        else:
            continue
        placed.append(rect)
        base = tuple(int(v) for v in rng.integers(20, 121, size=3))
        style = Style(base=base, text=(250, 250, 250), highlight=int(rng.integers(16, 40)))
        label = ""
        if labelled:
            letters = "ABCDEFGHJKLMNOPRSTUVWXYZ"
            label = "".join(letters[int(j)] for j in rng.integers(len(letters), size=int(rng.integers(1, 6))))
        elements.append(Element(id=f"{kind}-{i}", kind=kind, rect=rect, label=label, style=style))
    return validate_scene(Scene(width=width, height=height, background=background, elements=elements))


# ─── Server ───────────────────────────────────────────────────────────────────

class SimdeskBackend(FramebufferBackend):
    """Feeds RFB input into the scene and answers update requests with renders."""

    def __init__(self, scene: Scene, clock: Optional[Callable[[], float]] = None):
        self._lock = threading.RLock()
        self._scene = scene.copy()
        start = monotonic_ms()
        self._clock = clock or (lambda: monotonic_ms() - start)

    @property
    def size(self) -> tuple[int, int]:
        with self._lock:
            return (self._scene.width, self._scene.height)

    def framebuffer(self) -> np.ndarray:
        with self._lock:
            self._scene.advance(self._clock())
            return render(self._scene).pixels

    def pointer(self, buttons: int, x: int, y: int) -> None:
        with self._lock:
            if not (0 <= x < self._scene.width and 0 <= y < self._scene.height):
                logger.warning("dropping out-of-bounds pointer event (%d, %d)", x, y)
                return
            self._scene.apply(PointerEvent(x, y, buttons, self._clock()))

    def key(self, down: bool, keysym: int) -> None:
        with self._lock:
            self._scene.apply(KeyEvent(keysym, down, self._clock()))

    def snapshot(self) -> Scene:
        with self._lock:
            self._scene.advance(self._clock())
            return self._scene.copy()

    def replace_scene(self, scene: Scene) -> None:
        with self._lock:
            self._scene = scene.copy()


class ServerHandle:
    """A running simdesk server. Stoppable; exposes the live scene for assertions."""

    def __init__(self, server: RFBServer, backend: SimdeskBackend):
        self._server = server
        self._backend = backend

    @property
    def port(self) -> int:
        return self._server.port

    @property
    def scene(self) -> Scene:
        return self._backend.snapshot()

    @property
    def event_log(self) -> list[dict]:
        return self._backend.snapshot().event_log

    @property
    def message_counts(self):
        return self._server.message_counts

    @property
    def clients_served(self) -> int:
        return self._server.clients_served

    def set_scene(self, scene: Scene) -> None:
        self._backend.replace_scene(scene)

    def stop(self) -> None:
        self._server.stop()

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(scene: Scene, port: int = 0, host: str = "127.0.0.1",
          clock: Optional[Callable[[], float]] = None, name: str = "simdesk") -> ServerHandle:
    backend = SimdeskBackend(validate_scene(scene), clock)
    server = RFBServer(backend, host=host, port=port, name=name).start()
    return ServerHandle(server, backend)
