#!/usr/bin/env python3
"""
agent_actions.py — Unit actions, executed with real-time verification.

The top abstraction layer.  Each UnitAction is carried out through the
layers below it and never writes protocol bytes itself:

    UnitAction ─▶ ActionExecutor
                    capture_frame ─▶ resolve_element (agent_profile)
                    plan_trajectory / click_events / keystroke_schedule (humanizer)
                    play() ─▶ Channel.send_pointer / send_key
                    capture_frame ─▶ verification predicate

Vocabulary:
    open_app(element)                 activate an app icon, expect its window
    click(element, button, clicks)    humanized move + click(s)
    type_text(text)                   humanized keystrokes into the focused field
    read_text(element)                OCR of the element's rect  → data.text
    find_links()                      link-coloured runs          → data.links
    wait(ms)                          idle micro-movements for ms
    send_mail(to, subject, body)      composite, expands via the profile's roles

Verification and retries (click / open_app):
    attempt k = 0..retries:
      capture; when k > 0 and the expected element is already there → retried(k)
      resolve the element           (not found → sleep recheck_ms, next attempt)
      move onto it, capture the hover frame, click
      expects set → sleep recheck_ms, capture, the expected element must resolve
      otherwise   → the hover frame must show the target highlighted
    all attempts used → failed(reason)

SessionClosed is never swallowed; it ends the script.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Annotated, Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

import humanizer
import vision
from agent_profile import (SEND_MAIL_ROLES, ElementNotFound, EnvironmentProfile, FrameAnalysis,
                           resolve_element)
from desk_types import Frame, InputEvent, PointerEvent, Rect, monotonic_ms
from humanizer import HumanizerConfig
from lifesim_errors import LifeSimError, ParseError
from rfb_channel import Channel

logger = logging.getLogger("lifesim.actions")

HIGHLIGHT_MIN_DIFF: float = 2.0

ACTION_KINDS = ("open_app", "click", "type_text", "read_text", "find_links", "wait", "send_mail")


class EmptyScript(LifeSimError):
    code = "empty-script"


class VerificationFailed(LifeSimError):
    code = "verification-failed"


# ─── Unit actions ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class UnitAction:
    action:      str
    element:     Optional[str] = None
    button:      Optional[str] = None
    clicks:      Optional[int] = None
    text:        Optional[str] = None
    ms:          int = 0
    to:          Optional[str] = None
    subject:     Optional[str] = None
    body:        Optional[str] = None
    best_effort: bool = False

    def describe(self) -> str:
        if self.action in ("open_app", "read_text"):
            return f"{self.action}({self.element})"
        if self.action == "click":
            return f"click({self.element}, {self.button or 'default'}, {self.clicks or 'default'})"
        if self.action == "type_text":
            return f"type_text({self.text!r})"
        if self.action == "wait":
            return f"wait({self.ms})"
        if self.action == "send_mail":
            return f"send_mail(to={self.to!r}, subject={self.subject!r})"
        return f"{self.action}()"

    def as_dict(self) -> dict:
        out: dict = {"action": self.action}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "action" or value is None or (f.name == "ms" and self.action != "wait"):
                continue
            if f.name == "best_effort" and not value:
                continue
            out[f.name] = value
        return out


def open_app(element: str, **kw) -> UnitAction:
    return UnitAction("open_app", element=element, **kw)


def click(element: str, button: Optional[str] = None, clicks: Optional[int] = None, **kw) -> UnitAction:
    return UnitAction("click", element=element, button=button, clicks=clicks, **kw)


def type_text(text: str, **kw) -> UnitAction:
    return UnitAction("type_text", text=text, **kw)


def read_text(element: str, **kw) -> UnitAction:
    return UnitAction("read_text", element=element, **kw)


def find_links(**kw) -> UnitAction:
    return UnitAction("find_links", **kw)


def wait(ms: int, **kw) -> UnitAction:
    return UnitAction("wait", ms=int(ms), **kw)


def send_mail(to: str, subject: str, body: str, **kw) -> UnitAction:
    return UnitAction("send_mail", to=to, subject=subject, body=body, **kw)


def expand_send_mail(action: UnitAction, profile: EnvironmentProfile) -> list[UnitAction]:
    r = {role: profile.role("send_mail", role) for role in SEND_MAIL_ROLES}
    return [
        open_app(r["mail-client"]),
        click(r["compose"]),
        click(r["to-field"]), type_text(action.to or ""),
        click(r["subject-field"]), type_text(action.subject or ""),
        click(r["body-field"]), type_text(action.body or ""),
        click(r["send"]),
    ]


# ─── Script files ─────────────────────────────────────────────────────────────

class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid")
    best_effort: bool = False


class _OpenApp(_Base):
    action: Literal["open_app"]
    element: str


class _Click(_Base):
    action: Literal["click"]
    element: str
    button: Optional[Literal["left", "middle", "right"]] = None
    clicks: Optional[int] = Field(default=None, ge=1, le=3)


class _TypeText(_Base):
    action: Literal["type_text"]
    text: str


class _ReadText(_Base):
    action: Literal["read_text"]
    element: str


class _FindLinks(_Base):
    action: Literal["find_links"]


class _Wait(_Base):
    action: Literal["wait"]
    ms: int = Field(ge=0)


class _SendMail(_Base):
    action: Literal["send_mail"]
    to: str
    subject: str
    body: str


_ScriptDoc = TypeAdapter(list[Annotated[
    Union[_OpenApp, _Click, _TypeText, _ReadText, _FindLinks, _Wait, _SendMail],
    Field(discriminator="action"),
]])


def parse_script(raw: list, source: str = "<script>") -> list[UnitAction]:
    try:
        docs = _ScriptDoc.validate_python(raw)
    except ValidationError as exc:
        raise ParseError(f"{source}: {exc}", path=source) from exc
    return [UnitAction(**d.model_dump()) for d in docs]


def load_script(path: Union[str, Path]) -> list[UnitAction]:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"script file not found: {p}", path=str(p)) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: {exc}", path=str(p)) from exc
    return parse_script(raw, str(p))


def dump_script(actions: list[UnitAction], path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps([a.as_dict() for a in actions], indent=2, ensure_ascii=False) + "\n",
                 encoding="utf-8")
    return p


# ─── Budget and reports ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class ActionBudget:
    retries:    int = 3
    recheck_ms: float = 250.0

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "ActionBudget":
        raw = dict(raw or {})
        budget = cls(**{k: raw[k] for k in ("retries", "recheck_ms") if k in raw})
        if budget.retries < 0 or budget.recheck_ms < 0:
            raise ValueError("action budget values must be non-negative")
        return budget


@dataclass(frozen=True)
class Outcome:
    status:  str                     # "ok" | "retried" | "failed"
    retries: int = 0
    reason:  Optional[str] = None

    @classmethod
    def success(cls, attempt: int) -> "Outcome":
        return cls("ok") if attempt == 0 else cls("retried", attempt)

    @property
    def ok(self) -> bool:
        return self.status != "failed"

    def as_dict(self) -> dict:
        out: dict = {"status": self.status}
        if self.status == "retried":
            out["retries"] = self.retries
        if self.reason:
            out["reason"] = self.reason
        return out

    def __str__(self) -> str:
        if self.status == "retried":
            return f"retried({self.retries})"
        if self.status == "failed":
            return f"failed({self.reason})"
        return "ok"


@dataclass
class ActionReport:
    action:          UnitAction
    outcome:         Outcome
    attempts:        int = 1
    wall_ms:         float = 0.0
    frames_examined: int = 0
    data:            dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "action": self.action.as_dict(),
            "outcome": self.outcome.as_dict(),
            "attempts": self.attempts,
            "wall_ms": round(self.wall_ms, 1),
            "frames_examined": self.frames_examined,
        }
        if self.data:
            out["data"] = self.data
        return out


# ─── Playback ─────────────────────────────────────────────────────────────────

def play(session: Channel, events: list[InputEvent],
         sleep: Callable[[float], None] = time.sleep) -> None:
    """Send events in real time, honouring their relative timestamps."""
    if not events:
        return
    t0 = monotonic_ms()
    base = events[0].at
    w, h = session.width, session.height
    for ev in events:
        delay = t0 + (ev.at - base) - monotonic_ms()
        if delay > 0:
            sleep(delay / 1000.0)
        if isinstance(ev, PointerEvent):
            x = min(max(ev.x, 0), w - 1)
            y = min(max(ev.y, 0), h - 1)
            session.send_pointer(PointerEvent(x, y, ev.buttons, ev.at))
        else:
            session.send_key(ev)


def highlight_diff(before: Frame, after: Frame, rect: Rect) -> float:
    a = before.luma()[rect.y:rect.bottom, rect.x:rect.right].astype(np.int16)
    b = after.luma()[rect.y:rect.bottom, rect.x:rect.right].astype(np.int16)
    return float(np.abs(a - b).mean()) if a.size else 0.0


# ─── Executor ─────────────────────────────────────────────────────────────────

class ActionExecutor:
    """Runs unit actions on one session. One executor per session, never shared."""

    def __init__(self, session: Channel, profile: EnvironmentProfile,
                 cfg: Optional[HumanizerConfig] = None, budget: ActionBudget = ActionBudget(),
                 rng: Optional[np.random.Generator] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.session = session
        self.profile = profile
        self.cfg = profile.humanizer_config(cfg)
        self.budget = budget
        self.rng = rng if rng is not None else self.cfg.rng()
        self.sleep = sleep
        self._frames = 0

    # ── Primitives ────────────────────────────────────────────────────────────

    def capture(self) -> Frame:
        self._frames += 1
        return self.session.capture_frame()

    @property
    def bounds(self) -> tuple[int, int]:
        return (self.session.width, self.session.height)

    def aim(self, rect: Rect) -> tuple[int, int]:
        """A point near the centre of `rect`, inside its middle third."""
        cx, cy = rect.center
        dx = int(self.rng.integers(-(rect.w // 6), rect.w // 6 + 1))
        dy = int(self.rng.integers(-(rect.h // 6), rect.h // 6 + 1))
        return (min(max(cx + dx, rect.x), rect.right - 1), min(max(cy + dy, rect.y), rect.bottom - 1))

    def move_to(self, point: tuple[int, int]) -> None:
        traj = humanizer.plan_trajectory(self.session.pointer_position, point, self.cfg, self.rng,
                                         bounds=self.bounds)
        play(self.session, traj.pointer_events(), self.sleep)

    def click_at(self, point: tuple[int, int], button: str, clicks: int) -> None:
        events = humanizer.click_events(point, button, clicks, self.cfg, self.rng)
        play(self.session, events, self.sleep)

    def type_keys(self, text: str) -> None:
        play(self.session, humanizer.keystroke_schedule(text, self.cfg, self.rng), self.sleep)

    def idle(self, ms: float) -> None:
        start = monotonic_ms()
        traj = humanizer.idle_jitter(self.session.pointer_position, ms, self.cfg, self.rng,
                                     bounds=self.bounds)
        play(self.session, traj.pointer_events(self.session.button_mask), self.sleep)
        remaining = ms - (monotonic_ms() - start)
        if remaining > 0:
            self.sleep(remaining / 1000.0)

    def _resolves(self, frame: Frame, element_id: str) -> bool:
        try:
            resolve_element(frame, self.profile, element_id)
            return True
        except ElementNotFound:
            return False

    # ── Actions ───────────────────────────────────────────────────────────────

    def execute(self, action: UnitAction) -> ActionReport:
        self._frames = 0
        start = monotonic_ms()
        handler = {
            "open_app": self._activate, "click": self._activate,
            "type_text": self._type_text, "read_text": self._read_text,
            "find_links": self._find_links, "wait": self._wait, "send_mail": self._send_mail,
        }.get(action.action)
        if handler is None:
            raise ParseError(f"unknown action {action.action!r}")
        outcome, attempts, data = handler(action)
        report = ActionReport(action, outcome, attempts, monotonic_ms() - start, self._frames, data)
        logger.info("%s → %s (%d attempts, %.0f ms, %d frames)", action.describe(), outcome,
                    attempts, report.wall_ms, report.frames_examined)
        return report

    def _activate(self, action: UnitAction) -> tuple[Outcome, int, dict]:
        spec = self.profile.element(action.element)
        button = action.button or spec.button
        clicks = action.clicks or spec.clicks
        expects = spec.expects if spec.verify == "appear" else None
        recheck_s = self.budget.recheck_ms / 1000.0
        reason = ElementNotFound.code
        attempts = 0
        for k in range(self.budget.retries + 1):
            attempts += 1
            frame = self.capture()
            if k > 0 and expects is not None and self._resolves(frame, expects):
                return Outcome.success(k), attempts, {}
            try:
                rect = resolve_element(frame, self.profile, spec.id)
            except ElementNotFound:
                reason = ElementNotFound.code
                self.sleep(recheck_s)
                continue
            was_inside = rect.contains(*self.session.pointer_position)
            point = self.aim(rect)
            self.move_to(point)
            hover = self.capture()
            highlighted = was_inside or highlight_diff(frame, hover, rect) > HIGHLIGHT_MIN_DIFF
            self.click_at(point, button, clicks)
            data = {"rect": rect.as_list(), "point": list(point)}

            if expects is not None:
                self.sleep(recheck_s)
                if self._resolves(self.capture(), expects):
                    return Outcome.success(k), attempts, data
                reason = VerificationFailed.code
                continue
            if spec.verify == "highlight" and not highlighted:
                reason = VerificationFailed.code
                continue
            return Outcome.success(k), attempts, data
        return Outcome("failed", attempts - 1, reason), attempts, {}

    def _type_text(self, action: UnitAction) -> tuple[Outcome, int, dict]:
        self.type_keys(action.text or "")
        return Outcome("ok"), 1, {}

    def _read_text(self, action: UnitAction) -> tuple[Outcome, int, dict]:
        recheck_s = self.budget.recheck_ms / 1000.0
        for k in range(self.budget.retries + 1):
            frame = self.capture()
            try:
                rect = resolve_element(frame, self.profile, action.element)
            except ElementNotFound:
                self.sleep(recheck_s)
                continue
            text = vision.ocr_text(frame, rect, ink_delta=self.profile.params.ink_delta)
            return Outcome.success(k), k + 1, {"rect": rect.as_list(), "text": text}
        return Outcome("failed", self.budget.retries, ElementNotFound.code), self.budget.retries + 1, {}

    def _find_links(self, action: UnitAction) -> tuple[Outcome, int, dict]:
        analysis = FrameAnalysis(self.capture(), self.profile)
        return Outcome("ok"), 1, {"links": [lk.as_dict() for lk in analysis.links]}

    def _wait(self, action: UnitAction) -> tuple[Outcome, int, dict]:
        self.idle(action.ms)
        return Outcome("ok"), 1, {}

    def _send_mail(self, action: UnitAction) -> tuple[Outcome, int, dict]:
        steps = []
        worst = 0
        frames = 0
        for sub in expand_send_mail(action, self.profile):
            report = self.execute(sub)
            frames += report.frames_examined
            steps.append(report.as_dict())
            if not report.outcome.ok:
                self._frames = frames
                return (Outcome("failed", report.outcome.retries,
                                f"{sub.describe()}: {report.outcome.reason}"),
                        len(steps), {"steps": steps})
            worst = max(worst, report.outcome.retries)
        self._frames = frames
        return Outcome.success(worst), len(steps), {"steps": steps}


# ─── Functional API ───────────────────────────────────────────────────────────

def execute_action(session: Channel, action: UnitAction, profile: EnvironmentProfile,
                   cfg: Optional[HumanizerConfig] = None, budget: ActionBudget = ActionBudget(),
                   rng: Optional[np.random.Generator] = None) -> ActionReport:
    return ActionExecutor(session, profile, cfg, budget, rng).execute(action)


def run_script(session: Channel, script: list[UnitAction], profile: EnvironmentProfile,
               cfg: Optional[HumanizerConfig] = None, budget: ActionBudget = ActionBudget(),
               rng: Optional[np.random.Generator] = None,
               executor: Optional[ActionExecutor] = None) -> list[ActionReport]:
    """Run actions in order; stop after the first failure unless it was best-effort."""
    if not script:
        raise EmptyScript("script has no actions")
    executor = executor or ActionExecutor(session, profile, cfg, budget, rng)
    reports: list[ActionReport] = []
    for action in script:
        report = executor.execute(action)
        reports.append(report)
        if not report.outcome.ok and not action.best_effort:
            logger.warning("script stopped at %s: %s", action.describe(), report.outcome)
            break
    return reports
