#!/usr/bin/env python3
"""
scenario_canvas.py — Timed interaction canvases generated from the avatar graph,
and their compilation into per-agent scripts.

Generation (generate_canvas)
────────────────────────────
  window [start, end] ∩ workday slices (09:00–18:00 each day) = active time T
  for every relation (graph order):
      Poisson process, rate = rate_base × weight mails/hour over T
      each mail:  sender uniform over the pair
                  tone      informel iff the relation is `friend`
                  polarity  neutre .6 | positif .3 | négatif .1
                  keywords  from a shared project, else a shared group name,
                            else the relation kind
                  reply     with probability reply_prob, after a log-normal
                            delay (median 20 min); replies past the window are dropped
  for every avatar whose role has solo activities: one Poisson process per app

Compilation (compile_canvas)
────────────────────────────
  mail      → send_mail on the sender's agent at the mail's offset
  activity  → open_app (best-effort) on the avatar's agent
  reply     → happens-before edge original → reply
  gaps      → wait actions of at most max_wait_ms up to the window end

Canvas file (JSON):
    {"window": {"start": ISO, "end": ISO},
     "interactions": [{"id", "at", "kind", "sender", "recipients", "context",
                       "reply_to", "subject", "body", "element"}]}
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from datetime import date, datetime, time as dtime, timedelta
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from agent_actions import UnitAction, dump_script, open_app, send_mail, wait
from lifesim_errors import LifeSimError, ParseError
from scenario_graph import AvatarGraph, Relation
from textgen import POLARITIES, TextContext, subject_line

logger = logging.getLogger("lifesim.scenario")

BodyFn = Callable[[TextContext, Optional[int]], str]


class EmptyWindow(LifeSimError):
    code = "empty-window"


class MissingEndpoint(LifeSimError):
    code = "missing-endpoint"

    def __init__(self, avatar_id: str):
        super().__init__(f"avatar {avatar_id!r} has no machine endpoint", avatar=avatar_id)
        self.avatar_id = avatar_id


class MissingProfile(LifeSimError):
    code = "missing-profile"

    def __init__(self, avatar_id: str, profile: Optional[str]):
        super().__init__(f"avatar {avatar_id!r} has no usable profile ({profile!r})",
                         avatar=avatar_id, profile=profile)
        self.avatar_id = avatar_id


class MissingBody(LifeSimError):
    code = "missing-body"

    def __init__(self, interaction_id: str):
        super().__init__(f"interaction {interaction_id} has no body and no generator is configured",
                         interaction=interaction_id)
        self.interaction_id = interaction_id


# ─── Parameters ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CanvasParams:
    rate_base:         float = 0.5            # mails / hour per unit weight
    reply_prob:        float = 0.4
    reply_median_min:  float = 20.0
    reply_sigma:       float = 0.8
    polarity_weights:  dict = field(default_factory=lambda: {"neutre": 0.6, "positif": 0.3,
                                                             "négatif": 0.1})
    keywords_per_mail: int = 2
    day_start:         str = "09:00"
    day_end:           str = "18:00"
    max_wait_ms:       int = 600_000
    role_activities:   dict = field(default_factory=dict)   # role → {element id: opens / hour}

    def __post_init__(self) -> None:
        if self.rate_base < 0 or not 0.0 <= self.reply_prob <= 1.0:
            raise ValueError("rate_base must be ≥ 0 and reply_prob in [0, 1]")
        if set(self.polarity_weights) - set(POLARITIES):
            raise ValueError(f"polarity weights must use {POLARITIES}")
        if self.max_wait_ms <= 0 or self.keywords_per_mail < 1:
            raise ValueError("max_wait_ms and keywords_per_mail must be positive")

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "CanvasParams":
        raw = dict(raw or {})
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown canvas fields: {sorted(unknown)}")
        return cls(**raw)


# ─── Canvas model ─────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Interaction:
    id:         str
    at:         datetime
    kind:       str                              # "email" | "activity"
    sender:     str
    recipients: tuple[str, ...] = ()
    context:    Optional[TextContext] = None
    reply_to:   Optional[str] = None
    subject:    str = ""
    body:       Optional[str] = None
    element:    Optional[str] = None

    def as_dict(self) -> dict:
        out: dict[str, Any] = {
            "id": self.id, "at": self.at.isoformat(timespec="milliseconds"),
            "kind": self.kind, "sender": self.sender, "recipients": list(self.recipients),
        }
        if self.context is not None:
            out["context"] = self.context.model_dump(mode="json", exclude_none=True)
        for name in ("reply_to", "body", "element"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        if self.subject:
            out["subject"] = self.subject
        return out


@dataclass
class ScenarioCanvas:
    start:        datetime
    end:          datetime
    interactions: list[Interaction] = field(default_factory=list)

    def get(self, interaction_id: str) -> Optional[Interaction]:
        for i in self.interactions:
            if i.id == interaction_id:
                return i
        return None

    def emails(self) -> list[Interaction]:
        return [i for i in self.interactions if i.kind == "email"]

    def as_dict(self) -> dict:
        return {"window": {"start": self.start.isoformat(timespec="milliseconds"),
                           "end": self.end.isoformat(timespec="milliseconds")},
                "interactions": [i.as_dict() for i in self.interactions]}


class _WindowDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    start: datetime
    end:   datetime


class _InteractionDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id:         str
    at:         datetime
    kind:       Literal["email", "activity"]
    sender:     str
    recipients: list[str] = Field(default_factory=list)
    context:    Optional[TextContext] = None
    reply_to:   Optional[str] = None
    subject:    str = ""
    body:       Optional[str] = None
    element:    Optional[str] = None


class _CanvasDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    window:       _WindowDoc
    interactions: list[_InteractionDoc] = Field(default_factory=list)


def canvas_from_dict(raw: dict, source: str = "<canvas>") -> ScenarioCanvas:
    try:
        doc = _CanvasDoc.model_validate(raw)
    except ValidationError as exc:
        raise ParseError(f"{source}: {exc.errors()[0]['msg']}", path=source) from exc
    return ScenarioCanvas(doc.window.start, doc.window.end, [
        Interaction(d.id, d.at, d.kind, d.sender, tuple(d.recipients), d.context, d.reply_to,
                    d.subject, d.body, d.element)
        for d in doc.interactions
    ])


def load_canvas(path: Union[str, Path]) -> ScenarioCanvas:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{p}: {exc}", path=str(p)) from exc
    return canvas_from_dict(raw, str(p))


def dump_canvas(canvas: ScenarioCanvas, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(canvas.as_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return p


def canvas_violations(canvas: ScenarioCanvas, graph: AvatarGraph) -> list[str]:
    """Every broken canvas invariant, as readable strings (empty when valid)."""
    out = []
    by_id = {i.id: i for i in canvas.interactions}
    for i in canvas.interactions:
        if not canvas.start <= i.at <= canvas.end:
            out.append(f"{i.id}: {i.at} outside the window")
        if i.sender not in graph.avatars:
            out.append(f"{i.id}: unknown sender {i.sender}")
        if i.sender in i.recipients:
            out.append(f"{i.id}: {i.sender} mails themself")
        if i.kind == "email":
            for r in i.recipients:
                if r not in graph.avatars or not graph.connected(i.sender, r):
                    out.append(f"{i.id}: {i.sender} and {r} share no relation or group")
        if i.reply_to is not None:
            orig = by_id.get(i.reply_to)
            if orig is None:
                out.append(f"{i.id}: replies to unknown {i.reply_to}")
            elif not i.at > orig.at:
                out.append(f"{i.id}: reply not after {orig.id}")
    return out


# ─── Workday time ─────────────────────────────────────────────────────────────

def workday_slices(start: datetime, end: datetime, day_start: str = "09:00",
                   day_end: str = "18:00") -> list[tuple[datetime, datetime]]:
    """The parts of [start, end] that fall within working hours, in order."""
    ds, de = dtime.fromisoformat(day_start), dtime.fromisoformat(day_end)
    slices = []
    day: date = start.date()
    while day <= end.date():
        s = max(start, datetime.combine(day, ds, tzinfo=start.tzinfo))
        e = min(end, datetime.combine(day, de, tzinfo=start.tzinfo))
        if e > s:
            slices.append((s, e))
        day += timedelta(days=1)
    return slices


class _ActiveClock:
    """Maps milliseconds of working time onto wall-clock datetimes."""

    def __init__(self, slices: list[tuple[datetime, datetime]]):
        self.slices = slices
        self.lengths = [int((e - s) / timedelta(milliseconds=1)) for s, e in slices]
        self.total_ms = sum(self.lengths)

    def at(self, active_ms: int) -> datetime:
        for (s, _), length in zip(self.slices, self.lengths):
            if active_ms < length:
                return s + timedelta(milliseconds=active_ms)
            active_ms -= length
        return self.slices[-1][1]


def _poisson_ms(rate_per_hour: float, total_ms: int, rng: np.random.Generator) -> list[int]:
    if rate_per_hour <= 0:
        return []
    mean_ms = 3_600_000.0 / rate_per_hour
    out, t = [], 0.0
    while True:
        t += rng.exponential(mean_ms)
        if t >= total_ms:
            return out
        out.append(int(t))


# ─── Generation ───────────────────────────────────────────────────────────────

def _keywords(graph: AvatarGraph, rel: Relation, k: int, rng: np.random.Generator) -> tuple[str, ...]:
    projects = graph.shared_projects(rel.a, rel.b)
    if projects:
        pool = graph.projects[projects[int(rng.integers(len(projects)))]]
        idx = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        return tuple(pool[int(i)] for i in idx)
    groups = graph.shared_groups(rel.a, rel.b)
    if groups:
        return (graph.groups[groups[int(rng.integers(len(groups)))]],)
    return (rel.kind,)


def generate_canvas(graph: AvatarGraph, start: datetime, end: datetime,
                    params: CanvasParams = CanvasParams(), seed: Optional[int] = None
                    ) -> ScenarioCanvas:
    slices = workday_slices(start, end, params.day_start, params.day_end)
    clock = _ActiveClock(slices)
    if clock.total_ms <= 0:
        raise EmptyWindow(f"no working time between {start.isoformat()} and {end.isoformat()}")
    rng = np.random.default_rng(seed)
    pol_names = list(params.polarity_weights)
    pol_p = np.array([params.polarity_weights[p] for p in pol_names], dtype=np.float64)
    pol_p /= pol_p.sum()

    drafts: list[dict] = []     # {ms, kind, sender, recipients, ctx, reply_of, element}
    for rel in graph.relations:
        for ms in _poisson_ms(params.rate_base * rel.weight, clock.total_ms, rng):
            sender, recipient = (rel.a, rel.b) if rng.integers(2) == 0 else (rel.b, rel.a)
            ctx = TextContext(
                tone="informel" if rel.kind == "friend" else "formel",
                polarity=pol_names[int(rng.choice(len(pol_names), p=pol_p))],
                keywords=_keywords(graph, rel, params.keywords_per_mail, rng),
                relation=rel.kind,
            )
            mail = {"ms": ms, "kind": "email", "sender": sender, "recipients": (recipient,),
                    "ctx": ctx, "reply_of": None, "element": None}
            drafts.append(mail)
            if rng.random() < params.reply_prob:
                delay_min = rng.lognormal(math.log(params.reply_median_min), params.reply_sigma)
                reply_ms = ms + max(1, int(round(delay_min * 60_000)))
                if reply_ms < clock.total_ms:
                    drafts.append({"ms": reply_ms, "kind": "email", "sender": recipient,
                                   "recipients": (sender,), "ctx": ctx, "reply_of": mail,
                                   "element": None})

    for av in graph.avatars.values():
        for element, per_hour in params.role_activities.get(av.role, {}).items():
            for ms in _poisson_ms(float(per_hour), clock.total_ms, rng):
                drafts.append({"ms": ms, "kind": "activity", "sender": av.id, "recipients": (),
                               "ctx": None, "reply_of": None, "element": element})

    order = sorted(range(len(drafts)), key=lambda i: (drafts[i]["ms"], i))
    ids = {id(drafts[i]): f"i{n + 1:04d}" for n, i in enumerate(order)}
    interactions = []
    for i in order:
        d = drafts[i]
        subject = ""
        if d["ctx"] is not None:
            subject = subject_line(d["ctx"])
            if d["reply_of"] is not None:
                subject = f"Re: {subject}"
        interactions.append(Interaction(
            id=ids[id(d)], at=clock.at(d["ms"]), kind=d["kind"], sender=d["sender"],
            recipients=d["recipients"], context=d["ctx"],
            reply_to=ids[id(d["reply_of"])] if d["reply_of"] is not None else None,
            subject=subject, element=d["element"],
        ))
    logger.info("canvas %s → %s: %d interactions (%d emails) over %.1f working hours",
                start.isoformat(), end.isoformat(), len(interactions),
                sum(1 for x in interactions if x.kind == "email"), clock.total_ms / 3_600_000)
    return ScenarioCanvas(start, end, interactions)


# ─── Compilation ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ScheduledAction:
    key:         str                 # "<agent>:<index>", unique across the scenario
    agent:       str
    at_ms:       int                 # offset from the window start
    action:      UnitAction
    interaction: Optional[str] = None

    def as_dict(self) -> dict:
        out = {"key": self.key, "at_ms": self.at_ms, **self.action.as_dict()}
        if self.interaction:
            out["interaction"] = self.interaction
        return out


@dataclass
class CompiledScenario:
    start:   datetime
    scripts: dict[str, list[ScheduledAction]]
    edges:   list[tuple[str, str]] = field(default_factory=list)

    def actions(self, agent: str) -> list[UnitAction]:
        return [s.action for s in self.scripts.get(agent, [])]

    def as_dict(self) -> dict:
        return {"start": self.start.isoformat(timespec="milliseconds"),
                "scripts": {a: [s.as_dict() for s in items] for a, items in self.scripts.items()},
                "edges": [list(e) for e in self.edges]}

    def dump(self, out_dir: Union[str, Path]) -> Path:
        """One replayable script per agent plus the schedule with its edges."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for agent in self.scripts:
            dump_script(self.actions(agent), out / f"{agent}.script.json")
        (out / "schedule.json").write_text(
            json.dumps(self.as_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return out


def _sub_seeds(seed: Optional[int], n: int) -> list[Optional[int]]:
    if seed is None:
        return [None] * n
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def compile_canvas(canvas: ScenarioCanvas, graph: AvatarGraph,
                   profiles: Optional[Mapping[str, Any]] = None,
                   generator: Optional[BodyFn] = None,
                   params: CanvasParams = CanvasParams(),
                   seed: Optional[int] = None) -> CompiledScenario:
    """
    `profiles` maps profile names to loaded profiles; when given, every avatar's
    profile must be among them.  `generator(ctx, seed)` supplies bodies the
    canvas does not carry.
    """
    for av in graph.avatars.values():
        if not av.endpoint:
            raise MissingEndpoint(av.id)
        if not av.profile or (profiles is not None and av.profile not in profiles):
            raise MissingProfile(av.id, av.profile)

    seeds = _sub_seeds(seed, len(canvas.interactions))
    items: dict[str, list[tuple[int, UnitAction, str]]] = {a: [] for a in graph.avatars}
    for n, inter in enumerate(canvas.interactions):
        at_ms = int((inter.at - canvas.start) / timedelta(milliseconds=1))
        if inter.sender not in items:
            raise ParseError(f"interaction {inter.id}: unknown sender {inter.sender!r}")
        if inter.kind == "email":
            body = inter.body
            if body is None:
                if generator is None or inter.context is None:
                    raise MissingBody(inter.id)
                body = generator(inter.context, seeds[n])
            to = ", ".join(graph.avatar(r).address for r in inter.recipients)
            subject = inter.subject or (subject_line(inter.context) if inter.context else "")
            items[inter.sender].append((at_ms, send_mail(to, subject, body), inter.id))
        else:
            items[inter.sender].append((at_ms, open_app(inter.element, best_effort=True), inter.id))

    end_ms = int((canvas.end - canvas.start) / timedelta(milliseconds=1))
    scripts: dict[str, list[ScheduledAction]] = {}
    key_of: dict[str, str] = {}
    for agent, entries in items.items():
        entries.sort(key=lambda e: e[0])
        script: list[ScheduledAction] = []
        cursor = 0

        def fill(until: int) -> None:
            nonlocal cursor
            while until - cursor > 0:
                chunk = min(until - cursor, params.max_wait_ms)
                script.append(ScheduledAction(f"{agent}:{len(script)}", agent, cursor, wait(chunk)))
                cursor += chunk

        for at_ms, action, inter_id in entries:
            fill(at_ms)
            key = f"{agent}:{len(script)}"
            script.append(ScheduledAction(key, agent, at_ms, action, inter_id))
            key_of[inter_id] = key
            cursor = max(cursor, at_ms)
        fill(end_ms)
        scripts[agent] = script

    edges = [(key_of[i.reply_to], key_of[i.id]) for i in canvas.interactions
             if i.reply_to is not None and i.reply_to in key_of]
    logger.info("compiled %d interactions into %d agent scripts, %d edges",
                len(canvas.interactions), len(scripts), len(edges))
    return CompiledScenario(canvas.start, scripts, edges)
