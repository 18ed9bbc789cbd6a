#!/usr/bin/env python3
"""
scenario_graph.py — The avatar relationship graph that drives system-scale life.

File format (JSON):

    {
      "avatars":  [{"id": "alice", "name": "Alice Martin", "role": "engineer",
                    "email": "alice@corp.test", "endpoint": "127.0.0.1:5901",
                    "profile": "simdesk", "groups": ["rnd"], "projects": ["apollo"]}],
      "groups":   [{"id": "rnd", "name": "R&D"}],
      "projects": [{"id": "apollo", "keywords": ["prototype", "budget"]}],
      "relations":[{"between": ["alice", "bob"], "kind": "friend", "weight": 0.8}]
    }

Relation kinds: friend | colleague | hierarchy | client-supplier | partner.
Weights live in (0, 1]; at most one relation per unordered pair of avatars.
`endpoint` and `profile` are optional here and only required by compile_canvas.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lifesim_errors import LifeSimError, ParseError

logger = logging.getLogger("lifesim.scenario")

RELATION_KINDS = ("friend", "colleague", "hierarchy", "client-supplier", "partner")


class DanglingReference(LifeSimError):
    code = "dangling-reference"

    def __init__(self, ref: str, where: str):
        super().__init__(f"{where} refers to unknown id {ref!r}", ref=ref, where=where)
        self.ref = ref
        self.where = where


class WeightOutOfRange(LifeSimError):
    code = "weight-out-of-range"

    def __init__(self, pair: tuple[str, str], weight: float):
        super().__init__(f"relation {pair[0]}–{pair[1]} has weight {weight}, expected (0, 1]",
                         pair=list(pair), weight=weight)
        self.pair = pair
        self.weight = weight


class DuplicateRelation(LifeSimError):
    code = "duplicate-relation"

    def __init__(self, pair: tuple[str, str]):
        super().__init__(f"more than one relation between {pair[0]} and {pair[1]}", pair=list(pair))
        self.pair = pair


# ─── File schema ──────────────────────────────────────────────────────────────

class _AvatarDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id:       str = Field(min_length=1)
    name:     str = ""
    role:     str = ""
    email:    Optional[str] = None
    endpoint: Optional[str] = None
    profile:  Optional[str] = None
    groups:   list[str] = Field(default_factory=list)
    projects: list[str] = Field(default_factory=list)


class _GroupDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id:   str = Field(min_length=1)
    name: str = ""


class _ProjectDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id:       str = Field(min_length=1)
    keywords: list[str] = Field(min_length=1)


class _RelationDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    between: tuple[str, str]
    kind:    Literal["friend", "colleague", "hierarchy", "client-supplier", "partner"]
    weight:  float


class _GraphDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    avatars:   list[_AvatarDoc]
    groups:    list[_GroupDoc] = Field(default_factory=list)
    projects:  list[_ProjectDoc] = Field(default_factory=list)
    relations: list[_RelationDoc] = Field(default_factory=list)


# ─── Model ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Avatar:
    id:       str
    name:     str = ""
    role:     str = ""
    email:    Optional[str] = None
    endpoint: Optional[str] = None
    profile:  Optional[str] = None
    groups:   tuple[str, ...] = ()
    projects: tuple[str, ...] = ()

    @property
    def address(self) -> str:
        return self.email or f"{self.id}@lifesim.test"


@dataclass(frozen=True)
class Relation:
    a:      str
    b:      str
    kind:   str
    weight: float

    @property
    def pair(self) -> frozenset[str]:
        return frozenset((self.a, self.b))


@dataclass
class AvatarGraph:
    avatars:   dict[str, Avatar]
    groups:    dict[str, str] = field(default_factory=dict)              # id → name
    projects:  dict[str, tuple[str, ...]] = field(default_factory=dict)  # id → keywords
    relations: list[Relation] = field(default_factory=list)

    def avatar(self, avatar_id: str) -> Avatar:
        try:
            return self.avatars[avatar_id]
        except KeyError:
            raise DanglingReference(avatar_id, "graph lookup") from None

    def relation(self, a: str, b: str) -> Optional[Relation]:
        key = frozenset((a, b))
        for r in self.relations:
            if r.pair == key:
                return r
        return None

    def shared_projects(self, a: str, b: str) -> list[str]:
        pb = set(self.avatars[b].projects)
        return [p for p in self.avatars[a].projects if p in pb]

    def shared_groups(self, a: str, b: str) -> list[str]:
        gb = set(self.avatars[b].groups)
        return [g for g in self.avatars[a].groups if g in gb]

    def connected(self, a: str, b: str) -> bool:
        """True when the two avatars share a relation or a group."""
        return a != b and (self.relation(a, b) is not None or bool(self.shared_groups(a, b)))

    def as_dict(self) -> dict:
        return {
            "avatars": [
                {k: v for k, v in {
                    "id": av.id, "name": av.name, "role": av.role, "email": av.email,
                    "endpoint": av.endpoint, "profile": av.profile,
                    "groups": list(av.groups), "projects": list(av.projects),
                }.items() if v is not None}
                for av in self.avatars.values()
            ],
            "groups": [{"id": g, "name": n} for g, n in self.groups.items()],
            "projects": [{"id": p, "keywords": list(k)} for p, k in self.projects.items()],
            "relations": [{"between": [r.a, r.b], "kind": r.kind, "weight": r.weight}
                          for r in self.relations],
        }


# ─── Loading ──────────────────────────────────────────────────────────────────

def graph_from_dict(raw: dict, source: str = "<graph>") -> AvatarGraph:
    try:
        doc = _GraphDoc.model_validate(raw)
    except ValidationError as exc:
        raise ParseError(f"{source}: {exc.errors()[0]['msg']}", path=source) from exc

    avatars: dict[str, Avatar] = {}
    for a in doc.avatars:
        if a.id in avatars:
            raise ParseError(f"{source}: duplicate avatar id {a.id!r}", path=source)
        avatars[a.id] = Avatar(a.id, a.name or a.id, a.role, a.email, a.endpoint, a.profile,
                               tuple(a.groups), tuple(a.projects))
    groups = {g.id: g.name or g.id for g in doc.groups}
    projects = {p.id: tuple(p.keywords) for p in doc.projects}

    for av in avatars.values():
        for g in av.groups:
            if g not in groups:
                raise DanglingReference(g, f"avatar {av.id!r} groups")
        for p in av.projects:
            if p not in projects:
                raise DanglingReference(p, f"avatar {av.id!r} projects")

    relations: list[Relation] = []
    seen: set[frozenset[str]] = set()
    for r in doc.relations:
        a, b = r.between
        for end in (a, b):
            if end not in avatars:
                raise DanglingReference(end, f"relation {a}–{b}")
        if a == b:
            raise ParseError(f"{source}: relation of {a!r} with itself", path=source)
        if not 0.0 < r.weight <= 1.0:
            raise WeightOutOfRange((a, b), r.weight)
        key = frozenset((a, b))
        if key in seen:
            raise DuplicateRelation((a, b))
        seen.add(key)
        relations.append(Relation(a, b, r.kind, r.weight))

    graph = AvatarGraph(avatars, groups, projects, relations)
    logger.debug("graph %s: %d avatars, %d relations", source, len(avatars), len(relations))
    return graph


def load_graph(path: Union[str, Path]) -> AvatarGraph:
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{p}: {exc}", path=str(p)) from exc
    return graph_from_dict(raw, str(p))
