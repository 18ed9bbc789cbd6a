#!/usr/bin/env python3
"""
agent_profile.py — Environment profiles: functional element ids → visual locators.

The interaction layer.  A script says "compose"; the profile says how the
compose button looks in *this* desktop (a template image, a zone kind with
an OCR label, a link text, or a fixed rectangle) so the same script runs on
any environment that ships a profile for it.

Profile directory layout:

    profiles/<name>/
        profile.json          manifest (below)
        templates/*.ppm|png   template images for template strategies
        prototypes/*          classifier prototypes, grouped by kind in the manifest

Manifest:
    {
      "name": "simdesk",
      "link_colour": [r, g, b],
      "humanizer": {...HumanizerConfig overrides...},
      "geometry": {"icon": {"max_w": 96}, ...},
      "vision": {...ThresholdParams overrides...},
      "prototypes": {"icon": ["prototypes/plain.pgm", ...], ...},
      "elements": {
        "<id>": {
          "strategies": [{"template": "templates/x.ppm", "threshold": 0.9}
                         | {"zone": "button", "label": "Send"}
                         | {"link": "Docs"}
                         | {"rect": [x, y, w, h]}],
          "activate": {"button": "left", "clicks": 2},
          "expects": "<id>",                 # element that must appear after activation
          "verify": "highlight" | "appear" | "none"
        }
      },
      "composites": {"send_mail": {"<role>": "<element id>", ...}}
    }

resolve_element tries strategies in order; the first one with any hit wins,
its best hit (highest score, then top-left) is the answer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from desk_types import Frame, Rect, load_image
from humanizer import HumanizerConfig
from lifesim_errors import LifeSimError, ParseError
import vision
from zone_classifier import CompositeClassifier, PrototypeClassifier, ZoneClassifier

logger = logging.getLogger("lifesim.profile")

PROFILES_DIR = Path(__file__).parent / "profiles"
MANIFEST_NAME = "profile.json"

SEND_MAIL_ROLES = ("mail-client", "compose", "to-field", "subject-field", "body-field", "send")


# ─── Errors ───────────────────────────────────────────────────────────────────

class MissingManifest(LifeSimError):
    code = "missing-manifest"

    def __init__(self, path: Union[str, Path]):
        super().__init__(f"no profile manifest at {path}", path=str(path))
        self.path = str(path)


class DanglingElementId(LifeSimError):
    code = "dangling-element-id"

    def __init__(self, element_id: str, where: str = ""):
        msg = f"unknown element id {element_id!r}" + (f" ({where})" if where else "")
        super().__init__(msg, element=element_id)
        self.element_id = element_id


class ElementNotFound(LifeSimError):
    code = "element-not-found"

    def __init__(self, element_id: str, strategies: int = 0):
        super().__init__(f"element {element_id!r} not found on screen "
                         f"({strategies} strategies exhausted)", element=element_id)
        self.element_id = element_id


# ─── Manifest schema ──────────────────────────────────────────────────────────

class _StrategyDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    template:  Optional[str] = None
    threshold: float = Field(default=0.9, ge=0.0, le=1.0)
    zone:      Optional[Literal["icon", "button", "text-line", "window", "unknown"]] = None
    label:     Optional[str] = None
    link:      Optional[str] = None
    rect:      Optional[tuple[int, int, int, int]] = None

    @model_validator(mode="after")
    def _one_kind(self):
        kinds = [k for k in ("template", "zone", "link", "rect") if getattr(self, k) is not None]
        if len(kinds) != 1:
            raise ValueError(f"a strategy needs exactly one of template/zone/link/rect, got {kinds}")
        return self


class _ActivateDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    button: Literal["left", "middle", "right"] = "left"
    clicks: int = Field(default=1, ge=1, le=3)


class _ElementDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    strategies: list[_StrategyDoc] = Field(min_length=1)
    activate:   _ActivateDoc = Field(default_factory=_ActivateDoc)
    expects:    Optional[str] = None
    verify:     Optional[Literal["highlight", "appear", "none"]] = None


class _ProfileDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name:        str = Field(min_length=1)
    link_colour: Optional[tuple[int, int, int]] = None
    humanizer:   dict = Field(default_factory=dict)
    geometry:    dict = Field(default_factory=dict)
    vision:      dict = Field(default_factory=dict)
    prototypes:  dict[str, list[str]] = Field(default_factory=dict)
    elements:    dict[str, _ElementDoc]
    composites:  dict[str, dict[str, str]] = Field(default_factory=dict)


# ─── Profile model ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Strategy:
    kind:      str                      # "template" | "zone" | "link" | "rect"
    template:  Optional[Frame] = None
    path:      Optional[str] = None
    threshold: float = 0.9
    zone:      Optional[str] = None
    label:     Optional[str] = None
    rect:      Optional[Rect] = None

    def describe(self) -> str:
        if self.kind == "template":
            return f"template {self.path} ≥ {self.threshold}"
        if self.kind == "zone":
            return f"zone {self.zone} {self.label!r}" if self.label else f"zone {self.zone}"
        if self.kind == "link":
            return f"link {self.label!r}"
        return f"rect {self.rect.as_list()}"


@dataclass(frozen=True)
class ElementSpec:
    id:         str
    strategies: tuple[Strategy, ...]
    button:     str = "left"
    clicks:     int = 1
    expects:    Optional[str] = None
    verify:     str = "highlight"


@dataclass
class EnvironmentProfile:
    name:        str
    root:        Path
    elements:    dict[str, ElementSpec]
    classifier:  Optional[ZoneClassifier] = None
    humanizer:   dict = field(default_factory=dict)
    rules:       vision.GeometryRules = field(default_factory=vision.GeometryRules)
    params:      vision.ThresholdParams = field(default_factory=vision.ThresholdParams)
    link_colour: Optional[tuple[int, int, int]] = None
    composites:  dict[str, dict[str, str]] = field(default_factory=dict)

    def element(self, element_id: str) -> ElementSpec:
        spec = self.elements.get(element_id)
        if spec is None:
            raise DanglingElementId(element_id, f"profile {self.name!r}")
        return spec

    def humanizer_config(self, base: Optional[HumanizerConfig] = None) -> HumanizerConfig:
        return (base or HumanizerConfig()).merged(self.humanizer)

    def role(self, composite: str, role: str) -> str:
        """Element id playing `role` in a composite action (identity when unmapped)."""
        return self.composites.get(composite, {}).get(role, role)


def resolve_profile_dir(name_or_path: Union[str, Path], profiles_dir: Path = PROFILES_DIR) -> Path:
    p = Path(name_or_path)
    if p.name == MANIFEST_NAME:
        return p.parent
    if p.is_dir() or p.is_absolute() or len(p.parts) > 1:
        return p
    return profiles_dir / p


def load_profile(directory: Union[str, Path], profiles_dir: Path = PROFILES_DIR) -> EnvironmentProfile:
    root = resolve_profile_dir(directory, profiles_dir)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise MissingManifest(manifest)
    try:
        doc = _ProfileDoc.model_validate(json.loads(manifest.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest}: {exc}", path=str(manifest)) from exc
    except ValidationError as exc:
        raise ParseError(f"{manifest}: {exc}", path=str(manifest)) from exc

    elements: dict[str, ElementSpec] = {}
    for eid, edoc in doc.elements.items():
        strategies = []
        for sdoc in edoc.strategies:
            if sdoc.template is not None:
                strategies.append(Strategy("template", template=load_image(root / sdoc.template),
                                           path=sdoc.template, threshold=sdoc.threshold))
            elif sdoc.zone is not None:
                strategies.append(Strategy("zone", zone=sdoc.zone, label=sdoc.label))
            elif sdoc.link is not None:
                strategies.append(Strategy("link", label=sdoc.link))
            else:
                strategies.append(Strategy("rect", rect=Rect.from_list(sdoc.rect)))
        verify = edoc.verify or ("appear" if edoc.expects else "highlight")
        elements[eid] = ElementSpec(eid, tuple(strategies), edoc.activate.button,
                                    edoc.activate.clicks, edoc.expects, verify)

    for eid, spec in elements.items():
        if spec.expects is not None and spec.expects not in elements:
            raise DanglingElementId(spec.expects, f"expected by {eid!r}")
        if spec.verify == "appear" and spec.expects is None:
            raise ParseError(f"{manifest}: element {eid!r} verifies 'appear' without 'expects'",
                             path=str(manifest))
    for comp, roles in doc.composites.items():
        for role, eid in roles.items():
            if eid not in elements:
                raise DanglingElementId(eid, f"composite {comp}.{role}")
    if any(s.kind == "link" for e in elements.values() for s in e.strategies) and doc.link_colour is None:
        raise ParseError(f"{manifest}: link strategies need 'link_colour'", path=str(manifest))

    classifier = None
    if doc.prototypes:
        files = {kind: [root / p for p in paths] for kind, paths in doc.prototypes.items()}
        classifier = CompositeClassifier(PrototypeClassifier.from_files(files))

    try:
        rules = vision.GeometryRules.from_dict(doc.geometry)
        params = vision.ThresholdParams.from_dict(doc.vision)
        HumanizerConfig().merged(doc.humanizer)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{manifest}: {exc}", path=str(manifest)) from exc

    profile = EnvironmentProfile(
        name=doc.name, root=root, elements=elements, classifier=classifier,
        humanizer=dict(doc.humanizer), rules=rules, params=params,
        link_colour=tuple(doc.link_colour) if doc.link_colour else None,
        composites={k: dict(v) for k, v in doc.composites.items()},
    )
    logger.info("loaded profile %r from %s (%d elements)", profile.name, root, len(elements))
    return profile


# ─── Resolution ───────────────────────────────────────────────────────────────

class FrameAnalysis:
    """Per-frame memo so several lookups on one capture share zone and link detection."""

    def __init__(self, frame: Frame, profile: EnvironmentProfile):
        self.frame = frame
        self.profile = profile
        self._zones: Optional[list[vision.ZoneOfInterest]] = None
        self._labels: dict[Rect, str] = {}
        self._links: Optional[list[vision.Link]] = None

    @property
    def zones(self) -> list[vision.ZoneOfInterest]:
        if self._zones is None:
            p = self.profile
            self._zones = vision.detect_zones(self.frame, p.rules, p.classifier, p.params)
        return self._zones

    def label(self, rect: Rect) -> str:
        if rect not in self._labels:
            self._labels[rect] = vision.ocr_line(self.frame, rect,
                                                 ink_delta=self.profile.params.ink_delta).strip()
        return self._labels[rect]

    @property
    def links(self) -> list[vision.Link]:
        if self._links is None:
            colour = self.profile.link_colour
            self._links = [] if colour is None else vision.find_links(
                self.frame, colour, self.profile.params.link_tolerance, params=self.profile.params)
        return self._links


def strategy_hits(analysis: FrameAnalysis, strategy: Strategy) -> list[tuple[Rect, float]]:
    """All acceptable hits of one strategy, best first (score desc, then top-left)."""
    frame = analysis.frame
    if strategy.kind == "template":
        t = strategy.template
        if t.width > frame.width or t.height > frame.height:
            return []
        return [(m.rect, m.score) for m in vision.match_template(frame, t, strategy.threshold)]
    if strategy.kind == "zone":
        hits = [(z.rect, z.confidence) for z in analysis.zones
                if z.kind == strategy.zone
                and (strategy.label is None or analysis.label(z.rect) == strategy.label)]
    elif strategy.kind == "link":
        hits = [(lk.rect, 1.0) for lk in analysis.links if lk.text == strategy.label]
    else:
        hits = [(strategy.rect, 1.0)] if strategy.rect.inside(frame.width, frame.height) else []
    hits.sort(key=lambda h: (-h[1], h[0].y, h[0].x))
    return hits


def resolve_element(frame: Frame, profile: EnvironmentProfile, element_id: str,
                    analysis: Optional[FrameAnalysis] = None) -> Rect:
    spec = profile.element(element_id)
    analysis = analysis or FrameAnalysis(frame, profile)
    for strategy in spec.strategies:
        hits = strategy_hits(analysis, strategy)
        if hits:
            logger.debug("resolved %r via %s → %s", element_id, strategy.describe(), hits[0][0])
            return hits[0][0]
    raise ElementNotFound(element_id, len(spec.strategies))
