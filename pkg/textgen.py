#!/usr/bin/env python3
"""
textgen.py — Conditional text for mails and documents.

Builtin model: an order-2 word chain trained per (tone, polarity) bucket.

    corpus ──tokenize──▶ per-bucket tables
                           (w1, w2) → {next: count}
                           start bigrams: first two tokens of every document
                                          + every bigram holding a keyword-eligible
                                            word (capitalised or longer than 4 chars)
                           word index:    word → bigrams containing it

    generate(model, ctx, n)   start on a bigram holding one of ctx.keywords when the
                              bucket has one, walk transitions proportionally to
                              their counts until max_words or a dead end
    score_candidates(...)     keyword coverage × min(words / 40, 1), stable sort

A remote neural service plugs in through textgen_provider.RemoteProvider;
`generate` accepts either a MarkovModel or any TextProvider.
"""

from __future__ import annotations

import json
import logging
import re
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lifesim_errors import LifeSimError, ParseError

logger = logging.getLogger("lifesim.textgen")

TONES = ("formel", "informel")
POLARITIES = ("positif", "négatif", "neutre")

_TOKEN_RE = re.compile(r"\w+(?:['’-]\w+)*|[^\w\s]", re.UNICODE)
_NO_SPACE_BEFORE = set(".,;:!?)]}…»%")
_NO_SPACE_AFTER = set("([{«")

Bigram = tuple[str, str]


class EmptyCorpus(LifeSimError):
    code = "empty-corpus"


class UnknownBucket(LifeSimError):
    code = "unknown-bucket"

    def __init__(self, tone: str, polarity: str):
        super().__init__(f"no training data for ({tone}, {polarity})", tone=tone, polarity=polarity)
        self.tone = tone
        self.polarity = polarity


# ─── Context & candidates ─────────────────────────────────────────────────────

class TextContext(BaseModel):
    """What a generated text must sound like and talk about."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    tone:     Literal["formel", "informel"]
    polarity: Literal["positif", "négatif", "neutre"]
    keywords: tuple[str, ...] = Field(min_length=1)
    relation: Optional[Literal["friend", "colleague", "hierarchy", "client-supplier", "partner"]] = None


@dataclass(frozen=True)
class Candidate:
    text:       str
    score:      float = 0.0
    provenance: str = "builtin"          # "builtin" | "remote"
    tokens:     tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {"text": self.text, "score": round(self.score, 4), "provenance": self.provenance}


class CorpusDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")
    text:     str
    tone:     Literal["formel", "informel"]
    polarity: Literal["positif", "négatif", "neutre"]


# ─── Tokens ───────────────────────────────────────────────────────────────────

def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def detokenize(tokens: list[str]) -> str:
    out = ""
    for tok in tokens:
        if out and tok not in _NO_SPACE_BEFORE and out[-1] not in _NO_SPACE_AFTER:
            out += " "
        out += tok
    return out


def is_word(token: str) -> bool:
    return any(c.isalnum() for c in token)


def _eligible(token: str) -> bool:
    return is_word(token) and (token[:1].isupper() or len(token) > 4)


# ─── Model ────────────────────────────────────────────────────────────────────

@dataclass
class Bucket:
    transitions: dict[Bigram, Counter] = field(default_factory=dict)
    starts:      list[Bigram] = field(default_factory=list)
    by_word:     dict[str, list[Bigram]] = field(default_factory=dict)   # lower-cased word → bigrams

    def _index(self, bg: Bigram) -> None:
        for w in {bg[0].lower(), bg[1].lower()}:
            lst = self.by_word.setdefault(w, [])
            if bg not in lst:
                lst.append(bg)

    def add(self, tokens: list[str]) -> None:
        if len(tokens) < 2:
            return
        first = (tokens[0], tokens[1])
        if first not in self.starts:
            self.starts.append(first)
        for i in range(len(tokens) - 1):
            bg = (tokens[i], tokens[i + 1])
            self._index(bg)
            if (_eligible(bg[0]) or _eligible(bg[1])) and bg not in self.starts:
                self.starts.append(bg)
            if i + 2 < len(tokens):
                self.transitions.setdefault(bg, Counter())[tokens[i + 2]] += 1

    def keyword_starts(self, keywords) -> list[Bigram]:
        wanted = {k.lower() for k in keywords}
        eligible = [bg for bg in self.starts if bg[0].lower() in wanted or bg[1].lower() in wanted]
        if eligible:
            return eligible
        anywhere: list[Bigram] = []
        for k in sorted(wanted):
            for bg in self.by_word.get(k, []):
                if bg not in anywhere:
                    anywhere.append(bg)
        return anywhere


@dataclass
class MarkovModel:
    order:   int = 2
    buckets: dict[tuple[str, str], Bucket] = field(default_factory=dict)

    def bucket(self, tone: str, polarity: str) -> Bucket:
        b = self.buckets.get((tone, polarity))
        if b is None:
            raise UnknownBucket(tone, polarity)
        return b


def train(corpus) -> MarkovModel:
    """
    corpus: iterable of CorpusDoc or (text, tone, polarity) tuples.
    Documents shorter than two tokens are skipped.
    """
    docs = [d if isinstance(d, CorpusDoc) else CorpusDoc(text=d[0], tone=d[1], polarity=d[2])
            for d in corpus]
    if not docs:
        raise EmptyCorpus("cannot train on an empty corpus")
    model = MarkovModel()
    for d in docs:
        tokens = tokenize(d.text)
        if len(tokens) < 2:
            continue
        model.buckets.setdefault((d.tone, d.polarity), Bucket()).add(tokens)
    logger.info("trained on %d documents, buckets: %s", len(docs),
                sorted(f"{t}/{p}" for t, p in model.buckets))
    return model


def load_corpus(path: Union[str, Path]) -> list[CorpusDoc]:
    p = Path(path)
    docs: list[CorpusDoc] = []
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"{p}: {exc}", path=str(p)) from exc
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            docs.append(CorpusDoc.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise ParseError(f"{p}:{n}: {exc}", path=str(p)) from exc
    return docs


# ─── Generation ───────────────────────────────────────────────────────────────

class TextProvider(ABC):
    """Anything that turns a context into candidates (e.g. a remote neural service)."""

    @abstractmethod
    def generate(self, ctx: TextContext, n: int, max_words: int) -> list[Candidate]: ...


def _walk(bucket: Bucket, ctx: TextContext, max_words: int, rng: np.random.Generator) -> list[str]:
    starts = bucket.keyword_starts(ctx.keywords) or bucket.starts
    w1, w2 = starts[int(rng.integers(len(starts)))]
    tokens = [w1, w2]
    while len(tokens) < max_words:
        nexts = bucket.transitions.get((tokens[-2], tokens[-1]))
        if not nexts:
            break
        words = list(nexts)
        counts = np.array([nexts[w] for w in words], dtype=np.float64)
        tokens.append(words[int(rng.choice(len(words), p=counts / counts.sum()))])
    return tokens


def generate(model: Union[MarkovModel, TextProvider], ctx: TextContext, n: int = 1,
             max_words: int = 120, seed: Optional[int] = None) -> list[Candidate]:
    if n < 1:
        raise ValueError("n must be ≥ 1")
    if isinstance(model, TextProvider):
        return model.generate(ctx, n, max_words)
    bucket = model.bucket(ctx.tone, ctx.polarity)
    out = []
    for child in np.random.SeedSequence(seed).spawn(n):
        tokens = _walk(bucket, ctx, max_words, np.random.default_rng(child))
        out.append(Candidate(detokenize(tokens), 0.0, "builtin", tuple(tokens)))
    return out


def _has_run(tokens: list[str], run: tuple[str, ...]) -> bool:
    n = len(run)
    return any(tuple(tokens[i:i + n]) == run for i in range(len(tokens) - n + 1))


def score_candidates(candidates: list[Candidate], ctx: TextContext,
                     length_norm: int = 40) -> list[Candidate]:
    """score = matched keywords / keywords × clamp(words / length_norm, 0, 1); stable, best first."""
    keywords = {tuple(t.lower() for t in tokenize(k)) for k in ctx.keywords}
    keywords.discard(())
    scored = []
    for c in candidates:
        tokens = c.tokens or tuple(tokenize(c.text))
        lowered = [t.lower() for t in tokens]
        coverage = sum(_has_run(lowered, k) for k in keywords) / len(keywords) if keywords else 0.0
        words = sum(is_word(t) for t in tokens)
        scored.append(replace(c, score=coverage * min(max(words / length_norm, 0.0), 1.0),
                              tokens=tokens))
    return sorted(scored, key=lambda c: -c.score)


def subject_line(ctx: TextContext) -> str:
    topics = list(ctx.keywords[:2])
    if ctx.tone == "informel":
        return f"{topics[0].capitalize()} ?" if ctx.polarity != "négatif" else f"Souci avec {topics[0]}"
    joined = " et ".join(topics)
    if ctx.polarity == "neutre":
        return f"Point sur {joined}"
    prefix = "Bonne nouvelle" if ctx.polarity == "positif" else "Problème"
    return f"{prefix} : {joined}"


def body_generator(model: Union[MarkovModel, TextProvider], n: int = 3, max_words: int = 120,
                   length_norm: int = 40):
    """Callable(ctx, seed) → best-scoring body text, for scenario compilation."""
    def _body(ctx: TextContext, seed: Optional[int]) -> str:
        return score_candidates(generate(model, ctx, n, max_words, seed), ctx, length_norm)[0].text
    return _body


# ─── Parameters ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TextgenParams:
    corpus:      str = "corpus/mails.jsonl"
    max_words:   int = 120
    candidates:  int = 3
    length_norm: int = 40
    remote_url:  Optional[str] = None
    timeout_s:   float = 30.0

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "TextgenParams":
        raw = dict(raw or {})
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown textgen fields: {sorted(unknown)}")
        return cls(**raw)
