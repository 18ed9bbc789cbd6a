#!/usr/bin/env python3
"""
textgen_provider.py — HTTP client for an external text generation service.

Wire contract (JSON over HTTP POST):
    request   {"tone", "polarity", "keywords": [...], "max_tokens", "n_candidates"}
    response  {"candidates": [{"text": "..."}, ...]}

Any status other than 200, or a transport failure, is provider-unreachable;
a 200 whose body does not match the response shape is provider-malformed-response.
textgen_api.py serves the same contract from the builtin model.
"""

from __future__ import annotations

import logging
import os
from typing import Literal, Optional

import requests
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from lifesim_errors import LifeSimError
from textgen import Candidate, TextContext, TextProvider

logger = logging.getLogger("lifesim.textgen.provider")

DEFAULT_TIMEOUT = 30.0


class ProviderUnreachable(LifeSimError):
    code = "provider-unreachable"

    def __init__(self, url: str, status: Optional[int] = None, reason: str = ""):
        msg = f"{url}: HTTP {status}" if status is not None else f"{url}: {reason}"
        super().__init__(msg, url=url, status=status)
        self.url = url
        self.status = status


class ProviderMalformedResponse(LifeSimError):
    code = "provider-malformed-response"


# ─── Wire models ──────────────────────────────────────────────────────────────

class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    tone:         Literal["formel", "informel"]
    polarity:     Literal["positif", "négatif", "neutre"]
    keywords:     list[str] = Field(min_length=1)
    max_tokens:   int = Field(default=120, ge=1)
    n_candidates: int = Field(default=1, ge=1, le=32)

    @classmethod
    def from_context(cls, ctx: TextContext, n: int, max_words: int) -> "GenerateRequest":
        return cls(tone=ctx.tone, polarity=ctx.polarity, keywords=list(ctx.keywords),
                   max_tokens=max_words, n_candidates=n)

    def context(self) -> TextContext:
        return TextContext(tone=self.tone, polarity=self.polarity, keywords=tuple(self.keywords))


class _CandidateDoc(BaseModel):
    text: str


class GenerateResponse(BaseModel):
    candidates: list[_CandidateDoc]


# ─── Client ───────────────────────────────────────────────────────────────────

class RemoteProvider(TextProvider):

    def __init__(self, url: Optional[str] = None, timeout: float = DEFAULT_TIMEOUT,
                 session: Optional[requests.Session] = None):
        self.url = url or os.getenv("LIFESIM_TEXTGEN_URL", "http://127.0.0.1:8770/generate")
        self.timeout = timeout
        self.http = session or requests.Session()

    def generate(self, ctx: TextContext, n: int, max_words: int) -> list[Candidate]:
        body = GenerateRequest.from_context(ctx, n, max_words).model_dump()
        try:
            resp = self.http.post(self.url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderUnreachable(self.url, reason=str(exc)) from exc
        if resp.status_code != 200:
            raise ProviderUnreachable(self.url, status=resp.status_code)
        try:
            parsed = GenerateResponse.model_validate(resp.json())
        except (ValueError, ValidationError) as exc:
            raise ProviderMalformedResponse(f"{self.url}: {exc}", url=self.url) from exc
        logger.debug("%s returned %d candidates", self.url, len(parsed.candidates))
        return [Candidate(c.text, 0.0, "remote") for c in parsed.candidates]
