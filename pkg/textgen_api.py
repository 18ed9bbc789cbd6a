#!/usr/bin/env python3
"""
textgen_api.py — Reference text provider service answering from the builtin model.

Endpoints
─────────
  GET  /            health check + trained buckets
  POST /generate    GenerateRequest → GenerateResponse (see textgen_provider.py)

An unknown (tone, polarity) bucket answers 422 with the error code.

Run:
    uvicorn textgen_api:app --host 127.0.0.1 --port 8770
    LIFESIM_CORPUS selects the training corpus (default corpus/mails.jsonl).
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException

import textgen
from textgen_provider import GenerateRequest, GenerateResponse

load_dotenv()

logger = logging.getLogger("lifesim.textgen.api")

DEFAULT_CORPUS = Path(__file__).parent / "corpus" / "mails.jsonl"

app = FastAPI(
    title="LifeSim text provider",
    description="Conditional mail text from the builtin word-chain model",
    version="1.0.0",
)

_model: Optional[textgen.MarkovModel] = None


def get_model() -> textgen.MarkovModel:
    global _model
    if _model is None:
        corpus = Path(os.getenv("LIFESIM_CORPUS", str(DEFAULT_CORPUS)))
        _model = textgen.train(textgen.load_corpus(corpus))
    return _model


def set_model(model: textgen.MarkovModel) -> None:
    global _model
    _model = model


@app.get("/")
def health() -> dict:
    return {"status": "ok",
            "buckets": sorted(f"{t}/{p}" for t, p in get_model().buckets)}


@app.post("/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest) -> GenerateResponse:
    try:
        cands = textgen.generate(get_model(), req.context(), req.n_candidates, req.max_tokens)
    except textgen.UnknownBucket as exc:
        raise HTTPException(status_code=422, detail=exc.as_dict())
    ranked = textgen.score_candidates(cands, req.context())
    return GenerateResponse(candidates=[{"text": c.text} for c in ranked])


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="127.0.0.1", port=8770)
