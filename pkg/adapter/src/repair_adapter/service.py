"""FastAPI service speaking the gateway wire protocol.

POST /v1/instruct   {prompt, temperature, max_tokens}        -> {outputs: [{text}]}
POST /v1/complete   {prompt, n, temperature, max_tokens}     -> {outputs: [{text}]}
POST /v1/seq2seq    {cwe_id, cwe_name, code, beams, max_tokens}
                    -> {outputs: [{text, score}]} sorted by score descending
"""

from __future__ import annotations

import hashlib

import requests
import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import data
from .checkpoints import ModelCheckpoint
from .vocab import BOS, SEP, decode, encode


class InstructRequest(BaseModel):
    prompt: str
    temperature: float = 0.0
    max_tokens: int = Field(default=256, ge=1)


class CompleteRequest(BaseModel):
    prompt: str
    n: int = Field(default=1, ge=1)
    temperature: float = Field(default=0.0, ge=0.0)
    max_tokens: int = Field(default=256, ge=1)


class Seq2SeqRequest(BaseModel):
    cwe_id: str
    cwe_name: str = ""
    code: str
    beams: int = Field(default=10, ge=1)
    max_tokens: int = Field(default=128, ge=1)


def _request_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode())
    return int.from_bytes(digest.digest()[:8], "big")


def create_app(matcher_dir: str | None = None,
               generator_dir: str | None = None,
               instruct_upstream: str | None = None) -> FastAPI:
    app = FastAPI(title="repair-adapter")
    matcher = None
    matcher_max_input = 512
    generator = None
    generator_max_len = 2048
    if matcher_dir:
        ckpt = ModelCheckpoint.load(matcher_dir)
        matcher = ckpt.load_model()
        matcher_max_input = int(ckpt.manifest.get("max_input_len", 512))
    if generator_dir:
        ckpt = ModelCheckpoint.load(generator_dir)
        generator = ckpt.load_model()
        generator_max_len = int(ckpt.manifest.get("max_len", 2048))

    @app.post("/v1/instruct")
    def instruct(request: InstructRequest):
        if instruct_upstream:
            resp = requests.post(
                instruct_upstream.rstrip("/") + "/v1/instruct",
                json=request.model_dump(), timeout=120)
            resp.raise_for_status()
            return resp.json()
        # no upstream configured: answer an empty completion rather than 5xx
        return {"outputs": [{"text": ""}]}

    @app.post("/v1/complete")
    def complete(request: CompleteRequest):
        if generator is None:
            raise HTTPException(status_code=404,
                                detail="no generator checkpoint loaded")
        prompt_ids = [BOS] + encode(request.prompt) + [SEP]
        prompt_ids = prompt_ids[-generator_max_len:]
        gen = torch.Generator()
        gen.manual_seed(_request_seed(request.prompt, request.n,
                                      request.temperature))
        outputs = []
        for _ in range(request.n):
            ids = generator.sample(prompt_ids, request.max_tokens,
                                   request.temperature, generator=gen)
            outputs.append({"text": decode(ids)})
        return {"outputs": outputs}

    @app.post("/v1/seq2seq")
    def seq2seq(request: Seq2SeqRequest):
        if matcher is None:
            raise HTTPException(status_code=404,
                                detail="no matcher checkpoint loaded")
        text = data.matcher_input_text(request.cwe_id, request.cwe_name,
                                       request.code)
        src_ids = encode(text)[:matcher_max_input]
        beams = matcher.beam_search(src_ids, request.beams,
                                    request.max_tokens)
        outputs = [{"text": decode(ids), "score": score}
                   for ids, score in beams]
        outputs.sort(key=lambda o: -o["score"])
        return {"outputs": outputs}

    return app


def serve(matcher_dir: str | None, generator_dir: str | None,
          port: int, instruct_upstream: str | None = None) -> None:
    import uvicorn

    app = create_app(matcher_dir, generator_dir, instruct_upstream)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
