"""Uniform model client: instruct, completion, and seq2seq-beam capabilities.

Endpoints are either HTTP base URLs speaking the JSON wire protocol
(POST /v1/instruct, /v1/complete, /v1/seq2seq) or "mock:<fixture-path>"
pointing at a deterministic scripted fixture for offline tests.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

CAPABILITIES = ("instruct", "complete", "seq2seq")


class GatewayError(RuntimeError):
    pass


class TransientGatewayError(GatewayError):
    """Timeouts, connection failures, 5xx responses; retried with backoff."""


class PermanentGatewayError(GatewayError):
    """4xx responses and malformed payloads; never retried."""


class FixtureExhaustedError(PermanentGatewayError):
    """A mock fixture entry has no responses left for this call."""


@dataclass
class GatewayConfig:
    endpoint: str
    api_key_env: str = ""
    max_in_flight: int = 4
    timeout_ms: int = 30000
    retries: int = 0
    backoff_ms: int = 250

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass
class ModelRequest:
    capability: str
    prompt: str | None = None
    cwe_id: str | None = None
    cwe_name: str | None = None
    code: str | None = None
    n: int = 1
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        if self.capability not in CAPABILITIES:
            raise ValueError(f"unknown capability {self.capability!r}")
        if self.capability == "seq2seq":
            if self.code is None or self.cwe_id is None:
                raise ValueError("seq2seq requests carry cwe_id/cwe_name/code")
        elif self.prompt is None:
            raise ValueError(f"{self.capability} requests carry a prompt")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def routing_text(self) -> str:
        """Text a mock fixture's `contains` matcher is applied to."""
        return self.prompt if self.prompt is not None else (self.code or "")


@dataclass
class ModelOutput:
    text: str
    score: float | None = None


@dataclass
class ModelResponse:
    outputs: list[ModelOutput]
    usage: dict[str, int] = field(default_factory=dict)


@dataclass
class _MockEntry:
    capability: str
    contains: str | None
    responses: list
    cursor: int = 0


def _load_mock_fixture(path: Path) -> list[_MockEntry]:
    entries: list[_MockEntry] = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            match = obj.get("match")
            entries.append(_MockEntry(
                capability=obj["capability"],
                contains=match["contains"] if match else None,
                responses=list(obj["responses"]),
            ))
    return entries


class ModelGateway:
    """Shareable client; an internal limiter caps in-flight transport calls."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        self._limiter = threading.Semaphore(config.max_in_flight)
        self._lock = threading.Lock()
        self._mock_entries: list[_MockEntry] | None = None
        if config.endpoint.startswith("mock:"):
            fixture = Path(config.endpoint[len("mock:"):])
            self._mock_entries = _load_mock_fixture(fixture)

    # -- public API ---------------------------------------------------------

    def call(self, request: ModelRequest) -> ModelResponse:
        attempts = self.config.retries + 1
        last_error: GatewayError | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.config.backoff_ms / 1000.0 * (2 ** (attempt - 1)))
            with self._limiter:
                try:
                    response = self._dispatch(request)
                except TransientGatewayError as exc:
                    last_error = exc
                    continue
            response.usage["attempts"] = attempt + 1
            response.usage["outputs"] = len(response.outputs)
            return response
        assert last_error is not None
        raise last_error

    # -- transports ----------------------------------------------------------

    def _dispatch(self, request: ModelRequest) -> ModelResponse:
        if self._mock_entries is not None:
            return self._call_mock(request)
        return self._call_http(request)

    def _call_mock(self, request: ModelRequest) -> ModelResponse:
        with self._lock:
            entry = None
            for candidate in self._mock_entries:
                if candidate.capability != request.capability:
                    continue
                if candidate.contains is not None and \
                        candidate.contains not in request.routing_text:
                    continue
                entry = candidate
                break
            if entry is None:
                raise PermanentGatewayError(
                    f"no mock fixture entry matches {request.capability} request")
            if entry.cursor >= len(entry.responses):
                raise FixtureExhaustedError(
                    f"mock fixture exhausted for {request.capability} entry "
                    f"(contains={entry.contains!r}) after {entry.cursor} calls")
            scripted = entry.responses[entry.cursor]
            entry.cursor += 1
        if isinstance(scripted, str):
            return ModelResponse(outputs=[ModelOutput(text=scripted)])
        if "error" in scripted:
            message = str(scripted["error"])
            if scripted.get("transient", False):
                raise TransientGatewayError(message)
            raise PermanentGatewayError(message)
        outputs = [ModelOutput(text=o["text"], score=o.get("score"))
                   for o in scripted["outputs"]]
        outputs = outputs[:request.n]
        if request.capability == "seq2seq":
            outputs.sort(key=lambda o: -(o.score or 0.0))
        return ModelResponse(outputs=outputs)

    def _call_http(self, request: ModelRequest) -> ModelResponse:
        if request.capability == "instruct":
            body = {"prompt": request.prompt,
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens}
        elif request.capability == "complete":
            body = {"prompt": request.prompt, "n": request.n,
                    "temperature": request.temperature,
                    "max_tokens": request.max_tokens}
        else:
            body = {"cwe_id": request.cwe_id,
                    "cwe_name": request.cwe_name or "",
                    "code": request.code, "beams": request.n,
                    "max_tokens": request.max_tokens}
        url = self.config.endpoint.rstrip("/") + "/v1/" + request.capability
        headers = {}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(url, json=body, headers=headers,
                                 timeout=self.config.timeout_ms / 1000.0)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransientGatewayError(f"transport failure: {exc}") from exc
        if resp.status_code >= 500:
            raise TransientGatewayError(
                f"server error {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise PermanentGatewayError(
                f"request rejected {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            outputs = [ModelOutput(text=o["text"], score=o.get("score"))
                       for o in payload["outputs"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise PermanentGatewayError(f"malformed response body: {exc}") from exc
        if request.capability == "seq2seq":
            outputs.sort(key=lambda o: -(o.score or 0.0))
        return ModelResponse(outputs=outputs)
