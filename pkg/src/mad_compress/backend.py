"""Chat backends: an OpenAI-compatible HTTP client and a deterministic scripted mock."""
from __future__ import annotations

import base64
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Protocol, Sequence

import httpx

from .tokenizer import DEFAULT_TOKENIZER, Tokenizer


class BackendError(RuntimeError):
    """Request failed after all retries, or with a non-retryable status."""


class AuthenticationError(BackendError):
    pass


class ContextLengthError(BackendError):
    """The prompt does not fit the model's context window."""


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    media_type: str
    data_b64: str

    @classmethod
    def from_png(cls, png: bytes) -> "ImagePart":
        return cls("image/png", base64.b64encode(png).decode("ascii"))

    @property
    def data_uri(self) -> str:
        return f"data:{self.media_type};base64,{self.data_b64}"


ContentPart = TextPart | ImagePart


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user", "assistant"]
    parts: tuple[ContentPart, ...]


@dataclass(frozen=True)
class Routing:
    """Which debate slot a request belongs to; agent 0 marks summariser calls."""

    query_id: str
    agent_index: int
    round: int


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int | None = None
    routing: Routing | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for m in self.messages:
            if m.role != "user" and any(isinstance(p, ImagePart) for p in m.parts):
                raise ValueError("image parts are only allowed in user messages")

    def text_parts(self) -> list[str]:
        return [p.text for m in self.messages for p in m.parts if isinstance(p, TextPart)]

    def image_count(self) -> int:
        return sum(isinstance(p, ImagePart) for m in self.messages for p in m.parts)

    def to_wire(self) -> dict:
        """Chat-completions JSON body with content-part arrays."""
        messages = []
        for m in self.messages:
            content = []
            for p in m.parts:
                if isinstance(p, TextPart):
                    content.append({"type": "text", "text": p.text})
                else:
                    content.append({"type": "image_url", "image_url": {"url": p.data_uri}})
            messages.append({"role": m.role, "content": content})
        body: dict = {
            "model": self.model,
            "messages": messages,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")


class ChatBackend(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


# -- HTTP client -------------------------------------------------------------

_CONTEXT_MARKERS = ("context_length_exceeded", "maximum context length", "context window")


class OpenAICompatClient:
    """Client for any ``/chat/completions`` endpoint speaking the OpenAI wire format.

    Transient failures (network errors, 429, 5xx) are retried with exponential
    backoff; authentication and context-length errors surface immediately.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout_s, transport=transport
        )
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._sleep = sleep

    @classmethod
    def from_env(cls, **kwargs) -> "OpenAICompatClient":
        url = os.environ.get("OPENAI_BASE_URL")
        if not url:
            raise BackendError("OPENAI_BASE_URL is not set")
        return cls(url, os.environ.get("OPENAI_API_KEY"), **kwargs)

    def close(self) -> None:
        self._client.close()

    def chat(self, request: ChatRequest) -> ChatResponse:
        body = request.to_wire()
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            start = time.perf_counter()
            try:
                resp = self._client.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = exc
                continue
            latency_ms = (time.perf_counter() - start) * 1000.0
            if resp.status_code in (401, 403):
                raise AuthenticationError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code >= 400:
                text = resp.text
                if any(marker in text for marker in _CONTEXT_MARKERS):
                    raise ContextLengthError(text[:500])
                raise BackendError(f"HTTP {resp.status_code}: {text[:200]}")
            return _parse_completion(resp, latency_ms)
        raise BackendError(f"request failed after {self.max_attempts} attempts: {last}") from last


def _parse_completion(resp: httpx.Response, latency_ms: float) -> ChatResponse:
    try:
        payload = resp.json()
        content = payload["choices"][0]["message"]["content"] or ""
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"malformed completion payload: {resp.text[:200]}") from exc
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    usage = payload.get("usage") or {}
    return ChatResponse(
        text=content,
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        completion_tokens=int(usage.get("completion_tokens", 0)),
        latency_ms=latency_ms,
    )


# -- scripted mock -------------------------------------------------------------

@dataclass(frozen=True)
class MockEntry:
    text: str
    latency_ms: float | None = None


@dataclass
class MockScript:
    """Responses keyed by ``(query_id, agent_index, round)``; misses get the default."""

    entries: dict[tuple[str, int, int], MockEntry] = field(default_factory=dict)
    default_response: str = "\\boxed{0}"
    default_latency_ms: float = 100.0

    def set(self, query_id: str, agent: int, round_: int, text: str, latency_ms: float | None = None) -> None:
        self.entries[(query_id, agent, round_)] = MockEntry(text, latency_ms)

    def lookup(self, query_id: str, agent: int, round_: int) -> MockEntry:
        entry = self.entries.get((query_id, agent, round_))
        if entry is None:
            return MockEntry(self.default_response, self.default_latency_ms)
        if entry.latency_ms is None:
            return MockEntry(entry.text, self.default_latency_ms)
        return entry

    def to_json(self) -> dict:
        out: dict = {}
        for (q, a, r), e in sorted(self.entries.items()):
            out[f"{q}/{a}/{r}"] = e.text if e.latency_ms is None else {"text": e.text, "latency_ms": e.latency_ms}
        return {
            "default_response": self.default_response,
            "default_latency_ms": self.default_latency_ms,
            "entries": out,
        }

    @classmethod
    def from_json(cls, data: dict) -> "MockScript":
        script = cls(
            default_response=data.get("default_response", "\\boxed{0}"),
            default_latency_ms=float(data.get("default_latency_ms", 100.0)),
        )
        for key, value in data.get("entries", {}).items():
            q, a, r = key.rsplit("/", 2)
            if isinstance(value, str):
                script.set(q, int(a), int(r), value)
            else:
                script.set(q, int(a), int(r), value["text"], value.get("latency_ms"))
        return script

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))


class MockBackend:
    """Deterministic stand-in for a hosted model.

    Prompt tokens are the tokenizer length of all text parts plus
    ``image_token_charge`` per attached image; completions are cut at the
    request's ``max_tokens``. ``fail_on`` lets tests inject backend failures.
    """

    def __init__(
        self,
        script: MockScript,
        tokenizer: Tokenizer = DEFAULT_TOKENIZER,
        *,
        image_token_charge: int = 256,
        context_limit: int | None = None,
        fail_on: Callable[[Routing], bool] | None = None,
    ):
        self.script = script
        self.tokenizer = tokenizer
        self.image_token_charge = image_token_charge
        self.context_limit = context_limit
        self.fail_on = fail_on
        self._lock = threading.Lock()
        self.calls = 0

    def prompt_tokens(self, request: ChatRequest) -> int:
        text = sum(self.tokenizer.count(t) for t in request.text_parts())
        return text + self.image_token_charge * request.image_count()

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        routing = request.routing or Routing("", 0, 0)
        if self.fail_on is not None and self.fail_on(routing):
            raise BackendError(f"injected failure for {routing}")
        prompt = self.prompt_tokens(request)
        if self.context_limit is not None and prompt > self.context_limit:
            raise ContextLengthError(f"context_length_exceeded: {prompt} > {self.context_limit}")
        entry = self.script.lookup(routing.query_id, routing.agent_index, routing.round)
        text = self.tokenizer.truncate(entry.text, request.max_tokens)
        return ChatResponse(
            text=text,
            prompt_tokens=prompt,
            completion_tokens=self.tokenizer.count(text),
            latency_ms=float(entry.latency_ms),
        )


def mock_chat(script: MockScript, request: ChatRequest, tokenizer: Tokenizer = DEFAULT_TOKENIZER,
              image_token_charge: int = 256) -> ChatResponse:
    return MockBackend(script, tokenizer, image_token_charge=image_token_charge).chat(request)


def user_message(parts: Sequence[ContentPart]) -> Message:
    return Message("user", tuple(parts))
