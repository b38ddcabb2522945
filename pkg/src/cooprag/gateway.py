"""Chat-completion clients: an HTTP client and a fixture-backed mock.

Both expose ``chat(request) -> str`` and ``complete(prompt) -> str``. The
HTTP client speaks the common chat-completions JSON shape (``model``,
``messages``, ``temperature``, ``max_tokens`` in; ``choices[0].message.content``
out).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import httpx

from .errors import AuthError, BadResponse, FixtureMissing, GatewayError, ValidationError

logger = logging.getLogger(__name__)

Role = Literal["system", "user", "assistant"]
_ROLES = ("system", "user", "assistant")
RETRYABLE_STATUS = frozenset({408, 409, 425, 429}) | frozenset(range(500, 600))


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValidationError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValidationError("chat request needs at least one message")
        if self.messages[-1].role != "user":
            raise ValidationError("last message must come from the user")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be positive")

    @classmethod
    def user(cls, prompt: str, **kwargs) -> "ChatRequest":
        return cls((Message("user", prompt),), **kwargs)


def fixture_key(request: ChatRequest) -> str:
    """Content hash of the message list; model and sampling settings are ignored."""
    payload = json.dumps(
        [[m.role, m.content] for m in request.messages], ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ChatGateway:
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024

    def chat(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def complete(self, prompt: str) -> str:
        return self.chat(
            ChatRequest.user(prompt, model=self.model, temperature=self.temperature, max_tokens=self.max_tokens)
        )


@dataclass
class GatewayConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    api_key_env: str = "OPENAI_API_KEY"
    timeout_ms: int = 60_000
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base: float = 0.5
    backoff_max: float = 30.0
    temperature: float = 0.0
    max_tokens: int = 1024


class HttpChatGateway(ChatGateway):
    """Thread-safe client with retries and a cap on concurrent requests."""

    def __init__(
        self,
        config: GatewayConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.model = config.model
        self.temperature = config.temperature
        self.max_tokens = config.max_tokens
        self._client = client or httpx.Client(timeout=config.timeout_ms / 1000)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))
        self.calls = 0

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env, "")
        if not key:
            raise AuthError(f"environment variable {self.config.api_key_env} is not set")
        return key

    def chat(self, request: ChatRequest) -> str:
        key = self._api_key()
        body = {
            "model": request.model or self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {key}"}
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = min(self.config.backoff_base * 2 ** (attempt - 1), self.config.backoff_max)
                self._sleep(delay)
            try:
                with self._slots:
                    self.calls += 1
                    resp = self._client.post(url, json=body, headers=headers)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"credential rejected with HTTP {resp.status_code}")
            if resp.status_code in RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return _extract_content(resp)
        raise GatewayError(f"giving up after {self.config.max_retries + 1} attempts ({last_error})")


def _extract_content(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BadResponse(f"response has no choices[0].message.content: {exc!r}") from None
    if not isinstance(content, str):
        raise BadResponse("message content is not a string")
    return content


class MockGateway(ChatGateway):
    """Replays stored responses keyed by :func:`fixture_key`.

    A fixture value may be a list of strings, handed out in order on repeated
    identical requests (the last one repeats). On disk each fixture is
    ``<key>.txt`` (one response) or ``<key>.json`` (a JSON list).
    """

    def __init__(self, fixtures: dict[str, str | list[str]] | None = None):
        self._fixtures: dict[str, list[str]] = {}
        for key, value in (fixtures or {}).items():
            self._fixtures[key] = [value] if isinstance(value, str) else list(value)
        self._seen: Counter[str] = Counter()
        self._lock = threading.Lock()
        self.calls: list[str] = []

    def add(self, prompt: str | ChatRequest, response: str | list[str]) -> str:
        request = prompt if isinstance(prompt, ChatRequest) else ChatRequest.user(prompt)
        key = fixture_key(request)
        self._fixtures[key] = [response] if isinstance(response, str) else list(response)
        return key

    def chat(self, request: ChatRequest) -> str:
        key = fixture_key(request)
        with self._lock:
            self.calls.append(key)
            options = self._fixtures.get(key)
            if options is None:
                raise FixtureMissing(f"no fixture for request {key[:16]}")
            i = min(self._seen[key], len(options) - 1)
            self._seen[key] += 1
        return options[i]

    @classmethod
    def from_dir(cls, path) -> "MockGateway":
        path = Path(path)
        if not path.is_dir():
            raise GatewayError(f"fixture directory {path} does not exist")
        fixtures: dict[str, str | list[str]] = {}
        for f in sorted(path.iterdir()):
            if f.suffix == ".txt":
                fixtures[f.stem] = f.read_text(encoding="utf-8")
            elif f.suffix == ".json":
                fixtures[f.stem] = json.loads(f.read_text(encoding="utf-8"))
        return cls(fixtures)


@dataclass
class RecordingGateway(ChatGateway):
    """Answers with ``responder`` and writes each exchange as a mock fixture."""

    responder: Callable[[ChatRequest], str]
    out_dir: Path
    recorded: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def chat(self, request: ChatRequest) -> str:
        response = self.responder(request)
        key = fixture_key(request)
        with self._lock:
            self.recorded[key] = response
            (self.out_dir / f"{key}.txt").write_text(response, encoding="utf-8")
        return response
