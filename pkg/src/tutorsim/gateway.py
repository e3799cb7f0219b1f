"""Chat-completion gateway.

One uniform backend interface with two implementations: a remote
chat-completions client (any OpenAI-style provider; endpoint and model are
configuration) and a deterministic scripted backend for tests and offline
demos. All network activity in the system lives in this module.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

# Per-agent decoding budgets. Student replies are meant to be brief; the
# director only emits a speaker token; the end-of-session report is long-form.
MAX_TOKENS_STUDENT = 150
MAX_TOKENS_DIRECTOR = 30
MAX_TOKENS_IMMEDIATE_FEEDBACK = 400
MAX_TOKENS_ASYNC_FEEDBACK = 1200

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = (0.5, 1.0, 2.0)


class GatewayError(Exception):
    """Base class for backend failures."""


class Timeout(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class ProviderError(GatewayError):
    pass


class EmptyCompletion(GatewayError):
    pass


class MissingCredential(GatewayError):
    pass


class UnknownBackendKind(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatExchange:
    """One request to a chat model: role-tagged messages plus decoding
    parameters. `tag` identifies the calling agent (director, student:<name>,
    feedback, rater) for script matching and audit logs."""

    messages: tuple[ChatMessage, ...]
    tag: str
    max_tokens: int
    temperature: float | None = None  # None = backend default (0 unless overridden)

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("exchange needs at least one message")
        if self.messages[0].role != "system":
            raise ValueError("first message must have role 'system'")
        for m in self.messages:
            if m.role not in ROLES:
                raise ValueError(f"bad role {m.role!r}")
        if self.temperature is not None and not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResult:
    text: str
    latency_ms: float
    backend: str


@dataclass(frozen=True)
class ScriptEntry:
    expect_tag: str  # fnmatch pattern, e.g. "director" or "student:*"
    reply: str


@dataclass(frozen=True)
class Script:
    entries: tuple[ScriptEntry, ...]


Recorder = Callable[[ChatExchange, ChatResult], None]


class Backend(Protocol):
    name: str

    def complete(self, exchange: ChatExchange) -> ChatResult: ...


class ScriptedBackend:
    """Replays a fixed script. Entries are consumed strictly in order; a tag
    mismatch or an exhausted script is a hard error so tests can't drift."""

    name = "scripted"

    def __init__(self, script: Script, recorder: Recorder | None = None) -> None:
        self._entries = list(script.entries)
        self._cursor = 0
        self._lock = threading.Lock()
        self._recorder = recorder

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._cursor

    def complete(self, exchange: ChatExchange) -> ChatResult:
        with self._lock:
            if self._cursor >= len(self._entries):
                raise ProviderError(
                    f"script exhausted: no entry left for tag {exchange.tag!r}"
                )
            entry = self._entries[self._cursor]
            if not fnmatch.fnmatch(exchange.tag, entry.expect_tag):
                raise ProviderError(
                    f"script expected tag {entry.expect_tag!r}, got {exchange.tag!r}"
                )
            self._cursor += 1
        if not entry.reply.strip():
            raise EmptyCompletion(f"scripted reply for tag {exchange.tag!r} is empty")
        result = ChatResult(text=entry.reply, latency_ms=0.0, backend=self.name)
        logger.debug("scripted complete tag=%s -> %d chars", exchange.tag, len(entry.reply))
        if self._recorder:
            self._recorder(exchange, result)
        return result


class RemoteBackend:
    """OpenAI-style chat-completions client with bounded retries.

    Retries (with 0.5s/1s/2s backoff) only on timeouts, 429 and 5xx; other
    provider errors surface immediately with a body excerpt. The credential
    is read from the environment, never from catalog or transcript files.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: str,
        default_temperature: float = 0.0,
        timeout_s: float = 60.0,
        attempts: int = RETRY_ATTEMPTS,
        recorder: Recorder | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ) -> None:
        if credential_env not in os.environ or not os.environ[credential_env].strip():
            raise MissingCredential(f"environment variable {credential_env!r} is not set")
        self.endpoint = endpoint
        self.model = model
        self.default_temperature = default_temperature
        self.timeout_s = timeout_s
        self.attempts = attempts
        self._credential_env = credential_env
        self._recorder = recorder
        self._sleep = sleeper

    def _payload(self, exchange: ChatExchange) -> dict:
        temperature = (
            exchange.temperature if exchange.temperature is not None else self.default_temperature
        )
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in exchange.messages],
            "temperature": temperature,
            "max_tokens": exchange.max_tokens,
        }

    def complete(self, exchange: ChatExchange) -> ChatResult:
        import requests

        headers = {
            "Authorization": f"Bearer {os.environ[self._credential_env]}",
            "Content-Type": "application/json",
        }
        payload = self._payload(exchange)
        started = time.monotonic()
        last_error: GatewayError | None = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(RETRY_BACKOFF_S[min(attempt - 1, len(RETRY_BACKOFF_S) - 1)])
            try:
                response = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
            except requests.exceptions.RequestException as exc:
                last_error = Timeout(f"request failed: {exc}")
                logger.warning("remote attempt %d/%d failed: %s", attempt + 1, self.attempts, exc)
                continue
            if response.status_code == 429:
                last_error = RateLimited("provider returned 429")
                continue
            if response.status_code >= 500:
                last_error = ProviderError(
                    f"provider returned {response.status_code}: {response.text[:200]}"
                )
                continue
            if not response.ok:
                raise ProviderError(
                    f"provider returned {response.status_code}: {response.text[:200]}"
                )
            text = self._extract_text(response)
            latency_ms = (time.monotonic() - started) * 1000.0
            result = ChatResult(text=text, latency_ms=latency_ms, backend=self.name)
            logger.info(
                "remote complete tag=%s latency_ms=%.0f chars=%d",
                exchange.tag, latency_ms, len(text),
            )
            if self._recorder:
                self._recorder(exchange, result)
            return result
        assert last_error is not None
        raise last_error

    @staticmethod
    def _extract_text(response) -> str:
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {response.text[:200]}") from exc
        if not isinstance(text, str) or not text.strip():
            raise EmptyCompletion("provider returned an empty completion")
        return text


@dataclass
class BackendConfig:
    """How to build a backend. kind is 'scripted' or 'remote'."""

    kind: str
    script_path: str | None = None
    script: Script | None = None
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    credential_env: str = "TUTORSIM_API_KEY"
    temperature: float = 0.0
    timeout_s: float = 60.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "BackendConfig":
        known = {f for f in cls.__dataclass_fields__ if f not in ("script", "extra")}
        kwargs = {k: v for k, v in raw.items() if k in known}
        extra = {k: v for k, v in raw.items() if k not in known}
        if "kind" not in kwargs:
            raise UnknownBackendKind("backend config needs a 'kind'")
        return cls(extra=extra, **kwargs)


def load_script(path: str | Path) -> Script:
    """Script files use the same JSON format family as the catalog:
    a list of {"expect_tag": ..., "reply": ...} objects."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ProviderError("script file must contain a JSON list")
    entries = []
    for i, e in enumerate(raw):
        if not isinstance(e, dict) or "expect_tag" not in e or "reply" not in e:
            raise ProviderError(f"script entry {i} needs expect_tag and reply")
        entries.append(ScriptEntry(expect_tag=str(e["expect_tag"]), reply=str(e["reply"])))
    return Script(entries=tuple(entries))


def configure_backend(config: BackendConfig, recorder: Recorder | None = None) -> Backend:
    if config.kind == "scripted":
        script = config.script
        if script is None:
            if not config.script_path:
                raise ProviderError("scripted backend needs a script or script_path")
            script = load_script(config.script_path)
        return ScriptedBackend(script, recorder=recorder)
    if config.kind == "remote":
        return RemoteBackend(
            endpoint=config.endpoint,
            model=config.model,
            credential_env=config.credential_env,
            default_temperature=config.temperature,
            timeout_s=config.timeout_s,
            recorder=recorder,
        )
    raise UnknownBackendKind(f"unknown backend kind {config.kind!r}")
