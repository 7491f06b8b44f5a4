"""Uniform completion interface over a live chat endpoint and a scripted stand-in.

The engine only ever sees an object with a ``complete(request)`` method. The
scripted backend answers from an ordered list of (matcher, response) entries —
each entry fires once, in order — which makes every controller and mentor code
path drivable without a network. The live backend speaks the common
chat-completions wire shape with exponential backoff on transient failures.

Both backends record every (request, response) pair in a call log so tests
can assert on exactly what was sent.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Protocol

import httpx

from .errors import BackendRefused, BackendTimeout, ScriptExhausted, ValidationError

ROLE_STUDENT = "student"
ROLE_MENTOR = "mentor"
ROLE_SYSTEM = "system"

# Wire roles for chat-completions endpoints.
_WIRE_ROLES = {ROLE_STUDENT: "user", ROLE_MENTOR: "assistant", ROLE_SYSTEM: "system"}

FINISH_COMPLETE = "complete"
FINISH_TRUNCATED = "truncated"
FINISH_FILTERED = "filtered"

CONTROLLER_TEMPERATURE = 0.2
MENTOR_TEMPERATURE = 0.8

API_KEY_ENV = "MENTIGO_API_KEY"
API_BASE_ENV = "MENTIGO_API_BASE"


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str = ""
    messages: tuple[tuple[str, str], ...] = ()
    response_schema: str | None = None
    temperature: float = CONTROLLER_TEMPERATURE
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.system_text and not self.messages:
            raise ValidationError("request needs a system text or at least one message")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        for role, _ in self.messages:
            if role not in _WIRE_ROLES:
                raise ValidationError(f"unknown message role '{role}'")

    def rendered(self) -> str:
        """Flat text view of the whole request, used by script matchers."""
        parts = [self.system_text] if self.system_text else []
        parts.extend(f"{role}: {text}" for role, text in self.messages)
        return "\n".join(parts)


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    finish_reason: str = FINISH_COMPLETE
    latency_ms: int = 0

    def __post_init__(self):
        if self.finish_reason == FINISH_COMPLETE and not self.text:
            raise ValidationError("a complete response cannot be empty")
        if self.latency_ms < 0:
            raise ValidationError("latency_ms must be >= 0")


@dataclass(frozen=True)
class ScriptEntry:
    """Substring matcher over the rendered request; fires at most once."""

    matcher: str
    response: str


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "live" | "scripted"
    endpoint_url: str = ""
    model_name: str = ""
    timeout_ms: int = 30_000
    max_retries: int = 2
    script: tuple[ScriptEntry, ...] = ()
    default_response: str | None = None

    def __post_init__(self):
        if self.kind not in ("live", "scripted"):
            raise ValidationError(f"unknown backend kind '{self.kind}'")
        if self.timeout_ms < 1:
            raise ValidationError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.kind == "live" and not (self.endpoint_url and self.model_name):
            raise ValidationError("live backend needs endpoint_url and model_name")
        if self.kind == "scripted" and not self.script and self.default_response is None:
            raise ValidationError("scripted backend needs script entries or a default response")


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


class ScriptedBackend:
    """Deterministic backend: ordered one-shot script entries plus a default.

    Matching scans the script top to bottom and fires the first *unconsumed*
    entry whose matcher is a substring of the rendered request. Consumption is
    serialized with a lock so the order stays well-defined under concurrency.
    """

    def __init__(self, config: BackendConfig):
        if config.kind != "scripted":
            raise ValidationError("ScriptedBackend needs a scripted config")
        self.config = config
        self.call_log: list[tuple[CompletionRequest, CompletionResponse]] = []
        self._consumed = [False] * len(config.script)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        rendered = request.rendered()
        with self._lock:
            text = None
            for i, entry in enumerate(self.config.script):
                if not self._consumed[i] and entry.matcher in rendered:
                    self._consumed[i] = True
                    text = entry.response
                    break
            if text is None:
                if self.config.default_response is None:
                    raise ScriptExhausted(
                        f"no script entry matches request and no default is set "
                        f"(request starts: {rendered[:80]!r})"
                    )
                text = self.config.default_response
            response = CompletionResponse(text=text, finish_reason=FINISH_COMPLETE, latency_ms=0)
            self.call_log.append((request, response))
            return response


class FailingBackend:
    """Always raises; used to exercise the engine's degraded paths."""

    def __init__(self, error: Exception | None = None):
        self.error = error or BackendTimeout("backend disabled")
        self.call_log: list[tuple[CompletionRequest, CompletionResponse]] = []
        self.attempts = 0

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self.attempts += 1
        raise self.error


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}
BACKOFF_BASE_S = 0.5
BACKOFF_FACTOR = 2.0


class LiveBackend:
    """Chat-completions client with bounded exponential backoff.

    Transport errors, 5xx, and 429 are retried up to ``max_retries`` times
    (total attempts = retries + 1) with jittered exponential backoff starting
    at 500 ms. Any other 4xx is refused immediately. The sleep function and
    transport are injectable so the retry schedule is testable in real time.
    """

    def __init__(
        self,
        config: BackendConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if config.kind != "live":
            raise ValidationError("LiveBackend needs a live config")
        self.config = config
        self.call_log: list[tuple[CompletionRequest, CompletionResponse]] = []
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._client = httpx.Client(
            transport=transport,
            timeout=config.timeout_ms / 1000.0,
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _body(self, request: CompletionRequest) -> dict:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.extend(
            {"role": _WIRE_ROLES[role], "content": text} for role, text in request.messages
        )
        return {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        attempts = self.config.max_retries + 1
        last_failure = "no attempt made"
        started = time.monotonic()
        for attempt in range(attempts):
            if attempt > 0:
                delay = BACKOFF_BASE_S * (BACKOFF_FACTOR ** (attempt - 1))
                self._sleep(delay * (0.5 + self._rng.random()))
            try:
                http_response = self._client.post(
                    self.config.endpoint_url,
                    json=self._body(request),
                    headers=self._headers(),
                )
            except httpx.HTTPError as exc:
                last_failure = f"transport error: {exc}"
                continue
            if http_response.status_code in _RETRYABLE_STATUS:
                last_failure = f"status {http_response.status_code}"
                continue
            if 400 <= http_response.status_code < 500:
                raise BackendRefused(
                    f"endpoint refused with status {http_response.status_code}: "
                    f"{http_response.text[:200]}"
                )
            response = self._parse(http_response, started)
            self.call_log.append((request, response))
            return response
        raise BackendTimeout(f"gave up after {attempts} attempts; last failure: {last_failure}")

    def _parse(self, http_response: httpx.Response, started: float) -> CompletionResponse:
        latency_ms = int((time.monotonic() - started) * 1000)
        try:
            payload = http_response.json()
            choice = payload["choices"][0]
            text = choice["message"]["content"] or ""
            wire_reason = choice.get("finish_reason", "stop")
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise BackendTimeout(f"endpoint returned an unreadable body: {exc}") from exc
        reason = {
            "stop": FINISH_COMPLETE,
            "length": FINISH_TRUNCATED,
            "content_filter": FINISH_FILTERED,
        }.get(wire_reason, FINISH_COMPLETE if text else FINISH_TRUNCATED)
        if reason == FINISH_COMPLETE and not text:
            reason = FINISH_TRUNCATED
        return CompletionResponse(text=text, finish_reason=reason, latency_ms=latency_ms)


def backend_from_config(config: BackendConfig, **live_kwargs) -> Backend:
    if config.kind == "scripted":
        return ScriptedBackend(config)
    return LiveBackend(config, **live_kwargs)


# Per-config backend instances, so the config-first entry point below keeps
# script consumption state across calls with the same config value.
_BOUND: dict[int, Backend] = {}
_BOUND_LOCK = threading.Lock()


def complete(target: Backend | BackendConfig, request: CompletionRequest) -> CompletionResponse:
    """Run one completion against a backend or a config.

    Passing a config binds (and caches) a backend instance to it, so scripted
    consumption behaves the same as holding the backend object directly.
    """
    if isinstance(target, BackendConfig):
        with _BOUND_LOCK:
            backend = _BOUND.get(id(target))
            if backend is None:
                backend = backend_from_config(target)
                _BOUND[id(target)] = backend
        return backend.complete(request)
    return target.complete(request)


def load_script_config(path: str | os.PathLike) -> BackendConfig:
    """Read a scripted-backend config from JSON.

    Format: ``{"entries": [{"match": "...", "response": "..."}], "default": "..."}``.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = tuple(
        ScriptEntry(matcher=item["match"], response=item["response"])
        for item in doc.get("entries", [])
    )
    return BackendConfig(
        kind="scripted",
        script=entries,
        default_response=doc.get("default"),
    )


def live_config_from_env(model_name: str = "", timeout_ms: int = 30_000, max_retries: int = 2) -> BackendConfig:
    base = os.environ.get(API_BASE_ENV, "")
    if not base:
        raise ValidationError(f"live backend selected but {API_BASE_ENV} is not set")
    url = base.rstrip("/") + "/chat/completions"
    return BackendConfig(
        kind="live",
        endpoint_url=url,
        model_name=model_name or os.environ.get("MENTIGO_MODEL", "gpt-4o"),
        timeout_ms=timeout_ms,
        max_retries=max_retries,
    )


def with_temperature(request: CompletionRequest, temperature: float) -> CompletionRequest:
    return replace(request, temperature=temperature)
