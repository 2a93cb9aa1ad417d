"""Uniform client for chat-completion endpoints.

Every network concern lives here: retries, backoff, auth, usage
accounting, and the per-host in-flight cap. Orchestration code only
sees ``complete(endpoint, context) -> CompletionResult``. A scripted
endpoint stands in for upstream models in tests and demos, making the
whole stack deterministic.
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import httpx

from .chat import PromptContext, estimate_tokens

DEFAULT_INFLIGHT_CAP = 4


class GatewayError(Exception):
    """Base class for completion failures."""


class TransportExhaustedError(GatewayError):
    """All retry attempts failed on transport-level errors."""


class AuthRejectedError(GatewayError):
    """Endpoint returned a well-formed auth failure; never retried."""


class MalformedResponseError(GatewayError):
    """Payload did not conform to the chat-completion convention."""


class ScriptExhaustedError(MalformedResponseError):
    """Scripted endpoint had no unconsumed entry matching the request."""


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for one upstream model.

    ``auth_ref`` names the environment variable holding the credential;
    the credential itself is never stored or logged.
    """

    base_url: str
    model_name: str
    auth_ref: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 4096
    request_timeout: float = 120.0
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class CompletionResult:
    content: str
    prompt_tokens: int
    output_tokens: int
    finish_reason: FinishReason


@dataclass
class ScriptEntry:
    match: str  # substring of the latest user message, or "*" wildcard
    reply: str
    finish_reason: FinishReason = FinishReason.STOP
    consumed: bool = False


class ScriptedEndpoint:
    """Deterministic test double: ordered one-shot (match, reply) entries."""

    def __init__(self, entries: list[tuple[str, str] | tuple[str, str, FinishReason]]):
        self.entries = [
            ScriptEntry(e[0], e[1], e[2] if len(e) > 2 else FinishReason.STOP)
            for e in entries
        ]
        self._lock = threading.Lock()

    def complete(self, context: PromptContext) -> CompletionResult:
        latest = context.latest_user_content()
        with self._lock:
            for entry in self.entries:
                if entry.consumed:
                    continue
                if entry.match == "*" or entry.match in latest:
                    entry.consumed = True
                    return CompletionResult(
                        content=entry.reply,
                        prompt_tokens=context.estimated_tokens(),
                        output_tokens=estimate_tokens(entry.reply),
                        finish_reason=entry.finish_reason,
                    )
        raise ScriptExhaustedError(
            f"no unconsumed script entry matches message: {latest[:120]!r}"
        )


_host_semaphores: dict[str, threading.BoundedSemaphore] = {}
_host_lock = threading.Lock()


def _inflight_gate(base_url: str, cap: int) -> threading.BoundedSemaphore:
    with _host_lock:
        if base_url not in _host_semaphores:
            _host_semaphores[base_url] = threading.BoundedSemaphore(cap)
        return _host_semaphores[base_url]


class HttpEndpoint:
    """OpenAI-style /chat/completions client with bounded retries.

    Transport errors back off exponentially (1s base, x2 per retry,
    +/-20% jitter); well-formed error payloads such as auth failures
    are never retried.
    """

    def __init__(
        self,
        config: EndpointConfig,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        inflight_cap: int = DEFAULT_INFLIGHT_CAP,
    ):
        self.config = config
        self._client = httpx.Client(
            transport=transport, timeout=config.request_timeout
        )
        self._sleeper = sleeper
        self._gate = _inflight_gate(config.base_url, inflight_cap)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_ref:
            credential = os.environ.get(self.config.auth_ref, "")
            if credential:
                headers["Authorization"] = f"Bearer {credential}"
        return headers

    def complete(self, context: PromptContext) -> CompletionResult:
        body = {
            "model": self.config.model_name,
            "messages": list(context.messages),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                delay = 1.0 * (2 ** (attempt - 1))
                delay *= 1.0 + random.uniform(-0.2, 0.2)
                self._sleeper(delay)
            try:
                with self._gate:
                    response = self._client.post(url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if response.status_code in (401, 403):
                raise AuthRejectedError(f"endpoint rejected credentials ({response.status_code})")
            if response.status_code >= 400:
                raise MalformedResponseError(
                    f"endpoint returned {response.status_code}: {response.text[:200]}"
                )
            return self._parse(response, context)
        raise TransportExhaustedError(
            f"{attempts} attempt(s) failed against {self.config.base_url}: {last_error}"
        )

    def _parse(self, response: httpx.Response, context: PromptContext) -> CompletionResult:
        try:
            payload = response.json()
            choice = payload["choices"][0]
            content = choice["message"]["content"]
            finish = FinishReason(choice.get("finish_reason", "stop"))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"non-conforming payload: {exc}") from exc
        usage = payload.get("usage") or {}
        # Some self-hosted runtimes omit usage; fall back to the chars/4 estimate.
        prompt_tokens = usage.get("prompt_tokens", context.estimated_tokens())
        output_tokens = usage.get("completion_tokens", estimate_tokens(content))
        return CompletionResult(
            content=content,
            prompt_tokens=prompt_tokens,
            output_tokens=output_tokens,
            finish_reason=finish,
        )


Endpoint = ScriptedEndpoint | HttpEndpoint


def complete(endpoint, context: PromptContext) -> CompletionResult:
    """Single entry point orchestration code uses for any endpoint kind."""
    return endpoint.complete(context)


@dataclass
class BudgetTracker:
    """Running prompt/output token totals for one session, split by agent."""

    prompt_tokens: int = 0
    output_tokens: int = 0
    per_agent_calls: dict[str, int] = field(default_factory=dict)
    per_agent_prompt: dict[str, int] = field(default_factory=dict)
    per_agent_output: dict[str, int] = field(default_factory=dict)

    def record(self, agent_name: str, result: CompletionResult) -> None:
        self.prompt_tokens += result.prompt_tokens
        self.output_tokens += result.output_tokens
        self.per_agent_calls[agent_name] = self.per_agent_calls.get(agent_name, 0) + 1
        self.per_agent_prompt[agent_name] = (
            self.per_agent_prompt.get(agent_name, 0) + result.prompt_tokens
        )
        self.per_agent_output[agent_name] = (
            self.per_agent_output.get(agent_name, 0) + result.output_tokens
        )

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.output_tokens
