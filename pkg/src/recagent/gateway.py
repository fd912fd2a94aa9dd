"""Chat-completion providers.

Two implementations of one small contract: an HTTP client speaking the
de-facto ``/chat/completions`` JSON protocol against a configurable base URL,
and a scripted provider that replays canned fixtures for deterministic tests.
The API key is read exclusively from the ``RECAGENT_API_KEY`` environment
variable; it never appears in config files or logs.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import requests

from .errors import ProviderError

logger = logging.getLogger(__name__)

API_KEY_ENV = "RECAGENT_API_KEY"
MAX_RETRIES = 3

Message = tuple[str, str]


@dataclass
class GenParams:
    temperature: float = 0.0
    max_tokens: int | None = None
    stop: list[str] | None = None


class ChatProvider:
    """Behavioral contract: complete(messages, params) -> reply text."""

    call_count: int = 0

    def complete(self, messages: list[Message], params: GenParams) -> str:
        raise NotImplementedError


@dataclass
class ScriptEntry:
    match: str
    reply: str


class ScriptedProvider(ChatProvider):
    """Replays a fixture: an ordered list of (matcher, reply) entries.

    Each call scans the unconsumed entries in order and consumes the first
    whose matcher is a substring of the last user message ("*" matches
    anything). No matching entry left means the script ran dry.
    """

    def __init__(self, entries: list[ScriptEntry | tuple[str, str]]):
        self.entries = [
            e if isinstance(e, ScriptEntry) else ScriptEntry(match=e[0], reply=e[1])
            for e in entries
        ]
        self._used = [False] * len(self.entries)
        self.call_count = 0

    @classmethod
    def from_path(cls, path: str) -> "ScriptedProvider":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    data = json.loads(line)
                    entries.append(ScriptEntry(match=data["match"], reply=data["reply"]))
        return cls(entries)

    def complete(self, messages: list[Message], params: GenParams) -> str:
        self.call_count += 1
        last_user = ""
        for role, text in reversed(messages):
            if role == "user":
                last_user = text
                break
        for i, entry in enumerate(self.entries):
            if self._used[i]:
                continue
            if entry.match == "*" or entry.match in last_user:
                self._used[i] = True
                return entry.reply
        raise ProviderError("script exhausted")


class HttpChatProvider(ChatProvider):
    """Chat-completions client with bounded exponential-backoff retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        timeout: float = 60.0,
        session: requests.Session | None = None,
        backoff: float = 0.5,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.backoff = backoff
        self._session = session or requests.Session()
        self.call_count = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: list[Message], params: GenParams) -> str:
        self.call_count += 1
        body: dict = {
            "model": self.model,
            "messages": [{"role": role, "content": text} for role, text in messages],
            "temperature": params.temperature,
        }
        if params.max_tokens is not None:
            body["max_tokens"] = params.max_tokens
        if params.stop:
            body["stop"] = params.stop
        url = f"{self.base_url}/chat/completions"
        logger.debug("POST %s body=%s", url, json.dumps(body)[:2000])

        last_error: Exception | None = None
        for attempt in range(MAX_RETRIES):
            try:
                resp = self._session.post(
                    url, json=body, headers=self._headers(), timeout=self.timeout
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    last_error = ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                elif resp.status_code >= 400:
                    raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    data = resp.json()
                    logger.debug("reply=%s", json.dumps(data)[:2000])
                    try:
                        return data["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError) as exc:
                        raise ProviderError(f"malformed completion response: {exc}") from exc
            except ProviderError:
                raise
            except requests.RequestException as exc:
                last_error = exc
            time.sleep(self.backoff * (2**attempt))
        raise ProviderError(f"provider failed after {MAX_RETRIES} attempts: {last_error}")


@dataclass
class CallCounters:
    """Per-session accounting that separates actor calls (plan + respond)
    from critic and profile-extraction calls."""

    actor: int = 0
    critic: int = 0
    profile: int = 0

    def snapshot(self) -> dict[str, int]:
        return {"actor": self.actor, "critic": self.critic, "profile": self.profile}


class CountingProvider(ChatProvider):
    """Wraps a provider and bumps one CallCounters field per call."""

    def __init__(self, inner: ChatProvider, counters: CallCounters, kind: str):
        if kind not in ("actor", "critic", "profile"):
            raise ValueError(f"unknown call kind: {kind}")
        self.inner = inner
        self.counters = counters
        self.kind = kind

    @property
    def call_count(self) -> int:  # type: ignore[override]
        return self.inner.call_count

    def complete(self, messages: list[Message], params: GenParams) -> str:
        setattr(self.counters, self.kind, getattr(self.counters, self.kind) + 1)
        return self.inner.complete(messages, params)


def complete(provider: ChatProvider, messages: list[Message], params: GenParams | None = None) -> str:
    if not messages:
        raise ProviderError("messages must be non-empty")
    return provider.complete(messages, params or GenParams())


class HttpEmbeddingProvider:
    """Optional sentence-embedding client, same wire shape as the chat API."""

    def __init__(self, base_url: str, model: str, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self._session = requests.Session()

    def __call__(self, text: str) -> list[float]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._session.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["data"][0]["embedding"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
