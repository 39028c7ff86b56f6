"""Chat-completion backend with mock playbooks and record/replay cassettes."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import httpx

log = logging.getLogger(__name__)

MODES = ("live", "mock", "record", "replay")


class GatewayError(Exception):
    """Base class for backend failures."""


class BackendUnavailable(GatewayError):
    pass


class AuthMissing(GatewayError):
    pass


class MockMiss(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message must not be empty")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    model_id: str = "glm-4-flash"
    temperature: float = 0.0
    max_tokens: int = 2048
    template: str = ""  # cassette key component; not sent on the wire

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.messages[-1].role != "user":
            raise ValueError("last message must come from the user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def from_prompt(cls, prompt: str, template: str = "", **kwargs: Any) -> CompletionRequest:
        return cls(messages=(ChatMessage("user", prompt),), template=template, **kwargs)

    @property
    def prompt(self) -> str:
        return "\n\n".join(m.content for m in self.messages)

    def wire_body(self) -> dict[str, Any]:
        return {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass
class BackendConfig:
    base_url: str = "https://open.bigmodel.cn/api/paas/v4"
    model_id: str = "glm-4-flash"
    api_key_env: str = "GLM_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    mode: str = "live"
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def cassette_key(template: str, prompt: str) -> str:
    return hashlib.sha256(f"{template}\x00{prompt}".encode("utf-8")).hexdigest()


@dataclass
class MockPlaybook:
    """Scripted replies consumed strictly in order.

    Each entry is ``(matcher, response)``; the next entry's matcher must occur
    in the rendered prompt or the call fails with :class:`MockMiss`.
    """

    entries: list[tuple[str, str]]
    cursor: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def from_json(cls, data: Any) -> MockPlaybook:
        items = data["entries"] if isinstance(data, dict) else data
        entries = []
        for item in items:
            if isinstance(item, dict):
                entries.append((item["match"], item["response"]))
            else:
                matcher, response = item
                entries.append((matcher, response))
        return cls(entries)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> MockPlaybook:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def remaining(self) -> int:
        return len(self.entries) - self.cursor

    def respond(self, prompt: str) -> str:
        with self._lock:
            if self.cursor >= len(self.entries):
                raise MockMiss(f"playbook exhausted after {len(self.entries)} replies")
            matcher, response = self.entries[self.cursor]
            if matcher not in prompt:
                raise MockMiss(f"playbook entry {self.cursor} expects {matcher!r} in the prompt")
            self.cursor += 1
            return response


class Cassette:
    """JSON-lines log of ``{"key", "template", "response"}`` records.

    Replay hands out responses per key in recorded order.
    """

    def __init__(self, path: str | os.PathLike[str]):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._queues: dict[str, deque[str]] = defaultdict(deque)
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    row = json.loads(line)
                    self._queues[row["key"]].append(row["response"])

    def take(self, key: str) -> str:
        with self._lock:
            queue = self._queues.get(key)
            if not queue:
                raise MockMiss(f"no cassette entry for key {key[:12]}")
            return queue.popleft()

    def append(self, key: str, template: str, response: str) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "template": template, "response": response}) + "\n")


class LLMGateway:
    """Single entry point for every model call the pipeline makes."""

    def __init__(
        self,
        config: BackendConfig,
        playbook: Optional[MockPlaybook] = None,
        cassette: Optional[Cassette] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleep=time.sleep,
    ):
        self.config = config
        self.playbook = playbook
        self.cassette = cassette
        self._transport = transport
        self._sleep = sleep
        if config.mode == "mock" and playbook is None:
            raise ValueError("mock mode needs a playbook")
        if config.mode in ("record", "replay") and cassette is None:
            raise ValueError(f"{config.mode} mode needs a cassette")

    @classmethod
    def mock(cls, entries: Iterable[Sequence[str]], **config: Any) -> LLMGateway:
        playbook = MockPlaybook([(m, r) for m, r in entries])
        return cls(BackendConfig(mode="mock", **config), playbook=playbook)

    def complete(self, request: CompletionRequest) -> str:
        mode = self.config.mode
        if mode == "mock":
            return self.playbook.respond(request.prompt)
        key = cassette_key(request.template, request.prompt)
        if mode == "replay":
            return self.cassette.take(key)
        text = self._post(request)
        if mode == "record":
            self.cassette.append(key, request.template, text)
        return text

    def ask(self, prompt: str, template: str = "") -> str:
        request = CompletionRequest.from_prompt(
            prompt, template=template, model_id=self.config.model_id
        )
        return self.complete(request)

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthMissing(f"environment variable {self.config.api_key_env} is not set")
        return key

    def _post(self, request: CompletionRequest) -> str:
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        attempts = self.config.max_retries + 1
        last: Exception | None = None
        with httpx.Client(timeout=self.config.timeout_s, transport=self._transport) as client:
            for attempt in range(attempts):
                if attempt:
                    self._sleep(self.config.backoff_s * 2 ** (attempt - 1))
                try:
                    resp = client.post(url, json=request.wire_body(), headers=headers)
                except httpx.TransportError as exc:
                    last = exc
                    log.warning("attempt %d/%d: %s", attempt + 1, attempts, exc)
                    continue
                if resp.status_code >= 500:
                    last = GatewayError(f"HTTP {resp.status_code}")
                    log.warning("attempt %d/%d: HTTP %d", attempt + 1, attempts, resp.status_code)
                    continue
                if resp.status_code in (401, 403):
                    raise AuthMissing(f"backend rejected credentials (HTTP {resp.status_code})")
                if resp.status_code >= 400:
                    raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise GatewayError(f"unexpected response shape: {exc}") from exc
        raise BackendUnavailable(f"{attempts} attempts failed; last error: {last}")
