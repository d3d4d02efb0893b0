"""Completion and embedding backends.

Two implementations behind one seam: a scripted provider for hermetic runs
(canned responses, zero tokens, zero network) and an HTTP client for a
chat-completions-style API with bounded retries.  Usage is accounted per
call and merges additively.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .graph import FunctionalType, default_role_classifier

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "SKILLLOOP_API_TOKEN"


class ProviderError(RuntimeError):
    """Transport failure after retries, or scripted playback exhaustion."""


@dataclass(frozen=True)
class UsageRecord:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0
    wall_ms: int = 0

    def __post_init__(self):
        for name in ("prompt_tokens", "completion_tokens", "calls", "wall_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def merge(self, other: "UsageRecord") -> "UsageRecord":
        return UsageRecord(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.calls + other.calls,
            self.wall_ms + other.wall_ms,
        )

    def to_json_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "calls": self.calls,
            "wall_ms": self.wall_ms,
        }


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    system: str
    messages: tuple[tuple[str, str], ...]
    tools: tuple[Mapping, ...] | None = None
    max_tokens: int = 1024
    temperature: float = 0.0
    key: tuple[str, int] | None = None  # scripted playback key (node id, activation index)

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")


class CompletionProvider(Protocol):
    def complete(self, req: CompletionRequest) -> tuple[str, UsageRecord]: ...


@dataclass
class ScriptedProvider:
    """Plays back canned completions keyed by (node id, activation index).

    On a missing key: ``repeat_last`` re-serves the highest-index entry for
    that node, ``fault`` raises ProviderError.  Deterministic, zero tokens,
    zero network.
    """

    entries: Mapping[tuple[str, int], str]
    exhaustion: str = "fault"  # "repeat_last" | "fault"

    def complete(self, req: CompletionRequest) -> tuple[str, UsageRecord]:
        usage = UsageRecord(calls=1)
        if req.key is not None and req.key in self.entries:
            return self.entries[req.key], usage
        if self.exhaustion == "repeat_last" and req.key is not None:
            node = req.key[0]
            candidates = [(i, text) for (n, i), text in self.entries.items() if n == node]
            if candidates:
                return max(candidates)[1], usage
        raise ProviderError(f"no scripted completion for key {req.key!r}")


@dataclass
class HttpProvider:
    """Chat-completions-style HTTP client with bounded exponential backoff."""

    endpoint: str
    model: str
    token_env: str = DEFAULT_TOKEN_ENV
    max_attempts: int = 3
    backoff_s: float = 1.0
    timeout_s: float = 60.0

    def complete(self, req: CompletionRequest) -> tuple[str, UsageRecord]:
        import httpx

        token = os.environ.get(self.token_env, "")
        payload = {
            "model": req.model or self.model,
            "messages": [{"role": "system", "content": req.system}]
            + [{"role": role, "content": content} for role, content in req.messages],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        start = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                response = httpx.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_s
                )
                if response.status_code >= 500:
                    last_error = ProviderError(f"server error {response.status_code}")
                    continue
                response.raise_for_status()
                data = response.json()
                text = data["choices"][0]["message"]["content"]
                usage = data.get("usage", {})
                wall_ms = int((time.monotonic() - start) * 1000)
                return text, UsageRecord(
                    usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0), 1, wall_ms
                )
            except httpx.HTTPError as exc:
                last_error = exc
                logger.warning("provider attempt %d failed: %s", attempt + 1, exc)
        raise ProviderError(f"completion failed after {self.max_attempts} attempts: {last_error}")


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


def _l2_normalize(vector: Sequence[float]) -> tuple[float, ...]:
    norm = sum(x * x for x in vector) ** 0.5
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return tuple(x / norm for x in vector)


@dataclass
class DefaultEmbedder:
    """Deterministic embedder: each text is read as a comma-separated role
    set, every role is canonicalized to its functional type, and the result
    is the L2-normalized 7-dimensional type count vector."""

    def embed(self, texts: Sequence[str]) -> list[tuple[float, ...]]:
        if not texts:
            raise ValueError("embed requires at least one text")
        order = list(FunctionalType)
        out = []
        for text in texts:
            counts = {t: 0 for t in order}
            for role in (part.strip() for part in text.split(",") if part.strip()):
                counts[default_role_classifier(role)] += 1
            out.append(_l2_normalize([float(counts[t]) for t in order]))
        return out


@dataclass
class HttpEmbedder:
    endpoint: str
    model: str
    token_env: str = DEFAULT_TOKEN_ENV
    timeout_s: float = 60.0

    def embed(self, texts: Sequence[str]) -> list[tuple[float, ...]]:
        import httpx

        if not texts:
            raise ValueError("embed requires at least one text")
        token = os.environ.get(self.token_env, "")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        response = httpx.post(
            self.endpoint,
            json={"model": self.model, "input": list(texts)},
            headers=headers,
            timeout=self.timeout_s,
        )
        response.raise_for_status()
        data = response.json()
        return [_l2_normalize(item["embedding"]) for item in data["data"]]


# ---------------------------------------------------------------------------
# Scripted policy playback
# ---------------------------------------------------------------------------


@dataclass
class ScriptedPolicy:
    """Deterministic node policy: canned actions keyed by
    (task id, node id, activation index), with (node id, activation index)
    as a task-independent fallback key.

    ``exhaustion``: ``repeat_last`` re-serves the node's highest-index entry,
    ``fault`` raises ProviderError (the runtime records it as a fault turn).
    """

    playbook: Mapping[tuple, object]
    exhaustion: str = "fault"

    def lookup(self, task_id: str, node_id: str, activation: int):
        for key in ((task_id, node_id, activation), (node_id, activation)):
            if key in self.playbook:
                return self.playbook[key]
        if self.exhaustion == "repeat_last":
            candidates = [
                (k[-1], v)
                for k, v in self.playbook.items()
                if (len(k) == 3 and k[:2] == (task_id, node_id)) or (len(k) == 2 and k[0] == node_id)
            ]
            if candidates:
                return max(candidates, key=lambda kv: kv[0])[1]
        raise ProviderError(
            f"scripted playbook exhausted for node {node_id!r} "
            f"(task {task_id!r}, activation {activation})"
        )


def load_playbook(path: str | Path) -> dict[tuple, dict]:
    """Load a JSON playback file: a list of entries with ``task`` (optional),
    ``node``, ``activation``, and ``action`` keys; actions stay as plain
    dicts for the runtime to interpret."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    playbook: dict[tuple, dict] = {}
    for entry in data["entries"]:
        key: tuple
        if "task" in entry:
            key = (entry["task"], entry["node"], entry["activation"])
        else:
            key = (entry["node"], entry["activation"])
        playbook[key] = entry["action"]
    return playbook
