"""Completion and embedding backends.

Two families share one interface: :class:`HTTPBackend` talks to an
OpenAI-compatible chat-completions endpoint, and :class:`ReplayBackend` answers
from an ordered rule script so the whole engine can run deterministically
in tests.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .exceptions import EmbeddingUnavailableError, ScriptError, TransportError
from .text import tokenize

logger = logging.getLogger(__name__)

HASH_EMBED_DIM = 256


class Role(str, enum.Enum):
    NER = "NER"
    TRIPLE_EXTRACT = "TRIPLE_EXTRACT"
    INTEGRATE = "INTEGRATE"
    READER_TRIPLE = "READER_TRIPLE"
    READER_SENTENCE = "READER_SENTENCE"
    READER_PASSAGE = "READER_PASSAGE"
    READER_DEFAULT = "READER_DEFAULT"


EXTRACTION_ROLES = frozenset({Role.NER, Role.TRIPLE_EXTRACT})
READER_ROLES = frozenset(
    {Role.READER_TRIPLE, Role.READER_SENTENCE, Role.READER_PASSAGE, Role.READER_DEFAULT}
)


@dataclass(frozen=True)
class CompletionRequest:
    role: Role
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency: float
    model_id: str
    input_tokens: int = 0
    output_tokens: int = 0


def hash_embed(text: str, dim: int = HASH_EMBED_DIM) -> np.ndarray:
    """Deterministic bag-of-tokens embedding. Not semantic; for offline tests only."""
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokenize(text) or [""]:
        digest = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        vec[h % dim] += 1.0 if (h >> 32) & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # opposite-signed collisions cancelled out
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


class Backend:
    """Common accounting for every backend.

    Subclasses implement ``_complete``; ``complete`` wraps it with per-role
    call counting and a transcript.
    """

    model_id = "unknown"

    def __init__(self, hash_embedding_fallback: bool = False):
        self.hash_embedding_fallback = hash_embedding_fallback
        self.calls: Counter[Role] = Counter()
        self.transcript: list[tuple[Role, str, str]] = []
        self._lock = threading.Lock()

    def __deepcopy__(self, memo):
        # a backend is a shared service handle (locks, connection pools); clones share it
        return self

    def complete(self, req: CompletionRequest) -> CompletionResult:
        result = self._complete(req)
        with self._lock:
            self.calls[req.role] += 1
            self.transcript.append((req.role, req.prompt, result.text))
        return result

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        raise NotImplementedError

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not self.hash_embedding_fallback:
            raise EmbeddingUnavailableError(f"{type(self).__name__} has no embedding endpoint")
        return [hash_embed(t) for t in texts]

    def call_count(self, *roles: Role) -> int:
        if not roles:
            return sum(self.calls.values())
        return sum(self.calls[r] for r in roles)

    def reset_counters(self) -> None:
        with self._lock:
            self.calls.clear()
            self.transcript.clear()


@dataclass
class ReplayRule:
    """One scripted response.

    A rule matches when the role agrees and, if given, ``contains`` is a
    substring of the prompt and ``pattern`` matches it. ``responses`` are
    handed out in order; once spent the rule stops matching unless ``cycle``
    is set, in which case the last response repeats.
    """

    role: Role
    responses: list[str]
    contains: str | None = None
    pattern: str | None = None
    cycle: bool = True
    required: bool = False
    used: int = 0

    def matches(self, req: CompletionRequest) -> bool:
        if req.role != self.role:
            return False
        if not self.cycle and self.used >= len(self.responses):
            return False
        if self.contains is not None and self.contains not in req.prompt:
            return False
        if self.pattern is not None and not re.search(self.pattern, req.prompt, re.S):
            return False
        return True

    def take(self) -> str:
        text = self.responses[min(self.used, len(self.responses) - 1)]
        self.used += 1
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayRule":
        if "responses" in d:
            responses = list(d["responses"])
        elif "response" in d:
            responses = [d["response"]]
        else:
            raise ScriptError(f"replay rule for {d.get('role')} has no response")
        return cls(
            role=Role(d["role"]),
            responses=responses,
            contains=d.get("contains"),
            pattern=d.get("pattern"),
            cycle=d.get("cycle", True),
            required=d.get("required", False),
        )


class ReplayBackend(Backend):
    """First-matching-rule-wins scripted backend.

    ``default`` is returned when nothing matches; when it is None an unmatched
    request raises :class:`ScriptError` naming the role.
    """

    def __init__(self, rules: Sequence[ReplayRule] = (), default: str | None = None,
                 model_id: str = "replay", hash_embedding_fallback: bool = True):
        super().__init__(hash_embedding_fallback=hash_embedding_fallback)
        self.rules = list(rules)
        self.default = default
        self.model_id = model_id
        self._rule_lock = threading.Lock()

    def add(self, role: Role | str, response: str | list[str], **kw) -> "ReplayBackend":
        responses = [response] if isinstance(response, str) else list(response)
        self.rules.append(ReplayRule(Role(role), responses, **kw))
        return self

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        start = time.perf_counter()
        with self._rule_lock:
            for rule in self.rules:
                if rule.matches(req):
                    text = rule.take()
                    break
            else:
                if self.default is None:
                    raise ScriptError(f"no replay rule matches role {req.role.value}")
                text = self.default
        return CompletionResult(text, time.perf_counter() - start, self.model_id)

    def assert_exhausted(self) -> None:
        """Fail loudly if any required rule never fired."""
        unused = [r for r in self.rules if r.required and r.used == 0]
        if unused:
            names = ", ".join(f"{r.role.value}:{r.contains or r.pattern or '*'}" for r in unused)
            raise ScriptError(f"required replay rules never matched: {names}")

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        """Load a JSON or YAML script: ``{"rules": [...], "default": ..., "model": ...}``."""
        text = Path(path).read_text(encoding="utf-8")
        if str(path).endswith((".yaml", ".yml")):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        return cls(
            [ReplayRule.from_dict(r) for r in data.get("rules", [])],
            default=data.get("default"),
            model_id=data.get("model", "replay"),
        )


class FunctionBackend(Backend):
    """Backend whose responses are computed by per-role callables."""

    def __init__(self, handlers: dict[Role, Callable[[str], str]], model_id: str = "oracle",
                 hash_embedding_fallback: bool = True):
        super().__init__(hash_embedding_fallback=hash_embedding_fallback)
        self.handlers = handlers
        self.model_id = model_id

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        handler = self.handlers.get(req.role)
        if handler is None:
            raise ScriptError(f"no handler for role {req.role.value}")
        start = time.perf_counter()
        text = handler(req.prompt)
        return CompletionResult(text, time.perf_counter() - start, self.model_id)


# the key is read from this variable only, never from config files or flags
API_KEY_ENV = "CIRAG_API_KEY"


@dataclass
class HTTPConfig:
    endpoint: str
    model: str
    timeout: float = 60.0
    max_retries: int = 4
    backoff: float = 0.5
    max_in_flight: int = 4
    embedding_model: str | None = None
    extra_headers: dict[str, str] = field(default_factory=dict)


_RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


class HTTPBackend(Backend):
    """OpenAI-compatible client with retry/backoff and an in-flight bound."""

    def __init__(self, config: HTTPConfig, hash_embedding_fallback: bool = False,
                 client=None, sleep: Callable[[float], None] = time.sleep):
        super().__init__(hash_embedding_fallback=hash_embedding_fallback)
        import httpx

        self.config = config
        self.model_id = config.model
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        headers = {"Content-Type": "application/json", **config.extra_headers}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(
            base_url=config.endpoint.rstrip("/"), headers=headers, timeout=config.timeout
        )

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        delay = self.config.backoff
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            with self._slots:
                try:
                    resp = self._client.post(path, json=payload)
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    logger.warning("request to %s failed (%s), attempt %d", path, last_error, attempt + 1)
                    continue
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("request to %s returned %d, attempt %d", path, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code} from {path}: {resp.text[:200]}")
            return resp.json()
        raise TransportError(f"retries exhausted for {path}: {last_error}")

    def _complete(self, req: CompletionRequest) -> CompletionResult:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        start = time.perf_counter()
        data = self._post("/chat/completions", payload)
        latency = time.perf_counter() - start
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {str(data)[:200]}") from exc
        usage = data.get("usage") or {}
        return CompletionResult(
            text,
            latency,
            data.get("model", self.config.model),
            usage.get("prompt_tokens", 0),
            usage.get("completion_tokens", 0),
        )

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not self.config.embedding_model:
            return super().embed(texts)
        data = self._post("/embeddings", {"model": self.config.embedding_model, "input": list(texts)})
        rows = sorted(data["data"], key=lambda r: r["index"])
        out = []
        for row in rows:
            v = np.asarray(row["embedding"], dtype=np.float64)
            out.append(v / (np.linalg.norm(v) or 1.0))
        return out
