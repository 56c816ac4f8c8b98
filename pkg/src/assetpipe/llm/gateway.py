"""Provider-agnostic access to chat-completion and embedding services."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from ..simmetrics import word_tokens

logger = logging.getLogger(__name__)


class LLMError(RuntimeError):
    pass


class TransientLLMError(LLMError):
    """Failure worth retrying (timeouts, 5xx, rate limits, dropped connections)."""


class LLMTimeoutError(LLMError):
    pass


class LLMProviderError(LLMError):
    def __init__(self, status: int, payload: str):
        self.status = status
        self.payload = payload
        super().__init__(f"provider returned {status}: {payload[:500]}")


class UnscriptedPromptError(LLMError):
    pass


@dataclass
class LLMRequest:
    model: str
    prompt: str
    temperature: float = 0.0
    seed: int | None = 0
    max_output_tokens: int = 1024
    timeout: float = 120.0

    def __post_init__(self):
        if not self.prompt or not self.prompt.strip():
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass
class LLMResponse:
    text: str
    model: str
    latency: float
    truncated: bool = False
    attempts: int = 1


class Provider(Protocol):
    def generate(self, request: LLMRequest) -> tuple[str, bool]: ...

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]: ...


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class HttpProvider:
    """Client for a local model server: POST /api/generate and /api/embed."""

    def __init__(self, endpoint: str, session: requests.Session | None = None, embed_timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.session = session or requests.Session()
        self.embed_timeout = embed_timeout

    def _post(self, path: str, payload: dict, timeout: float) -> dict:
        try:
            resp = self.session.post(f"{self.endpoint}{path}", json=payload, timeout=timeout)
        except requests.Timeout as exc:
            raise TransientLLMError(f"timeout: {exc}") from exc
        except requests.ConnectionError as exc:
            raise TransientLLMError(f"connection: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientLLMError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise LLMProviderError(resp.status_code, resp.text)
        try:
            data = resp.json()
        except ValueError as exc:
            raise LLMProviderError(resp.status_code, f"non-JSON body: {resp.text[:200]}") from exc
        if isinstance(data, dict) and data.get("error"):
            raise LLMProviderError(resp.status_code, str(data["error"]))
        return data

    def generate(self, request: LLMRequest) -> tuple[str, bool]:
        options = {"temperature": request.temperature, "num_predict": request.max_output_tokens}
        if request.seed is not None:
            options["seed"] = request.seed
        data = self._post(
            "/api/generate",
            {"model": request.model, "prompt": request.prompt, "options": options, "stream": False},
            request.timeout,
        )
        if "response" not in data:
            raise LLMProviderError(200, f"missing 'response' field: {json.dumps(data)[:200]}")
        return data["response"], data.get("done_reason") == "length"

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        data = self._post("/api/embed", {"model": model, "input": list(texts)}, self.embed_timeout)
        vecs = data.get("embeddings")
        if not isinstance(vecs, list) or len(vecs) != len(texts):
            raise LLMProviderError(200, "embedding response does not match input length")
        return vecs


@dataclass
class StubRule:
    pattern: re.Pattern
    response: str

    def apply(self, prompt: str) -> str | None:
        m = self.pattern.search(prompt)
        return m.expand(self.response) if m else None


@dataclass
class StubProvider:
    """Scripted provider for tests and offline runs.

    Lookup order: exact prompt (by SHA-256), then regex rules in order (the
    response may use ``\\g<name>`` backreferences), then ``responder``, then
    ``default``. ``failures`` maps a prompt to how many calls fail with a
    transient error before it answers.
    """

    responses: dict[str, str] = field(default_factory=dict)
    rules: list[StubRule] = field(default_factory=list)
    default: str | None = None
    responder: Callable[[str], str | None] | None = None
    failures: dict[str, int] = field(default_factory=dict)
    truncate: set[str] = field(default_factory=set)

    def __post_init__(self):
        self._by_hash = {prompt_key(p): r for p, r in self.responses.items()}
        self._fail_left = {prompt_key(p): n for p, n in self.failures.items()}
        self._truncate = {prompt_key(p) for p in self.truncate}
        self._lock = threading.Lock()
        self.calls: list[str] = []

    def add_hash(self, key: str, response: str) -> None:
        self._by_hash[key] = response

    @classmethod
    def from_file(cls, path: str | Path) -> "StubProvider":
        """JSON: {"responses": {sha256: text}, "rules": [{"regex", "response"}], "default"}."""
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        stub = cls(
            rules=[StubRule(re.compile(r["regex"], re.S), r["response"]) for r in spec.get("rules", [])],
            default=spec.get("default"),
        )
        for key, text in spec.get("responses", {}).items():
            stub.add_hash(key, text)
        return stub

    def generate(self, request: LLMRequest) -> tuple[str, bool]:
        key = prompt_key(request.prompt)
        with self._lock:
            self.calls.append(request.prompt)
            left = self._fail_left.get(key, 0)
            if left:
                self._fail_left[key] = left - 1
                raise TransientLLMError("scripted failure")
        truncated = key in self._truncate
        if key in self._by_hash:
            return self._by_hash[key], truncated
        for rule in self.rules:
            out = rule.apply(request.prompt)
            if out is not None:
                return out, truncated
        if self.responder is not None:
            out = self.responder(request.prompt)
            if out is not None:
                return out, truncated
        if self.default is not None:
            return self.default, truncated
        raise UnscriptedPromptError(f"no scripted response for prompt {key[:12]}")

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        raise LLMError("stub provider has no embedding model")


def fallback_embeddings(texts: Sequence[str]) -> np.ndarray:
    """L2-normalised token-frequency vectors over the batch vocabulary."""
    toks = [Counter(word_tokens(t)) for t in texts]
    vocab = sorted({w for c in toks for w in c})
    index = {w: i for i, w in enumerate(vocab)}
    mat = np.zeros((len(texts), len(vocab)))
    for row, counts in enumerate(toks):
        for w, n in counts.items():
            mat[row, index[w]] = n
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    np.divide(mat, norms, out=mat, where=norms > 0)
    return mat


class Gateway:
    """Retrying, concurrency-bounded front door to a Provider."""

    def __init__(
        self,
        provider: Provider | None,
        *,
        retries: int = 3,
        backoff: float = 0.5,
        max_concurrency: int = 4,
        timeout: float = 120.0,
        seed: int | None = 0,
        embed_model: str | None = None,
        embed_fallback: bool = True,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.provider = provider
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.seed = seed
        self.embed_model = embed_model
        self.embed_fallback = embed_fallback
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self.max_concurrency = max_concurrency
        self.stats = defaultdict(int)

    def request(self, model: str, prompt: str, **kw) -> LLMRequest:
        kw.setdefault("timeout", self.timeout)
        kw.setdefault("seed", self.seed)
        return LLMRequest(model=model, prompt=prompt, **kw)

    def ask(self, model: str, prompt: str, **kw) -> str:
        return self.complete(self.request(model, prompt, **kw)).text

    def complete(self, request: LLMRequest) -> LLMResponse:
        if self.provider is None:
            raise LLMError("no LLM provider configured")
        if not request.prompt.strip():
            raise ValueError("prompt must be non-empty")
        last: Exception | None = None
        start = time.perf_counter()
        for attempt in range(1, self.retries + 2):
            try:
                with self._slots:
                    text, truncated = self.provider.generate(request)
            except TransientLLMError as exc:
                last = exc
                self.stats["transient_failures"] += 1
                if attempt <= self.retries:
                    delay = self.backoff * 2 ** (attempt - 1)
                    logger.info("LLM attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                    if delay:
                        self._sleep(delay)
                continue
            self.stats["calls"] += 1
            return LLMResponse(
                text=text,
                model=request.model,
                latency=time.perf_counter() - start,
                truncated=truncated,
                attempts=attempt,
            )
        raise LLMTimeoutError(f"gave up after {self.retries + 1} attempts: {last}") from last

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, 0))
        if self.provider is not None and self.embed_model:
            last = None
            for attempt in range(1, self.retries + 2):
                try:
                    with self._slots:
                        vecs = self.provider.embed(texts, self.embed_model)
                    arr = np.asarray(vecs, dtype=float)
                    if arr.ndim != 2 or arr.shape[0] != len(texts):
                        raise LLMProviderError(200, "ragged embedding batch")
                    return arr
                except TransientLLMError as exc:
                    last = exc
                    if attempt <= self.retries and self.backoff:
                        self._sleep(self.backoff * 2 ** (attempt - 1))
            raise LLMTimeoutError(f"embedding gave up after {self.retries + 1} attempts: {last}") from last
        if not self.embed_fallback:
            raise LLMError("no embedding provider configured and fallback disabled")
        return fallback_embeddings(texts)
