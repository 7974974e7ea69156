from __future__ import annotations

import abc
import enum
import re
import threading
from dataclasses import dataclass, field
from typing import Sequence

from promptlock.core import TaskExample, TopKRecord
from promptlock.errors import InvalidConfig

MAX_TOP_K = 20


class BackendKind(str, enum.Enum):
    HTTP_LOGPROB = "http_logprob"
    HTTP_TOKEN_ONLY = "http_token_only"
    SYNTHETIC_ORACLE = "synthetic_oracle"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    backoff_base: float = 1.0  # seconds; delay before attempt n is base * 2**(n-1)
    backoff_cap: float = 30.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise InvalidConfig("retry max_attempts must be >= 1")
        if self.backoff_base < 0:
            raise InvalidConfig("retry backoff must be >= 0")

    def delay(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    kind: BackendKind
    model_name: str = ""
    endpoint: str | None = None
    top_k: int = MAX_TOP_K
    request_timeout: float = 60.0
    max_parallel: int = 4
    retry_policy: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if not re.fullmatch(r"[A-Za-z][A-Za-z0-9_\-]*", self.id):
            raise InvalidConfig(f"backend id {self.id!r} must be a short identifier")
        if not 0 < self.top_k <= MAX_TOP_K:
            raise InvalidConfig(f"top_k must be in 1..{MAX_TOP_K}, got {self.top_k}")
        if self.max_parallel < 1:
            raise InvalidConfig("max_parallel must be >= 1")
        if self.kind is not BackendKind.SYNTHETIC_ORACLE and not self.endpoint:
            raise InvalidConfig(f"http backend {self.id!r} needs an endpoint")

    @property
    def env_prefix(self) -> str:
        return re.sub(r"[^A-Za-z0-9]", "_", self.id).upper()


class Backend(abc.ABC):
    """A scoring/generation target. Implementations must be safe to call from threads."""

    descriptor: BackendDescriptor

    @property
    def id(self) -> str:
        return self.descriptor.id

    @property
    def max_parallel(self) -> int:
        return self.descriptor.max_parallel

    @abc.abstractmethod
    def score_labels(self, prompt: str, example: TaskExample, k: int) -> list[TopKRecord]:
        """One top-k record per label token of ``example``, in order."""

    @abc.abstractmethod
    def generate(self, prompt: str, query: str, temperature: float | None = None) -> str:
        """Decoded completion. ``temperature=None`` means greedy."""


class CountingBackend(Backend):
    """Wraps a backend and counts calls; used to audit call budgets."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.descriptor = inner.descriptor
        self.score_calls = 0
        self.generate_calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self.score_calls + self.generate_calls

    def score_labels(self, prompt: str, example: TaskExample, k: int) -> list[TopKRecord]:
        with self._lock:
            self.score_calls += 1
        return self.inner.score_labels(prompt, example, k)

    def generate(self, prompt: str, query: str, temperature: float | None = None) -> str:
        with self._lock:
            self.generate_calls += 1
        return self.inner.generate(prompt, query, temperature)

    def __getattr__(self, name):
        return getattr(self.inner, name)


def check_k(backend: Backend, k: int) -> None:
    if not 0 < k <= backend.descriptor.top_k:
        raise InvalidConfig(f"k={k} exceeds the top-k cap {backend.descriptor.top_k} of {backend.id}")


def score_many(backend: Backend, prompt: str, examples: Sequence[TaskExample], k: int) -> list[list[TopKRecord]]:
    """Score several examples, concurrently up to the backend's cap; results keep input order."""
    if len(examples) == 1 or backend.max_parallel == 1:
        return [backend.score_labels(prompt, ex, k) for ex in examples]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=min(backend.max_parallel, len(examples))) as pool:
        return list(pool.map(lambda ex: backend.score_labels(prompt, ex, k), examples))


def generate_many(backend: Backend, prompt: str, queries: Sequence[str]) -> list[str]:
    if len(queries) == 1 or backend.max_parallel == 1:
        return [backend.generate(prompt, q) for q in queries]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=min(backend.max_parallel, len(queries))) as pool:
        return list(pool.map(lambda q: backend.generate(prompt, q), queries))
