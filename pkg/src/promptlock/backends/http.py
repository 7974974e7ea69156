"""Chat-completions backends (OpenAI-compatible wire format).

The system prompt goes in a ``system`` message and the query in a ``user``
message. Label scoring asks for greedy decoding with per-position
``top_logprobs`` and compares label token *i* against the top-k list of
generated position *i*; a provider that omits logprobs raises
:class:`LogprobsUnsupported` so the caller can switch to token-only feedback.

Credentials come from ``<ID>_API_KEY``; ``<ID>_BASE_URL`` overrides the
endpoint. Neither is ever written to disk by this package.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import httpx

from promptlock.backends.base import Backend, BackendDescriptor, BackendKind, check_k
from promptlock.core import TaskExample, TopKRecord
from promptlock.errors import EmptyLabels, LogprobsUnsupported, ProviderRefusal, TransportError

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class HttpAdapter:
    """Provider-specific request details, configured declaratively."""

    path: str = "/chat/completions"
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    max_tokens_field: str = "max_tokens"


class HttpBackend(Backend):
    def __init__(
        self,
        descriptor: BackendDescriptor,
        adapter: HttpAdapter | None = None,
        *,
        environ: Mapping[str, str] | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        max_new_tokens: int = 256,
    ):
        if descriptor.kind is BackendKind.SYNTHETIC_ORACLE:
            raise ValueError("HttpBackend needs an http descriptor")
        self.descriptor = descriptor
        self.adapter = adapter or HttpAdapter()
        env = os.environ if environ is None else environ
        prefix = descriptor.env_prefix
        self.base_url = (env.get(f"{prefix}_BASE_URL") or descriptor.endpoint or "").rstrip("/")
        self._api_key = env.get(f"{prefix}_API_KEY")
        self._sleep = sleep
        self.max_new_tokens = max_new_tokens
        self._slots = threading.BoundedSemaphore(descriptor.max_parallel)
        self._client = httpx.Client(timeout=descriptor.request_timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def __repr__(self) -> str:
        # never show the key
        return f"HttpBackend(id={self.id!r}, url={self.base_url!r})"

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            scheme = f"{self.adapter.auth_scheme} " if self.adapter.auth_scheme else ""
            headers[self.adapter.auth_header] = scheme + self._api_key
        return headers

    def _body(self, prompt: str, query: str, temperature: float | None, max_tokens: int) -> dict[str, Any]:
        return {
            "model": self.descriptor.model_name,
            "messages": [
                {"role": "system", "content": prompt},
                {"role": "user", "content": query},
            ],
            "temperature": 0.0 if temperature is None else float(temperature),
            self.adapter.max_tokens_field: max_tokens,
        }

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        policy = self.descriptor.retry_policy
        url = self.base_url + self.adapter.path
        last: Exception | None = None
        for attempt in range(1, policy.max_attempts + 1):
            if attempt > 1:
                self._sleep(policy.delay(attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last = TransportError(f"{self.id}: {type(exc).__name__}: {exc}")
                logger.warning("%s attempt %d failed: %s", self.id, attempt, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last = TransportError(f"{self.id}: HTTP {resp.status_code}")
                logger.warning("%s attempt %d got HTTP %d", self.id, attempt, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise ProviderRefusal(f"{self.id}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
            except ValueError:
                last = TransportError(f"{self.id}: malformed JSON response")
                continue
            choice = (data.get("choices") or [{}])[0]
            if choice.get("finish_reason") == "content_filter":
                raise ProviderRefusal(f"{self.id}: response withheld by content filter")
            return data
        assert last is not None
        raise last

    def generate(self, prompt: str, query: str, temperature: float | None = None) -> str:
        data = self._post(self._body(prompt, query, temperature, self.max_new_tokens))
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"{self.id}: response has no message content") from exc

    def score_labels(self, prompt: str, example: TaskExample, k: int) -> list[TopKRecord]:
        if self.descriptor.kind is BackendKind.HTTP_TOKEN_ONLY:
            raise LogprobsUnsupported(f"{self.id} is a token-only backend")
        check_k(self, k)
        labels = example.label_tokens
        if not labels:
            raise EmptyLabels("example has no label tokens")
        body = self._body(prompt, example.query, None, len(labels))
        body["logprobs"] = True
        body["top_logprobs"] = k
        data = self._post(body)
        return parse_top_logprobs(data, len(labels), k)


def parse_top_logprobs(data: Mapping[str, Any], n_positions: int, k: int) -> list[TopKRecord]:
    """Turn a chat-completions response into ``n_positions`` top-k records.

    Positions the model never generated get empty records, which the task loss
    charges at the default logprob.
    """
    try:
        content = data["choices"][0]["logprobs"]["content"]
    except (KeyError, IndexError, TypeError):
        content = None
    if not content:
        raise LogprobsUnsupported("response carries no per-token logprobs")
    records = []
    for pos in range(n_positions):
        best: dict[str, float] = {}
        if pos < len(content):
            for item in content[pos].get("top_logprobs") or ():
                tok, lp = item["token"], min(float(item["logprob"]), 0.0)
                if lp != lp or lp == float("-inf"):
                    continue
                if tok not in best or lp > best[tok]:
                    best[tok] = lp
        entries = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        records.append(TopKRecord(pos, tuple(entries)))
    return records
