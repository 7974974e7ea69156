"""Backends and the registry file that names them.

A registry is a JSON file::

    {"backends": [
        {"id": "oracleA", "kind": "synthetic_oracle",
         "oracle": {"hidden_key": "...", "seed": 1}},
        {"id": "gpt", "kind": "http_logprob", "endpoint": "https://...",
         "model_name": "...", "top_k": 20, "max_parallel": 4,
         "retry_policy": {"max_attempts": 4, "backoff_base": 1.0}}
    ]}

Credentials never go in this file; see :mod:`promptlock.backends.http`.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping, Sequence

from promptlock.backends.base import (
    Backend,
    BackendDescriptor,
    BackendKind,
    CountingBackend,
    RetryPolicy,
    generate_many,
    score_many,
)
from promptlock.backends.http import HttpAdapter, HttpBackend, parse_top_logprobs
from promptlock.backends.oracle import REFUSAL, OracleSpec, SyntheticOracle, oracle_similarity, trigram_set
from promptlock.core import TaskExample
from promptlock.errors import InvalidConfig, UnknownBackend

_SECRET_FIELDS = frozenset({"api_key", "key", "token", "authorization", "password", "secret"})


def build_backend(entry: Mapping[str, Any], dataset: Sequence[TaskExample] = ()) -> Backend:
    """Instantiate one registry entry; oracles learn the answers in ``dataset``."""
    entry = dict(entry)
    leaked = _SECRET_FIELDS & {k.lower() for k in entry}
    if leaked:
        raise InvalidConfig(f"registry entry {entry.get('id')!r} carries credentials {sorted(leaked)}; use the environment")
    kind = BackendKind(entry.pop("kind"))
    if kind is BackendKind.SYNTHETIC_ORACLE:
        spec = OracleSpec(**entry.pop("oracle"))
        backend = SyntheticOracle(
            spec,
            entry.pop("id"),
            top_k=entry.pop("top_k", 20),
            max_parallel=entry.pop("max_parallel", 1),
        )
        if entry:
            raise InvalidConfig(f"unknown oracle fields {sorted(entry)}")
        return backend.with_answers(dataset) if dataset else backend
    adapter = HttpAdapter(**entry.pop("adapter", {}))
    max_new_tokens = entry.pop("max_new_tokens", 256)
    if "retry_policy" in entry:
        entry["retry_policy"] = RetryPolicy(**entry["retry_policy"])
    try:
        descriptor = BackendDescriptor(kind=kind, **entry)
    except TypeError as exc:
        raise InvalidConfig(f"bad backend entry: {exc}") from exc
    return HttpBackend(descriptor, adapter, max_new_tokens=max_new_tokens)


def load_registry(path: str | Path) -> dict[str, dict[str, Any]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = data.get("backends") if isinstance(data, dict) else None
    if not isinstance(entries, list):
        raise InvalidConfig(f"{path}: expected an object with a 'backends' list")
    registry: dict[str, dict[str, Any]] = {}
    for entry in entries:
        if entry.get("id") in registry:
            raise InvalidConfig(f"{path}: duplicate backend id {entry.get('id')!r}")
        registry[entry["id"]] = entry
    return registry


def get_backend(registry: Mapping[str, Mapping[str, Any]], backend_id: str,
                dataset: Sequence[TaskExample] = ()) -> Backend:
    if backend_id not in registry:
        raise UnknownBackend(f"backend {backend_id!r} is not registered")
    return build_backend(registry[backend_id], dataset)


__all__ = [
    "Backend",
    "BackendDescriptor",
    "BackendKind",
    "CountingBackend",
    "HttpAdapter",
    "HttpBackend",
    "OracleSpec",
    "REFUSAL",
    "RetryPolicy",
    "SyntheticOracle",
    "build_backend",
    "generate_many",
    "get_backend",
    "load_registry",
    "oracle_similarity",
    "parse_top_logprobs",
    "score_many",
    "trigram_set",
]
