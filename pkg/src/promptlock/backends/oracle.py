"""A deterministic offline stand-in for a target model.

The oracle's whole behaviour hangs off one number, the fraction of the hidden
key's distinct byte trigrams that also occur in the system prompt:

* every label token gets logprob ``-sharpness * (1 - s)``, and is listed in the
  top-k only when ``s >= presence_threshold``;
* greedy generation returns the registered reference answer when
  ``s >= generation_threshold`` and ``REFUSAL`` otherwise.

Two oracles with different keys therefore respond to unrelated prompt features,
which is the desk-scale analogue of two different models.

Requests for queries the oracle has no answer for (prompt rewriting, recovery,
induction) are answered in the oracle's own "dialect": the hidden key with
every third inner character doubled, padded with a seeded shuffle of filler so
that every printable ASCII character occurs equally often. A doubled character
costs one key trigram and is undone by deleting either copy. Because the
character histogram starts out flat, almost any other random edit lowers the
entropy, so with the default objective weights the search rejects neutral
edits and only keeps edits that recover key trigrams.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from promptlock.backends.base import Backend, BackendDescriptor, BackendKind, check_k
from promptlock.core import TaskExample, TopKRecord
from promptlock.errors import EmptyLabels, InvalidConfig

REFUSAL = "UNINTERPRETABLE INPUT"
PRINTABLE = "".join(chr(c) for c in range(32, 127))


@dataclass(frozen=True)
class OracleSpec:
    hidden_key: str
    seed: int = 0
    sharpness: float = 10.0
    presence_threshold: float = 0.05
    generation_threshold: float = 0.5
    dialect_stutter: int = 3

    def __post_init__(self) -> None:
        if len(self.hidden_key) < 8:
            raise InvalidConfig("hidden_key must be at least 8 characters")
        if not self.sharpness > 0:
            raise InvalidConfig("sharpness must be positive")
        for name in ("presence_threshold", "generation_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidConfig(f"{name} must be in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must be a 64-bit unsigned integer")
        if self.dialect_stutter < 2:
            raise InvalidConfig("dialect_stutter must be at least 2")


def trigram_set(text: str) -> frozenset[bytes]:
    data = text.encode("utf-8")
    return frozenset(data[i : i + 3] for i in range(len(data) - 2))


def oracle_similarity(spec: OracleSpec, prompt: str) -> float:
    """Share of the key's distinct byte trigrams present in ``prompt``."""
    key = trigram_set(spec.hidden_key)
    return len(key & trigram_set(prompt)) / len(key)


def _hash64(*parts: object) -> int:
    h = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8)
    return struct.unpack(">Q", h.digest())[0]


_BLOCK = re.compile(r'"""(.*?)"""', re.S)


class SyntheticOracle(Backend):
    def __init__(
        self,
        spec: OracleSpec,
        backend_id: str = "oracle",
        answers: Mapping[str, str] | None = None,
        top_k: int = 20,
        max_parallel: int = 1,
    ):
        self.spec = spec
        self.descriptor = BackendDescriptor(
            id=backend_id,
            kind=BackendKind.SYNTHETIC_ORACLE,
            model_name=f"oracle-{spec.seed}",
            top_k=top_k,
            max_parallel=max_parallel,
        )
        self.answers: dict[str, str] = dict(answers or {})
        self._key_trigrams = trigram_set(spec.hidden_key)

    def with_answers(self, examples: Sequence[TaskExample]) -> SyntheticOracle:
        """Copy of this oracle that knows the reference answer of every example."""
        answers = dict(self.answers)
        answers.update({ex.query: ex.reference_text for ex in examples if ex.reference_text})
        return SyntheticOracle(self.spec, self.id, answers, self.descriptor.top_k, self.descriptor.max_parallel)

    def similarity(self, prompt: str) -> float:
        return len(self._key_trigrams & trigram_set(prompt)) / len(self._key_trigrams)

    def label_logprob(self, prompt: str) -> float:
        return -self.spec.sharpness * (1.0 - self.similarity(prompt))

    # -- scoring ----------------------------------------------------------

    def _filler(self, position: int, rank: int, avoid: str) -> str:
        salt = 0
        while True:
            tok = f"~{_hash64(self.spec.seed, position, rank, salt) & 0xFFFFFF:06x}"
            if tok != avoid:
                return tok
            salt += 1

    def score_labels(self, prompt: str, example: TaskExample, k: int) -> list[TopKRecord]:
        check_k(self, k)
        if not example.label_tokens:
            raise EmptyLabels("example has no label tokens")
        s = self.similarity(prompt)
        present = s >= self.spec.presence_threshold
        label_lp = -self.spec.sharpness * (1.0 - s)
        records = []
        for pos, label in enumerate(example.label_tokens):
            if present:
                entries = [(label, label_lp)]
                entries += [(self._filler(pos, r, label), label_lp - 0.5 * r) for r in range(1, k)]
            else:
                entries = [(self._filler(pos, r, label), -1.0 - 0.5 * r) for r in range(k)]
            records.append(TopKRecord(pos, tuple(entries)))
        return records

    # -- generation ---------------------------------------------------------

    def generate(self, prompt: str, query: str, temperature: float | None = None) -> str:
        if query in self.answers:
            if self.similarity(prompt) >= self.spec.generation_threshold:
                return self.answers[query]
            return REFUSAL
        return self.rewrite(query)

    def stuttered_key(self) -> str:
        """The key with every ``dialect_stutter``-th inner character written twice."""
        n = self.spec.dialect_stutter
        key = self.spec.hidden_key
        return "".join(
            ch * 2 if i % n == n - 1 and 0 < i < len(key) - 1 else ch for i, ch in enumerate(key)
        )

    def rewrite(self, request: str) -> str:
        blocks = _BLOCK.findall(request)
        payload = blocks[-1] if blocks else request
        core = self.stuttered_key()
        support = sorted(set(PRINTABLE) | set(core))
        height = max(core.count(c) for c in support)
        filler = [c for c in support for _ in range(height - core.count(c))]
        order = np.random.default_rng(_hash64(self.spec.seed, payload)).permutation(len(filler))
        shuffled = "".join(filler[i] for i in order)
        half = len(shuffled) // 2
        return shuffled[:half] + core + shuffled[half:]
