"""The obfuscation objective: task loss plus weighted distance and non-language terms.

    total = task + lambda * dist + gamma * nonlang
    dist    = -ln sigmoid(levenshtein(candidate, original))
    nonlang = -H(candidate)          (character entropy, nats)

With gamma > 0 the non-language term rewards *higher* character entropy,
i.e. a flatter, noise-like character distribution. Flip the sign of gamma to
push the other way (the deobfuscation attacker does exactly that).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from promptlock import metrics
from promptlock.core import ObjectiveWeights, TaskExample, TopKRecord
from promptlock.errors import EmptyLabels, LengthMismatch, MissingReference
from promptlock.textops import char_entropy, levenshtein


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    dist: float
    nonlang: float
    total: float
    batch_size: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def recombine(self, weights: ObjectiveWeights) -> float:
        dist = weights.lambda_ * self.dist if weights.use_dist_term else 0.0
        return self.task + dist + weights.gamma * self.nonlang


def task_loss_topk(records: Sequence[TopKRecord], labels: Sequence[str], default_logprob: float = -100.0) -> float:
    """Mean negative label logprob, charging ``-default_logprob`` for labels outside the top-k."""
    if not labels:
        raise EmptyLabels("no label tokens to score")
    if len(records) != len(labels):
        raise LengthMismatch(f"{len(records)} top-k records for {len(labels)} labels")
    if not default_logprob < 0:
        raise ValueError("default_logprob must be negative")
    total = 0.0
    for record, label in zip(records, labels):
        lp = record.logprob(label)
        total -= default_logprob if lp is None else lp
    return total / len(labels)


def dist_loss(candidate: str, original: str, normalize: str = "none") -> float:
    d = float(levenshtein(candidate, original))
    if normalize == "by_original_length":
        d /= max(len(original), 1)
    elif normalize != "none":
        raise ValueError(f"unknown dist normalization {normalize!r}")
    # -ln(1 / (1 + e^-d)) without overflow
    return math.log1p(math.exp(-d))


def nonlang_loss(candidate: str) -> float:
    return -char_entropy(candidate)


def total_loss(
    task: float,
    candidate: str,
    original: str | None,
    weights: ObjectiveWeights,
    *,
    dist_normalize: str = "none",
    batch_size: int = 1,
) -> LossBreakdown:
    if not math.isfinite(task):
        raise ValueError(f"task loss {task} is not finite")
    if weights.use_dist_term:
        if original is None:
            raise ValueError("distance term needs the original prompt")
        dist = dist_loss(candidate, original, dist_normalize)
    else:
        dist = 0.0
    nonlang = nonlang_loss(candidate)
    total = task + (weights.lambda_ * dist if weights.use_dist_term else 0.0) + weights.gamma * nonlang
    return LossBreakdown(task=task, dist=dist, nonlang=nonlang, total=total, batch_size=batch_size)


def token_only_loss(decoded: str, example: TaskExample, metric: str) -> float:
    """1 - metric(decoded, reference); the objective when only decoded text is visible."""
    check_metric_reference(example, metric)
    return 1.0 - metrics.score(metric, decoded, example)


def check_metric_reference(example: TaskExample, metric: str) -> None:
    if metric == "choice_accuracy":
        if not example.choices:
            raise MissingReference(f"example {example.query[:40]!r} has no choice set")
    elif metric in ("exact_match", "token_f1"):
        if not example.reference_text:
            raise MissingReference(f"example {example.query[:40]!r} has no reference text")
    else:
        raise ValueError(f"unknown metric {metric!r}")
