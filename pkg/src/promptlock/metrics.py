"""Task metrics on decoded text. All return values lie in [0, 1]."""

from __future__ import annotations

import re
import string
from collections import Counter

from promptlock.core import TaskExample
from promptlock.errors import MissingChoices

_WS = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Trim, case-fold, collapse internal whitespace. Shared by every metric."""
    return _WS.sub(" ", text.strip()).casefold()


def metric_exact_match(prediction: str, reference: str) -> int:
    return int(normalize(prediction) == normalize(reference))


def metric_token_f1(prediction: str, reference: str) -> float:
    pred = normalize(prediction).split()
    ref = normalize(reference).split()
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


_LETTER = re.compile(r"^\(?([a-z])[\).:]?(?:\s|$)")


def metric_choice_accuracy(prediction: str, example: TaskExample) -> int:
    """1 iff the prediction names the reference choice, by text or by option letter (A, B, ...)."""
    if not example.choices:
        raise MissingChoices("choice accuracy needs a choice set")
    pred = normalize(prediction)
    choices = [normalize(c) for c in example.choices]
    ref_idx = example.choices.index(example.reference_text)
    if pred in choices:
        return int(choices.index(pred) == ref_idx)
    m = _LETTER.match(pred)
    if m:
        idx = string.ascii_lowercase.index(m.group(1))
        return int(idx == ref_idx)
    return 0


METRIC_NAMES = ("exact_match", "token_f1", "choice_accuracy")


def score(metric: str, prediction: str, example: TaskExample) -> float:
    if metric == "exact_match":
        return float(metric_exact_match(prediction, example.reference_text))
    if metric == "token_f1":
        return metric_token_f1(prediction, example.reference_text)
    if metric == "choice_accuracy":
        return float(metric_choice_accuracy(prediction, example))
    raise ValueError(f"unknown metric {metric!r}")
