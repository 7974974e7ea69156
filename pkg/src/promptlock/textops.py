"""String mathematics: edit distance, character entropy, noise injection, annealing."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from promptlock.core import NoiseAlphabet, NoiseSchedule
from promptlock.errors import EmptyAlphabet, EmptyText, InvalidConfig


@dataclass(frozen=True)
class EditMix:
    """Probabilities of the three single-character edit kinds."""

    p_replace: float = 0.45
    p_insert: float = 0.45
    p_delete: float = 0.10

    def __post_init__(self) -> None:
        probs = (self.p_replace, self.p_insert, self.p_delete)
        if any(not 0.0 <= p <= 1.0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise InvalidConfig(f"edit mix {probs} is not a probability vector")

    @classmethod
    def from_tuple(cls, mix: tuple[float, float, float]) -> EditMix:
        return cls(*mix)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance between two strings, over Unicode code points.

    Two-row dynamic program, O(len(a) * len(b)) time and O(min) memory.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    # Common prefix/suffix never contribute to the distance.
    start = 0
    while start < len(b) and a[start] == b[start]:
        start += 1
    end_a, end_b = len(a), len(b)
    while end_b > start and a[end_a - 1] == b[end_b - 1]:
        end_a -= 1
        end_b -= 1
    a, b = a[start:end_a], b[start:end_b]
    if not b:
        return len(a)

    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        append = cur.append
        for j, cb in enumerate(b, 1):
            sub = prev[j - 1] + (ca != cb)
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            append(min(sub, ins, dele))
        prev = cur
    return prev[-1]


def char_entropy(s: str) -> float:
    """Shannon entropy (nats) of the character frequency distribution of ``s``."""
    if not s:
        raise EmptyText("entropy of an empty string is undefined")
    n = len(s)
    h = 0.0
    for count in Counter(s).values():
        p = count / n
        h -= p * math.log(p)
    # Rounding can leave -0.0 or a hair below zero for single-symbol strings.
    return max(h, 0.0)


def noise_size_at(epoch: int, schedule: NoiseSchedule) -> int:
    """Number of character edits per proposal during ``epoch`` (linear decay with a floor)."""
    return max(schedule.minimum_size, schedule.initial_size - epoch * schedule.decay_per_epoch)


def inject_noise(
    prompt: str,
    k: int,
    alphabet: NoiseAlphabet,
    mix: EditMix,
    rng: np.random.Generator,
) -> str:
    """Apply ``k`` independent single-character edits at uniform random positions.

    A delete that would empty the string becomes a replace, so the result is
    never empty.
    """
    if not prompt:
        raise EmptyText("cannot inject noise into an empty prompt")
    if k < 1:
        raise ValueError("noise size must be at least 1")
    chars = alphabet.characters
    if not chars:
        raise EmptyAlphabet("noise alphabet is empty")

    buf = list(prompt)
    thresholds = (mix.p_replace, mix.p_replace + mix.p_insert)
    for _ in range(k):
        u = rng.random()
        if u < thresholds[0] or (u >= thresholds[1] and len(buf) == 1):
            pos = int(rng.integers(len(buf)))
            buf[pos] = chars[int(rng.integers(len(chars)))]
        elif u < thresholds[1]:
            pos = int(rng.integers(len(buf) + 1))
            buf.insert(pos, chars[int(rng.integers(len(chars)))])
        else:
            pos = int(rng.integers(len(buf)))
            del buf[pos]
    return "".join(buf)
