from __future__ import annotations

import pytest

from promptlock import OracleSpec, PromptArtifact, SyntheticOracle, TaskExample

KEY_A = "Qv7#kZ2@mX9!pL4$"
KEY_B = "r8&Tw3^Yn6*Hd1%j"

ORIGINAL_TEXT = (
    "You are a keyword extractor. Read the passage and return the five most "
    "relevant keywords as a JSON list."
)


def make_dataset(n: int = 4) -> list[TaskExample]:
    return [
        TaskExample(
            query=f"Passage {i}: the committee met to discuss topic {i}.",
            label_tokens=("[", '"', f"kw{i}"),
            reference_text=f'["kw{i}", "topic{i}"]',
        )
        for i in range(n)
    ]


def make_oracles(dataset=None) -> tuple[SyntheticOracle, SyntheticOracle]:
    dataset = dataset if dataset is not None else make_dataset()
    a = SyntheticOracle(OracleSpec(KEY_A, seed=1), "oracleA").with_answers(dataset)
    b = SyntheticOracle(OracleSpec(KEY_B, seed=2), "oracleB").with_answers(dataset)
    return a, b


def dp_levenshtein(a: str, b: str) -> int:
    """Full-matrix edit distance, kept deliberately naive as an independent check."""
    rows, cols = len(a) + 1, len(b) + 1
    d = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        d[i][0] = i
    for j in range(cols):
        d[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return d[-1][-1]


@pytest.fixture
def dataset():
    return make_dataset()


@pytest.fixture
def oracles(dataset):
    return make_oracles(dataset)


@pytest.fixture
def original():
    return PromptArtifact(ORIGINAL_TEXT)
