"""Scoring prompts on backends, cross-backend grids, and the summary ratios."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from promptlock.backends.base import Backend
from promptlock.core import PromptArtifact, TaskExample, canonical_json, dataset_digest
from promptlock.errors import (
    BackendError,
    DatasetEmpty,
    EvaluationFailed,
    InvalidArtifact,
    KeyMismatch,
    ShapeMismatch,
    ZeroBaseline,
)
from promptlock.metrics import normalize, score

logger = logging.getLogger(__name__)

MAX_ERROR_FRACTION = 0.2
MISSING = "-"


def _text(prompt: PromptArtifact | str) -> str:
    return prompt.text if isinstance(prompt, PromptArtifact) else prompt


# ---------------------------------------------------------------------------
# single prompt on a single backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExampleRecord:
    index: int
    query: str
    output: str | None
    score: float | None
    error: str | None = None


@dataclass(frozen=True)
class EvaluationResult:
    mean: float
    records: tuple[ExampleRecord, ...]
    metric: str
    backend_id: str

    @property
    def errors(self) -> int:
        return sum(r.error is not None for r in self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.__dict__, ensure_ascii=False, sort_keys=True) + "\n" for r in self.records)


def evaluate_prompt(
    prompt: PromptArtifact | str,
    dataset: Sequence[TaskExample],
    backend: Backend,
    metric: str = "exact_match",
    *,
    detail_path: str | Path | None = None,
) -> EvaluationResult:
    """Greedy-decode every example under ``prompt`` and average ``metric``.

    A failing backend call is recorded against its example. The mean covers the
    examples that were scored; more than 20% failures fails the whole evaluation.
    """
    if not dataset:
        raise DatasetEmpty("cannot evaluate on an empty dataset")
    text = _text(prompt)

    def one(item: tuple[int, TaskExample]) -> ExampleRecord:
        i, ex = item
        try:
            out = backend.generate(text, ex.query)
        except BackendError as exc:
            logger.warning("example %d failed on %s: %s", i, backend.id, exc)
            return ExampleRecord(i, ex.query, None, None, f"{type(exc).__name__}: {exc}")
        return ExampleRecord(i, ex.query, out, score(metric, out, ex))

    items = list(enumerate(dataset))
    workers = min(backend.max_parallel, len(items))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = tuple(pool.map(one, items))
    else:
        records = tuple(one(it) for it in items)

    scored = [r.score for r in records if r.score is not None]
    failed = len(records) - len(scored)
    if failed > MAX_ERROR_FRACTION * len(records):
        raise EvaluationFailed(f"{failed} of {len(records)} examples failed on {backend.id}")
    result = EvaluationResult(math.fsum(scored) / len(scored), records, metric, backend.id)
    if detail_path is not None:
        Path(detail_path).write_text(result.to_jsonl(), encoding="utf-8")
    return result


# ---------------------------------------------------------------------------
# portability grids
# ---------------------------------------------------------------------------


@dataclass
class PortabilityMatrix:
    """Rows are the backends prompts were optimized for, columns the backends they ran on.

    Cells that were not measured (the diagonal in published tables) hold NaN.
    """

    rows: tuple[str, ...]
    cols: tuple[str, ...]
    cells: list[list[float]]
    metric: str = "exact_match"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.rows = tuple(self.rows)
        self.cols = tuple(self.cols)
        if len(set(self.rows)) != len(self.rows) or len(set(self.cols)) != len(self.cols):
            raise ShapeMismatch("row and column labels must be unique")
        if len(self.cells) != len(self.rows) or any(len(r) != len(self.cols) for r in self.cells):
            raise ShapeMismatch(f"cells do not form a {len(self.rows)}x{len(self.cols)} grid")
        self.cells = [[float(v) for v in row] for row in self.cells]

    def __getitem__(self, key: tuple[str, str]) -> float:
        r, c = key
        return self.cells[self.rows.index(r)][self.cols.index(c)]

    def is_diagonal(self, row: str, col: str) -> bool:
        return row == col

    def off_diagonal(self) -> list[float]:
        return [
            v
            for r, row in zip(self.rows, self.cells)
            for c, v in zip(self.cols, row)
            if not self.is_diagonal(r, c) and not math.isnan(v)
        ]

    def off_diagonal_sum(self) -> float:
        return math.fsum(self.off_diagonal())

    def diagonal(self) -> dict[str, float]:
        return {r: self[r, r] for r in self.rows if r in self.cols and not math.isnan(self[r, r])}

    def scaled(self, factor: float) -> PortabilityMatrix:
        return PortabilityMatrix(self.rows, self.cols, [[v * factor for v in row] for row in self.cells],
                                 self.metric, dict(self.meta))

    def to_csv(self) -> str:
        return blocks_to_csv({"": self})

    @classmethod
    def from_csv(cls, text: str, metric: str = "exact_match") -> PortabilityMatrix:
        blocks = blocks_from_csv(text, metric)
        if len(blocks) != 1:
            raise ShapeMismatch(f"expected one matrix, found {len(blocks)} blocks")
        return next(iter(blocks.values()))

    def sidecar(self) -> dict[str, Any]:
        return {"metric": self.metric, "rows": list(self.rows), "cols": list(self.cols), **self.meta}


def _fmt(v: float) -> str:
    return MISSING if math.isnan(v) else repr(v)


def _parse(cell: str) -> float:
    cell = cell.strip()
    return math.nan if cell in (MISSING, "", "nan", "NaN") else float(cell)


def blocks_to_csv(blocks: Mapping[str, PortabilityMatrix]) -> str:
    """One table; a leading ``block`` column appears when there is more than one block."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    multi = len(blocks) > 1 or any(name for name in blocks)
    for i, (name, m) in enumerate(blocks.items()):
        if i == 0 or not multi:
            header = ["target", *m.cols]
            w.writerow(["block", *header] if multi else header)
        elif m.cols != next(iter(blocks.values())).cols:
            raise ShapeMismatch("all blocks in one file must share columns")
        for r, row in zip(m.rows, m.cells):
            line = [r, *(_fmt(v) for v in row)]
            w.writerow([name, *line] if multi else line)
    return buf.getvalue()


def blocks_from_csv(text: str, metric: str = "exact_match") -> dict[str, PortabilityMatrix]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows:
        raise ShapeMismatch("empty matrix file")
    header = rows[0]
    multi = header[0] == "block"
    cols = header[2:] if multi else header[1:]
    grouped: dict[str, tuple[list[str], list[list[float]]]] = {}
    for r in rows[1:]:
        name, label, values = (r[0], r[1], r[2:]) if multi else ("", r[0], r[1:])
        if len(values) != len(cols):
            raise ShapeMismatch(f"row {label!r} has {len(values)} cells, header has {len(cols)}")
        labels, cells = grouped.setdefault(name, ([], []))
        labels.append(label)
        cells.append([_parse(v) for v in values])
    return {name: PortabilityMatrix(tuple(lab), tuple(cols), cells, metric) for name, (lab, cells) in grouped.items()}


def save_matrices(blocks: Mapping[str, PortabilityMatrix] | PortabilityMatrix, path: str | Path) -> Path:
    """Write ``path`` and its ``<path>.meta.json`` sidecar."""
    if isinstance(blocks, PortabilityMatrix):
        blocks = {"": blocks}
    path = Path(path)
    path.write_text(blocks_to_csv(blocks), encoding="utf-8")
    first = next(iter(blocks.values()))
    side = {**first.sidecar(), "blocks": [n for n in blocks if n]}
    Path(f"{path}.meta.json").write_text(canonical_json(side), encoding="utf-8")
    return path


def load_matrices(path: str | Path) -> dict[str, PortabilityMatrix]:
    path = Path(path)
    side_path = Path(f"{path}.meta.json")
    side = json.loads(side_path.read_text(encoding="utf-8")) if side_path.exists() else {}
    metric = side.get("metric", "exact_match")
    blocks = blocks_from_csv(path.read_text(encoding="utf-8"), metric)
    extra = {k: v for k, v in side.items() if k not in ("metric", "rows", "cols", "blocks")}
    for m in blocks.values():
        m.meta.update(extra)
    return blocks


def portability_matrix(
    prompts: Mapping[str, PromptArtifact | str],
    backends: Sequence[Backend] | Mapping[str, Backend],
    dataset: Sequence[TaskExample],
    metric: str = "exact_match",
) -> PortabilityMatrix:
    """Evaluate every prompt on every backend, diagonal included."""
    if not isinstance(backends, Mapping):
        backends = {b.id: b for b in backends}
    missing = [t for t in prompts if t not in backends]
    if missing:
        raise KeyMismatch(f"prompts target unknown backends {missing}")
    rows = tuple(prompts)
    cols = tuple(backends)
    cells = [[evaluate_prompt(prompts[r], dataset, backends[c], metric).mean for c in cols] for r in rows]
    meta = {"dataset_digest": dataset_digest(dataset)}
    return PortabilityMatrix(rows, cols, cells, metric, meta)


def _as_blocks(m: PortabilityMatrix | Mapping[str, PortabilityMatrix] | Iterable[PortabilityMatrix]) -> list:
    if isinstance(m, PortabilityMatrix):
        return [m]
    if isinstance(m, Mapping):
        return list(m.values())
    return list(m)


def portability_ratio(protected, baseline) -> float:
    """Off-diagonal sum of ``protected`` over that of ``baseline``.

    Either argument may be one matrix or several blocks (e.g. one per task),
    in which case the sums run over all blocks.
    """
    p_blocks, b_blocks = _as_blocks(protected), _as_blocks(baseline)
    if len(p_blocks) != len(b_blocks):
        raise ShapeMismatch(f"{len(p_blocks)} protected blocks vs {len(b_blocks)} baseline blocks")
    for p, b in zip(p_blocks, b_blocks):
        if p.rows != b.rows or p.cols != b.cols:
            raise ShapeMismatch(f"labels differ: {p.rows}x{p.cols} vs {b.rows}x{b.cols}")
    denom = math.fsum(b.off_diagonal_sum() for b in b_blocks)
    if denom <= 0:
        raise ZeroBaseline("baseline off-diagonal cells sum to zero")
    return math.fsum(p.off_diagonal_sum() for p in p_blocks) / denom


def preservation_ratio(protected_diag: Mapping[str, float], baseline_diag: Mapping[str, float]) -> float:
    """On-target performance after protection relative to before."""
    if set(protected_diag) != set(baseline_diag):
        raise KeyMismatch(f"backend sets differ: {sorted(protected_diag)} vs {sorted(baseline_diag)}")
    denom = math.fsum(baseline_diag.values())
    if denom <= 0:
        raise ZeroBaseline("baseline scores sum to zero")
    return math.fsum(protected_diag[k] for k in baseline_diag) / denom


# ---------------------------------------------------------------------------
# functional equivalence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceResult:
    per_query: tuple[bool, ...]
    outputs: tuple[tuple[str, str], ...]

    @property
    def equivalent(self) -> bool:
        return all(self.per_query)


def functional_equivalence(
    p1: PromptArtifact | str,
    p2: PromptArtifact | str,
    queries: Sequence[str],
    backend: Backend,
) -> EquivalenceResult:
    """Do both prompts give the same normalized greedy output on every query?"""
    if not queries:
        raise ValueError("functional equivalence needs at least one query")
    t1, t2 = _text(p1), _text(p2)
    if not t1 or not t2:
        raise InvalidArtifact("prompts must be non-empty")
    outputs = tuple((backend.generate(t1, q), backend.generate(t2, q)) for q in queries)
    return EquivalenceResult(tuple(normalize(a) == normalize(b) for a, b in outputs), outputs)
