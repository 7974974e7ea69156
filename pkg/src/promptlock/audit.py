"""Re-derive every accept/reject decision of a run from its files alone."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from promptlock.core import RunConfig
from promptlock.optimizer import StepTrace, read_trace
from promptlock.textops import noise_size_at

TOLERANCE = 1e-9


@dataclass
class AuditReport:
    rows: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_rows(rows: list[StepTrace], config: RunConfig, start_digest: str | None = None) -> AuditReport:
    report = AuditReport(rows=len(rows))
    schedule = config.schedule()
    weights = config.weights
    expected_incumbent = start_digest
    cpe = config.candidates_per_epoch
    for i, row in enumerate(rows):
        where = f"row {i} (epoch {row.epoch}, step {row.step})"
        if (row.epoch, row.step) != divmod(i, cpe):
            report.violations.append(f"{where}: out of sequence, expected {divmod(i, cpe)}")
        if row.accepted != (row.proposal_loss.total < row.incumbent_loss.total):
            report.violations.append(f"{where}: accepted={row.accepted} disagrees with the totals")
        expected_k = noise_size_at(row.epoch, schedule)
        if row.noise_size != expected_k:
            report.violations.append(f"{where}: noise_size {row.noise_size}, schedule says {expected_k}")
        for name, loss in (("incumbent", row.incumbent_loss), ("proposal", row.proposal_loss)):
            if not math.isclose(loss.total, loss.recombine(weights), rel_tol=0.0, abs_tol=TOLERANCE):
                report.violations.append(f"{where}: {name} total does not recombine from its components")
        if len(row.example_ids) != config.batch_size:
            report.violations.append(f"{where}: batch of {len(row.example_ids)}, config says {config.batch_size}")
        if expected_incumbent is not None and row.incumbent_digest != expected_incumbent:
            report.violations.append(f"{where}: incumbent is not the prompt kept by the previous step")
        expected_incumbent = row.proposal_digest if row.accepted else row.incumbent_digest
    return report


def audit_run(run_dir: str | Path) -> AuditReport:
    """Check a run directory's trace against its config snapshot and start prompt."""
    import json

    run_dir = Path(run_dir)
    config = RunConfig.loads((run_dir / "config.snapshot").read_text(encoding="utf-8"))
    meta = json.loads((run_dir / "run.meta").read_text(encoding="utf-8"))
    return audit_rows(read_trace(run_dir / "trace.jsonl"), config, meta["start"]["digest"])
