"""Adaptive attacks against an obfuscated prompt.

* ``deobfuscate`` re-runs the random search from the obfuscated text with no
  distance term and a negated entropy weight, pushing toward readable text
  while keeping task performance.
* ``recover`` asks a model to reconstruct the original from the obfuscated text.
* ``induce_naive`` has a model write a fresh prompt from input/output pairs,
  without ever seeing the protected prompt.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from promptlock.backends.base import Backend, CountingBackend
from promptlock.core import (
    PromptArtifact,
    RunConfig,
    Stage,
    TaskExample,
    canonical_json,
    validate_run_config,
)
from promptlock.errors import EmptyResponse, InvalidArtifact
from promptlock.initializer import (
    TemplateFile,
    format_io_pairs,
    load_template,
    render_template,
    strip_outer_fence,
)
from promptlock.optimizer import RunDirectory, run_search_from

DEFAULT_IO_PAIRS = 8


class AttackKind(str, enum.Enum):
    DEOBFUSCATION = "deobfuscation"
    RECOVERY = "recovery"
    NAIVE = "naive"


_OUTPUT_STAGE = {
    AttackKind.DEOBFUSCATION: Stage.DEOBFUSCATED,
    AttackKind.RECOVERY: Stage.RECOVERED,
    AttackKind.NAIVE: Stage.INDUCED,
}


@dataclass(frozen=True)
class AttackReport:
    kind: AttackKind
    input_digest: str | None
    output: PromptArtifact
    backend_id: str
    steps: int = 0
    calls: int = 0
    run_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.output.stage is not _OUTPUT_STAGE[self.kind]:
            raise InvalidArtifact(f"{self.kind.value} attack cannot produce a {self.output.stage.value} prompt")

    @property
    def budget_used(self) -> dict[str, int]:
        return {"steps": self.steps, "calls": self.calls}

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "input_digest": self.input_digest,
            "output": self.output.to_dict(),
            "backend_id": self.backend_id,
            "budget_used": self.budget_used,
        }


def deobfuscation_config(config: RunConfig | dict | None = None) -> RunConfig:
    """Attack defaults: no distance term, entropy weight -0.1, unless ``config`` says otherwise.

    The distance term is always off, since the attacker has no original to measure against.
    """
    if config is None:
        config = RunConfig(gamma=-0.1)
    elif not isinstance(config, RunConfig):
        config = RunConfig.from_dict({"gamma": -0.1, **config})
    return validate_run_config(config.replace(use_dist_term=False, lambda_=0.0))


def deobfuscate(
    config: RunConfig | dict | None,
    obfuscated: PromptArtifact,
    dataset: Sequence[TaskExample],
    backend: Backend,
    run_dir: str | Path,
) -> AttackReport:
    if obfuscated.stage is not Stage.OBFUSCATED:
        raise InvalidArtifact(f"deobfuscation needs an obfuscated prompt, got {obfuscated.stage.value}")
    config = deobfuscation_config(config)
    counter = CountingBackend(backend)
    result = run_search_from(
        config,
        obfuscated,
        Stage.DEOBFUSCATED,
        dataset,
        counter,
        run_dir,
        mode="deobfuscate",
        extra_meta={"attack": AttackKind.DEOBFUSCATION.value},
    )
    report = AttackReport(
        AttackKind.DEOBFUSCATION,
        obfuscated.digest,
        result.artifact,
        backend.id,
        steps=config.total_steps,
        calls=counter.calls,
        run_dir=result.run_dir,
    )
    _write_meta(report)
    return report


def recover(
    obfuscated: PromptArtifact,
    backend: Backend,
    *,
    template: TemplateFile | None = None,
    run_dir: str | Path | None = None,
) -> AttackReport:
    """Ask ``backend`` for the original prompt behind ``obfuscated``."""
    template = template or load_template("recovery")
    request = render_template(template, {"obfuscated_prompt": obfuscated.text})
    reply = _ask(backend, request)
    if obfuscated.stage is Stage.OBFUSCATED:
        output = obfuscated.derive(reply, Stage.RECOVERED, backend.id)
    else:
        # a recovered prompt always names its source, whatever its stage
        output = PromptArtifact(reply, Stage.RECOVERED, backend.id, obfuscated.digest)
    report = AttackReport(AttackKind.RECOVERY, obfuscated.digest, output, backend.id, calls=1,
                          run_dir=_attack_dir(run_dir))
    _write_meta(report)
    return report


def induce_naive(
    task_description: str,
    io_pairs: Sequence[tuple[str, str]],
    backend: Backend,
    *,
    max_pairs: int = DEFAULT_IO_PAIRS,
    template: TemplateFile | None = None,
    run_dir: str | Path | None = None,
) -> AttackReport:
    """Have ``backend`` write a prompt from a task description and worked examples."""
    if not io_pairs:
        raise ValueError("naive induction needs at least one input/output pair")
    if max_pairs < 1:
        raise ValueError("max_pairs must be positive")
    template = template or load_template("naive_induction")
    request = render_template(
        template,
        {"task_description": task_description, "io_pairs": format_io_pairs(list(io_pairs)[:max_pairs])},
    )
    reply = _ask(backend, request)
    output = PromptArtifact(reply, Stage.INDUCED, backend.id)
    report = AttackReport(AttackKind.NAIVE, None, output, backend.id, calls=1, run_dir=_attack_dir(run_dir))
    _write_meta(report)
    return report


def io_pairs_from_dataset(dataset: Sequence[TaskExample]) -> list[tuple[str, str]]:
    pairs = [(ex.query, ex.reference_text) for ex in dataset if ex.reference_text]
    if not pairs:
        raise ValueError("no example in the dataset has a reference output")
    return pairs


def _ask(backend: Backend, request: str) -> str:
    reply = strip_outer_fence(backend.generate("", request))
    if not reply.strip():
        raise EmptyResponse(f"{backend.id} returned an empty reply")
    return reply


def _attack_dir(run_dir: str | Path | None) -> Path | None:
    if run_dir is None:
        return None
    run = RunDirectory(run_dir)
    run.check_fresh()
    return run.path


def _write_meta(report: AttackReport) -> None:
    if report.run_dir is None:
        return
    run = RunDirectory(report.run_dir)
    run.path.mkdir(parents=True, exist_ok=True)
    if report.kind is not AttackKind.DEOBFUSCATION:
        run.write_new("final.prompt", report.output.text)
    run.write_new("attack.meta", canonical_json(report.to_dict()))


def read_attack_meta(run_dir: str | Path) -> dict[str, Any]:
    return json.loads((Path(run_dir) / "attack.meta").read_text(encoding="utf-8"))
