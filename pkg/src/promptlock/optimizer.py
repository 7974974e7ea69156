"""Random-search prompt obfuscation with annealed character noise.

Each step draws a batch, perturbs the incumbent with ``k`` character edits
(``k`` shrinks linearly per epoch), scores incumbent and proposal on the same
batch, and keeps the proposal only if its total loss is strictly lower.

Everything a run does lands in one run directory::

    config.snapshot            validated, fully resolved RunConfig
    run.meta                   mode, backend id, input digests
    original.prompt            prompt the distance term is measured against
    start.prompt               starting point of the search
    dataset.jsonl              the examples batches are drawn from
    trace.jsonl                one StepTrace per step
    checkpoints/epoch_<e>.state
    checkpoints/epoch_<e>_step_<s>.state   written when a step fails
    final.prompt, final.meta

Given the same seed, config, dataset and a deterministic backend, two runs
produce byte-identical directories.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from promptlock.backends.base import Backend, generate_many, score_many
from promptlock.core import (
    PromptArtifact,
    RunConfig,
    Stage,
    TaskExample,
    canonical_json,
    dataset_to_jsonl,
    digest,
    load_dataset,
    validate_run_config,
)
from promptlock.errors import (
    BackendError,
    ConfigMismatch,
    CorruptCheckpoint,
    CorruptTrace,
    DatasetEmpty,
    InvalidArtifact,
    InvalidConfig,
    PromptLockError,
)
from promptlock.initializer import TemplateFile, initialize_prompt
from promptlock.objective import (
    LossBreakdown,
    check_metric_reference,
    task_loss_topk,
    token_only_loss,
    total_loss,
)
from promptlock.textops import EditMix, inject_noise, noise_size_at

logger = logging.getLogger(__name__)

TRACE_FIELDS = (
    "accepted",
    "epoch",
    "example_ids",
    "incumbent_digest",
    "incumbent_loss",
    "noise_size",
    "proposal_digest",
    "proposal_loss",
    "step",
)


@dataclass(frozen=True)
class StepTrace:
    epoch: int
    step: int
    noise_size: int
    incumbent_digest: str
    proposal_digest: str
    incumbent_loss: LossBreakdown
    proposal_loss: LossBreakdown
    accepted: bool
    example_ids: tuple[int, ...]

    def to_json(self) -> str:
        d = asdict(self)
        d["example_ids"] = list(self.example_ids)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StepTrace:
        if set(d) != set(TRACE_FIELDS):
            raise ValueError(f"trace row has fields {sorted(d)}")
        return cls(
            epoch=int(d["epoch"]),
            step=int(d["step"]),
            noise_size=int(d["noise_size"]),
            incumbent_digest=d["incumbent_digest"],
            proposal_digest=d["proposal_digest"],
            incumbent_loss=LossBreakdown(**d["incumbent_loss"]),
            proposal_loss=LossBreakdown(**d["proposal_loss"]),
            accepted=bool(d["accepted"]),
            example_ids=tuple(d["example_ids"]),
        )

    @property
    def kept_loss(self) -> LossBreakdown:
        """Loss of the prompt that survives this step."""
        return self.proposal_loss if self.accepted else self.incumbent_loss


def read_trace(path: str | Path) -> list[StepTrace]:
    rows = []
    path = Path(path)
    if not path.exists():
        raise CorruptTrace(f"{path} does not exist")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        try:
            rows.append(StepTrace.from_dict(json.loads(line)))
        except (ValueError, TypeError, KeyError) as exc:
            raise CorruptTrace(f"{path}:{lineno}: {exc}") from exc
    return rows


@dataclass
class OptimizerState:
    current: str
    epoch: int = 0
    step_in_epoch: int = 0
    rng_state: dict[str, Any] = field(default_factory=dict)
    best_total_loss_on_last_batch: float | None = None
    best_digest: str | None = None
    best_total: float | None = None
    accepted_steps: int = 0
    config_digest: str = ""

    def to_json(self) -> str:
        return canonical_json(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> OptimizerState:
        return cls(**json.loads(text))


@dataclass(frozen=True)
class RunResult:
    artifact: PromptArtifact
    run_dir: Path
    initialized: PromptArtifact | None = None

    @property
    def trace_path(self) -> Path:
        return self.run_dir / "trace.jsonl"


# ---------------------------------------------------------------------------
# run directory helpers
# ---------------------------------------------------------------------------


class RunDirectory:
    def __init__(self, path: str | Path):
        self.path = Path(path)

    def check_fresh(self) -> None:
        if self.path.exists() and any(self.path.iterdir()):
            raise InvalidConfig(f"run directory {self.path} already exists and is not empty")

    def create(self) -> None:
        self.check_fresh()
        (self.path / "checkpoints").mkdir(parents=True, exist_ok=True)

    def write_new(self, name: str, text: str) -> Path:
        """Write a file that must not exist yet; runs never overwrite their own outputs."""
        target = self.path / name
        with open(target, "x", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return target

    def read(self, name: str) -> str:
        return (self.path / name).read_text(encoding="utf-8")

    def exists(self, name: str) -> bool:
        return (self.path / name).exists()

    def checkpoints(self) -> list[tuple[int, int, Path]]:
        out = []
        for p in (self.path / "checkpoints").glob("*.state"):
            m = re.fullmatch(r"epoch_(\d+)(?:_step_(\d+))?\.state", p.name)
            if m:
                out.append((int(m.group(1)), int(m.group(2) or 0), p))
        return sorted(out)

    @staticmethod
    def checkpoint_name(epoch: int, step: int) -> str:
        return f"checkpoints/epoch_{epoch}.state" if step == 0 else f"checkpoints/epoch_{epoch}_step_{step}.state"


# ---------------------------------------------------------------------------
# batch scoring
# ---------------------------------------------------------------------------

BatchScorer = Callable[[str, Sequence[TaskExample]], float]


def make_scorer(config: RunConfig, backend: Backend) -> BatchScorer:
    """Mean task loss of a prompt over a batch, from log-probabilities or decoded text."""
    if config.feedback == "logprob":

        def score(prompt: str, batch: Sequence[TaskExample]) -> float:
            records = score_many(backend, prompt, batch, config.top_k)
            losses = [
                task_loss_topk(r, ex.label_tokens, config.default_logprob) for r, ex in zip(records, batch)
            ]
            return math.fsum(losses) / len(losses)

    else:

        def score(prompt: str, batch: Sequence[TaskExample]) -> float:
            outputs = generate_many(backend, prompt, [ex.query for ex in batch])
            losses = [token_only_loss(out, ex, config.metric) for out, ex in zip(outputs, batch)]
            return math.fsum(losses) / len(losses)

    return score


def check_dataset(config: RunConfig, dataset: Sequence[TaskExample]) -> None:
    if not dataset:
        raise DatasetEmpty("dataset is empty")
    for ex in dataset:
        if config.feedback == "logprob":
            if not ex.label_tokens:
                raise InvalidArtifact(f"example {ex.query[:40]!r} has no label tokens for logprob scoring")
        else:
            check_metric_reference(ex, config.metric)


# ---------------------------------------------------------------------------
# the search loop
# ---------------------------------------------------------------------------


def _search(
    run: RunDirectory,
    config: RunConfig,
    state: OptimizerState,
    dataset: Sequence[TaskExample],
    backend: Backend,
    original_text: str | None,
    replay: Sequence[str] = (),
) -> OptimizerState:
    """Advance ``state`` to the end of the run, appending to trace.jsonl.

    ``replay`` holds trace lines already on disk past the checkpoint; they are
    regenerated and compared instead of being written again.
    """
    schedule = config.schedule()
    alphabet = config.noise_alphabet()
    mix = EditMix.from_tuple(config.edit_mix)
    weights = config.weights
    score = make_scorer(config, backend)
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    replay = list(replay)

    def loss(prompt: str, batch: Sequence[TaskExample]) -> LossBreakdown:
        return total_loss(
            score(prompt, batch),
            prompt,
            original_text,
            weights,
            dist_normalize=config.dist_normalize,
            batch_size=len(batch),
        )

    with open(run.path / "trace.jsonl", "a", encoding="utf-8", newline="") as trace:
        while state.epoch < config.epochs:
            if state.step_in_epoch == 0:
                name = run.checkpoint_name(state.epoch, 0)
                if not run.exists(name):
                    run.write_new(name, state.to_json())
            k = noise_size_at(state.epoch, schedule)
            while state.step_in_epoch < config.candidates_per_epoch:
                before = rng.bit_generator.state
                ids = tuple(int(i) for i in rng.integers(0, len(dataset), size=config.batch_size))
                batch = [dataset[i] for i in ids]
                proposal = inject_noise(state.current, k, alphabet, mix, rng)
                try:
                    inc_loss = loss(state.current, batch)
                    prop_loss = loss(proposal, batch)
                except BackendError:
                    state.rng_state = before
                    trace.flush()
                    name = run.checkpoint_name(state.epoch, state.step_in_epoch)
                    if not run.exists(name):
                        run.write_new(name, state.to_json())
                    logger.error("backend failure at epoch %d step %d; checkpoint %s",
                                 state.epoch, state.step_in_epoch, name)
                    raise
                accepted = prop_loss.total < inc_loss.total
                row = StepTrace(
                    epoch=state.epoch,
                    step=state.step_in_epoch,
                    noise_size=k,
                    incumbent_digest=digest(state.current),
                    proposal_digest=digest(proposal),
                    incumbent_loss=inc_loss,
                    proposal_loss=prop_loss,
                    accepted=accepted,
                    example_ids=ids,
                ).to_json()
                if replay:
                    if replay.pop(0) != row:
                        raise CorruptCheckpoint(
                            f"replayed step epoch={state.epoch} step={state.step_in_epoch} "
                            "does not match the recorded trace"
                        )
                else:
                    trace.write(row + "\n")
                if accepted:
                    state.current = proposal
                    state.accepted_steps += 1
                kept = prop_loss if accepted else inc_loss
                state.best_total_loss_on_last_batch = kept.total
                if state.best_total is None or kept.total < state.best_total:
                    state.best_total = kept.total
                    state.best_digest = digest(state.current)
                state.step_in_epoch += 1
            state.epoch += 1
            state.step_in_epoch = 0
            state.rng_state = rng.bit_generator.state
    if replay:
        raise CorruptCheckpoint(f"trace has {len(replay)} rows beyond the end of the run")
    state.rng_state = rng.bit_generator.state
    name = run.checkpoint_name(state.epoch, 0)
    if not run.exists(name):
        run.write_new(name, state.to_json())
    return state


def _finish(run: RunDirectory, state: OptimizerState, start: PromptArtifact, stage: Stage) -> PromptArtifact:
    final = start.derive(state.current, stage)
    meta = {
        "artifact": final.to_dict(),
        "accepted_steps": state.accepted_steps,
        "best_incumbent_digest": state.best_digest,
        "best_incumbent_total": state.best_total,
        "config_digest": state.config_digest,
        "start": start.to_dict(),
    }
    run.write_new("final.prompt", final.text)
    run.write_new("final.meta", canonical_json(meta))
    return final


def _start_run(
    run_dir: str | Path,
    config: RunConfig,
    mode: str,
    backend: Backend,
    dataset: Sequence[TaskExample],
    start: PromptArtifact,
    original_text: str | None,
    extra_meta: dict[str, Any] | None = None,
) -> tuple[RunDirectory, RunConfig, OptimizerState]:
    run = RunDirectory(run_dir)
    run.create()
    config = config.replace(initial_noise_size=config.schedule(len(start.text)).initial_size)
    config = validate_run_config(config)
    meta = {"mode": mode, "backend": backend.id, "start": start.to_dict(), **(extra_meta or {})}
    run.write_new("config.snapshot", config.dumps())
    run.write_new("run.meta", canonical_json(meta))
    if original_text is not None:
        run.write_new("original.prompt", original_text)
    run.write_new("start.prompt", start.text)
    run.write_new("dataset.jsonl", dataset_to_jsonl(dataset))
    run.write_new("trace.jsonl", "")
    rng = np.random.default_rng(config.seed)
    state = OptimizerState(current=start.text, rng_state=rng.bit_generator.state, config_digest=config.digest)
    return run, config, state


def run_obfuscation(
    config: RunConfig | dict | None,
    original: PromptArtifact,
    dataset: Sequence[TaskExample],
    backend: Backend,
    run_dir: str | Path,
    *,
    template: TemplateFile | None = None,
) -> RunResult:
    """Initialize ``original`` on ``backend`` and optimize it into an obfuscated prompt."""
    config = validate_run_config(config)
    dataset = tuple(dataset)
    check_dataset(config, dataset)
    if original.stage is not Stage.ORIGINAL:
        raise InvalidArtifact("run_obfuscation starts from an original prompt")
    RunDirectory(run_dir).check_fresh()
    initialized = initialize_prompt(original, backend, config.init_mode, template)
    run, config, state = _start_run(
        run_dir, config, "obfuscate", backend, dataset, initialized, original.text,
        {"original": original.to_dict()},
    )
    state = _search(run, config, state, dataset, backend, original.text)
    return RunResult(_finish(run, state, initialized, Stage.OBFUSCATED), run.path, initialized)


def run_token_only(
    config: RunConfig | dict | None,
    original: PromptArtifact,
    dataset: Sequence[TaskExample],
    backend: Backend,
    run_dir: str | Path,
    metric: str | None = None,
    *,
    template: TemplateFile | None = None,
) -> RunResult:
    """Same search, but the task term is ``1 - metric`` on decoded outputs."""
    if config is None:
        config = RunConfig()
    elif not isinstance(config, RunConfig):
        config = RunConfig.from_dict(config)
    config = config.replace(feedback="token_only", metric=metric or config.metric)
    return run_obfuscation(config, original, dataset, backend, run_dir, template=template)


def run_search_from(
    config: RunConfig,
    start: PromptArtifact,
    output_stage: Stage,
    dataset: Sequence[TaskExample],
    backend: Backend,
    run_dir: str | Path,
    *,
    mode: str,
    original_text: str | None = None,
    extra_meta: dict[str, Any] | None = None,
) -> RunResult:
    """Optimize an existing prompt without an initialization call (used by attacks)."""
    config = validate_run_config(config)
    dataset = tuple(dataset)
    check_dataset(config, dataset)
    if config.use_dist_term and original_text is None:
        raise InvalidConfig("the distance term needs an original prompt")
    run, config, state = _start_run(run_dir, config, mode, backend, dataset, start, original_text, extra_meta)
    state = _search(run, config, state, dataset, backend, original_text if config.use_dist_term else None)
    return RunResult(_finish(run, state, start, output_stage), run.path)


# ---------------------------------------------------------------------------
# resume
# ---------------------------------------------------------------------------


def _artifact_from_meta(text: str, meta: dict[str, Any]) -> PromptArtifact:
    art = PromptArtifact(
        text=text,
        stage=Stage(meta["stage"]),
        target_backend=meta.get("target_backend"),
        parent_digest=meta.get("parent_digest"),
    )
    if art.digest != meta["digest"]:
        raise CorruptCheckpoint("prompt text does not match its recorded digest")
    return art


def resume(path: str | Path, backend: Backend) -> RunResult:
    """Continue an interrupted run from its latest checkpoint.

    ``path`` is the run directory or any checkpoint file inside it. Steps already
    in the trace are recomputed and checked, never rewritten.
    """
    path = Path(path)
    if path.is_file():
        run = RunDirectory(path.parent.parent)
        chosen: Path | None = path
    else:
        run = RunDirectory(path)
        chosen = None
    try:
        config = RunConfig.loads(run.read("config.snapshot"))
        meta = json.loads(run.read("run.meta"))
        start = _artifact_from_meta(run.read("start.prompt"), meta["start"])
    except (OSError, KeyError, ValueError, PromptLockError) as exc:
        raise CorruptCheckpoint(f"{run.path} is not a resumable run: {exc}") from exc
    config = validate_run_config(config)
    stage = {"obfuscate": Stage.OBFUSCATED, "deobfuscate": Stage.DEOBFUSCATED}[meta["mode"]]

    if run.exists("final.prompt"):
        final_meta = json.loads(run.read("final.meta"))
        return RunResult(_artifact_from_meta(run.read("final.prompt"), final_meta["artifact"]), run.path)

    if chosen is None:
        points = run.checkpoints()
        if not points:
            raise CorruptCheckpoint(f"{run.path} has no checkpoints")
        chosen = points[-1][2]
    try:
        state = OptimizerState.from_json(chosen.read_text(encoding="utf-8"))
    except (OSError, ValueError, TypeError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint {chosen}: {exc}") from exc
    if state.config_digest != config.digest:
        raise ConfigMismatch(f"checkpoint {chosen.name} was written under a different config")
    if backend.id != meta["backend"]:
        raise ConfigMismatch(f"run used backend {meta['backend']!r}, resume got {backend.id!r}")

    done = state.epoch * config.candidates_per_epoch + state.step_in_epoch
    lines = run.read("trace.jsonl").splitlines()
    if len(lines) < done:
        raise CorruptCheckpoint(f"trace has {len(lines)} rows but the checkpoint is at step {done}")
    for line in lines:
        try:
            StepTrace.from_dict(json.loads(line))
        except (ValueError, TypeError, KeyError) as exc:
            raise CorruptCheckpoint(f"malformed trace row: {exc}") from exc

    dataset = load_dataset(run.path / "dataset.jsonl")
    original_text = run.read("original.prompt") if config.use_dist_term else None
    state = _search(run, config, state, dataset, backend, original_text, replay=lines[done:])
    return RunResult(_finish(run, state, start, stage), run.path, start if stage is Stage.OBFUSCATED else None)
