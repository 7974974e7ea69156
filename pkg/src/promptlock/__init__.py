"""Lock a system prompt to one model by rewriting it into that model's own code-like form
and then searching over character noise that keeps it working there and nowhere else."""

from promptlock.attacks import AttackKind, AttackReport, deobfuscate, induce_naive, recover
from promptlock.backends import Backend, OracleSpec, SyntheticOracle, build_backend, load_registry
from promptlock.core import (
    NoiseAlphabet,
    NoiseSchedule,
    ObjectiveWeights,
    PromptArtifact,
    RunConfig,
    Stage,
    TaskExample,
    TopKRecord,
    load_dataset,
    load_run_config,
    validate_run_config,
)
from promptlock.evaluation import (
    PortabilityMatrix,
    evaluate_prompt,
    functional_equivalence,
    portability_matrix,
    portability_ratio,
    preservation_ratio,
)
from promptlock.initializer import initialize_prompt, load_template, render_template
from promptlock.objective import LossBreakdown, task_loss_topk, token_only_loss, total_loss
from promptlock.optimizer import OptimizerState, RunResult, StepTrace, resume, run_obfuscation, run_token_only
from promptlock.textops import EditMix, char_entropy, inject_noise, levenshtein, noise_size_at

__version__ = "0.1.0"

__all__ = [
    "AttackKind",
    "AttackReport",
    "Backend",
    "EditMix",
    "LossBreakdown",
    "NoiseAlphabet",
    "NoiseSchedule",
    "ObjectiveWeights",
    "OptimizerState",
    "OracleSpec",
    "PortabilityMatrix",
    "PromptArtifact",
    "RunConfig",
    "RunResult",
    "Stage",
    "StepTrace",
    "SyntheticOracle",
    "TaskExample",
    "TopKRecord",
    "build_backend",
    "char_entropy",
    "deobfuscate",
    "evaluate_prompt",
    "functional_equivalence",
    "induce_naive",
    "initialize_prompt",
    "inject_noise",
    "levenshtein",
    "load_dataset",
    "load_registry",
    "load_run_config",
    "load_template",
    "noise_size_at",
    "portability_matrix",
    "portability_ratio",
    "preservation_ratio",
    "recover",
    "render_template",
    "resume",
    "run_obfuscation",
    "run_token_only",
    "task_loss_topk",
    "token_only_loss",
    "total_loss",
    "validate_run_config",
]
