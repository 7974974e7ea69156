"""Shared domain types: prompt artifacts, run configuration, datasets, top-k records.

Everything here is immutable after construction. Validation happens in
``__post_init__`` so an instance that exists is an instance that is valid.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from promptlock.errors import DatasetEmpty, InvalidArtifact, InvalidConfig

DIGEST_ALGORITHM = "sha256"


def digest(text: str) -> str:
    """Hex SHA-256 of the UTF-8 bytes of ``text``."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# Prompt artifacts
# ---------------------------------------------------------------------------


class Stage(str, enum.Enum):
    ORIGINAL = "original"
    INITIALIZED = "initialized"
    OBFUSCATED = "obfuscated"
    RECOVERED = "recovered"
    DEOBFUSCATED = "deobfuscated"
    INDUCED = "induced"


_ALLOWED_PARENTS: dict[Stage, tuple[Stage, ...]] = {
    Stage.INITIALIZED: (Stage.ORIGINAL,),
    Stage.OBFUSCATED: (Stage.INITIALIZED,),
    Stage.RECOVERED: (Stage.OBFUSCATED,),
    Stage.DEOBFUSCATED: (Stage.OBFUSCATED,),
}


@dataclass(frozen=True)
class PromptArtifact:
    text: str
    stage: Stage = Stage.ORIGINAL
    target_backend: str | None = None
    parent_digest: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage", Stage(self.stage))
        if not self.text:
            raise InvalidArtifact(f"{self.stage.value} prompt text is empty")
        if self.stage in (Stage.ORIGINAL, Stage.INDUCED) and self.parent_digest is not None:
            raise InvalidArtifact(f"a {self.stage.value} prompt has no parent")

    @property
    def digest(self) -> str:
        return digest(self.text)

    def derive(self, text: str, stage: Stage | str, target_backend: str | None = None) -> PromptArtifact:
        """Create a child artifact, enforcing the allowed stage transitions."""
        stage = Stage(stage)
        allowed = _ALLOWED_PARENTS.get(stage, ())
        if self.stage not in allowed:
            raise InvalidArtifact(f"cannot derive {stage.value} from {self.stage.value}")
        return PromptArtifact(
            text=text,
            stage=stage,
            target_backend=target_backend if target_backend is not None else self.target_backend,
            parent_digest=self.digest,
        )

    def is_child_of(self, parent: PromptArtifact) -> bool:
        return self.parent_digest == parent.digest

    def to_dict(self) -> dict[str, Any]:
        return {
            "digest": self.digest,
            "parent_digest": self.parent_digest,
            "stage": self.stage.value,
            "target_backend": self.target_backend,
        }


def resolve_lineage(artifact: PromptArtifact, known: Iterable[PromptArtifact]) -> list[PromptArtifact]:
    """Walk parent digests back to the root; returns ``[artifact, parent, ..., root]``."""
    by_digest = {a.digest: a for a in known}
    chain = [artifact]
    while chain[-1].parent_digest is not None:
        parent = by_digest.get(chain[-1].parent_digest)
        if parent is None:
            raise InvalidArtifact(f"unknown parent {chain[-1].parent_digest[:12]}")
        chain.append(parent)
    return chain


# ---------------------------------------------------------------------------
# Objective weights, noise schedule, noise alphabet
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_: float = 0.1
    gamma: float = 0.1
    use_dist_term: bool = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lambda_) and math.isfinite(self.gamma)):
            raise InvalidConfig("objective weights must be finite")

    @classmethod
    def deobfuscation(cls) -> ObjectiveWeights:
        # Attacker has no original prompt, and wants natural text back.
        return cls(lambda_=0.0, gamma=-0.1, use_dist_term=False)


@dataclass(frozen=True)
class NoiseSchedule:
    initial_size: int
    decay_per_epoch: int = 8
    minimum_size: int = 4

    def __post_init__(self) -> None:
        if self.initial_size < 1 or self.minimum_size < 1:
            raise InvalidConfig("noise sizes must be positive")
        if self.decay_per_epoch < 0:
            raise InvalidConfig("noise decay must be non-negative")
        if self.minimum_size > self.initial_size:
            raise InvalidConfig(
                f"minimum noise size {self.minimum_size} exceeds initial size {self.initial_size}"
            )


class AlphabetMode(str, enum.Enum):
    PRINTABLE_ASCII = "printable_ascii"
    FULL_ASCII = "full_ascii"
    CUSTOM = "custom"


@dataclass(frozen=True)
class NoiseAlphabet:
    characters: tuple[str, ...]
    mode: AlphabetMode = AlphabetMode.CUSTOM

    def __post_init__(self) -> None:
        from promptlock.errors import EmptyAlphabet

        object.__setattr__(self, "characters", tuple(self.characters))
        object.__setattr__(self, "mode", AlphabetMode(self.mode))
        if not self.characters:
            raise EmptyAlphabet("noise alphabet is empty")
        if len(set(self.characters)) != len(self.characters):
            raise InvalidConfig("noise alphabet contains duplicates")
        for ch in self.characters:
            if len(ch) != 1:
                raise InvalidConfig(f"alphabet entry {ch!r} is not a single character")
            try:
                ch.encode("utf-8")
            except UnicodeEncodeError as exc:
                raise InvalidConfig(f"alphabet entry {ch!r} is not UTF-8 encodable") from exc

    @classmethod
    def printable_ascii(cls) -> NoiseAlphabet:
        return cls(tuple(chr(c) for c in range(32, 127)), AlphabetMode.PRINTABLE_ASCII)

    @classmethod
    def full_ascii(cls) -> NoiseAlphabet:
        return cls(tuple(chr(c) for c in range(0, 128)), AlphabetMode.FULL_ASCII)

    @classmethod
    def custom(cls, characters: str | Iterable[str]) -> NoiseAlphabet:
        return cls(tuple(dict.fromkeys(characters)), AlphabetMode.CUSTOM)

    def __len__(self) -> int:
        return len(self.characters)


# ---------------------------------------------------------------------------
# Tasks and top-k records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskExample:
    query: str
    label_tokens: tuple[str, ...] = ()
    reference_text: str = ""
    choices: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "label_tokens", tuple(self.label_tokens))
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))
        if not self.label_tokens and not self.reference_text:
            raise InvalidArtifact("task example needs label_tokens or reference_text")
        if self.choices is not None and self.reference_text not in self.choices:
            raise InvalidArtifact("reference_text is not one of the choices")

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "label_tokens": list(self.label_tokens),
            "reference_text": self.reference_text,
            "choices": list(self.choices) if self.choices is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TaskExample:
        unknown = set(data) - {"query", "label_tokens", "reference_text", "choices"}
        if unknown:
            raise InvalidArtifact(f"unknown dataset fields: {sorted(unknown)}")
        return cls(
            query=data["query"],
            label_tokens=tuple(data.get("label_tokens") or ()),
            reference_text=data.get("reference_text") or "",
            choices=tuple(data["choices"]) if data.get("choices") is not None else None,
        )


Dataset = tuple[TaskExample, ...]


def dataset_to_jsonl(dataset: Sequence[TaskExample]) -> str:
    return "".join(json.dumps(ex.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for ex in dataset)


def dataset_digest(dataset: Sequence[TaskExample]) -> str:
    return digest(dataset_to_jsonl(dataset))


def load_dataset(path: str | Path) -> Dataset:
    examples = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            examples.append(TaskExample.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InvalidArtifact(f"{path}:{lineno}: {exc}") from exc
    if not examples:
        raise DatasetEmpty(f"{path} has no examples")
    return tuple(examples)


def save_dataset(dataset: Sequence[TaskExample], path: str | Path) -> None:
    Path(path).write_text(dataset_to_jsonl(dataset), encoding="utf-8")


@dataclass(frozen=True)
class TopKRecord:
    position: int
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        entries = tuple((str(tok), float(lp)) for tok, lp in self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        prev = 0.0
        for tok, lp in entries:
            if not math.isfinite(lp) or lp > 0.0:
                raise InvalidArtifact(f"logprob {lp} for {tok!r} is not a finite value <= 0")
            if lp > prev:
                raise InvalidArtifact("top-k entries are not sorted by descending logprob")
            if tok in seen:
                raise InvalidArtifact(f"duplicate token {tok!r} in top-k entries")
            seen.add(tok)
            prev = lp

    def logprob(self, token: str) -> float | None:
        for tok, lp in self.entries:
            if tok == token:
                return lp
        return None


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

FEEDBACK_MODES = ("logprob", "token_only")
METRICS = ("exact_match", "token_f1", "choice_accuracy")
INIT_MODES = ("dsl", "passthrough")
DIST_NORMALIZE = ("none", "by_original_length")

DEFAULT_EPOCHS = {"logprob": 50, "token_only": 100}


@dataclass(frozen=True)
class RunConfig:
    """Every optimizer hyperparameter. ``None`` means "fill from defaults"."""

    epochs: int | None = None
    candidates_per_epoch: int = 20
    batch_size: int = 1
    lambda_: float = 0.1
    gamma: float = 0.1
    use_dist_term: bool = True
    dist_normalize: str = "none"
    initial_noise_size: int | None = None
    noise_decay: int = 8
    min_noise_size: int = 4
    alphabet: str = "printable_ascii"
    custom_alphabet: str | None = None
    edit_mix: tuple[float, float, float] = (0.45, 0.45, 0.10)
    top_k: int = 10
    default_logprob: float = -100.0
    seed: int = 0
    feedback: str = "logprob"
    metric: str = "exact_match"
    init_mode: str = "dsl"

    @property
    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(self.lambda_, self.gamma, self.use_dist_term)

    def noise_alphabet(self) -> NoiseAlphabet:
        if self.alphabet == "printable_ascii":
            return NoiseAlphabet.printable_ascii()
        if self.alphabet == "full_ascii":
            return NoiseAlphabet.full_ascii()
        return NoiseAlphabet.custom(self.custom_alphabet or "")

    def schedule(self, prompt_length: int | None = None) -> NoiseSchedule:
        """Noise schedule; an unset initial size becomes a quarter of ``prompt_length``."""
        initial = self.initial_noise_size
        if initial is None:
            if prompt_length is None:
                raise InvalidConfig("initial_noise_size unset and no prompt length given")
            initial = max(self.min_noise_size, prompt_length // 4)
        return NoiseSchedule(initial, self.noise_decay, self.min_noise_size)

    def replace(self, **changes: Any) -> RunConfig:
        return dataclasses.replace(self, **changes)

    @property
    def total_steps(self) -> int:
        return (self.epochs or 0) * self.candidates_per_epoch

    def to_dict(self) -> dict[str, Any]:
        out = {f.name.rstrip("_"): getattr(self, f.name) for f in dataclasses.fields(self)}
        out["edit_mix"] = {"replace": self.edit_mix[0], "insert": self.edit_mix[1], "delete": self.edit_mix[2]}
        if not self.use_dist_term:
            # The distance term is absent, not merely zero-weighted.
            out["lambda"] = None
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:
        names = {f.name.rstrip("_"): f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - set(names)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = {names[k]: v for k, v in data.items()}
        if "lambda_" in kwargs and kwargs["lambda_"] is None:
            kwargs["lambda_"] = 0.0
        mix = kwargs.get("edit_mix")
        if isinstance(mix, Mapping):
            kwargs["edit_mix"] = (mix["replace"], mix["insert"], mix["delete"])
        elif mix is not None:
            kwargs["edit_mix"] = tuple(mix)
        return cls(**kwargs)

    def dumps(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> RunConfig:
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig("config document must be an object")
        return cls.from_dict(data)

    @property
    def digest(self) -> str:
        return digest(self.dumps())


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidConfig(message)


def validate_run_config(config: RunConfig | Mapping[str, Any] | None = None) -> RunConfig:
    """Fill defaults and reject inconsistent settings."""
    if config is None:
        config = RunConfig()
    elif not isinstance(config, RunConfig):
        config = RunConfig.from_dict(config)

    _require(config.feedback in FEEDBACK_MODES, f"feedback must be one of {FEEDBACK_MODES}")
    if config.epochs is None:
        config = config.replace(epochs=DEFAULT_EPOCHS[config.feedback])

    def is_int(v: Any) -> bool:
        return isinstance(v, int) and not isinstance(v, bool)

    _require(is_int(config.epochs) and config.epochs >= 0, "epochs must be a non-negative integer")
    _require(is_int(config.candidates_per_epoch) and config.candidates_per_epoch > 0,
             "candidates_per_epoch must be positive")
    _require(is_int(config.batch_size) and config.batch_size > 0, "batch_size must be positive")
    _require(is_int(config.top_k) and 0 < config.top_k <= 20, "top_k must be in 1..20")
    _require(is_int(config.seed), "seed must be an integer")
    _require(is_int(config.noise_decay) and config.noise_decay >= 0, "noise_decay must be >= 0")
    _require(is_int(config.min_noise_size) and config.min_noise_size > 0, "min_noise_size must be positive")
    if config.initial_noise_size is not None:
        _require(is_int(config.initial_noise_size) and config.initial_noise_size > 0,
                 "initial_noise_size must be positive")
        _require(config.min_noise_size <= config.initial_noise_size,
                 "min_noise_size exceeds initial_noise_size")
    _require(math.isfinite(config.default_logprob) and config.default_logprob < 0,
             "default_logprob must be negative")
    _require(math.isfinite(config.lambda_) and math.isfinite(config.gamma), "weights must be finite")
    _require(config.metric in METRICS, f"metric must be one of {METRICS}")
    _require(config.init_mode in INIT_MODES, f"init_mode must be one of {INIT_MODES}")
    _require(config.dist_normalize in DIST_NORMALIZE, f"dist_normalize must be one of {DIST_NORMALIZE}")
    _require(config.alphabet in {m.value for m in AlphabetMode}, "unknown alphabet mode")
    if config.alphabet == "custom":
        _require(bool(config.custom_alphabet), "custom alphabet requires custom_alphabet characters")
    mix = tuple(float(p) for p in config.edit_mix)
    _require(len(mix) == 3 and all(0.0 <= p <= 1.0 for p in mix), "edit_mix entries must be in [0, 1]")
    _require(abs(sum(mix) - 1.0) < 1e-9, "edit_mix must sum to 1")
    config.noise_alphabet()
    return config.replace(
        edit_mix=mix,
        lambda_=float(config.lambda_),
        gamma=float(config.gamma),
        default_logprob=float(config.default_logprob),
    )


def load_run_config(path: str | Path) -> RunConfig:
    return validate_run_config(RunConfig.loads(Path(path).read_text(encoding="utf-8")))
