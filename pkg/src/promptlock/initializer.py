"""Prompt templates and the code-symbol initialization step."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from promptlock.backends.base import Backend
from promptlock.core import PromptArtifact, Stage
from promptlock.errors import EmptyResponse, InvalidArtifact, MissingBinding, UnknownPlaceholder

TEMPLATE_NAMES = ("dsl_init", "recovery", "naive_induction")

REQUIRED_PLACEHOLDERS = {
    "dsl_init": frozenset({"target_prompt"}),
    "recovery": frozenset({"obfuscated_prompt"}),
    "naive_induction": frozenset({"task_description", "io_pairs"}),
}

# `{name}` with a lowercase identifier, not part of a `{{...}}` literal.
_PLACEHOLDER = re.compile(r"(?<!\{)\{([a-z_][a-z0-9_]*)\}(?!\})")


@dataclass(frozen=True)
class TemplateFile:
    name: str
    body: str

    def __post_init__(self) -> None:
        required = REQUIRED_PLACEHOLDERS.get(self.name)
        if required is not None and not required <= self.placeholders:
            missing = sorted(required - self.placeholders)
            raise InvalidArtifact(f"template {self.name!r} lacks placeholders {missing}")

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.body))


def load_template(name: str, override_dir: str | Path | None = None) -> TemplateFile:
    """Shipped template ``name``, or ``<override_dir>/<name>.txt`` when that file exists."""
    if override_dir is not None:
        path = Path(override_dir) / f"{name}.txt"
        if path.exists():
            return TemplateFile(name, path.read_text(encoding="utf-8"))
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"no shipped template named {name!r}")
    body = resources.files("promptlock.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return TemplateFile(name, body)


def render_template(template: TemplateFile, bindings: Mapping[str, str]) -> str:
    """Substitute every ``{name}`` placeholder; nothing else in the body changes."""
    wanted = template.placeholders
    missing = wanted - set(bindings)
    if missing:
        raise MissingBinding(f"template {template.name!r} needs bindings for {sorted(missing)}")
    unknown = set(bindings) - wanted
    if unknown:
        raise UnknownPlaceholder(f"template {template.name!r} has no placeholders {sorted(unknown)}")
    return _PLACEHOLDER.sub(lambda m: bindings[m.group(1)], template.body)


def format_io_pairs(io_pairs: Sequence[tuple[str, str]]) -> str:
    return "\n\n".join(f"Input:  {inp}\nOutput: {out}" for inp, out in io_pairs)


_FENCE = re.compile(r"\A\s*```[^\n]*\n(.*?)\n?```\s*\Z", re.S)


def strip_outer_fence(text: str) -> str:
    """Remove one outermost Markdown code fence, if the whole reply is fenced."""
    m = _FENCE.match(text)
    return m.group(1) if m else text


def initialize_prompt(
    original: PromptArtifact,
    backend: Backend | None = None,
    mode: str = "dsl",
    template: TemplateFile | None = None,
) -> PromptArtifact:
    """Rewrite ``original`` into the target backend's own code-symbol form.

    ``passthrough`` skips the rewrite (optimization-only ablation).
    """
    if original.stage is not Stage.ORIGINAL:
        raise InvalidArtifact(f"can only initialize an original prompt, got {original.stage.value}")
    target = backend.id if backend is not None else original.target_backend
    if mode == "passthrough":
        return original.derive(original.text, Stage.INITIALIZED, target)
    if mode != "dsl":
        raise ValueError(f"unknown initialization mode {mode!r}")
    if backend is None:
        raise ValueError("dsl initialization needs a backend")
    template = template or load_template("dsl_init")
    request = render_template(template, {"target_prompt": original.text})
    reply = strip_outer_fence(backend.generate("", request))
    if not reply.strip():
        raise EmptyResponse(f"{backend.id} returned an empty rewrite")
    return original.derive(reply, Stage.INITIALIZED, target)
