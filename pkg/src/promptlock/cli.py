"""Command-line entry point.

Exit status: 0 on success, 1 on a domain error (an ``error.json`` record is left
in the run directory when there is one), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from promptlock import attacks, evaluation
from promptlock.audit import audit_run
from promptlock.backends import get_backend, load_registry
from promptlock.core import (
    PromptArtifact,
    RunConfig,
    Stage,
    canonical_json,
    load_dataset,
    load_run_config,
    validate_run_config,
)
from promptlock.errors import PromptLockError
from promptlock.optimizer import read_trace, resume, run_obfuscation

logger = logging.getLogger("promptlock")

CURVE_FIELDS = ("step", "epoch", "noise_size", "task", "dist", "nonlang", "total", "accepted")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _config(args: argparse.Namespace, **overrides) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if overrides:
        config = config.replace(**overrides)
    return validate_run_config(config)


def _backend(args: argparse.Namespace, backend_id: str | None = None, dataset=()):
    return get_backend(load_registry(args.registry), backend_id or args.backend, dataset)


def read_artifact(path: str | Path, default_stage: Stage = Stage.ORIGINAL) -> PromptArtifact:
    """A prompt from a plain text file, or the final prompt of a run directory."""
    path = Path(path)
    if path.is_dir():
        meta = json.loads((path / "final.meta").read_text(encoding="utf-8"))
        if "artifact" in meta:
            meta = meta["artifact"]
        elif "output" in meta:
            meta = meta["output"]
        text = (path / "final.prompt").read_text(encoding="utf-8")
        return PromptArtifact(text, Stage(meta["stage"]), meta.get("target_backend"), meta.get("parent_digest"))
    return PromptArtifact(path.read_text(encoding="utf-8"), default_stage)


def export_trace(run_dir: str | Path) -> str:
    """Per-step curve as CSV; loss columns describe the prompt kept after each step."""
    rows = read_trace(Path(run_dir) / "trace.jsonl")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    for i, row in enumerate(rows):
        kept = row.kept_loss
        w.writerow([i, row.epoch, row.noise_size, repr(kept.task), repr(kept.dist), repr(kept.nonlang),
                    repr(kept.total), int(row.accepted)])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.exists():
        raise PromptLockError(f"{path} already exists; outputs are never overwritten")
    path.write_text(text, encoding="utf-8")


def _write_error(run_dir: str | Path | None, exc: BaseException) -> None:
    if run_dir is None:
        return
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    name, n = "error.json", 0
    while (run_dir / name).exists():
        n += 1
        name = f"error.{n}.json"
    record = {"error": type(exc).__name__, "message": str(exc)}
    (run_dir / name).write_text(canonical_json(record), encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_obfuscate(args: argparse.Namespace) -> int:
    overrides = {"feedback": "token_only"} if args.token_only else {}
    if args.metric:
        overrides["metric"] = args.metric
    config = _config(args, **overrides)
    dataset = load_dataset(args.dataset)
    backend = _backend(args, dataset=dataset)
    original = PromptArtifact(Path(args.prompt).read_text(encoding="utf-8"), Stage.ORIGINAL, backend.id)
    result = run_obfuscation(config, original, dataset, backend, args.out)
    print(result.artifact.digest)
    return 0


def cmd_deobfuscate(args: argparse.Namespace) -> int:
    # attack defaults fill whatever the file leaves out
    raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    config = attacks.deobfuscation_config(raw)
    dataset = load_dataset(args.dataset)
    backend = _backend(args, dataset=dataset)
    report = attacks.deobfuscate(config, read_artifact(args.input, Stage.OBFUSCATED), dataset, backend, args.out)
    print(report.output.digest)
    return 0


def cmd_recover(args: argparse.Namespace) -> int:
    backend = _backend(args)
    report = attacks.recover(read_artifact(args.input, Stage.OBFUSCATED), backend, run_dir=args.out)
    print(report.output.digest)
    return 0


def cmd_induce(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    backend = _backend(args)
    description = Path(args.task_file).read_text(encoding="utf-8") if args.task_file else args.task
    if not description:
        raise UsageError("induce needs --task or --task-file")
    pairs = attacks.io_pairs_from_dataset(dataset)
    report = attacks.induce_naive(description, pairs, backend, max_pairs=args.pairs, run_dir=args.out)
    print(report.output.digest)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    backend = _backend(args, dataset=dataset)
    result = evaluation.evaluate_prompt(read_artifact(args.prompt), dataset, backend, args.metric,
                                        detail_path=args.out)
    print(repr(result.mean))
    return 0


def cmd_matrix(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    prompts = {}
    for spec in args.prompt:
        target, sep, path = spec.partition("=")
        if not sep:
            raise UsageError(f"--prompt expects TARGET=PATH, got {spec!r}")
        prompts[target] = read_artifact(path)
    ids = args.backends or list(prompts)
    registry = load_registry(args.registry)
    backends = {i: get_backend(registry, i, dataset) for i in ids}
    m = evaluation.portability_matrix(prompts, backends, dataset, args.metric)
    if args.out:
        if Path(args.out).exists():
            raise PromptLockError(f"{args.out} already exists; outputs are never overwritten")
        evaluation.save_matrices(m, args.out)
    else:
        sys.stdout.write(m.to_csv())
    return 0


def cmd_ratio(args: argparse.Namespace) -> int:
    if args.kind == "portability":
        if not (args.protected and args.baseline):
            raise UsageError("portability ratio needs --protected and --baseline")
        value = evaluation.portability_ratio(
            evaluation.load_matrices(args.protected), evaluation.load_matrices(args.baseline)
        )
    else:
        if not args.table:
            raise UsageError("preservation ratio needs --table")
        before, after = load_preservation_table(args.table)
        value = evaluation.preservation_ratio(after, before)
    print(f"{value:.4f}")
    return 0


def load_preservation_table(path: str | Path) -> tuple[dict[str, float], dict[str, float]]:
    """Read a ``block,backend,before,after`` file into two maps keyed ``block/backend``."""
    before: dict[str, float] = {}
    after: dict[str, float] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(r for r in fh if not r.startswith("#")):
            key = f"{row['block']}/{row['backend']}" if row.get("block") else row["backend"]
            before[key] = float(row["before"])
            after[key] = float(row["after"])
    return before, after


def cmd_export_trace(args: argparse.Namespace) -> int:
    _emit(export_trace(args.run), args.out)
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    report = audit_run(args.run)
    for v in report.violations:
        print(v)
    print(f"{report.rows} rows, {len(report.violations)} violations")
    return 0 if report.ok else 1


def cmd_resume(args: argparse.Namespace) -> int:
    path = Path(args.run)
    run_dir = path.parent.parent if path.is_file() else path
    meta = json.loads((run_dir / "run.meta").read_text(encoding="utf-8"))
    dataset = load_dataset(run_dir / "dataset.jsonl")
    backend = _backend(args, args.backend or meta["backend"], dataset)
    result = resume(path, backend)
    print(result.artifact.digest)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptlock", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, backend=True, dataset=True):
        sp.add_argument("--registry", default="backends.json", help="backend registry file")
        if backend:
            sp.add_argument("--backend", required=True)
        if dataset:
            sp.add_argument("--dataset", required=True)

    sp = sub.add_parser("obfuscate", help="initialize and optimize a prompt for one backend")
    common(sp)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--prompt", required=True, help="file holding the original prompt")
    sp.add_argument("--out", required=True, help="new run directory")
    sp.add_argument("--token-only", action="store_true", help="optimize on decoded outputs only")
    sp.add_argument("--metric", choices=("exact_match", "token_f1", "choice_accuracy"))
    sp.set_defaults(func=cmd_obfuscate, run_dir="out")

    sp = sub.add_parser("deobfuscate", help="re-optimize an obfuscated prompt toward readable text")
    common(sp)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--input", required=True, help="obfuscation run directory or prompt file")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_deobfuscate, run_dir="out")

    sp = sub.add_parser("recover", help="ask a backend to reconstruct the original prompt")
    common(sp, dataset=False)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_recover, run_dir="out")

    sp = sub.add_parser("induce", help="have a backend write a prompt from examples")
    common(sp)
    sp.add_argument("--task")
    sp.add_argument("--task-file")
    sp.add_argument("--pairs", type=int, default=attacks.DEFAULT_IO_PAIRS)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_induce, run_dir="out")

    sp = sub.add_parser("evaluate", help="mean metric of one prompt on one backend")
    common(sp)
    sp.add_argument("--prompt", required=True, help="prompt file or run directory")
    sp.add_argument("--metric", default="exact_match", choices=("exact_match", "token_f1", "choice_accuracy"))
    sp.add_argument("--out", help="per-example detail file")
    sp.set_defaults(func=cmd_evaluate, run_dir=None)

    sp = sub.add_parser("matrix", help="evaluate each prompt on each backend")
    common(sp, backend=False)
    sp.add_argument("--prompt", action="append", required=True, metavar="TARGET=PATH")
    sp.add_argument("--backends", nargs="+")
    sp.add_argument("--metric", default="exact_match", choices=("exact_match", "token_f1", "choice_accuracy"))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_matrix, run_dir=None)

    sp = sub.add_parser("ratio", help="portability or preservation ratio")
    sp.add_argument("--kind", choices=("portability", "preservation"), default="portability")
    sp.add_argument("--protected")
    sp.add_argument("--baseline")
    sp.add_argument("--table", help="block,backend,before,after file (preservation)")
    sp.set_defaults(func=cmd_ratio, run_dir=None)

    sp = sub.add_parser("export-trace", help="write a run's loss curve as CSV")
    sp.add_argument("run")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export_trace, run_dir=None)

    sp = sub.add_parser("audit", help="re-check every accept/reject decision of a run")
    sp.add_argument("run")
    sp.set_defaults(func=cmd_audit, run_dir=None)

    sp = sub.add_parser("resume", help="continue an interrupted run")
    sp.add_argument("run", help="run directory or checkpoint file")
    sp.add_argument("--registry", default="backends.json")
    sp.add_argument("--backend")
    sp.set_defaults(func=cmd_resume, run_dir="run")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on unknown flags, before anything touches disk
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run_dir = getattr(args, args.run_dir) if args.run_dir else None
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"promptlock: error: {exc}", file=sys.stderr)
        return 2
    except (PromptLockError, OSError, ValueError, KeyError) as exc:
        print(f"promptlock: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.command != "resume":
            _write_error(run_dir, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
