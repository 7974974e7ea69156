import csv
import io
import json
from pathlib import Path

import pytest

from conftest import KEY_A, KEY_B, ORIGINAL_TEXT, make_dataset
from promptlock.cli import export_trace, main
from promptlock.core import save_dataset
from promptlock.fixtures import __file__ as fixtures_init

FIXTURES = Path(fixtures_init).parent


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    registry = {
        "backends": [
            {"id": "oracleA", "kind": "synthetic_oracle", "oracle": {"hidden_key": KEY_A, "seed": 1}},
            {"id": "oracleB", "kind": "synthetic_oracle", "oracle": {"hidden_key": KEY_B, "seed": 2}},
        ]
    }
    (tmp_path / "backends.json").write_text(json.dumps(registry))
    save_dataset(make_dataset(), tmp_path / "data.jsonl")
    (tmp_path / "prompt.txt").write_text(ORIGINAL_TEXT)
    (tmp_path / "c.json").write_text(json.dumps({"epochs": 2, "seed": 5}))
    return tmp_path


def obfuscate(out, *extra):
    return main(["obfuscate", "--config", "c.json", "--backend", "oracleA", "--dataset", "data.jsonl",
                 "--prompt", "prompt.txt", "--out", out, *extra])


def test_obfuscate_creates_run_directory(workspace, capsys):
    assert obfuscate("runs/r1") == 0
    run = workspace / "runs" / "r1"
    assert (run / "trace.jsonl").exists() and (run / "final.prompt").exists()
    digest = capsys.readouterr().out.strip()
    assert json.loads((run / "final.meta").read_text())["artifact"]["digest"] == digest


def test_identical_command_lines_give_identical_directories(workspace):
    assert obfuscate("a") == 0 and obfuscate("b") == 0
    files = sorted(p.relative_to(workspace / "a") for p in (workspace / "a").rglob("*") if p.is_file())
    for rel in files:
        assert (workspace / "a" / rel).read_bytes() == (workspace / "b" / rel).read_bytes()


def test_seed_override_lands_in_snapshot(workspace):
    assert obfuscate("r", "--seed", "11") == 0
    assert json.loads((workspace / "r" / "config.snapshot").read_text())["seed"] == 11


def test_unknown_flag(workspace):
    with pytest.raises(SystemExit) as info:
        obfuscate("runs/bad", "--bogus")
    assert info.value.code == 2
    assert not (workspace / "runs").exists()


def test_domain_error_leaves_error_record(workspace, capsys):
    (workspace / "c.json").write_text(json.dumps({"epochs": -3}))
    assert obfuscate("r") == 1
    record = json.loads((workspace / "r" / "error.json").read_text())
    assert record["error"] == "InvalidConfig"
    assert "InvalidConfig" in capsys.readouterr().err


def test_unknown_backend(workspace):
    code = main(["evaluate", "--backend", "nope", "--dataset", "data.jsonl", "--prompt", "prompt.txt"])
    assert code == 1


def test_ratio_on_fixtures(capsys):
    code = main(["ratio", "--protected", str(FIXTURES / "portability_protected.csv"),
                 "--baseline", str(FIXTURES / "portability_unprotected.csv")])
    assert code == 0
    assert abs(float(capsys.readouterr().out) - 0.20) <= 0.02
    assert main(["ratio", "--kind", "preservation", "--table", str(FIXTURES / "preservation.csv")]) == 0
    assert abs(float(capsys.readouterr().out) - 1.01) <= 0.02


def test_ratio_usage_error(capsys):
    assert main(["ratio", "--protected", "x.csv"]) == 2


def test_export_trace(workspace, capsys):
    assert obfuscate("r") == 0
    text = export_trace(workspace / "r")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert text.splitlines()[0] == "step,epoch,noise_size,task,dist,nonlang,total,accepted"
    assert len(rows) == 40
    for row in rows:
        recombined = float(row["task"]) + 0.1 * float(row["dist"]) + 0.1 * float(row["nonlang"])
        assert abs(recombined - float(row["total"])) <= 1e-9
    assert main(["export-trace", "r", "--out", "curve.csv"]) == 0
    assert (workspace / "curve.csv").read_text() == text
    assert main(["export-trace", "r", "--out", "curve.csv"]) == 1


def test_export_empty_trace(workspace):
    (workspace / "c.json").write_text(json.dumps({"epochs": 0}))
    assert obfuscate("r") == 0
    assert export_trace(workspace / "r") == "step,epoch,noise_size,task,dist,nonlang,total,accepted\n"


def test_attack_commands(workspace, capsys):
    assert obfuscate("r") == 0
    (workspace / "d.json").write_text(json.dumps({"epochs": 1}))
    assert main(["deobfuscate", "--config", "d.json", "--backend", "oracleA", "--dataset", "data.jsonl",
                 "--input", "r", "--out", "d"]) == 0
    snap = json.loads((workspace / "d" / "config.snapshot").read_text())
    assert snap["gamma"] == -0.1 and snap["lambda"] is None and snap["epochs"] == 1
    assert main(["recover", "--backend", "oracleB", "--input", "r", "--out", "rec"]) == 0
    assert json.loads((workspace / "rec" / "attack.meta").read_text())["kind"] == "recovery"
    assert main(["induce", "--backend", "oracleB", "--dataset", "data.jsonl", "--task", "keywords",
                 "--pairs", "2", "--out", "ind"]) == 0
    assert (workspace / "ind" / "final.prompt").exists()
    assert main(["induce", "--backend", "oracleB", "--dataset", "data.jsonl", "--out", "ind2"]) == 2


def test_evaluate_and_matrix(workspace, capsys):
    (workspace / "keyA.txt").write_text(KEY_A)
    (workspace / "keyB.txt").write_text(KEY_B)
    assert main(["evaluate", "--backend", "oracleA", "--dataset", "data.jsonl", "--prompt", "keyA.txt"]) == 0
    assert float(capsys.readouterr().out) == 1.0
    assert main(["matrix", "--dataset", "data.jsonl", "--prompt", "oracleA=keyA.txt",
                 "--prompt", "oracleB=keyB.txt", "--out", "m.csv"]) == 0
    assert (workspace / "m.csv").read_text().splitlines() == [
        "target,oracleA,oracleB",
        "oracleA,1.0,0.0",
        "oracleB,0.0,1.0",
    ]
    # perfectly non-portable prompts: zero off-diagonal baseline is a domain error
    assert main(["ratio", "--protected", "m.csv", "--baseline", "m.csv"]) == 1


def test_audit_and_resume_commands(workspace, capsys):
    assert obfuscate("r") == 0
    capsys.readouterr()
    assert main(["audit", "r"]) == 0
    assert "0 violations" in capsys.readouterr().out
    assert main(["resume", "r"]) == 0
    digest = capsys.readouterr().out.strip()
    assert digest == json.loads((workspace / "r" / "final.meta").read_text())["artifact"]["digest"]


def test_audit_flags_tampering(workspace, capsys):
    assert obfuscate("r") == 0
    trace = workspace / "r" / "trace.jsonl"
    lines = trace.read_text().splitlines()
    row = json.loads(lines[3])
    row["noise_size"] += 1
    lines[3] = json.dumps(row, sort_keys=True, separators=(",", ":"))
    trace.write_text("\n".join(lines) + "\n")
    assert main(["audit", "r"]) == 1
