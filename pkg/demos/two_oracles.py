"""
Locking a prompt to one model
=============================

Two synthetic oracles stand in for two different models. Each one only
rewards prompts that contain fragments of its own hidden key, so a prompt
optimized against oracle A should work on A and fail on B.
"""

import tempfile
from pathlib import Path

from promptlock import OracleSpec, PromptArtifact, SyntheticOracle, TaskExample
from promptlock.cli import export_trace
from promptlock.evaluation import evaluate_prompt, portability_matrix
from promptlock.optimizer import run_obfuscation

# a tiny keyword-extraction task with known answers
dataset = [
    TaskExample(
        query=f"Passage {i}: the committee met to discuss topic {i}.",
        label_tokens=("[", '"', f"kw{i}"),
        reference_text=f'["kw{i}", "topic{i}"]',
    )
    for i in range(4)
]

oracle_a = SyntheticOracle(OracleSpec("Qv7#kZ2@mX9!pL4$", seed=1), "oracleA").with_answers(dataset)
oracle_b = SyntheticOracle(OracleSpec("r8&Tw3^Yn6*Hd1%j", seed=2), "oracleB").with_answers(dataset)

original = PromptArtifact(
    "You are a keyword extractor. Read the passage and return the five most "
    "relevant keywords as a JSON list."
)

# The plain prompt shares nothing with either key, so neither oracle answers.
print("original on A:", evaluate_prompt(original, dataset, oracle_a).mean)
print("original on B:", evaluate_prompt(original, dataset, oracle_b).mean)

work = Path(tempfile.mkdtemp(prefix="promptlock-demo-"))

# 30 epochs of 20 proposals each, one example per batch
result = run_obfuscation({"epochs": 30, "seed": 7}, original, dataset, oracle_a, work / "run_a")
print("\ninitialized prompt (A's own rewrite):")
print(repr(result.initialized.text))
print("\nobfuscated prompt:")
print(repr(result.artifact.text))

# Evaluate the protected prompt everywhere. Rows are the model the prompt was
# built for, columns the model it runs on.
grid = portability_matrix({"oracleA": result.artifact}, [oracle_a, oracle_b], dataset)
print("\n" + grid.to_csv())

# The loss curve lands in the run directory; export it for plotting.
curve = export_trace(result.run_dir).splitlines()
print(f"{len(curve) - 1} steps, first and last rows:")
print(curve[0])
print(curve[1])
print(curve[-1])
print("\nrun directory:", result.run_dir)
