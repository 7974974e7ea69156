"""
Attacking a protected prompt
============================

Three ways a thief might try to get use out of a stolen, obfuscated prompt:
re-optimize it toward readable text, ask a model to reconstruct the
original, or skip it entirely and write a new prompt from input/output pairs.
"""

import tempfile
from pathlib import Path

from promptlock import OracleSpec, PromptArtifact, SyntheticOracle, TaskExample
from promptlock.attacks import deobfuscate, induce_naive, io_pairs_from_dataset, recover
from promptlock.evaluation import evaluate_prompt
from promptlock.optimizer import run_obfuscation

dataset = [
    TaskExample(f"Passage {i}: notes on topic {i}.", ("[", '"', f"kw{i}"), f'["kw{i}", "topic{i}"]')
    for i in range(4)
]
owner = SyntheticOracle(OracleSpec("Qv7#kZ2@mX9!pL4$", seed=1), "owner").with_answers(dataset)
thief = SyntheticOracle(OracleSpec("r8&Tw3^Yn6*Hd1%j", seed=2), "thief").with_answers(dataset)

work = Path(tempfile.mkdtemp(prefix="promptlock-attacks-"))
original = PromptArtifact("Return the keywords of the passage as a JSON list.")
protected = run_obfuscation({"epochs": 10, "seed": 3}, original, dataset, owner, work / "protect").artifact
print("protected prompt on owner:", evaluate_prompt(protected, dataset, owner).mean)
print("protected prompt on thief:", evaluate_prompt(protected, dataset, thief).mean)

# 1. Re-optimize on the thief's own model with the entropy weight negated and
#    no distance term; the search now prefers lower-entropy, readable text.
attack = deobfuscate({"epochs": 5, "seed": 3}, protected, dataset, thief, work / "deobf")
print("\ndeobfuscated:", evaluate_prompt(attack.output, dataset, thief).mean, attack.budget_used)

# 2. Ask the thief's model what the original prompt was.
recovered = recover(protected, thief, run_dir=work / "recover")
print("recovered:   ", evaluate_prompt(recovered.output, dataset, thief).mean, recovered.budget_used)

# 3. Ignore the prompt and induce a fresh one from observed behaviour.
induced = induce_naive("keyword extraction", io_pairs_from_dataset(dataset), thief, run_dir=work / "induce")
print("induced:     ", evaluate_prompt(induced.output, dataset, thief).mean, induced.budget_used)

# Caveat: a synthetic oracle answers every rewriting request with its own key
# material, so recovery and induction look perfect here by construction. The
# numbers only mean something when the thief is a real model.
