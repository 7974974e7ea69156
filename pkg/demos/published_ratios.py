"""
Summary ratios from published grids
===================================

The package ships the cross-model grids and before/after scores of the
reference evaluation as CSV fixtures. Recomputing the summary ratios from
them is a quick check that the aggregation code matches the reported values.
"""

import importlib.resources as resources

from promptlock.cli import load_preservation_table
from promptlock.evaluation import load_matrices, portability_ratio, preservation_ratio

fixtures = resources.files("promptlock.fixtures")
baseline = load_matrices(fixtures / "portability_unprotected.csv")

# One 3x3 block per task; the diagonal was never measured and is skipped.
first = next(iter(baseline.values()))
print("columns:", ", ".join(first.cols))
print("blocks: ", ", ".join(baseline))

for variant in ("protected", "tune_only", "code_only"):
    blocks = load_matrices(fixtures / f"portability_{variant}.csv")
    print(f"{variant:>10}: portability ratio {portability_ratio(blocks, baseline):.3f}")

before, after = load_preservation_table(fixtures / "preservation.csv")
print(f"\non-target performance kept after protection: {preservation_ratio(after, before):.3f}")
