"""Run the four-way ablation on the reference data and print the table.

Usage: python scripts/ablation.py [workdir]
"""
import sys
from pathlib import Path

from wildpose.ablation import format_table, run_ablation
from wildpose.config import RunConfig
from wildpose.reference import SEED, reference_data


def main(workdir: Path) -> None:
    workdir.mkdir(parents=True, exist_ok=True)
    train, heldout = reference_data(workdir)
    rows = run_ablation(RunConfig(seed=SEED), train, train, heldout,
                        on_row=lambda r: print(f"done: {r.variant.label}", flush=True))
    print()
    print(format_table(rows))


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "runs/ablation"))
