"""Sweep the privacy budget for one experiment config.

Runs the config at each epsilon, writes the merged rows to a CSV and prints
the mean utility and gap per epsilon.

Usage: python scripts/sweep_epsilon.py configs/submod_cardinality.json --eps 0.1 0.25 0.5 1 --out sweep.csv
"""

import argparse

import numpy as np

from privsub.harness import ExperimentConfig, rows_to_csv, run_experiment


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("config")
    parser.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.25, 0.5, 1.0])
    parser.add_argument("--out", default="sweep.csv")
    args = parser.parse_args()
    rows = []
    for eps in args.eps:
        batch = run_experiment(ExperimentConfig.from_file(args.config, epsilon=eps))
        rows.extend(batch)
        util = np.array([r.utility for r in batch])
        gaps = [r.gap for r in batch if r.gap is not None]
        gap = f"{np.mean(gaps):.3f}" if gaps else "n/a"
        print(f"eps={eps:<6g} utility mean {util.mean():.3f} (min {util.min():.3f}, max {util.max():.3f})  gap mean {gap}")
    with open(args.out, "w") as fh:
        fh.write(rows_to_csv(rows))


if __name__ == "__main__":
    main()
