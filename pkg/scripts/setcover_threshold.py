"""Compare set cover thresholds: the default factor 1000 against the factor 1 variant.

With factor 1000 almost no round accepts a set on desk-sized inputs and the
output falls back to index order; factor 1 lets the scaling rounds act.

Usage: python scripts/setcover_threshold.py [--n 10000] [--m 30] [--seeds 20]
"""

import argparse

import numpy as np

from privsub.core import RandomSource
from privsub.instances import planted_setcover
from privsub.setcover import GreedyScalingConfig, GreedyScalingTrace, cost_set_cov, dp_greedy_scaling


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--n", type=int, default=10_000)
    parser.add_argument("--m", type=int, default=30)
    parser.add_argument("--q", type=int, default=3)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--epsilon", type=float, default=1.0)
    args = parser.parse_args()
    inst = planted_setcover({"q": args.q, "n": args.n, "m": args.m}, 0)
    for factor in (1000.0, 1.0):
        costs, accepted = [], []
        for seed in range(args.seeds):
            trace = GreedyScalingTrace()
            cfg = GreedyScalingConfig(threshold_factor=factor)
            pi = dp_greedy_scaling(inst.system, inst.dataset, args.epsilon, RandomSource(seed), cfg, trace)
            costs.append(cost_set_cov(pi, inst.system, inst.dataset))
            accepted.append(sum(len(a) for a in trace.accepted))
        print(
            f"factor {factor:>6g}: cost mean {np.mean(costs):.2f} (OPT {args.q}), "
            f"sets accepted by rounds {np.mean(accepted):.2f}, rounds {trace.rounds}"
        )


if __name__ == "__main__":
    main()
