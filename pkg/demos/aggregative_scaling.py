"""Per-agent cost of the sensitivity update in aggregative games.

When followers interact only through a weighted sum of their decisions, an
agent's sensitivity update needs its own block plus one broadcast aggregate.
This script counts the multiply-adds per agent as the population grows; the
count stays flat in N while the leader's reduce grows linearly.  It also times
both update paths.  At these sizes Python overhead per agent dominates the
wall clock, so the serial aggregative path is not faster here; the flop count
is what carries over to a distributed setting.  Timings are hardware dependent.
"""

import argparse
import csv
import sys
import time

import numpy as np

from bighype.generators import random_aggregative
from bighype.oracles import oracle_ne, sample_leader_set
from bighype.sensitivity import FlopCounter, SensitivityState, aggregative_sensitivity_step, ppg_jacobian_blocks, sensitivity_step


def best_of(fn, reps=5):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["N", "flops_per_agent", "leader_flops", "aggregative_ms", "dense_ms"])
    for N in args.sizes:
        spec = random_aggregative(N=N, seed=args.seed)
        rng = np.random.default_rng(N)
        x = sample_leader_set(spec.leader_set, rng)
        y = oracle_ne(spec, x)
        s0 = SensitivityState.start(spec, rng.normal(size=(spec.n, spec.m)))
        c = FlopCounter()
        aggregative_sensitivity_step(s0, spec, x, y, counter=c)
        blocks_sparse = ppg_jacobian_blocks(spec, x, y, dense=False)
        blocks = ppg_jacobian_blocks(spec, x, y)
        t_agg = best_of(lambda: aggregative_sensitivity_step(s0, spec, x, y, blocks=blocks_sparse))
        t_dense = best_of(lambda: sensitivity_step(s0, blocks))
        w.writerow([N, max(c.per_agent.values()), c.leader, f"{1e3 * t_agg:.3f}", f"{1e3 * t_dense:.3f}"])


if __name__ == "__main__":
    main()
