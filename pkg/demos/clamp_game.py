"""Two followers that copy the leader's target inside a box.

Each follower i minimizes (y_i - x_i)^2 over [0, 0.6], so its best response
is clip(x_i, 0, 0.6).  The leader wants the followers' total as large as
possible (cost -(y_1 + y_2)) and picks x in the unit disc.  Any x with both
coordinates at least 0.6 is optimal with cost -1.2; the hypergradient vanishes
once a coordinate passes the box edge, which is the kink the sensitivity
learner has to get right.
"""

import argparse

import numpy as np

from bighype.oracles import example1, example1_solution
from bighype.outer import RunOptions, Schedules, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="large", choices=("small", "medium", "large"))
    ap.add_argument("--alpha", default="power:0.5:0.51")
    ap.add_argument("--start", type=float, nargs=2, default=(0.0, 0.0))
    args = ap.parse_args()

    spec = example1()
    c = spec.constants
    print(f"mu = {c.mu:g}, L_F = {c.L_F:g}, gamma = {c.gamma:g}, eta = {c.eta:.4f}")

    opts = RunOptions(max_outer=2000, x0=np.array(args.start), record_x=True)
    tr = run(spec, Schedules.make(alpha=args.alpha, preset=args.preset), opts)
    for r in tr.records:
        x = r["x"]
        print(f"k={r['k']:3d}  x=({x[0]:.4f}, {x[1]:.4f})  phi_e={r['phi_e']:+.6f}  inner={r['inner_iters']}")

    x = np.array(tr.summary["x"])
    print(f"\n{tr.summary['termination']}: phi_e = {tr.summary['phi_e']:.6f}, clamp(x) = {example1_solution(x)}")


if __name__ == "__main__":
    main()
