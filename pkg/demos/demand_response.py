"""Day-ahead pricing for a handful of buildings with batteries.

The operator sets per-period prices c0 + c1 * (total load) and each
building's share of the grid capacity; buildings buy power, charge and
discharge batteries to meet their demand at least cost.  The script runs all
three inner-tolerance presets, prints the final revenue of each, and writes
trace CSVs and one SVG comparing relative suboptimality against outer
iterations and against total follower sweeps.
"""

import argparse
import os

import numpy as np

from bighype.demand_response import DRConfig, build, capacity_decomposition_check
from bighype.io import atomic_write_text
from bighype.outer import RunOptions, default_schedules, run
from bighype.svgplot import figure, relative_suboptimality


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--periods", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="dr_runs")
    args = ap.parse_args()

    spec = build(DRConfig(N=args.n, Lambda=args.periods, seed=args.seed))
    c = spec.constants
    print(f"mu={c.mu:.3g}  L_F={c.L_F:.3g}  eta={c.eta:.5f}  alpha={spec.meta['default_alpha']}")

    os.makedirs(args.out, exist_ok=True)
    traces = {}
    for preset in ("small", "medium", "large"):
        tr = run(spec, default_schedules(spec, preset), RunOptions(max_outer=5000, timing=True))
        traces[preset] = tr
        atomic_write_text(os.path.join(args.out, f"trace_{preset}.csv"), tr.to_csv())
        s = tr.summary
        print(f"{preset:>6}: revenue {-s['phi_e']:.4f} after {s['outer_iterations']} steps, "
              f"{s['inner_iterations_total']} sweeps ({s['termination']})")

    x = np.array(traces["large"].summary["x"])
    y = np.array(traces["large"].summary["y"])
    rep = capacity_decomposition_check(spec, x, y)
    print(f"grid slack in the tightest period: {rep['worst_slack']:.3f} kW (period {rep['worst_period']})")

    best = min(tr.summary["phi_e"] for tr in traces.values())
    series_k, series_in = [], []
    for name, tr in traces.items():
        rel = relative_suboptimality(list(tr.phi), best)
        series_k.append((name, list(range(len(rel))), rel))
        series_in.append((name, list(np.cumsum(tr.column("inner_iters"))), rel))
    svg = figure([
        dict(series=series_k, title="Relative suboptimality", xlabel="outer iteration", ylabel="relative suboptimality"),
        dict(series=series_in, title="Relative suboptimality", xlabel="total inner iterations", ylabel="relative suboptimality"),
    ])
    atomic_write_text(os.path.join(args.out, "presets.svg"), svg)
    print(f"wrote {args.out}/")


if __name__ == "__main__":
    main()
