"""Command-line entry point: ``bighype {solve,gen,gen-dr,check}``.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 failed check.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

import numpy as np

from . import io as bio
from .errors import BigHypeError, ConfigInvalid, ContractionViolation, NotStronglyMonotone, ScheduleContractViolation
from .outer import PRESETS, RunOptions, RunTrace, default_schedules, run
from .svgplot import convergence_svg

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3

SOLVER_KEYS = ("variant", "preset", "alpha", "beta", "sigma_y", "sigma_s", "max_outer", "rel_tol", "seed")


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="bighype", description="Hypergradient descent for leader-follower games.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the solver on a game or demand-response document")
    s.add_argument("--config", required=True, help="game, demand-response or summary JSON")
    s.add_argument("--variant", choices=("general", "lqg", "lqsg"))
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--alpha", help="step schedule, const:c or power:c:p")
    s.add_argument("--beta", help="relaxation schedule")
    s.add_argument("--sigma-y", dest="sigma_y", help="equilibrium tolerance schedule (overrides the preset)")
    s.add_argument("--sigma-s", dest="sigma_s", help="sensitivity tolerance schedule (overrides the preset)")
    s.add_argument("--max-outer", dest="max_outer", type=_positive_int)
    s.add_argument("--rel-tol", dest="rel_tol", type=float)
    s.add_argument("--seed", type=int, help="seed for a random leader start (with --random-start)")
    s.add_argument("--random-start", action="store_true", help="draw the initial leader point from the seed")
    s.add_argument("--out", default="run", help="output directory")
    s.add_argument("--workers", type=_positive_int, help="inner-sweep threads (default: BIGHYPE_WORKERS or 1)")
    s.add_argument("--force", action="store_true", help="run even if schedules break the variant contract")
    s.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    s.add_argument("--no-plot", dest="plot", action="store_false")

    g = sub.add_parser("gen", help="write a random game")
    g.add_argument("kind", choices=("lqg", "lqsg", "aggregative"))
    g.add_argument("--n-agents", dest="n_agents", type=_positive_int, default=3)
    g.add_argument("--dim", type=_positive_int, default=2)
    g.add_argument("--m", type=_positive_int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-", help="output file, '-' for stdout")

    d = sub.add_parser("gen-dr", help="write a demand-response configuration")
    d.add_argument("--n", type=_positive_int, default=3, help="number of buildings")
    d.add_argument("--periods", type=_positive_int, default=8)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--lambda-b", dest="lambda_b", type=float)
    d.add_argument("--out", default="-")

    c = sub.add_parser("check", help="cross-check solver components against the oracles")
    c.add_argument("--config", required=True)
    c.add_argument("--points", type=_positive_int, default=3, help="smooth sample points")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--gamma", type=float, help="override the PPG step")
    c.add_argument("--workers", type=_positive_int)
    return p


# --------------------------------------------------------------------------
# solve


def _solver_settings(args, doc_solver):
    st = {k: doc_solver.get(k) for k in SOLVER_KEYS}
    for k in SOLVER_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            st[k] = v
    st["preset"] = st["preset"] or "medium"
    if st["preset"] not in PRESETS:
        raise ConfigInvalid({"solver.preset": f"unknown preset {st['preset']!r}"})
    st["max_outer"] = int(st["max_outer"] or 2000)
    st["rel_tol"] = float(1e-5 if st["rel_tol"] is None else st["rel_tol"])
    return st


def _write_outputs(out, trace, summary, plot):
    os.makedirs(out, exist_ok=True)
    bio.atomic_write_text(os.path.join(out, "trace.csv"), trace.to_csv())
    if summary is not None:
        bio.save_json(os.path.join(out, "summary.json"), summary)
    if plot and trace.records:
        svg = convergence_svg(list(trace.phi), list(trace.column("inner_iters").astype(int)))
        bio.atomic_write_text(os.path.join(out, "plot.svg"), svg)


def cmd_solve(args):
    try:
        spec, doc_solver, _ = bio.load_config(args.config)
        st = _solver_settings(args, doc_solver)
        if st["variant"] and st["variant"] != spec.variant:
            spec = spec.replace(variant=st["variant"])
        st["variant"] = spec.variant
        spec.report  # validate before running
        sch = default_schedules(spec, st["preset"], st["alpha"], st["beta"], st["sigma_y"], st["sigma_s"])
    except (ConfigInvalid, ValueError, OSError) as exc:
        _err(exc)
        return EXIT_CONFIG
    except BigHypeError as exc:
        _err(f"invalid instance: {exc}")
        return EXIT_CONFIG

    x0 = None
    if args.random_start:
        from .oracles import sample_leader_set

        x0 = sample_leader_set(spec.leader_set, np.random.default_rng(st["seed"] or 0))
    records = []
    opts = RunOptions(
        max_outer=st["max_outer"],
        rel_tol=st["rel_tol"],
        workers=args.workers,
        x0=x0,
        force=args.force,
        timing=args.timing,
        callback=records.append,
    )
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            trace = run(spec, sch, opts)
    except ScheduleContractViolation as exc:
        _err(f"{exc} (use --force to override)")
        return EXIT_CONFIG
    except (BigHypeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _err(f"solver failed: {exc}")
        partial = getattr(exc, "trace", None) or RunTrace(records=records)
        _write_outputs(args.out, partial, None, False)
        return EXIT_SOLVER

    st["alpha"], st["beta"] = str(sch.alpha), str(sch.beta)
    st["sigma_y"], st["sigma_s"] = str(sch.sigma_y), str(sch.sigma_s)
    summary = {
        "schema": bio.SCHEMA,
        "kind": "summary",
        **{k: v for k, v in trace.summary.items() if k != "y"},
        "instance": bio.spec_to_dict(spec),
        "solver": st,
    }
    _write_outputs(args.out, trace, summary, args.plot)
    s = trace.summary
    print(f"{s['termination']} after {s['outer_iterations']} outer iterations; phi_e = {s['phi_e']:.10g}")
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# gen


def _emit(path, doc):
    if path == "-":
        sys.stdout.write(bio.dumps(doc))
    else:
        bio.save_json(path, doc)
        print(f"wrote {path}", file=sys.stderr)


def cmd_gen(args):
    from . import generators

    try:
        if args.kind == "lqg":
            spec = generators.random_lqg(N=args.n_agents, n=args.dim, m=args.m, seed=args.seed)
        elif args.kind == "lqsg":
            spec = generators.random_lqsg(N=args.n_agents, n=args.dim, m=args.m, seed=args.seed)
        else:
            spec = generators.random_aggregative(N=args.n_agents, n=args.dim, m=args.m, seed=args.seed)
        spec.report
    except (BigHypeError, ValueError) as exc:
        _err(exc)
        return EXIT_CONFIG
    _emit(args.out, bio.spec_to_dict(spec))
    return EXIT_OK


def cmd_gen_dr(args):
    from .demand_response import DRConfig, build_instance

    cfg = DRConfig(N=args.n, Lambda=args.periods, seed=args.seed)
    if args.lambda_b is not None:
        cfg.lambda_b = args.lambda_b
    try:
        inst = build_instance(cfg)
    except (BigHypeError, ValueError) as exc:
        _err(exc)
        return EXIT_CONFIG
    chk = inst.self_check
    print(f"self-check: feasible={chk['feasible_point']} mu={chk['mu']:.4g} eta={chk['eta']:.6f}", file=sys.stderr)
    _emit(args.out, {"schema": bio.SCHEMA, "kind": "demand_response", "config": cfg.to_dict()})
    return EXIT_OK


# --------------------------------------------------------------------------
# check


def cmd_check(args):
    from .checks import run_checks

    try:
        spec, _, _ = bio.load_config(args.config)
        if args.gamma is not None:
            spec = spec.replace(gamma=args.gamma)
    except (ConfigInvalid, ValueError, OSError) as exc:
        _err(exc)
        return EXIT_CONFIG
    try:
        rows = run_checks(spec, points=args.points, seed=args.seed, workers=args.workers)
    except (ContractionViolation, NotStronglyMonotone) as exc:
        rows = [("contraction", False, str(exc))]
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_CHECK


COMMANDS = {"solve": cmd_solve, "gen": cmd_gen, "gen-dr": cmd_gen_dr, "check": cmd_check}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
