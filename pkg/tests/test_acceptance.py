"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""

import time

import numpy as np
import pytest

from bighype.checks import bound_violations, hypergradient_error, learned, logged_run, sensitivity_errors
from bighype.demand_response import DRConfig, build
from bighype.equilibrium import InnerState, Workspace, ppg_sweep
from bighype.generators import random_aggregative, random_lqg, random_lqsg
from bighype.oracles import example1, example1_solution, lqsg_optimum, oracle_ne, sample_leader_set, smooth_points
from bighype.outer import RunOptions, Schedule, Schedules, backoff_beta, default_schedules, lqsg_alpha, run
from bighype.sensitivity import FlopCounter, SensitivityState, aggregative_sensitivity_step

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    print(ACCEPTANCE_LINES[-1])


def fitted_rate(errors):
    """Geometric rate from a least-squares line through ``log(errors)``."""
    e = np.asarray(errors, float)
    keep = e > 1e-300
    k = np.arange(e.size)[keep]
    return float(np.exp(np.polyfit(k, np.log(e[keep]), 1)[0]))


def sized_lqg(seed):
    rng = np.random.default_rng(1000 + seed)
    return random_lqg(N=int(rng.integers(2, 6)), n=int(rng.integers(1, 5)), m=int(rng.integers(1, 7)), seed=seed)


SENS_INSTANCES = (0, 1, 2)


def test_contraction_rate():
    t0 = time.perf_counter()
    worst = -np.inf
    for seed in range(20):
        spec = sized_lqg(seed)
        rng = np.random.default_rng(seed)
        x = sample_leader_set(spec.leader_set, rng)
        y_star = oracle_ne(spec, x)
        ws = Workspace(spec)
        st = InnerState.start(10 * rng.normal(size=spec.n))
        errs = [np.linalg.norm(st.y_tilde - y_star)]
        for _ in range(50):
            st = ppg_sweep(spec, x, st, ws)
            errs.append(np.linalg.norm(st.y_tilde - y_star))
        worst = max(worst, fitted_rate(errs) - spec.constants.eta)
    dt = time.perf_counter() - t0
    ok = worst <= 0.02 and dt < 5
    record(1, "contraction rate", ok, f"max(rate - eta) = {worst:.4f} over 20 instances, {dt:.1f} s")
    assert ok


def test_sensitivity_correctness():
    t0 = time.perf_counter()
    direct, fd = 0.0, 0.0
    for seed in SENS_INSTANCES:
        spec = random_lqg(seed=seed)
        ws = Workspace(spec)
        for x, y in smooth_points(spec, 10, np.random.default_rng(seed)):
            a, b = sensitivity_errors(spec, x, y, ws)
            direct, fd = max(direct, a), max(fd, b)
    dt = time.perf_counter() - t0
    ok = direct <= 1e-6 and fd <= 1e-5 and dt < 30
    record(2, "sensitivity", ok, f"direct {direct:.2e}, finite differences {fd:.2e}, {dt:.1f} s")
    assert ok


def test_hypergradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in SENS_INSTANCES:
        spec = random_lqg(seed=seed)
        ws = Workspace(spec)
        for x, _ in smooth_points(spec, 10, np.random.default_rng(100 + seed)):
            worst = max(worst, hypergradient_error(spec, x, ws))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-3 and dt < 60
    record(3, "hypergradient", ok, f"max relative error {worst:.2e}, {dt:.1f} s")
    assert ok


def test_bound_domination():
    t0 = time.perf_counter()
    tot = {"entries": 0, "eq_violations": 0, "sens_tested": 0, "sens_violations": 0, "sens_outside": 0, "sens_skipped": 0}
    for seed in range(10):
        b = bound_violations(random_lqg(seed=seed), logged_run(random_lqg(seed=seed), max_outer=20, preset="small"))
        for k in tot:
            tot[k] += b[k]
    dt = time.perf_counter() - t0
    ok = tot["eq_violations"] == 0 and tot["sens_violations"] == 0 and tot["sens_tested"] > 0
    record(
        4,
        "error bounds",
        ok,
        f"{tot['entries']} inner iterations, violations eq {tot['eq_violations']} / sens {tot['sens_violations']} "
        f"(sens tested {tot['sens_tested']}, other partition {tot['sens_outside']}, kinks {tot['sens_skipped']}), {dt:.1f} s",
    )
    assert ok


def test_example1_end_to_end():
    t0 = time.perf_counter()
    spec = example1(r=1.0, lo=(0.0, 0.0), hi=(0.6, 0.6))
    tr = run(spec, Schedules.make(alpha="power:0.5:0.51", preset="large"), RunOptions(max_outer=2000))
    dt = time.perf_counter() - t0
    x = np.array(tr.summary["x"])
    phi_err = abs(tr.summary["phi_e"] + 1.2)
    x_err = float(np.abs(example1_solution(x) - 0.6).max())
    ok = phi_err <= 1e-3 and x_err <= 1e-3 and tr.summary["outer_iterations"] <= 2000 and dt < 10
    record(
        5,
        "clamp game",
        ok,
        f"|phi_e + 1.2| = {phi_err:.1e}, |clamp(x) - (0.6, 0.6)| = {x_err:.1e}, "
        f"{tr.summary['outer_iterations']} iterations, {dt:.2f} s",
    )
    assert ok


def test_lqsg_linear_rate():
    t0 = time.perf_counter()
    spec = random_lqsg(seed=0)
    alpha = lqsg_alpha(spec)
    beta, _ = backoff_beta(spec, alpha)
    sch = Schedules.make(alpha=Schedule("const", alpha), beta=Schedule("const", beta))
    tr = run(spec, sch, RunOptions(max_outer=5000, rel_tol=0.0, record_x=True))
    dt = time.perf_counter() - t0
    err = np.linalg.norm(tr.xs - lqsg_optimum(spec), axis=1)
    hit = np.nonzero(err <= 1e-6)[0]
    reached = int(hit[0]) + 1 if hit.size else None
    # fit over the stretch above round-off
    rate = fitted_rate(err[err > 1e-12])
    single = bool(np.all(tr.column("inner_iters") == 1))
    ok = rate < 1 and reached is not None and single and dt < 10
    record(
        6,
        "LQSG linear rate",
        ok,
        f"alpha {alpha:.3g}, beta {beta:g}, rate {rate:.4f}, error <= 1e-6 at k = {reached}, "
        f"final {err[-1]:.1e}, one inner iteration: {single}, {dt:.1f} s",
    )
    assert ok


def test_demand_response_desk_run():
    t0 = time.perf_counter()
    spec = build(DRConfig(N=3, Lambda=8))
    finals, notes = {}, []
    ok = True
    for name in ("small", "medium", "large"):
        tr = run(spec, default_schedules(spec, name), RunOptions(max_outer=5000, rel_tol=1e-5))
        s = tr.summary
        finals[name] = s["phi_e"]
        ok &= s["termination"] == "rel_tol"
        notes.append(f"{name}: {s['phi_e']:.4f} after {s['outer_iterations']} ({s['termination']})")
    vals = np.array(list(finals.values()))
    spread = float((vals.max() - vals.min()) / np.abs(vals).mean())
    dt = time.perf_counter() - t0
    ok = ok and spread <= 0.01 and dt < 300
    record(7, "demand response", ok, f"{'; '.join(notes)}; spread {100 * spread:.3f}%, {dt:.0f} s")
    assert ok


def test_aggregative_flops_independent_of_n():
    t0 = time.perf_counter()
    per_agent = {}
    for N in (4, 8, 16):
        spec = random_aggregative(N=N, n=2, m=3, nbar=2, seed=7)
        rng = np.random.default_rng(N)
        x = sample_leader_set(spec.leader_set, rng)
        y = oracle_ne(spec, x)
        c = FlopCounter()
        aggregative_sensitivity_step(SensitivityState.start(spec, rng.normal(size=(spec.n, spec.m))), spec, x, y, counter=c)
        counts = np.array(list(c.per_agent.values()), float)
        assert len(counts) == N
        per_agent[N] = (counts.min(), counts.max())
    lo = min(v[0] for v in per_agent.values())
    hi = max(v[1] for v in per_agent.values())
    dt = time.perf_counter() - t0
    ok = (hi - lo) <= 0.01 * lo and dt < 60
    record(8, "aggregative flops", ok, f"per-agent flops {', '.join(f'N={N}: {v[1]:.0f}' for N, v in per_agent.items())}, {dt:.1f} s")
    assert ok
