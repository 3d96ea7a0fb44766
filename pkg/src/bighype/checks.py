"""Cross-validation of solver components against the oracles.

Each check returns plain numbers; :func:`run_checks` turns them into a
``(name, ok, detail)`` table for the ``check`` subcommand.
"""

from __future__ import annotations

import numpy as np

from .equilibrium import Workspace
from .errors import BigHypeError, DegeneratePoint, MaxIterExceeded, SingularSystem
from .game import leader_cost
from .oracles import (
    _active_sets,
    fd_gradient,
    fd_jacobian,
    ne_residual,
    oracle_ne,
    oracle_sensitivity,
    sample_leader_set,
    smooth_points,
)
from .outer import InnerLoop, RunOptions, Schedules, hypergradient, run
from .sensitivity import SensitivityState, ppg_jacobian_blocks

TIGHT = 1e-10


def learned(spec, x, ws=None, sigma=TIGHT, y0=None):
    """``(y, s)`` from the solver's inner loop run to ``sigma`` from a cold start."""
    ws = ws or Workspace(spec)
    inner = InnerLoop(spec, ws)
    y0 = np.zeros(spec.n) if y0 is None else y0
    sens = SensitivityState.start(spec)
    if spec.variant == "lqsg":
        # single sweep per call; iterate to a fixed point
        y = y0
        for _ in range(100_000):
            res = inner.run(x, y, sens, sigma, sigma)
            done = np.linalg.norm(res.y - y) <= sigma and res.sens.delta <= sigma
            y, sens = res.y, res.sens
            if done:
                break
        return y, sens.s
    res = inner.run(np.asarray(x, float), y0, sens, sigma, sigma)
    return res.y, res.sens.s


def ne_error(spec, x, ws=None):
    y, _ = learned(spec, x, ws)
    y_star = oracle_ne(spec, x)
    return float(np.linalg.norm(y - y_star)), ne_residual(spec, x, y)


def sensitivity_errors(spec, x, y_star, ws=None, fd_step=1e-6, scaled=False):
    """``(|s - direct solve|, |s - finite differences|)``, max-abs entries.

    With ``scaled`` both are divided by ``max(1, max |J|)``; games with
    bilinear parameter terms have curved solution maps and large entries.
    """
    _, s = learned(spec, x, ws)
    J = oracle_sensitivity(spec, x, y_star)
    # differentiate off the leader set too: projecting back would mix coordinates
    Jfd = fd_jacobian(lambda xx: oracle_ne(spec, xx, y0=y_star), x, fd_step)
    scale = max(1.0, float(np.abs(J).max())) if scaled else 1.0
    return float(np.abs(s - J).max()) / scale, float(np.abs(s - Jfd).max()) / scale


GRAD_FLOOR = 1e-6


def hypergradient_error(spec, x, ws=None, fd_step=1e-5):
    """Relative error of the hypergradient against central differences of ``phi_e``.

    The denominator is floored at ``GRAD_FLOOR`` so that a vanishing gradient
    (every follower clamped, say) does not turn rounding noise into a failure.
    """
    y, s = learned(spec, x, ws)
    g = hypergradient(spec, x, y, s)
    y_star = oracle_ne(spec, x)

    def phi(xx):
        return leader_cost(spec, xx, oracle_ne(spec, xx, y0=y_star))

    gfd = fd_gradient(phi, x, fd_step)
    return float(np.linalg.norm(g - gfd) / max(np.linalg.norm(gfd), GRAD_FLOOR))


def bound_violations(spec, trace, slack=1e-9):
    """Count logged inner iterations whose error bounds fail against oracle values.

    Needs a trace recorded with ``log_inner`` and ``record_x``.  The
    sensitivity bound presumes the Jacobian blocks in use come from the
    partition of the equilibrium; entries where they do not are counted in
    ``sens_outside`` rather than tested, as are points where the oracle
    sensitivity is undefined (``sens_skipped``).
    """
    xs = [trace.summary_x0] + [r["x"] for r in trace.records]
    out = {
        "entries": 0,
        "eq_violations": 0,
        "sens_tested": 0,
        "sens_violations": 0,
        "sens_outside": 0,
        "sens_skipped": 0,
        "eq_margin": -np.inf,
        "sens_margin": -np.inf,
    }
    gamma = spec.constants.gamma
    y_star = None
    for x, log in zip(xs, trace.inner_logs):
        y_star = oracle_ne(spec, x, y0=y_star)
        try:
            J = oracle_sensitivity(spec, x, y_star)
            rows_star = tuple(strict for strict, _ in _active_sets(spec, x, y_star, gamma))
        except (DegeneratePoint, SingularSystem):
            J = None
        for e in log:
            out["entries"] += 1
            err_y = np.linalg.norm(e["y_prev"] - y_star)
            out["eq_margin"] = max(out["eq_margin"], err_y - e["eq_bound"])
            out["eq_violations"] += int(err_y > e["eq_bound"] + slack)
            if J is None:
                out["sens_skipped"] += 1
                continue
            if e.get("block_rows", rows_star) != rows_star:
                out["sens_outside"] += 1
                continue
            out["sens_tested"] += 1
            err_s = np.linalg.norm(e["s_prev"] - J)
            out["sens_margin"] = max(out["sens_margin"], err_s - e["sens_bound"])
            out["sens_violations"] += int(err_s > e["sens_bound"] + slack)
    return out


def logged_run(spec, max_outer=20, preset="large", schedules=None, **kw):
    """A short run with inner logs and leader iterates kept for :func:`bound_violations`."""
    sch = schedules or Schedules.make(alpha="power:0.05:0.51", preset=preset)
    opts = RunOptions(max_outer=max_outer, rel_tol=0.0, log_inner=True, record_x=True, **kw)
    tr = run(spec, sch, opts)
    from .sets import default_point

    tr.summary_x0 = default_point(spec.leader_set) if opts.x0 is None else spec.leader_set.project(opts.x0)
    return tr


def constant_jacobian_check(spec, rng, count=10, ws=None):
    """PPG Jacobian blocks of an LQSG game are identical at ``count`` random points."""
    ws = ws or Workspace(spec)
    ref = None
    for _ in range(count):
        x = sample_leader_set(spec.leader_set, rng)
        y = rng.normal(size=spec.n)
        S1, S2 = ppg_jacobian_blocks(spec, x, y, ws).dense()
        if ref is None:
            ref = (S1, S2)
        elif not (np.array_equal(S1, ref[0]) and np.array_equal(S2, ref[1])):
            return False
    return True


def run_checks(spec, points=3, seed=0, workers=None):
    """Oracle cross-validation table; raises if the instance does not contract."""
    c = spec.report.constants
    rows = [("contraction", c.contractive, f"mu={c.mu:.4g} L_F={c.L_F:.4g} gamma={c.gamma:.4g} eta={c.eta:.6f}")]
    rng = np.random.default_rng(seed)
    ws = Workspace(spec, workers=workers)
    try:
        pts = smooth_points(spec, points, rng)
    except MaxIterExceeded as exc:
        pts = exc.best or []
    rows.append(("smooth points", len(pts) > 0, f"{len(pts)} of {points}"))
    if pts:
        errs = [ne_error(spec, x, ws)[0] for x, _ in pts]
        rows.append(("equilibrium", max(errs) <= 1e-8, f"max |y - y*| = {max(errs):.2e}"))
        sd, sf = zip(*(sensitivity_errors(spec, x, y, ws, scaled=True) for x, y in pts))
        rows.append(("sensitivity vs direct solve", max(sd) <= 1e-6, f"max scaled err = {max(sd):.2e}"))
        rows.append(("sensitivity vs finite differences", max(sf) <= 1e-5, f"max scaled err = {max(sf):.2e}"))
        hg = [hypergradient_error(spec, x, ws) for x, _ in pts]
        rows.append(("hypergradient vs finite differences", max(hg) <= 1e-3, f"max rel err = {max(hg):.2e}"))
    if spec.variant == "lqsg":
        ok = constant_jacobian_check(spec, rng, 10, ws)
        rows.append(("constant Jacobian (10 points)", ok, "bitwise equal" if ok else "blocks differ"))
    else:
        try:
            tr = logged_run(spec, max_outer=5, workers=workers)
            b = bound_violations(spec, tr)
            ok = b["eq_violations"] == 0 and b["sens_violations"] == 0
            rows.append(
                (
                    "error bounds",
                    ok,
                    f"{b['entries']} iterations, {b['eq_violations']} + {b['sens_violations']} violations",
                )
            )
        except BigHypeError as exc:
            rows.append(("error bounds", False, str(exc)))
    ws.close()
    return rows
