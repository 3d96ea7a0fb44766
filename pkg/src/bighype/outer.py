"""Leader loop: inexact projected hypergradient descent with relaxation.

Each outer iteration takes

    x+ = x + beta_k (proj_X[x - alpha_k g] - x),    g = grad_1 phi + s' grad_2 phi,

then re-solves the followers' game and the sensitivity at ``x+`` with the
inner loop of the game's variant:

* ``general``: warmstart to ``sigma_y``, then joint sweeps until the
  a-priori surrogate drops below ``sigma_s``;
* ``lqg``: joint sweeps with conditional Jacobian refresh until the
  equilibrium step is below ``sigma_y`` and the sensitivity step below
  ``sigma_s``;
* ``lqsg``: exactly one joint sweep with constant Jacobian blocks.
"""

from __future__ import annotations

import csv
import io
import math
import re
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .equilibrium import InnerState, Workspace, aposteriori_eq_bound, ppg_projections, ppg_sweep, warmstart
from .errors import ConvergenceWarning, DimensionMismatch, NonFiniteValue, ScheduleContractViolation
from .game import leader_cost, leader_cost_grads
from .sensitivity import (
    SensitivityState,
    aggregate_sensitivity,
    aggregative_sensitivity_step,
    apriori_sens_bound,
    aposteriori_sens_bound,
    lqg_conditional_blocks,
    lqsg_jacobian,
    ppg_jacobian_blocks,
    sensitivity_step,
)
from .sets import default_point

TRACE_COLUMNS = ("k", "phi_e", "grad_norm", "inner_iters", "eq_bound", "sens_bound", "x_step_norm", "wall_ms")

PRESETS = {"small": (0.002, 25.0), "medium": (0.02, 50.0), "large": (0.1, 500.0)}
DEFAULT_POWER = 0.51
DEFAULT_ALPHA = f"power:3e-06:{DEFAULT_POWER}"


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Schedule:
    """``c`` (constant) or ``c (k+1)^-p`` (power)."""

    kind: str
    c: float
    p: float = 0.0

    @classmethod
    def parse(cls, text):
        if isinstance(text, Schedule):
            return text
        if isinstance(text, (int, float)):
            return cls("const", float(text))
        m = re.fullmatch(r"\s*(const|power):([^:]+)(?::([^:]+))?\s*", str(text))
        if not m:
            raise ValueError(f"bad schedule {text!r}; use const:c or power:c:p")
        kind, c, p = m.group(1), float(m.group(2)), m.group(3)
        if kind == "const":
            if p is not None:
                raise ValueError(f"const schedule takes one value: {text!r}")
            return cls("const", c)
        if p is None:
            raise ValueError(f"power schedule needs c and p: {text!r}")
        return cls("power", c, float(p))

    def __call__(self, k):
        if self.kind == "const":
            return self.c
        return self.c * (k + 1.0) ** (-self.p)

    @property
    def exponent(self):
        return self.p if self.kind == "power" else 0.0

    def scaled(self, factor):
        return Schedule(self.kind, self.c * factor, self.p)

    def __str__(self):
        if self.kind == "const":
            return f"const:{self.c:g}"
        return f"power:{self.c:g}:{self.p:g}"


@dataclass(frozen=True)
class Schedules:
    alpha: Schedule
    beta: Schedule
    sigma_y: Schedule
    sigma_s: Schedule

    @classmethod
    def make(cls, alpha=DEFAULT_ALPHA, beta="const:1", sigma_y=None, sigma_s=None, preset="medium"):
        ay, as_ = PRESETS[preset]
        if sigma_y is None:
            sigma_y = Schedule("power", ay, DEFAULT_POWER)
        if sigma_s is None:
            sigma_s = Schedule("power", as_, DEFAULT_POWER)
        return cls(*(Schedule.parse(v) for v in (alpha, beta, sigma_y, sigma_s)))

    def echo(self):
        return {k: str(getattr(self, k)) for k in ("alpha", "beta", "sigma_y", "sigma_s")}


def preset(name):
    """``(a_y, a_s)`` of a named tolerance preset."""
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


def check_schedules(variant, sch):
    """Raise :class:`ScheduleContractViolation` if ``sch`` breaks the variant's contract.

    The LQSG contract accepts either a constant step with a power-law
    relaxation (convex leader) or both constant (strongly convex leader).
    """
    problems = []
    for name in ("alpha", "beta", "sigma_y", "sigma_s"):
        s = getattr(sch, name)
        if not (s.c > 0 and math.isfinite(s.c)):
            problems.append(f"{name}: coefficient must be positive")
    if variant in ("general", "lqg"):
        a = sch.alpha
        if a.kind != "power" or not (0.5 < a.p <= 1.0):
            problems.append("alpha must be power-law with exponent in (0.5, 1]")
        if not (sch.beta.kind == "const" and sch.beta.c == 1.0):
            problems.append("beta must be const:1")
        for name in ("sigma_y", "sigma_s"):
            if a.exponent + getattr(sch, name).exponent <= 1.0:
                problems.append(f"alpha and {name} exponents must sum to more than 1")
    elif variant == "lqsg":
        if sch.alpha.kind != "const":
            problems.append("alpha must be constant")
        b = sch.beta
        if b.kind == "power":
            if not (0.5 < b.p <= 1.0):
                problems.append("beta exponent must lie in (0.5, 1]")
        if not (0 < b.c <= 1.0):
            problems.append("beta values must lie in (0, 1]")
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if problems:
        raise ScheduleContractViolation(f"{variant} schedule contract: " + "; ".join(problems))


# --------------------------------------------------------------------------
# steps


def hypergradient(spec, x, y, s):
    """``grad_1 phi + s' grad_2 phi``; aggregative leaders use ``(sum K_i s_i)' grad_sigma phi``."""
    s = np.asarray(s, dtype=float)
    if s.shape != (spec.n, spec.m):
        raise DimensionMismatch(f"sensitivity must be {(spec.n, spec.m)}, got {s.shape}")
    if spec.leader_cost.aggregate:
        x = np.asarray(x, float)
        gx, gv = spec.leader_cost.grads(x, spec.aggregate(np.asarray(y, float)))
        return gx + aggregate_sensitivity(spec, s).T @ gv
    gx, gy = leader_cost_grads(spec, x, y)
    return gx + s.T @ gy


def outer_step(x, grad, alpha_k, beta_k, leader_set):
    x = np.asarray(x, dtype=float)
    target = leader_set.project(x - alpha_k * np.asarray(grad, dtype=float))
    return x + beta_k * (target - x)


# --------------------------------------------------------------------------
# inner loop


@dataclass
class InnerResult:
    y: np.ndarray
    sens: SensitivityState
    iterations: int
    eq_bound: float
    sens_bound: float
    warm_iterations: int = 0
    converged: bool = True
    degenerate: bool = False
    log: list | None = None


@dataclass
class RunOptions:
    max_outer: int = 2000
    rel_tol: float = 1e-5
    inner_max: int = 100_000
    workers: int | None = None
    x0: np.ndarray | None = None
    y0: np.ndarray | None = None
    s0: np.ndarray | None = None
    gamma: float | None = None
    aggregative: bool = False
    record_x: bool = False
    timing: bool = False
    log_inner: bool = False
    log_active_sets: bool = False
    force: bool = False
    callback: object = None


def _block_rows(blocks):
    """Strictly active rows behind each agent's Jacobian block."""
    return tuple(tuple(j.rows) for j in blocks.jac)


def _finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


class InnerLoop:
    """Variant dispatch of the inner loop; holds per-run caches."""

    def __init__(self, spec, ws, aggregative=False):
        self.spec = spec
        self.ws = ws
        self.eta = ws.eta
        self.aggregative = aggregative
        if aggregative and spec.aggregation is None:
            raise DimensionMismatch("aggregative updates need aggregation matrices")
        self.lqsg = lqsg_jacobian(spec, ws) if spec.variant == "lqsg" else None
        self.last_results = None

    def _sens_update(self, sens, x, y, blocks):
        if self.aggregative:
            return aggregative_sensitivity_step(sens, self.spec, x, y, self.ws, blocks=blocks)
        return sensitivity_step(sens, blocks)

    def run(self, x, y, sens, sigma_y, sigma_s, max_iter=100_000, log=False):
        variant = self.spec.variant
        if variant == "lqsg":
            return self._lqsg(x, y, sens, log)
        if variant == "lqg":
            return self._lqg(x, y, sens, sigma_y, sigma_s, max_iter, log)
        return self._general(x, y, sens, sigma_y, sigma_s, max_iter, log)

    def _entry(self, st, sens, extra=None):
        row = {
            "ell": st.ell,
            "y_prev": st.y_prev,
            "y": st.y_tilde,
            "step": st.step_norm,
            "s_prev": sens.s_prev,
            "s": sens.s,
            "eq_bound": aposteriori_eq_bound(st, self.eta),
            "sens_bound": aposteriori_sens_bound(sens, self.eta),
        }
        if extra:
            row.update(extra)
        return row

    def _lqsg(self, x, y, sens, log):
        c = self.lqsg
        st = ppg_sweep(self.spec, x, InnerState.start(y), self.ws)
        sens = self._sens_update(sens, x, st.y_tilde, c.blocks)
        self.last_results = st.results
        entries = [self._entry(st, sens)] if log else None
        return InnerResult(
            st.y_tilde, sens, 1, aposteriori_eq_bound(st, self.eta), aposteriori_sens_bound(sens, self.eta), log=entries
        )

    def _lqg(self, x, y, sens, sigma_y, sigma_s, max_iter, log):
        spec, ws = self.spec, self.ws
        sens.reset_cache()
        st = InnerState.start(y)
        pending = ppg_projections(spec, x, st.y_tilde, ws)
        entries = [] if log else None
        converged = False
        for _ in range(max_iter):
            st = ppg_sweep(spec, x, st, ws, results=pending)
            pending = ppg_projections(spec, x, st.y_tilde, ws)
            blocks = lqg_conditional_blocks(
                sens, spec, x, st.y_tilde, st.step_norm, sigma_y, ws, pending, dense=not self.aggregative
            )
            new = self._sens_update(sens, x, st.y_tilde, blocks)
            sens.s, sens.s_prev = new.s, new.s_prev
            if log:
                entries.append(self._entry(st, sens, {"frozen": sens.frozen, "block_rows": _block_rows(blocks)}))
            if not _finite(st.y_tilde, sens.s):
                raise NonFiniteValue("non-finite inner iterate")
            if st.step_norm <= sigma_y and sens.delta <= sigma_s:
                converged = True
                break
        self.last_results = pending
        degenerate = sens.blocks is not None and not sens.blocks.strict
        return InnerResult(
            st.y_tilde,
            sens,
            st.ell,
            aposteriori_eq_bound(st, self.eta),
            aposteriori_sens_bound(sens, self.eta),
            converged=converged,
            degenerate=degenerate,
            log=entries,
        )

    def _general(self, x, y, sens, sigma_y, sigma_s, max_iter, log):
        spec, ws = self.spec, self.ws
        warm = warmstart(spec, x, y, sigma_y, ws, max_iter=max_iter)
        st = InnerState.start(warm.y, keep_history=True)
        pending = ppg_projections(spec, x, st.y_tilde, ws)
        entries = [] if log else None
        converged = False
        degenerate = False
        surrogate = np.inf
        for _ in range(max_iter):
            st = ppg_sweep(spec, x, st, ws, results=pending)
            pending = ppg_projections(spec, x, st.y_tilde, ws)
            blocks = ppg_jacobian_blocks(spec, x, st.y_tilde, ws, pending, dense=not self.aggregative)
            degenerate = not blocks.strict
            sens = self._sens_update(sens, x, st.y_tilde, blocks)
            surrogate = apriori_sens_bound(st.step_norm_history, self.eta, st.ell - 1)
            if log:
                entries.append(self._entry(st, sens, {"apriori": surrogate, "block_rows": _block_rows(blocks)}))
            if not _finite(st.y_tilde, sens.s):
                raise NonFiniteValue("non-finite inner iterate")
            if surrogate <= sigma_s:
                converged = True
                break
        self.last_results = pending
        return InnerResult(
            st.y_tilde,
            sens,
            st.ell,
            aposteriori_eq_bound(st, self.eta),
            surrogate,
            warm_iterations=warm.iterations,
            converged=converged and warm.converged,
            degenerate=degenerate,
            log=entries,
        )


def inner_loop(spec, x, y, s, sigma_y, sigma_s, ws=None, aggregative=False, max_iter=100_000, log=False):
    """Run one inner loop at ``x`` from ``(y, s)``; convenience wrapper."""
    ws = ws or Workspace(spec)
    sens = s if isinstance(s, SensitivityState) else SensitivityState.start(spec, s)
    return InnerLoop(spec, ws, aggregative).run(np.asarray(x, float), np.asarray(y, float), sens, sigma_y, sigma_s, max_iter, log)


# --------------------------------------------------------------------------
# run


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    inner_logs: list | None = None

    def column(self, name):
        return np.array([r[name] for r in self.records], dtype=float)

    @property
    def phi(self):
        return self.column("phi_e")

    @property
    def xs(self):
        return np.array([r["x"] for r in self.records])

    def to_csv(self, fh=None):
        out = fh or io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            row = []
            for c in TRACE_COLUMNS:
                v = r.get(c)
                if v is None:
                    row.append("")
                elif isinstance(v, (int, np.integer)):
                    row.append(str(int(v)))
                else:
                    row.append(repr(float(v)))
            w.writerow(row)
        if fh is None:
            return out.getvalue()
        return None


def _strict_sets(results):
    return tuple(tuple(r.strict) for r in results) if results is not None else None


def run(spec, schedules=None, options=None):
    """Run the leader loop; returns a :class:`RunTrace`.

    An inner loop at ``x0`` produces the initial ``(y, s)``.  The loop stops
    when the relative change of ``phi_e`` drops to ``rel_tol`` or after
    ``max_outer`` iterations.
    """
    schedules = schedules or Schedules.make()
    opts = options or RunOptions()
    if not opts.force:
        check_schedules(spec.variant, schedules)
    ws = Workspace(spec, workers=opts.workers, gamma=opts.gamma)
    if not ws.constants.contractive:
        raise ValueError(f"PPG step gives eta = {ws.eta:.3g} >= 1")
    inner = InnerLoop(spec, ws, opts.aggregative)
    X = spec.leader_set
    x = X.project(np.asarray(opts.x0, float)) if opts.x0 is not None else default_point(X)
    y = np.zeros(spec.n) if opts.y0 is None else np.array(opts.y0, dtype=float)
    sens = SensitivityState.start(spec, opts.s0)
    trace = RunTrace(inner_logs=[] if opts.log_inner else None)
    t0 = time.perf_counter()
    sch = schedules

    def do_inner(x, y, sens, k):
        res = inner.run(x, y, sens, sch.sigma_y(k), sch.sigma_s(k), opts.inner_max, opts.log_inner)
        if not res.converged:
            warnings.warn(f"inner loop hit {opts.inner_max} iterations at k={k}", ConvergenceWarning, stacklevel=3)
        if trace.inner_logs is not None:
            trace.inner_logs.append(res.log)
        return res

    def fail(msg):
        exc = NonFiniteValue(msg)
        exc.trace = trace
        trace.summary.update(termination="non_finite", k=len(trace.records))
        return exc

    res = do_inner(x, y, sens, 0)
    y, sens = res.y, res.sens
    phi_prev = leader_cost(spec, x, y)
    if not math.isfinite(phi_prev):
        raise fail("non-finite leader cost at the initial point")
    phi0 = phi_prev
    prev_sets = _strict_sets(inner.last_results)
    termination = "max_outer"
    degenerate_count = int(res.degenerate)
    active_changes = 0
    for k in range(opts.max_outer):
        grad = hypergradient(spec, x, y, sens.s)
        if not _finite(grad):
            raise fail(f"non-finite hypergradient at k={k}")
        x_new = outer_step(x, grad, sch.alpha(k), sch.beta(k), X)
        res = do_inner(x_new, y, sens, k)
        y, sens = res.y, res.sens
        phi = leader_cost(spec, x_new, y)
        if not (math.isfinite(phi) and _finite(x_new, y, sens.s)):
            raise fail(f"non-finite iterate at k={k}")
        rec = {
            "k": k,
            "phi_e": phi,
            "grad_norm": float(np.linalg.norm(grad)),
            "inner_iters": res.iterations,
            "eq_bound": res.eq_bound,
            "sens_bound": res.sens_bound,
            "x_step_norm": float(np.linalg.norm(x_new - x)),
            "wall_ms": 1e3 * (time.perf_counter() - t0) if opts.timing else None,
            "degenerate": res.degenerate,
        }
        degenerate_count += int(res.degenerate)
        if opts.record_x:
            rec["x"] = x_new.copy()
        if opts.log_active_sets:
            sets = _strict_sets(inner.last_results)
            rec["active_set_changed"] = sets != prev_sets
            active_changes += int(sets != prev_sets)
            prev_sets = sets
        trace.records.append(rec)
        x = x_new
        if opts.callback is not None:
            opts.callback(rec)
        if abs(phi - phi_prev) <= opts.rel_tol * abs(phi_prev):
            termination = "rel_tol"
            break
        phi_prev = phi
    ws.close()
    c = ws.constants
    trace.summary = {
        "x": x.tolist(),
        "y": y.tolist(),
        "phi_e": float(leader_cost(spec, x, y)),
        "phi_e_initial": float(phi0),
        "termination": termination,
        "outer_iterations": len(trace.records),
        "inner_iterations_total": int(sum(r["inner_iters"] for r in trace.records)),
        "variant": spec.variant,
        "schedules": schedules.echo(),
        "constants": {"mu": c.mu, "L_F": c.L_F, "gamma": c.gamma, "eta": c.eta},
        "degenerate_iterations": degenerate_count,
    }
    if opts.log_active_sets:
        trace.summary["active_set_changes"] = active_changes
    trace.sensitivity = sens.s
    return trace


# --------------------------------------------------------------------------
# LQSG step selection


def lqsg_alpha(spec, ws=None, safety=1.0):
    """``safety / L`` with ``L`` the curvature of the reduced leader objective.

    Uses the constant solution map ``y* = W x + w`` of an equality-only game;
    non-quadratic leaders fall back to ``1e-2``.
    """
    lc = spec.leader_cost
    if not hasattr(lc, "hessian"):
        return 1e-2
    W = lqsg_jacobian(spec, ws).W
    Hxx, Hxv, Hvv = lc.hessian()
    if lc.aggregate:
        W = np.hstack(spec.aggregation) @ W
    H = Hxx + Hxv @ W + W.T @ Hxv.T + W.T @ Hvv @ W
    L = float(np.linalg.norm(0.5 * (H + H.T), 2))
    return safety / L if L > 0 else 1.0


def backoff_beta(spec, alpha, probe=50, min_beta=2.0**-20, options=None):
    """Halve ``beta`` from 1 until ``phi_e`` decreases monotonically over ``probe`` outer steps.

    Returns ``(beta, trace)`` of the first accepted probe run.
    """
    beta = 1.0
    base = options or RunOptions()
    while beta >= min_beta:
        sch = Schedules.make(alpha=Schedule("const", float(alpha)), beta=Schedule("const", beta))
        opts = replace(base, max_outer=probe, rel_tol=0.0)
        tr = run(spec, sch, opts)
        phi = np.concatenate([[tr.summary["phi_e_initial"]], tr.phi])
        if np.all(np.diff(phi) <= 1e-12 * np.maximum(1.0, np.abs(phi[:-1]))):
            return beta, tr
        beta *= 0.5
    raise ValueError(f"no beta >= {min_beta:g} gives monotone decrease with alpha = {alpha:g}")


def default_schedules(spec, preset="medium", alpha=None, beta=None, sigma_y=None, sigma_s=None):
    """Schedules honouring the variant's contract when ``alpha``/``beta`` are not given.

    LQSG uses the constant step :func:`lqsg_alpha`; demand-response instances
    carry their own calibrated step in ``spec.meta``.
    """
    if alpha is None:
        if spec.variant == "lqsg":
            alpha = Schedule("const", lqsg_alpha(spec))
        else:
            alpha = spec.meta.get("default_alpha", DEFAULT_ALPHA)
    if beta is None:
        beta = "const:1"
    return Schedules.make(alpha=alpha, beta=beta, sigma_y=sigma_y, sigma_s=sigma_s, preset=preset)
