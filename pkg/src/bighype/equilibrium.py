"""Projected pseudo-gradient (PPG) equilibrium seeking.

One PPG sweep maps ``y`` to ``h(x, y)`` with agent blocks

    h_i(x, y) = proj_{Y_i(x)}[y_i - gamma * F_i(x, y)].

Sweeps are Jacobi: every agent reads the same ``y``.  Agent updates may run
on a thread pool; results are gathered in agent order, so the outcome does
not depend on the worker count.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AgentError, BigHypeError, ConvergenceWarning, MaxIterExceeded, NonFiniteValue
from .game import constants_for
from .polyproj import Projector

WARMSTART_CAP = 100_000


def resolve_workers(workers=None):
    if workers is None:
        workers = os.environ.get("BIGHYPE_WORKERS", 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


class Workspace:
    """Per-run mutable context: one projector per agent and a worker pool.

    ``gamma`` overrides the validated PPG step (``constants`` is then
    recomputed without the contraction check, so callers can inspect it).
    """

    def __init__(self, spec, workers=None, gamma=None):
        self.spec = spec
        self.constants = spec.constants if gamma is None else constants_for(spec, gamma)
        self.gamma = self.constants.gamma
        self.eta = self.constants.eta
        self.projectors = [Projector(P) for P in spec.polyhedra]
        self.workers = resolve_workers(workers)
        self._pool = None

    def map(self, fn):
        """``[fn(i) for i in agents]`` with the agent index attached to errors."""
        N = self.spec.N
        if self.workers == 1 or N == 1:
            return [_call(fn, i) for i in range(N)]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
        futures = [self._pool.submit(_call, fn, i) for i in range(N)]
        return [f.result() for f in futures]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _call(fn, i):
    try:
        return fn(i)
    except BigHypeError as exc:
        if getattr(exc, "agent", None) is None:
            exc.agent = i
        raise
    except Exception as exc:  # user callbacks
        raise AgentError(i, exc) from exc


def workspace(spec, ws=None, **kw):
    return ws if ws is not None else Workspace(spec, **kw)


@dataclass
class InnerState:
    y_tilde: np.ndarray
    y_prev: np.ndarray
    step_norm: float = np.inf
    ell: int = 0
    step_norm_history: list | None = None
    # projection results at omega(y_prev), i.e. those that produced y_tilde
    results: tuple | None = field(default=None, repr=False)

    @classmethod
    def start(cls, y0, keep_history=False):
        y0 = np.array(y0, dtype=float)
        return cls(y0, y0.copy(), np.inf, 0, [] if keep_history else None)


def _agent_projection(ws, i, x, y):
    spec = ws.spec
    bi = spec.block(i)
    omega = y[bi] - ws.gamma * spec.pg.F_i(i, x, y)
    if not np.all(np.isfinite(omega)):
        raise NonFiniteValue("non-finite pseudo-gradient step")
    return ws.projectors[i].project(x, omega)


def ppg_step_agent(i, spec, x, y, ws=None):
    """Return ``h_i(x, y)``."""
    ws = workspace(spec, ws)
    return _agent_projection(ws, i, np.asarray(x, float), np.asarray(y, float)).z_star


def ppg_projections(spec, x, y, ws=None):
    """Per-agent projection results at ``omega(x, y) = y - gamma F(x, y)``."""
    ws = workspace(spec, ws)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return tuple(ws.map(lambda i: _agent_projection(ws, i, x, y)))


def ppg_map(spec, x, y, ws=None):
    """Full PPG map ``h(x, y)``."""
    return np.concatenate([r.z_star for r in ppg_projections(spec, x, y, ws)])


def ppg_sweep(spec, x, state, ws=None, results=None):
    """One synchronous sweep from ``state.y_tilde``.

    ``results`` may carry precomputed projections at ``omega(x, state.y_tilde)``.
    """
    if results is None:
        results = ppg_projections(spec, x, state.y_tilde, ws)
    y_new = np.concatenate([r.z_star for r in results])
    step = float(np.linalg.norm(y_new - state.y_tilde))
    hist = None
    if state.step_norm_history is not None:
        hist = state.step_norm_history + [step]
    return InnerState(y_new, state.y_tilde, step, state.ell + 1, hist, results)


@dataclass(frozen=True)
class WarmstartResult:
    y: np.ndarray
    iterations: int
    converged: bool
    step_norm: float


def warmstart(spec, x, y0, sigma, ws=None, max_iter=WARMSTART_CAP, raise_on_cap=False):
    """Run PPG sweeps until the step is at most ``sigma``.

    At the cap the last iterate is returned with ``converged=False`` and a
    :class:`ConvergenceWarning`; ``raise_on_cap`` turns that into
    :class:`MaxIterExceeded`.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    ws = workspace(spec, ws)
    state = InnerState.start(y0)
    for _ in range(max_iter):
        state = ppg_sweep(spec, x, state, ws)
        if state.step_norm <= sigma:
            return WarmstartResult(state.y_tilde, state.ell, True, state.step_norm)
    msg = f"warmstart hit {max_iter} sweeps with step {state.step_norm:.3e} > {sigma:.3e}"
    if raise_on_cap:
        raise MaxIterExceeded(msg, best=state.y_tilde, residuals={"step_norm": state.step_norm})
    warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return WarmstartResult(state.y_tilde, state.ell, False, state.step_norm)


def aposteriori_eq_bound(state, eta):
    """Distance bound of the previous iterate to the equilibrium: ``step / (1 - eta)``."""
    if isinstance(state, InnerState):
        step = state.step_norm
    else:
        step = float(state)
    return step / (1.0 - eta)
