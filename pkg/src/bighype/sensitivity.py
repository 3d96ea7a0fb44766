"""Online learning of the solution-map Jacobian ``J y*(x)``.

The sensitivity ``s`` (n x m, row blocks per agent) follows the perturbed
fixed-point iteration ``s_i <- S2_i s + S1_i`` where, at ``omega = y - gamma F``,

    S1_i = J1g_i - gamma J2g_i J1F_i,        S2_i = J2g_i (E_i - gamma J2F_i)

and ``J1g_i``, ``J2g_i`` are derivatives of the projection onto ``Y_i(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, SingularSystem
from .equilibrium import ppg_map, ppg_projections, workspace


@dataclass(frozen=True, eq=False)
class Blocks:
    S1: tuple
    S2: tuple | None
    jac: tuple
    strict: bool
    gamma: float

    def dense(self):
        return np.vstack(self.S1), np.vstack(self.S2)


@dataclass(eq=False)
class SensitivityState:
    s: np.ndarray
    s_prev: np.ndarray
    frozen: bool = False
    blocks: Blocks | None = field(default=None, repr=False)
    recomputes: int = 0
    degenerate_latch: bool = False

    @classmethod
    def start(cls, spec, s0=None):
        s0 = np.zeros((spec.n, spec.m)) if s0 is None else np.array(s0, dtype=float)
        if s0.shape != (spec.n, spec.m):
            raise DimensionMismatch(f"sensitivity must be {(spec.n, spec.m)}, got {s0.shape}")
        return cls(s0, s0.copy())

    @property
    def delta(self):
        return float(np.linalg.norm(self.s - self.s_prev))

    def reset_cache(self):
        self.frozen = False
        self.blocks = None
        self.degenerate_latch = False


def _agent_blocks(ws, i, x, y, res, dense=True):
    spec = ws.spec
    jac = ws.projectors[i].jacobians(res)
    g = ws.gamma
    S1 = jac.J_x - g * jac.J_y @ spec.pg.J1F_i(i, x, y)
    S2 = None
    if dense:
        S2 = -g * jac.J_y @ spec.pg.J2F_i(i, x, y)
        S2[:, spec.block(i)] += jac.J_y
    return S1, S2, jac


def ppg_jacobian_blocks(spec, x, y, ws=None, results=None, dense=True):
    """Blocks ``(S1_i, S2_i)`` of the PPG Jacobian at ``y``.

    ``results`` are the projections at ``omega(x, y)`` if already available.
    With ``dense=False`` only ``S1`` is formed (for the aggregative update).
    """
    ws = workspace(spec, ws)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if results is None:
        results = ppg_projections(spec, x, y, ws)
    out = ws.map(lambda i: _agent_blocks(ws, i, x, y, results[i], dense))
    S1, S2, jac = zip(*out)
    strict = all(j.strict_complementarity for j in jac)
    return Blocks(tuple(S1), tuple(S2) if dense else None, tuple(jac), strict, ws.gamma)


def sensitivity_step(state, blocks):
    """Jacobi update ``s_i <- S2_i s + S1_i`` for all agents."""
    s = state.s
    if blocks.S2 is None:
        raise DimensionMismatch("dense blocks required")
    rows = []
    for S1, S2 in zip(blocks.S1, blocks.S2):
        if S2.shape[1] != s.shape[0] or S1.shape[1] != s.shape[1]:
            raise DimensionMismatch("block shapes do not match the sensitivity")
        rows.append(S2 @ s + S1)
    return replace(state, s=np.vstack(rows), s_prev=s)


def lqg_conditional_blocks(state, spec, x, y, step_norm, sigma, ws=None, results=None, dense=True):
    """Blocks under the LQG conditional rule.

    Blocks are recomputed while ``step_norm >= sigma``.  Once the step drops
    below ``sigma`` (and a block exists for this ``x``) the cache is frozen
    and reused verbatim.  ``state`` is updated in place.
    """
    if spec.variant != "lqg":
        raise ValueError("conditional blocks apply to the LQG variant")
    if state.blocks is not None and (state.frozen or step_norm < sigma):
        if not state.frozen:
            state.frozen = True
            state.degenerate_latch = not state.blocks.strict
        return state.blocks
    blocks = ppg_jacobian_blocks(spec, x, y, ws, results, dense)
    state.blocks = blocks
    state.recomputes += 1
    return blocks


@dataclass(frozen=True, eq=False)
class LQSGJacobian:
    S1: np.ndarray
    S2: np.ndarray
    W: np.ndarray
    w: np.ndarray
    blocks: Blocks


def lqsg_jacobian(spec, ws=None):
    """Constant PPG Jacobian of an equality-constrained LQ game and ``y* = W x + w``."""
    if spec.variant != "lqsg":
        raise ValueError("constant Jacobian applies to the LQSG variant")
    ws = workspace(spec, ws)
    x0 = np.zeros(spec.m)
    y0 = np.zeros(spec.n)
    blocks = ppg_jacobian_blocks(spec, x0, y0, ws)
    S1, S2 = blocks.dense()
    I_S2 = np.eye(spec.n) - S2
    cond = np.linalg.cond(I_S2)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystem(f"I - S2 is ill-conditioned (cond = {cond:.3e})")
    W = np.linalg.solve(I_S2, S1)
    w = np.linalg.solve(I_S2, ppg_map(spec, x0, y0, ws))
    return LQSGJacobian(S1, S2, W, w, blocks)


class FlopCounter:
    """Counts multiply-add flops per agent for instrumented matrix products."""

    def __init__(self):
        self.per_agent = {}
        self.leader = 0

    def mm(self, a, b, agent=None):
        k = a.shape[1] if a.ndim == 2 else a.shape[0]
        cols = b.shape[1] if b.ndim == 2 else 1
        flops = 2 * (a.shape[0] if a.ndim == 2 else 1) * k * cols
        if agent is None:
            self.leader += flops
        else:
            self.per_agent[agent] = self.per_agent.get(agent, 0) + flops
        return a @ b

    def add(self, flops, agent=None):
        if agent is None:
            self.leader += flops
        else:
            self.per_agent[agent] = self.per_agent.get(agent, 0) + flops


def aggregate_sensitivity(spec, s, counter=None):
    """Leader-side reduce ``sum_j K_j s_j`` in fixed agent order."""
    mm = counter.mm if counter is not None else (lambda a, b, agent=None: a @ b)
    total = None
    for j, K in enumerate(spec.aggregation):
        term = mm(K, s[spec.block(j)])
        total = term if total is None else total + term
    return total


def aggregative_sensitivity_step(state, spec, x, y, ws=None, results=None, blocks=None, counter=None):
    """Same update as :func:`sensitivity_step`, through the aggregate sensitivity.

    Agent ``i`` only needs ``s_i`` and the broadcast ``sum_j K_j s_j``; its
    work does not grow with the number of agents.  ``blocks`` may supply
    cached projection Jacobians (from the LQG latch).
    """
    if spec.aggregation is None:
        raise DimensionMismatch("game has no aggregation matrices")
    ws = workspace(spec, ws)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if blocks is None:
        blocks = ppg_jacobian_blocks(spec, x, y, ws, results, dense=False)
    g = ws.gamma
    s = state.s
    agg = aggregate_sensitivity(spec, s, counter)
    mm = counter.mm if counter is not None else (lambda a, b, agent=None: a @ b)

    def agent(i):
        si = s[spec.block(i)]
        Jy = blocks.jac[i].J_y
        own = spec.pg.own_jacobian(i, x, y)
        cpl = spec.pg.aggregate_jacobian(i, x, y)
        inner = si - g * (mm(own, si, i) + mm(cpl, agg, i))
        return mm(Jy, inner, i) + blocks.S1[i]

    rows = ws.map(agent)
    if counter is not None:
        for i, r in enumerate(rows):
            counter.add(3 * r.size, i)
    return replace(state, s=np.vstack(rows), s_prev=s)


def apriori_sens_bound(history, eta, ell=None):
    """Computable surrogate ``max(eta^l, sum_j eta^(l-j) |dy^j|)``.

    ``history`` holds the step norms ``|y^(j+1) - y^j|`` for ``j = 0..l``.
    """
    h = np.asarray(history, dtype=float)
    if ell is None:
        ell = h.size - 1
    if h.size == 0:
        return float(eta ** max(ell, 0))
    h = h[: ell + 1]
    weights = eta ** np.arange(h.size - 1, -1, -1, dtype=float)
    return float(max(eta**ell, weights @ h))


def aposteriori_sens_bound(state, eta):
    """``|s - s_prev|_F / (1 - eta)``."""
    delta = state.delta if isinstance(state, SensitivityState) else float(state)
    return delta / (1.0 - eta)
