"""Reference computations for tests and the ``check`` command.

Nothing here reuses the solver's iteration code: projections are computed by
least-distance programming on top of BVLS (``scipy.optimize.lsq_linear``),
equilibria by a plain PPG loop followed by an exact linear solve on the identified active
set, and Jacobians by dense implicit-function solves.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import lsq_linear

from .errors import DegeneratePoint, Infeasible, MaxIterExceeded, NonFiniteValue, SingularSystem
from .game import GameSpec, PolyhedronSpec, QuadCostSpec, QuadraticLeaderCost, leader_cost
from .sets import Ball, Box, Product, Simplex


# --------------------------------------------------------------------------
# projection by least-distance programming


def _nullspace(C, rtol=1e-10):
    if C.shape[0] == 0:
        return np.eye(C.shape[1])
    _, sv, vt = np.linalg.svd(C)
    rank = int(np.sum(sv > rtol * sv[0])) if sv.size else 0
    return vt[rank:].T


def _ldp(G, h):
    """``min |u|^2 s.t. G u >= h``; returns ``(u, lam)`` (Lawson-Hanson reduction).

    The dual is a bound-constrained least-squares problem, solved with BVLS.
    The problem is homogeneous in ``h``, which is normalized first.
    """
    k = G.shape[1]
    if G.shape[0] == 0:
        return np.zeros(k), np.zeros(0)
    scale = max(1.0, float(np.abs(h).max()))
    E = np.vstack([G.T, h[None, :] / scale])
    f = np.zeros(k + 1)
    f[-1] = 1.0
    uhat = lsq_linear(E, f, bounds=(0.0, np.inf), method="bvls", tol=1e-15, lsq_solver="exact").x
    r = E @ uhat - f
    denom = -r[-1]
    if denom <= 1e-14:
        raise Infeasible("least-distance problem infeasible")
    u = -r[:k] / r[-1] * scale
    viol = float((h - G @ u).max())
    if viol > 1e-8 * (1.0 + scale):
        raise Infeasible(f"least-distance solution violates a constraint by {viol:.2e}")
    return u, uhat / denom * scale


def oracle_projection(poly, x, y):
    """Projection of ``y`` onto ``Y(x)`` with multipliers ``(z, lam, nu)``."""
    bt, dt = poly.rhs(np.asarray(x, float))
    y = np.asarray(y, float)
    C, A = poly.C, poly.A
    if C.shape[0]:
        z0 = np.linalg.lstsq(C, dt, rcond=None)[0]
        if np.abs(C @ z0 - dt).max() > 1e-9 * (1 + np.abs(dt).max()):
            raise Infeasible("equality constraints inconsistent")
    else:
        z0 = np.zeros(poly.n)
    N = _nullspace(C)
    zc = z0 + N @ (N.T @ (y - z0))
    if A.shape[0] == 0:
        z, lam = zc, np.zeros(0)
    else:
        u, lam = _ldp(-A @ N, A @ zc - bt)
        z = zc + N @ u
    rest = y - z - A.T @ lam
    nu = np.linalg.lstsq(C.T, rest, rcond=None)[0] if C.shape[0] else np.zeros(0)
    return z, lam, nu


# --------------------------------------------------------------------------
# equilibria


def _ppg_oracle(spec, x, y, gamma):
    out = []
    F = spec.pg.F(x, y)
    for i, P in enumerate(spec.polyhedra):
        b = spec.block(i)
        omega = y[b] - gamma * F[b]
        out.append(oracle_projection(P, x, omega))
    return out


def _exact_on_active_set(spec, x, y, gamma, act_tol=1e-9):
    """Solve ``y = h(x, y)`` exactly with the active sets frozen (affine PGs)."""
    n = spec.n
    proj = _ppg_oracle(spec, x, y, gamma)
    Jy = np.zeros((n, n))
    off = np.zeros(n)
    for i, (P, (z, lam, _)) in enumerate(zip(spec.polyhedra, proj)):
        b = spec.block(i)
        bt, dt = P.rhs(x)
        rows = [j for j in range(P.p) if lam[j] > act_tol]
        M = np.vstack([P.A[rows], P.C])
        rhs = np.concatenate([bt[rows], dt])
        if M.shape[0]:
            Mp = np.linalg.pinv(M)
            Jy[b, b] = np.eye(P.n) - Mp @ M
            off[b] = Mp @ rhs
        else:
            Jy[b, b] = np.eye(P.n)
    Mf = spec.pg.J2F(x, y)
    c = spec.pg.F(x, np.zeros(n))
    # y = Jy (y - gamma (Mf y + c)) + off
    lhs = np.eye(n) - Jy @ (np.eye(n) - gamma * Mf)
    rhs = off - gamma * Jy @ c
    return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def oracle_ne(spec, x, tol=1e-12, y0=None, gamma=None, max_iter=1_000_000, polish=True):
    """Equilibrium at ``x``: PPG with an LDP projection until ``|h(y) - y| <= tol``.

    For affine pseudo-gradients the fixed-point equation is also solved
    exactly on the active set identified by the iterate (first once the step
    is below ``1e-6``, again at ``tol``); a refined point is returned as soon
    as its residual meets ``tol``.
    """
    x = np.asarray(x, float)
    gamma = spec.constants.gamma if gamma is None else gamma
    y = np.zeros(spec.n) if y0 is None else np.array(y0, dtype=float)
    try_polish = polish and spec.pg.affine
    early = max(tol, 1e-6)
    step = np.inf
    for _ in range(max_iter):
        y_new = np.concatenate([z for z, _, _ in _ppg_oracle(spec, x, y, gamma)])
        if not np.all(np.isfinite(y_new)):
            raise NonFiniteValue("oracle iterate not finite")
        step = np.linalg.norm(y_new - y)
        y = y_new
        if try_polish and step <= early:
            y2 = _polished(spec, x, y, gamma)
            if y2 is not None and ne_residual(spec, x, y2, gamma) <= min(tol, step):
                return y2
            early = tol
            if step > tol:
                continue
        if step <= tol:
            return y
    raise MaxIterExceeded(f"oracle NE did not reach tol {tol:g}", best=y, residuals={"step": step})


def _polished(spec, x, y, gamma):
    try:
        y2 = _exact_on_active_set(spec, x, y, gamma)
    except (np.linalg.LinAlgError, Infeasible):
        return None
    return y2 if np.all(np.isfinite(y2)) else None


def ne_residual(spec, x, y, gamma=None):
    gamma = spec.constants.gamma if gamma is None else gamma
    h = np.concatenate([z for z, _, _ in _ppg_oracle(spec, x, y, gamma)])
    return float(np.linalg.norm(h - y))


def phi_e(spec, x, tol=1e-12, y0=None):
    """Leader objective along the equilibrium map."""
    return leader_cost(spec, x, oracle_ne(spec, x, tol, y0))


# --------------------------------------------------------------------------
# sensitivity


def _active_sets(spec, x, y, gamma, tol=1e-9):
    """Per agent: (strict rows, degenerate rows) at ``omega(x, y)``."""
    out = []
    for P, (z, lam, _) in zip(spec.polyhedra, _ppg_oracle(spec, x, y, gamma)):
        bt, _ = P.rhs(x)
        slack = bt - P.A @ z
        active = slack <= 1e-7
        strict = tuple(int(j) for j in np.nonzero(active & (lam > tol))[0])
        degen = tuple(int(j) for j in np.nonzero(active & (lam <= tol))[0])
        out.append((strict, degen))
    return out


def ppg_jacobian_dense(spec, x, y, gamma=None, require_strict=True):
    """Dense ``(J1h, J2h)`` of the PPG map at ``y`` from pseudo-inverses."""
    gamma = spec.constants.gamma if gamma is None else gamma
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    J1F, J2F = spec.pg.J1F(x, y), spec.pg.J2F(x, y)
    n, m = spec.n, spec.m
    J1h = np.zeros((n, m))
    J2h = np.zeros((n, n))
    for i, (P, (strict, degen)) in enumerate(zip(spec.polyhedra, _active_sets(spec, x, y, gamma))):
        if degen and require_strict:
            raise DegeneratePoint(f"agent {i}: strict complementarity fails on rows {degen}")
        b = spec.block(i)
        M = np.vstack([P.A[list(strict)], P.C])
        R = np.vstack([P.G[list(strict)], P.H])
        if M.shape[0]:
            Mp = np.linalg.pinv(M)
            Jy = np.eye(P.n) - Mp @ M
            Jx = Mp @ R
        else:
            Jy, Jx = np.eye(P.n), np.zeros((P.n, m))
        sel = np.zeros((P.n, n))
        sel[:, b] = np.eye(P.n)
        J1h[b] = Jx - gamma * Jy @ J1F[b]
        J2h[b] = Jy @ (sel - gamma * J2F[b])
    return J1h, J2h


def oracle_sensitivity(spec, x, y_star, gamma=None):
    """``(I - J2h)^-1 J1h`` at the equilibrium."""
    J1h, J2h = ppg_jacobian_dense(spec, x, y_star, gamma)
    K = np.eye(spec.n) - J2h
    if np.linalg.cond(K) > 1e12:
        raise SingularSystem("I - J2h is singular")
    return np.linalg.solve(K, J1h)


# --------------------------------------------------------------------------
# finite differences


def fd_gradient(f, x, step=1e-6):
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteValue(f"function not finite near coordinate {j}")
        g[j] = (fp - fm) / (2 * step)
    return g


def fd_jacobian(f, x, step=1e-6):
    """Central differences of a vector function; returns ``len(f(x)) x len(x)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        fp, fm = np.asarray(f(x + e), float), np.asarray(f(x - e), float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteValue(f"function not finite near coordinate {j}")
        cols.append((fp - fm) / (2 * step))
    return np.column_stack(cols)


# --------------------------------------------------------------------------
# the two-agent clamp game


def example1(r=1.0, lo=(0.0, 0.0), hi=(0.6, 0.6)):
    """Two scalar followers with ``f_i = (y_i - x_i)^2`` on a box, leader
    ``phi = -(y_1 + y_2)`` on the ball of radius ``r``.

    The equilibrium map is ``clip(x, lo, hi)``.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    costs, polys = [], []
    for i in range(2):
        E0 = np.zeros((1, 2))
        E0[0, i] = -2.0
        costs.append(QuadCostSpec(Q=[[2.0]], E0=E0, e=[0.0]))
        polys.append(PolyhedronSpec.box([lo[i]], [hi[i]], 2))
    leader = QuadraticLeaderCost(2, 2, qv=[-1.0, -1.0])
    return GameSpec.from_costs(costs, polys, leader, Ball(np.zeros(2), r), variant="lqg")


def example1_solution(x, lo=(0.0, 0.0), hi=(0.6, 0.6)):
    return np.clip(np.asarray(x, float), lo, hi)


# --------------------------------------------------------------------------
# equality-constrained LQ games


def lqsg_affine_map(spec):
    """``(W, w)`` with ``y*(x) = W x + w`` from the game's KKT system."""
    from scipy.linalg import block_diag

    Mf = spec.pg.J2F(None, None)
    E0 = spec.pg.J1F(None, None)
    e = spec.pg.F(np.zeros(spec.m), np.zeros(spec.n))
    C = block_diag(*[P.C for P in spec.polyhedra])
    H = np.vstack([P.H for P in spec.polyhedra])
    d = np.concatenate([P.d for P in spec.polyhedra])
    r = C.shape[0]
    K = np.block([[Mf, C.T], [C, np.zeros((r, r))]])
    rhs = np.vstack([np.column_stack([-E0, -e]), np.column_stack([H, d])])
    sol = np.linalg.solve(K, rhs)[: spec.n]
    return sol[:, :-1], sol[:, -1]


def reduced_quadratic(spec, W, w):
    """Hessian and linear term of ``phi_e(x) = phi(x, W x + w)`` for quadratic leaders."""
    lc = spec.leader_cost
    Hxx, Hxv, Hvv = lc.hessian()
    if lc.aggregate:
        K = np.hstack(spec.aggregation)
        W, w = K @ W, K @ w
    H = Hxx + Hxv @ W + W.T @ Hxv.T + W.T @ Hvv @ W
    g0 = lc.qx + Hxv @ w + W.T @ (Hvv @ w + lc.qv)
    return 0.5 * (H + H.T), g0


def lqsg_optimum(spec, tol=1e-14, max_iter=1_000_000):
    """Minimizer of the reduced leader objective over the leader set.

    Projected gradient with step ``1 / |H|`` on the exact quadratic.
    """
    W, w = lqsg_affine_map(spec)
    H, g0 = reduced_quadratic(spec, W, w)
    L = np.linalg.norm(H, 2)
    from .sets import default_point

    x = default_point(spec.leader_set)
    for _ in range(max_iter):
        x_new = spec.leader_set.project(x - (H @ x + g0) / L)
        if np.linalg.norm(x_new - x) <= tol:
            return x_new
        x = x_new
    raise MaxIterExceeded("reduced leader problem did not converge", best=x)


# --------------------------------------------------------------------------
# sampling


def sample_leader_set(leader_set, rng):
    """Uniform draw from a leader set."""
    if isinstance(leader_set, Box):
        v = rng.uniform(leader_set.lo, leader_set.hi)
        return leader_set.project(v)
    if isinstance(leader_set, Ball):
        d = leader_set.dim
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        return leader_set.center + leader_set.radius * rng.uniform() ** (1.0 / d) * u
    if isinstance(leader_set, Simplex):
        slack = leader_set.total - leader_set.lower.sum()
        return leader_set.lower + slack * rng.dirichlet(np.ones(leader_set.dim))
    if isinstance(leader_set, Product):
        return np.concatenate([sample_leader_set(p, rng) for p in leader_set.parts])
    raise TypeError(f"cannot sample {type(leader_set).__name__}")


def perturbations(m, rng, radius=1e-6, count=13):
    """Axis steps ``+-radius e_j`` topped up with random directions to ``count``."""
    out = []
    for j in range(m):
        for sgn in (1.0, -1.0):
            e = np.zeros(m)
            e[j] = sgn * radius
            out.append(e)
    while len(out) < count:
        u = rng.normal(size=m)
        out.append(radius * u / np.linalg.norm(u))
    return out


def is_smooth_point(spec, x, y_star, rng, radius=1e-6, count=13):
    """Active sets (at ``omega``) unchanged under perturbations of ``x``."""
    gamma = spec.constants.gamma
    try:
        base = _active_sets(spec, x, y_star, gamma)
    except Infeasible:
        return False
    if any(d for _, d in base):
        return False
    for dx in perturbations(spec.m, rng, radius, count):
        xp = x + dx
        if not spec.leader_set.contains(xp, tol=0.0):
            xp = spec.leader_set.project(xp)
        yp = oracle_ne(spec, xp, y0=y_star)
        if _active_sets(spec, xp, yp, gamma) != base:
            return False
    return True


def smooth_points(spec, count, rng, max_tries=1000):
    """Draw ``count`` leader points at which the equilibrium map is smooth.

    Returns a list of ``(x, y_star)``.
    """
    out = []
    for _ in range(max_tries):
        x = sample_leader_set(spec.leader_set, rng)
        y = oracle_ne(spec, x)
        if is_smooth_point(spec, x, y, rng):
            out.append((x, y))
            if len(out) == count:
                return out
    raise MaxIterExceeded(f"found only {len(out)} smooth points in {max_tries} draws", best=out)
