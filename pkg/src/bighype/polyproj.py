"""Euclidean projection onto parametric polyhedra and its derivatives.

The projection of ``y`` onto ``{z : A z <= b + G x, C z = d + H x}`` solves

    min 1/2 |z - y|^2   s.t.   A z <= b + G x,   C z = d + H x.

It is solved by active-set refinement, warm-started from the active set of
the previous call, with an operator-splitting (ADMM) fallback whose output is
polished by the same refinement.  Derivatives come from differentiating the
KKT system on the strictly active rows.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import Infeasible, MaxIterExceeded, SingularSystem
from .sets import project as project_leader_set  # noqa: F401  (re-export)

TOL_ACT = 1e-7
TOL_LAM = 1e-7
_CACHE_SIZE = 128


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    z_star: np.ndarray
    lambda_star: np.ndarray
    nu_star: np.ndarray
    active_set: tuple
    strict: tuple
    degenerate: tuple
    residuals: dict
    method: str

    @property
    def strict_complementarity(self):
        return not self.degenerate


@dataclass(frozen=True, eq=False)
class ProjJacobians:
    J_y: np.ndarray
    J_x: np.ndarray
    strict_complementarity: bool
    rows: tuple = ()


def _residuals(poly, x, y, z, lam, nu):
    bt, dt = poly.rhs(x)
    slack = bt - poly.A @ z
    stat = z - y + poly.A.T @ lam + poly.C.T @ nu
    return {
        "primal_ineq": float(max(0.0, -slack.min())) if slack.size else 0.0,
        "primal_eq": float(np.abs(poly.C @ z - dt).max()) if dt.size else 0.0,
        "stationarity": float(np.linalg.norm(stat)),
        "complementarity": float(np.abs(lam * slack).max()) if slack.size else 0.0,
    }


class _Reduced:
    """Factorization of ``M M'`` for a working set, ``M = [A_W; C]``."""

    __slots__ = ("rows", "M", "factor", "pinv")

    def __init__(self, rows, M):
        self.rows = rows
        self.M = M
        self.factor = None
        self.pinv = None
        if M.shape[0]:
            MMt = M @ M.T
            try:
                self.factor = cho_factor(MMt)
                # reject numerically singular factors
                d = np.abs(np.diag(self.factor[0]))
                if d.min() <= 1e-10 * max(1.0, d.max()):
                    self.factor = None
            except LinAlgError:
                self.factor = None
            if self.factor is None:
                self.pinv = np.linalg.pinv(MMt, rcond=1e-12)

    def solve(self, rhs):
        if self.factor is not None:
            return cho_solve(self.factor, rhs)
        return self.pinv @ rhs

    def range_residual(self, a):
        """Component of ``a`` orthogonal to the row space of ``M``."""
        if not self.M.shape[0]:
            return a
        return a - self.M.T @ self.solve(self.M @ a)


class Projector:
    """Projection onto one follower's polyhedron, with per-agent caches.

    Not shared between threads: each follower owns its projector.
    """

    def __init__(self, poly, *, max_refine=None, admm_iters=20000):
        self.poly = poly
        self.max_refine = max_refine or 4 * poly.p + 20
        self.admm_iters = admm_iters
        self._last_active = ()
        self._reduced = OrderedDict()
        self._jac = OrderedDict()
        self._admm_cache = None
        self.stats = {"calls": 0, "warm_hits": 0, "admm": 0, "kkt_solves": 0}
        self._eq = None
        if poly.p == 0:
            self._eq = self._equality_projector()

    # equality-only fast path

    def _equality_projector(self):
        P = self.poly
        n = P.n
        if P.r == 0:
            return np.eye(n), np.zeros((n, 0)), None
        try:
            fac = cho_factor(P.C @ P.C.T)
        except LinAlgError as exc:
            raise SingularSystem("equality matrix C is rank deficient") from exc
        T = cho_solve(fac, P.C).T  # C'(CC')^-1
        return np.eye(n) - T @ P.C, T, fac

    # working-set machinery

    def _get_reduced(self, rows):
        red = self._reduced.get(rows)
        if red is None:
            P = self.poly
            M = np.vstack([P.A[list(rows)], P.C]) if rows else P.C
            red = _Reduced(rows, M)
            self._reduced[rows] = red
            if len(self._reduced) > _CACHE_SIZE:
                self._reduced.popitem(last=False)
        else:
            self._reduced.move_to_end(rows)
        return red

    def _solve_working(self, rows, y, bt, dt):
        red = self._get_reduced(rows)
        if not red.M.shape[0]:
            return y.copy(), np.zeros(0), np.zeros(0), red
        rhs = np.concatenate([bt[list(rows)], dt])
        mu = red.solve(red.M @ y - rhs)
        z = y - red.M.T @ mu
        k = len(rows)
        return z, mu[:k], mu[k:], red

    def _independent_subset(self, rows):
        out = []
        for j in rows:
            red = self._get_reduced(tuple(sorted(out)))
            a = self.poly.A[j]
            if np.linalg.norm(red.range_residual(a)) > 1e-9 * max(1.0, np.linalg.norm(a)):
                out.append(j)
        return tuple(sorted(out))

    def _refine(self, rows, y, bt, dt):
        """Primal-dual active-set refinement from an initial working set."""
        A = self.poly.A
        scale = 1.0 + np.abs(bt).max(initial=0.0) + np.abs(y).max(initial=0.0)
        ptol = 1e-12 * scale
        ltol = 1e-12 * scale
        rows = tuple(sorted(rows))
        seen = set()
        for _ in range(self.max_refine):
            if rows in seen:
                return None
            seen.add(rows)
            z, lam_w, nu, red = self._solve_working(rows, y, bt, dt)
            if red.factor is None and red.M.shape[0]:
                # dependent working set: consistency check
                if np.abs(red.M @ z - np.concatenate([bt[list(rows)], dt])).max() > 1e-9 * scale:
                    return None
            if lam_w.size and lam_w.min() < -ltol:
                drop = rows[int(np.argmin(lam_w))]
                rows = tuple(r for r in rows if r != drop)
                continue
            viol = A @ z - bt if bt.size else np.zeros(0)
            if viol.size:
                viol[list(rows)] = -np.inf
                j = int(np.argmax(viol))
                if viol[j] > ptol:
                    a = A[j]
                    if np.linalg.norm(red.range_residual(a)) <= 1e-9 * max(1.0, np.linalg.norm(a)):
                        return None
                    rows = tuple(sorted(rows + (j,)))
                    continue
            lam = np.zeros(self.poly.p)
            lam[list(rows)] = np.maximum(lam_w, 0.0)
            return z, lam, nu, rows
        return None

    # ADMM fallback

    def _admm_setup(self, rho=1.0, sigma=1e-6):
        P = self.poly
        K = np.vstack([P.A, P.C])
        rv = np.concatenate([np.full(P.p, rho), np.full(P.r, rho * 1e3)])
        mat = (1.0 + sigma) * np.eye(P.n) + K.T @ (rv[:, None] * K)
        return K, rv, cho_factor(mat), sigma

    def _run_admm(self, y, bt, dt, alpha=1.6, eps=1e-9):
        if self._admm_cache is None:
            self._admm_cache = self._admm_setup()
        K, rv, fac, sigma = self._admm_cache
        P = self.poly
        lo = np.concatenate([np.full(P.p, -np.inf), dt])
        hi = np.concatenate([bt, dt])
        x = np.clip(y, -1e12, 1e12)
        zv = np.clip(K @ x, lo, hi)
        lam = np.zeros(K.shape[0])
        r_prim = np.inf
        for it in range(self.admm_iters):
            xt = cho_solve(fac, sigma * x + y + K.T @ (rv * zv - lam))
            zt = K @ xt
            x = alpha * xt + (1 - alpha) * x
            zr = alpha * zt + (1 - alpha) * zv
            zv = np.clip(zr + lam / rv, lo, hi)
            lam = lam + rv * (zr - zv)
            if it % 10 == 9:
                Kx = K @ x
                r_prim = np.abs(Kx - zv).max(initial=0.0)
                r_dual = np.abs(x - y + K.T @ lam).max(initial=0.0)
                sc = 1.0 + max(np.abs(Kx).max(initial=0.0), np.abs(y).max(initial=0.0))
                if r_prim <= eps * sc and r_dual <= eps * sc:
                    break
        return x, lam[:P.p], lam[P.p:], r_prim

    # public

    def project(self, x, y):
        P = self.poly
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        self.stats["calls"] += 1
        bt, dt = P.rhs(x)
        if self._eq is not None:
            Pc, T, fac = self._eq
            z = Pc @ y + T @ dt
            nu = cho_solve(fac, P.C @ y - dt) if P.r else np.zeros(0)
            lam = np.zeros(0)
            return ProjectionResult(z, lam, nu, (), (), (), _residuals(P, x, y, z, lam, nu), "equality")

        sol = self._refine(self._last_active, y, bt, dt)
        method = "active_set"
        if sol is not None:
            self.stats["warm_hits"] += 1
        else:
            self.stats["admm"] += 1
            method = "admm"
            za, la, _, r_prim = self._run_admm(y, bt, dt)
            # a rough ADMM point still tends to expose the right working set
            slack = bt - P.A @ za
            guess = [j for j in np.argsort(-la) if la[j] > 1e-9 or slack[j] < 1e-9]
            sol = self._refine(self._independent_subset(guess), y, bt, dt)
            if sol is None:
                sol = self._refine((), y, bt, dt)
            if sol is None and r_prim > 1e-6 * (1.0 + np.abs(bt).max(initial=0.0)):
                raise Infeasible(f"projection primal residual {r_prim:.3e} does not decrease; polyhedron empty?")
            if sol is None:
                res = _residuals(P, x, y, za, np.maximum(la, 0), np.zeros(P.r))
                raise MaxIterExceeded("active-set polishing did not converge", best=za, residuals=res)
        z, lam, nu, rows = sol
        self._last_active = rows
        slack = bt - P.A @ z
        active = tuple(int(j) for j in np.nonzero(slack <= TOL_ACT)[0])
        strict = tuple(j for j in active if lam[j] > TOL_LAM)
        degenerate = tuple(j for j in active if lam[j] <= TOL_LAM)
        return ProjectionResult(z, lam, nu, active, strict, degenerate, _residuals(P, x, y, z, lam, nu), method)

    def jacobians(self, res):
        """Derivatives of the projection at ``res`` (see :func:`kkt_jacobians`)."""
        P = self.poly
        if self._eq is not None:
            Pc, T, _ = self._eq
            key = ("eq",)
            jac = self._jac.get(key)
            if jac is None:
                jac = ProjJacobians(Pc, T @ P.H, True, ())
                self._jac[key] = jac
            return jac
        rows = tuple(res.strict)
        jac = self._jac.get(rows)
        if jac is not None:
            self._jac.move_to_end(rows)
            if jac.strict_complementarity == res.strict_complementarity:
                return jac
            return ProjJacobians(jac.J_y, jac.J_x, res.strict_complementarity, rows)
        self.stats["kkt_solves"] += 1
        jac = _reduced_jacobians(P, rows, res.strict_complementarity)
        self._jac[rows] = jac
        if len(self._jac) > _CACHE_SIZE:
            self._jac.popitem(last=False)
        return jac


def _reduced_jacobians(P, rows, strict):
    n = P.n
    M = np.vstack([P.A[list(rows)], P.C])
    R = np.vstack([P.G[list(rows)], P.H])
    if not M.shape[0]:
        return ProjJacobians(np.eye(n), np.zeros((n, P.m)), strict, rows)
    try:
        fac = cho_factor(M @ M.T)
        d = np.abs(np.diag(fac[0]))
        if d.min() <= 1e-10 * max(1.0, d.max()):
            raise LinAlgError("ill-conditioned")
        T = cho_solve(fac, M).T
    except LinAlgError:
        # dependent active rows: minimum-norm selection
        strict = False
        T = np.linalg.pinv(M, rcond=1e-10)
        gap = M @ (T @ R) - R
        if np.abs(gap).max(initial=0.0) > 1e-8 * max(1.0, np.abs(R).max()):
            raise SingularSystem("reduced KKT system inconsistent for the parameter direction")
    return ProjJacobians(np.eye(n) - T @ M, T @ R, strict, rows)


def project(poly, x, y, projector=None):
    """Project ``y`` onto ``Y(x)``; pass a :class:`Projector` to reuse caches."""
    return (projector or Projector(poly)).project(x, y)


def kkt_jacobians(poly, x, res, projector=None):
    """``(J_y, J_x)`` of the projection at a solved point.

    Rows that are active with a positive multiplier enter the reduced KKT
    system; degenerate rows (zero slack and zero multiplier) are treated as
    inactive, which picks one element of the generalized Jacobian and sets
    ``strict_complementarity`` to False.
    """
    if projector is not None:
        return projector.jacobians(res)
    if poly.p == 0:
        return Projector(poly).jacobians(res)
    return _reduced_jacobians(poly, tuple(res.strict), res.strict_complementarity)


def kkt_jacobians_full(poly, x, res):
    """Same derivatives from the full linearized KKT system (least squares).

    Keeps every inequality row and the linearized complementarity
    ``dlam_j * slack_j + lam_j * (G_j dx - A_j dz) = 0``.  Used to cross-check
    the reduced solve.
    """
    P = poly
    n, p, r, m = P.n, P.p, P.r, P.m
    bt, _ = P.rhs(x)
    lam = res.lambda_star
    slack = bt - P.A @ res.z_star
    K = np.zeros((n + p + r, n + p + r))
    K[:n, :n] = np.eye(n)
    K[:n, n:n + p] = P.A.T
    K[:n, n + p:] = P.C.T
    K[n:n + p, :n] = -lam[:, None] * P.A
    K[n:n + p, n:n + p] = np.diag(slack)
    K[n + p:, :n] = P.C
    rhs_y = np.zeros((n + p + r, n))
    rhs_y[:n] = np.eye(n)
    rhs_x = np.zeros((n + p + r, m))
    rhs_x[n:n + p] = -lam[:, None] * P.G
    rhs_x[n + p:] = P.H
    sol_y = np.linalg.lstsq(K, rhs_y, rcond=None)[0]
    sol_x = np.linalg.lstsq(K, rhs_x, rcond=None)[0]
    return ProjJacobians(sol_y[:n], sol_x[:n], res.strict_complementarity)
