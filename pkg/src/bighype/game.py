"""Bilevel game instances: follower costs and constraints, the pseudo-gradient,
the leader objective, and the monotonicity constants that drive step sizes.

Follower ``i`` picks ``y_i`` in the parametric polyhedron

    Y_i(x) = {z : A_i z <= b_i + G_i x,  C_i z = d_i + H_i x}

and the followers' partial gradients are stacked into the pseudo-gradient
``F(x, y)``.  Linear-quadratic games are described by :class:`QuadCostSpec`;
anything else plugs in through :class:`CallbackPG` or a subclass of
:class:`PseudoGradient`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import (
    ContractionViolation,
    DimensionMismatch,
    NotStronglyMonotone,
    RankDeficientConstraint,
)

VARIANTS = ("general", "lqg", "lqsg")

MU_TOL = 1e-12
SYM_TOL = 1e-12
RANK_RTOL = 1e-10


def _mat(a, shape, name):
    if a is None:
        return np.zeros(shape)
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        a = a.reshape(shape)
    if a.ndim == 1 and len(shape) == 2 and shape[0] == 1:
        a = a.reshape(1, -1)
    if a.shape != shape:
        raise DimensionMismatch(f"{name}: expected shape {shape}, got {a.shape}")
    return a


def _vec(a, size, name):
    if a is None:
        return np.zeros(size)
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != size:
        raise DimensionMismatch(f"{name}: expected length {size}, got {a.size}")
    return a


def row_rank(mat):
    """Numerical row rank with tolerance 1e-10 times the largest singular value."""
    if mat.shape[0] == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


@dataclass(frozen=True, eq=False)
class PolyhedronSpec:
    """Constraint data of one follower (see module docstring)."""

    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    C: np.ndarray
    d: np.ndarray
    H: np.ndarray

    @classmethod
    def build(cls, n, m, A=None, b=None, G=None, C=None, d=None, H=None):
        p = 0 if A is None else np.atleast_2d(np.asarray(A, dtype=float)).shape[0]
        if A is not None and np.asarray(A).size == 0:
            p = 0
        r = 0 if C is None else np.atleast_2d(np.asarray(C, dtype=float)).shape[0]
        if C is not None and np.asarray(C).size == 0:
            r = 0
        return cls(
            A=_mat(A, (p, n), "A"),
            b=_vec(b, p, "b"),
            G=_mat(G, (p, m), "G"),
            C=_mat(C, (r, n), "C"),
            d=_vec(d, r, "d"),
            H=_mat(H, (r, m), "H"),
        )

    @classmethod
    def box(cls, lo, hi, m):
        """Constant box ``lo <= z <= hi`` written as two inequality blocks."""
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        n = lo.size
        eye = np.eye(n)
        return cls.build(n, m, A=np.vstack([eye, -eye]), b=np.concatenate([hi, -lo]))

    def __post_init__(self):
        n = self.A.shape[1] if self.A.ndim == 2 else None
        p, m = self.G.shape
        r = self.C.shape[0]
        if self.A.shape != (p, n) or self.b.shape != (p,):
            raise DimensionMismatch("inequality block dimensions disagree")
        if self.C.shape != (r, n) or self.d.shape != (r,) or self.H.shape != (r, m):
            raise DimensionMismatch("equality block dimensions disagree")

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.G.shape[1]

    @property
    def p(self):
        return self.A.shape[0]

    @property
    def r(self):
        return self.C.shape[0]

    def rhs(self, x):
        return self.b + self.G @ x, self.d + self.H @ x

    def contains(self, x, z, tol=1e-8):
        bi, de = self.rhs(x)
        ok = self.p == 0 or np.max(self.A @ z - bi) <= tol
        return bool(ok and (self.r == 0 or np.max(np.abs(self.C @ z - de)) <= tol))


@dataclass(frozen=True, eq=False)
class QuadCostSpec:
    """``f_i = 1/2 y_i'Q y_i + (sum_{j != i} E[j] y_j + B sigma(y) + E0 x + e)' y_i``.

    ``B`` couples the agent to the aggregate ``sigma(y) = sum_j K_j y_j``
    (only meaningful when the game carries aggregation matrices).
    """

    Q: np.ndarray
    E0: np.ndarray
    e: np.ndarray
    E: dict = field(default_factory=dict)
    B: np.ndarray | None = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "Q", Q)
        n = Q.shape[0]
        E0 = np.asarray(self.E0, dtype=float)
        if E0.ndim == 1:
            E0 = E0.reshape(n, -1)
        object.__setattr__(self, "E0", E0)
        object.__setattr__(self, "e", _vec(self.e, n, "e"))
        object.__setattr__(self, "E", {int(j): np.atleast_2d(np.asarray(v, dtype=float)) for j, v in self.E.items()})
        if self.B is not None:
            object.__setattr__(self, "B", np.atleast_2d(np.asarray(self.B, dtype=float)))
        if Q.shape != (n, n) or E0.shape[0] != n:
            raise DimensionMismatch("cost block dimensions disagree")

    @property
    def n(self):
        return self.Q.shape[0]


class PseudoGradient:
    """Interface for ``F(x, y)`` and its partial Jacobians.

    Subclasses implement :meth:`F`, :meth:`J1F` and :meth:`J2F`.  Agent-level
    methods slice the stacked quantities unless overridden.  ``affine`` says
    whether ``F(x, .)`` is affine for fixed ``x``; ``constant_jacobians``
    whether ``J1F``/``J2F`` are independent of ``(x, y)``.
    """

    affine = False
    constant_jacobians = False

    def __init__(self, sizes, m):
        self.sizes = tuple(int(s) for s in sizes)
        self.m = int(m)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.n = int(self.offsets[-1])

    def block(self, i):
        return slice(self.offsets[i], self.offsets[i + 1])

    def F(self, x, y):
        raise NotImplementedError

    def J1F(self, x, y):
        raise NotImplementedError

    def J2F(self, x, y):
        raise NotImplementedError

    def F_i(self, i, x, y):
        return self.F(x, y)[self.block(i)]

    def J1F_i(self, i, x, y):
        return self.J1F(x, y)[self.block(i)]

    def J2F_i(self, i, x, y):
        return self.J2F(x, y)[self.block(i)]

    # aggregative interface: F_i(x, y_i, sigma) with sigma = sum_j K_j y_j
    def own_jacobian(self, i, x, y):
        raise NotImplementedError("pseudo-gradient has no aggregative form")

    def aggregate_jacobian(self, i, x, y):
        raise NotImplementedError("pseudo-gradient has no aggregative form")

    def moduli(self, leader_set=None):
        """Return ``(mu, L_F)`` if they can be computed exactly, else None."""
        return None


class LinearQuadraticPG(PseudoGradient):
    """Affine pseudo-gradient ``F(x, y) = M y + E0 x + e`` of an LQ game."""

    affine = True
    constant_jacobians = True

    def __init__(self, costs, m, aggregation=None):
        super().__init__([c.n for c in costs], m)
        N = len(costs)
        self.costs = tuple(costs)
        self.aggregation = None if aggregation is None else [np.atleast_2d(np.asarray(K, float)) for K in aggregation]
        M = np.zeros((self.n, self.n))
        E0 = np.zeros((self.n, m))
        e = np.zeros(self.n)
        for i, c in enumerate(costs):
            bi = self.block(i)
            if c.E0.shape != (c.n, m):
                raise DimensionMismatch(f"agent {i}: E0 must be {(c.n, m)}, got {c.E0.shape}")
            M[bi, bi] = c.Q
            for j, Eij in c.E.items():
                if not 0 <= j < N or j == i:
                    raise DimensionMismatch(f"agent {i}: invalid coupling index {j}")
                if Eij.shape != (c.n, self.sizes[j]):
                    raise DimensionMismatch(f"agent {i}: E[{j}] must be {(c.n, self.sizes[j])}, got {Eij.shape}")
                M[bi, self.block(j)] += Eij
            if c.B is not None:
                if self.aggregation is None:
                    raise DimensionMismatch(f"agent {i}: aggregate coupling B given without aggregation matrices")
                for j, K in enumerate(self.aggregation):
                    M[bi, self.block(j)] += c.B @ K
            E0[bi] = c.E0
            e[bi] = c.e
        self.M, self.E0, self.e = M, E0, e

    def F(self, x, y):
        return self.M @ y + self.E0 @ x + self.e

    def F_i(self, i, x, y):
        bi = self.block(i)
        return self.M[bi] @ y + self.E0[bi] @ x + self.e[bi]

    def J1F(self, x=None, y=None):
        return self.E0

    def J2F(self, x=None, y=None):
        return self.M

    def J1F_i(self, i, x=None, y=None):
        return self.E0[self.block(i)]

    def J2F_i(self, i, x=None, y=None):
        return self.M[self.block(i)]

    @property
    def pure_aggregative(self):
        return self.aggregation is not None and all(c.B is not None and not c.E for c in self.costs)

    def own_jacobian(self, i, x=None, y=None):
        if not self.pure_aggregative:
            raise NotImplementedError("game is not purely aggregative")
        return self.costs[i].Q

    def aggregate_jacobian(self, i, x=None, y=None):
        if not self.pure_aggregative:
            raise NotImplementedError("game is not purely aggregative")
        return self.costs[i].B

    def moduli(self, leader_set=None):
        return monotonicity_constants(self.M)


class CallbackPG(PseudoGradient):
    """User-supplied evaluators ``F(x, y)``, ``J1F(x, y)``, ``J2F(x, y)``."""

    def __init__(self, sizes, m, F, J1F, J2F, affine=False):
        super().__init__(sizes, m)
        self._F, self._J1F, self._J2F = F, J1F, J2F
        self.affine = affine

    def F(self, x, y):
        return np.asarray(self._F(x, y), dtype=float)

    def J1F(self, x, y):
        return np.asarray(self._J1F(x, y), dtype=float)

    def J2F(self, x, y):
        return np.asarray(self._J2F(x, y), dtype=float)


def monotonicity_constants(M, basis=None):
    """``(mu, L_F)`` of the linear map ``M``, optionally restricted to ``range(basis)``.

    ``mu`` is the smallest eigenvalue of the symmetric part, ``L_F`` the
    spectral norm.  With an orthonormal ``basis`` the quantities are those of
    ``v -> M v`` for ``v`` in its range.
    """
    if basis is None:
        mu = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]) if M.size else 0.0
        L = float(np.linalg.norm(M, 2)) if M.size else 0.0
        return mu, L
    MB = M @ basis
    S = basis.T @ MB
    mu = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0]) if S.size else 0.0
    L = float(np.linalg.norm(MB, 2)) if MB.size else 0.0
    return mu, L


# --------------------------------------------------------------------------
# leader objectives


class LeaderCost:
    """Leader objective ``phi(x, v)`` where ``v`` is ``y`` or the aggregate ``sigma(y)``."""

    aggregate = False

    def value(self, x, v):
        raise NotImplementedError

    def grads(self, x, v):
        """Return ``(grad_x, grad_v)``."""
        raise NotImplementedError


class QuadraticLeaderCost(LeaderCost):
    """``1/2 x'Pxx x + x'Pxv v + 1/2 v'Pvv v + qx'x + qv'v + const``."""

    def __init__(self, m, nv, Pxx=None, Pxv=None, Pvv=None, qx=None, qv=None, const=0.0, aggregate=False):
        self.m, self.nv = int(m), int(nv)
        self.Pxx = _mat(Pxx, (m, m), "Pxx")
        self.Pxv = _mat(Pxv, (m, nv), "Pxv")
        self.Pvv = _mat(Pvv, (nv, nv), "Pvv")
        self.qx = _vec(qx, m, "qx")
        self.qv = _vec(qv, nv, "qv")
        self.const = float(const)
        self.aggregate = bool(aggregate)
        self._Sxx = 0.5 * (self.Pxx + self.Pxx.T)
        self._Svv = 0.5 * (self.Pvv + self.Pvv.T)

    def value(self, x, v):
        return float(
            0.5 * x @ self._Sxx @ x + x @ self.Pxv @ v + 0.5 * v @ self._Svv @ v + self.qx @ x + self.qv @ v + self.const
        )

    def grads(self, x, v):
        gx = self._Sxx @ x + self.Pxv @ v + self.qx
        gv = self.Pxv.T @ x + self._Svv @ v + self.qv
        return gx, gv

    def hessian(self):
        """Hessian blocks ``(H_xx, H_xv, H_vv)``; the cost is quadratic."""
        return self._Sxx, self.Pxv, self._Svv


# --------------------------------------------------------------------------
# game


@dataclass(frozen=True)
class Constants:
    mu: float
    L_F: float
    gamma: float
    eta: float

    @classmethod
    def from_moduli(cls, mu, L_F, gamma=None, strict=True):
        """Default step ``gamma = 0.9 mu / L_F^2`` and contraction ``eta``."""
        if L_F <= 0:
            raise NotStronglyMonotone("Lipschitz constant must be positive")
        if gamma is None:
            gamma = 0.9 * mu / L_F**2
        eta = float(np.sqrt(1.0 - gamma * (2.0 * mu - gamma * L_F**2)))
        if strict and not (0.0 < gamma < 2.0 * mu / L_F**2):
            raise ContractionViolation(
                f"gamma={gamma:.3g} outside (0, 2 mu / L_F^2) = (0, {2 * mu / L_F**2:.3g}); eta={eta:.3g}"
            )
        return cls(float(mu), float(L_F), float(gamma), eta)

    @property
    def contractive(self):
        return self.eta < 1.0


@dataclass(frozen=True)
class ValidationReport:
    mu: float
    L_F: float
    constants: Constants
    restricted: bool
    equality_rank_ok: bool
    inequality_full_rank: tuple
    lqsg_consistent: bool
    aggregation_consistent: bool
    spot_check: dict | None = None

    def as_dict(self):
        c = self.constants
        return {
            "mu": self.mu,
            "L_F": self.L_F,
            "gamma": c.gamma,
            "eta": c.eta,
            "restricted_to_equality_nullspace": self.restricted,
            "inequality_full_rank": list(self.inequality_full_rank),
            "lqsg_consistent": self.lqsg_consistent,
        }


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Everything defining one bilevel instance.

    ``costs`` is kept for LQ games (it is what gets serialized); ``pg`` is the
    evaluator used by the algorithms.  ``mu``/``L_F`` are user-supplied moduli
    for pseudo-gradients whose constants cannot be computed from a single
    matrix; ``gamma`` overrides the default PPG step.
    """

    pg: PseudoGradient
    polyhedra: tuple
    leader_cost: LeaderCost
    leader_set: object
    variant: str = "lqg"
    aggregation: tuple | None = None
    costs: tuple | None = None
    gamma: float | None = None
    mu: float | None = None
    L_F: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        variant = self.variant.lower()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", variant)
        object.__setattr__(self, "polyhedra", tuple(self.polyhedra))
        if self.aggregation is not None:
            object.__setattr__(self, "aggregation", tuple(np.atleast_2d(np.asarray(K, float)) for K in self.aggregation))
        if len(self.polyhedra) != len(self.pg.sizes):
            raise DimensionMismatch("one polyhedron per follower required")
        for i, (P, ni) in enumerate(zip(self.polyhedra, self.pg.sizes)):
            if P.n != ni or P.m != self.pg.m:
                raise DimensionMismatch(f"agent {i}: polyhedron is {P.n}x{P.m}, follower needs {ni}x{self.pg.m}")
        if self.leader_set.dim != self.pg.m:
            raise DimensionMismatch(f"leader set has dimension {self.leader_set.dim}, game needs {self.pg.m}")

    @classmethod
    def from_costs(cls, costs, polyhedra, leader_cost, leader_set, variant="lqg", aggregation=None, **kw):
        m = leader_set.dim
        pg = LinearQuadraticPG(costs, m, aggregation)
        return cls(pg, polyhedra, leader_cost, leader_set, variant, aggregation, tuple(costs), **kw)

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def N(self):
        return len(self.pg.sizes)

    @property
    def sizes(self):
        return self.pg.sizes

    @property
    def n(self):
        return self.pg.n

    @property
    def m(self):
        return self.pg.m

    def block(self, i):
        return self.pg.block(i)

    def aggregate(self, y):
        if self.aggregation is None:
            raise DimensionMismatch("game has no aggregation matrices")
        return sum(K @ y[self.block(i)] for i, K in enumerate(self.aggregation))

    @cached_property
    def report(self):
        return validate(self)

    @property
    def constants(self):
        return self.report.constants

    @property
    def gamma_(self):
        return self.constants.gamma

    @cached_property
    def equality_basis(self):
        """Orthonormal basis of the null space of the stacked equality constraints."""
        blocks = []
        for P in self.polyhedra:
            if P.r == 0:
                blocks.append(np.eye(P.n))
            else:
                _, sv, vt = np.linalg.svd(P.C)
                rank = int(np.sum(sv > RANK_RTOL * sv[0]))
                blocks.append(vt[rank:].T)
        out = np.zeros((self.n, sum(b.shape[1] for b in blocks)))
        col = 0
        for i, b in enumerate(blocks):
            out[self.block(i), col:col + b.shape[1]] = b
            col += b.shape[1]
        return out


def _check_xy(spec, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (spec.m,):
        raise DimensionMismatch(f"x must have length {spec.m}, got shape {x.shape}")
    if y.shape != (spec.n,):
        raise DimensionMismatch(f"y must have length {spec.n}, got shape {y.shape}")
    return x, y


def validate(spec, *, spot_samples=200, seed=0):
    """Check an instance and compute ``mu``, ``L_F``, ``gamma`` and ``eta``.

    For an affine PG with constant Jacobian ``M`` the moduli are exact.  If
    ``M`` is only monotone on the null space of the equality constraints (a
    state variable fixed by dynamics has no cost, say) the moduli are taken
    on that subspace, which is where PPG iterates live after one sweep.
    User-supplied moduli are spot-checked on random pairs.
    """
    for i, c in enumerate(spec.costs or ()):
        if np.linalg.norm(c.Q - c.Q.T) > SYM_TOL * max(1.0, np.linalg.norm(c.Q)):
            raise NotStronglyMonotone(f"agent {i}: Q is not symmetric")
        if np.linalg.eigvalsh(c.Q)[0] <= MU_TOL:
            raise NotStronglyMonotone(f"agent {i}: Q is not positive definite")

    eq_ok = True
    ineq_full = []
    for i, P in enumerate(spec.polyhedra):
        if P.r and row_rank(P.C) < P.r:
            eq_ok = False
            raise RankDeficientConstraint(f"agent {i}: equality matrix C is rank deficient")
        ineq_full.append(bool(P.p == 0 or row_rank(P.A) == P.p))

    lqsg_ok = all(P.p == 0 for P in spec.polyhedra)
    if spec.variant == "lqsg" and not lqsg_ok:
        raise DimensionMismatch("LQSG variant requires equality-only polyhedra")
    if spec.variant == "lqsg" and not spec.pg.constant_jacobians:
        raise DimensionMismatch("LQSG variant requires a linear-quadratic pseudo-gradient")

    agg_ok = True
    if spec.aggregation is not None:
        rows = {K.shape[0] for K in spec.aggregation}
        cols_ok = all(K.shape[1] == ni for K, ni in zip(spec.aggregation, spec.sizes))
        agg_ok = len(rows) == 1 and cols_ok and len(spec.aggregation) == spec.N
        if not agg_ok:
            raise DimensionMismatch("aggregation matrices must share a row count and match follower sizes")

    restricted = False
    spot = None
    if spec.mu is not None and spec.L_F is not None:
        mu, L = float(spec.mu), float(spec.L_F)
        spot = spot_check_moduli(spec, mu, L, samples=spot_samples, seed=seed)
        if not spot["ok"]:
            raise NotStronglyMonotone(f"supplied moduli fail the sampled check: {spot}")
    else:
        mods = spec.pg.moduli(spec.leader_set)
        if mods is None:
            raise NotStronglyMonotone("pseudo-gradient moduli unknown; supply mu and L_F")
        mu, L = mods
        if mu <= MU_TOL and any(P.r for P in spec.polyhedra) and spec.pg.constant_jacobians:
            mu_r, L_r = monotonicity_constants(spec.pg.J2F(None, None), spec.equality_basis)
            if mu_r > MU_TOL:
                mu, L, restricted = mu_r, L_r, True
    if mu <= MU_TOL:
        raise NotStronglyMonotone(f"mu = {mu:.3e} <= {MU_TOL:g}")
    constants = Constants.from_moduli(mu, L, spec.gamma)
    return ValidationReport(mu, L, constants, restricted, eq_ok, tuple(ineq_full), lqsg_ok, agg_ok, spot)


def spot_check_moduli(spec, mu, L, samples=200, seed=0, x=None):
    """Sampled strong-monotonicity / Lipschitz inequalities for ``F(x, .)``.

    Differences are drawn from the equality null space so that the check
    matches where PPG iterates live.
    """
    rng = np.random.default_rng(seed)
    from .sets import default_point

    x = default_point(spec.leader_set) if x is None else x
    basis = spec.equality_basis
    worst_mono, worst_lip = np.inf, 0.0
    for _ in range(samples):
        xs = spec.leader_set.project(x + rng.normal(size=spec.m))
        y = rng.normal(size=spec.n)
        dy = basis @ rng.normal(size=basis.shape[1])
        dF = spec.pg.F(xs, y + dy) - spec.pg.F(xs, y)
        nd2 = dy @ dy
        if nd2 == 0:
            continue
        worst_mono = min(worst_mono, dF @ dy / nd2)
        worst_lip = max(worst_lip, np.linalg.norm(dF) / np.sqrt(nd2))
    ok = worst_mono >= mu - 1e-9 and worst_lip <= L + 1e-9
    return {"ok": bool(ok), "min_ratio": float(worst_mono), "max_ratio": float(worst_lip)}


def pseudo_gradient(spec, x, y):
    x, y = _check_xy(spec, x, y)
    return spec.pg.F(x, y)


def pg_jacobians(spec, x, y):
    """Exact partial Jacobians ``(J1F, J2F)`` of the pseudo-gradient."""
    x, y = _check_xy(spec, x, y)
    return spec.pg.J1F(x, y), spec.pg.J2F(x, y)


def _leader_arg(spec, y):
    return spec.aggregate(y) if spec.leader_cost.aggregate else y


def leader_cost(spec, x, y):
    x, y = _check_xy(spec, x, y)
    return spec.leader_cost.value(x, _leader_arg(spec, y))


def leader_cost_grads(spec, x, y):
    """``(grad_1 phi, grad_2 phi)`` with the second gradient taken w.r.t. ``y``."""
    x, y = _check_xy(spec, x, y)
    gx, gv = spec.leader_cost.grads(x, _leader_arg(spec, y))
    if spec.leader_cost.aggregate:
        gy = np.concatenate([K.T @ gv for K in spec.aggregation])
        return gx, gy
    return gx, gv


def constants_for(spec, gamma):
    """Constants of ``spec`` with a different PPG step; does not raise on bad steps."""
    r = spec.report
    return Constants.from_moduli(r.mu, r.L_F, gamma, strict=False)
