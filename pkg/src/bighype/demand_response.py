"""Day-ahead demand-response pricing game.

A distribution operator (leader) sets per-period prices ``h(pbar) = c1 * pbar + c0``
and capacity shares ``theta`` for ``N`` buildings (followers).  Building ``i``
chooses purchased power ``p``, battery charge ``pc`` and discharge ``pd``
and the battery state of charge ``soc``, paying

    f_i = h(pbar)' p_i + lambda_b (|pc_i|^2 + |pd_i|^2).

Battery model (lossless): ``soc_t = soc_{t-1} + dt (pc_t - pd_t)`` starting
from ``soc_init`` and returning to it at the end of the day, with
``0 <= soc <= capacity`` and charge/discharge limits.  The shared grid limit
``sum_i p_i <= g`` is split into local caps ``p_i <= theta_i g`` with
``theta`` on a simplex owned by the leader.

The state of charge is stored divided by ``soc_scale``, which keeps the
pseudo-gradient well conditioned on the equality-constrained subspace.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigInvalid
from .game import GameSpec, LeaderCost, PolyhedronSpec, PseudoGradient, monotonicity_constants
from .sets import Box, Product, Simplex


@dataclass
class DRConfig:
    N: int = 3
    Lambda: int = 8
    delta_tau: float | None = None
    c0_bounds: tuple = (0.10, 0.30)
    c1_bounds: tuple = (0.004, 0.006)
    lambda_b: float = 0.0025
    capacity_factor: float = 1.5
    g: list | None = None
    demand: list | None = None
    demand_scale: tuple = (5.0, 15.0)
    battery_capacity: float = 20.0
    charge_max: float = 5.0
    discharge_max: float = 5.0
    soc_init: float = 0.5
    soc_scale: float | None = None
    theta_margin: float = 0.1
    average_caps: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid({k: "unknown field" for k in sorted(unknown)})
        kw = dict(data)
        for k in ("c0_bounds", "c1_bounds", "demand_scale"):
            if k in kw and kw[k] is not None:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
            elif isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    @property
    def dt(self):
        return 24.0 / self.Lambda if self.delta_tau is None else float(self.delta_tau)


def demand_profiles(N, Lambda, scale=(5.0, 15.0), seed=0):
    """Seeded double-peak daily load per building (kW), shape ``N x Lambda``."""
    rng = np.random.default_rng(seed)
    hours = (np.arange(Lambda) + 0.5) * 24.0 / Lambda
    shape = 0.6 + 0.5 * np.exp(-((hours - 8.0) ** 2) / 8.0) + 0.8 * np.exp(-((hours - 19.0) ** 2) / 12.5)
    shape /= shape.mean()
    base = rng.uniform(scale[0], scale[1], size=N)
    noise = np.clip(1.0 + 0.1 * rng.normal(size=(N, Lambda)), 0.2, None)
    return base[:, None] * shape[None, :] * noise


def _check(cfg):
    err = {}
    if not (isinstance(cfg.N, (int, np.integer)) and cfg.N > 0):
        err["N"] = "must be a positive integer"
    if not (isinstance(cfg.Lambda, (int, np.integer)) and cfg.Lambda > 0):
        err["Lambda"] = "must be a positive integer"
    if err:
        raise ConfigInvalid(err)
    if not cfg.dt > 0:
        err["delta_tau"] = "must be positive"
    for name in ("c0_bounds", "c1_bounds"):
        lo, hi = getattr(cfg, name)
        if not (0 <= lo <= hi):
            err[name] = "need 0 <= lower <= upper"
    if cfg.c1_bounds[0] <= 0:
        err["c1_bounds"] = "lower marginal price must be positive (strong monotonicity)"
    if not cfg.lambda_b > 0:
        err["lambda_b"] = "must be positive"
    if cfg.battery_capacity < 0 or cfg.charge_max < 0 or cfg.discharge_max < 0:
        err["battery"] = "capacity and power limits must be nonnegative"
    if not 0 <= cfg.soc_init <= 1:
        err["soc_init"] = "fraction of capacity in [0, 1]"
    if cfg.demand is not None:
        d = np.asarray(cfg.demand, float)
        if d.shape != (cfg.N, cfg.Lambda):
            err["demand"] = f"expected shape {(cfg.N, cfg.Lambda)}"
        elif np.any(d < 0):
            err["demand"] = "must be nonnegative"
    if cfg.g is not None:
        g = np.asarray(cfg.g, float)
        if g.shape != (cfg.Lambda,) or np.any(g < 0):
            err["g"] = f"expected {cfg.Lambda} nonnegative values"
    if not cfg.capacity_factor > 0:
        err["capacity_factor"] = "must be positive"
    if err:
        raise ConfigInvalid(err)


class DRLayout:
    """Index helper for ``x = (c0, c1, theta)`` and ``y_i = (p, pc, pd, soc)``."""

    def __init__(self, N, Lambda):
        L = Lambda
        self.N, self.L = N, L
        self.m = 2 * L + N
        self.ni = 4 * L
        self.c0 = slice(0, L)
        self.c1 = slice(L, 2 * L)
        self.theta = slice(2 * L, 2 * L + N)
        self.p = slice(0, L)
        self.pc = slice(L, 2 * L)
        self.pd = slice(2 * L, 3 * L)
        self.soc = slice(3 * L, 4 * L)

    def unpack_y(self, y):
        return y.reshape(self.N, self.ni)


class DemandResponsePG(PseudoGradient):
    """``F_p = c1 (pbar + p_i) + c0``, ``F_pc = 2 lambda_b pc``, ``F_pd = 2 lambda_b pd``, ``F_soc = 0``.

    Affine in ``y`` for fixed ``x``; all Jacobians are exact.
    """

    affine = True

    def __init__(self, lay, lambda_b):
        super().__init__([lay.ni] * lay.N, lay.m)
        self.lay = lay
        self.lambda_b = float(lambda_b)

    def _pbar(self, y):
        return self.lay.unpack_y(y)[:, self.lay.p].sum(axis=0)

    def F_i(self, i, x, y):
        lay = self.lay
        yi = y[self.block(i)]
        c0, c1 = x[lay.c0], x[lay.c1]
        out = np.zeros(lay.ni)
        out[lay.p] = c1 * (self._pbar(y) + yi[lay.p]) + c0
        out[lay.pc] = 2 * self.lambda_b * yi[lay.pc]
        out[lay.pd] = 2 * self.lambda_b * yi[lay.pd]
        return out

    def F(self, x, y):
        return np.concatenate([self.F_i(i, x, y) for i in range(self.lay.N)])

    def own_jacobian(self, i, x, y=None):
        lay = self.lay
        d = np.zeros(lay.ni)
        d[lay.p] = x[lay.c1]
        d[lay.pc] = 2 * self.lambda_b
        d[lay.pd] = 2 * self.lambda_b
        return np.diag(d)

    def aggregate_jacobian(self, i, x, y=None):
        lay = self.lay
        B = np.zeros((lay.ni, lay.L))
        B[lay.p, :] = np.diag(x[lay.c1])
        return B

    def J2F_i(self, i, x, y=None):
        lay = self.lay
        row = np.zeros((lay.ni, self.n))
        B = self.aggregate_jacobian(i, x)
        for j in range(lay.N):
            row[:, self.block(j)][:, lay.p] = B[:, :]
        row[:, self.block(i)] += self.own_jacobian(i, x)
        return row

    def J2F(self, x, y=None):
        return np.vstack([self.J2F_i(i, x) for i in range(self.lay.N)])

    def J1F_i(self, i, x, y):
        lay = self.lay
        yi = y[self.block(i)]
        out = np.zeros((lay.ni, lay.m))
        out[lay.p, lay.c0] = np.eye(lay.L)
        out[lay.p, lay.c1] = np.diag(self._pbar(y) + yi[lay.p])
        return out

    def J1F(self, x, y):
        return np.vstack([self.J1F_i(i, x, y) for i in range(self.lay.N)])


class RevenueLeaderCost(LeaderCost):
    """``phi = -(c1 * pbar + c0)' pbar`` as a function of ``(x, pbar)``."""

    aggregate = True

    def __init__(self, lay):
        self.lay = lay

    def value(self, x, pbar):
        lay = self.lay
        return float(-(x[lay.c1] * pbar + x[lay.c0]) @ pbar)

    def grads(self, x, pbar):
        lay = self.lay
        gx = np.zeros(lay.m)
        gx[lay.c0] = -pbar
        gx[lay.c1] = -pbar * pbar
        gv = -(2 * x[lay.c1] * pbar + x[lay.c0])
        return gx, gv


@dataclass
class DRInstance:
    spec: GameSpec
    config: DRConfig
    layout: DRLayout
    demand: np.ndarray
    g: np.ndarray
    theta_min: np.ndarray
    soc_scale: float
    self_check: dict = field(default_factory=dict)


def _polyhedron(cfg, lay, i, d_i, g, ss):
    L, n, m = lay.L, lay.ni, lay.m
    dt = cfg.dt
    eye = np.eye(L)
    # equalities: balance, dynamics, end-of-day state
    C = np.zeros((2 * L + 1, n))
    dvec = np.zeros(2 * L + 1)
    C[:L, lay.p] = eye
    C[:L, lay.pc] = -eye
    C[:L, lay.pd] = eye
    dvec[:L] = d_i
    s0 = cfg.soc_init * cfg.battery_capacity
    for t in range(L):
        r = L + t
        C[r, 3 * L + t] = ss
        if t > 0:
            C[r, 3 * L + t - 1] = -ss
        C[r, L + t] = -dt
        C[r, 2 * L + t] = dt
    dvec[L] = s0
    C[2 * L, 4 * L - 1] = ss
    dvec[2 * L] = s0
    # inequalities
    rows, rhs, G_rows = [], [], []

    def bound(sl, lo, hi, cap_from_theta=False):
        for t in range(L):
            e = np.zeros(n)
            e[sl.start + t] = -1.0
            rows.append(e)
            rhs.append(-lo)
            G_rows.append(np.zeros(m))
        for t in range(L):
            e = np.zeros(n)
            e[sl.start + t] = 1.0
            rows.append(e)
            gr = np.zeros(m)
            if cap_from_theta:
                rhs.append(0.0)
                gr[2 * L + i] = g[t]
            else:
                rhs.append(hi)
            G_rows.append(gr)

    bound(lay.p, 0.0, None, cap_from_theta=True)
    bound(lay.pc, 0.0, cfg.charge_max)
    bound(lay.pd, 0.0, cfg.discharge_max)
    bound(lay.soc, 0.0, cfg.battery_capacity / ss)
    return PolyhedronSpec.build(n, m, A=np.array(rows), b=np.array(rhs), G=np.array(G_rows), C=C, d=dvec)


def dr_moduli(spec, cfg, lay):
    """``(mu, L_F)`` valid for every price vector in the leader set.

    The quadratic form of ``J2F`` grows with each ``c1_t``, so its minimum over
    the equality null space is attained at the lowest marginal price; the
    spectral norm is bounded at the highest one.
    """
    lo, hi = cfg.c1_bounds
    x_lo = np.zeros(lay.m)
    x_lo[lay.c1] = lo
    x_hi = np.zeros(lay.m)
    x_hi[lay.c1] = hi
    mu, _ = monotonicity_constants(spec.pg.J2F(x_lo), spec.equality_basis)
    _, L = monotonicity_constants(spec.pg.J2F(x_hi))
    return mu, L


def build_instance(cfg):
    """Build the game and run the builder self-checks; raises :class:`ConfigInvalid`."""
    if isinstance(cfg, dict):
        cfg = DRConfig.from_dict(cfg)
    _check(cfg)
    lay = DRLayout(cfg.N, cfg.Lambda)
    L, N = lay.L, lay.N
    if cfg.demand is not None:
        d = np.asarray(cfg.demand, float)
    else:
        d = demand_profiles(N, L, cfg.demand_scale, cfg.seed)
    g = np.asarray(cfg.g, float) if cfg.g is not None else cfg.capacity_factor * d.sum(axis=0)
    if np.any(g <= 0) and np.any(d > 0):
        raise ConfigInvalid({"g": "grid capacity must be positive where there is demand"})
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(g > 0, d / g, 0.0)
    theta_min = (1.0 + cfg.theta_margin) * share.max(axis=1)
    if theta_min.sum() > 1.0 + 1e-12:
        raise ConfigInvalid(
            {"capacity_factor": f"grid too small: demand-feasible shares sum to {theta_min.sum():.3f} > 1"}
        )
    ss = cfg.soc_scale if cfg.soc_scale is not None else cfg.dt * cfg.Lambda
    polys = [_polyhedron(cfg, lay, i, d[i], g, ss) for i in range(N)]
    lo0, hi0 = cfg.c0_bounds
    lo1, hi1 = cfg.c1_bounds
    cap0 = L * (lo0 + hi0) / 2 if cfg.average_caps else None
    cap1 = L * (lo1 + hi1) / 2 if cfg.average_caps else None
    X = Product(
        (
            Box(np.full(L, lo0), np.full(L, hi0), cap0),
            Box(np.full(L, lo1), np.full(L, hi1), cap1),
            Simplex(N, lower=theta_min),
        )
    )
    pg = DemandResponsePG(lay, cfg.lambda_b)
    Ks = []
    for _ in range(N):
        K = np.zeros((L, lay.ni))
        K[:, lay.p] = np.eye(L)
        Ks.append(K)
    leader = RevenueLeaderCost(lay)
    proto = GameSpec(pg, polys, leader, X, "lqg", Ks, mu=1.0, L_F=1.0)
    mu, LF = dr_moduli(proto, cfg, lay)
    if mu <= 1e-12:
        raise ConfigInvalid({"c1_bounds": f"game not strongly monotone (mu = {mu:.3e})"})
    spec = GameSpec(pg, polys, leader, X, "lqg", Ks, mu=mu, L_F=LF, meta={"kind": "demand_response"})
    inst = DRInstance(spec, cfg, lay, d, g, theta_min, ss)
    inst.self_check = builder_self_check(inst)
    if not inst.self_check["ok"]:
        raise ConfigInvalid({"self_check": str(inst.self_check)})
    return inst


# Base step 3e-6 (k+1)^-0.51 times a multiplier calibrated on the default
# instance: 3 stops on the relative-change rule before prices move, 100
# oscillates; 30 converges under all three tolerance presets.
ALPHA_BASE = 3e-6
ALPHA_MULTIPLIER = 30.0
ALPHA_POWER = 0.51


def default_alpha(multiplier=ALPHA_MULTIPLIER):
    return f"power:{ALPHA_BASE * multiplier:g}:{ALPHA_POWER:g}"


def build(cfg):
    """Return the :class:`GameSpec` of a demand-response configuration."""
    inst = build_instance(cfg)
    inst.spec.meta.update(instance=inst, config=inst.config.to_dict(), default_alpha=default_alpha())
    return inst.spec


def feasible_point(inst, x=None):
    """Buy the demand outright with idle batteries at the initial charge."""
    lay, cfg = inst.layout, inst.config
    y = np.zeros(inst.spec.n)
    for i in range(lay.N):
        b = inst.spec.block(i)
        yi = np.zeros(lay.ni)
        yi[lay.p] = inst.demand[i]
        yi[lay.soc] = cfg.soc_init * cfg.battery_capacity / inst.soc_scale
        y[b] = yi
    return y


def builder_self_check(inst):
    spec = inst.spec
    lay = inst.layout
    x = np.zeros(lay.m)
    x[lay.c0] = inst.config.c0_bounds[0]
    x[lay.c1] = inst.config.c1_bounds[0]
    x[lay.theta] = inst.theta_min  # tightest caps
    y = feasible_point(inst)
    feas = all(P.contains(x, y[spec.block(i)], tol=1e-9) for i, P in enumerate(spec.polyhedra))
    report = spec.report
    return {
        "ok": bool(feas and report.mu > 0 and report.constants.contractive),
        "feasible_point": bool(feas),
        "mu": report.mu,
        "L_F": report.L_F,
        "eta": report.constants.eta,
        "theta_min_sum": float(inst.theta_min.sum()),
    }


def capacity_decomposition_check(spec, x, y, tol=1e-8):
    """Verify that local caps plus the share simplex imply ``sum_i p_i <= g``."""
    inst = spec.meta["instance"]
    lay = inst.layout
    P = lay.unpack_y(np.asarray(y, float))[:, lay.p]
    theta = np.asarray(x, float)[lay.theta]
    g = inst.g
    local_slack = theta[:, None] * g[None, :] - P
    pbar = P.sum(axis=0)
    slack = g - pbar
    local_ok = bool(local_slack.min() >= -tol)
    leader_ok = bool(theta.sum() <= 1.0 + tol and theta.min() >= -tol)
    coupled_ok = bool(slack.min() >= -tol * max(1.0, len(theta)))
    return {
        "local_ok": local_ok,
        "leader_ok": leader_ok,
        "coupled_ok": coupled_ok,
        "implication_holds": bool(coupled_ok or not (local_ok and leader_ok)),
        "worst_period": int(np.argmin(slack)),
        "worst_slack": float(slack.min()),
    }


def revenue(inst, x, y):
    """Direct scalar evaluation of the operator's revenue."""
    lay = inst.layout
    P = lay.unpack_y(np.asarray(y, float))[:, lay.p]
    total = 0.0
    for t in range(lay.L):
        pb = sum(P[i, t] for i in range(lay.N))
        total += (x[lay.c1][t] * pb + x[lay.c0][t]) * pb
    return total
