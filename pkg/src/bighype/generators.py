"""Seeded random instances.

Follower blocks are diagonally dominant, so every generated game is strongly
monotone; constraint right-hand sides keep ``y = 0`` strictly feasible for
every leader point in the unit box.
"""

from __future__ import annotations

import numpy as np

from .game import GameSpec, PolyhedronSpec, QuadCostSpec, QuadraticLeaderCost, monotonicity_constants
from .sets import Box


def _spd(rng, n, lo=1.0):
    A = rng.normal(size=(n, n))
    return A @ A.T / n + lo * np.eye(n)


def _box_poly(rng, n, m, width=1.0, extra_rows=1, shift=0.4):
    """Box ``|y| <= width`` tilted by ``G x`` plus random half-spaces.

    Every row has right-hand side at least ``width - shift`` (resp.
    ``0.5 - shift``) on the unit leader box, so ``y = 0`` is an interior point.
    """
    eye = np.eye(n)
    A = np.vstack([eye, -eye, rng.normal(size=(extra_rows, n))])
    p = A.shape[0]
    b = np.concatenate([np.full(2 * n, width), np.full(extra_rows, 0.5)])
    G = rng.normal(size=(p, m))
    G *= shift / np.maximum(np.abs(G).sum(axis=1, keepdims=True), 1e-12)
    return PolyhedronSpec.build(n, m, A=A, b=b, G=G)


def _coupling_scale(Qs, E, target=0.5):
    """Scale for the off-diagonal part so that ``mu >= target * min eig(Q)``."""
    qmin = min(np.linalg.eigvalsh(Q)[0] for Q in Qs)
    sym = 0.5 * (E + E.T)
    rad = np.abs(np.linalg.eigvalsh(sym)).max() if sym.size else 0.0
    if rad == 0:
        return 1.0
    return min(1.0, (1.0 - target) * qmin / rad)


def _leader(rng, m, nv, strong=0.5):
    Pxx = _spd(rng, m, strong)
    Pxv = 0.3 * rng.normal(size=(m, nv))
    B = rng.normal(size=(nv, nv)) / np.sqrt(nv)
    Pvv = 0.2 * B @ B.T
    return QuadraticLeaderCost(m, nv, Pxx=Pxx, Pxv=Pxv, Pvv=Pvv, qx=rng.normal(size=m), qv=rng.normal(size=nv))


def random_lqg(N=3, n=2, m=4, seed=0, extra_rows=1, coupling=1.0, gain=1.5):
    """Linear-quadratic game with box-plus-halfspace polyhedra on the leader box ``[-1, 1]^m``."""
    rng = np.random.default_rng(seed)
    sizes = [n] * N if np.isscalar(n) else list(n)
    Qs = [_spd(rng, ni) for ni in sizes]
    nt = sum(sizes)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    E = np.zeros((nt, nt))
    for i in range(N):
        for j in range(N):
            if i != j:
                E[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = coupling * rng.normal(size=(sizes[i], sizes[j]))
    E *= _coupling_scale(Qs, E)
    costs = []
    for i, ni in enumerate(sizes):
        blocks = {j: E[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] for j in range(N) if j != i}
        costs.append(QuadCostSpec(Q=Qs[i], E0=gain * rng.normal(size=(ni, m)), e=0.5 * rng.normal(size=ni), E=blocks))
    polys = [_box_poly(rng, ni, m, extra_rows=extra_rows) for ni in sizes]
    leader = _leader(rng, m, nt)
    spec = GameSpec.from_costs(costs, polys, leader, Box(-np.ones(m), np.ones(m)), variant="lqg")
    spec.meta.update(generator="lqg", seed=seed)
    return spec


def random_lqsg(N=3, n=3, m=2, r=1, seed=0, strong=1.0, coupling=1.0, bound=10.0):
    """Equality-constrained LQ game with a strongly convex reduced leader objective."""
    rng = np.random.default_rng(seed)
    sizes = [n] * N
    Qs = [_spd(rng, n) for _ in range(N)]
    nt = n * N
    E = coupling * rng.normal(size=(nt, nt))
    for i in range(N):
        E[i * n:(i + 1) * n, i * n:(i + 1) * n] = 0.0
    E *= _coupling_scale(Qs, E)
    costs = []
    for i in range(N):
        blocks = {j: E[i * n:(i + 1) * n, j * n:(j + 1) * n] for j in range(N) if j != i}
        costs.append(QuadCostSpec(Q=Qs[i], E0=rng.normal(size=(n, m)), e=rng.normal(size=n), E=blocks))
    polys = [
        PolyhedronSpec.build(n, m, C=rng.normal(size=(r, n)), d=rng.normal(size=r), H=rng.normal(size=(r, m)))
        for _ in range(N)
    ]
    leader = _leader(rng, m, nt, strong)
    spec = GameSpec.from_costs(costs, polys, leader, Box(-bound * np.ones(m), bound * np.ones(m)), variant="lqsg")
    # make the reduced objective strongly convex if the draw was unlucky
    from .oracles import lqsg_affine_map, reduced_quadratic

    W, w = lqsg_affine_map(spec)
    H, _ = reduced_quadratic(spec, W, w)
    lo = np.linalg.eigvalsh(H)[0]
    if lo < strong:
        lc = leader
        leader = QuadraticLeaderCost(
            m, nt, Pxx=lc.Pxx + (strong - lo) * np.eye(m), Pxv=lc.Pxv, Pvv=lc.Pvv, qx=lc.qx, qv=lc.qv
        )
        spec = spec.replace(leader_cost=leader)
    spec.meta.update(generator="lqsg", seed=seed)
    return spec


def random_aggregative(N=4, n=2, m=3, nbar=2, seed=0, b=0.5, variant="lqg"):
    """Aggregative LQ game: ``F_i = Q_i y_i + b K_i' sigma(y) + E_i0 x + e_i``.

    The coupling ``b K_i' K_j`` makes the pseudo-gradient monotone for any
    ``N``.  The leader objective depends on ``(x, sigma(y))``.
    """
    rng = np.random.default_rng(seed)
    Ks = [rng.normal(size=(nbar, n)) / np.sqrt(N) for _ in range(N)]
    costs = [
        QuadCostSpec(Q=_spd(rng, n), E0=rng.normal(size=(n, m)), e=0.5 * rng.normal(size=n), B=b * K.T) for K in Ks
    ]
    polys = [_box_poly(rng, n, m, extra_rows=0) for _ in range(N)]
    lc = _leader(rng, m, nbar)
    leader = QuadraticLeaderCost(m, nbar, Pxx=lc.Pxx, Pxv=lc.Pxv, Pvv=lc.Pvv, qx=lc.qx, qv=lc.qv, aggregate=True)
    spec = GameSpec.from_costs(
        costs, polys, leader, Box(-np.ones(m), np.ones(m)), variant=variant, aggregation=Ks
    )
    spec.meta.update(generator="aggregative", seed=seed)
    return spec


def check_generated(spec):
    """``mu`` of a generated LQ game, recomputed from its assembled matrix."""
    return monotonicity_constants(spec.pg.M)[0]
