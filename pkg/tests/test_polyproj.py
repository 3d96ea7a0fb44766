import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bighype.errors import Infeasible
from bighype.game import PolyhedronSpec
from bighype.oracles import fd_jacobian, oracle_projection
from bighype.polyproj import Projector, kkt_jacobians, kkt_jacobians_full, project


def random_poly(rng, n=3, m=2, p=5, r=1):
    """Polyhedron with y = 0 strictly feasible for |x| <= 1."""
    A = rng.normal(size=(p, n))
    G = 0.3 * rng.normal(size=(p, m)) / np.sqrt(m)
    b = 1.0 + np.abs(G).sum(axis=1)
    C = rng.normal(size=(r, n)) if r else None
    H = 0.1 * rng.normal(size=(r, m)) if r else None
    d = np.zeros(r) if r else None
    return PolyhedronSpec.build(n, m, A=A, b=b, G=G, C=C, d=d, H=H)


def assert_kkt(P, x, y, res, tol=1e-8):
    r = res.residuals
    assert r["stationarity"] <= tol * (1 + np.linalg.norm(y))
    assert r["primal_ineq"] <= tol
    assert r["primal_eq"] <= tol
    assert r["complementarity"] <= tol
    assert np.all(res.lambda_star >= 0)


def test_interior_point_is_fixed():
    P = PolyhedronSpec.box([0, 0], [1, 1], 1)
    res = project(P, [0.0], [0.5, 0.5])
    assert res.z_star == pytest.approx([0.5, 0.5])
    assert res.lambda_star == pytest.approx([0, 0, 0, 0])
    J = kkt_jacobians(P, [0.0], res)
    assert J.J_y == pytest.approx(np.eye(2))
    assert J.J_x == pytest.approx(np.zeros((2, 1)))


def test_clamped_scalar():
    P = PolyhedronSpec.box([0], [1], 1)
    res = project(P, [0.0], [2.0])
    assert res.z_star == pytest.approx([1.0])
    # scalar KKT: lambda = y - z = 1 on the upper row
    assert res.lambda_star == pytest.approx([1.0, 0.0])
    assert res.active_set == (0,)
    J = kkt_jacobians(P, [0.0], res)
    assert J.strict_complementarity
    assert J.J_y == pytest.approx(np.zeros((1, 1)))
    assert J.J_x == pytest.approx(np.zeros((1, 1)))


def test_equality_line():
    P = PolyhedronSpec.build(2, 1, C=[[1.0, 1.0]], d=[1.0], H=[[0.0]])
    res = project(P, [0.0], [0.0, 0.0])
    assert res.z_star == pytest.approx([0.5, 0.5])
    J = kkt_jacobians(P, [0.0], res)
    assert J.J_y == pytest.approx(np.eye(2) - 0.5 * np.ones((2, 2)))
    assert J.J_x == pytest.approx(np.zeros((2, 1)))
    fd = fd_jacobian(lambda y: project(P, [0.0], y).z_star, np.zeros(2))
    assert np.abs(fd - J.J_y).max() <= 1e-6


def test_equality_only_constant_jacobians(rng):
    P = random_poly(rng, p=0, r=2)
    ref = None
    for _ in range(10):
        x, y = rng.uniform(-1, 1, 2), rng.normal(size=3)
        J = kkt_jacobians(P, x, project(P, x, y))
        if ref is None:
            ref = J
        assert np.abs(J.J_y - ref.J_y).max() <= 1e-12
        assert np.abs(J.J_x - ref.J_x).max() <= 1e-12
    CCt = P.C @ P.C.T
    T = P.C.T @ np.linalg.inv(CCt)
    assert ref.J_y == pytest.approx(np.eye(3) - T @ P.C, abs=1e-12)
    assert ref.J_x == pytest.approx(T @ P.H, abs=1e-12)


def test_matches_independent_projection(rng):
    for _ in range(20):
        P = random_poly(rng)
        x, y = rng.uniform(-1, 1, 2), 3 * rng.normal(size=3)
        res = project(P, x, y)
        assert_kkt(P, x, y, res)
        z_oracle, _, _ = oracle_projection(P, x, y)
        assert res.z_star == pytest.approx(z_oracle, abs=1e-8)


def test_admm_fallback_polishes(rng):
    P = random_poly(rng, n=4, p=8, r=0)
    proj = Projector(P, max_refine=1)
    x = np.zeros(2)
    y = 5 * rng.normal(size=4)
    res = proj.project(x, y)
    assert proj.stats["admm"] >= 1 or res.method == "active_set"
    assert_kkt(P, x, y, res)
    assert res.z_star == pytest.approx(oracle_projection(P, x, y)[0], abs=1e-8)


def test_empty_polyhedron_is_infeasible():
    # z <= -1 and z >= 1
    P = PolyhedronSpec.build(1, 1, A=[[1.0], [-1.0]], b=[-1.0, -1.0])
    with pytest.raises(Infeasible):
        project(P, [0.0], [0.0])


def test_warm_start_reuses_active_set(rng):
    P = random_poly(rng)
    proj = Projector(P)
    y = 3 * rng.normal(size=3)
    proj.project(np.zeros(2), y)
    proj.project(np.zeros(2), y + 1e-9)
    assert proj.stats["warm_hits"] == 2


def test_reduced_matches_full_kkt(rng):
    for _ in range(10):
        P = random_poly(rng)
        x, y = rng.uniform(-1, 1, 2), 3 * rng.normal(size=3)
        res = project(P, x, y)
        a, b = kkt_jacobians(P, x, res), kkt_jacobians_full(P, x, res)
        assert a.J_y == pytest.approx(b.J_y, abs=1e-9)
        assert a.J_x == pytest.approx(b.J_x, abs=1e-9)


def _stable_active_set(P, x, y, res):
    for k in range(len(y)):
        for s in (1e-6, -1e-6):
            e = np.zeros_like(y)
            e[k] = s
            if project(P, x, y + e).active_set != res.active_set:
                return False
    for k in range(len(x)):
        for s in (1e-6, -1e-6):
            e = np.zeros_like(x)
            e[k] = s
            if project(P, x + e, y).active_set != res.active_set:
                return False
    return True


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_jacobians_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    P = random_poly(rng)
    x, y = rng.uniform(-1, 1, 2), 3 * rng.normal(size=3)
    res = project(P, x, y)
    if res.degenerate or not _stable_active_set(P, x, y, res):
        return
    J = kkt_jacobians(P, x, res)
    Jy = fd_jacobian(lambda yy: project(P, x, yy).z_star, y)
    Jx = fd_jacobian(lambda xx: project(P, xx, y).z_star, x)
    assert np.abs(J.J_y - Jy).max() <= 1e-5
    assert np.abs(J.J_x - Jx).max() <= 1e-5
    assert np.linalg.norm(J.J_y, 2) <= 1 + 1e-8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_idempotent_and_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    P = random_poly(rng)
    x = rng.uniform(-1, 1, 2)
    proj = Projector(P)
    for _ in range(4):
        y, y2 = 3 * rng.normal(size=(2, 3))
        z, z2 = proj.project(x, y).z_star, proj.project(x, y2).z_star
        assert proj.project(x, z).z_star == pytest.approx(z, abs=1e-8)
        assert np.linalg.norm(z - z2) <= np.linalg.norm(y - y2) + 1e-8


def test_same_active_set_same_jacobians(rng):
    P = PolyhedronSpec.box([0, 0], [1, 1], 1)
    r1 = project(P, [0.0], [2.0, 0.3])
    r2 = project(P, [0.0], [3.0, 0.6])
    assert r1.strict == r2.strict
    j1, j2 = kkt_jacobians(P, [0.0], r1), kkt_jacobians(P, [0.0], r2)
    assert np.array_equal(j1.J_y, j2.J_y) and np.array_equal(j1.J_x, j2.J_x)


def test_degenerate_point_flagged():
    P = PolyhedronSpec.box([0], [1], 1)
    res = project(P, [0.0], [1.0])
    assert res.degenerate == (0,)
    J = kkt_jacobians(P, [0.0], res)
    assert not J.strict_complementarity
