import numpy as np
import pytest

from bighype.demand_response import (
    DRConfig,
    build,
    build_instance,
    capacity_decomposition_check,
    default_alpha,
    feasible_point,
    revenue,
)
from bighype.errors import ConfigInvalid
from bighype.game import leader_cost
from bighype.oracles import sample_leader_set
from bighype.polyproj import Projector
from bighype.sensitivity import SensitivityState, aggregative_sensitivity_step, ppg_jacobian_blocks, sensitivity_step


@pytest.fixture(scope="module")
def dr():
    return build(DRConfig(N=3, Lambda=8, seed=2))


def random_feasible(spec, x, rng):
    projs = [Projector(P) for P in spec.polyhedra]
    return np.concatenate([pr.project(x, 20 * rng.normal(size=P.n)).z_star for pr, P in zip(projs, spec.polyhedra)])


def test_layout_and_leader_set(dr):
    lay = dr.meta["instance"].layout
    assert dr.m == 2 * 8 + 3 and lay.m == dr.m
    assert dr.n == 3 * 4 * 8
    assert dr.report.mu > 0 and dr.constants.contractive
    assert dr.meta["default_alpha"] == default_alpha() == "power:9e-05:0.51"


def test_single_building_cap_is_grid():
    inst = build_instance(DRConfig(N=1, Lambda=4, seed=0))
    x = sample_leader_set(inst.spec.leader_set, np.random.default_rng(0))
    assert x[inst.layout.theta] == pytest.approx([1.0])
    P = inst.spec.polyhedra[0]
    lay = inst.layout
    # upper p rows read p_t <= theta * g_t
    rows = np.where(P.A[:, lay.p].max(axis=1) > 0)[0]
    assert (P.b[rows] + P.G[rows] @ x) == pytest.approx(inst.g)


def test_feasible_point_and_self_check():
    inst = build_instance(DRConfig(N=2, Lambda=6, battery_capacity=0.0, charge_max=0.0, discharge_max=0.0))
    assert inst.self_check["ok"] and inst.self_check["feasible_point"]
    y = feasible_point(inst)
    lay = inst.layout
    assert lay.unpack_y(y)[:, lay.p] == pytest.approx(inst.demand)


def test_invalid_config_messages():
    with pytest.raises(ConfigInvalid) as exc:
        build_instance(DRConfig(N=0))
    assert "N" in exc.value.errors
    with pytest.raises(ConfigInvalid) as exc:
        build_instance(DRConfig(c1_bounds=(0.006, 0.004)))
    assert "c1_bounds" in exc.value.errors
    with pytest.raises(ConfigInvalid):
        DRConfig.from_dict({"N": 3, "colour": "red"})


def test_capacity_decomposition_tight(dr):
    inst = dr.meta["instance"]
    lay = inst.layout
    x = sample_leader_set(dr.leader_set, np.random.default_rng(1))
    x[lay.theta] = 1.0 / lay.N
    Y = np.zeros((lay.N, lay.ni))
    Y[:, lay.p] = inst.g / lay.N
    rep = capacity_decomposition_check(dr, x, Y.ravel())
    assert rep["worst_slack"] == pytest.approx(0.0, abs=1e-12)
    assert rep["coupled_ok"]


def test_capacity_decomposition_random(dr):
    rng = np.random.default_rng(5)
    inst = dr.meta["instance"]
    for _ in range(100):
        x = sample_leader_set(dr.leader_set, rng)
        y = random_feasible(dr, x, rng)
        rep = capacity_decomposition_check(dr, x, y)
        assert rep["local_ok"] and rep["implication_holds"]
        P = inst.layout.unpack_y(y)[:, inst.layout.p]
        assert np.all(P.sum(axis=0) <= inst.g + 1e-8)


def test_revenue_identity(dr):
    rng = np.random.default_rng(3)
    inst = dr.meta["instance"]
    for _ in range(10):
        x = sample_leader_set(dr.leader_set, rng)
        y = rng.uniform(0, 10, dr.n)
        r = revenue(inst, x, y)
        assert leader_cost(dr, x, y) == pytest.approx(-r, rel=1e-12)


def test_battery_dynamics_rows(dr):
    rng = np.random.default_rng(4)
    inst = dr.meta["instance"]
    lay, cfg = inst.layout, inst.config
    x = sample_leader_set(dr.leader_set, rng)
    y = random_feasible(dr, x, rng)
    for yi in lay.unpack_y(y):
        soc = np.concatenate([[cfg.soc_init * cfg.battery_capacity], inst.soc_scale * yi[lay.soc]])
        flow = cfg.dt * (yi[lay.pc] - yi[lay.pd])
        assert np.diff(soc) == pytest.approx(flow, abs=1e-8)
        assert soc[-1] == pytest.approx(soc[0], abs=1e-8)


def test_aggregative_path_equivalence(dr):
    rng = np.random.default_rng(6)
    x = sample_leader_set(dr.leader_set, rng)
    y = random_feasible(dr, x, rng)
    s0 = rng.normal(size=(dr.n, dr.m))
    dense = sensitivity_step(SensitivityState.start(dr, s0), ppg_jacobian_blocks(dr, x, y))
    fast = aggregative_sensitivity_step(SensitivityState.start(dr, s0), dr, x, y)
    assert np.linalg.norm(fast.s - dense.s) <= 1e-9
