import numpy as np
import pytest

from bighype.errors import DimensionMismatch, ScheduleContractViolation
from bighype.game import GameSpec, PolyhedronSpec, QuadCostSpec, QuadraticLeaderCost
from bighype.oracles import lqsg_affine_map, reduced_quadratic
from bighype.outer import (
    TRACE_COLUMNS,
    RunOptions,
    Schedule,
    Schedules,
    backoff_beta,
    check_schedules,
    default_schedules,
    hypergradient,
    inner_loop,
    lqsg_alpha,
    outer_step,
    preset,
    run,
)
from bighype.sets import Box


def test_schedule_parse_and_values():
    s = Schedule.parse("power:2:0.5")
    assert s(0) == 2.0 and s(3) == pytest.approx(1.0)
    assert Schedule.parse("const:0.3")(10) == 0.3
    assert str(Schedule.parse("power:3e-06:0.51")) == "power:3e-06:0.51"
    for bad in ("power:1", "const:1:2", "linear:1", ""):
        with pytest.raises(ValueError):
            Schedule.parse(bad)


def test_presets():
    assert preset("small") == (0.002, 25.0)
    assert preset("large") == (0.1, 500.0)
    with pytest.raises(ValueError):
        preset("huge")


def test_contract_exponent_window():
    with pytest.raises(ScheduleContractViolation):
        check_schedules("lqg", Schedules.make(alpha="power:1:0.4"))
    check_schedules("lqg", Schedules.make(alpha="power:1:0.51"))
    with pytest.raises(ScheduleContractViolation):
        check_schedules("general", Schedules.make(alpha="const:1"))
    with pytest.raises(ScheduleContractViolation):
        check_schedules("lqg", Schedules.make(beta="const:0.5"))
    # exponents must sum to more than one
    with pytest.raises(ScheduleContractViolation):
        check_schedules("lqg", Schedules.make(alpha="power:1:0.51", sigma_y="power:1:0.4"))


def test_contract_lqsg():
    check_schedules("lqsg", Schedules.make(alpha="const:0.1", beta="const:0.5"))
    check_schedules("lqsg", Schedules.make(alpha="const:0.1", beta="power:1:0.7"))
    for alpha, beta in (("power:0.1:0.6", "const:1"), ("const:0.1", "const:1.5"), ("const:0.1", "power:1:0.3")):
        with pytest.raises(ScheduleContractViolation):
            check_schedules("lqsg", Schedules.make(alpha=alpha, beta=beta))


def test_outer_step_examples():
    X = Box([0], [1])
    assert outer_step([0.5], [-10.0], 1.0, 1.0, X) == pytest.approx([1.0])
    assert outer_step([0.5], [-10.0], 1.0, 0.5, X) == pytest.approx([0.75])
    assert outer_step([0.5], [0.2], 1.0, 1.0, X) == pytest.approx([0.3])


def test_hypergradient_examples(ex1):
    y = np.array([0.3, 0.3])
    assert hypergradient(ex1, [0.3, 0.3], y, np.eye(2)) == pytest.approx([-1.0, -1.0])
    assert hypergradient(ex1, [0.9, 0.9], [0.6, 0.6], np.zeros((2, 2))) == pytest.approx([0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        hypergradient(ex1, [0.3, 0.3], y, np.eye(3))


def test_zero_gradient_stops_at_once():
    cost = QuadCostSpec(Q=[[2.0]], E0=[[-2.0]], e=[0.0])
    spec = GameSpec.from_costs([cost], [PolyhedronSpec.box([-1], [1], 1)], QuadraticLeaderCost(1, 1), Box([-1], [1]))
    tr = run(spec, Schedules.make(alpha="power:1:0.51"), RunOptions(max_outer=50))
    assert tr.summary["termination"] == "rel_tol"
    assert tr.summary["outer_iterations"] == 1
    assert tr.records[0]["x_step_norm"] == 0.0


def test_run_trace_and_csv(ex1):
    sch = Schedules.make(alpha="power:0.5:0.51", preset="large")
    tr = run(ex1, sch, RunOptions(max_outer=30, record_x=True))
    assert tr.summary["phi_e"] == pytest.approx(-1.2, abs=1e-6)
    assert tr.summary["termination"] == "rel_tol"
    lines = tr.to_csv().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == len(tr.records) + 1
    assert lines[1].endswith(",")  # wall_ms blank without timing
    assert tr.to_csv() == run(ex1, sch, RunOptions(max_outer=30)).to_csv()


def test_contract_enforced_unless_forced(ex1):
    sch = Schedules.make(alpha="const:0.1")
    with pytest.raises(ScheduleContractViolation):
        run(ex1, sch, RunOptions(max_outer=2))
    assert len(run(ex1, sch, RunOptions(max_outer=2, force=True)).records) <= 2


def test_inner_loop_variants(lqg, lqsg, rng):
    x = rng.uniform(lqg.leader_set.lo, lqg.leader_set.hi)
    res = inner_loop(lqg, x, np.zeros(lqg.n), None, 1e-8, 1e-8)
    assert res.converged and res.iterations > 1
    res = inner_loop(lqg.replace(variant="general"), x, np.zeros(lqg.n), None, 1e-6, 1e-6)
    assert res.converged and res.warm_iterations > 0
    res = inner_loop(lqsg, np.zeros(lqsg.m), np.zeros(lqsg.n), None, 1e-8, 1e-8)
    assert res.iterations == 1


def test_lqsg_alpha_matches_reduced_curvature(lqsg):
    H, _ = reduced_quadratic(lqsg, *lqsg_affine_map(lqsg))
    assert lqsg_alpha(lqsg) == pytest.approx(1 / np.linalg.norm(H, 2), rel=1e-8)


def test_backoff_gives_monotone_probe(lqsg):
    beta, tr = backoff_beta(lqsg, lqsg_alpha(lqsg), probe=20)
    assert 0 < beta <= 1
    phi = np.concatenate([[tr.summary["phi_e_initial"]], tr.phi])
    assert np.all(np.diff(phi) <= 1e-12 * np.maximum(1, np.abs(phi[:-1])))


def test_default_schedules_per_variant(lqg, lqsg):
    sch = default_schedules(lqsg)
    assert sch.alpha.kind == "const"
    check_schedules("lqsg", sch)
    sch = default_schedules(lqg, "small")
    assert str(sch.alpha) == "power:3e-06:0.51"
    assert sch.sigma_y(0) == 0.002
    assert str(default_schedules(lqg, alpha="power:1:0.6").alpha) == "power:1:0.6"
