import numpy as np
import pytest

from bighype.equilibrium import InnerState, Workspace, ppg_sweep
from bighype.errors import DimensionMismatch
from bighype.oracles import lqsg_affine_map, oracle_ne, oracle_sensitivity, smooth_points
from bighype.sensitivity import (
    FlopCounter,
    SensitivityState,
    aggregative_sensitivity_step,
    apriori_sens_bound,
    aposteriori_sens_bound,
    lqg_conditional_blocks,
    lqsg_jacobian,
    ppg_jacobian_blocks,
    sensitivity_step,
)

from conftest import scalar_game


def learn(spec, x, tol=1e-14, cap=50_000):
    y = oracle_ne(spec, x)
    sens = SensitivityState.start(spec)
    blocks = ppg_jacobian_blocks(spec, x, y)
    for _ in range(cap):
        sens = sensitivity_step(sens, blocks)
        if sens.delta <= tol:
            break
    return sens


def test_scalar_interior_blocks():
    spec = scalar_game()
    g = spec.constants.gamma
    S1, S2 = ppg_jacobian_blocks(spec, [1.0], [1.0]).dense()
    assert S1 == pytest.approx(np.array([[2 * g]]))
    assert S2 == pytest.approx(np.array([[1 - 2 * g]]))
    # fixed point of s <- S2 s + S1 is dy*/dx = 1
    assert learn(spec, np.array([1.0])).s == pytest.approx(np.ones((1, 1)), abs=1e-12)


def test_scalar_clamped_sensitivity_is_zero():
    spec = scalar_game(lo=0.0, hi=1.0)
    assert learn(spec, np.array([3.0])).s == pytest.approx(np.zeros((1, 1)))


def test_learned_matches_oracle(lqg, rng):
    for x, y in smooth_points(lqg, 3, rng):
        assert learn(lqg, x).s == pytest.approx(oracle_sensitivity(lqg, x, y), abs=1e-9)


def test_aposteriori_bound(lqg, rng):
    (x, y), = smooth_points(lqg, 1, rng)
    J = oracle_sensitivity(lqg, x, y)
    blocks = ppg_jacobian_blocks(lqg, x, y)
    sens = SensitivityState.start(lqg)
    eta = lqg.constants.eta
    for _ in range(40):
        sens = sensitivity_step(sens, blocks)
        assert np.linalg.norm(sens.s_prev - J) <= aposteriori_sens_bound(sens, eta) + 1e-12


def test_conditional_latch_freezes(lqg, rng):
    x = rng.uniform(lqg.leader_set.lo, lqg.leader_set.hi)
    ws = Workspace(lqg)
    sens = SensitivityState.start(lqg)
    st = InnerState.start(np.zeros(lqg.n))
    seen = []
    for _ in range(3000):
        st = ppg_sweep(lqg, x, st, ws)
        seen.append(lqg_conditional_blocks(sens, lqg, x, st.y_tilde, st.step_norm, 1e-3, ws))
    assert sens.frozen
    assert seen[-1] is seen[-2]
    assert sens.recomputes < 3000
    sens.reset_cache()
    assert not sens.frozen and sens.blocks is None


def test_conditional_blocks_reject_other_variants(lqsg):
    with pytest.raises(ValueError):
        lqg_conditional_blocks(SensitivityState.start(lqsg), lqsg, np.zeros(lqsg.m), np.zeros(lqsg.n), 1.0, 0.1)


def test_lqsg_constant_jacobian_matches_kkt(lqsg):
    # the solver's map comes from PPG blocks, the oracle's from the KKT system
    c = lqsg_jacobian(lqsg)
    W, w = lqsg_affine_map(lqsg)
    assert c.W == pytest.approx(W, abs=1e-10)
    assert c.w == pytest.approx(w, abs=1e-10)


def test_aggregative_update_matches_dense(agg, rng):
    x = rng.uniform(agg.leader_set.lo, agg.leader_set.hi)
    y = oracle_ne(agg, x)
    s0 = rng.normal(size=(agg.n, agg.m))
    dense = sensitivity_step(SensitivityState.start(agg, s0), ppg_jacobian_blocks(agg, x, y))
    counter = FlopCounter()
    fast = aggregative_sensitivity_step(SensitivityState.start(agg, s0), agg, x, y, counter=counter)
    assert fast.s == pytest.approx(dense.s, abs=1e-12)
    assert len(set(counter.per_agent.values())) == 1
    assert counter.leader > 0


def test_bad_initial_sensitivity(lqg):
    with pytest.raises(DimensionMismatch):
        SensitivityState.start(lqg, np.zeros((lqg.m, lqg.n + 1)))


def test_apriori_surrogate():
    eta = 0.5
    # l = 2: max(0.25, 0.25 * 1 + 0.5 * 0.5 + 1 * 0.1)
    assert apriori_sens_bound([1.0, 0.5, 0.1], eta) == pytest.approx(0.6)
    assert apriori_sens_bound([0.0, 0.0, 0.0], eta) == pytest.approx(0.25)
    assert apriori_sens_bound([], eta, ell=3) == pytest.approx(0.125)
