import warnings

import numpy as np
import pytest

from bighype.equilibrium import (
    InnerState,
    Workspace,
    aposteriori_eq_bound,
    ppg_map,
    ppg_step_agent,
    ppg_sweep,
    resolve_workers,
    warmstart,
)
from bighype.errors import AgentError, ConvergenceWarning, MaxIterExceeded
from bighype.game import CallbackPG, GameSpec, PolyhedronSpec, QuadraticLeaderCost
from bighype.oracles import oracle_ne
from bighype.sets import Box

from conftest import coupled_pair, scalar_game


def test_scalar_fixed_point():
    spec = scalar_game()
    assert ppg_map(spec, [1.5], [1.5]) == pytest.approx([1.5])
    g = spec.constants.gamma
    # one step from 0: proj[0 - g * 2 (0 - 1.5)]
    assert ppg_step_agent(0, spec, [1.5], [0.0]) == pytest.approx([3.0 * g])


def test_scalar_clamped_fixed_point():
    spec = scalar_game(lo=0.0, hi=1.0)
    assert ppg_map(spec, [3.0], [1.0]) == pytest.approx([1.0])


def test_coupled_pair_equilibrium():
    # unconstrained: y1 + 0.5 y2 = 0, y2 + 0.5 y1 = 0 -> y = 0
    spec = coupled_pair()
    out = warmstart(spec, [0.3], np.ones(4), 1e-12)
    assert out.converged
    assert out.y == pytest.approx(np.zeros(4), abs=1e-11)


def test_contraction_rate(lqg, rng):
    x = rng.uniform(lqg.leader_set.lo, lqg.leader_set.hi)
    y_star = oracle_ne(lqg, x)
    eta = lqg.constants.eta
    st = InnerState.start(rng.normal(size=lqg.n))
    err = np.linalg.norm(st.y_tilde - y_star)
    for _ in range(30):
        st = ppg_sweep(lqg, x, st)
        new = np.linalg.norm(st.y_tilde - y_star)
        assert new <= eta * err + 1e-12
        err = new


def test_aposteriori_bound_holds(lqg, rng):
    x = rng.uniform(lqg.leader_set.lo, lqg.leader_set.hi)
    y_star = oracle_ne(lqg, x)
    st = InnerState.start(np.zeros(lqg.n))
    for _ in range(20):
        st = ppg_sweep(lqg, x, st)
        assert np.linalg.norm(st.y_prev - y_star) <= aposteriori_eq_bound(st, lqg.constants.eta) + 1e-12


def test_warmstart_matches_oracle(lqg, rng):
    x = rng.uniform(lqg.leader_set.lo, lqg.leader_set.hi)
    out = warmstart(lqg, x, np.zeros(lqg.n), 1e-11)
    assert out.converged
    assert out.y == pytest.approx(oracle_ne(lqg, x), abs=1e-9)


def test_warmstart_cap(lqg):
    x = np.zeros(lqg.m)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        out = warmstart(lqg, x, np.full(lqg.n, 50.0), 1e-14, max_iter=2)
    assert not out.converged and out.iterations == 2
    assert any(issubclass(w.category, ConvergenceWarning) for w in rec)
    with pytest.raises(MaxIterExceeded) as exc:
        warmstart(lqg, x, np.full(lqg.n, 50.0), 1e-14, max_iter=2, raise_on_cap=True)
    assert exc.value.best.shape == (lqg.n,)


def test_warmstart_rejects_nonpositive_tolerance(lqg):
    with pytest.raises(ValueError):
        warmstart(lqg, np.zeros(lqg.m), np.zeros(lqg.n), 0.0)


def test_worker_count_does_not_change_results(lqg, rng):
    x = rng.uniform(lqg.leader_set.lo, lqg.leader_set.hi)
    y0 = rng.normal(size=lqg.n)
    with Workspace(lqg, workers=1) as w1, Workspace(lqg, workers=3) as w3:
        a = warmstart(lqg, x, y0, 1e-10, w1).y
        b = warmstart(lqg, x, y0, 1e-10, w3).y
    assert np.array_equal(a, b)


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv("BIGHYPE_WORKERS", "4")
    assert resolve_workers() == 4
    assert resolve_workers(2) == 2
    with pytest.raises(ValueError):
        resolve_workers(0)


def test_agent_failure_carries_index():
    def F(x, y):
        if x[0] > 5:  # never reached by the validator's samples
            raise RuntimeError("boom")
        return y - x[0]

    pg = CallbackPG([1, 1], 1, F, lambda x, y: -np.ones((2, 1)), lambda x, y: np.eye(2))
    polys = [PolyhedronSpec.box([-1], [1], 1) for _ in range(2)]
    spec = GameSpec(pg, polys, QuadraticLeaderCost(1, 2), Box([-1], [1]), "general", mu=1.0, L_F=1.0)
    with pytest.raises(AgentError) as exc:
        ppg_map(spec, [7.0], [0.0, 0.9])
    assert exc.value.agent == 0
    assert isinstance(exc.value.error, RuntimeError)
