import numpy as np
import pytest

from bighype.game import GameSpec, PolyhedronSpec, QuadCostSpec, QuadraticLeaderCost
from bighype.generators import random_aggregative, random_lqg, random_lqsg
from bighype.oracles import example1
from bighype.sets import Box


def scalar_game(lo=-10.0, hi=10.0, xbox=5.0):
    """f(x, y) = (y - x)^2 on lo <= y <= hi; leader cost -y."""
    cost = QuadCostSpec(Q=[[2.0]], E0=[[-2.0]], e=[0.0])
    poly = PolyhedronSpec.box([lo], [hi], 1)
    leader = QuadraticLeaderCost(1, 1, qv=[-1.0])
    return GameSpec.from_costs([cost], [poly], leader, Box([-xbox], [xbox]))


def coupled_pair(m=1):
    """Two agents, Q_i = I_2, E_12 = E_21 = 0.5 I_2, unconstrained up to a wide box."""
    I = np.eye(2)
    costs = [
        QuadCostSpec(Q=I, E0=np.zeros((2, m)), e=np.zeros(2), E={1: 0.5 * I}),
        QuadCostSpec(Q=I, E0=np.zeros((2, m)), e=np.zeros(2), E={0: 0.5 * I}),
    ]
    polys = [PolyhedronSpec.box(-100 * np.ones(2), 100 * np.ones(2), m) for _ in range(2)]
    leader = QuadraticLeaderCost(m, 4)
    return GameSpec.from_costs(costs, polys, leader, Box(-np.ones(m), np.ones(m)))


@pytest.fixture
def ex1():
    return example1()


@pytest.fixture
def lqg():
    return random_lqg(seed=3)


@pytest.fixture
def lqsg():
    return random_lqsg(seed=1)


@pytest.fixture
def agg():
    return random_aggregative(seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
