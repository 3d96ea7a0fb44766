import numpy as np

from bighype.generators import check_generated, random_aggregative, random_lqg, random_lqsg


def test_lqg_strongly_monotone():
    for seed in range(5):
        spec = random_lqg(N=3, n=2, m=4, seed=seed)
        assert check_generated(spec) > 0
        assert spec.report.constants.contractive


def test_lqsg_equality_only():
    spec = random_lqsg(seed=4)
    assert spec.variant == "lqsg"
    assert all(P.A.shape[0] == 0 and P.C.shape[0] > 0 for P in spec.polyhedra)


def test_aggregative_has_aggregation():
    spec = random_aggregative(N=5, seed=1)
    assert spec.aggregation is not None and len(spec.aggregation) == 5
    assert spec.report.mu > 0


def test_seeded():
    a, b = random_lqg(seed=11), random_lqg(seed=11)
    assert np.array_equal(a.pg.M, b.pg.M)
    assert not np.array_equal(a.pg.M, random_lqg(seed=12).pg.M)
