import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsbound.rs_solver import Population
from rsbound.ensemble import (
    DegreeDistribution,
    InterpolationPoint,
    TannerGraph,
    design_rate,
    largest_remainder,
    rounds_count,
    sample_interpolating,
    sample_multi_poisson,
    sample_poisson,
    sample_standard,
)

dists = st.dictionaries(st.integers(1, 8), st.floats(0.05, 1.0), min_size=1, max_size=4).map(
    lambda d: {k: v / sum(d.values()) for k, v in d.items()}
)


@settings(max_examples=60, deadline=None)
@given(dists)
def test_node_edge_round_trip(d):
    D = DegreeDistribution(d)
    back = D.to_edge().to_node().as_dict()
    for k, v in D.as_dict().items():
        assert back[k] == pytest.approx(v, rel=1e-9)
    assert D.derivative_at_one() == pytest.approx(float(D.derivative(1.0)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 1000), st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6))
def test_largest_remainder_sums(total, w):
    p = np.array(w) / sum(w)
    c = largest_remainder(total, p)
    assert c.sum() == total
    assert np.all(np.abs(c - total * p) < 1.0 + 1e-9)


def test_rejects_bad_distributions():
    with pytest.raises(ValueError):
        DegreeDistribution({3: 0.5})
    with pytest.raises(ValueError):
        DegreeDistribution({0: 1.0}, "edge")


def test_design_rate():
    assert design_rate(DegreeDistribution.regular(3), DegreeDistribution.regular(6)) == pytest.approx(0.5)


def test_standard_sample_degrees():
    rng = np.random.default_rng(1)
    g = sample_standard(60, DegreeDistribution.regular(3), DegreeDistribution.regular(6), rng)
    assert np.all(g.variable_degrees() == 3)
    assert g.n_checks == 30
    assert np.all(g.check_degrees() == 6)


def test_text_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    g = sample_poisson(20, 0.5, DegreeDistribution.regular(3), rng, seed=7)
    assert TannerGraph.from_text(g.to_text()) == g
    g.save(tmp_path / "g.txt")
    assert TannerGraph.load(tmp_path / "g.txt") == g


def test_multi_poisson_mean_degree_near_design():
    rng = np.random.default_rng(3)
    lam, P = DegreeDistribution.regular(3), DegreeDistribution.regular(4)
    g, state = sample_multi_poisson(200, lam, P, 0.5, rng)
    assert np.all(state.d >= 0)
    assert g.variable_degrees().mean() <= 3.0
    assert g.meta["overdraw"] >= 0
    assert rounds_count(lam, 0.5) >= 1


def test_interpolating_endpoints_add_observations():
    rng = np.random.default_rng(4)
    lam, P = DegreeDistribution.regular(3), DegreeDistribution.regular(4)
    T = rounds_count(lam, 0.5)
    dV = Population.constant(np.inf, 1000)
    g0, _, _ = sample_interpolating(40, lam, P, 0.5, InterpolationPoint(0, 0.0), dV, np.random.default_rng(5))
    g1, _, _ = sample_interpolating(40, lam, P, 0.5, InterpolationPoint(T - 1, 0.5), dV, np.random.default_rng(5))
    # early points carry observations in place of checks, late points carry checks
    assert g0.n_checks < g1.n_checks
    assert g0.n_obs() > g1.n_obs()
