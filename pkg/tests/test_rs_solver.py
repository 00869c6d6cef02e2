import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsbound import channel as chan
from rsbound import rs_solver as rs
from rsbound.ensemble import DegreeDistribution

L3, P6 = DegreeDistribution.regular(3), DegreeDistribution.regular(6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-6, 6), min_size=1, max_size=7))
def test_check_combine_matches_tanh_product(v):
    ref = math.atanh(float(np.prod(np.tanh(v)))) if abs(np.prod(np.tanh(v))) < 1 - 1e-12 else None
    if ref is not None:
        assert rs.check_combine(v) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_check_combine_special_values():
    assert rs.check_combine([np.inf, np.inf]) == np.inf
    assert rs.check_combine([np.inf, -np.inf]) == -np.inf
    assert rs.check_combine([0.0, np.inf]) == 0.0
    assert rs.check_combine([]) == np.inf


def test_bec_scalar_threshold():
    # the BP threshold of (3,6) is near 0.4294, the scalar MAP estimate near 0.4881
    assert rs.bec_map_threshold(L3, P6) == pytest.approx(0.48815, abs=1e-4)


def test_population_de_tracks_scalar_recursion():
    eps = 0.45
    rng = np.random.default_rng(0)
    pop = rs.Population.constant(0.0, 200_000)
    x = 1.0
    for _ in range(5):
        pop = rs.de_iteration(pop, chan.BEC(eps), L3.to_edge(), P6.to_edge(), rng)
        x = rs.bec_de_step(L3, P6, eps, x)
        assert pop.zero_mass == pytest.approx(x, abs=5e-3)


@pytest.mark.parametrize("eps, x", [(0.45, 1.0), (0.5, 0.3), (0.49, 0.0)])
def test_constant_population_value_matches_closed_form(eps, x):
    # zero-mass 1 and 0 are single-valued populations evaluated exactly
    if x in (0.0, 1.0):
        pop = rs.Population.constant(0.0 if x == 1.0 else np.inf, 10)
        val = rs.evaluate_h_rs(pop, chan.BEC(eps), L3, P6)
        assert val.stderr == 0.0
        assert val.value == pytest.approx(rs.bec_closed_form(L3, P6, eps, x), abs=1e-12)
    else:
        pop = rs.Population.bec(x, 100_000)
        val = rs.evaluate_h_rs(pop, chan.BEC(eps), L3, P6, n_mc=400_000, rng=np.random.default_rng(1))
        assert abs(val.value - rs.bec_closed_form(L3, P6, eps, x)) < 5 * val.stderr + 1e-4


def test_population_csv_round_trip(tmp_path):
    pop = rs.Population(np.array([0.0, 1.5, -2.25, np.inf]))
    pop.save(tmp_path / "p.csv", meta={"eps": 0.4})
    back = rs.Population.load(tmp_path / "p.csv")
    assert np.array_equal(back.samples, pop.samples)


def test_population_rejects_nan():
    with pytest.raises(ValueError):
        rs.Population([0.0, np.nan])


def test_bsc_fixed_point_is_symmetric():
    fp = rs.fixed_point(chan.BSC(0.08), L3, P6, "channel", iters=60, N=20_000, rng=np.random.default_rng(2))
    assert fp.population.is_symmetric()


def test_unknown_initialization():
    with pytest.raises(ValueError):
        rs.initial_population("warm", chan.BEC(0.3), 10, np.random.default_rng())
