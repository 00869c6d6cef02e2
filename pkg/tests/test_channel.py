import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsbound import channel as chan


def test_llr_tanh_round_trip():
    l = np.array([-5.0, -0.3, 0.0, 0.7, 12.0])
    assert np.allclose(chan.t_to_llr(chan.llr_to_t(l)), l, atol=1e-9)
    assert chan.t_to_llr(1.0) == np.inf


@pytest.mark.parametrize("ch", [chan.BEC(0.3), chan.BSC(0.11), chan.BIAWGNC(0.9), chan.BIAWGNC(1.4)])
def test_rules_are_normalized_and_symmetric(ch):
    _, t, w = chan.nodes(ch)
    assert abs(w.sum() - 1.0) < 1e-12
    # output symmetry: E[t^(2p-1)] = E[t^(2p)]
    for p in range(1, 5):
        assert abs(np.sum(w * t ** (2 * p - 1)) - np.sum(w * t ** (2 * p))) < 1e-10


def test_closed_form_moments():
    assert chan.moment(chan.BEC(0.25), 6) == 0.75
    assert chan.moment(chan.BSC(0.1), 4) == pytest.approx(0.8**4)
    with pytest.raises(ValueError):
        chan.moment(chan.BSC(0.1), 3)


def test_awgn_quadrature_matches_monte_carlo():
    ch = chan.BIAWGNC(1.1)
    rng = np.random.default_rng(3)
    t = chan.sample_output(ch, rng, 400_000)
    assert chan.moment(ch, 2) == pytest.approx(np.mean(t**2), abs=4 * np.std(t**2) / math.sqrt(t.size))


@pytest.mark.parametrize("ch", [chan.BSC(0.2), chan.BIAWGNC(1.0), chan.BEC(0.4)])
def test_moment_derivatives_match_differences(ch):
    d1, d2 = chan.moment_derivatives(ch, 4)
    h = 1e-4
    f = lambda e: chan.moment(ch.with_eps(e), 4)
    e = ch.eps
    assert d1 == pytest.approx((f(e + h) - f(e - h)) / (2 * h), rel=1e-5, abs=1e-9)
    assert d2 == pytest.approx((f(e + h) - 2 * f(e) + f(e - h)) / h**2, rel=1e-3, abs=1e-6)


def test_tabulated_symmetry_is_enforced():
    with pytest.raises(ValueError, match="symmetric"):
        chan.Tabulated([0.5, -0.5], [0.5, 0.5])
    # a BSC written as a table reproduces the BSC moments
    a = 0.6
    tab = chan.Tabulated([a, -a], [0.8, 0.2], kind="fixed")
    assert chan.moment(tab, 2) == pytest.approx(a * a)


def test_table_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("t,weight\n1.0,0.5\n0.0,0.5\n")
    t, w = chan.load_table_csv(p)
    ch = chan.Tabulated(t, w, eps=0.2)
    _, _, ww = chan.atoms(ch)
    assert ww.sum() == pytest.approx(1.0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        chan.BSC(0.6)
    with pytest.raises(ValueError):
        chan.BIAWGNC(0.0)
    with pytest.raises(ValueError):
        chan.ChannelModel("Z", 0.1)


def test_high_noise_verdicts():
    assert chan.check_high_noise_condition(chan.BEC(0.5)).verdict == "fails"
    assert chan.check_high_noise_condition(chan.BSC(0.1)).verdict == "fails"
    assert chan.check_high_noise_condition(chan.BSC(0.49)).verdict == "holds"
    c = chan.bsc_high_noise_crossover()
    assert 0.3 < c < 0.5
    assert chan.check_high_noise_condition(chan.BSC(min(0.5, c + 1e-3))).verdict == "holds"


def test_gexit_bounds():
    assert chan.gexit_bound(chan.BEC(0.5)) == pytest.approx(2 * math.log(2))
    assert chan.gexit_bound(chan.BIAWGNC(1.0)) == 2.0
    assert chan.gexit_bound(chan.BSC(0.25)) == pytest.approx(math.log(3))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.49))
def test_bsc_sampling_respects_crossover(eps):
    l = chan.sample_llr(chan.BSC(eps), np.random.default_rng(0), 2000)
    frac = np.mean(l < 0)
    assert abs(frac - eps) < 5 * math.sqrt(eps * (1 - eps) / 2000) + 1e-3
