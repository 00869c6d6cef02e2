import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsbound import channel as chan
from rsbound import exact_gibbs as eg
from rsbound.ensemble import TannerGraph
from rsbound.verify import exact_entropy, fd1, fd2, random_graph

from conftest import bayes_entropy, bec_rows, brute_codewords, bsc_rows

SIX = TannerGraph(6, [(0, 1, 2), (2, 3, 4), (1, 4, 5)])


# ------------------------------------------------------------ GF(2) and codes


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 9), st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_codespace_matches_brute_force(n, m, seed):
    rng = np.random.default_rng(seed)
    H = rng.integers(0, 2, size=(m, n))
    words = eg.CodeSpace(H, n).words
    brute = brute_codewords(H, n)
    assert len(words) == len(brute)
    assert {tuple(w) for w in words} == {tuple(w) for w in brute}


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_nullspace_is_annihilated(n, m, seed):
    H = np.random.default_rng(seed).integers(0, 2, size=(m, n))
    N = eg.gf2_nullspace(H, n).reshape(-1, n)
    assert not np.any((H @ N.T) % 2)
    # the basis spans exactly the brute-force code
    assert 2 ** N.shape[0] == len(brute_codewords(H, n))


def test_components_partition_bits():
    g = TannerGraph(7, [(0, 1), (1, 2), (4, 5)])
    comps = eg.components(g)
    assert sorted(np.concatenate(comps).tolist()) == list(range(7))
    assert len(comps) == 4


# ------------------------------------------------------------ entropies


@pytest.mark.parametrize(
    "ch, rows, frozen",
    [
        (chan.BSC(0.1), bsc_rows(0.1), 0.37594982806436233),
        (chan.BEC(0.1), bec_rows(0.1), 0.002940330339935284),
        (chan.BSC(0.3), bsc_rows(0.3), 1.594392317455032),
        (chan.BEC(0.3), bec_rows(0.3), 0.08260789468477318),
    ],
)
def test_entropy_against_bayes_oracle(ch, rows, frozen):
    oracle = bayes_entropy(SIX.parity_matrix(), 6, [rows] * 6)
    H, se = eg.conditional_entropy(SIX, ch, exact=True)
    assert se == 0.0
    assert H == pytest.approx(oracle, abs=1e-12)
    assert H == pytest.approx(frozen, abs=1e-12)


def test_entropy_of_uncoded_bsc_is_binary_entropy():
    g = TannerGraph(3, [])
    e = 0.2
    hb = -e * math.log(e) - (1 - e) * math.log(1 - e)
    assert eg.conditional_entropy(g, chan.BSC(e), exact=True)[0] == pytest.approx(3 * hb, abs=1e-13)


def test_monte_carlo_entropy_brackets_exact():
    rng = np.random.default_rng(11)
    g = TannerGraph(2, [(0, 1)])
    H_mc, se = eg.conditional_entropy(g, chan.BIAWGNC(1.0), n_samples=20000, rng=rng, exact=False)
    H_q = exact_entropy(g, chan.BIAWGNC(1.0))
    assert abs(H_mc - H_q) < 5 * se


# ------------------------------------------------------------ brackets


def test_brackets_against_explicit_posterior():
    rng = np.random.default_rng(3)
    l = rng.normal(1.0, 1.5, 6)
    sys = eg.GibbsSystem(SIX, l)
    C = brute_codewords(SIX.parity_matrix(), 6)
    S = 1 - 2 * C
    logw = S @ (l / 2)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    assert np.allclose(sys.means(), p @ S, atol=1e-13)
    assert np.allclose(sys.pair_matrix(), S.T @ (S * p[:, None]), atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_extrinsic_conversions(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    g = random_graph(n, int(rng.integers(1, n + 1)), rng)
    sys = eg.GibbsSystem.build(g, chan.BSC(0.2), rng)
    i, j = (int(x) for x in rng.choice(n, 2, replace=False))
    t = np.tanh(sys.h)
    rep = sys.report(i, j)
    assert eg.extrinsic_single(rep.T_i, t[i]) == pytest.approx(rep.T_i_ext, abs=1e-12)
    a, _, c = eg.extrinsic_pair(rep.T_i, sys.bracket([j]), rep.T_ij, t[i], t[j])
    assert a == pytest.approx(rep.T_i_ext_pair, abs=1e-12)
    assert c == pytest.approx(rep.T_ij_ext_pair, abs=1e-12)


def test_law_conversion_survives_strong_fields():
    g = TannerGraph(5, [(0, 1, 2), (1, 3, 4)])
    l = np.array([9.2, 7.0, 5.5, 8.1, 6.3])
    sys = eg.GibbsSystem(g, l)
    rep = sys.report(0, 1)
    a, _, c = eg.extrinsic_from_law(sys.sign_law(0, 1), sys.h[0], sys.h[1])
    assert a == pytest.approx(rep.T_i_ext_pair, abs=1e-14)
    assert c == pytest.approx(rep.T_ij_ext_pair, abs=1e-14)
    assert eg.extrinsic_from_law(sys.sign_law(0), sys.h[0]) == pytest.approx(rep.T_i_ext, abs=1e-14)


def test_sign_law_agrees_with_brackets():
    sys = eg.GibbsSystem(SIX, np.random.default_rng(8).normal(0.5, 2.0, 6))
    law = sys.sign_law(1, 4)
    s = np.array([1.0, -1.0])
    assert law.sum() == pytest.approx(1.0)
    assert s @ law.sum(axis=1) == pytest.approx(sys.bracket([1]), abs=1e-14)
    assert s @ law @ s == pytest.approx(sys.bracket([1, 4]), abs=1e-14)
    # bits in different components factorize
    iso = eg.GibbsSystem(TannerGraph(3, [(0, 1)]), np.array([0.3, -0.2, 1.1]))
    assert np.allclose(iso.sign_law(0, 2), np.outer(iso.sign_law(0), iso.sign_law(2)))


def test_brackets_stay_in_range():
    g = TannerGraph(6, [(0, 1, 2), (3, 4, 5)])
    sys = eg.GibbsSystem(g, np.full(6, 30.0))
    assert np.all(np.abs(sys.means()) <= 1.0)
    assert np.all(np.abs(sys.pair_matrix()) <= 1.0)


# ------------------------------------------------------------ derivatives


def _oracle_H(ch):
    rows = bsc_rows(ch.eps) if ch.variant == "BSC" else bec_rows(ch.eps)
    return bayes_entropy(SIX.parity_matrix(), 6, [rows] * 6)


@pytest.mark.parametrize("ch", [chan.BSC(0.15), chan.BEC(0.35)])
def test_gexit_against_oracle_differences(ch):
    d = eg.gexit_first_derivative(SIX, ch, method="general", outputs=eg.OutputSet.enumerate([ch] * 6))
    ref = fd1(lambda e: _oracle_H(ch.with_eps(e)), ch.eps, 1e-3)
    assert d == pytest.approx(ref, rel=1e-6)


def test_bec_specialized_and_general_agree():
    ch = chan.BEC(0.4)
    a = eg.gexit_first_derivative(SIX, ch, method="general")
    b = eg.gexit_first_derivative(SIX, ch, method="specialized")
    assert a == pytest.approx(b, abs=1e-10)


def test_g1_two_routes_agree():
    ch = chan.BSC(0.2)
    ens = eg.Ensemble(SIX, ch, outputs=eg.OutputSet.enumerate([ch] * 6))
    rule = chan.derivative_rule(ch, 1)
    vals, _, _ = eg.g1_values(ens.T_ext(2), ens.outputs.w, rule)
    for t, v in zip(rule.t, vals):
        if abs(t) < 1:
            assert eg.g1_intrinsic(ens, 2, float(t)) == pytest.approx(v, abs=1e-12)


def test_second_derivative_against_oracle():
    ch = chan.BSC(0.2)
    d2 = eg.correlation_second_derivative(SIX, ch, method="general")
    ref = fd2(lambda e: _oracle_H(ch.with_eps(e)), 0.2, 2e-3)
    assert d2 == pytest.approx(ref, abs=1e-5)


def test_flipped_pair_sign_is_detected(monkeypatch):
    ch = chan.BSC(0.2)
    ref = fd2(lambda e: _oracle_H(ch.with_eps(e)), 0.2, 2e-3)
    monkeypatch.setattr(eg, "G2_SIGN", -1.0)
    bad = eg.correlation_second_derivative(SIX, ch, method="general")
    assert abs(bad - ref) > 1e-3


def test_bec_mixed_derivative_equals_pair_correlation():
    eps = 0.4
    ch = chan.BEC(eps)
    ens = eg.Ensemble(SIX, ch)
    corr = np.tensordot(ens.outputs.w, ens.correlations(), axes=(0, 0))
    for i, j in [(0, 1), (2, 5)]:
        lhs = eg.bec_mixed_derivative(SIX, eps, i, j)
        info = eg.mutual_information_pair(SIX, ch, i, j)
        assert eps * eps * lhs == pytest.approx(info.mutual_information, abs=1e-10)
        assert info.mutual_information == pytest.approx(math.log(2) * corr[i, j], abs=1e-10)


def test_nishimori_suite_passes():
    res = eg.nishimori_suite(SIX, chan.BSC(0.2))
    assert res and all(r.passed for r in res)


# ------------------------------------------------------------ series


def test_a_coefficients_small_cases():
    # C(2l-2, r) (2l)_r (2k-2)_(2l-2-r) / (2l)! with falling factorials
    assert eg.A_coef(0, 1, 1) == pytest.approx(0.5)
    assert eg.A_coef(0, 1, 3) == pytest.approx(0.5)
    assert eg.A_coef(1, 2, 2) == pytest.approx(2 * 4 * 2 / 24)


def test_series_within_tail_bounds():
    ch = chan.BSC(0.47)
    g = TannerGraph(8, [(0, 1, 2, 3), (2, 3, 4, 5), (4, 5, 6, 7), (0, 1, 6, 7)])
    ens = eg.Ensemble(g, ch)
    assert eg.s1_series(ens, 0, 4).within_bound
    rep = eg.s2_series(ens, 0, 5, 4)
    assert rep.within_bound
    assert eg.s2_direct_series(ens, 0, 5, 4) == pytest.approx(rep.series, abs=1e-12)
