import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsbound import channel as chan
from rsbound import interpolation as ip
from rsbound.ensemble import DegreeDistribution, TannerGraph
from rsbound.exact_gibbs import GibbsSystem

from conftest import brute_codewords

SIX = TannerGraph(6, [(0, 1, 2), (2, 3, 4), (1, 4, 5)])


def _system(seed=0, graph=SIX):
    return GibbsSystem.build(graph, chan.BSC(0.2), np.random.default_rng(seed))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 5), st.integers(0, 2**31 - 1))
def test_fwht_is_an_involution_up_to_scale(k, seed):
    a = np.random.default_rng(seed).normal(size=2**k)
    assert np.allclose(ip.fwht(ip.fwht(a)) / 2**k, a)


def test_fwht_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        ip.fwht(np.ones(3))


def test_xor_power_against_direct_convolution():
    rng = np.random.default_rng(1)
    p = rng.random(8)
    p /= p.sum()
    direct = np.zeros(8)
    for a, b, c in itertools.product(range(8), repeat=3):
        direct[a ^ b ^ c] += p[a] * p[b] * p[c]
    assert np.allclose(ip.xor_power(p, 3), direct, atol=1e-15)


def _brute_overlap_law(sys, a, p):
    """Law of Q_2p by enumerating all 2p-replica tuples of codewords."""
    C = brute_codewords(sys.graph.parity_matrix(), sys.n)
    S = 1 - 2 * C
    logw = S @ sys.h
    pr = np.exp(logw - logw.max())
    pr /= pr.sum()
    out = {}
    for tup in itertools.product(range(len(S)), repeat=2 * p):
        q = round(float(np.prod(S[list(tup)], axis=0) @ a), 12)
        out[q] = out.get(q, 0.0) + float(np.prod(pr[list(tup)]))
    return out


def test_overlap_law_against_replica_enumeration():
    sys = _system(2, TannerGraph(4, [(0, 1, 2), (1, 2, 3)]))
    w = np.full(4, 0.25)
    X = np.array([1.0, 0.5, 2.0, 1.5])
    vals, probs = ip.overlap_distribution(sys, w, X, 1)
    brute = _brute_overlap_law(sys, w * X, 1)
    got = {round(float(v), 12): float(q) for v, q in zip(vals, probs) if q > 0}
    assert set(got) == {k for k, v in brute.items() if v > 1e-300}
    for k in got:
        assert got[k] == pytest.approx(brute[k], abs=1e-13)


@pytest.mark.parametrize("p", [1, 2])
def test_fluctuation_identity(p):
    sys = _system(3)
    rng = np.random.default_rng(p)
    w = rng.random(6)
    w /= w.sum()
    X = rng.uniform(0, 2, 6)
    f = ip.fluctuation_identity(sys, w, X, p)
    assert f["residual"] < 1e-12
    assert f["mean_from_law"] == pytest.approx(ip.overlap_moments(sys, w, X, p).Q_mean, abs=1e-13)


def test_overlap_is_bounded_by_weighted_sum():
    sys = _system(4)
    w = np.full(6, 1 / 6)
    X = np.linspace(0.0, 2.0, 6)
    vals, _ = ip.overlap_distribution(sys, w, X, 2)
    assert np.all(np.abs(vals) <= np.sum(w * X) + 1e-12)


def test_weight_validation():
    sys = _system()
    with pytest.raises(ValueError, match="sum to 1"):
        ip.overlap_moments(sys, np.full(6, 0.2), np.ones(6), 1)
    with pytest.raises(ValueError):
        ip.overlap_moments(sys, np.full(6, 1 / 6), -np.ones(6), 1)


def test_probe_chain_per_realization():
    sys = _system(5)
    w = np.full(6, 1 / 6)
    X = np.random.default_rng(0).uniform(0, 3, 6)
    P = DegreeDistribution.regular(4)
    exact, cheb, cs, _, _ = ip.probe_bounds(sys, w, X, 1, 6, 0.2, P, float(X.max()))
    assert exact <= cheb + 1e-12
    assert cheb <= cs + 1e-12


def test_probe_rejects_large_delta():
    with pytest.raises(ValueError):
        ip.concentration_probe([8], 0.25, 1, chan.BEC(0.3), DegreeDistribution.regular(3), DegreeDistribution.regular(4), 0.5, 0, 2, np.random.default_rng())


def test_probe_is_deterministic_given_seed():
    args = ([8], 0.2, 1, chan.BSC(0.2), DegreeDistribution.regular(3), DegreeDistribution.regular(4), 0.5, 0, 3)
    kw = dict(draws=4, xmodel=ip.XModel("uniform", 3.0))
    a = ip.concentration_probe(*args, np.random.default_rng(9), **kw)
    b = ip.concentration_probe(*args, np.random.default_rng(9), **kw)
    assert a == b
    assert a[0].chain_ok and a[0].overbound_ok


def test_wilson_interval_contains_estimate():
    lo, hi = ip.wilson_interval(3, 40)
    assert lo < 3 / 40 < hi
    assert ip.wilson_interval(0, 0) == (0.0, 1.0)


def test_remainder_constant_form():
    P = DegreeDistribution.regular(4)
    # P(x) + P'(1)(x + 1) + 1 at x = 2
    assert ip.remainder_constant(P, 2.0) == pytest.approx(16 + 4 * 3 + 1)
