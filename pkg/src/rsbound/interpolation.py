"""Overlap parameters, the interpolation remainder, and overlap concentration.

For the replicated Gibbs measure with 2p copies, the product of the 2p spins
at bit i is the spin of the XOR of the 2p codewords. Per graph component
that XOR is distributed as the 2p-fold XOR convolution of the codeword law,
which a Walsh-Hadamard transform diagonalizes. Overlap moments and
probabilities are therefore exact per realization; only the ensemble average
is Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from . import channel as chan
from .ensemble import DegreeDistribution, InterpolationPoint, rounds_count, sample_interpolating, sample_multi_poisson
from .exact_gibbs import GibbsSystem
from .rs_solver import Population, evaluate_h_rs

SUPPORT_LIMIT = 1 << 16
MERGE_DIGITS = 12


# ------------------------------------------------------------- transforms


def fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along the last axis (length 2^k)."""
    a = np.array(a, dtype=float)
    n = a.shape[-1]
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    lead = a.shape[:-1]
    h = 1
    while h < n:
        b = a.reshape(lead + (n // (2 * h), 2, h))
        x, y = b[..., 0, :], b[..., 1, :]
        a = np.stack([x + y, x - y], axis=-2).reshape(lead + (n,))
        h *= 2
    return a


def xor_power(prob: np.ndarray, copies: int) -> np.ndarray:
    """Law of the XOR of `copies` independent indices drawn from `prob`."""
    spec = fwht(prob) ** copies
    out = fwht(spec) / len(prob)
    return np.clip(out, 0.0, None)


# --------------------------------------------------------- X variables


@dataclass(frozen=True)
class XModel:
    """Nonnegative bounded weights X_i: identically one, or i.i.d. uniform on [0, x_max]."""

    kind: str = "one"
    x_max: float = 1.0

    def __post_init__(self):
        if self.kind not in ("one", "uniform") or self.x_max <= 0:
            raise ValueError("X model must be 'one' or 'uniform' with x_max > 0")

    def sample(self, rng, n: int) -> np.ndarray:
        if self.kind == "one":
            return np.ones(n)
        return rng.uniform(0.0, self.x_max, size=n)

    @property
    def bound(self) -> float:
        return 1.0 if self.kind == "one" else self.x_max


# --------------------------------------------------------------- overlaps


@dataclass
class OverlapReport:
    p: int
    Q_mean: float
    Q2_mean: float
    q_2p: Optional[float]
    weights: np.ndarray
    X: np.ndarray

    @property
    def variance(self) -> float:
        return self.Q2_mean - self.Q_mean**2

    @property
    def bound(self) -> float:
        return float(np.sum(self.weights * self.X))


def _validate(w, X, n):
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    if w.shape != (n,) or X.shape != (n,):
        raise ValueError("weights and X need one entry per bit")
    if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
        raise ValueError(f"weights must be nonnegative and sum to 1 (sum = {w.sum():.12g})")
    if np.any(X < 0):
        raise ValueError("X must be nonnegative")
    return w, X


def overlap_moments(sys: GibbsSystem, w, X, p: int, q_2p: Optional[float] = None) -> OverlapReport:
    """<Q_2p> and <Q_2p^2> from one- and two-point brackets."""
    if p < 1:
        raise ValueError("p must be >= 1")
    w, X = _validate(w, X, sys.n)
    a = w * X
    T = sys.means()
    C = sys.pair_matrix()
    return OverlapReport(p, float(a @ T ** (2 * p)), float(a @ C ** (2 * p) @ a), q_2p, w, X)


def _component_overlap_laws(sys: GibbsSystem, a: np.ndarray, p: int):
    """Per component: (values of its overlap contribution, probabilities)."""
    laws = []
    for bits, code, prob in sys.component_laws():
        tau = xor_power(prob, 2 * p)
        vals = code.spins @ a[bits]
        laws.append((vals, tau))
    return laws


def overlap_power_moments(sys: GibbsSystem, w, X, p: int, kmax: int) -> np.ndarray:
    """Exact <Q_2p^k>, k = 0..kmax, combining independent components binomially."""
    w, X = _validate(w, X, sys.n)
    mom = np.zeros(kmax + 1)
    mom[0] = 1.0
    binom = np.array([[math.comb(k, j) for j in range(kmax + 1)] for k in range(kmax + 1)], dtype=float)
    for vals, tau in _component_overlap_laws(sys, w * X, p):
        cm = np.array([tau @ vals**k for k in range(kmax + 1)])
        new = np.zeros_like(mom)
        for k in range(kmax + 1):
            new[k] = np.sum(binom[k, : k + 1] * mom[: k + 1] * cm[k::-1])
        mom = new
    return mom


def overlap_distribution(sys: GibbsSystem, w, X, p: int, max_support: int = SUPPORT_LIMIT):
    """Exact law of Q_2p as (values, probabilities); None if the support gets too large."""
    w, X = _validate(w, X, sys.n)
    vals = np.zeros(1)
    probs = np.ones(1)
    for cv, ct in _component_overlap_laws(sys, w * X, p):
        keep = ct > 0
        cv, ct = cv[keep], ct[keep]
        sv = (vals[:, None] + cv[None, :]).ravel()
        sp = (probs[:, None] * ct[None, :]).ravel()
        key = np.round(sv, MERGE_DIGITS)
        uniq, inv = np.unique(key, return_inverse=True)
        if len(uniq) > max_support:
            return None
        probs = np.bincount(inv.ravel(), weights=sp, minlength=len(uniq))
        vals = np.bincount(inv.ravel(), weights=sp * sv, minlength=len(uniq)) / np.where(probs > 0, probs, 1.0)
    return vals, probs


def fluctuation_identity(sys: GibbsSystem, w, X, p: int) -> Dict[str, float]:
    """Var(Q_2p) two ways: from the exact overlap law, and from pair brackets."""
    mom = overlap_power_moments(sys, w, X, p, 2)
    direct = mom[2] - mom[1] ** 2
    a = np.asarray(w) * np.asarray(X)
    T = sys.means() ** (2 * p)
    C = sys.pair_matrix() ** (2 * p)
    pairwise = float(a @ (C - np.outer(T, T)) @ a)
    return {"from_law": float(direct), "from_pairs": pairwise, "residual": abs(float(direct) - pairwise), "mean_from_law": float(mom[1])}


# ------------------------------------------------------- check polynomial


def _poly(P: DegreeDistribution, x):
    P = P.to_node()
    return sum(pk * np.asarray(x, dtype=float) ** int(k) for k, pk in zip(P.degrees, P.probs))


def _dpoly(P: DegreeDistribution, x):
    P = P.to_node()
    return sum(pk * k * np.asarray(x, dtype=float) ** (int(k) - 1) for k, pk in zip(P.degrees, P.probs) if k > 0)


def remainder_integrand(sys: GibbsSystem, w, X, p: int, q: float, P: DegreeDistribution) -> Dict[str, float]:
    """<P(Q) - P'(q)(Q - q) - P(q)> for one realization, plus the same with Q -> <Q>."""
    P = P.to_node()
    mom = overlap_power_moments(sys, w, X, p, int(P.max_degree))
    PQ = float(sum(pk * mom[int(k)] for k, pk in zip(P.degrees, P.probs)))
    Qm = float(mom[1])
    dq = float(_dpoly(P, q))
    Pq = float(_poly(P, q))
    return {
        "value": PQ - dq * (Qm - q) - Pq,
        "at_mean": float(_poly(P, Qm)) - dq * (Qm - q) - Pq,
        "jensen_gap": PQ - float(_poly(P, Qm)),
        "Q_mean": Qm,
    }


def remainder_constant(P: DegreeDistribution, x_bar: float) -> float:
    """C_1 with |P(Q) - P'(q)(Q - q) - P(q)| <= C_1 for |Q| <= x_bar, 0 <= q <= 1."""
    P = P.to_node()
    return float(_poly(P, x_bar) + P.derivative_at_one() * (x_bar + 1.0) + 1.0)


def series_tail(pmax: int) -> float:
    """sum_{p > pmax} 1/(2p(2p-1)) = ln 2 - partial sum."""
    return math.log(2.0) - sum(1.0 / (2 * p * (2 * p - 1)) for p in range(1, pmax + 1))


@dataclass
class RemainderEstimate:
    terms: np.ndarray
    term_stderr: np.ndarray
    pmax: int
    total: float
    stderr: float
    tail_bound: float
    C1: float
    n_realizations: int
    min_at_mean: float = math.inf
    meta: Dict[str, object] = field(default_factory=dict)


def q_moments(dV: Population, pmax: int) -> np.ndarray:
    return dV.tanh_moments(pmax)


def _realization(n, lam, P, gamma, point, dV, ch, xmodel, rng):
    g, state, w = sample_interpolating(n, lam, P, gamma, point, dV, rng)
    l = chan.sample_llr(ch, rng, n)
    X = xmodel.sample(rng, n)
    return GibbsSystem(g, l), w, X, g


def remainder_term(n: int, lambda_dist, p_dist, gamma: float, t_star: int, s: float, dV: Population, pmax: int, n_mc: int, rng, ch, xmodel: XModel = XModel()) -> RemainderEstimate:
    """MC over interpolating realizations of sum_{p <= pmax} <P(Q) - P'(q)(Q-q) - P(q)>/(2p(2p-1)).

    Brackets are exact per realization; the p > pmax tail is bounded by
    C_1 * sum_{p > pmax} 1/(2p(2p-1)).
    """
    P = p_dist.to_node()
    point = InterpolationPoint(t_star, s)
    qs = q_moments(dV, pmax)
    per = np.zeros((n_mc, pmax))
    min_mean = math.inf
    for r in range(n_mc):
        sys, w, X, _ = _realization(n, lambda_dist, P, gamma, point, dV, ch, xmodel, rng)
        for p in range(1, pmax + 1):
            out = remainder_integrand(sys, w, X, p, float(qs[p - 1]), P)
            per[r, p - 1] = out["value"] / (2 * p * (2 * p - 1))
            min_mean = min(min_mean, out["at_mean"])
    terms = per.mean(axis=0)
    se_terms = per.std(axis=0, ddof=1) / math.sqrt(n_mc) if n_mc > 1 else np.full(pmax, math.inf)
    tot = per.sum(axis=1)
    C1 = remainder_constant(P, xmodel.bound)
    return RemainderEstimate(
        terms,
        se_terms,
        pmax,
        float(tot.mean()),
        float(tot.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf,
        C1 * series_tail(pmax),
        C1,
        n_mc,
        min_mean,
        {"t_star": t_star, "s": s, "x_model": xmodel.kind, "x_max": xmodel.bound},
    )


# ---------------------------------------------------------------- sum rule


@dataclass
class SumRuleReport:
    n: int
    gamma: float
    t_max: int
    entropy: float
    entropy_stderr: float
    h_rs: float
    h_rs_stderr: float
    remainder: float
    remainder_stderr: float
    tail_bound: float
    discrepancy: float
    combined_stderr: float
    grid: List[Dict[str, float]]
    degree_law: Dict[int, float]

    def as_dict(self) -> Dict[str, object]:
        out = dict(self.__dict__)
        out["degree_law"] = {str(k): v for k, v in self.degree_law.items()}
        return out


def sum_rule_check(n: int, lambda_dist, p_dist, gamma: float, dV: Population, n_mc: int, s_grid, rng, ch, pmax: int = 4, n_rs: int = 200_000, xmodel: XModel = XModel()) -> SumRuleReport:
    """Compare E[h_{n,gamma}] with h_RS[dV; Lambda_gamma, P] + (1/P'(1)) sum_t* int_0^gamma R_n ds.

    The entropy is averaged over n_mc multi-Poisson graphs, one channel draw
    each. Lambda_gamma is the pooled empirical degree law of those graphs. The
    s-integral uses the trapezoid rule on s_grid (a point count or explicit
    nodes spanning [0, gamma]).
    """
    rng_h, rng_rs, rng_r = rng.spawn(3)
    P = p_dist.to_node()
    t_max = max(rounds_count(lambda_dist, gamma), 0)
    grid = np.linspace(0.0, gamma, int(s_grid)) if np.isscalar(s_grid) else np.asarray(s_grid, dtype=float)
    if grid.size < 2 or abs(grid[0]) > 1e-12 or abs(grid[-1] - gamma) > 1e-12:
        raise ValueError("s grid must span [0, gamma] with at least two points")
    ent = np.empty(n_mc)
    degrees = []
    for r in range(n_mc):
        g, _ = sample_multi_poisson(n, lambda_dist, P, gamma, rng_h)
        ent[r] = GibbsSystem(g, chan.sample_llr(ch, rng_h, n)).entropy_term() / n
        degrees.append(g.variable_degrees())
    lam_gamma = DegreeDistribution.from_histogram(np.concatenate(degrees))
    rs = evaluate_h_rs(dV, ch, lam_gamma, P, n_mc=n_rs, rng=rng_rs)
    rows = []
    rem, rem_var, tail = 0.0, 0.0, 0.0
    tw = np.zeros(grid.size)
    tw[1:] += np.diff(grid) / 2
    tw[:-1] += np.diff(grid) / 2
    # checks arrive at rate 1/P'(1) per bit per unit s, which turns R_n into a per-bit quantity
    tw = tw / P.derivative_at_one()
    for t_star in range(t_max):
        for s, wt in zip(grid, tw):
            est = remainder_term(n, lambda_dist, P, gamma, t_star, float(s), dV, pmax, n_mc, rng_r, ch, xmodel)
            rows.append({"t_star": t_star, "s": float(s), "R": est.total, "stderr": est.stderr})
            rem += wt * est.total
            rem_var += (wt * est.stderr) ** 2
            tail += wt * est.tail_bound
    e_mean = float(ent.mean())
    e_se = float(ent.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    disc = e_mean - rs.value - rem
    comb = math.sqrt(e_se**2 + rs.stderr**2 + rem_var)
    return SumRuleReport(n, gamma, t_max, e_mean, e_se, rs.value, rs.stderr, rem, math.sqrt(rem_var), tail, disc, comb, rows, lam_gamma.as_dict())


# ------------------------------------------------------ concentration


def wilson_interval(k: int, m: int, level: float = 0.95):
    if m == 0:
        return 0.0, 1.0
    ci = binomtest(int(k), int(m)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class ProbeRow:
    n: int
    delta: float
    p: int
    probability: float
    ci_low: float
    ci_high: float
    exact_probability: Optional[float]
    chebyshev: float
    cauchy_schwarz: float
    sweep_bound: float
    C3: float
    chain_ok: bool
    overbound_ok: bool
    n_realizations: int
    draws: int


def probe_bounds(sys: GibbsSystem, w, X, p: int, n: int, delta: float, P: DegreeDistribution, x: float):
    """Per realization: (exact exceedance probability or None, Chebyshev bound, Cauchy-Schwarz-stage bound)."""
    P = P.to_node()
    rep = overlap_moments(sys, w, X, p)
    thr = 2.0 * p / n**delta
    dP = float(_dpoly(P, x))
    T = sys.means()
    pm = sys.pair_matrix()
    a = w * X
    var = float(a @ (pm ** (2 * p) - np.outer(T ** (2 * p), T ** (2 * p))) @ a)
    cheb = n ** (2 * delta) / (4.0 * p * p) * dP**2 * max(var, 0.0)
    corr = pm - np.outer(T, T)
    cs = n ** (2 * delta) / (2.0 * p) * x**2 * dP**2 * float(w @ np.abs(corr) @ w)
    law = overlap_distribution(sys, w, X, p)
    exact = None
    if law is not None:
        vals, probs = law
        exact = float(probs[np.abs(_poly(P, vals) - _poly(P, rep.Q_mean)) > thr].sum())
    return exact, cheb, cs, corr, rep


def concentration_probe(n_list: Sequence[int], delta: float, p: int, ch, lambda_dist, p_dist, gamma: float, t_star: int, n_mc: int, rng, dV: Optional[Population] = None, draws: int = 16, xmodel: XModel = XModel()) -> List[ProbeRow]:
    """Empirical P_s[|P(Q_2p) - P(<Q_2p>)| > 2p/n^delta] with s ~ U[0, gamma].

    Per realization, `draws` replica tuples of 2p exact Gibbs codewords are
    drawn. Exact exceedance probabilities, the Chebyshev bound and the
    Cauchy-Schwarz-stage bound are computed from exact brackets, and the
    sweep-level correlation bound uses C_3 = n^2 max_ij E[x^4 P'(x)^4 w_i^2 w_j^2]^(1/2).
    """
    if not delta < 0.25:
        raise ValueError("concentration requires delta < 1/4")
    if p < 1:
        raise ValueError("p must be >= 1")
    P = p_dist.to_node()
    if dV is None:
        dV = Population.from_channel(ch, 10_000, rng)
    rows = []
    for n in n_list:
        t_max = max(rounds_count(lambda_dist, gamma), 0)
        t_s = t_star
        thr = 2.0 * p / n**delta
        hits = 0
        exact_vals, cheb_vals, cs_vals = [], [], []
        moment4 = np.zeros((n, n))
        corr2 = np.zeros((n, n))
        chain_ok = True
        over_ok = True
        for r in range(n_mc):
            s = float(rng.uniform(0.0, gamma))
            point = InterpolationPoint(min(t_s, max(t_max - 1, 0)), s)
            sys, w, X, _ = _realization(n, lambda_dist, P, gamma, point, dV, ch, xmodel, rng)
            x = float(max(X.max(), 1e-300))
            exact, cheb, cs, corr, rep = probe_bounds(sys, w, X, p, n, delta, P, x)
            reps = sys.sample_codewords(rng, 2 * p * draws).reshape(draws, 2 * p, n).prod(axis=1)
            Q = reps @ (w * X)
            over_ok &= bool(np.all(np.abs(Q) <= rep.bound + 1e-12))
            hits += int(np.sum(np.abs(_poly(P, Q) - _poly(P, rep.Q_mean)) > thr))
            exact_vals.append(exact)
            cheb_vals.append(cheb)
            cs_vals.append(cs)
            dP = float(_dpoly(P, x))
            # rounding allowance relative to the scale of the bounds
            tol = 1e-12 * (1.0 + n ** (2 * delta) / p * dP**2 * x**2)
            if exact is not None:
                chain_ok &= exact <= cheb + tol
            chain_ok &= cheb <= cs + tol
            moment4 += x**4 * dP**4 * np.outer(w**2, w**2)
            corr2 += corr**2
        moment4 /= n_mc
        corr2 /= n_mc
        sweep_cs = n ** (2 * delta) / (2.0 * p) * math.sqrt(moment4.sum()) * math.sqrt(corr2.sum())
        C3 = n**2 * math.sqrt(moment4.max())
        sweep = n ** (2 * delta - 1) / (2.0 * p) * C3 * math.sqrt(corr2.sum())
        cs_mean = float(np.mean(cs_vals))
        chain_ok &= cs_mean <= sweep_cs * (1 + 1e-12) + 1e-15 and sweep_cs <= sweep * (1 + 1e-12) + 1e-15
        m = n_mc * draws
        lo, hi = wilson_interval(hits, m)
        ex = None if any(e is None for e in exact_vals) else float(np.mean(exact_vals))
        rows.append(ProbeRow(n, delta, p, hits / m, lo, hi, ex, float(np.mean(cheb_vals)), cs_mean, sweep, C3, bool(chain_ok), bool(over_ok), n_mc, m))
    return rows


def trend_nonincreasing(rows: Sequence[ProbeRow]) -> bool:
    """True if each probability is compatible with not exceeding the previous one (Wilson intervals overlap or decrease)."""
    return all(b.ci_low <= a.ci_high for a, b in zip(rows, rows[1:]))
