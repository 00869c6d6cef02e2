"""Population dynamics and the replica-symmetric entropy functional.

Message values are effective fields (half log-likelihoods): a population
sample ``v`` stands for the soft bit ``tanh(v)``, and a symmetric density
satisfies E[tanh^(2p-1) v] = E[tanh^(2p) v]. Infinite fields are kept as
IEEE infinities, which every routine here treats exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import channel as chan
from .ensemble import DegreeDistribution
from .seeding import child

LN2 = math.log(2.0)
CHUNK = 1 << 17
ZERO_TOL = 1e-12


def _psi(x):
    """-ln tanh(x) for x >= 0, computed without cancellation; psi(0) = inf."""
    with np.errstate(divide="ignore"):
        e = np.exp(-2.0 * x)
        return np.log1p(e) - np.log1p(-e)


def _psi_inv(s):
    """atanh(exp(-s)) for s >= 0."""
    with np.errstate(divide="ignore"):
        e = np.exp(-s)
        return 0.5 * (np.log1p(e) - np.log(-np.expm1(-s)))


def combine_rows(vals: np.ndarray) -> np.ndarray:
    """Row-wise atanh(prod tanh v); an empty row gives +inf."""
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 1:
        vals = vals[None, :]
    if vals.shape[1] == 0:
        return np.full(vals.shape[0], np.inf)
    sign = np.prod(np.where(vals < 0, -1.0, 1.0), axis=1)
    mag = _psi_inv(np.sum(_psi(np.abs(vals)), axis=1))
    return sign * mag


def check_combine(v_list: Sequence[float]) -> float:
    """atanh(prod_i tanh v_i) with exact handling of 0 and +/-inf inputs."""
    return float(combine_rows(np.asarray(list(v_list), dtype=float)[None, :])[0])


def log1p_tanh(u):
    """ln(1 + tanh u), finite for u > -inf."""
    return LN2 - np.logaddexp(0.0, -2.0 * np.asarray(u, dtype=float))


def log1m_tanh(u):
    """ln(1 - tanh u)."""
    return LN2 - np.logaddexp(0.0, 2.0 * np.asarray(u, dtype=float))


class Population:
    """Empirical density of fields; infinite samples are exact atoms."""

    def __init__(self, samples):
        self.samples = np.asarray(samples, dtype=float).copy()
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("population must be a nonempty 1-d sample list")
        if np.any(np.isnan(self.samples)):
            raise ValueError("population contains NaN")
        self.samples.setflags(write=False)

    @classmethod
    def constant(cls, value: float, N: int):
        return cls(np.full(N, float(value)))

    @classmethod
    def from_channel(cls, ch, N: int, rng):
        return cls(chan.sample_llr(ch, rng, N) / 2.0)

    @classmethod
    def bec(cls, x: float, N: int):
        """Two-atom population with erasure (zero-field) fraction x."""
        k = int(round(x * N))
        return cls(np.concatenate([np.zeros(k), np.full(N - k, np.inf)]))

    @property
    def N(self) -> int:
        return self.samples.size

    @property
    def pos_inf_mass(self) -> float:
        return float(np.mean(self.samples == np.inf))

    @property
    def neg_inf_mass(self) -> float:
        return float(np.mean(self.samples == -np.inf))

    @property
    def zero_mass(self) -> float:
        return float(np.mean(self.samples == 0.0))

    def is_bec(self) -> bool:
        return bool(np.all((self.samples == 0.0) | (self.samples == np.inf)))

    def draw(self, rng, size):
        return self.samples[rng.integers(0, self.N, size=size)]

    def shuffled(self, rng) -> "Population":
        return Population(rng.permutation(self.samples))

    def tanh_moments(self, pmax: int = 4, odd: bool = False) -> np.ndarray:
        t = np.tanh(self.samples)
        ks = [2 * p - 1 if odd else 2 * p for p in range(1, pmax + 1)]
        return np.array([np.mean(t**k) for k in ks])

    def nishimori_diagnostic(self, pmax: int = 4):
        """Per p: (E[t^(2p-1)] - E[t^(2p)], standard error of the difference)."""
        t = np.tanh(self.samples)
        out = []
        for p in range(1, pmax + 1):
            diff = t ** (2 * p - 1) - t ** (2 * p)
            out.append((float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(self.N))))
        return out

    def is_symmetric(self, pmax: int = 4, z: float = 4.0) -> bool:
        return all(abs(d) <= z * se + 1e-15 for d, se in self.nishimori_diagnostic(pmax))

    def to_csv(self, meta: Optional[dict] = None) -> str:
        lines = [
            f"# population N={self.N} pos_inf_mass={self.pos_inf_mass!r} neg_inf_mass={self.neg_inf_mass!r}",
        ]
        for k, v in (meta or {}).items():
            lines.append(f"# {k}={v}")
        lines.append("v")
        lines.extend(repr(float(v)) for v in self.samples)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "Population":
        vals = [float(ln) for ln in text.splitlines() if ln and not ln.startswith("#") and ln != "v"]
        return cls(vals)

    def save(self, path, meta=None):
        with open(path, "w") as fh:
            fh.write(self.to_csv(meta))

    @classmethod
    def load(cls, path) -> "Population":
        with open(path) as fh:
            return cls.from_csv(fh.read())


def _incoming_sum(count_per_owner: np.ndarray, pop: Population, rho_edge: DegreeDistribution, rng) -> np.ndarray:
    """For each owner, the sum of count_per_owner[i] fresh U messages."""
    u, owner = _u_lists(count_per_owner, pop, rho_edge, rng)
    out = np.zeros(len(count_per_owner))
    np.add.at(out, owner, u)
    return out


def _u_lists(count_per_owner, pop, rho_edge, rng):
    """Fresh U messages plus owner index, for per-owner reductions."""
    total = int(count_per_owner.sum())
    owner = np.repeat(np.arange(len(count_per_owner)), count_per_owner)
    u = np.empty(total)
    if total:
        ks = rho_edge.sample(rng, size=total)
        for k in np.unique(ks):
            idx = np.flatnonzero(ks == k)
            u[idx] = combine_rows(pop.draw(rng, (len(idx), int(k) - 1)))
    return u, owner


def de_iteration(pop: Population, ch, lambda_edge: DegreeDistribution, rho_edge: DegreeDistribution, rng, N: Optional[int] = None) -> Population:
    """One density-evolution step: v = l/2 + sum_{c<d} U_c, d ~ lambda, U_c from (k-1) ~ rho inputs."""
    lam = lambda_edge.to_edge()
    rho = rho_edge.to_edge()
    N = pop.N if N is None else N
    d = lam.sample(rng, size=N)
    with np.errstate(invalid="raise"):
        v = chan.sample_llr(ch, rng, N) / 2.0 + _incoming_sum(d - 1, pop, rho, rng)
    return Population(v)


@dataclass
class RsValue:
    value: float
    stderr: float
    terms: Dict[str, float] = field(default_factory=dict)


def _term1_samples(d, pop, ch, rho, rng):
    """Samples of ln(prod(1+tanh U) + e^{-l} prod(1-tanh U)); l integrated exactly over atoms when discrete."""
    u, owner = _u_lists(d, pop, rho, rng)
    A = np.zeros(len(d))
    B = np.zeros(len(d))
    np.add.at(A, owner, log1p_tanh(u))
    np.add.at(B, owner, log1m_tanh(u))
    if ch.is_discrete:
        l, _, w = chan.atoms(ch)
        vals = np.logaddexp(A[:, None], -l[None, :] + B[:, None])
        return vals @ w
    l = chan.sample_llr(ch, rng, len(d))
    return np.logaddexp(A, -l + B)


def _h_rs_samples(dV: Population, ch, lam_node, p_node, n, rng):
    lam = lam_node.to_node()
    P = p_node.to_node()
    rho = P.to_edge()
    ratio = lam.mean() / P.mean()
    t1 = _term1_samples(lam.sample(rng, size=n), dV, ch, rho, rng)
    ks = P.sample(rng, size=n)
    t2 = np.empty(n)
    for k in np.unique(ks):
        idx = np.flatnonzero(ks == k)
        t2[idx] = log1p_tanh(combine_rows(dV.draw(rng, (len(idx), int(k)))))
    u, _ = _u_lists(np.ones(n, dtype=np.int64), dV, rho, rng)
    v = dV.draw(rng, n)
    t3 = log1p_tanh(combine_rows(np.stack([v, u], axis=1)))
    return t1, t2, t3, ratio, lam.mean()


def _h_rs_constant(v0: float, ch, lambda_node, p_node, max_terms: int = 200_000):
    """Exact h_RS for a population concentrated on one value; None if too many terms."""
    from itertools import combinations_with_replacement
    from math import factorial

    lam = lambda_node.to_node()
    P = p_node.to_node()
    rho = P.to_edge()
    ratio = lam.mean() / P.mean()
    u_of = {int(k): check_combine([v0] * (int(k) - 1)) for k in rho.degrees}
    l, _, w = chan.nodes(ch)
    bit = 0.0
    n_terms = 0
    for d, pd in zip(lam.degrees, lam.probs):
        for combo in combinations_with_replacement(range(len(rho.degrees)), int(d)):
            n_terms += 1
            if n_terms > max_terms:
                return None
            counts = np.bincount(np.asarray(combo, dtype=np.int64), minlength=len(rho.degrees))
            prob = factorial(int(d)) * np.prod([rho.probs[j] ** c / factorial(c) for j, c in enumerate(counts)])
            u = np.array([u_of[int(rho.degrees[j])] for j in combo])
            A = float(np.sum(log1p_tanh(u)))
            B = float(np.sum(log1m_tanh(u)))
            bit += pd * prob * float(np.sum(w * np.logaddexp(A, -l + B)))
    check = sum(pk * float(log1p_tanh(check_combine([v0] * int(k)))) for k, pk in zip(P.degrees, P.probs))
    edge = sum(rk * float(log1p_tanh(check_combine([v0, u_of[int(k)]]))) for k, rk in zip(rho.degrees, rho.probs))
    terms = {"bit": bit, "check": ratio * check, "edge": -lam.mean() * edge, "const": -ratio * LN2}
    return RsValue(float(sum(terms.values())), 0.0, terms)


def evaluate_h_rs(dV: Population, ch, lambda_node, p_node, n_mc: int = 200_000, rng=None, n_batches: int = 20) -> RsValue:
    """Monte Carlo estimate of h_RS[dV; Lambda, P] in nats per bit, stderr by batch means.

    The first term is taken relative to the transmitted codeword, i.e. the
    bit-node contribution is ln(prod(1+tanh U_c) + e^{-l} prod(1-tanh U_c)),
    which keeps the functional finite for channels with infinite LLRs.
    """
    if np.all(dV.samples == dV.samples[0]):
        exact = _h_rs_constant(float(dV.samples[0]), ch, lambda_node, p_node)
        if exact is not None:
            return exact
    rng = np.random.default_rng() if rng is None else rng
    n_batches = max(2, min(n_batches, n_mc))
    sizes = np.full(n_batches, n_mc // n_batches)
    sizes[: n_mc % n_batches] += 1
    means = []
    parts = np.zeros(3)
    ratio = mean_deg = None
    for size in sizes:
        acc = np.zeros(4)
        done = 0
        while done < size:
            m = int(min(CHUNK, size - done))
            t1, t2, t3, ratio, mean_deg = _h_rs_samples(dV, ch, lambda_node, p_node, m, rng)
            f = t1 + ratio * t2 - mean_deg * t3
            acc += [f.sum(), t1.sum(), t2.sum(), t3.sum()]
            done += m
        means.append(acc[0] / size - ratio * LN2)
        parts += acc[1:]
    means = np.array(means)
    terms = {
        "bit": parts[0] / n_mc,
        "check": ratio * parts[1] / n_mc,
        "edge": -mean_deg * parts[2] / n_mc,
        "const": -ratio * LN2,
    }
    value = float(np.sum(means * sizes) / n_mc)
    stderr = float(means.std(ddof=1) / math.sqrt(len(means)))
    return RsValue(value, stderr, terms)


def bec_closed_form(lambda_node, p_node, epsilon: float, x: float) -> float:
    """h_RS for BEC(eps) and the two-atom density with erasure mass x (nats)."""
    lam = lambda_node.to_node()
    P = p_node.to_node()
    rho = P.to_edge()
    y = 1.0 - float(rho(1.0 - x))
    L1, P1 = lam.mean(), P.mean()
    val = L1 * (1.0 - y) + epsilon * float(lam(y)) + (L1 / P1) * float(P(1.0 - x)) - L1 * (1.0 - x) * (1.0 - y) - L1 / P1
    return LN2 * val


def bec_de_step(lambda_node, p_node, epsilon, x):
    lam = lambda_node.to_edge()
    rho = p_node.to_edge()
    return epsilon * lam(1.0 - rho(1.0 - x))


def bec_fixed_point(lambda_node, p_node, epsilon, x0=1.0, iters=100_000, tol=1e-15) -> float:
    x = float(x0)
    for _ in range(iters):
        nx = float(bec_de_step(lambda_node, p_node, epsilon, x))
        if abs(nx - x) < tol:
            return nx
        x = nx
    return x


def bec_map_threshold(lambda_node, p_node, tol=1e-10) -> float:
    """Scalar-recursion MAP threshold estimate: first eps where h_RS at the zero-information fixed point is positive."""

    def f(e):
        return bec_closed_form(lambda_node, p_node, e, bec_fixed_point(lambda_node, p_node, e))

    lo, hi = 1e-6, 1.0
    if f(hi) <= 0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 1e-14:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


INITS = ("zero-info", "full-info", "channel")


@dataclass
class FixedPointResult:
    population: Population
    converged: bool
    iterations: int
    init: str
    moment_history: List[np.ndarray] = field(default_factory=list)


def initial_population(init: str, ch, N: int, rng) -> Population:
    if init == "zero-info":
        return Population.constant(0.0, N)
    if init == "full-info":
        return Population.constant(np.inf, N)
    if init == "channel":
        return Population.from_channel(ch, N, rng)
    raise ValueError(f"unknown initialization {init!r}; expected one of {INITS}")


def fixed_point(ch, lambda_dist, p_dist, init: str = "zero-info", iters: int = 500, N: int = 100_000, rng=None, tol: float = 1e-4, window: int = 10) -> FixedPointResult:
    """Iterate density evolution until the tanh moment vector stabilizes.

    Convergence: the window-averaged moments E[tanh^(2p) v], p <= 4, of two
    consecutive windows differ by less than tol plus four Monte Carlo
    standard errors of the window averages.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    lam = lambda_dist.to_edge()
    rho = p_dist.to_edge()
    pop = initial_population(init, ch, N, rng)
    hist = []
    sds = []
    for it in range(1, iters + 1):
        pop = de_iteration(pop, ch, lam, rho, rng)
        t2 = np.tanh(pop.samples) ** 2
        powers = np.stack([t2**p for p in range(1, 5)])
        hist.append(powers.mean(axis=1))
        sds.append(powers.std(axis=1))
        if len(hist) >= 2 and np.array_equal(hist[-1], hist[-2]) and np.all(sds[-1] == 0):
            return FixedPointResult(pop, True, it, init, hist)
        if len(hist) >= 2 * window:
            a = np.mean(hist[-window:], axis=0)
            b = np.mean(hist[-2 * window : -window], axis=0)
            noise = np.max(sds[-1]) / math.sqrt(N * window)
            if np.max(np.abs(a - b)) < tol + 4.0 * math.sqrt(2.0) * noise:
                return FixedPointResult(pop, True, it, init, hist)
    return FixedPointResult(pop, False, iters, init, hist)


@dataclass
class ThresholdResult:
    threshold: float
    interval: tuple
    rows: List[dict]
    flag: str = ""


def _sup_h(ch, lam, P, N, iters, n_mc, seed_seq):
    best = None
    rows = []
    for j, init in enumerate(INITS):
        fp = fixed_point(ch, lam, P, init, iters, N, np.random.default_rng(child(seed_seq, j, 0)))
        val = evaluate_h_rs(fp.population, ch, lam, P, n_mc, np.random.default_rng(child(seed_seq, j, 1)))
        rows.append((init, val, fp))
        if best is None or val.value > best[1].value:
            best = (init, val, fp)
    return best, rows


def map_threshold_upper_bound(ch, lambda_dist, p_dist, eps_grid, N: int = 100_000, iters: int = 500, n_mc: int = 1_000_000, seed: int = 0, bisect_tol: float = 2e-4, z: float = 2.0) -> ThresholdResult:
    """Smallest eps at which the sup of h_RS over reached fixed points is positive.

    Every evaluation at a given eps uses streams derived from (seed, init)
    only, so the same random numbers are reused along eps (common random
    numbers), which keeps the bisection stable.
    """
    grid = [float(e) for e in eps_grid]
    if not grid:
        raise ValueError("empty eps grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("eps grid must be strictly increasing")
    rows = []

    def evaluate(e):
        best, _ = _sup_h(ch.with_eps(e), lambda_dist, p_dist, N, iters, n_mc, np.random.SeedSequence(seed))
        init, val, fp = best
        rows.append({"eps": e, "h_rs_sup": val.value, "stderr": val.stderr, "init": init, "converged": fp.converged})
        return val

    prev = None
    hit = None
    for e in grid:
        val = evaluate(e)
        if val.value > z * val.stderr + ZERO_TOL:
            hit = e
            break
        prev = e
    if hit is None:
        return ThresholdResult(grid[-1], (grid[-1], grid[-1]), sorted(rows, key=lambda r: r["eps"]), "sup never positive on grid")
    if prev is None:
        return ThresholdResult(hit, (hit, hit), sorted(rows, key=lambda r: r["eps"]), "positive at first grid point")
    lo, hi = prev, hit
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if evaluate(mid).value > ZERO_TOL:
            hi = mid
        else:
            lo = mid
    rows.sort(key=lambda r: r["eps"])
    # uncertainty: points whose sign is not resolved at z standard errors
    unresolved = [r["eps"] for r in rows if abs(r["h_rs_sup"]) <= z * r["stderr"] + ZERO_TOL]
    lo_i = min(unresolved + [lo])
    hi_i = max(unresolved + [hi])
    return ThresholdResult(lo, (lo_i, hi_i), rows)
