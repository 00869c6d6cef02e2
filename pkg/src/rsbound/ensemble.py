"""Degree distributions and Tanner-graph samplers.

Covers the standard configuration-model LDPC ensemble, the Poisson ensemble,
the round-based multi-Poisson ensemble and its (t*, s) interpolation, where
removed check edges are compensated by extra observations on variables.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np


class DegreeDistribution:
    """Degree polynomial with nonnegative coefficients summing to one.

    Node perspective: Lambda(x) = sum_d c_d x^d (fraction of nodes of degree d).
    Edge perspective: lambda(x) = sum_d c_d x^(d-1) (fraction of edges).
    """

    def __init__(self, coeffs, perspective: str = "node"):
        if perspective not in ("node", "edge"):
            raise ValueError("perspective must be 'node' or 'edge'")
        if isinstance(coeffs, dict):
            items = {int(d): float(c) for d, c in coeffs.items() if float(c) != 0.0}
        else:
            items = {d: float(c) for d, c in enumerate(coeffs) if float(c) != 0.0}
        if not items:
            raise ValueError("degree distribution is empty")
        if any(c < 0 for c in items.values()) or any(d < 0 for d in items):
            raise ValueError("degrees and coefficients must be nonnegative")
        total = sum(items.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"coefficients sum to {total}, not 1")
        if perspective == "edge" and 0 in items:
            raise ValueError("an edge-perspective distribution cannot have degree 0")
        self.perspective = perspective
        self.degrees = np.array(sorted(items), dtype=np.int64)
        self.probs = np.array([items[d] for d in self.degrees]) / total

    @classmethod
    def regular(cls, d: int):
        return cls({d: 1.0})

    @classmethod
    def from_histogram(cls, degrees: Sequence[int]):
        vals, cnt = np.unique(np.asarray(degrees, dtype=np.int64), return_counts=True)
        return cls({int(v): c / cnt.sum() for v, c in zip(vals, cnt)})

    def as_dict(self) -> Dict[int, float]:
        return {int(d): float(p) for d, p in zip(self.degrees, self.probs)}

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max())

    def mean(self) -> float:
        """Mean degree; equals Lambda'(1) for a node-perspective distribution."""
        return float(np.sum(self.degrees * self.probs))

    def derivative_at_one(self) -> float:
        if self.perspective == "node":
            return self.mean()
        return float(np.sum((self.degrees - 1) * self.probs))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        shift = 0 if self.perspective == "node" else 1
        return sum(p * x ** (d - shift) for d, p in zip(self.degrees, self.probs))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        shift = 0 if self.perspective == "node" else 1
        return sum(p * (d - shift) * x ** (d - shift - 1) for d, p in zip(self.degrees, self.probs) if d - shift > 0)

    def to_edge(self) -> "DegreeDistribution":
        if self.perspective == "edge":
            return self
        w = self.degrees * self.probs
        if w.sum() == 0:
            raise ValueError("no edges: all nodes have degree 0")
        return DegreeDistribution({int(d): float(x / w.sum()) for d, x in zip(self.degrees, w) if x > 0}, "edge")

    def to_node(self) -> "DegreeDistribution":
        if self.perspective == "node":
            return self
        w = self.probs / self.degrees
        return DegreeDistribution({int(d): float(x / w.sum()) for d, x in zip(self.degrees, w)}, "node")

    def sample(self, rng: np.random.Generator, size=None):
        return self.degrees[rng.choice(len(self.degrees), size=size, p=self.probs)]

    def __repr__(self):
        terms = " + ".join(f"{p:g}x^{d}" for d, p in zip(self.degrees, self.probs))
        return f"DegreeDistribution({terms}, {self.perspective})"


def design_rate(lam: DegreeDistribution, rho: DegreeDistribution) -> float:
    return 1.0 - lam.to_node().mean() / rho.to_node().mean()


def largest_remainder(total: int, probs) -> np.ndarray:
    """Integer counts summing to ``total`` closest to total * probs."""
    probs = np.asarray(probs, dtype=float)
    raw = total * probs
    base = np.floor(raw + 1e-9).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


@dataclass(eq=False)
class TannerGraph:
    n: int
    checks: List[tuple]
    extra_obs: List[tuple] = field(default=None)
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.checks = [tuple(int(v) for v in c) for c in self.checks]
        if self.extra_obs is None:
            self.extra_obs = [() for _ in range(self.n)]
        self.extra_obs = [tuple(float(u) for u in obs) for obs in self.extra_obs]
        if len(self.extra_obs) != self.n:
            raise ValueError("extra_obs must have one list per variable")
        for c in self.checks:
            for v in c:
                if not 0 <= v < self.n:
                    raise ValueError(f"check endpoint {v} out of range for n={self.n}")

    def __eq__(self, other):
        return (
            isinstance(other, TannerGraph)
            and self.n == other.n
            and self.checks == other.checks
            and self.extra_obs == other.extra_obs
            and self.seed == other.seed
        )

    @property
    def n_checks(self) -> int:
        return len(self.checks)

    def variable_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for c in self.checks:
            for v in c:
                deg[v] += 1
        return deg

    def check_degrees(self) -> np.ndarray:
        return np.array([len(c) for c in self.checks], dtype=np.int64)

    def parity_matrix(self) -> np.ndarray:
        """GF(2) parity-check matrix; a repeated endpoint cancels (sigma^2 = 1)."""
        H = np.zeros((len(self.checks), self.n), dtype=np.uint8)
        for r, c in enumerate(self.checks):
            for v in c:
                H[r, v] ^= 1
        return H

    def obs_field(self) -> np.ndarray:
        """Sum of extra observations per variable."""
        return np.array([sum(o) for o in self.extra_obs], dtype=float)

    def n_obs(self) -> int:
        return sum(len(o) for o in self.extra_obs)

    def to_text(self) -> str:
        lines = ["# tanner graph v1", f"n {self.n} checks {len(self.checks)} seed {'-' if self.seed is None else self.seed}"]
        for c in self.checks:
            lines.append("c " + " ".join(str(v) for v in c))
        with_obs = [(i, o) for i, o in enumerate(self.extra_obs) if o]
        lines.append(f"obs {len(with_obs)}")
        for i, o in with_obs:
            lines.append(f"o {i} " + " ".join(repr(u) for u in o))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TannerGraph":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        head = rows[0]
        if head[0] != "n" or head[2] != "checks" or head[4] != "seed":
            raise ValueError("malformed graph header")
        n, m = int(head[1]), int(head[3])
        seed = None if head[5] == "-" else int(head[5])
        checks = [tuple(int(v) for v in r[1:]) for r in rows[1 : 1 + m]]
        if any(r[0] != "c" for r in rows[1 : 1 + m]):
            raise ValueError("check section length does not match header")
        obs = [() for _ in range(n)]
        k = int(rows[1 + m][1])
        for r in rows[2 + m : 2 + m + k]:
            obs[int(r[1])] = tuple(float(u) for u in r[2:])
        return cls(n, checks, obs, seed)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "TannerGraph":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _variable_degree_sequence(n, lam: DegreeDistribution, rng):
    lam = lam.to_node()
    counts = largest_remainder(n, lam.probs)
    seq = np.repeat(lam.degrees, counts)
    return rng.permutation(seq)


def _check_degree_counts(n_edges: int, rho: DegreeDistribution) -> np.ndarray:
    P = rho.to_node()
    m = int(round(n_edges / P.mean())) if n_edges else 0
    counts = largest_remainder(m, P.probs)
    deg = P.degrees
    gap = n_edges - int(np.sum(deg * counts))
    if gap == 0:
        return counts
    # single-check repairs: retype one check, or add/remove one check
    for a in range(len(deg)):
        for b in range(len(deg)):
            if counts[a] > 0 and deg[b] - deg[a] == gap:
                counts[a] -= 1
                counts[b] += 1
                return counts
    for a in range(len(deg)):
        if deg[a] == gap:
            counts[a] += 1
            return counts
        if deg[a] == -gap and counts[a] > 0:
            counts[a] -= 1
            return counts
    raise ValueError(f"impossible socket balance: {n_edges} variable sockets cannot match check degrees {list(deg)}")


def sample_standard(n: int, lambda_dist: DegreeDistribution, p_dist: DegreeDistribution, rng, seed=None) -> TannerGraph:
    """Configuration-model sample from LDPC(n, Lambda, P); multi-edges are kept."""
    vdeg = _variable_degree_sequence(n, lambda_dist, rng)
    sockets = np.repeat(np.arange(n), vdeg)
    P = p_dist.to_node()
    counts = _check_degree_counts(len(sockets), P)
    cdeg = rng.permutation(np.repeat(P.degrees, counts))
    sockets = rng.permutation(sockets)
    bounds = np.concatenate([[0], np.cumsum(cdeg)])
    checks = [tuple(sockets[bounds[j] : bounds[j + 1]]) for j in range(len(cdeg))]
    g = TannerGraph(n, checks, seed=seed)
    g.meta["multi_edges"] = sum(len(c) - len(set(c)) for c in checks)
    return g


def sample_poisson(n: int, rate: float, p_dist: DegreeDistribution, rng, seed=None) -> TannerGraph:
    """Poisson ensemble: m_k ~ Poisson(n (1-r) P_k), endpoints uniform with replacement."""
    if not 0.0 < rate <= 1.0:
        raise ValueError("rate must be in (0, 1]")
    P = p_dist.to_node()
    checks = []
    for k, pk in zip(P.degrees, P.probs):
        m_k = rng.poisson(n * (1.0 - rate) * pk)
        if m_k:
            ends = rng.integers(0, n, size=(m_k, int(k)))
            checks.extend(tuple(r) for r in ends)
    return TannerGraph(n, checks, seed=seed)


@dataclass
class MultiPoissonState:
    d: np.ndarray
    t: int
    gamma: float
    t_max: int
    overdraw: int = 0
    degenerate: bool = False
    weight_sums: List[float] = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return socket_weights(self)


def socket_weights(state: MultiPoissonState) -> np.ndarray:
    """w_i = d_i / sum_j d_j; uniform with a warning when every socket is used."""
    total = int(state.d.sum())
    if total == 0:
        warnings.warn("all free sockets exhausted; using uniform weights", RuntimeWarning, stacklevel=2)
        return np.full(len(state.d), 1.0 / len(state.d))
    return state.d / total


def rounds_count(lambda_dist: DegreeDistribution, gamma: float) -> int:
    ratio = lambda_dist.to_node().mean() / gamma
    return int(math.floor(ratio + 1e-9)) - 1


def _initial_state(n, lambda_dist, gamma, rng) -> MultiPoissonState:
    lam = lambda_dist.to_node()
    if not 0.0 < gamma <= lam.mean() + 1e-12:
        raise ValueError("gamma must lie in (0, Lambda'(1)]")
    d = _variable_degree_sequence(n, lam, rng).astype(np.int64)
    return MultiPoissonState(d=d, t=0, gamma=gamma, t_max=max(rounds_count(lam, gamma), 0))


def _consume(state: MultiPoissonState, used: np.ndarray):
    over = np.maximum(used - state.d, 0)
    state.overdraw += int(over.sum())
    state.d = np.maximum(state.d - used, 0)


def _weights_for_round(state: MultiPoissonState, n: int) -> np.ndarray:
    if state.d.sum() == 0:
        state.degenerate = True
        return np.full(n, 1.0 / n)
    return state.d / state.d.sum()


def _check_round(n, size, P: DegreeDistribution, w, rng, state: MultiPoissonState):
    checks = []
    used = np.zeros(n, dtype=np.int64)
    for k, pk in zip(P.degrees, P.probs):
        m_k = rng.poisson(n * size * pk / P.mean())
        if m_k:
            ends = rng.choice(n, size=(m_k, int(k)), p=w)
            checks.extend(tuple(r) for r in ends)
            used += np.bincount(ends.ravel(), minlength=n)
    state.weight_sums.append(float(w.sum()))
    return checks, used


def _finish(n, checks, state, obs=None, seed=None) -> TannerGraph:
    g = TannerGraph(n, checks, obs, seed=seed)
    g.meta.update(overdraw=state.overdraw, degenerate=state.degenerate, t_max=state.t_max)
    if state.degenerate:
        warnings.warn("socket state degenerated to zero before the last round", RuntimeWarning, stacklevel=3)
    return g


def sample_multi_poisson(n: int, lambda_dist, p_dist, gamma: float, rng, seed=None):
    """Round-based multi-Poisson ensemble; returns (graph, final socket state)."""
    P = p_dist.to_node()
    state = _initial_state(n, lambda_dist, gamma, rng)
    checks = []
    for t in range(1, state.t_max + 1):
        w = _weights_for_round(state, n)
        new, used = _check_round(n, gamma, P, w, rng, state)
        checks.extend(new)
        _consume(state, used)
        state.t = t
    return _finish(n, checks, state, seed=seed), state


@dataclass(frozen=True)
class InterpolationPoint:
    """Interpolation coordinates: rounds 1..t_star are complete, round t_star+1 uses s."""

    t_star: int
    s: float

    def validate(self, gamma: float, t_max: int):
        if not 0.0 <= self.s <= gamma + 1e-12:
            raise ValueError("s must lie in [0, gamma]")
        if not 0 <= self.t_star <= t_max:
            raise ValueError(f"t_star must lie in [0, {t_max}]")


def draw_observations(count: int, dV, rho_edge: DegreeDistribution, rng) -> np.ndarray:
    """Observation values U = check_combine of (k-1) fresh dV samples, k ~ rho."""
    from .rs_solver import combine_rows

    out = np.empty(count)
    if count == 0:
        return out
    ks = rho_edge.sample(rng, size=count)
    for k in np.unique(ks):
        idx = np.flatnonzero(ks == k)
        vals = dV.draw(rng, (len(idx), int(k) - 1))
        out[idx] = combine_rows(vals)
    return out


def sample_interpolating(n: int, lambda_dist, p_dist, gamma: float, point: InterpolationPoint, dV, rng, seed=None):
    """(t*, s) interpolating ensemble; returns (graph, socket state, weights w(t*)).

    Rounds 1..t* are ordinary multi-Poisson rounds. Round t*+1 adds checks at
    size s plus Poisson(n (gamma - s) w_i(t*)) observations per variable. Each
    later round adds only Poisson(n gamma w_i(t*)) observations. The pair
    (t_max, gamma) reproduces the multi-Poisson ensemble.
    """
    P = p_dist.to_node()
    rho = P.to_edge()
    state = _initial_state(n, lambda_dist, gamma, rng)
    point.validate(gamma, state.t_max)
    checks = []
    for t in range(1, point.t_star + 1):
        w = _weights_for_round(state, n)
        new, used = _check_round(n, gamma, P, w, rng, state)
        checks.extend(new)
        _consume(state, used)
        state.t = t
    w_star = _weights_for_round(state, n)
    counts = np.zeros(n, dtype=np.int64)
    for t in range(point.t_star + 1, state.t_max + 1):
        if t == point.t_star + 1:
            new, used = _check_round(n, point.s, P, w_star, rng, state)
            checks.extend(new)
            e = rng.poisson(n * (gamma - point.s) * w_star)
            used = used + e
        else:
            state.weight_sums.append(float(w_star.sum()))
            e = rng.poisson(n * gamma * w_star)
            used = e
        counts += e
        _consume(state, used)
        state.t = t
    values = draw_observations(int(counts.sum()), dV, rho, rng)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    obs = [tuple(values[bounds[i] : bounds[i + 1]]) for i in range(n)]
    g = _finish(n, checks, state, obs, seed=seed)
    return g, state, w_star
