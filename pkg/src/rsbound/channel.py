"""Binary memoryless symmetric channels in the difference domain.

Outputs are represented either by the log-likelihood ratio ``l`` or by
``t = tanh(l/2)``. The all-zero codeword is assumed to be transmitted, so
every density here is the output law conditioned on ``x = 0``.

Conventions:
    BEC(eps): l = +inf with probability 1 - eps, l = 0 otherwise.
    BSC(eps): l = +/- ln((1-eps)/eps), t = +/- (1 - 2 eps).
    BIAWGNC(eps): eps is the noise standard deviation; l ~ N(2/eps^2, 4/eps^2).
    Tabulated: a finite list of (t, weight) atoms plus a one-parameter family
        used for derivatives ("erasure" mixes in a point mass at t = 0 with
        weight eps, "flip" scales every atom by 1 - 2 eps).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

VARIANTS = ("BEC", "BSC", "BIAWGNC", "Tabulated")
AWGN_PANEL = 2.5
AWGN_PANEL_SD = 0.75
AWGN_ORDER = 10
AWGN_SPAN = 9.0
FD_STEP = 1e-4
SYMMETRY_TOL = 1e-9


def _awgn_panels(sigma: float, span: float = AWGN_SPAN) -> int:
    sd = math.sqrt(_awgn_params(sigma)[1])
    width = min(AWGN_PANEL, AWGN_PANEL_SD * sd)
    return max(4, int(math.ceil(2.0 * span * sd / width)))


def _awgn_rule(sigma: float, order: int = AWGN_ORDER, span: float = AWGN_SPAN, n_panels=None):
    """Composite Gauss-Legendre rule for l ~ N(2/sigma^2, 4/sigma^2).

    Panels are at most AWGN_PANEL wide in the l domain (to resolve tanh(l/2))
    and at most AWGN_PANEL_SD standard deviations wide (to resolve the
    Gaussian). The Gaussian mass outside +/- span deviations is below 1e-18.
    """
    mu, var = _awgn_params(sigma)
    sd = math.sqrt(var)
    lo, hi = mu - span * sd, mu + span * sd
    if n_panels is None:
        n_panels = _awgn_panels(sigma, span)
    x, wl = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    l = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    w = (half[:, None] * wl[None, :]).ravel()
    w = w * np.exp(-((l - mu) ** 2) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return l, w


def llr_to_t(l):
    return np.tanh(np.asarray(l, dtype=float) / 2.0)


def t_to_llr(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return 2.0 * np.arctanh(t)


@dataclass(frozen=True)
class TabulatedFamily:
    """Atoms (t_j, w_j) at the family's reference point and the family kind."""

    t: tuple
    w: tuple
    kind: str = "erasure"

    def __post_init__(self):
        if self.kind not in ("erasure", "flip", "fixed"):
            raise ValueError(f"unknown tabulated family kind {self.kind!r}")
        t = np.asarray(self.t, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if t.shape != w.shape or t.ndim != 1 or t.size == 0:
            raise ValueError("support and weights must be equal-length 1-d lists")
        if np.any(np.abs(t) > 1.0) or np.any(w < 0.0):
            raise ValueError("support must lie in [-1, 1] and weights be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        for p in range(1, 9):
            odd = float(np.sum(w * t ** (2 * p - 1)))
            even = float(np.sum(w * t ** (2 * p)))
            if abs(odd - even) > SYMMETRY_TOL:
                raise ValueError(
                    f"table is not symmetric: E[t^{2 * p - 1}]={odd:.3g} vs E[t^{2 * p}]={even:.3g}"
                )

    def at(self, eps: float):
        t = np.asarray(self.t, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if self.kind == "erasure":
            return np.append(t, 0.0), np.append((1.0 - eps) * w, eps)
        if self.kind == "flip":
            return (1.0 - 2.0 * eps) * t, w
        return t, w


def load_table_csv(path) -> tuple:
    """Read rows ``t,weight`` (an optional header line is skipped)."""
    ts, ws = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                t, w = float(row[0]), float(row[1])
            except ValueError:
                continue
            ts.append(t)
            ws.append(w)
    return tuple(ts), tuple(ws)


@dataclass(frozen=True)
class ChannelModel:
    variant: str
    eps: float
    family: Optional[TabulatedFamily] = field(default=None, compare=True)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown channel variant {self.variant!r}")
        e = float(self.eps)
        if self.variant == "BEC" and not 0.0 <= e <= 1.0:
            raise ValueError("BEC erasure probability must be in [0, 1]")
        if self.variant == "BSC" and not 0.0 <= e <= 0.5:
            raise ValueError("BSC crossover probability must be in [0, 1/2]")
        if self.variant == "BIAWGNC" and not e > 0.0:
            raise ValueError("BIAWGNC noise deviation must be positive")
        if self.variant == "Tabulated":
            if self.family is None:
                raise ValueError("tabulated channel needs a family")
            if self.family.kind == "erasure" and not 0.0 <= e <= 1.0:
                raise ValueError("erasure family parameter must be in [0, 1]")
            if self.family.kind == "flip" and not 0.0 <= e <= 0.5:
                raise ValueError("flip family parameter must be in [0, 1/2]")

    def with_eps(self, eps: float) -> "ChannelModel":
        return ChannelModel(self.variant, float(eps), self.family)

    @property
    def is_discrete(self) -> bool:
        return self.variant != "BIAWGNC"

    def __str__(self):
        return f"{self.variant}({self.eps:g})"


def BEC(eps):
    return ChannelModel("BEC", float(eps))


def BSC(eps):
    return ChannelModel("BSC", float(eps))


def BIAWGNC(eps):
    return ChannelModel("BIAWGNC", float(eps))


def Tabulated(t, w, eps=0.0, kind="erasure"):
    fam = TabulatedFamily(tuple(float(x) for x in t), tuple(float(x) for x in w), kind)
    return ChannelModel("Tabulated", float(eps), fam)


def _awgn_params(sigma):
    mu = 2.0 / sigma**2
    return mu, 2.0 * mu


def atoms(ch: ChannelModel):
    """Output atoms (l, t, w) of a discrete channel; zero-weight atoms dropped."""
    e = ch.eps
    if ch.variant == "BEC":
        l = np.array([np.inf, 0.0])
        w = np.array([1.0 - e, e])
    elif ch.variant == "BSC":
        if e == 0.0:
            l, w = np.array([np.inf]), np.array([1.0])
        else:
            L = math.log((1.0 - e) / e)
            l, w = np.array([L, -L]), np.array([1.0 - e, e])
    elif ch.variant == "Tabulated":
        t, w = ch.family.at(e)
        l = t_to_llr(t)
    else:
        raise ValueError("BIAWGNC has no finite atom list; use nodes()")
    keep = w > 0
    l, w = l[keep], w[keep]
    return l, llr_to_t(l), w


def nodes(ch: ChannelModel):
    """Quadrature rule (l, t, w) with E[f(l)] ~ sum w f(l); exact for discrete channels."""
    if ch.is_discrete:
        return atoms(ch)
    l, w = _awgn_rule(ch.eps)
    return l, llr_to_t(l), w


def expect(ch: ChannelModel, f: Callable) -> float:
    _, t, w = nodes(ch)
    return float(np.sum(w * f(t)))


def raw_moment(ch: ChannelModel, k: int) -> float:
    """E[t^k] for any k >= 1."""
    if ch.variant == "BEC":
        return 1.0 - ch.eps
    if ch.variant == "BSC":
        a = 1.0 - 2.0 * ch.eps
        return a**k if k % 2 == 0 else a ** (k + 1)
    return expect(ch, lambda t: t**k)


def sample_llr(ch: ChannelModel, rng: np.random.Generator, size=None):
    e = ch.eps
    if ch.variant == "BEC":
        u = rng.random(size)
        return np.where(u < e, 0.0, np.inf)
    if ch.variant == "BSC":
        u = rng.random(size)
        L = np.inf if e == 0.0 else math.log((1.0 - e) / e)
        return np.where(u < e, -L, L)
    if ch.variant == "BIAWGNC":
        mu, var = _awgn_params(e)
        return rng.normal(mu, math.sqrt(var), size)
    l, _, w = atoms(ch)
    idx = rng.choice(len(w), size=size, p=w / w.sum())
    return l[idx]


def sample_output(ch: ChannelModel, rng: np.random.Generator, size=None):
    """Draw t = tanh(l/2) under the all-zero codeword."""
    return llr_to_t(sample_llr(ch, rng, size))


def moment(ch: ChannelModel, order: int) -> float:
    """E[t^order] for an even order >= 2."""
    if order < 2 or order % 2:
        raise ValueError("moment order must be an even integer >= 2")
    if ch.variant == "BEC":
        return 1.0 - ch.eps
    if ch.variant == "BSC":
        return (1.0 - 2.0 * ch.eps) ** order
    return raw_moment(ch, order)


def _fd_derivatives(f: Callable[[float], float], x: float, h: float):
    """Central differences at steps h and h/2 combined by Richardson extrapolation."""

    def d1(s):
        return (f(x + s) - f(x - s)) / (2.0 * s)

    def d2(s):
        return (f(x + s) - 2.0 * f(x) + f(x - s)) / s**2

    return (4.0 * d1(h / 2) - d1(h)) / 3.0, (4.0 * d2(h / 2) - d2(h)) / 3.0


def moment_derivatives(ch: ChannelModel, order: int, h: float = FD_STEP):
    """(d/d eps, d^2/d eps^2) of E[t^order]."""
    if order < 2 or order % 2:
        raise ValueError("moment order must be an even integer >= 2")
    p2 = order
    if ch.variant == "BEC":
        return -1.0, 0.0
    if ch.variant == "BSC":
        a = 1.0 - 2.0 * ch.eps
        m1 = -2.0 * p2 * a ** (p2 - 1)
        m2 = 4.0 * p2 * (p2 - 1) * a ** (p2 - 2)
        return m1, m2
    if ch.variant == "Tabulated" and ch.family.kind == "fixed":
        raise ValueError("a fixed table is not a differentiable family")

    n_panels = _awgn_panels(ch.eps) if ch.variant == "BIAWGNC" else None

    def f(e):
        return raw_moment(ch.with_eps(e), p2) if ch.variant == "Tabulated" else _awgn_moment(e, p2, n_panels)

    return _fd_derivatives(f, ch.eps, h * max(ch.eps, 1e-2) if ch.variant == "BIAWGNC" else h)


def _awgn_moment(sigma, k, n_panels=None):
    l, w = _awgn_rule(sigma, n_panels=n_panels)
    return float(np.sum(w * np.tanh(l / 2.0) ** k))


@dataclass
class DerivativeRule:
    """Linear functional g -> sum a g(t) + b g'(t) + c g''(t) over nodes t.

    Represents int dt (d^k c_D / d eps^k) g(t) for a function g that does not
    itself depend on eps. ``b`` and ``c`` are nonzero only when atoms move
    with eps (BSC), in which case g must supply derivatives in t.
    """

    l: np.ndarray
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def needs_derivatives(self) -> bool:
        return bool(np.any(self.b != 0) or np.any(self.c != 0))


def _awgn_scores(sigma, l):
    mu, v = _awgn_params(sigma)
    dmu, dv = -4.0 / sigma**3, -8.0 / sigma**3
    ddmu, ddv = 12.0 / sigma**4, 24.0 / sigma**4
    r = l - mu
    s1 = -dv / (2 * v) + r * dmu / v + r**2 * dv / (2 * v**2)
    ds1 = (
        -ddv / (2 * v)
        + dv**2 / (2 * v**2)
        + (-(dmu**2) + r * ddmu) / v
        - 2.0 * r * dmu * dv / v**2
        + r**2 * ddv / (2 * v**2)
        - r**2 * dv**2 / v**3
    )
    return s1, s1**2 + ds1


def derivative_rule(ch: ChannelModel, order: int, h: float = FD_STEP) -> DerivativeRule:
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    e = ch.eps
    if ch.variant == "BEC":
        l = np.array([np.inf, 0.0])
        a = np.array([-1.0, 1.0]) if order == 1 else np.zeros(2)
        z = np.zeros(2)
        return DerivativeRule(l, llr_to_t(l), a, z, z)
    if ch.variant == "BSC":
        if e == 0.0 or e == 0.5:
            raise ValueError("BSC derivative rule needs 0 < eps < 1/2")
        L = math.log((1.0 - e) / e)
        l = np.array([L, -L])
        w = np.array([1.0 - e, e])
        dw = np.array([-1.0, 1.0])
        dt = np.array([-2.0, 2.0])
        if order == 1:
            return DerivativeRule(l, llr_to_t(l), dw, w * dt, np.zeros(2))
        return DerivativeRule(l, llr_to_t(l), np.zeros(2), 2.0 * dw * dt, w * dt**2)
    if ch.variant == "BIAWGNC":
        l, t, w = nodes(ch)
        s1, s2 = _awgn_scores(e, l)
        z = np.zeros_like(l)
        return DerivativeRule(l, t, w * (s1 if order == 1 else s2), z, z)
    if ch.family.kind == "fixed":
        raise ValueError("a fixed table is not a differentiable family")
    if order == 1:
        stencil = [(h / 2, 4.0 / (3.0 * h)), (-h / 2, -4.0 / (3.0 * h)), (h, -1.0 / (6.0 * h)), (-h, 1.0 / (6.0 * h))]
    else:
        stencil = [
            (h / 2, 16.0 / (3.0 * h**2)),
            (-h / 2, 16.0 / (3.0 * h**2)),
            (0.0, -32.0 / (3.0 * h**2) + 2.0 / (3.0 * h**2)),
            (h, -1.0 / (3.0 * h**2)),
            (-h, -1.0 / (3.0 * h**2)),
        ]
    ls, as_ = [], []
    for off, coef in stencil:
        t, w = ch.family.at(e + off)
        ls.append(t_to_llr(t))
        as_.append(coef * w)
    l = np.concatenate(ls)
    a = np.concatenate(as_)
    z = np.zeros_like(l)
    return DerivativeRule(l, llr_to_t(l), a, z, z)


@dataclass
class HighNoiseReport:
    pmax: int
    partial_sums: tuple
    tail_bounds: Optional[tuple]
    margin: float
    verdict: str


def _bsc_tails(a, P):
    y = a * a
    x = 6.25 * y
    t0 = y ** (P + 1) * ((P + 2) - (P + 1) * y) / (1.0 - y) ** 2
    t1 = 0.0 if a == 0 else (4.0 / a) * x ** (P + 1) * ((P + 1) - P * x) / (1.0 - x) ** 2
    t2 = 4.0 * y**P / (1.0 - y)
    return t0, t1, t2


def check_high_noise_condition(ch: ChannelModel, pmax: int = 20, tail_tol: float = 0.0) -> HighNoiseReport:
    """Evaluate the three high-noise series and the strict moment inequality."""
    if pmax < 2:
        raise ValueError("pmax must be >= 2")
    ps = np.arange(1, pmax + 1)
    m0 = np.array([moment(ch, 2 * p) for p in ps])
    der = np.array([moment_derivatives(ch, 2 * p) for p in ps])
    m1, m2 = np.abs(der[:, 0]), np.abs(der[:, 1])
    s0 = 1.0 + float(np.sum((ps + 1) * m0))
    weighted = 2.5 ** (2 * ps) * m1
    s1 = float(np.sum(weighted))
    s2 = float(np.sum(m2 / (2 * ps * (2 * ps - 1))))
    lhs = (math.sqrt(2.0) - 1.0) * weighted[0]
    margin = lhs - float(np.sum(weighted[1:]))
    sums = (s0, s1, s2)

    if ch.variant == "BEC":
        return HighNoiseReport(pmax, sums, (math.inf, math.inf, 0.0), -math.inf, "fails")
    if ch.variant == "BSC":
        a = 1.0 - 2.0 * ch.eps
        if a >= 1.0 or 6.25 * a * a >= 1.0:
            return HighNoiseReport(pmax, sums, (math.inf,) * 3 if a >= 1 else (None, math.inf, None), -math.inf, "fails")
        tails = _bsc_tails(a, pmax)
        margin -= tails[1]
        verdict = "holds" if margin > tail_tol else "fails"
        return HighNoiseReport(pmax, sums, tails, margin, verdict)
    # no closed-form tail: a nonpositive partial margin is already conclusive
    verdict = "fails" if margin <= 0 else "inconclusive-at-pmax"
    return HighNoiseReport(pmax, sums, None, margin, verdict)


def bsc_high_noise_crossover(pmax: int = 20, tol: float = 1e-12) -> float:
    """Smallest BSC crossover for which the truncated strict inequality holds."""
    ps = np.arange(1, pmax + 1)

    def margin(e):
        a = 1.0 - 2.0 * e
        wt = 2.5 ** (2 * ps) * 4.0 * ps * a ** (2 * ps - 1)
        return (math.sqrt(2.0) - 1.0) * wt[0] - wt[1:].sum()

    lo, hi = 0.3, 0.5 - 1e-12
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def gexit_bound(ch: ChannelModel) -> float:
    """Per-bit upper bound k(eps) on d/d eps of the conditional entropy (nats)."""
    if ch.variant == "BEC":
        return math.log(2.0) / ch.eps if ch.eps > 0 else math.inf
    if ch.variant == "BIAWGNC":
        return 2.0 / ch.eps**3
    if ch.variant == "BSC":
        # sum_p |m1^(2p)|/(2p(2p-1)) = 2 atanh(1 - 2 eps)
        a = 1.0 - 2.0 * ch.eps
        return math.log((1.0 + a) / (1.0 - a)) if a < 1 else math.inf
    return math.inf
