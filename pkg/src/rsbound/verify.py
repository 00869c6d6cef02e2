"""Verification suites over small exact systems.

Each suite returns a list of ``Check`` rows. A suite that does not apply to
the selected channel reports a single skipped row with the reason.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import channel as chan
from . import exact_gibbs as eg
from .ensemble import DegreeDistribution, TannerGraph, sample_standard
from .seeding import stream


@dataclass
class Check:
    suite: str
    name: str
    status: str
    residual: float = 0.0
    tolerance: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def as_dict(self):
        return asdict(self)


def _row(suite, name, resid, tol, detail=""):
    ok = bool(np.isfinite(resid) and resid <= tol)
    return Check(suite, name, "pass" if ok else "fail", float(resid), float(tol), detail)


def random_graph(n: int, m: int, rng, degrees=(2, 3, 4)) -> TannerGraph:
    """m checks on n bits, each on distinct bits with a degree drawn from `degrees`."""
    checks = []
    for _ in range(m):
        k = int(rng.choice([d for d in degrees if d <= n]))
        checks.append(tuple(int(v) for v in rng.choice(n, size=k, replace=False)))
    return TannerGraph(n, checks)


def regular_graph(n: int, rng) -> TannerGraph:
    return sample_standard(n, DegreeDistribution.regular(3), DegreeDistribution.regular(6), rng)


def fd1(f: Callable[[float], float], x: float, h: float) -> float:
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def fd2(f: Callable[[float], float], x: float, h: float) -> float:
    return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) / (12 * h * h)


def exact_entropy(graph: TannerGraph, ch) -> float:
    chans = [ch] * graph.n
    return eg.Ensemble(graph, chans, outputs=eg.OutputSet.enumerate(chans)).entropy()[0]


# ----------------------------------------------------------------- suites


def suite_extrinsic(variant: str, seed: int, n_systems: int = 200) -> List[Check]:
    """Removing fields by recomputation versus the closed-form conversions."""
    if variant not in ("BSC", "BIAWGNC"):
        return [Check("extrinsic", "conversion formulas", "skip", detail="finite fields needed (BSC/BIAWGNC)")]
    rng = stream(seed, 1)
    worst = 0.0
    for _ in range(n_systems):
        n = int(rng.integers(2, 13))
        g = random_graph(n, int(rng.integers(1, n + 1)), rng)
        ch = chan.BSC(float(rng.uniform(0.05, 0.45))) if variant == "BSC" else chan.BIAWGNC(float(rng.uniform(0.8, 1.5)))
        sys = eg.GibbsSystem.build(g, ch, rng)
        i, j = (int(x) for x in rng.choice(n, size=2, replace=False))
        rep = sys.report(i, j)
        a, b, c = eg.extrinsic_from_law(sys.sign_law(i, j), sys.h[i], sys.h[j])
        ext = sys.with_fields_zeroed([i, j])
        worst = max(
            worst,
            abs(eg.extrinsic_from_law(sys.sign_law(i), sys.h[i]) - rep.T_i_ext),
            abs(a - rep.T_i_ext_pair),
            abs(b - ext.bracket([j])),
            abs(c - rep.T_ij_ext_pair),
        )
    return [_row("extrinsic", f"{variant} extrinsic brackets, {n_systems} systems", worst, 1e-12)]


def _eps_values(variant):
    return {"BSC": [0.05, 0.1, 0.2, 0.3, 0.4], "BEC": [0.1, 0.3, 0.5, 0.7, 0.9], "BIAWGNC": [0.7, 1.0, 1.3]}.get(variant, [])


def suite_gexit(variant: str, seed: int) -> List[Check]:
    """First derivative formula versus a five-point difference of the exact entropy."""
    rng = stream(seed, 2)
    out = []
    if variant == "BIAWGNC":
        g = TannerGraph(2, [(0, 1)])
        for e in _eps_values(variant):
            ch = chan.BIAWGNC(e)
            ens = eg.Ensemble(g, ch, outputs=eg.OutputSet.enumerate([ch, ch]))
            gen = eg.gexit_first_derivative(ens, method="general")
            spec = eg.gexit_first_derivative(ens, method="specialized")
            ref = fd1(lambda x: exact_entropy(g, chan.BIAWGNC(x)), e, 1e-3)
            out.append(_row("gexit", f"BIAWGNC({e}) general vs difference", abs(gen - ref) / abs(ref), 1e-6))
            out.append(_row("gexit", f"BIAWGNC({e}) specialized vs general", abs(gen - spec), 1e-8))
        return out
    if variant not in ("BSC", "BEC"):
        return [Check("gexit", "derivative formula", "skip", detail=f"no exact enumeration for {variant}")]
    for e in _eps_values(variant):
        g = random_graph(int(rng.integers(4, 11)), int(rng.integers(2, 6)), rng)
        ch = chan.BSC(e) if variant == "BSC" else chan.BEC(e)
        ens = eg.Ensemble(g, ch)
        gen = eg.gexit_first_derivative(ens, method="general")
        ref = fd1(lambda x: exact_entropy(g, ch.with_eps(x)), e, 1e-3)
        out.append(_row("gexit", f"{variant}({e}) n={g.n} general vs difference", abs(gen - ref) / max(abs(ref), 1e-300), 1e-6))
        if variant == "BEC":
            out.append(_row("gexit", f"BEC({e}) specialized vs general", abs(gen - eg.gexit_first_derivative(ens, method="specialized")), 1e-10))
    return out


def suite_correlation(variant: str, seed: int) -> List[Check]:
    """Second derivative formula versus a second difference; specializations versus the general form."""
    rng = stream(seed, 3)
    out = []
    if variant == "BIAWGNC":
        for g in (TannerGraph(2, [(0, 1)]), TannerGraph(2, [])):
            for e in _eps_values(variant):
                ch = chan.BIAWGNC(e)
                ens = eg.Ensemble(g, ch, outputs=eg.OutputSet.enumerate([ch, ch]))
                gen = eg.correlation_second_derivative(ens, method="general")
                spec = eg.correlation_second_derivative(ens, method="specialized")
                ref = fd2(lambda x: exact_entropy(g, chan.BIAWGNC(x)), e, 1e-3)
                out.append(_row("correlation", f"BIAWGNC({e}) m={g.n_checks} specialized vs general", abs(gen - spec), 1e-8))
                out.append(_row("correlation", f"BIAWGNC({e}) m={g.n_checks} general vs difference", abs(gen - ref), 1e-5))
        return out
    if variant not in ("BSC", "BEC"):
        return [Check("correlation", "second derivative", "skip", detail=f"no exact enumeration for {variant}")]
    for e in _eps_values(variant):
        g = random_graph(int(rng.integers(4, 11)), int(rng.integers(2, 6)), rng)
        ch = chan.BSC(e) if variant == "BSC" else chan.BEC(e)
        ens = eg.Ensemble(g, ch)
        gen = eg.correlation_second_derivative(ens, method="general")
        ref = fd2(lambda x: exact_entropy(g, ch.with_eps(x)), e, 1e-3 if variant == "BSC" else 1e-2)
        out.append(_row("correlation", f"{variant}({e}) n={g.n} general vs difference", abs(gen - ref), 1e-5))
        if variant == "BEC":
            spec = eg.correlation_second_derivative(ens, method="specialized")
            out.append(_row("correlation", f"BEC({e}) specialized vs general", abs(gen - spec), 1e-8))
    return out


def suite_nishimori(variant: str, seed: int) -> List[Check]:
    rng = stream(seed, 4)
    ch = {"BSC": chan.BSC(0.15), "BEC": chan.BEC(0.4), "BIAWGNC": chan.BIAWGNC(0.9)}.get(variant)
    if ch is None:
        return [Check("nishimori", "gauge identities", "skip", detail=f"unsupported channel {variant}")]
    out = []
    for k in range(3):
        if variant == "BIAWGNC":
            g = TannerGraph(2, [(0, 1)])
            ens = eg.Ensemble(g, ch, outputs=eg.OutputSet.enumerate([ch, ch]))
        else:
            ens = eg.Ensemble(regular_graph(8, rng) if k else random_graph(10, 4, rng), ch)
        for r in eg.nishimori_suite(ens, tol=1e-10):
            tol = 1e-12 if r.name.startswith("BEC") else r.tolerance
            out.append(_row("nishimori", f"{variant} {r.name}", r.residual, tol, r.detail))
    # collapse to the worst row per identity name for a compact report
    worst: Dict[str, Check] = {}
    for c in out:
        if c.name not in worst or c.residual > worst[c.name].residual or c.status == "fail":
            worst[c.name] = c
    return list(worst.values())


def suite_pairs(variant: str, seed: int) -> List[Check]:
    rng = stream(seed, 5)
    if variant == "BEC":
        worst = 0.0
        for _ in range(5):
            g = random_graph(int(rng.integers(3, 9)), int(rng.integers(1, 5)), rng)
            i, j = (int(x) for x in rng.choice(g.n, size=2, replace=False))
            res = eg.mutual_information_pair(g, chan.BEC(float(rng.uniform(0.2, 0.8))), i, j)
            worst = max(worst, *res.identity_residuals.values())
        return [_row("pairs", "BEC mixed derivative = I = ln2 E[T_ij - T_iT_j]", worst, 1e-10)]
    if variant == "BIAWGNC":
        g = regular_graph(6, rng)
        res = eg.mutual_information_pair(g, chan.BIAWGNC(0.9), 0, 1, n_samples=20_000, rng=rng)
        short = max(0.0, -(res.slack + 4 * res.stderr["slack"]))
        return [_row("pairs", f"BIAWGNC 8I - corr^2 slack = {res.slack:.3e}", short, 0.0)]
    return [Check("pairs", "pair relations", "skip", detail="BEC and BIAWGNC only")]


def suite_series(variant: str, seed: int, eps: float = 0.47, pmax: int = 4) -> List[Check]:
    if variant != "BSC":
        return [Check("series", "high-noise expansions", "skip", detail="high-noise checks apply to the BSC only")]
    ch = chan.BSC(eps)
    if chan.check_high_noise_condition(ch).verdict != "holds":
        return [Check("series", "high-noise expansions", "skip", detail=f"high-noise condition fails at eps={eps}")]
    rng = stream(seed, 6)
    ens = eg.Ensemble(regular_graph(8, rng), ch)
    r1 = eg.s1_series(ens, 0, pmax)
    r2 = eg.s2_series(ens, 0, 1, pmax)
    return [
        _row("series", f"S1 truncation error <= tail bound {r1.tail_bound:.3e}", r1.error, r1.tail_bound + r1.rounding),
        _row("series", f"S2 truncation error <= tail bound {r2.tail_bound:.3e}", r2.error, r2.tail_bound + r2.rounding),
    ]


def suite_bounds(variant: str, seed: int, n_graphs: int = 10) -> List[Check]:
    rng = stream(seed, 7)
    if variant == "BSC":
        chs = [chan.BSC(e) for e in (0.45, 0.47, 0.49)]
    elif variant == "BEC":
        chs = [chan.BEC(e) for e in (0.2, 0.5, 0.8)]
    elif variant == "BIAWGNC":
        chs = [chan.BIAWGNC(e) for e in (0.8, 1.2)]
    else:
        return [Check("bounds", "correlation and GEXIT bounds", "skip", detail=f"unsupported channel {variant}")]
    out = []
    for ch in chs:
        if variant == "BIAWGNC":
            graphs = [eg.Ensemble(TannerGraph(2, [(0, 1)]), ch, outputs=eg.OutputSet.enumerate([ch, ch]))]
        else:
            graphs = [regular_graph(8, rng) for _ in range(n_graphs)]
        rep = eg.correlation_bound_check(graphs, ch)
        out.append(_row("bounds", f"{ch.variant}({ch.eps}) correlation bound lhs={rep.lhs:.4g} rhs={rep.rhs:.4g}", max(0.0, rep.lhs - rep.rhs), 1e-12))
        if rep.intermediate_margin is not None:
            out.append(_row("bounds", f"{ch.variant}({ch.eps}) intermediate bound", max(0.0, -rep.intermediate_margin), 1e-12))
        k = chan.gexit_bound(ch)
        worst = 0.0
        for g in graphs:
            ens = eg._as_ensemble(g, ch)
            per_bit = eg.gexit_first_derivative(ens, method="general") / ens.n
            worst = max(worst, -per_bit, per_bit - k)
        out.append(_row("bounds", f"{ch.variant}({ch.eps}) per-bit GEXIT in [0, {k:.4g}]", max(0.0, worst), 1e-10))
    return out


SUITES = {
    "extrinsic": suite_extrinsic,
    "gexit": suite_gexit,
    "correlation": suite_correlation,
    "nishimori": suite_nishimori,
    "pairs": suite_pairs,
    "series": suite_series,
    "bounds": suite_bounds,
}


def run_suites(channels: Sequence[str], seeds: Sequence[int], suites: Sequence[str] = tuple(SUITES)) -> List[Check]:
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites: {sorted(unknown)}")
    rows = []
    for seed, variant, name in itertools.product(seeds, channels, suites):
        for c in SUITES[name](variant, int(seed)):
            c.detail = (c.detail + " " if c.detail else "") + f"seed={seed}"
            rows.append(c)
    return rows
