"""Command-line front end: threshold scans, verification suites, probes.

Every output file starts with comment lines carrying the sha256 of the
canonical config and the master seed. All randomness derives from the master
seed through named streams, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import channel as chan
from . import exact_gibbs as eg
from . import interpolation as interp
from . import rs_solver as rs
from . import verify as vf
from .ensemble import DegreeDistribution, sample_standard
from .seeding import seed_sequence, stream

LN2 = math.log(2.0)
COMMANDS = ("threshold", "verify", "probe", "de", "entropy")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


class ChannelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Literal["BEC", "BSC", "BIAWGNC", "Tabulated"] = "BEC"
    eps: float = 0.4
    table: Optional[str] = None
    kind: Literal["erasure", "flip", "fixed"] = "erasure"

    def build(self, eps: Optional[float] = None):
        e = self.eps if eps is None else eps
        if self.variant == "BEC":
            return chan.BEC(e)
        if self.variant == "BSC":
            return chan.BSC(e)
        if self.variant == "BIAWGNC":
            return chan.BIAWGNC(e)
        if self.table is None:
            raise UsageError("a tabulated channel needs a table path")
        t, w = chan.load_table_csv(self.table)
        return chan.Tabulated(t, w, e, self.kind)


Coeffs = Union[Dict[int, float], List[float]]


class EnsembleSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lam: Coeffs = Field(default_factory=lambda: {3: 1.0})
    P: Coeffs = Field(default_factory=lambda: {6: 1.0})
    perspective: Literal["node", "edge"] = "node"

    def build(self):
        return DegreeDistribution(self.lam, self.perspective), DegreeDistribution(self.P, self.perspective)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal["threshold", "verify", "probe", "de", "entropy"]
    ensemble: EnsembleSpec = Field(default_factory=EnsembleSpec)
    channel: ChannelSpec = Field(default_factory=ChannelSpec)
    seed: int = Field(0, ge=0, lt=2**64)
    # threshold / de
    eps_grid: List[float] = Field(default_factory=list)
    N: int = Field(100_000, ge=10)
    iters: int = Field(500, ge=1)
    n_mc: int = Field(1_000_000, ge=1)
    bisect_tol: float = Field(2e-4, gt=0)
    init: Literal["zero-info", "full-info", "channel"] = "zero-info"
    # verify
    channels: List[Literal["BEC", "BSC", "BIAWGNC"]] = Field(default_factory=lambda: ["BEC", "BSC", "BIAWGNC"])
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3])
    suites: List[str] = Field(default_factory=lambda: list(vf.SUITES))
    # probe / entropy
    n_list: List[int] = Field(default_factory=lambda: [8, 16, 24])
    delta: float = 0.2
    p: int = Field(1, ge=1)
    gamma: float = Field(0.5, gt=0)
    t_star: int = Field(0, ge=0)
    draws: int = Field(16, ge=1)
    x_model: Literal["one", "uniform"] = "one"
    x_max: float = Field(1.0, gt=0)
    n: int = Field(8, ge=1, le=eg.N_MAX)
    n_samples: int = Field(20_000, ge=2)

    @field_validator("suites")
    @classmethod
    def _known_suites(cls, v):
        bad = sorted(set(v) - set(vf.SUITES))
        if bad:
            raise ValueError(f"unknown suites {bad}; choose from {sorted(vf.SUITES)}")
        return v

    @model_validator(mode="after")
    def _command_rules(self):
        if self.command == "threshold" and not self.eps_grid:
            raise ValueError("threshold needs a nonempty eps_grid")
        if self.command == "probe" and not self.delta < 0.25:
            raise ValueError("probe needs delta < 1/4: overlap concentration is only claimed for delta < 1/4")
        if self.command == "probe" and not self.n_list:
            raise ValueError("probe needs a nonempty n_list")
        return self

    def canonical(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def load_config(command: str, path: Optional[str], seed: Optional[int]) -> RunConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
    if data.get("command", command) != command:
        raise UsageError(f"config is for {data['command']!r}, not {command!r}")
    data["command"] = command
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- output


def _header(cfg: RunConfig) -> str:
    return f"# config_sha256={cfg.sha256()}\n# seed={cfg.seed}\n"


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, cfg: RunConfig, rows: List[dict]):
    buf = io.StringIO()
    buf.write(_header(cfg))
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    path.write_text(buf.getvalue())


def write_json(path: Path, cfg: RunConfig, payload: dict):
    body = {"config_sha256": cfg.sha256(), "seed": cfg.seed, "config": cfg.model_dump(mode="json"), **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------- commands


def cmd_threshold(cfg: RunConfig, out: Path) -> int:
    lam, P = cfg.ensemble.build()
    ch = cfg.channel.build()
    res = rs.map_threshold_upper_bound(ch, lam, P, cfg.eps_grid, N=cfg.N, iters=cfg.iters, n_mc=cfg.n_mc, seed=cfg.seed, bisect_tol=cfg.bisect_tol)
    rows = [
        {"eps": r["eps"], "h_rs_sup": r["h_rs_sup"], "h_rs_sup_bits": r["h_rs_sup"] / LN2, "stderr": r["stderr"], "init": r["init"], "converged": r["converged"]}
        for r in res.rows
    ]
    write_csv(out / "threshold.csv", cfg, rows)
    half = max(res.interval[1] - res.threshold, res.threshold - res.interval[0], cfg.bisect_tol)
    summary = {"threshold": res.threshold, "interval": list(res.interval), "flag": res.flag}
    write_json(out / "threshold.json", cfg, summary)
    print(f"threshold {res.threshold:.4f} ± {half:.1e}" + (f" ({res.flag})" if res.flag else ""))
    return 0


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    rows = vf.run_suites(cfg.channels, cfg.seeds, cfg.suites)
    write_json(out / "verify.json", cfg, {"checks": [r.as_dict() for r in rows], "passed": all(r.passed for r in rows)})
    for r in rows:
        print(f"{r.status.upper():4s} {r.suite}: {r.name} (residual {r.residual:.3e}, tol {r.tolerance:.1e}) {r.detail}".rstrip())
    failed = [r for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed or skipped")
    return 1 if failed else 0


def cmd_probe(cfg: RunConfig, out: Path) -> int:
    lam, P = cfg.ensemble.build()
    ch = cfg.channel.build()
    rng = stream(cfg.seed, 0)
    dV = rs.fixed_point(ch, lam, P, cfg.init, min(cfg.iters, 200), min(cfg.N, 20_000), stream(cfg.seed, 1)).population
    rows = interp.concentration_probe(
        cfg.n_list, cfg.delta, cfg.p, ch, lam, P, cfg.gamma, cfg.t_star, max(1, min(cfg.n_mc, 10**6)), rng, dV=dV, draws=cfg.draws, xmodel=interp.XModel(cfg.x_model, cfg.x_max)
    )
    table = [r.__dict__ for r in rows]
    write_csv(out / "probe.csv", cfg, table)
    for r in rows:
        print(f"n={r.n} probability={r.probability:.4g} [{r.ci_low:.4g}, {r.ci_high:.4g}] chebyshev={r.chebyshev:.4g} chain_ok={r.chain_ok}")
    if not interp.trend_nonincreasing(rows):
        print("warning: exceedance probabilities are not non-increasing in n within Wilson intervals", file=sys.stderr)
    return 0


def cmd_de(cfg: RunConfig, out: Path) -> int:
    lam, P = cfg.ensemble.build()
    ch = cfg.channel.build()
    fp = rs.fixed_point(ch, lam, P, cfg.init, cfg.iters, cfg.N, stream(cfg.seed, 0))
    val = rs.evaluate_h_rs(fp.population, ch, lam, P, cfg.n_mc, stream(cfg.seed, 1))
    fp.population.save(out / "population.csv")
    write_json(
        out / "de.json",
        cfg,
        {
            "converged": fp.converged,
            "iterations": fp.iterations,
            "tanh_moments": fp.population.tanh_moments(4).tolist(),
            "h_rs": val.value,
            "h_rs_bits": val.value / LN2,
            "h_rs_stderr": val.stderr,
            "terms": val.terms,
        },
    )
    print(f"h_RS = {val.value:.6g} ± {val.stderr:.1e} nats/bit after {fp.iterations} iterations (converged={fp.converged})")
    return 0


def cmd_entropy(cfg: RunConfig, out: Path) -> int:
    lam, P = cfg.ensemble.build()
    ch = cfg.channel.build()
    g = sample_standard(cfg.n, lam, P, stream(cfg.seed, 0), seed=cfg.seed)
    H, se = eg.conditional_entropy(g, ch, n_samples=cfg.n_samples, rng=stream(cfg.seed, 1))
    g.save(out / "graph.txt")
    payload = {"n": cfg.n, "entropy": H, "entropy_bits": H / LN2, "per_bit": H / cfg.n, "per_bit_bits": H / cfg.n / LN2, "stderr": se}
    write_json(out / "entropy.json", cfg, payload)
    print(f"H(X|Y) = {H:.6g} nats ({H / LN2:.6g} bits) ± {se:.1e}")
    return 0


HANDLERS = {"threshold": cmd_threshold, "verify": cmd_verify, "probe": cmd_probe, "de": cmd_de, "entropy": cmd_entropy}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsbound", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--workers", type=int, default=1, help="worker count; results do not depend on it")
    ap.add_argument("--out", default="out", help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.command, args.config, args.seed)
    except (UsageError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return HANDLERS[cfg.command](cfg, out)
        except (UsageError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
