"""Command-line front end.

Commands: ``analyze`` (one chain), ``sweep`` (a family over sizes),
``distance`` (a distance profile), ``random`` (slowdown realizations over
seeds) and ``verify`` (invariant checks on seeded random chains).

Exit codes: 0 success, 1 verify failure, 2 configuration error, 3 numeric
failure. Errors are written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .chain import Chain, TimeParameter, load_chain, quantile_state
from .cutoff import (DEFAULT_EXACT_LIMIT, DEFAULT_QUANTILES, MixingRequest, analyze_family,
                     dumps, family_row, random_family_experiment, row_invariants)
from .errors import BDError, ConfigError
from .evolve import (distance_profile, geometric_grid, mixing_time, separation_argmax,
                     separation_doubling_ok, unimodality_check)
from .families import (UniformSlowdown, family_from_config, load_family, random_chain,
                       tomllib)
from .hitting import hit_moments, moments_via_spectrum
from .spectral import cutoff_spectral_stats, full_spectrum, leading_spectrum, punctured_spectrum

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("analyze", "sweep", "distance", "random", "verify")
MAX_SIZES = 10_000
MAX_WORKERS = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# Parsing helpers -------------------------------------------------------------

def parse_sizes(text: str):
    """``"a,b,c"`` or ``"start:stop:ratio"`` (geometric, rounded, deduplicated)."""
    text = text.strip()
    if not text:
        raise ConfigError("empty size list")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"size range must be start:stop:ratio, got {text!r}")
        try:
            start, stop, ratio = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ConfigError(f"bad size range {text!r}: {exc}") from exc
        if not (1 <= start <= stop and ratio > 1):
            raise ConfigError("size range needs 1 <= start <= stop and ratio > 1")
        sizes, k = [], 0
        while True:
            v = int(round(start * ratio ** k))
            if v > stop * (1 + 1e-12):
                break
            if not sizes or v > sizes[-1]:
                sizes.append(v)
            k += 1
            if len(sizes) > MAX_SIZES:
                raise ConfigError(f"size range yields more than {MAX_SIZES} sizes")
        return sizes
    try:
        sizes = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad size list {text!r}: {exc}") from exc
    if not sizes:
        raise ConfigError("empty size list")
    if any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
        raise ConfigError(f"sizes must be positive and strictly ascending, got {sizes}")
    return sizes


def parse_floats(text: str, name: str, lo=0.0, hi=1.0):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad {name} list {text!r}: {exc}") from exc
    if not vals or any(not (lo < v < hi) for v in vals):
        raise ConfigError(f"{name} values must lie in ({lo}, {hi})")
    return vals


def parse_seeds(text: str):
    """``"a,b,c"`` or ``"start:stop"`` (half-open)."""
    try:
        if ":" in text:
            a, b = text.split(":")
            seeds = list(range(int(a), int(b)))
        else:
            seeds = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}: {exc}") from exc
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    return seeds


def parse_start(text: str):
    if text in ("max", "left", "right"):
        return text
    try:
        v = int(text)
    except ValueError as exc:
        raise ConfigError(f"start must be max, left, right or a state, got {text!r}") from exc
    if v < 0:
        raise ConfigError("start state must be non-negative")
    return v


def parse_grid(text: str):
    try:
        a, b, r = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"grid must be t_min:t_max:ratio, got {text!r}") from exc
    if not (a > 0 and b >= a and r > 1):
        raise ConfigError("grid needs 0 < t_min <= t_max and ratio > 1")
    return a, b, r


# Run configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    """Parsed command line; serializes to and from a plain dict."""

    command: str
    chain: str | None = None
    family: str | None = None
    sizes: list = field(default_factory=list)
    quantiles: list = field(default_factory=lambda: list(DEFAULT_QUANTILES))
    clocks: list = field(default_factory=lambda: ["continuous"])
    eps: list = field(default_factory=list)
    kinds: list = field(default_factory=lambda: ["tv"])
    starts: list = field(default_factory=lambda: ["max"])
    exact_limit: int | None = None
    seed: int = 0
    seeds: list = field(default_factory=lambda: list(range(20)))
    dist: list = field(default_factory=lambda: [0.5, 1.0])
    grid: list | None = None
    count: int = 20
    max_n: int = 30
    out: str | None = None
    format: str = "json"
    workers: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if not (1 <= self.workers <= MAX_WORKERS):
            raise ConfigError(f"workers must lie in [1, {MAX_WORKERS}]")
        if self.exact_limit is not None and self.exact_limit < 0:
            raise ConfigError("exact-mixing-limit must be non-negative")
        if not (1 <= self.count <= 10_000) or not (1 <= self.max_n <= 2000):
            raise ConfigError("count must lie in [1, 10000] and max-n in [1, 2000]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def limits(self):
        if self.exact_limit is None:
            return dict(DEFAULT_EXACT_LIMIT)
        return {c: self.exact_limit for c in DEFAULT_EXACT_LIMIT}

    def mixing_requests(self):
        return [MixingRequest(s, e, c, k) for c in self.clocks for k in self.kinds
                for s in self.starts for e in self.eps]


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--chain", help="chain JSON file {n, p, q, r}")
    common.add_argument("--family", help="family TOML file")
    common.add_argument("--sizes", help="a,b,c or start:stop:ratio")
    common.add_argument("--quantiles", default="0.25,0.5,0.75")
    common.add_argument("--clock", default="continuous",
                        choices=("continuous", "discrete", "both"))
    common.add_argument("--eps", default="", help="mixing thresholds, e.g. 0.25,0.5,0.75")
    common.add_argument("--kind", default="tv", choices=("tv", "sep", "both"))
    common.add_argument("--start", default="max",
                        help="comma list of starts: max, left, right or a state")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--seeds", default="0:20", help="a,b,c or start:stop")
    common.add_argument("--dist", default="0.5,1", help="uniform slowdown lo,hi")
    common.add_argument("--grid", help="t_min:t_max:ratio for distance profiles")
    common.add_argument("--count", type=int, default=20, help="verify: number of chains")
    common.add_argument("--max-n", type=int, default=30, help="verify: largest chain size")
    common.add_argument("--exact-mixing-limit", type=int, default=None,
                        help="largest n for exact mixing times (both clocks)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--format", default="json", choices=("csv", "json"))
    p = _Parser(prog="bdcutoff", description="Birth-and-death chain cutoff analysis")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("analyze", "single-chain report"),
                       ("sweep", "family report over sizes"),
                       ("distance", "distance profile of one chain"),
                       ("random", "random slowdown experiment"),
                       ("verify", "invariant checks on random chains")):
        sub.add_parser(name, parents=[common], help=text)
    return p


def config_from_args(args) -> RunConfig:
    clocks = ["continuous", "discrete"] if args.clock == "both" else [args.clock]
    kinds = ["tv", "sep"] if args.kind == "both" else [args.kind]
    dist = parse_floats(args.dist, "dist", -1e-300, 1 + 1e-15) if args.dist else [0.5, 1.0]
    if len(dist) != 2:
        raise ConfigError("dist must be lo,hi")
    return RunConfig(
        command=args.command, chain=args.chain, family=args.family,
        sizes=parse_sizes(args.sizes) if args.sizes is not None else [],
        quantiles=parse_floats(args.quantiles, "quantile"),
        clocks=clocks, eps=parse_floats(args.eps, "eps") if args.eps else [],
        kinds=kinds, starts=[parse_start(s) for s in args.start.split(",") if s.strip()],
        exact_limit=args.exact_mixing_limit, seed=args.seed, seeds=parse_seeds(args.seeds),
        dist=dist, grid=list(parse_grid(args.grid)) if args.grid else None,
        count=args.count, max_n=args.max_n, out=args.out, format=args.format,
        workers=args.workers)


# Output ------------------------------------------------------------------------

def _emit(cfg: RunConfig, text: str):
    if not text.endswith("\n"):
        text += "\n"
    if cfg.out:
        try:
            with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {cfg.out}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _flatten(d, prefix=""):
    out = {}
    if isinstance(d, dict):
        for k in sorted(d):
            out.update(_flatten(d[k], f"{prefix}{k}."))
    elif isinstance(d, list):
        for i, v in enumerate(d):
            out.update(_flatten(v, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = d
    return out


def _kv_csv(doc):
    """Two-column ``key,value`` CSV of a nested document."""
    flat = _flatten(json.loads(dumps(doc)))
    lines = ["key,value"]
    for k, v in flat.items():
        v = "" if v is None else (repr(v) if isinstance(v, float) else str(v))
        lines.append(f"{k},{v}")
    return "\n".join(lines)


def _write_doc(cfg, doc):
    _emit(cfg, _kv_csv(doc) if cfg.format == "csv" else dumps(doc))


def _load_family_or_raise(cfg):
    if not cfg.family:
        raise ConfigError(f"{cfg.command} needs --family")
    return load_family(cfg.family)


def _resolve_start(chain, s):
    return {"left": 0, "right": chain.n}.get(s, s)


# Commands ------------------------------------------------------------------------

def _load_single_chain(cfg) -> Chain:
    if cfg.chain:
        return load_chain(cfg.chain)
    if cfg.family:
        if len(cfg.sizes) != 1:
            raise ConfigError("a family input needs exactly one --sizes value here")
        return load_family(cfg.family)(cfg.sizes[0])
    raise ConfigError(f"{cfg.command} needs --chain or --family")


def cmd_analyze(cfg: RunConfig) -> int:
    chain = _load_single_chain(cfg)
    n = chain.n
    doc = {"schema_version": 1, "command": "analyze", "n": n}
    if n >= 1:
        spec = full_spectrum(chain)
        st = cutoff_spectral_stats(spec)
        doc["spectrum"] = {"count": len(spec), "min": spec.min, "max": float(spec.values[-1]),
                           "t": st.t, "sigma": st.sigma, "rho": st.rho}
        doc["gap"] = st.gap
        row = family_row(chain, tuple(sorted(cfg.quantiles)))
        d = row.to_dict()
        d.pop("mixing")
        doc["stats"] = d
    else:
        doc["spectrum"] = {"count": 0}
        doc["gap"] = None
    eps = cfg.eps or [0.25]
    limits = cfg.limits()
    mix = []
    for clock in cfg.clocks:
        if n > limits[clock]:
            continue
        for kind in cfg.kinds:
            for s in cfg.starts:
                for e in eps:
                    v = mixing_time(chain, _resolve_start(chain, s), e, clock, kind)
                    mix.append({"start": s, "eps": e, "clock": clock, "kind": kind,
                                "value": float(v)})
    doc["mixing"] = mix
    if cfg.grid is not None:
        doc["profiles"] = [_profile_doc(chain, s, cfg.grid, c, "sep" in cfg.kinds)
                           for c in cfg.clocks for s in cfg.starts]
    _write_doc(cfg, doc)
    return EXIT_OK


def _profile_doc(chain, start, grid, clock, with_sep):
    g = geometric_grid(grid[0], grid[1], grid[2], clock)
    prof = distance_profile(chain, _resolve_start(chain, start), g, clock, with_sep=with_sep)
    return {"start": start, "clock": clock, "t": [float(t) for t in prof.grid],
            "tv": prof.tv.tolist(), "sep": None if prof.sep is None else prof.sep.tolist(),
            "unimodal": None if prof.unimodal is None else [bool(x) for x in prof.unimodal]}


def cmd_distance(cfg: RunConfig) -> int:
    chain = _load_single_chain(cfg)
    if cfg.grid is None:
        raise ConfigError("distance needs --grid t_min:t_max:ratio")
    with_sep = "sep" in cfg.kinds
    profs = [_profile_doc(chain, s, cfg.grid, c, with_sep) for c in cfg.clocks for s in cfg.starts]
    if cfg.format == "json":
        _emit(cfg, dumps({"schema_version": 1, "command": "distance", "n": chain.n,
                          "profiles": profs}))
        return EXIT_OK
    lines = ["start,clock,t,tv,sep,unimodal"]
    for p in profs:
        for k, t in enumerate(p["t"]):
            sep = "" if p["sep"] is None else repr(p["sep"][k])
            uni = "" if p["unimodal"] is None else str(p["unimodal"][k]).lower()
            lines.append(f"{p['start']},{p['clock']},{t!r},{p['tv'][k]!r},{sep},{uni}")
    _emit(cfg, "\n".join(lines))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    fam = _load_family_or_raise(cfg)
    if not cfg.sizes:
        raise ConfigError("sweep needs a non-empty --sizes")
    report = analyze_family(fam, cfg.sizes, cfg.quantiles, mixing=cfg.mixing_requests(),
                            exact_limit=cfg.limits(), workers=cfg.workers)
    report.add_verdicts(clocks=tuple(cfg.clocks))
    _emit(cfg, report.to_csv() if cfg.format == "csv" else report.to_json())
    return EXIT_OK if report.any_ok() else EXIT_NUMERIC


def cmd_random(cfg: RunConfig) -> int:
    if not cfg.family:
        raise ConfigError("random needs --family (the base family)")
    try:
        with open(cfg.family, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read family file {cfg.family}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {cfg.family}: {exc}") from exc
    if isinstance(raw.get("family"), dict) and "dist" in raw["family"]:
        raise ConfigError("random takes a base family; give the slowdown with --dist")
    base = family_from_config(raw)
    if not cfg.sizes:
        raise ConfigError("random needs a non-empty --sizes")
    try:
        dist = UniformSlowdown(*cfg.dist)
    except BDError as exc:
        raise ConfigError(str(exc)) from exc
    rep = random_family_experiment(base, dist, cfg.sizes, cfg.seeds, workers=cfg.workers)
    _emit(cfg, rep.to_csv() if cfg.format == "csv" else rep.to_json())
    return EXIT_OK if any(not r.error for r in rep.rows) else EXIT_NUMERIC


# Verify --------------------------------------------------------------------------

def _rel_close(a, b, rtol):
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


def _linear_system_moments(chain: Chain, a: int, b: int):
    """Mean and continuous variance of the passage ``a -> b`` from ``(I - Q) m = 1``."""
    K = chain.matrix()
    keep = [i for i in range(chain.n + 1) if i != b]
    A = np.eye(len(keep)) - K[np.ix_(keep, keep)]
    # E tau^2 = 2 (I - Q)^{-1} E tau for the rate-1 continuous clock.
    m1 = np.linalg.solve(A, np.ones(len(keep)))
    m2 = np.linalg.solve(A, 2.0 * m1)
    idx = keep.index(a)
    return m1[idx], m2[idx] - m1[idx] ** 2


def _verify_chain(chain: Chain, rng: np.random.Generator):
    """Named checks for one chain: ``{name: bool}``."""
    n = chain.n
    out = {}
    a, b = sorted(rng.choice(n + 1, 2, replace=False).tolist())
    ok = True
    for s, t in ((0, n), (n, 0), (a, b), (b, a)):
        m, v = _linear_system_moments(chain, s, t)
        hm = hit_moments(chain, s, t)
        ok &= _rel_close(hm.mean, m, 1e-8) and _rel_close(hm.var_continuous, v, 1e-7)
    out["hitting_oracle"] = bool(ok)
    i = int(rng.integers(1, n + 1))
    ms, hm = moments_via_spectrum(chain, i), hit_moments(chain, 0, i)
    out["spectral_moments"] = bool(_rel_close(ms.mean, hm.mean, 1e-8)
                                   and _rel_close(ms.var_continuous, hm.var_continuous, 1e-7)
                                   and abs(ms.var_discrete - hm.var_discrete)
                                   <= 1e-7 * ms.var_continuous)
    lam = full_spectrum(chain).values
    ok = True
    for j in range(n + 1):
        mu = punctured_spectrum(chain, j).values
        ok &= bool(np.all(mu[:n - 1] <= lam[:n - 1] + 1e-10)
                   and np.all(lam[:n - 1] <= mu[1:] + 1e-10)
                   and np.all(mu[1:] <= lam[1:] + 1e-10))
        ok &= bool(mu[0] <= lam[0] + 1e-10)
    M = quantile_state(chain, 0.5)
    mu_M = punctured_spectrum(chain, M).min
    out["interlacing"] = bool(ok and lam[0] / 8 <= mu_M + 1e-10)
    out["leading_block"] = bool(np.all(leading_spectrum(chain, n).values > 0))
    out["row_brackets"] = all(row_invariants(family_row(chain)).values())
    t = float(rng.uniform(0.2, 3.0)) * cutoff_spectral_stats(full_spectrum(chain)).t / n
    arg, _ = separation_argmax(chain, t)
    out["separation_boundary"] = arg in (0, n)
    out["separation_doubling"] = separation_doubling_ok(chain, t)
    g = geometric_grid(t / 4, 4 * t, 1.5)
    prof = distance_profile(chain, "max", g)
    out["profile_monotone"] = prof.monotone()
    out["tv_below_sep"] = bool(np.all(prof.tv <= prof.sep + 1e-12))
    out["unimodal_continuous"] = unimodality_check(chain, TimeParameter("continuous", t))
    return out


def cmd_verify(cfg: RunConfig) -> int:
    ss = np.random.SeedSequence(cfg.seed)
    table = {}
    failures = []
    for k, child in enumerate(ss.spawn(cfg.count)):
        rng = np.random.Generator(np.random.Philox(child))
        n = int(rng.integers(2, cfg.max_n + 1))
        chain = random_chain(rng, n)
        try:
            res = _verify_chain(chain, rng)
        except BDError as exc:
            res = {"exception": False}
            failures.append({"instance": k, "seed": cfg.seed, "check": "exception",
                             "message": f"{type(exc).__name__}: {exc}", "chain": chain.to_dict()})
        for name, passed in res.items():
            t = table.setdefault(name, [0, 0])
            t[0] += 1
            t[1] += int(passed)
            if not passed and name != "exception":
                failures.append({"instance": k, "seed": cfg.seed, "check": name,
                                 "chain": chain.to_dict()})
    all_ok = not failures
    if cfg.format == "json":
        doc = {"schema_version": 1, "command": "verify", "seed": cfg.seed, "count": cfg.count,
               "checks": {k: {"instances": v[0], "passed": v[1]} for k, v in table.items()},
               "failures": failures, "ok": all_ok}
        _emit(cfg, dumps(doc))
    else:
        lines = ["check,instances,passed,status"]
        for name in table:
            i, p = table[name]
            lines.append(f"{name},{i},{p},{'PASS' if i == p else 'FAIL'}")
        _emit(cfg, "\n".join(lines))
        if failures:
            sys.stderr.write(dumps({"failures": failures}) + "\n")
    return EXIT_OK if all_ok else EXIT_VERIFY


_DISPATCH = {"analyze": cmd_analyze, "sweep": cmd_sweep, "distance": cmd_distance,
             "random": cmd_random, "verify": cmd_verify}


def _fail(exc, code):
    err = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = config_from_args(args)
        return _DISPATCH[cfg.command](cfg)
    except (ConfigError, ValueError) as exc:
        return _fail(exc, EXIT_CONFIG)
    except (BDError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(exc, EXIT_NUMERIC)
    except MemoryError as exc:
        return _fail(exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
