"""Family sweeps: per-size cutoff statistics, criterion products and verdicts.

A sweep evaluates one :class:`FamilyRow` per size from the spectral and
hitting-time modules. Verdicts fit the log-log growth of a criterion product
across the sweep; they are finite-size indications and never more than that.
Reports serialize to JSON (with a schema version) and to CSV, and a verdict
recomputed from a reloaded report equals the stored one.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .chain import Chain, flip, quantile_state
from .errors import BDError, ConfigError, PreconditionError
from .evolve import CLOCKS, KINDS, mixing_time
from .families import FamilyGenerator, UniformSlowdown, random_slowdown
from .hitting import cutoff_hit_stats, hit_moments, mean_hit
from .spectral import cutoff_spectral_stats, full_spectrum, leading_spectrum

SCHEMA_VERSION = 1
DEFAULT_QUANTILES = (0.25, 0.5, 0.75)
DEFAULT_EXACT_LIMIT = {"continuous": 4096, "discrete": 2048}
MODES = ("max-sep", "max-sep-spectral", "max-tv", "boundary-tv-left", "boundary-tv-right")
VERDICT_MODES = ("max-sep", "max-tv", "boundary-tv-left", "boundary-tv-right")
SIDES = ("left", "right")
SYMMETRY_TOL = 1e-10
INVARIANT_SLACK = 1e-9
NAN = float("nan")


@dataclass(frozen=True)
class Thresholds:
    """Decision thresholds; recorded in every report.

    A product is cutoff-indicated when its log-log slope exceeds
    ``cutoff_slope`` and its last value exceeds ``cutoff_product``; it counts as
    bounded when the slope is below ``bounded_slope`` (decreasing products
    included). ``pin_floor`` is the smallest admissible
    ``min(pi[0,M], pi[M,n])`` at the split state; ``u_floor`` is the smallest
    admissible boundary mean at the largest size for discrete boundary
    verdicts; ``limhit_band`` bounds ``|ratio - 1|`` of the quantile
    comparison accompanying a max-tv cutoff indication.
    """

    cutoff_slope: float = 0.1
    cutoff_product: float = 10.0
    bounded_slope: float = 0.02
    pin_floor: float = 0.05
    u_floor: float = 10.0
    limhit_band: float = 0.2

    def __post_init__(self):
        if not self.bounded_slope <= self.cutoff_slope:
            raise ConfigError("bounded_slope must not exceed cutoff_slope")
        if not (0 < self.pin_floor < 0.5):
            raise ConfigError("pin_floor must lie in (0, 1/2)")
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ConfigError(f"threshold {f.name} must be finite")


# Rows -------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryStats:
    """Passage from a boundary start to the ``a``-quantile state.

    For ``side="left"`` the start is 0 and ``M`` satisfies ``pi[0,M] >= a``,
    ``pi[M,n] >= 1-a``. For ``side="right"`` the same is done on the flipped
    chain, so the start is ``n`` and ``M`` (in original labels) satisfies
    ``pi[M,n] >= a``. ``u`` and ``v^2`` are the mean and continuous variance,
    ``w^2`` the discrete variance, ``lam`` the smallest eigenvalue of the
    block of ``I - K`` strictly between the start and ``M``, and
    ``theta = max(E_0 tau_M, E_n tau_M)``.
    """

    side: str
    a: float
    M: int
    u: float
    v: float
    w: float
    lam: float
    theta: float

    @property
    def product(self):
        """``u * lam``; zero when the start already is the quantile state."""
        return 0.0 if self.u == 0 else self.u * self.lam

    @property
    def ratio(self):
        if self.v == 0:
            return 0.0 if self.u == 0 else math.inf
        return self.u / self.v


@dataclass(frozen=True)
class MixingEntry:
    start: object  # "max" or a state
    eps: float
    clock: str
    kind: str
    value: float


@dataclass(frozen=True)
class FamilyRow:
    """Statistics of the chain of size ``n``; ``error`` is set on failure."""

    n: int
    gap: float = NAN
    t: float = NAN
    sigma: float = NAN
    rho: float = NAN
    rho_floored: bool = False
    M: int = -1
    a_M: float = NAN
    pinned: bool = False
    s: float = NAN
    b: float = NAN
    c: float = NAN
    theta: float = NAN
    alpha: float = NAN
    beta: float = NAN
    mean_left: float = NAN
    mean_right: float = NAN
    var_left: float = NAN
    var_right: float = NAN
    dvar_left: float = NAN
    dvar_right: float = NAN
    min_holding: float = NAN
    pi_left: float = NAN
    pi_right: float = NAN
    flip_symmetric: bool = False
    boundary: tuple = ()
    mixing: tuple = ()
    error: str = ""

    @property
    def ok(self):
        return math.isfinite(self.gap)

    @property
    def t_gap(self):
        return self.t * self.gap

    @property
    def s_gap(self):
        return self.s * self.gap

    @property
    def theta_gap(self):
        return self.theta * self.gap

    @property
    def s_over_b(self):
        return self.s / self.b

    @property
    def theta_over_alpha(self):
        return self.theta / self.alpha

    @property
    def theta_over_beta(self):
        return self.theta / self.beta if self.beta > 0 else math.inf

    def boundary_at(self, side, a):
        for st in self.boundary:
            if st.side == side and st.a == a:
                return st
        raise KeyError((side, a))

    def mixing_value(self, start, eps, clock, kind):
        for m in self.mixing:
            if m.start == start and m.eps == eps and m.clock == clock and m.kind == kind:
                return m.value
        return None

    def to_dict(self):
        d = asdict(self)
        d["boundary"] = [asdict(b) for b in self.boundary]
        d["mixing"] = [asdict(m) for m in self.mixing]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["boundary"] = tuple(BoundaryStats(**b) for b in d.get("boundary", ()))
        d["mixing"] = tuple(MixingEntry(**m) for m in d.get("mixing", ()))
        return cls(**d)


def row_invariants(row: FamilyRow, slack: float = INVARIANT_SLACK) -> dict:
    """Inequalities every successful row must satisfy (relative ``slack``).

    Keys: ``comparison`` (``sqrt(t lam) <= t/sigma <= t/max(rho, 1/lam) <= t lam``),
    ``mean_bracket``, ``cvar_bracket``, ``dvar_bracket`` (the boundary-sum
    brackets at the split state), ``holding`` (``delta v^2 <= w^2 <= v^2`` per
    boundary entry and ``delta alpha^2 <= beta^2 <= alpha^2``) and
    ``nonnegative`` (all products and ratios).
    """
    if not row.ok:
        raise BDError(f"row n={row.n} has no statistics: {row.error}")

    def le(x, y):
        return x <= y + slack * max(abs(x), abs(y), 1e-300)

    lam, t, sig, rho = row.gap, row.t, row.sigma, row.rho
    comp = (le(math.sqrt(t * lam), t / sig) and le(t / sig, t / max(rho, 1 / lam))
            and le(t / max(rho, 1 / lam), t * lam))
    a = row.a_M
    out = {"comparison": comp}
    if a > 0:
        out["mean_bracket"] = le(t, row.s) and le(row.s, t + 4.0 / (a * lam))
        out["cvar_bracket"] = le(sig ** 2, row.b ** 2) and le(row.b ** 2, 17.0 * sig ** 2 / a ** 2)
        out["dvar_bracket"] = le(rho ** 2, row.c ** 2) and \
            le(row.c ** 2, rho ** 2 + 17.0 / (a * lam) ** 2)
    delta = row.min_holding
    hold = le(row.beta ** 2, row.alpha ** 2) and le(delta * row.alpha ** 2, row.beta ** 2)
    for st in row.boundary:
        hold = hold and le(st.w ** 2, st.v ** 2) and le(delta * st.v ** 2, st.w ** 2)
    out["holding"] = hold
    vals = [row.t_gap, row.s_gap, row.theta_gap, row.s_over_b, row.theta_over_alpha,
            row.theta_over_beta]
    vals += [st.product for st in row.boundary] + [st.ratio for st in row.boundary]
    out["nonnegative"] = all(v >= 0 for v in vals)
    return out


# Sweeps ------------------------------------------------------------------------

@dataclass(frozen=True)
class MixingRequest:
    start: object
    eps: float
    clock: str = "continuous"
    kind: str = "tv"

    def __post_init__(self):
        if self.clock not in CLOCKS:
            raise ConfigError(f"unknown clock {self.clock!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown distance {self.kind!r}")
        if not (0 < self.eps < 1):
            raise ConfigError(f"eps={self.eps!r} must lie in (0, 1)")
        if not (self.start == "max" or (isinstance(self.start, int) and self.start >= 0)
                or self.start in ("left", "right")):
            raise ConfigError(f"mixing start must be 'max', 'left', 'right' or a state, "
                              f"got {self.start!r}")


def _check_sizes(sizes, min_size=1):
    sizes = list(sizes)
    if not sizes:
        raise ConfigError("no sizes given")
    for n in sizes:
        if isinstance(n, bool) or int(n) != n or n < min_size:
            raise ConfigError(f"sizes must be integers >= {min_size}, got {n!r}")
    sizes = [int(n) for n in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError("sizes must be strictly ascending")
    return sizes


def _check_quantiles(quantiles):
    qs = tuple(float(a) for a in quantiles)
    if not qs or any(not (0 < a < 1) for a in qs) or len(set(qs)) != len(qs):
        raise ConfigError("quantiles must be distinct values in (0, 1)")
    return tuple(sorted(qs))


def _boundary(chain: Chain, side: str, a: float) -> BoundaryStats:
    n = chain.n
    c = chain if side == "left" else chain.cached("flip", flip)
    Mf = quantile_state(c, a)
    mom = hit_moments(c, 0, Mf)
    lam = leading_spectrum(c, Mf).min if Mf > 0 else math.inf
    M = Mf if side == "left" else n - Mf
    theta = max(mean_hit(chain, 0, M), mean_hit(chain, n, M))
    return BoundaryStats(side, a, int(M), mom.mean, math.sqrt(mom.var_continuous),
                         math.sqrt(mom.var_discrete), lam, theta)


def _mixing(chain, req: MixingRequest, limits):
    start = {"left": 0, "right": chain.n}.get(req.start, req.start)
    if chain.n > limits.get(req.clock, math.inf):
        return NAN, ""
    try:
        return float(mixing_time(chain, start, req.eps, req.clock, req.kind)), ""
    except BDError as exc:
        return NAN, f"mixing {req.kind} {req.start} {req.eps} {req.clock}: {exc}"


def family_row(chain: Chain, quantiles=DEFAULT_QUANTILES, split: float = 0.5,
               mixing=(), exact_limit=None, pin_floor: float = 0.05) -> FamilyRow:
    """All statistics of one chain; raises on a failure of the core statistics."""
    n = chain.n
    if n < 1:
        raise PreconditionError("cutoff statistics need n >= 1")
    limits = DEFAULT_EXACT_LIMIT if exact_limit is None else exact_limit
    st = cutoff_spectral_stats(full_spectrum(chain))
    M = quantile_state(chain, split)
    h = cutoff_hit_stats(chain, M)
    a_M = min(chain.mass(0, M), chain.mass(M, n))
    bstats = tuple(_boundary(chain, side, a) for side in SIDES for a in quantiles)
    entries, errors = [], []
    for req in mixing:
        v, err = _mixing(chain, req, limits)
        entries.append(MixingEntry(req.start, req.eps, req.clock, req.kind, v))
        if err:
            errors.append(err)
    return FamilyRow(
        n=n, gap=st.gap, t=st.t, sigma=st.sigma, rho=st.rho, rho_floored=st.rho2_floored,
        M=M, a_M=a_M, pinned=a_M >= pin_floor,
        s=h.s, b=math.sqrt(h.b2), c=math.sqrt(h.c2),
        theta=h.theta, alpha=math.sqrt(h.alpha2), beta=math.sqrt(h.beta2),
        mean_left=h.mean_left, mean_right=h.mean_right,
        var_left=h.var_left, var_right=h.var_right,
        dvar_left=h.dvar_left, dvar_right=h.dvar_right,
        min_holding=chain.min_holding, pi_left=float(chain.pi[0]), pi_right=float(chain.pi[n]),
        flip_symmetric=chain == chain.cached("flip", flip),
        boundary=bstats, mixing=tuple(entries), error="; ".join(errors),
    )


def _safe_row(family, n, quantiles, split, mixing, exact_limit, pin_floor):
    try:
        return family_row(family(n), quantiles, split, mixing, exact_limit, pin_floor)
    except (BDError, ArithmeticError, ValueError) as exc:
        return FamilyRow(n=n, error=f"{type(exc).__name__}: {exc}")


def ordered_map(fn, items, workers: int = 1):
    """``[fn(x) for x in items]``, run on ``workers`` threads, order preserved."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class FamilyReport:
    family: str
    params: dict
    sizes: list
    quantiles: tuple
    split: float
    thresholds: Thresholds
    rows: list
    mixing: tuple = ()
    exact_limit: dict = field(default_factory=lambda: dict(DEFAULT_EXACT_LIMIT))
    verdicts: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def ok_rows(self):
        return [r for r in self.rows if r.ok]

    def any_ok(self):
        return any(r.ok for r in self.rows)

    def add_verdicts(self, modes=VERDICT_MODES, clocks=("continuous",)):
        """Append verdicts for every ``(mode, clock)``; skipped if too few rows."""
        for clock in clocks:
            for mode in modes:
                try:
                    self.verdicts.append(verdict(self, mode, clock))
                except PreconditionError:
                    pass
        return self

    # Serialization -----------------------------------------------------------

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "family": {"name": self.family, "params": self.params},
            "config": {
                "sizes": list(self.sizes), "quantiles": list(self.quantiles),
                "split": self.split, "thresholds": asdict(self.thresholds),
                "mixing": [asdict(m) for m in self.mixing],
                "exact_limit": dict(self.exact_limit),
            },
            "rows": [r.to_dict() for r in self.rows],
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    def to_json(self):
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema {d.get('schema_version')!r}")
        d = _decode(d)
        cfg = d["config"]
        return cls(
            family=d["family"]["name"], params=d["family"]["params"],
            sizes=list(cfg["sizes"]), quantiles=tuple(cfg["quantiles"]), split=cfg["split"],
            thresholds=Thresholds(**cfg["thresholds"]),
            rows=[FamilyRow.from_dict(r) for r in d["rows"]],
            mixing=tuple(MixingRequest(**m) for m in cfg["mixing"]),
            exact_limit=dict(cfg["exact_limit"]),
            verdicts=[CutoffVerdict.from_dict(v) for v in d["verdicts"]],
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def columns(self):
        cols = [f.name for f in fields(FamilyRow) if f.name not in ("boundary", "mixing", "error")]
        cols += ["t_gap", "s_gap", "theta_gap", "s_over_b", "theta_over_alpha", "theta_over_beta"]
        for side in SIDES:
            for a in self.quantiles:
                for key in ("M", "u", "v", "w", "lam", "theta", "product", "ratio"):
                    cols.append(f"{side}_{key}_a{a!r}")
        for m in self.mixing:
            cols.append(f"T_{m.kind}_{m.start}_eps{m.eps!r}_{m.clock}")
        cols.append("error")
        return cols

    def flat_rows(self):
        out = []
        for r in self.rows:
            d = {f.name: getattr(r, f.name) for f in fields(FamilyRow)
                 if f.name not in ("boundary", "mixing")}
            for key in ("t_gap", "s_gap", "theta_gap", "s_over_b", "theta_over_alpha",
                        "theta_over_beta"):
                d[key] = getattr(r, key) if r.ok else NAN
            for side in SIDES:
                for a in self.quantiles:
                    try:
                        st = r.boundary_at(side, a)
                    except KeyError:
                        st = None
                    for key in ("M", "u", "v", "w", "lam", "theta", "product", "ratio"):
                        d[f"{side}_{key}_a{a!r}"] = NAN if st is None else getattr(st, key)
            for m in self.mixing:
                v = r.mixing_value(m.start, m.eps, m.clock, m.kind)
                d[f"T_{m.kind}_{m.start}_eps{m.eps!r}_{m.clock}"] = NAN if v is None else v
            out.append(d)
        return out

    def to_csv(self):
        """Rows as CSV, then a blank line and the verdict table."""
        buf = io.StringIO()
        cols = self.columns()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for d in self.flat_rows():
            w.writerow([_fmt(d[c]) for c in cols])
        buf.write("\n")
        w.writerow(VERDICT_COLUMNS)
        for v in self.verdicts:
            w.writerow([_fmt(x) for x in v.csv_cells()])
        return buf.getvalue()


def analyze_family(family: FamilyGenerator, sizes, quantiles=DEFAULT_QUANTILES, *,
                   split: float = 0.5, mixing=(), exact_limit=None,
                   thresholds: Thresholds | None = None, workers: int = 1) -> FamilyReport:
    """One row per size; failures are recorded in the row's ``error`` field."""
    sizes = _check_sizes(sizes, family.min_size)
    quantiles = _check_quantiles(quantiles)
    if not (0 < split < 1):
        raise ConfigError(f"split quantile {split!r} must lie in (0, 1)")
    thresholds = thresholds or Thresholds()
    limits = dict(DEFAULT_EXACT_LIMIT if exact_limit is None else exact_limit)
    mixing = tuple(mixing)

    def one(n):
        return _safe_row(family, n, quantiles, split, mixing, limits, thresholds.pin_floor)

    rows = ordered_map(one, sizes, workers)
    return FamilyReport(family.name, _jsonable(family.params), sizes, quantiles, split,
                        thresholds, rows, mixing, limits)


# Verdicts --------------------------------------------------------------------

VERDICT_COLUMNS = ["mode", "clock", "series", "sizes", "products", "slope", "last_product",
                   "verdict", "notes"]


def loglog_slope(sizes, values):
    """Least-squares slope of ``log value`` against ``log n``."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def classify(sizes, products, thresholds: Thresholds):
    """``(slope, label)`` for one product series."""
    p = [float(v) for v in products]
    if any(not math.isfinite(v) or v < 0 for v in p):
        return NAN, "inconclusive"
    if any(v == 0 for v in p):
        # The start already is the target: the product vanishes and stays bounded.
        return NAN, "no-cutoff-indicated"
    slope = loglog_slope(sizes, p)
    if slope > thresholds.cutoff_slope and p[-1] > thresholds.cutoff_product:
        return slope, "cutoff-indicated"
    if slope < thresholds.bounded_slope:
        return slope, "no-cutoff-indicated"
    return slope, "inconclusive"


@dataclass(frozen=True)
class SeriesVerdict:
    name: str
    sizes: tuple
    products: tuple
    slope: float
    verdict: str


@dataclass(frozen=True)
class CutoffVerdict:
    """Verdict for one mode and clock, re-derivable from the report rows.

    ``series`` holds one product series (several for boundary modes, one per
    quantile). ``width`` lists, per size and ``eps < 1/2``, the profile width
    ``T(eps) - T(1-eps)`` and its ratio to ``T(1/2)`` when the report carries
    those mixing times. ``limhit_ratio`` compares ``max(E_0, E_n)`` hitting
    means at the extreme quantiles at the largest size.
    """

    mode: str
    clock: str
    series: tuple
    verdict: str
    width: tuple = ()
    limhit_ratio: float = NAN
    notes: tuple = ()

    @property
    def slope(self):
        return self.series[0].slope if len(self.series) == 1 else NAN

    def to_dict(self):
        return {"mode": self.mode, "clock": self.clock, "verdict": self.verdict,
                "series": [asdict(s) for s in self.series],
                "width": [dict(w) for w in self.width],
                "limhit_ratio": self.limhit_ratio, "notes": list(self.notes)}

    @classmethod
    def from_dict(cls, d):
        series = tuple(SeriesVerdict(s["name"], tuple(s["sizes"]), tuple(s["products"]),
                                     s["slope"], s["verdict"]) for s in d["series"])
        return cls(d["mode"], d["clock"], series, d["verdict"],
                   tuple(dict(w) for w in d["width"]), d["limhit_ratio"], tuple(d["notes"]))

    def csv_cells(self):
        out = []
        for s in self.series:
            out.append([self.mode, self.clock, s.name, " ".join(str(n) for n in s.sizes),
                        " ".join(_fmt(p) for p in s.products), s.slope,
                        s.products[-1] if s.products else NAN, self.verdict,
                        "|".join(self.notes)])
        return out[0] if len(out) == 1 else _join_cells(out)

    def __eq__(self, other):
        if not isinstance(other, CutoffVerdict):
            return NotImplemented
        return dumps(self.to_dict()) == dumps(other.to_dict())

    def __hash__(self):
        return hash(dumps(self.to_dict()))


def _join_cells(rows):
    """Several series in one CSV line: each cell joins the per-series values."""
    cols = list(zip(*rows))
    return [cols[0][0], cols[1][0]] + [";".join(_fmt(x) for x in c) for c in cols[2:7]] + \
        [cols[7][0], cols[8][0]]


def _width(rows, start, kind, clock):
    out = []
    for r in rows:
        by_eps = {m.eps: m.value for m in r.mixing
                  if m.start == start and m.kind == kind and m.clock == clock}
        half = by_eps.get(0.5)
        for eps in sorted(by_eps):
            if eps < 0.5 and (1 - eps) in by_eps:
                W = by_eps[eps] - by_eps[1 - eps]
                rel = W / half if half else NAN
                out.append({"n": r.n, "eps": eps, "W": W, "W_rel": rel})
    return tuple(out)


def verdict(report: FamilyReport, mode: str, clock: str = "continuous") -> CutoffVerdict:
    """Growth verdict of the criterion product of ``mode`` across the sweep.

    ``max-sep`` uses ``t lam``, ``max-tv`` uses ``theta lam`` and the boundary
    modes use ``u(a) lam(a)`` for every quantile ``a``: cutoff is indicated
    when every quantile indicates it and ruled out when any quantile is
    bounded.
    """
    if mode not in VERDICT_MODES:
        raise ConfigError(f"unknown verdict mode {mode!r}; expected one of {VERDICT_MODES}")
    if clock not in CLOCKS:
        raise ConfigError(f"unknown clock {clock!r}")
    rows = report.ok_rows()
    if len(rows) < 3:
        raise PreconditionError(f"verdict needs at least 3 successful sizes, got {len(rows)}")
    th = report.thresholds
    sizes = tuple(r.n for r in rows)
    notes = []
    if not all(r.pinned for r in rows):
        notes.append("split state below pin floor at some size")
    if clock == "discrete" and min(r.min_holding for r in rows) <= 0:
        notes.append("discrete criteria need positive holding")
    limhit = NAN
    if mode in ("max-sep", "max-tv"):
        key = "t_gap" if mode == "max-sep" else "theta_gap"
        prods = tuple(float(getattr(r, key)) for r in rows)
        slope, label = classify(sizes, prods, th)
        series = (SeriesVerdict(key, sizes, prods, slope, label),)
        start, kind = "max", ("sep" if mode == "max-sep" else "tv")
        if mode == "max-tv" and report.quantiles:
            last = rows[-1]
            lo = last.boundary_at("left", report.quantiles[0]).theta
            hi = last.boundary_at("left", report.quantiles[-1]).theta
            limhit = lo / hi if hi > 0 else NAN
            if label == "cutoff-indicated" and clock == "continuous" and \
                    not abs(limhit - 1) <= th.limhit_band:
                notes.append("quantile hitting ratio outside band")
    else:
        side = mode.rsplit("-", 1)[1]
        series = []
        for a in report.quantiles:
            prods = tuple(float(r.boundary_at(side, a).product) for r in rows)
            slope, lab = classify(sizes, prods, th)
            series.append(SeriesVerdict(f"u_lam_a{a!r}", sizes, prods, slope, lab))
        series = tuple(series)
        labels = [s.verdict for s in series]
        if all(x == "cutoff-indicated" for x in labels):
            label = "cutoff-indicated"
        elif any(x == "no-cutoff-indicated" for x in labels):
            label = "no-cutoff-indicated"
        else:
            label = "inconclusive"
        start, kind = side, "tv"
        pi_start = [r.pi_left if side == "left" else r.pi_right for r in rows]
        if pi_start[-1] > 0 and pi_start[-1] >= pi_start[0]:
            notes.append("stationary mass at the start does not decrease")
        if clock == "discrete":
            u_last = min(st.u for st in rows[-1].boundary if st.side == side)
            if u_last < th.u_floor:
                notes.append("boundary mean below floor at the largest size")
    width = _width(rows, start, kind, clock)
    return CutoffVerdict(mode, clock, series, label, width, limhit, tuple(notes))


def recompute_verdicts(report: FamilyReport):
    """Verdicts recomputed from the rows, in the stored order."""
    return [verdict(report, v.mode, v.clock) for v in report.verdicts]


# Times and windows -----------------------------------------------------------

def cutoff_time_window(report: FamilyReport, mode: str, clock: str = "continuous",
                       a: float | None = None):
    """Per-size ``(n, time, window)`` pairs prescribed for ``mode`` and ``clock``.

    ``max-sep``: ``(s, b)``, discrete ``(s, max(c, 1/lam))``.
    ``max-sep-spectral``: ``(t, sigma)``, discrete ``(t, max(rho, 1))``.
    ``max-tv``: ``(theta, alpha)``, discrete ``(theta, beta)``.
    Boundary modes: ``u(a)`` with ``a`` the split quantile by default and
    window ``max_a v(a)``, discrete ``max(max_a w(a), 1)``.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if clock not in CLOCKS:
        raise ConfigError(f"unknown clock {clock!r}")
    disc = clock == "discrete"
    out = []
    for r in report.ok_rows():
        if mode == "max-sep":
            pair = (r.s, max(r.c, 1 / r.gap) if disc else r.b)
        elif mode == "max-sep-spectral":
            pair = (r.t, max(r.rho, 1.0) if disc else r.sigma)
        elif mode == "max-tv":
            pair = (r.theta, r.beta if disc else r.alpha)
        else:
            side = mode.rsplit("-", 1)[1]
            q = report.split if a is None else a
            if q not in report.quantiles:
                q = report.quantiles[len(report.quantiles) // 2]
            sts = [st for st in r.boundary if st.side == side]
            win = max(max(st.w for st in sts), 1.0) if disc else max(st.v for st in sts)
            pair = (r.boundary_at(side, q).u, win)
        out.append((r.n, float(pair[0]), float(pair[1])))
    return out


# Boundary against worst start ------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    n: int
    R_right: float  # E_n tau_M / E_0 tau_M
    R_left: float   # E_0 tau_M / E_n tau_M
    dominant: str
    symmetric: bool
    symmetric_consistent: bool | None


def boundary_vs_max_comparison(report: FamilyReport):
    """Per-size ratios of the two boundary means to the split state.

    A family whose left start drives the worst case has ``R_right -> 0``. For
    flip-symmetric rows the left and right statistics must agree to
    ``SYMMETRY_TOL`` (relative), and then the left-start and worst-start
    cutoff times coincide.
    """
    out = []
    for r in report.ok_rows():
        L, Rt = r.mean_left, r.mean_right
        cons = None
        if r.flip_symmetric:
            scale = max(abs(L), abs(Rt), 1e-300)
            vscale = max(r.var_left, r.var_right, 1e-300)
            cons = abs(L - Rt) <= SYMMETRY_TOL * scale and \
                abs(r.var_left - r.var_right) <= SYMMETRY_TOL * vscale
            for a in report.quantiles:
                x, y = r.boundary_at("left", a), r.boundary_at("right", a)
                cons = cons and abs(x.u - y.u) <= SYMMETRY_TOL * max(x.u, y.u, 1e-300)
        out.append(ComparisonRow(r.n, Rt / L if L > 0 else math.inf,
                                 L / Rt if Rt > 0 else math.inf,
                                 "left" if L >= Rt else "right", r.flip_symmetric, cons))
    return out


# Randomized families ---------------------------------------------------------

@dataclass(frozen=True)
class RandomRow:
    n: int
    seed: int
    theta: float
    alpha: float
    gap: float
    theta_base: float
    alpha_base: float
    theta_ratio: float       # theta / (mu theta_base); nan when mu is infinite
    theta_n2logn: float      # theta / (n^2 log n)
    theta_over_alpha: float
    theta_gap: float
    pi_error: float
    error: str = ""


@dataclass
class RandomReport:
    base: str
    base_params: dict
    dist: dict
    mu: float
    nu2: float
    sizes: list
    seeds: list
    split: float
    thresholds: Thresholds
    rows: list
    schema_version: int = SCHEMA_VERSION

    def at(self, n):
        return [r for r in self.rows if r.n == n and not r.error]

    def summary(self):
        """Per size: median, min and max over seeds for each ratio."""
        out = []
        for n in self.sizes:
            rs = self.at(n)
            d = {"n": n, "seeds_ok": len(rs)}
            for key in ("theta_ratio", "theta_n2logn", "theta_over_alpha", "theta_gap"):
                x = np.array([getattr(r, key) for r in rs], dtype=float)
                if x.size:
                    d[f"{key}_median"] = float(np.median(x))
                    d[f"{key}_min"] = float(x.min())
                    d[f"{key}_max"] = float(x.max())
            d["pi_error_max"] = max((r.pi_error for r in rs), default=NAN)
            out.append(d)
        return out

    def verdict(self) -> CutoffVerdict:
        """max-tv verdict on the per-size median of ``theta lam`` over seeds."""
        summ = [d for d in self.summary() if d["seeds_ok"]]
        if len(summ) < 3:
            raise PreconditionError("verdict needs at least 3 sizes with results")
        sizes = tuple(d["n"] for d in summ)
        prods = tuple(d["theta_gap_median"] for d in summ)
        slope, label = classify(sizes, prods, self.thresholds)
        return CutoffVerdict("max-tv", "continuous",
                             (SeriesVerdict("median_theta_gap", sizes, prods, slope, label),),
                             label, notes=("median over seeds",))

    def to_dict(self):
        return {"schema_version": self.schema_version, "base": self.base,
                "base_params": self.base_params, "dist": self.dist, "mu": self.mu,
                "nu2": self.nu2, "sizes": list(self.sizes), "seeds": list(self.seeds),
                "split": self.split, "thresholds": asdict(self.thresholds),
                "rows": [asdict(r) for r in self.rows], "summary": self.summary()}

    def to_json(self):
        d = self.to_dict()
        try:
            d["verdict"] = self.verdict().to_dict()
        except PreconditionError:
            d["verdict"] = None
        return dumps(d)

    def to_csv(self):
        buf = io.StringIO()
        cols = [f.name for f in fields(RandomRow)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in cols])
        return buf.getvalue()


def random_family_experiment(base: FamilyGenerator, dist: UniformSlowdown, sizes, seeds, *,
                             split: float = 0.5, thresholds: Thresholds | None = None,
                             workers: int = 1) -> RandomReport:
    """Slowdown realizations of ``base`` for every ``(size, seed)``.

    The split state is the ``split``-quantile of the (shared) stationary law.
    """
    sizes = _check_sizes(sizes, base.min_size)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("no seeds given")
    if not (0 < split < 1):
        raise ConfigError(f"split quantile {split!r} must lie in (0, 1)")
    thresholds = thresholds or Thresholds()
    mu = dist.mu

    def base_stats(n):
        c = base(n)
        M = quantile_state(c, split)
        h = cutoff_hit_stats(c, M)
        return c, M, h

    bases = dict(zip(sizes, ordered_map(base_stats, sizes, workers)))

    def one(job):
        n, seed = job
        cb, M, hb = bases[n]
        try:
            c = random_slowdown(base, dist, seed)(n)
            h = cutoff_hit_stats(c, M)
            lam = full_spectrum(c).min
            theta, alpha = h.theta, math.sqrt(h.alpha2)
            with np.errstate(invalid="ignore"):
                err = float(np.max(np.abs(c.pi - cb.pi)))
            return RandomRow(n, seed, theta, alpha, lam, hb.theta, math.sqrt(hb.alpha2),
                             theta / (mu * hb.theta) if math.isfinite(mu) else NAN,
                             theta / (n * n * math.log(n)) if n > 1 else NAN,
                             theta / alpha if alpha > 0 else math.inf, theta * lam, err)
        except (BDError, ArithmeticError, ValueError) as exc:
            return RandomRow(n, seed, *([NAN] * 10), error=f"{type(exc).__name__}: {exc}")

    jobs = [(n, s) for n in sizes for s in seeds]
    rows = ordered_map(one, jobs, workers)
    return RandomReport(base.name, _jsonable(base.params), dist.to_dict(), mu, dist.nu2,
                        sizes, seeds, split, thresholds, rows)


# Serialization helpers -------------------------------------------------------

def _fmt(x):
    """Shortest round-trip text for CSV cells."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (list, tuple)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def _encode(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.floating):
        return _encode(float(x))
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {str(k): _encode(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_encode(v) for v in x]
    return x


_SPECIAL = {"nan": NAN, "inf": math.inf, "-inf": -math.inf}


def _decode(x):
    if isinstance(x, str) and x in _SPECIAL:
        return _SPECIAL[x]
    if isinstance(x, dict):
        return {k: _decode(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_decode(v) for v in x]
    return x


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, shortest floats, non-finite as strings."""
    return json.dumps(_encode(obj), sort_keys=True, indent=1, allow_nan=False)


def _jsonable(params):
    return json.loads(dumps(params))


def with_rows(report: FamilyReport, rows) -> FamilyReport:
    """Copy of ``report`` with replaced rows and no stored verdicts."""
    return replace(report, rows=list(rows), verdicts=[])
