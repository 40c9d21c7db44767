"""Parametric birth-and-death families and their configuration files.

Every generator returns a :class:`FamilyGenerator`, a deterministic map from
the size ``n`` to a validated :class:`~bdcutoff.chain.Chain`. Metropolis
families are built from log-weights so that rate ratios never overflow, and the
chains carry exact log-rates when a rate underflows.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .chain import Chain, quantile_state
from .errors import ChainError, ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

LOG_HALF = math.log(0.5)
SLOWDOWN_FLOOR = 1e-15


@dataclass(frozen=True)
class FamilyGenerator:
    """A family of chains indexed by size.

    ``generate(n)`` is a pure function of ``n`` and ``params`` (including the
    seed of random families).
    """

    name: str
    params: dict
    generate: Callable[[int], Chain] = field(repr=False, compare=False)
    min_size: int = 1

    def __call__(self, n: int) -> Chain:
        if isinstance(n, bool) or int(n) != n or n < self.min_size:
            raise ChainError(f"family {self.name} needs an integer size >= {self.min_size}, got {n!r}")
        return self.generate(int(n))


# Size rules -----------------------------------------------------------------

@dataclass(frozen=True)
class SizeRule:
    """``coef * n^power * log(n)^log_power + offset``; ``integer`` rules are floored."""

    coef: float = 1.0
    power: float = 0.0
    log_power: float = 0.0
    offset: float = 0.0
    integer: bool = False

    def __call__(self, n):
        v = self.coef * float(n) ** self.power
        if self.log_power:
            v *= math.log(n) ** self.log_power
        v += self.offset
        return math.floor(v + 1e-9) if self.integer else v

    def to_dict(self):
        return {"coef": self.coef, "power": self.power, "log_power": self.log_power,
                "offset": self.offset}


def _as_rule(x, integer=False):
    if isinstance(x, SizeRule):
        return x
    if callable(x):
        return x
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return SizeRule(coef=float(x), integer=integer) if not integer else \
            SizeRule(coef=0.0, offset=float(x), integer=True)
    if isinstance(x, dict):
        unknown = set(x) - {"coef", "power", "log_power", "offset"}
        if unknown:
            raise ConfigError(f"unknown size-rule keys: {sorted(unknown)}")
        try:
            return SizeRule(**{k: float(v) for k, v in x.items()}, integer=integer)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid size rule {x!r}: {exc}") from exc
    raise ConfigError(f"cannot interpret size rule {x!r}")


def _rule_params(rule):
    return rule.to_dict() if isinstance(rule, SizeRule) else repr(rule)


# Helpers --------------------------------------------------------------------

def _chain_from_logs(log_p, log_q, r=None):
    log_p = np.asarray(log_p, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    p = np.exp(log_p)
    q = np.exp(log_q)
    if r is None:
        r = 1.0 - (p + q)
        r = np.where((r < 0) & (r > -1e-12), 0.0, r)
    return Chain(p, q, r, log_p=log_p, log_q=log_q)


def metropolis_from_log_weights(lw, log_ratio=None) -> Chain:
    """Metropolis chain for weights ``exp(lw)`` over the lazy-boundary walk.

    The base chain moves to each neighbour with probability 1/2 and holds 1/2
    at the two ends, so ``p_i = min(1, w(i+1)/w(i)) / 2`` and
    ``q_i = min(1, w(i-1)/w(i)) / 2``. ``log_ratio[i] = lw[i+1] - lw[i]`` may be
    given when it can be evaluated more accurately than the difference.
    """
    lw = np.asarray(lw, dtype=float)
    n = lw.size - 1
    d = np.diff(lw) if log_ratio is None else np.asarray(log_ratio, dtype=float)
    if d.size != n or not np.all(np.isfinite(d)):
        raise ChainError("log-weights must be finite with n + 1 entries")
    log_p = np.full(n + 1, -np.inf)
    log_q = np.full(n + 1, -np.inf)
    log_p[:n] = LOG_HALF + np.minimum(0.0, d)
    log_q[1:] = LOG_HALF + np.minimum(0.0, -d)
    return _chain_from_logs(log_p, log_q)


# Generators -----------------------------------------------------------------

def biased_rw(p: float) -> FamilyGenerator:
    """Biased walk: ``p_i = r_n = p`` and ``q_i = r_0 = 1 - p``."""
    p = float(p)
    if not (0.5 < p < 1):
        raise ChainError(f"biased walk needs p in (1/2, 1), got {p!r}")
    q = 1.0 - p

    def build(n):
        P = np.full(n + 1, p)
        Q = np.full(n + 1, q)
        P[n] = 0.0
        Q[0] = 0.0
        R = np.zeros(n + 1)
        R[0] += q
        R[n] += p
        return Chain(P, Q, R)

    return FamilyGenerator("biased_rw", {"p": p}, build)


def metropolis_monotone(log_f: Callable, name: str = "metropolis_monotone", params=None,
                        log_ratio: Callable | None = None) -> FamilyGenerator:
    """Metropolis family for an increasing weight ``f`` given through ``log f``.

    ``p_i = 1/2`` and ``q_{i+1} = f(i) / (2 f(i+1))``. ``log_f`` maps an integer
    array to ``log f`` on it; ``log_ratio(n)`` optionally returns the
    increments ``log f(i+1) - log f(i)`` directly.
    """
    def build(n):
        i = np.arange(n + 1)
        lw = np.asarray(log_f(i), dtype=float)
        d = np.diff(lw) if log_ratio is None else np.asarray(log_ratio(n), dtype=float)
        if np.any(d < 0):
            k = int(np.flatnonzero(d < 0)[0])
            raise ChainError(f"weight is not non-decreasing at {k}", k)
        c = metropolis_from_log_weights(lw, d)
        if n and np.any(c.p[:n] + c.q[1:] > 1.0 + 1e-15):
            raise ChainError("K(i, i+1) + K(i+1, i) exceeds 1")
        return c

    return FamilyGenerator(name, dict(params or {}), build)


def _check_pos(name, v):
    v = float(v)
    if not (v > 0 and math.isfinite(v)):
        raise ChainError(f"{name} must be positive, got {v!r}")
    return v


def exp_metropolis(alpha: float, beta: float) -> FamilyGenerator:
    """Metropolis family for ``f(x) = exp(alpha x^beta)``."""
    alpha = _check_pos("alpha", alpha)
    beta = _check_pos("beta", beta)

    def log_ratio(n):
        i = np.arange(n, dtype=float)
        d = np.empty(n)
        if n:
            d[0] = alpha
            j = i[1:]
            # alpha ((j+1)^beta - j^beta) without cancellation
            d[1:] = alpha * j ** beta * np.expm1(beta * np.log1p(1.0 / j))
        return d

    return metropolis_monotone(lambda i: alpha * i.astype(float) ** beta, "exp_metropolis",
                               {"alpha": alpha, "beta": beta}, log_ratio)


def poly_metropolis(alpha: float, beta: float) -> FamilyGenerator:
    """Metropolis family for ``g(x) = exp(alpha (log(x+1))^beta)``."""
    alpha = _check_pos("alpha", alpha)
    beta = _check_pos("beta", beta)

    def log_ratio(n):
        i = np.arange(n, dtype=float)
        L1 = np.log1p(i)
        step = np.log1p(1.0 / (i + 1.0))
        d = np.empty(n)
        pos = L1 > 0
        d[pos] = alpha * L1[pos] ** beta * np.expm1(beta * np.log1p(step[pos] / L1[pos]))
        d[~pos] = alpha * step[~pos] ** beta
        return d

    return metropolis_monotone(lambda i: alpha * np.log1p(i.astype(float)) ** beta,
                               "poly_metropolis", {"alpha": alpha, "beta": beta}, log_ratio)


def lazy_srw() -> FamilyGenerator:
    """Metropolis family for the uniform weight: the lazy-boundary simple walk."""
    return metropolis_monotone(lambda i: np.zeros(i.size), "lazy_srw", {})


def metropolis_binomial() -> FamilyGenerator:
    """Metropolis chain for ``Binomial(n, 1/2)``; exactly flip-invariant."""
    def build(n):
        i = np.arange(n + 1, dtype=float)
        P = np.zeros(n + 1)
        Q = np.zeros(n + 1)
        P[:n] = 0.5 * np.minimum(1.0, (n - i[:n]) / (i[:n] + 1.0))
        Q[1:] = 0.5 * np.minimum(1.0, i[1:] / (n - i[1:] + 1.0))
        return Chain(P, Q)

    return FamilyGenerator("metropolis_binomial", {}, build)


def _ehrenfest_rates(n):
    i = np.arange(n + 1, dtype=float)
    return (n - i) / n, i / n


def _bottleneck(P, Q, R, i, c):
    """Scale edge ``(i, i+1)`` by ``c`` and move the removed mass to holding."""
    R[i] += (1.0 - c) * P[i]
    R[i + 1] += (1.0 - c) * Q[i + 1]
    P[i] *= c
    Q[i + 1] *= c


def _check_c(c, n):
    c = float(c)
    if not (0 < c <= 1):
        raise ChainError(f"bottleneck strength c={c!r} at n={n} must lie in (0, 1]")
    return c


def ehrenfest_modified(c=1.0, split=0.25) -> FamilyGenerator:
    """Ehrenfest chain with its edge ``(M, M+1)`` slowed by ``c(n)``.

    ``M = quantile_state(pi, split)``; the stationary law stays binomial.
    """
    c_rule = _as_rule(c)
    if not (0 < split < 1):
        raise ChainError(f"split quantile {split!r} must lie in (0, 1)")

    def build(n):
        P, Q = _ehrenfest_rates(n)
        R = np.zeros(n + 1)
        cn = _check_c(c_rule(n), n)
        plain = Chain(P, Q, R)
        if cn == 1:
            return plain
        M = quantile_state(plain, split)
        if M >= n:
            M = n - 1
        _bottleneck(P, Q, R, M, cn)
        return Chain(P, Q, R)

    return FamilyGenerator("ehrenfest_modified", {"c": _rule_params(c_rule), "split": split}, build)


def ehrenfest() -> FamilyGenerator:
    return ehrenfest_modified(1.0)


def collapsed_ehrenfest(i_rule=None, c_rule=1.0) -> FamilyGenerator:
    """Ehrenfest walk on ``{0, ..., 2n}`` with ``i`` and ``2n - i`` merged.

    ``p_i = 1 - i/(2n)``, ``q_i = i/(2n)`` for ``i < n`` and ``q_n = 1``. The
    edge ``(i_n, i_n + 1)`` is slowed by ``c_n`` (both directions, removed mass
    to holding). With ``c = 1`` the non-zero spectrum of ``I - K`` is ``2i/n``.
    """
    i_rule = SizeRule(coef=1.0, power=1.0, offset=-1.0, integer=True) if i_rule is None \
        else _as_rule(i_rule, integer=True)
    c_rule = _as_rule(c_rule)

    def build(n):
        i = np.arange(n + 1, dtype=float)
        P = 1.0 - i / (2 * n)
        Q = i / (2 * n)
        P[n] = 0.0
        Q[n] = 1.0
        R = np.zeros(n + 1)
        cn = _check_c(c_rule(n), n)
        if cn != 1:
            k = int(i_rule(n))
            if not (0 <= k < n):
                raise ChainError(f"bottleneck index {k} at n={n} must lie in [0, n)")
            _bottleneck(P, Q, R, k, cn)
        return Chain(P, Q, R)

    return FamilyGenerator("collapsed_ehrenfest",
                           {"i": _rule_params(i_rule), "c": _rule_params(c_rule)}, build)


def bottleneck_srw(xi) -> FamilyGenerator:
    """Simple walk with ``K(0,1) = K(1,0) = xi_n`` and ``K(n, n) = 1/2``; uniform ``pi``.

    For ``n = 1`` the two boundary prescriptions clash at state 1; its row is
    completed by holding.
    """
    xi_rule = _as_rule(xi)

    def build(n):
        x = float(xi_rule(n))
        if not (0 < x < 0.5):
            raise ChainError(f"xi={x!r} at n={n} must lie in (0, 1/2)")
        P = np.full(n + 1, 0.5)
        Q = np.full(n + 1, 0.5)
        P[n] = 0.0
        Q[0] = 0.0
        P[0] = x
        Q[1] = x
        R = 1.0 - P - Q
        return Chain(P, Q, np.where(np.abs(R) < 1e-15, 0.0, R))

    return FamilyGenerator("bottleneck_srw", {"xi": _rule_params(xi_rule)}, build)


# Random slowdowns -----------------------------------------------------------

@dataclass(frozen=True)
class UniformSlowdown:
    """``C ~ Uniform(lo, hi)`` with ``0 <= lo < hi <= 1``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo < self.hi <= 1):
            raise ChainError(f"slowdown interval ({self.lo}, {self.hi}) must satisfy 0 <= lo < hi <= 1")

    @property
    def mu(self):
        """``E[1/C]`` (infinite when ``lo = 0``)."""
        if self.lo == 0:
            return math.inf
        return (math.log(self.hi) - math.log(self.lo)) / (self.hi - self.lo)

    @property
    def nu2(self):
        """``Var(1/C)`` (infinite when ``lo = 0``)."""
        if self.lo == 0:
            return math.inf
        second = (1.0 / self.lo - 1.0 / self.hi) / (self.hi - self.lo)
        return second - self.mu ** 2

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        c = rng.uniform(self.lo, self.hi, size)
        bad = c < SLOWDOWN_FLOOR
        while np.any(bad):
            c[bad] = rng.uniform(self.lo, self.hi, int(bad.sum()))
            bad = c < SLOWDOWN_FLOOR
        return c

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


def size_rng(seed: int, n: int) -> np.random.Generator:
    """Counter-based stream for ``(seed, n)``; other sizes never shift its draws."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(n)])))


def slowdown(chain: Chain, C) -> Chain:
    """Scale both directions of edge ``(i-1, i)`` by ``C[i-1]``, ``i = 1..n``.

    The removed mass goes to holding, so the stationary law is unchanged.
    """
    n = chain.n
    C = np.asarray(C, dtype=float)
    if C.shape != (n,) or np.any(~(C > 0)) or np.any(C > 1):
        raise ChainError("slowdown factors must be n values in (0, 1]")
    P = chain.p.copy()
    Q = chain.q.copy()
    R = chain.r.copy()
    lp = chain.log_p.copy()
    lq = chain.log_q.copy()
    R[:n] += (1.0 - C) * P[:n]
    R[1:] += (1.0 - C) * Q[1:]
    P[:n] *= C
    Q[1:] *= C
    lC = np.log(C)
    lp[:n] += lC
    lq[1:] += lC
    return Chain(P, Q, R, log_p=lp, log_q=lq)


def random_slowdown(base: FamilyGenerator, dist: UniformSlowdown, seed: int) -> FamilyGenerator:
    """Base family with i.i.d. edge slowdowns drawn from ``dist`` per ``(seed, n)``."""
    seed = int(seed)

    def build(n):
        return slowdown(base(n), dist.draw(size_rng(seed, n), n))

    params = {"base": base.name, "base_params": base.params, "dist": dist.to_dict(), "seed": seed}
    return FamilyGenerator(f"random_slowdown({base.name})", params, build, base.min_size)


def random_chain(rng: np.random.Generator, n: int, min_rate: float = 0.02,
                 min_holding: float = 0.0) -> Chain:
    """Irreducible chain on ``{0..n}`` with random rates.

    Each row draws ``(p_i, q_i, r_i)`` uniformly from the simplex, keeps the
    moves above ``min_rate`` and rescales so that ``r_i >= min_holding``.
    """
    n = int(n)
    if n < 0 or not (0 < min_rate and 2 * min_rate + min_holding < 1):
        raise ChainError("random_chain needs n >= 0 and 2 min_rate + min_holding < 1")
    w = rng.dirichlet(np.ones(3), n + 1)
    free = 1.0 - min_holding - 2 * min_rate
    P = min_rate + free * w[:, 0]
    Q = min_rate + free * w[:, 1]
    P[n] = 0.0
    Q[0] = 0.0
    R = 1.0 - (P + Q)
    return Chain(P, Q, R)


# Configuration --------------------------------------------------------------

_PARAMS = {
    "biased_rw": ({"p"}, set()),
    "exp_metropolis": ({"alpha", "beta"}, set()),
    "poly_metropolis": ({"alpha", "beta"}, set()),
    "lazy_srw": (set(), set()),
    "metropolis_binomial": (set(), set()),
    "ehrenfest_modified": (set(), {"c", "split"}),
    "collapsed_ehrenfest": (set(), {"i", "c"}),
    "bottleneck_srw": ({"xi"}, set()),
}


def family_names():
    return sorted(_PARAMS)


def make_family(name: str, params: dict | None = None) -> FamilyGenerator:
    """Generator by name with keyword parameters (unknown keys are errors)."""
    params = dict(params or {})
    if name not in _PARAMS:
        raise ConfigError(f"unknown family {name!r}; known: {family_names()}")
    required, optional = _PARAMS[name]
    missing = required - set(params)
    unknown = set(params) - required - optional
    if missing:
        raise ConfigError(f"family {name} lacks parameters {sorted(missing)}")
    if unknown:
        raise ConfigError(f"family {name} has unknown parameters {sorted(unknown)}")
    try:
        if name == "biased_rw":
            return biased_rw(params["p"])
        if name == "exp_metropolis":
            return exp_metropolis(params["alpha"], params["beta"])
        if name == "poly_metropolis":
            return poly_metropolis(params["alpha"], params["beta"])
        if name == "lazy_srw":
            return lazy_srw()
        if name == "metropolis_binomial":
            return metropolis_binomial()
        if name == "ehrenfest_modified":
            return ehrenfest_modified(params.get("c", 1.0), float(params.get("split", 0.25)))
        if name == "collapsed_ehrenfest":
            return collapsed_ehrenfest(params.get("i"), params.get("c", 1.0))
        return bottleneck_srw(params["xi"])
    except ChainError as exc:
        raise ConfigError(f"invalid parameters for {name}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters for {name}: {exc}") from exc


def family_from_config(cfg: dict) -> FamilyGenerator:
    """Build a family from the parsed TOML layout.

    ``[family]`` holds ``name`` and, for random families, ``seed`` and a
    ``dist`` table ``{kind = "uniform", lo, hi}``; ``[params]`` holds the
    generator parameters.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("family config must be a table")
    unknown = set(cfg) - {"family", "params"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    fam = cfg.get("family")
    if not isinstance(fam, dict) or "name" not in fam:
        raise ConfigError("config needs a [family] table with a name")
    unknown = set(fam) - {"name", "seed", "dist"}
    if unknown:
        raise ConfigError(f"unknown [family] keys: {sorted(unknown)}")
    params = cfg.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[params] must be a table")
    gen = make_family(fam["name"], params)
    if ("seed" in fam) != ("dist" in fam):
        raise ConfigError("random families need both 'seed' and 'dist'")
    if "dist" in fam:
        d = fam["dist"]
        if not isinstance(d, dict):
            raise ConfigError("'dist' must be a table")
        unknown = set(d) - {"kind", "lo", "hi"}
        if unknown or d.get("kind", "uniform") != "uniform":
            raise ConfigError(f"'dist' must be {{kind='uniform', lo, hi}}, got {d!r}")
        seed = fam["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("'seed' must be a non-negative integer")
        try:
            dist = UniformSlowdown(float(d["lo"]), float(d["hi"]))
        except KeyError as exc:
            raise ConfigError(f"'dist' lacks {exc}") from exc
        except ChainError as exc:
            raise ConfigError(str(exc)) from exc
        gen = random_slowdown(gen, dist, seed)
    return gen


def load_family(path) -> FamilyGenerator:
    try:
        with open(Path(path), "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read family file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    return family_from_config(cfg)
