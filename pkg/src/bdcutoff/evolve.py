"""Distribution evolution, distances, mixing times and structural checks.

Discrete time applies ``K`` as a tridiagonal operator. Continuous time uses
uniformization, ``H_t = sum_k Poisson(k; t) K^k``, truncated so that the
discarded Poisson mass is below ``tol / 2``; because every term is a
non-negative combination the evolved entries keep their relative accuracy even
when they are far below machine epsilon.

Mixing times over all starts are computed on the full semigroup: powers
``H_{2^j}`` (or ``K^{2^j}``) are built by repeated squaring and a binary
descent locates the first time the worst row is within ``eps``. Rows of a
single matrix product cover every start at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .chain import Chain, TimeParameter
from .errors import BDError, NumericError, PreconditionError
from .hitting import hit_moments, mean_hit, sample_hits, var_hit
from .spectral import leading_spectrum

CLOCKS = ("discrete", "continuous")
KINDS = ("tv", "sep")
RENORM_EVERY = 64
TERM_CAP = 10 ** 8
STEP_CAP = 10 ** 7
DEFAULT_TOL = 1e-12
DEFAULT_RTOL = 1e-6
LADDER_BUDGET = 2.5e9  # bytes of cached semigroup powers
MONO_SLACK = 1e-12


def _check_clock(clock):
    if clock not in CLOCKS:
        raise BDError(f"unknown clock {clock!r}; expected one of {CLOCKS}")


def _check_kind(kind):
    if kind not in KINDS:
        raise BDError(f"unknown distance {kind!r}; expected one of {KINDS}")


def _check_tol(tol):
    if not (0 < tol <= 1e-3):
        raise BDError(f"tol={tol!r} must lie in (0, 1e-3]")


def _check_start(chain, start):
    start = int(start)
    if not (0 <= start <= chain.n):
        raise BDError(f"start {start} outside [0, {chain.n}]")
    return start


# Operators -----------------------------------------------------------------

def _step(chain: Chain, v: np.ndarray, out: np.ndarray) -> np.ndarray:
    """``out = v K`` along the last axis (rows of ``v`` are distributions)."""
    np.multiply(v, chain.r, out=out)
    if chain.n:
        out[..., 1:] += v[..., :-1] * chain.p[:-1]
        out[..., :-1] += v[..., 1:] * chain.q[1:]
    return out


def _renormalize(v):
    v /= v.sum(axis=-1, keepdims=True)
    return v


def _power_steps(chain: Chain, v, m: int):
    v = np.array(v, dtype=float)
    buf = np.empty_like(v)
    for k in range(int(m)):
        _step(chain, v, buf)
        v, buf = buf, v
        if (k + 1) % RENORM_EVERY == 0:
            _renormalize(v)
    return v


def poisson_window(t: float, tol: float):
    """First index and weights of the Poisson(t) terms kept by uniformization.

    Terms are dropped from both ends while the discarded mass on each side stays
    below ``tol / 4``.
    """
    if t == 0:
        return 0, np.ones(1)
    lo = int(stats.poisson.ppf(tol / 4, t))
    hi = int(stats.poisson.isf(tol / 4, t))
    if hi + 1 > TERM_CAP:
        raise NumericError(f"uniformization at t={t:g} needs {hi + 1} terms (cap {TERM_CAP})")
    lo = max(min(lo, hi), 0)
    w = stats.poisson.pmf(np.arange(lo, hi + 1), t)
    return lo, w


def _uniformize(chain: Chain, v, t: float, tol: float):
    """``v H_t`` before renormalization, together with its row masses."""
    lo, w = poisson_window(t, tol)
    hi = lo + w.size - 1
    cur = np.array(v, dtype=float)
    buf = np.empty_like(cur)
    acc = np.zeros_like(cur)
    for k in range(hi + 1):
        if k >= lo:
            acc += w[k - lo] * cur
        if k == hi:
            break
        _step(chain, cur, buf)
        cur, buf = buf, cur
        if (k + 1) % RENORM_EVERY == 0:
            _renormalize(cur)
    return acc, acc.sum(axis=-1)


def _advance(chain, v, dt, clock, tol):
    if clock == "discrete":
        return _power_steps(chain, v, dt)
    acc, _ = _uniformize(chain, v, dt, tol)
    return _renormalize(acc)


def _point_mass(chain, start):
    v = np.zeros(chain.n + 1)
    v[start] = 1.0
    return v


def evolve_discrete(chain: Chain, start: int, m: int) -> np.ndarray:
    """Row ``start`` of ``K^m``."""
    TimeParameter("discrete", m)
    start = _check_start(chain, start)
    return _power_steps(chain, _point_mass(chain, start), int(m))


def evolve_continuous(chain: Chain, start: int, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Row ``start`` of ``H_t = exp(-t (I - K))`` by uniformization.

    The total-variation error against the exact row is at most ``tol``.
    """
    TimeParameter("continuous", t)
    _check_tol(tol)
    start = _check_start(chain, start)
    return _advance(chain, _point_mass(chain, start), float(t), "continuous", tol)


def evolve(chain: Chain, start: int, time, clock: str, tol: float = DEFAULT_TOL):
    _check_clock(clock)
    if clock == "discrete":
        return evolve_discrete(chain, start, time)
    return evolve_continuous(chain, start, time, tol)


def semigroup(chain: Chain, time, clock: str, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Dense ``K^m`` or ``H_t``; row ``x`` is the law at ``time`` from ``x``."""
    _check_clock(clock)
    TimeParameter(clock, time)
    return _advance(chain, np.eye(chain.n + 1), time, clock, tol)


# Distances -----------------------------------------------------------------

def _as_pair(dist, pi):
    dist = np.asarray(dist, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if dist.shape[-1] != pi.shape[-1] or pi.ndim != 1:
        raise BDError(f"dimension mismatch: {dist.shape} vs {pi.shape}")
    return dist, pi


def tv_distance(dist, pi):
    """Total variation ``(1/2) sum |dist - pi|``; row-wise for 2-d input."""
    dist, pi = _as_pair(dist, pi)
    d = 0.5 * np.abs(dist - pi).sum(axis=-1)
    d = np.clip(d, 0.0, 1.0)
    return float(d) if d.ndim == 0 else d


def _check_pi_positive(pi):
    if np.any(pi < np.finfo(float).tiny):
        raise NumericError(
            "separation needs every stationary mass to be a normal double "
            f"(smallest is {pi.min():.3e})")


def separation(dist, pi):
    """Separation ``max_x (1 - dist(x) / pi(x))`` clamped to ``[0, 1]``."""
    dist, pi = _as_pair(dist, pi)
    _check_pi_positive(pi)
    d = np.max(1.0 - dist / pi, axis=-1)
    d = np.clip(d, 0.0, 1.0)
    return float(d) if d.ndim == 0 else d


def _distance(kind, dist, pi):
    return tv_distance(dist, pi) if kind == "tv" else separation(dist, pi)


def distance(chain: Chain, start, time, clock: str = "continuous", kind: str = "tv",
             tol: float = DEFAULT_TOL) -> float:
    """Distance to stationarity at ``time`` from ``start`` (or the worst start for ``"max"``)."""
    _check_kind(kind)
    if start == "max":
        H = semigroup(chain, time, clock, tol)
        return float(np.max(_distance(kind, H, chain.pi)))
    return _distance(kind, evolve(chain, start, time, clock, tol), chain.pi)


# Mixing times --------------------------------------------------------------

class _Ladder:
    """Dyadic powers of the semigroup, cached within a memory budget."""

    def __init__(self, chain: Chain, clock: str, tol: float, budget=LADDER_BUDGET):
        self.chain = chain
        self.clock = clock
        self.tol = tol
        self.budget = budget
        self.used = 0
        self.pos = {}
        self.neg = {}
        base = semigroup(chain, 1 if clock == "discrete" else 1.0, clock, tol)
        self._store(self.pos, 0, base)

    def _store(self, cache, key, M):
        if self.used + M.nbytes <= self.budget or not cache:
            cache[key] = M
            self.used += M.nbytes

    def power(self, j: int) -> np.ndarray:
        """``H_{2^j}`` (or ``K^{2^j}``), ``j >= 0``."""
        if j in self.pos:
            return self.pos[j]
        k = max(i for i in self.pos if i < j)
        M = self.pos[k]
        for i in range(k + 1, j + 1):
            M = M @ M
            self._store(self.pos, i, M)
        return M

    def fraction(self, k: int) -> np.ndarray:
        """``H_{2^-k}``, ``k >= 1`` (continuous clock only)."""
        if k not in self.neg:
            self._store(self.neg, k, semigroup(self.chain, 2.0 ** -k, "continuous", self.tol))
            if k not in self.neg:
                return semigroup(self.chain, 2.0 ** -k, "continuous", self.tol)
        return self.neg[k]


def _ladder(chain, clock, tol):
    return chain.cached(("ladder", clock, tol), lambda c: _Ladder(c, clock, tol))


def _max_mixing(chain, eps, clock, kind, tol, rtol):
    pi = chain.pi

    def worst(H):
        return float(np.max(_distance(kind, H, pi)))

    if worst(np.eye(chain.n + 1)) <= eps:
        return 0 if clock == "discrete" else 0.0
    L = _ladder(chain, clock, tol)
    cap = STEP_CAP if clock == "discrete" else TERM_CAP
    J = 0
    while worst(L.power(J)) > eps:
        J += 1
        if 2 ** J > cap:
            raise NumericError(
                f"{kind} distance stays above eps={eps} beyond time 2^{J - 1}"
                + (" (periodic chain?)" if chain.is_periodic else ""))
    # T lies in (lo, lo + width] with H_lo the semigroup at lo.
    if J == 0:
        lo, H_lo = 0, None
    else:
        lo, H_lo = 2 ** (J - 1), L.power(J - 1)
    for j in range(J - 2, -1, -1):
        cand = L.power(j) if H_lo is None else H_lo @ L.power(j)
        if worst(cand) > eps:
            lo, H_lo = lo + 2 ** j, cand
    if clock == "discrete":
        return lo + 1
    width = 1.0
    k = 0
    while width > rtol * (lo + width):
        k += 1
        width *= 0.5
        F = L.fraction(k)
        cand = F if H_lo is None else H_lo @ F
        if worst(cand) > eps:
            lo, H_lo = lo + width, cand
    return lo + width


def _single_mixing(chain, start, eps, clock, kind, tol, rtol):
    pi = chain.pi
    v = _point_mass(chain, start)
    if _distance(kind, v, pi) <= eps:
        return 0 if clock == "discrete" else 0.0
    cap = STEP_CAP if clock == "discrete" else TERM_CAP
    lo, h = 0, 1
    while True:
        w = _advance(chain, v, h, clock, tol)
        if _distance(kind, w, pi) <= eps:
            break
        lo, v = lo + h, w
        h *= 2
        if lo > cap:
            raise NumericError(
                f"{kind} distance from {start} stays above eps={eps} beyond time {lo}"
                + (" (periodic chain?)" if chain.is_periodic else ""))
    # T lies in (lo, lo + h] and v is the law at lo.
    if clock == "discrete":
        while h > 1:
            h //= 2
            w = _advance(chain, v, h, clock, tol)
            if _distance(kind, w, pi) > eps:
                lo, v = lo + h, w
        return lo + h
    h = float(h)
    while h > rtol * (lo + h):
        h *= 0.5
        w = _advance(chain, v, h, clock, tol)
        if _distance(kind, w, pi) > eps:
            lo, v = lo + h, w
    return lo + h


def mixing_time(chain: Chain, start, eps: float, clock: str = "continuous", kind: str = "tv",
                tol: float = DEFAULT_TOL, rtol: float = DEFAULT_RTOL):
    """First time the distance from ``start`` drops to ``eps``.

    ``start`` is a state or ``"max"`` (worst case over every start). Discrete
    results are exact integers; continuous results are the right end of a
    bracket of relative width ``rtol``. Both rely on the distances being
    non-increasing in time.
    """
    _check_clock(clock)
    _check_kind(kind)
    _check_tol(tol)
    if not (0 < eps < 1):
        raise BDError(f"eps={eps!r} must lie in (0, 1)")
    if chain.n == 0:
        return 0 if clock == "discrete" else 0.0
    if kind == "sep":
        _check_pi_positive(chain.pi)
    if clock == "discrete" and chain.is_periodic and (kind == "sep" or eps < 0.5):
        # Both parity classes carry stationary mass 1/2 and the law alternates between them.
        limit = 1.0 if kind == "sep" else 0.5
        raise NumericError(f"periodic chain: discrete {kind} distance never falls below {limit}")
    if start == "max":
        return _max_mixing(chain, eps, clock, kind, tol, rtol)
    return _single_mixing(chain, _check_start(chain, start), eps, clock, kind, tol, rtol)


@dataclass(frozen=True)
class MixingTimes:
    """Mixing times keyed by ``(start, eps)``; ``start`` may be ``"max"``."""

    clock: str
    tv: dict
    sep: dict

    def leq_holds(self):
        """``T_TV(eps) <= T_sep(eps)`` for every key present in both tables."""
        return all(self.tv[k] <= self.sep[k] for k in self.tv if k in self.sep)


def mixing_times(chain: Chain, starts, eps_list, clock="continuous", kinds=KINDS,
                 tol=DEFAULT_TOL, rtol=DEFAULT_RTOL) -> MixingTimes:
    tables = {"tv": {}, "sep": {}}
    for kind in kinds:
        for s in starts:
            for e in eps_list:
                tables[kind][(s, e)] = mixing_time(chain, s, e, clock, kind, tol, rtol)
    return MixingTimes(clock, tables["tv"], tables["sep"])


# Profiles ------------------------------------------------------------------

def geometric_grid(t_min: float, t_max: float, ratio: float = 1.05, clock="continuous"):
    """Times ``t_min * ratio^k`` up to the first one at or beyond ``t_max``."""
    _check_clock(clock)
    if not (t_min > 0 and t_max >= t_min and ratio > 1):
        raise BDError("geometric grid needs 0 < t_min <= t_max and ratio > 1")
    k = math.ceil(math.log(t_max / t_min) / math.log(ratio) - 1e-12)
    g = t_min * ratio ** np.arange(k + 1)
    if clock == "discrete":
        g = np.unique(np.maximum(np.rint(g), 1)).astype(np.int64)
    return g


def _ratio_nonincreasing(row, pi, slack=MONO_SLACK):
    ratio = row / pi
    d = np.diff(ratio)
    return bool(np.all(d <= slack * np.maximum(1.0, np.abs(ratio[:-1]))))


@dataclass(frozen=True)
class DistanceProfile:
    """TV and separation on a time grid from one start (or the worst start).

    ``unimodal`` records, per grid time, whether ``P_0(X_t = i) / pi(i)`` is
    non-increasing and ``P_n(X_t = i) / pi(i)`` non-decreasing in ``i``. It is
    ``None`` when the profile does not include a boundary start or when some
    stationary mass is not a normal double.
    """

    start: object
    clock: str
    grid: np.ndarray
    tv: np.ndarray
    sep: np.ndarray | None = None
    unimodal: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def monotone(self, slack=MONO_SLACK):
        ok = bool(np.all(np.diff(self.tv) <= slack))
        if self.sep is not None:
            ok &= bool(np.all(np.diff(self.sep) <= slack))
        return ok

    def sandwich(self, slack=MONO_SLACK):
        """Per-time flags for ``tv <= sep <= 1 - (1 - 2 tv)^2`` (upper part when ``tv <= 1/2``)."""
        if self.sep is None:
            raise BDError("profile has no separation column")
        lower = self.tv <= self.sep + slack
        upper = (self.tv > 0.5) | (self.sep <= 1.0 - (1.0 - 2.0 * self.tv) ** 2 + slack)
        return lower & upper

    def crossing(self, eps, kind="tv"):
        """First grid time at which the distance is at most ``eps`` (``None`` if never)."""
        d = self.tv if kind == "tv" else self.sep
        idx = np.flatnonzero(d <= eps)
        return None if idx.size == 0 else self.grid[idx[0]]

    def rows(self):
        for k, t in enumerate(self.grid):
            yield (t, self.tv[k], None if self.sep is None else self.sep[k])


def distance_profile(chain: Chain, start, grid, clock: str = "continuous", *,
                     with_sep: bool = True, tol: float = 1e-14) -> DistanceProfile:
    """Distances at every grid time, marching the law forward between grid points.

    ``start="max"`` evolves every start at once and records the worst row.
    Separation is skipped (``sep=None``) when ``with_sep`` is false.
    """
    _check_clock(clock)
    grid = np.asarray(grid)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) < 0) or grid[0] < 0:
        raise BDError("grid must be a non-empty ascending sequence of non-negative times")
    if clock == "discrete":
        for t in grid:
            TimeParameter("discrete", t)
    pi = chain.pi
    if with_sep:
        _check_pi_positive(pi)
    if start == "max":
        V = np.eye(chain.n + 1)
        boundary = {0: 0, chain.n: chain.n}
    else:
        s = _check_start(chain, start)
        V = _point_mass(chain, s)
        boundary = {s: None} if s in (0, chain.n) else {}
    if np.any(pi < np.finfo(float).tiny):
        # P(X_t = i) / pi(i) cannot be formed where pi underflows.
        boundary = {}
    tv = np.empty(grid.size)
    sep = np.empty(grid.size) if with_sep else None
    uni = np.empty(grid.size, dtype=bool) if boundary else None
    prev = 0
    for k, t in enumerate(grid):
        dt = t - prev
        if dt:
            V = _advance(chain, V, int(dt) if clock == "discrete" else float(dt), clock, tol)
        prev = t
        tv[k] = np.max(tv_distance(V, pi))
        if with_sep:
            sep[k] = np.max(separation(V, pi))
        if boundary:
            ok = True
            for s, row in boundary.items():
                vec = V if row is None else V[row]
                ok &= _ratio_nonincreasing(vec, pi) if s == 0 else \
                    _ratio_nonincreasing(vec[::-1], pi[::-1])
            uni[k] = ok
    return DistanceProfile(start, clock, grid, tv, sep, uni)


# Bounds from hitting times -------------------------------------------------

@dataclass(frozen=True)
class MixingBracket:
    """``T(eps_upper) <= upper`` and ``T(eps_lower) >= lower``.

    A side is vacuous when its ``eps`` falls outside ``(0, 1)``.
    """

    upper: float
    eps_upper: float
    lower: float
    eps_lower: float

    @property
    def upper_vacuous(self):
        return not (0 < self.eps_upper < 1)

    @property
    def lower_vacuous(self):
        return not (0 < self.eps_lower < 1)


def _theta_alpha(chain, i):
    a = hit_moments(chain, 0, i)
    b = hit_moments(chain, chain.n, i)
    return max(a.mean, b.mean), math.sqrt(max(a.var_continuous, b.var_continuous))


def tv_mixing_brackets(chain: Chain, j: int, k: int, delta: float) -> MixingBracket:
    """Hitting-time bounds on the worst-start continuous TV mixing time.

    With ``theta(i) = max(E_0 tau_i, E_n tau_i)`` and ``alpha(i)^2`` the larger
    of the two variances::

        T(1 - pi[j,k] + delta) <= theta(j) + E_j tau_k + E_k tau_j
                                  + sqrt(2/delta - 1) max(alpha(j), alpha(k))
        T(min(pi[j,n], pi[0,k]) - delta) >= theta(j) - E_k tau_j
                                  - sqrt(1/delta - 1) max(alpha(j), alpha(k))
    """
    n = chain.n
    j, k = int(j), int(k)
    if not (0 <= j <= k <= n):
        raise BDError(f"brackets need 0 <= j <= k <= n, got ({j}, {k})")
    if not (0 < delta < 1):
        raise BDError(f"delta={delta!r} must lie in (0, 1)")
    th_j, al_j = _theta_alpha(chain, j)
    _, al_k = _theta_alpha(chain, k)
    al = max(al_j, al_k)
    e_jk = mean_hit(chain, j, k)
    e_kj = mean_hit(chain, k, j)
    upper = th_j + e_jk + e_kj + math.sqrt(2.0 / delta - 1.0) * al
    lower = th_j - e_kj - math.sqrt(1.0 / delta - 1.0) * al
    eps1 = 1.0 - chain.mass(j, k) + delta
    eps2 = min(chain.mass(j, n), chain.mass(0, k)) - delta
    return MixingBracket(upper, eps1, lower, eps2)


def start_mixing_brackets(chain: Chain, i: int, delta: float) -> MixingBracket:
    """One-sided Chebyshev bounds on the continuous TV mixing time from 0::

        T(0, delta + pi[i+1, n]) <= E_0 tau_i + sqrt((1 - delta)/delta Var_0 tau_i)
        T(0, delta - pi[0, i-1]) >= E_0 tau_i - sqrt(delta/(1 - delta) Var_0 tau_i)
    """
    i = int(i)
    if not (0 <= i <= chain.n):
        raise BDError(f"state {i} outside [0, {chain.n}]")
    if not (0 < delta < 1):
        raise BDError(f"delta={delta!r} must lie in (0, 1)")
    m = hit_moments(chain, 0, i)
    upper = m.mean + math.sqrt((1.0 - delta) / delta * m.var_continuous)
    lower = m.mean - math.sqrt(delta / (1.0 - delta) * m.var_continuous)
    eps1 = delta + chain.mass(i + 1, chain.n)
    eps2 = delta - chain.mass(0, i - 1)
    return MixingBracket(upper, eps1, lower, eps2)


# Structural checks ---------------------------------------------------------

def unimodality_check(chain: Chain, t: TimeParameter, tol: float = 1e-15) -> bool:
    """Whether ``P_0(X_t = i) / pi(i)`` is non-increasing in ``i``.

    The discrete clock is only covered when every holding rate is at least 1/2;
    otherwise :class:`PreconditionError` is raised.
    """
    if not isinstance(t, TimeParameter):
        raise BDError("t must be a TimeParameter")
    if t.kind == "discrete" and chain.min_holding < 0.5:
        raise PreconditionError(
            f"discrete unimodality needs min holding >= 1/2, got {chain.min_holding:g}")
    _check_pi_positive(chain.pi)
    if t.kind == "discrete":
        row = evolve_discrete(chain, 0, t.value)
    else:
        row = _advance(chain, _point_mass(chain, 0), float(t.value), "continuous", tol)
    return _ratio_nonincreasing(row, chain.pi)


def separation_argmax(chain: Chain, time, clock: str = "continuous",
                      tol: float = DEFAULT_TOL, slack: float = MONO_SLACK):
    """Start maximizing separation at ``time``.

    A boundary start is reported whenever its separation is within ``slack`` of
    the maximum over all starts.
    """
    H = semigroup(chain, time, clock, tol)
    s = separation(H, chain.pi)
    best = float(s.max())
    for b in (0, chain.n):
        if s[b] >= best - slack:
            return b, s
    return int(np.argmax(s)), s


def sandwich_ok(tv, sep, slack=MONO_SLACK) -> bool:
    """``tv <= sep`` everywhere and ``sep <= 1 - (1 - 2 tv)^2`` where ``tv <= 1/2``."""
    tv = np.asarray(tv, dtype=float)
    sep = np.asarray(sep, dtype=float)
    lower = tv <= sep + slack
    upper = (tv > 0.5) | (sep <= 1.0 - (1.0 - 2.0 * tv) ** 2 + slack)
    return bool(np.all(lower & upper))


def separation_doubling_ok(chain: Chain, time, clock: str = "continuous",
                           tol: float = DEFAULT_TOL, slack: float = MONO_SLACK) -> bool:
    """``sep(2 t) <= 1 - (1 - 2 d(t))^2`` for worst-start distances with ``d(t) <= 1/2``.

    Unlike the same bound at equal times, this form holds for every reversible chain.
    """
    H = semigroup(chain, time, clock, tol)
    d = float(np.max(tv_distance(H, chain.pi)))
    if d > 0.5:
        return True
    sep2 = float(np.max(separation(H @ H, chain.pi)))
    return sep2 <= 1.0 - (1.0 - 2.0 * d) ** 2 + slack


def tv_lower_bound_from_hitting(chain: Chain, i: int, t: float, samples: int, seed: int):
    """Monte Carlo estimate of ``P_0(tau_i > t) - pi[0, i-1]`` and its standard error.

    This lower-bounds the continuous TV distance from 0 at time ``t``.
    """
    x = sample_hits(chain, 0, i, "continuous", samples, seed)
    p = float(np.mean(x > t))
    se = math.sqrt(max(p * (1 - p), 1.0 / samples) / samples)
    return p - chain.mass(0, i - 1), se


# Brown-Shao ----------------------------------------------------------------

def hypoexponential_cdf(rates, t, tol: float = 1e-13):
    """CDF of a sum of independent exponentials with the given rates.

    Evaluated exactly (up to ``tol``) by uniformizing the series phase-type
    chain, so repeated rates need no special treatment.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 1 or rates.size == 0 or np.any(rates <= 0):
        raise BDError("rates must be a non-empty positive sequence")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lam = float(rates.max())
    stay = 1.0 - rates / lam
    move = rates / lam
    x_max = lam * max(float(t.max()), 0.0)
    k_max = int(stats.poisson.isf(tol / 4, x_max)) + 1 if x_max > 0 else 1
    if k_max > TERM_CAP:
        raise NumericError("hypoexponential CDF needs too many terms")
    # absorbed[k] = P(series chain absorbed within k steps)
    m = rates.size
    phase = np.zeros(m)
    phase[0] = 1.0
    absorbed = np.empty(k_max + 1)
    done = 0.0
    for k in range(k_max + 1):
        absorbed[k] = done
        out = phase * move
        done += out[-1]
        nxt = phase * stay
        nxt[1:] += out[:-1]
        phase = nxt
    out = np.zeros(t.shape)
    pos = t > 0
    xs = lam * t[pos]
    if xs.size:
        width = int(np.ceil(12 * math.sqrt(x_max) + 40))
        res = np.empty(xs.size)
        chunk = max(1, 2_000_000 // (2 * width + 1))
        offs = np.arange(-width, width + 1)
        for s in range(0, xs.size, chunk):
            x = xs[s:s + chunk, None]
            k = np.floor(x).astype(np.int64) + offs
            valid = k >= 0
            kk = np.where(valid, k, 0)
            logw = kk * np.log(x) - x - gammaln(kk + 1)
            w = np.where(valid, np.exp(logw), 0.0)
            a = absorbed[np.minimum(kk, k_max)]
            res[s:s + chunk] = (w * a).sum(axis=1)
        out[pos] = np.clip(res, 0.0, 1.0)
    return out


@dataclass(frozen=True)
class BrownShaoResult:
    """Simulated passage ``0 -> i`` against the sum-of-exponentials law."""

    i: int
    samples: int
    ks: float
    ks_pvalue: float
    ks_critical: float
    mean_sample: float
    var_sample: float
    mean_exact: float
    var_exact: float
    z_mean: float
    z_var: float
    repeated_rates: bool

    @property
    def ks_pass(self):
        return self.ks <= self.ks_critical

    @property
    def cumulants_pass(self):
        return abs(self.z_mean) <= 4 and abs(self.z_var) <= 4


def brown_shao_check(chain: Chain, i: int, samples: int = 100_000, seed: int = 0) -> BrownShaoResult:
    """Compare simulated ``tau_i`` from 0 with exponentials at the leading-block rates.

    The Kolmogorov-Smirnov statistic uses the exact hypoexponential CDF; the
    first two sample cumulants are scored against the passage-moment formulas.
    """
    i = int(i)
    if not (1 <= i <= chain.n):
        raise BDError(f"target {i} outside [1, {chain.n}]")
    beta = leading_spectrum(chain, i).values
    x = sample_hits(chain, 0, i, "continuous", samples, seed)
    ks = stats.kstest(x, lambda s: hypoexponential_cdf(beta, s))
    crit = float(stats.kstwo.isf(0.01, samples))
    mean = mean_hit(chain, 0, i)
    var = var_hit(chain, 0, i, "continuous")
    k4 = 6.0 * math.fsum(beta ** -4.0)
    xm = float(x.mean())
    xv = float(x.var(ddof=1))
    z_mean = (xm - mean) / math.sqrt(var / samples)
    z_var = (xv - var) / math.sqrt(k4 / samples + 2.0 * var * var / (samples - 1))
    gaps = np.diff(beta)
    repeated = bool(gaps.size and np.min(gaps) <= 1e-8 * beta.max())
    return BrownShaoResult(i, samples, float(ks.statistic), float(ks.pvalue), crit,
                           xm, xv, mean, var, float(z_mean), float(z_var), repeated)
