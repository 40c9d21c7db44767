"""Construction, validation and canonical transforms of birth-and-death chains.

A chain on ``{0, ..., n}`` is described by birth rates ``p``, death rates
``q`` and holding rates ``r`` with ``p[n] = q[0] = 0``. Alongside the rates the
chain keeps their natural logarithms, so that families whose rates underflow
double precision (for example ``exp(-2000)``) remain irreducible and have an
exact stationary distribution in log space.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ChainError, ConfigError

ROW_TOL = 1e-12
BALANCE_TOL = 1e-12
# Below this magnitude products lose relative precision in binary64.
_BALANCE_FLOOR = 1e-290


@dataclass(frozen=True)
class TimeParameter:
    """A time on one of the two clocks: an integer step or a real time."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "discrete":
            v = self.value
            if isinstance(v, (bool, np.bool_)) or not float(v).is_integer() or v < 0:
                raise ChainError(f"discrete time must be a non-negative integer, got {v!r}")
            object.__setattr__(self, "value", int(v))
        elif self.kind == "continuous":
            v = float(self.value)
            if not (math.isfinite(v) and v >= 0):
                raise ChainError(f"continuous time must be finite and >= 0, got {self.value!r}")
            object.__setattr__(self, "value", v)
        else:
            raise ChainError(f"unknown clock {self.kind!r}")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _log_weights(d):
    """``w_0 = 0, w_k = d_0 + ... + d_{k-1}``, shifted so that ``max w = 0``.

    The running sum is kept as a Neumaier pair and shifted before the pair is
    collapsed. A plain sum of many log-ratios carries an absolute error of the
    order of ``ulp(max |w|)``, which would become the relative error of ``pi``
    near its mode on long biased chains.
    """
    hi = np.empty(len(d) + 1)
    lo = np.empty(len(d) + 1)
    hi[0] = lo[0] = s = c = 0.0
    for k, v in enumerate(d.tolist(), start=1):
        t = s + v
        c += (s - t) + v if abs(s) >= abs(v) else (v - t) + s
        s = t
        hi[k] = s
        lo[k] = c
    m = int(np.argmax(hi + lo))
    return (hi - hi[m]) + (lo - lo[m])


def _safe_log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


class Chain:
    """Validated birth-and-death chain with cached stationary distribution.

    Instances are immutable. Use :func:`new_chain` or the constructor.

    Parameters
    ----------
    p, q : array_like
        Birth and death rates, length ``n + 1``.
    r : array_like, optional
        Holding rates. Defaults to ``1 - p - q`` (tiny negative rounding
        residue is clipped to zero).
    log_p, log_q : array_like, optional
        Exact logarithms of ``p`` and ``q``. Supply these when a rate underflows
        to zero in double precision but is positive mathematically.
    """

    __slots__ = ("n", "p", "q", "r", "log_p", "log_q", "log_pi", "pi", "_cache")

    def __init__(self, p, q, r=None, *, log_p=None, log_q=None):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.ndim != 1 or q.ndim != 1 or p.size == 0 or p.size != q.size:
            raise ChainError(f"dimension mismatch: len(p)={p.size}, len(q)={q.size}")
        if r is None:
            r = 1.0 - (p + q)
            r = np.where((r < 0) & (r > -ROW_TOL), 0.0, r)
        r = np.asarray(r, dtype=float)
        if r.shape != p.shape:
            raise ChainError(f"dimension mismatch: len(r)={r.size}, len(p)={p.size}")
        n = p.size - 1
        for name, a in (("p", p), ("q", q), ("r", r)):
            bad = np.flatnonzero(~np.isfinite(a) | (a < 0) | (a > 1))
            if bad.size:
                i = int(bad[0])
                raise ChainError(f"rate {name}[{i}]={a[i]!r} outside [0, 1]", i)
        if p[n] != 0:
            raise ChainError(f"p[n] must be 0, got {p[n]!r}", n)
        if q[0] != 0:
            raise ChainError(f"q[0] must be 0, got {q[0]!r}", 0)
        dev = np.abs(p + q + r - 1.0)
        bad = np.flatnonzero(dev > ROW_TOL)
        if bad.size:
            i = int(bad[0])
            raise ChainError(f"row {i} sums to {p[i] + q[i] + r[i]!r}, not 1", i)

        log_p = _safe_log(p) if log_p is None else np.asarray(log_p, dtype=float)
        log_q = _safe_log(q) if log_q is None else np.asarray(log_q, dtype=float)
        if log_p.shape != p.shape or log_q.shape != q.shape:
            raise ChainError("dimension mismatch between rates and log-rates")
        _check_log_rates(p, log_p, "p")
        _check_log_rates(q, log_q, "q")
        bad = np.flatnonzero(~np.isfinite(log_p[:n]))
        if bad.size:
            i = int(bad[0])
            raise ChainError(f"reducible chain: p[{i}] = 0", i)
        bad = np.flatnonzero(~np.isfinite(log_q[1:]))
        if bad.size:
            i = int(bad[0]) + 1
            raise ChainError(f"reducible chain: q[{i}] = 0", i)

        w = _log_weights(log_p[:n] - log_q[1:])
        log_pi = w - logsumexp(w)
        if np.array_equal(p, q[::-1]) and np.array_equal(r, r[::-1]):
            # Flip-symmetric rates: make the symmetry of pi exact.
            log_pi = 0.5 * (log_pi + log_pi[::-1])
        pi = np.exp(log_pi)
        pi /= pi.sum()
        if np.array_equal(p, q[::-1]) and np.array_equal(r, r[::-1]):
            pi = 0.5 * (pi + pi[::-1])
        self._set(n, p, q, r, log_p, log_q, log_pi, pi)
        _check_balance(self)

    def _set(self, n, p, q, r, log_p, log_q, log_pi, pi):
        object.__setattr__(self, "n", int(n))
        for name, a in (("p", p), ("q", q), ("r", r), ("log_p", log_p),
                        ("log_q", log_q), ("log_pi", log_pi), ("pi", pi)):
            object.__setattr__(self, name, _frozen(a))
        object.__setattr__(self, "_cache", {})

    @classmethod
    def _trusted(cls, n, p, q, r, log_p, log_q, log_pi, pi):
        obj = cls.__new__(cls)
        obj._set(n, p, q, r, log_p, log_q, log_pi, pi)
        return obj

    def __setattr__(self, name, value):
        raise AttributeError("Chain is immutable")

    def __repr__(self):
        return f"Chain(n={self.n})"

    def __eq__(self, other):
        if not isinstance(other, Chain):
            return NotImplemented
        return self.n == other.n and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("p", "q", "r", "log_p", "log_q", "pi"))

    __hash__ = object.__hash__

    # cached derived quantities --------------------------------------------

    def cached(self, key, fn):
        """Memoize ``fn(self)`` under ``key`` (the chain itself is immutable)."""
        c = self._cache
        if key not in c:
            c[key] = fn(self)
        return c[key]

    @property
    def cdf(self):
        """``cdf[i] = pi([0, i])``."""
        return self.cached("cdf", lambda c: _frozen(np.cumsum(c.pi)))

    @property
    def tail(self):
        """``tail[i] = pi([i, n])``, accumulated from the right for accuracy."""
        return self.cached("tail", lambda c: _frozen(np.cumsum(c.pi[::-1])[::-1]))

    @property
    def log_cdf(self):
        return self.cached("log_cdf", lambda c: _frozen(np.logaddexp.accumulate(c.log_pi)))

    @property
    def log_tail(self):
        return self.cached(
            "log_tail", lambda c: _frozen(np.logaddexp.accumulate(c.log_pi[::-1])[::-1]))

    def mass(self, a, b):
        """Stationary mass of the interval ``[a, b]`` (0 when empty)."""
        a = max(int(a), 0)
        b = min(int(b), self.n)
        if a > b:
            return 0.0
        if a == 0:
            return float(self.cdf[b])
        if b == self.n:
            return float(self.tail[a])
        return float(math.fsum(self.pi[a:b + 1]))

    @property
    def min_holding(self):
        return float(self.r.min())

    @property
    def is_periodic(self):
        """True when every holding rate is zero (period 2 in discrete time)."""
        return self.n >= 1 and bool(np.all(self.r == 0))

    def validity_report(self):
        return {
            "n": self.n,
            "periodic": self.is_periodic,
            "min_holding": self.min_holding,
            "pi_underflow": bool(np.any(self.pi == 0)),
        }

    def matrix(self):
        """Dense transition matrix (testing and small-chain use)."""
        n = self.n
        K = np.diag(self.r.copy())
        if n:
            K[np.arange(n), np.arange(1, n + 1)] = self.p[:n]
            K[np.arange(1, n + 1), np.arange(n)] = self.q[1:]
        return K

    def to_dict(self):
        return {"n": self.n, "p": self.p.tolist(), "q": self.q.tolist(), "r": self.r.tolist()}


def _check_log_rates(a, log_a, name):
    if np.any(np.isnan(log_a)) or np.any(log_a > 0):
        raise ChainError(f"log-{name} must be <= 0 and not NaN")
    pos = a > 0
    if np.any(pos & ~np.isfinite(log_a)):
        i = int(np.flatnonzero(pos & ~np.isfinite(log_a))[0])
        raise ChainError(f"log-{name}[{i}] is -inf but {name}[{i}] > 0", i)
    # Where the rate is representable the two descriptions must agree.
    rep = a > 1e-300
    if np.any(rep):
        err = np.abs(np.exp(log_a[rep]) - a[rep]) / a[rep]
        if np.any(err > 1e-10):
            i = int(np.flatnonzero(rep)[np.argmax(err)])
            raise ChainError(f"log-{name}[{i}] inconsistent with {name}[{i}]", i)
    tiny = ~rep & np.isfinite(log_a)
    if np.any(tiny & (log_a > math.log(1e-290))):
        i = int(np.flatnonzero(tiny & (log_a > math.log(1e-290)))[0])
        raise ChainError(f"log-{name}[{i}] inconsistent with {name}[{i}]", i)


def _check_balance(c: Chain):
    n = c.n
    if abs(c.pi.sum() - 1.0) > ROW_TOL:
        raise ChainError("stationary distribution does not sum to 1")
    if n == 0:
        return
    # Detailed balance, in log space to stay meaningful when pi underflows.
    lhs = c.log_pi[:n] + c.log_p[:n]
    rhs = c.log_pi[1:] + c.log_q[1:]
    scale = np.maximum(1.0, np.abs(lhs)) * 4e-16 * (n + 1)
    bad = np.flatnonzero(np.abs(lhs - rhs) > np.maximum(BALANCE_TOL, scale))
    if bad.size:
        i = int(bad[0])
        raise ChainError(f"detailed balance fails at edge ({i}, {i + 1})", i)
    a = c.pi[:n] * c.p[:n]
    b = c.pi[1:] * c.q[1:]
    big = np.maximum(a, b)
    ok = big < _BALANCE_FLOOR
    ok |= np.abs(a - b) <= BALANCE_TOL * big + 1e-300
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        raise ChainError(f"detailed balance fails at edge ({i}, {i + 1})", i)


def new_chain(p, q, r=None, **kw) -> Chain:
    """Build and validate a chain; see :class:`Chain`."""
    return Chain(p, q, r, **kw)


def stationary(chain: Chain) -> np.ndarray:
    """Stationary distribution, computed from cumulative log rate ratios."""
    return chain.pi


def flip(chain: Chain) -> Chain:
    """State-reversed chain ``K'(i, j) = K(n - i, n - j)``.

    The stationary distribution is reversed exactly and ``flip(flip(c)) == c``.
    """
    def rev(a):
        return a[::-1].copy()

    # The flipped log-pi is re-centred only by reversal, so it stays exact.
    return Chain._trusted(chain.n, rev(chain.q), rev(chain.p), rev(chain.r),
                          rev(chain.log_q), rev(chain.log_p), rev(chain.log_pi),
                          rev(chain.pi))


def lazy_transform(chain: Chain, delta: float) -> Chain:
    """Return the chain with transition matrix ``(K - delta I) / (1 - delta)``."""
    delta = float(delta)
    if not (0 <= delta < 1):
        raise ChainError(f"delta={delta!r} must lie in [0, 1)")
    rmin = chain.min_holding
    if delta > rmin + ROW_TOL:
        raise ChainError(f"delta={delta!r} exceeds the minimum holding rate {rmin!r}")
    if delta == 0:
        return chain
    s = 1.0 - delta
    r = np.clip((chain.r - delta) / s, 0.0, 1.0)
    p = chain.p / s
    q = chain.q / s
    shift = math.log1p(-delta)
    return Chain(np.clip(p, 0, 1), np.clip(q, 0, 1), r,
                 log_p=np.minimum(chain.log_p - shift, 0.0),
                 log_q=np.minimum(chain.log_q - shift, 0.0))


def quantile_state(chain: Chain, a: float) -> int:
    """Smallest state ``M`` with ``pi([0, M]) >= a``.

    A relative slack of 1e-12 absorbs rounding in the cumulative sums, so a
    uniform distribution on ten states has its 1/2-quantile at state 4.
    """
    if not (0 < a < 1):
        raise ChainError(f"quantile level a={a!r} must lie in (0, 1)")
    idx = int(np.searchsorted(chain.cdf, a * (1 - 1e-12), side="left"))
    return min(idx, chain.n)


def chain_from_dict(d) -> Chain:
    """Build a chain from the JSON object layout ``{"n", "p", "q", "r"?}``."""
    if not isinstance(d, dict):
        raise ConfigError("chain description must be a JSON object")
    unknown = set(d) - {"n", "p", "q", "r"}
    if unknown:
        raise ConfigError(f"unknown chain keys: {sorted(unknown)}")
    for k in ("n", "p", "q"):
        if k not in d:
            raise ConfigError(f"chain description lacks '{k}'")
    n = d["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise ConfigError("'n' must be a non-negative integer")
    for k in ("p", "q", "r"):
        if k in d and (not isinstance(d[k], list) or len(d[k]) != n + 1):
            raise ConfigError(f"'{k}' must be a list of length n + 1 = {n + 1}")
    try:
        return Chain(d["p"], d["q"], d.get("r"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ChainError):
            raise
        raise ConfigError(f"non-numeric rate: {exc}") from exc


def load_chain(path) -> Chain:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read chain file {path}: {exc}") from exc
    return chain_from_dict(d)
