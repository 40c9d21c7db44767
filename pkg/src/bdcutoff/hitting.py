"""First-passage moments, interval exits and hitting-time bounds.

Rightward passages ``i -> i+1`` have closed forms in terms of the stationary
masses; a passage ``a -> b`` with ``a < b`` is the sum of its independent
adjacent passages. Leftward passages reuse the rightward formulas on the
flipped chain.

The ratio ``pi([0, i]) / pi(i)`` is evaluated through the exact recursion
``R_i = 1 + R_{i-1} q_i / p_{i-1}``, which never forms ``pi`` itself and so
stays accurate when stationary masses underflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .chain import Chain, flip
from .errors import BDError, NumericError
from .spectral import leading_spectrum

CLOCKS = ("discrete", "continuous")
_LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class HitMoments:
    mean: float
    var_continuous: float
    var_discrete: float
    start: int
    target: int


@dataclass(frozen=True)
class CutoffHitStats:
    s: float
    b2: float
    c2: float
    theta: float
    alpha2: float
    beta2: float
    M: int
    mean_left: float
    mean_right: float
    var_left: float
    var_right: float
    dvar_left: float
    dvar_right: float


@dataclass(frozen=True)
class HitBounds:
    var_lower: float
    var_upper: float
    mean_upper: float
    var_lower_discrete: float
    var_upper_discrete: float


def _check_clock(clock):
    if clock not in CLOCKS:
        raise BDError(f"unknown clock {clock!r}; expected one of {CLOCKS}")


def _exp(x):
    return math.exp(x) if x < _LOG_MAX else math.inf


def passage_arrays(chain: Chain):
    """Per-step arrays for the passages ``i -> i+1``, ``i = 0..n-1``.

    Returns ``(mean, var_continuous, var_discrete)``. Entries that exceed the
    float range are ``inf``; they only matter to passages that cross them.
    """
    def compute(c):
        n = c.n
        mean = np.empty(n)
        vc = np.empty(n)
        vd = np.empty(n)
        R = 1.0   # pi([0,i]) / pi(i)
        G = 0.0   # sum_{m<i} pi([0,m]) mean_m / pi(i)
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(n):
                if i:
                    ratio = _exp(c.log_q[i] - c.log_p[i - 1])  # pi(i-1)/pi(i)
                    G = ratio * (G + R * mean[i - 1])
                    R = 1.0 + R * ratio
                inv_p = math.exp(-c.log_p[i]) if c.log_p[i] > -709 else math.inf
                m = R * inv_p
                mean[i] = m
                v = (2.0 * G + R * m) * inv_p
                vc[i] = v
                # Discrete clock: subtract pi([0,i]) / (p_i pi(i)) = mean.
                d = (2.0 * G + R * m - R) * inv_p
                vd[i] = max(d, 0.0) if math.isfinite(d) else math.inf
        for a in (mean, vc, vd):
            a.setflags(write=False)
        return mean, vc, vd

    return chain.cached("passage", compute)


def _path(chain: Chain, a: int, b: int):
    """Chain and slice whose per-step arrays cover the passage ``a -> b``."""
    n = chain.n
    a, b = int(a), int(b)
    if not (0 <= a <= n and 0 <= b <= n):
        raise BDError(f"states ({a}, {b}) outside [0, {n}]")
    if a <= b:
        return chain, slice(a, b)
    f = chain.cached("flip", flip)
    return f, slice(n - a, n - b)


def mean_hit_right(chain: Chain, i: int) -> float:
    """``E_i tau_{i+1} = pi([0,i]) / (pi(i) p_i)``."""
    if not (0 <= i < chain.n):
        raise BDError(f"rightward passage needs 0 <= i < n, got i={i}")
    return float(passage_arrays(chain)[0][i])


def mean_hit(chain: Chain, a: int, b: int) -> float:
    """Expected first-passage time from ``a`` to ``b`` (either clock)."""
    c, sl = _path(chain, a, b)
    return math.fsum(passage_arrays(c)[0][sl])


def var_hit(chain: Chain, a: int, b: int, clock: str = "continuous") -> float:
    """Variance of the first-passage time from ``a`` to ``b``."""
    _check_clock(clock)
    c, sl = _path(chain, a, b)
    arr = passage_arrays(c)[1 if clock == "continuous" else 2]
    return math.fsum(arr[sl])


def hit_moments(chain: Chain, a: int, b: int) -> HitMoments:
    c, sl = _path(chain, a, b)
    m, vc, vd = passage_arrays(c)
    return HitMoments(math.fsum(m[sl]), math.fsum(vc[sl]), math.fsum(vd[sl]), int(a), int(b))


def moments_via_spectrum(chain: Chain, i: int) -> HitMoments:
    """Moments of the passage ``0 -> i`` from the leading-block eigenvalues."""
    beta = leading_spectrum(chain, i).values
    inv = 1.0 / beta
    return HitMoments(math.fsum(inv), math.fsum(inv * inv),
                      math.fsum((1.0 - beta) * inv * inv), 0, int(i))


def mean_exit_interval(chain: Chain, i: int, j: int, k: int) -> float:
    """``E_j min(tau_i, tau_k)`` for ``i < j < k`` as the ratio ``A / B``.

    ``A = sum_{i<l1<=j<=l2<k} pi([l1,l2]) / (pi(l1) q_l1 pi(l2) p_l2)`` and
    ``B = sum_{l=i}^{k-1} 1 / (pi(l) p_l)``; both are accumulated in log space.
    """
    i, j, k = int(i), int(j), int(k)
    if not (0 <= i < j < k <= chain.n):
        raise BDError(f"interval exit needs 0 <= i < j < k <= n, got ({i}, {j}, {k})")
    lp, lpp, lq = chain.log_pi, chain.log_p, chain.log_q
    terms = []
    for l1 in range(i + 1, j + 1):
        # log pi([l1, l2]) for l2 = l1 .. k-1, keep l2 >= j
        seg = np.logaddexp.accumulate(lp[l1:k])[j - l1:]
        l2 = np.arange(j, k)
        terms.append(seg - lp[l1] - lq[l1] - lp[l2] - lpp[l2])
    log_a = logsumexp(np.concatenate(terms))
    log_b = logsumexp(-(lp[i:k] + lpp[i:k]))
    return float(math.exp(log_a - log_b))


def hit_bounds(chain: Chain, i: int, j: int) -> HitBounds:
    """Variance and mean bounds for the passage ``i -> j``, ``i < j``.

    With ``lam`` the smallest eigenvalue of the block on ``{0, ..., j-1}``:
    ``pi[0,i] E^2 / (2 pi[0,j-1]) <= Var <= 2 E / lam`` and
    ``E <= 4 pi[0,j-1] / (pi[0,i] lam)``. The discrete lower bound carries an
    extra factor ``min_i r_i``.
    """
    if not (0 <= i < j <= chain.n):
        raise BDError(f"hit bounds need 0 <= i < j <= n, got ({i}, {j})")
    lam = leading_spectrum(chain, j).min
    E = mean_hit(chain, i, j)
    a = chain.mass(0, i)
    b = chain.mass(0, j - 1)
    lower = a / (2.0 * b) * E * E
    upper = 2.0 / lam * E
    return HitBounds(lower, upper, 4.0 * b / (a * lam), chain.min_holding * lower, upper)


def tail_lower_bound(a: float) -> float:
    """Universal lower bound for ``P_0(tau_i > a E_0 tau_i)``, ``a`` in (0, 1)."""
    if not (0 < a < 1):
        raise BDError(f"a={a!r} must lie in (0, 1)")
    s = math.sqrt(a)
    return min(math.exp(-s), (1 - a) ** 2 / (s + (1 - a) ** 2))


def cutoff_hit_stats(chain: Chain, M: int) -> CutoffHitStats:
    """Boundary-to-``M`` statistics ``s, b^2, c^2, theta, alpha^2, beta^2``."""
    n = chain.n
    left = hit_moments(chain, 0, M)
    right = hit_moments(chain, n, M)
    return CutoffHitStats(
        s=left.mean + right.mean,
        b2=left.var_continuous + right.var_continuous,
        c2=left.var_discrete + right.var_discrete,
        theta=max(left.mean, right.mean),
        alpha2=max(left.var_continuous, right.var_continuous),
        beta2=max(left.var_discrete, right.var_discrete),
        M=int(M),
        mean_left=left.mean, mean_right=right.mean,
        var_left=left.var_continuous, var_right=right.var_continuous,
        dvar_left=left.var_discrete, dvar_right=right.var_discrete,
    )


def boundary_sum_difference(chain: Chain, i: int, j: int) -> float:
    """``sum_{l=i}^{j-1} (1 - 2 pi[0,l]) / (p_l pi(l))``; equals ``s(i) - s(j)``."""
    lp = chain.log_pi[i:j] + chain.log_p[i:j]
    w = (1.0 - 2.0 * chain.cdf[i:j]) * np.exp(-lp)
    return math.fsum(w)


# Monte Carlo ----------------------------------------------------------------

MC_BLOCK = 4096
MC_STEP_CAP = 10 ** 9


def _block_streams(seed, samples):
    nblocks = -(-samples // MC_BLOCK)
    ss = np.random.SeedSequence(int(seed))
    return [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(nblocks)]


def sample_hits(chain: Chain, a: int, b: int, clock: str, samples: int, seed: int) -> np.ndarray:
    """Simulated first-passage times ``a -> b`` (array of length ``samples``).

    Trajectories follow the embedded jump chain with geometric (discrete) or
    exponential (continuous) holding. They are grouped in fixed blocks, each with
    its own counter-based Philox substream spawned from ``seed``, so the draws
    depend only on ``seed`` and ``samples``.
    """
    _check_clock(clock)
    samples = int(samples)
    if samples < 1:
        raise BDError("samples must be >= 1")
    n = chain.n
    a, b = int(a), int(b)
    if not (0 <= a <= n and 0 <= b <= n):
        raise BDError(f"states ({a}, {b}) outside [0, {n}]")
    out = np.zeros(samples)
    if a == b:
        return out
    move = chain.p + chain.q
    up = np.divide(chain.p, move, out=np.zeros_like(move), where=move > 0)
    for bi, rng in enumerate(_block_streams(seed, samples)):
        lo = bi * MC_BLOCK
        hi = min(samples, lo + MC_BLOCK)
        pos = np.full(hi - lo, a, dtype=np.int64)
        t = np.zeros(hi - lo)
        steps = np.zeros(hi - lo, dtype=np.int64)
        active = np.arange(hi - lo)
        while active.size:
            x = pos[active]
            rate = move[x]
            if clock == "continuous":
                t[active] += rng.exponential(1.0, active.size) / rate
                steps[active] += 1
            else:
                g = rng.geometric(rate)
                t[active] += g
                steps[active] += g
            x = x + np.where(rng.random(active.size) < up[x], 1, -1)
            pos[active] = x
            done = x == b
            if np.any(steps[active] > MC_STEP_CAP):
                raise NumericError("simulation exceeded the per-trajectory step cap")
            active = active[~done]
        out[lo:hi] = t
    return out


def simulate_hit(chain: Chain, a: int, b: int, clock: str, samples: int, seed: int):
    """Sample mean and variance of simulated first-passage times."""
    x = sample_hits(chain, a, b, clock, samples, seed)
    var = float(x.var(ddof=1)) if x.size > 1 else 0.0
    return float(x.mean()), var
