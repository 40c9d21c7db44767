"""Eigenvalues of ``I - K`` and of its principal submatrices.

``I - K`` is similar, through ``diag(sqrt(pi))``, to the symmetric tridiagonal
matrix with diagonal ``p_i + q_i`` and off-diagonal ``-sqrt(p_i q_{i+1})``.
All spectra are computed on that symmetric form with LAPACK's tridiagonal
eigensolver, so they are real and never require eigenvectors.

The symmetric form factors as ``B^T B`` with ``B`` upper bidiagonal, diagonal
``-sqrt(p_l)`` and superdiagonal ``sqrt(q_{l+1})``. A tridiagonal solver only
resolves eigenvalues to an absolute accuracy near ``eps``, so values below
``REFINE_BELOW`` are recomputed as squared singular values of ``B`` by
bisection on its zero-diagonal Golub-Kahan form, which is accurate to a few
ulps relative to each value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .chain import Chain, flip
from .errors import SpectralError

ZERO_TOL = 1e-10
# Refined eigenvalues keep relative accuracy, so only values near underflow are rejected.
COND_TOL = 1e-250
REFINE_BELOW = 1e-3


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues together with where they came from.

    ``kind`` is ``"full"`` (non-zero eigenvalues of ``I - K``), ``"leading"``
    (submatrix on ``{0, ..., index - 1}``) or ``"punctured"`` (row and column
    ``index`` removed).
    """

    values: np.ndarray
    kind: str
    index: int | None = None

    def __len__(self):
        return self.values.size

    @property
    def min(self):
        return float(self.values[0])


@dataclass(frozen=True)
class CutoffSpectralStats:
    t: float
    gap: float
    sigma2: float
    rho2: float
    rho2_floored: bool = False

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)

    @property
    def rho(self):
        return math.sqrt(self.rho2)


def symmetric_tridiagonal(chain: Chain):
    """Diagonal and off-diagonal of the symmetrized ``I - K``."""
    n = chain.n
    d = chain.p + chain.q
    e = -np.exp(0.5 * (chain.log_p[:n] + chain.log_q[1:n + 1]))
    return d, e


def golub_kahan_offdiagonal(chain: Chain, i: int | None = None):
    """Off-diagonal of the Golub-Kahan matrix of the bidiagonal factor.

    ``i=None`` factors the whole of ``I - K`` (``n x (n+1)`` factor), otherwise
    the leading block on ``{0, ..., i - 1}``. The entries interleave
    ``sqrt(p_0), sqrt(q_1), sqrt(p_1), ...``.
    """
    m = chain.n if i is None else int(i)
    sp = np.exp(0.5 * chain.log_p[:m])
    sq = np.exp(0.5 * chain.log_q[1:m + 1])
    size = 2 * m if i is None else 2 * m - 1
    off = np.empty(size)
    off[0::2] = sp
    off[1::2] = sq[:size // 2]
    return off


def _eigh(d, e, **kw):
    try:
        w = eigh_tridiagonal(d, e, eigvals_only=True, **kw)
    except LinAlgError as exc:
        raise SpectralError(f"tridiagonal eigensolver failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SpectralError("tridiagonal eigensolver returned non-finite values")
    return np.sort(w)


def _eigvals(d, e, off=None):
    """Ascending eigenvalues of the tridiagonal ``(d, e)``.

    With ``off`` (see :func:`golub_kahan_offdiagonal`) the values below
    ``REFINE_BELOW`` are replaced by their relatively accurate counterparts.
    """
    if d.size == 0:
        return np.empty(0)
    if d.size == 1:
        return np.array([float(d[0])])
    w = _eigh(d, e)
    k = int(np.searchsorted(w, REFINE_BELOW))
    if off is not None and k:
        m = (off.size + 1) // 2
        s = _eigh(np.zeros(off.size + 1), off, lapack_driver="stebz",
                  tol=np.finfo(float).tiny, select="i", select_range=(m, m + k - 1))
        w[:k] = np.sort(s * s)
    return w


def full_spectrum(chain: Chain) -> Spectrum:
    """Non-zero eigenvalues ``lambda_1 <= ... <= lambda_n`` of ``I - K``."""
    if chain.n < 1:
        raise SpectralError("full spectrum needs n >= 1")

    def compute(c):
        d, e = symmetric_tridiagonal(c)
        w = _eigvals(d, e, golub_kahan_offdiagonal(c))
        k = int(np.argmin(np.abs(w)))
        if abs(w[k]) >= ZERO_TOL:
            raise SpectralError(f"no zero eigenvalue found (smallest |value| {abs(w[k]):.3e})")
        rest = np.delete(w, k)
        if rest.size and rest.min() <= ZERO_TOL:
            raise SpectralError(
                f"zero eigenvalue not simple: next eigenvalue {rest.min():.3e} <= {ZERO_TOL}")
        rest = np.maximum(rest, rest.min())
        rest.setflags(write=False)
        return Spectrum(rest, "full")

    return chain.cached("full_spectrum", compute)


def _check_block(w, what):
    if w.size and w[0] < COND_TOL:
        raise SpectralError(
            f"{what}: smallest eigenvalue {w[0]:.3e} below {COND_TOL} (ill-conditioned)")


def leading_spectrum(chain: Chain, i: int) -> Spectrum:
    """Eigenvalues of the submatrix of ``I - K`` indexed by ``{0, ..., i - 1}``."""
    i = int(i)
    if not (1 <= i <= chain.n):
        raise SpectralError(f"leading block size i={i} outside [1, {chain.n}]")

    def compute(c):
        d, e = symmetric_tridiagonal(c)
        w = _eigvals(d[:i], e[:i - 1], golub_kahan_offdiagonal(c, i))
        _check_block(w, f"leading block {i}")
        w.setflags(write=False)
        return Spectrum(w, "leading", i)

    return chain.cached(("leading", i), compute)


def punctured_spectrum(chain: Chain, i: int) -> Spectrum:
    """Eigenvalues of ``I - K`` with row and column ``i`` removed.

    Deleting state ``i`` splits the tridiagonal matrix into the blocks on
    ``{0, ..., i - 1}`` and ``{i + 1, ..., n}``. The right block is the
    leading block of the flipped chain. Both are solved directly.
    """
    i = int(i)
    n = chain.n
    if n < 1 or not (0 <= i <= n):
        raise SpectralError(f"puncture index {i} outside [0, {n}] (n >= 1 required)")
    left = leading_spectrum(chain, i).values if i else np.empty(0)
    right = leading_spectrum(flip(chain), n - i).values if i < n else np.empty(0)
    w = np.sort(np.concatenate((left, right)))
    _check_block(w, f"puncture at {i}")
    w.setflags(write=False)
    return Spectrum(w, "punctured", i)


def spectral_gap(chain: Chain) -> float:
    return full_spectrum(chain).min


def cutoff_spectral_stats(spec: Spectrum) -> CutoffSpectralStats:
    """Sums ``t = sum 1/l``, ``sigma^2 = sum 1/l^2``, ``rho^2 = sum (1-l)/l^2``."""
    if spec.kind != "full":
        raise SpectralError("cutoff statistics need a full spectrum")
    lam = spec.values
    if lam.size == 0:
        raise SpectralError("empty spectrum")
    inv = 1.0 / lam
    t = math.fsum(inv)
    sigma2 = math.fsum(inv * inv)
    rho2 = math.fsum((1.0 - lam) * inv * inv)
    floored = rho2 < 0
    return CutoffSpectralStats(t, float(lam[0]), sigma2, max(rho2, 0.0), floored)


def hardy_constant(chain: Chain, M: int) -> float:
    """Weighted Hardy constant at split state ``M``.

    ``max( max_{j<M} pi[0,j] sum_{l=j}^{M-1} 1/(pi(l) p_l),
           max_{j>M} pi[j,n] sum_{l=M+1}^{j} 1/(pi(l) q_l) )``,
    evaluated with log-sum-exp so that vanishing stationary masses are safe.
    """
    M = int(M)
    n = chain.n
    best = -np.inf
    if M > 0:
        a = -(chain.log_pi[:M] + chain.log_p[:M])
        suffix = np.logaddexp.accumulate(a[::-1])[::-1]
        best = max(best, float(np.max(chain.log_cdf[:M] + suffix)))
    if M < n:
        b = -(chain.log_pi[M + 1:] + chain.log_q[M + 1:])
        prefix = np.logaddexp.accumulate(b)
        best = max(best, float(np.max(chain.log_tail[M + 1:] + prefix)))
    return math.exp(best) if np.isfinite(best) else 0.0


def gap_order_bound(chain: Chain, M: int):
    """Order bracket ``(lower, upper)`` for the relaxation time ``1/lambda``.

    ``lower = C(M)/2`` and ``upper = 4 C(M)`` with ``C`` the Hardy constant;
    the lower end is guaranteed when ``M`` is a median of ``pi``, the upper
    end for every ``M``.
    """
    C = hardy_constant(chain, M)
    return 0.5 * C, 4.0 * C


def hardy_gap_bracket(chain: Chain, i: int):
    """Bounds ``1/(4C) <= lambda_1 <= 1/(a C)`` with ``a = min(pi[0,i], pi[i,n])``."""
    C = hardy_constant(chain, i)
    a = min(chain.mass(0, i), chain.mass(i, chain.n))
    lo = 1.0 / (4.0 * C) if C > 0 else math.inf
    hi = 1.0 / (a * C) if C > 0 and a > 0 else math.inf
    return lo, hi

