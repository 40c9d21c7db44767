import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bdcutoff import families
from bdcutoff.chain import quantile_state
from bdcutoff.errors import BDError
from bdcutoff.hitting import (boundary_sum_difference, cutoff_hit_stats, hit_bounds,
                              hit_moments, mean_exit_interval, mean_hit, mean_hit_right,
                              moments_via_spectrum, sample_hits, simulate_hit,
                              tail_lower_bound, var_hit)
from bdcutoff.families import random_chain
from oracles import absorbing_moments, biased_small, chains, rel_close, two_state


def test_single_step_two_state():
    c = two_state()
    assert mean_hit_right(c, 0) == pytest.approx(1.0, rel=1e-15)
    assert var_hit(c, 0, 1, "continuous") == pytest.approx(1.0, rel=1e-15)
    assert var_hit(c, 0, 1, "discrete") == pytest.approx(0.0, abs=1e-15)


def test_binomial_n2():
    c = families.metropolis_binomial()(2)
    assert mean_hit_right(c, 0) == pytest.approx(2.0, rel=1e-14)
    m = moments_via_spectrum(c, 1)
    assert (m.mean, m.var_continuous, m.var_discrete) == pytest.approx((2, 4, 2), rel=1e-14)


def test_two_state_spectral_moments():
    m = moments_via_spectrum(two_state(), 1)
    assert (m.mean, m.var_continuous, m.var_discrete) == pytest.approx((1, 1, 0), abs=1e-15)


def test_biased_ratio_closed_form():
    p, q = 0.7, 0.3
    c = families.biased_rw(p)(40)
    rho = p / q
    for i in range(40):
        ratio = (rho - rho ** (-i)) / (rho - 1)
        assert mean_hit_right(c, i) == pytest.approx(ratio / p, rel=1e-12)


def test_biased_small_mean():
    assert mean_hit(biased_small(), 0, 2) == pytest.approx(15 / 4, rel=1e-14)


def test_mean_hit_zero_and_errors():
    c = biased_small()
    assert mean_hit(c, 1, 1) == 0.0
    with pytest.raises(BDError):
        mean_hit_right(c, 2)


@given(chains(max_n=40), st.data())
def test_additivity(c, data):
    i, j, k = sorted(data.draw(st.lists(st.integers(0, c.n), min_size=3, max_size=3)))
    assert rel_close(mean_hit(c, i, k), mean_hit(c, i, j) + mean_hit(c, j, k), 1e-12)
    assert rel_close(mean_hit(c, k, i), mean_hit(c, k, j) + mean_hit(c, j, i), 1e-12)


@given(chains(max_n=40), st.data())
def test_against_absorbing_oracle(c, data):
    b = data.draw(st.integers(0, c.n))
    for a, (m, vd, vc) in absorbing_moments(c, b).items():
        h = hit_moments(c, a, b)
        assert rel_close(h.mean, m, 1e-9)
        assert rel_close(h.var_discrete, vd, 1e-9)
        assert rel_close(h.var_continuous, vc, 1e-9)


@given(chains(max_n=40))
def test_spectral_route(c):
    for i in range(1, c.n + 1):
        h = hit_moments(c, 0, i)
        s = moments_via_spectrum(c, i)
        assert rel_close(h.mean, s.mean, 1e-9)
        assert rel_close(h.var_continuous, s.var_continuous, 1e-9)
        assert rel_close(h.var_discrete, s.var_discrete, 1e-9)


@given(chains(max_n=30), st.data())
def test_moment_orderings(c, data):
    a = data.draw(st.integers(0, c.n))
    b = data.draw(st.integers(0, c.n))
    h = hit_moments(c, a, b)
    assert h.var_continuous >= h.var_discrete >= 0
    if a == 0:
        assert h.var_continuous >= h.mean * (1 - 1e-12)


def test_collapsed_ehrenfest_spectral_route():
    c = families.collapsed_ehrenfest()(16)
    h = hit_moments(c, 0, 8)
    s = moments_via_spectrum(c, 8)
    assert h.mean == pytest.approx(s.mean, rel=1e-10)
    assert h.var_continuous == pytest.approx(s.var_continuous, rel=1e-10)
    assert h.var_discrete == pytest.approx(s.var_discrete, rel=1e-10)


def test_exit_simple_walk():
    c = families.lazy_srw()(2)
    assert mean_exit_interval(c, 0, 1, 2) == pytest.approx(1.0, rel=1e-12)


def _exit_oracle(c, i, j, k):
    idx = list(range(i + 1, k))
    A = np.eye(len(idx)) - c.matrix()[np.ix_(idx, idx)]
    return np.linalg.solve(A, np.ones(len(idx)))[j - i - 1]


@pytest.mark.parametrize("i, j, k", [(0, 3, 9), (2, 3, 4), (1, 5, 15), (0, 1, 20)])
def test_exit_gamblers_ruin(i, j, k):
    # unit-rate walk with all mass on moves: exit time is (j - i)(k - j)
    n = 20
    P = np.full(n + 1, 0.5)
    Q = np.full(n + 1, 0.5)
    P[n] = Q[0] = 0
    from bdcutoff.chain import Chain
    c = Chain(P, Q)
    assert mean_exit_interval(c, i, j, k) == pytest.approx((j - i) * (k - j), rel=1e-12)


@given(chains(max_n=30), st.data())
def test_exit_against_oracle(c, data):
    if c.n < 2:
        return
    i = data.draw(st.integers(0, c.n - 2))
    k = data.draw(st.integers(i + 2, c.n))
    j = data.draw(st.integers(i + 1, k - 1))
    e = mean_exit_interval(c, i, j, k)
    assert rel_close(e, _exit_oracle(c, i, j, k), 1e-9)
    assert e <= min(mean_hit(c, j, i), mean_hit(c, j, k)) * (1 + 1e-12)


def test_exit_fast_middle_state():
    from bdcutoff.chain import Chain
    c = Chain([0.01, 0.49, 0.0], [0.0, 0.5, 0.01])
    e = mean_exit_interval(c, 0, 1, 2)
    assert e == pytest.approx(1 / 0.99, rel=1e-12)
    assert e == pytest.approx(_exit_oracle(c, 0, 1, 2), rel=1e-10)


def test_exit_ordering_error():
    with pytest.raises(BDError):
        mean_exit_interval(biased_small(), 1, 1, 2)


@given(chains(max_n=30), st.data())
def test_hit_bounds_bracket(c, data):
    j = data.draw(st.integers(1, c.n))
    i = data.draw(st.integers(0, j - 1))
    b = hit_bounds(c, i, j)
    h = hit_moments(c, i, j)
    assert b.var_lower <= h.var_continuous * (1 + 1e-10)
    assert h.var_continuous <= b.var_upper * (1 + 1e-10)
    assert h.mean <= b.mean_upper * (1 + 1e-10)
    assert b.var_lower_discrete <= h.var_discrete * (1 + 1e-10) + 1e-12


def test_hit_bounds_examples():
    b = hit_bounds(two_state(), 0, 1)
    assert b.var_lower <= 1 <= b.var_upper
    c = families.collapsed_ehrenfest()(32)
    b = hit_bounds(c, 0, 16)
    v = var_hit(c, 0, 16)
    assert b.var_lower <= v <= b.var_upper
    lazy = random_chain(np.random.default_rng(4), 20, min_holding=0.4)
    b = hit_bounds(lazy, 0, 10)
    assert b.var_lower_discrete <= var_hit(lazy, 0, 10, "discrete")


def test_tail_bound():
    assert tail_lower_bound(0.25) == pytest.approx(0.5294117647058824, rel=1e-12)
    assert tail_lower_bound(1e-6) >= 0.998
    assert math.exp(-0.25) >= tail_lower_bound(0.25)
    for a in (0, 1, -0.5):
        with pytest.raises(BDError):
            tail_lower_bound(a)


def test_cutoff_stats_symmetric():
    c = families.metropolis_binomial()(40)
    h = cutoff_hit_stats(c, 20)
    assert h.mean_left == pytest.approx(h.mean_right, rel=1e-12)
    assert h.s == pytest.approx(2 * h.theta, rel=1e-12)


def test_cutoff_stats_biased_growth():
    p = 0.7
    ratios = []
    for n in (100, 200, 400):
        c = families.biased_rw(p)(n)
        ratios.append(cutoff_hit_stats(c, n).theta / (n / (2 * p - 1)))
    assert all(0.95 < r < 1.0 for r in ratios)
    assert ratios == sorted(ratios)


@given(chains(max_n=30))
def test_cutoff_stats_orderings(c):
    for M in range(c.n + 1):
        h = cutoff_hit_stats(c, M)
        assert h.s >= h.theta >= 0 and h.b2 >= h.alpha2 >= 0 and h.c2 >= h.beta2 >= 0


@given(chains(max_n=40))
def test_boundary_sum_monotonicity(c):
    M = quantile_state(c, 0.5)
    s = [cutoff_hit_stats(c, k).s for k in range(M + 1)]
    for i in range(M + 1):
        for j in range(i, M + 1):
            d = boundary_sum_difference(c, i, j)
            assert d >= -1e-12 * max(s)
            assert abs((s[i] - s[j]) - d) <= 1e-10 * max(s[i], 1.0)


def test_simulation_deterministic_and_exact_cases():
    c = two_state()
    x = sample_hits(c, 0, 1, "discrete", 100, seed=3)
    assert np.all(x == 1)
    a = sample_hits(families.biased_rw(0.7)(10), 0, 10, "continuous", 5000, seed=11)
    b = sample_hits(families.biased_rw(0.7)(10), 0, 10, "continuous", 5000, seed=11)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("clock", ["discrete", "continuous"])
def test_simulation_matches_closed_form(clock):
    c = families.metropolis_binomial()(2)
    N = 100_000
    m, v = simulate_hit(c, 0, 1, clock, N, seed=1)
    assert abs(m - 2.0) <= 3 * math.sqrt(v / N)
    c = families.biased_rw(0.7)(10)
    m, v = simulate_hit(c, 0, 10, clock, 20_000, seed=2)
    assert abs(m - mean_hit(c, 0, 10)) <= 3 * math.sqrt(v / 20_000)


def test_simulation_argument_errors():
    with pytest.raises(BDError):
        sample_hits(two_state(), 0, 1, "discrete", 0, seed=0)
    with pytest.raises(BDError):
        sample_hits(two_state(), 0, 4, "discrete", 10, seed=0)
    with pytest.raises(BDError):
        sample_hits(two_state(), 0, 1, "weekly", 10, seed=0)


def test_overflowing_passages_are_infinite():
    c = families.exp_metropolis(1.0, 2.0)(2048)
    from bdcutoff.chain import flip
    f = flip(c)
    assert math.isfinite(mean_hit(c, 0, 1024))
    assert mean_hit(f, 0, 2048) == math.inf
