from __future__ import annotations

import math
from fractions import Fraction
from itertools import combinations

import pytest
from hypothesis import assume, given, strategies as st

from cantorspec.errors import DegenerateWindow, NoAdmissibleModulus
from cantorspec.numtheory import (
    centers, choose_modulus, is_prime, min_center_separation, modulus_interval, primes_in_range,
)


def _trial(n):
    return n >= 2 and all(n % d for d in range(2, int(n ** 0.5) + 1))


def _pairwise_min(window):
    pts = [Fraction(r, p) for p in window.primes for r in range(-(p - 1) // 2, (p - 1) // 2 + 1)]
    pts = set(pts)
    return min(abs(a - b) for a, b in combinations(pts, 2))


@pytest.mark.parametrize("M,expected", [
    (10, (11, 13, 17, 19)),
    (1, ()),
    (16, (17, 19, 23, 29, 31)),
    (2, (3,)),
    (7.5, (11, 13)),
])
def test_primes_in_range_examples(M, expected):
    assert primes_in_range(M).primes == expected


def test_primes_in_range_rejects_small_M():
    with pytest.raises(ValueError):
        primes_in_range(0.5)


@given(st.floats(min_value=1, max_value=3000, allow_nan=False))
def test_window_is_exactly_the_primes_between(M):
    w = primes_in_range(M)
    brute = tuple(n for n in range(math.floor(M) + 1, math.ceil(2 * M)) if M < n < 2 * M and _trial(n))
    assert w.primes == brute
    assert list(w.primes) == sorted(w.primes)


@given(st.integers(min_value=-5, max_value=20000))
def test_is_prime_matches_trial_division(n):
    assert is_prime(n) == _trial(n)


@given(st.integers(min_value=2, max_value=5000))
def test_bertrand_window_nonempty(M):
    assert len(primes_in_range(M)) >= 1


@pytest.mark.parametrize("M,beta,odd_only,B", [
    (10, 0.0, False, 11),
    (4, 0.5, False, 8),
    (4, 0.5, True, 9),
    (16, -0.5, False, 4),
    (10, 0.5, True, 35),
    (10, -0.5, False, 4),
    (10, -0.5, True, 5),
])
def test_choose_modulus_examples(M, beta, odd_only, B):
    w = primes_in_range(M)
    assert choose_modulus(M, beta, w, odd_only=odd_only).B == B


def test_modulus_interval_exact_powers():
    # 4^1.5 is 8 up to rounding; the interval must start at 8, not 9
    assert modulus_interval(4, 0.5) == (8, 16)
    assert modulus_interval(10, 0.0) == (10, 20)


def test_no_admissible_modulus():
    # beta = 0 needs a window prime in [2, 4]; the M = 10 window has none
    w = primes_in_range(10)
    with pytest.raises(NoAdmissibleModulus):
        choose_modulus(2, 0.0, w)


@given(st.integers(min_value=2, max_value=400),
       st.sampled_from([-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75]),
       st.booleans())
def test_choose_modulus_invariants(M, beta, odd_only):
    w = primes_in_range(M)
    lo, hi = modulus_interval(M, beta)
    try:
        B = choose_modulus(M, beta, w, odd_only=odd_only).B
    except NoAdmissibleModulus:
        return
    assert lo <= B <= hi
    if beta == 0:
        assert B in w.primes
    else:
        assert all(math.gcd(B, p) == 1 for p in w.primes)
    if odd_only:
        assert B % 2 == 1
    # smallest admissible
    for c in range(lo, B):
        ok = (c in w.primes) if beta == 0 else all(math.gcd(c, p) == 1 for p in w.primes)
        assert not ok or (odd_only and c % 2 == 0)


def test_min_center_separation_M10():
    w = primes_in_range(10)
    sep = min_center_separation(w)
    # 9/19 - 8/17
    assert sep == Fraction(1, 323)
    assert sep == _pairwise_min(w)
    assert sep >= Fraction(1, 4 * 10 ** 2)


def test_min_center_separation_M16():
    w = primes_in_range(16)
    assert min_center_separation(w) == _pairwise_min(w) == Fraction(1, 899)


def test_single_prime_window_is_degenerate():
    with pytest.raises(DegenerateWindow):
        min_center_separation(primes_in_range(2))


@given(st.integers(min_value=6, max_value=30))
def test_separation_matches_pairwise_and_bound(M):
    w = primes_in_range(M)
    assume(len(w) >= 2)
    sep = min_center_separation(w)
    assert sep == _pairwise_min(w)
    # distinct centers r/p, r'/p' with p != p' differ by at least 1/(p p') > 1/(4 M^2)
    assert sep > Fraction(1, 4 * M * M)


def test_centers_are_distinct_and_sorted():
    c = centers(primes_in_range(10))
    assert c == sorted(set(c))
    assert c.count(Fraction(0)) == 1
