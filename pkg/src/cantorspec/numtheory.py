"""Prime windows, progression moduli and exact separation of rational centers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateWindow, NoAdmissibleModulus


@dataclass(frozen=True)
class PrimeWindow:
    """Primes q with M < q < 2M, ascending."""

    M: float
    primes: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.primes)

    def __iter__(self):
        return iter(self.primes)

    def __contains__(self, q) -> bool:
        return q in self.primes


@dataclass(frozen=True)
class ProgressionModulus:
    B: int
    beta: float
    M: float


def is_prime(n: int) -> bool:
    """Deterministic trial division."""
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    for d in range(3, math.isqrt(n) + 1, 2):
        if n % d == 0:
            return False
    return True


def _sieve(limit: int) -> np.ndarray:
    """Boolean primality table for 0..limit."""
    flags = np.ones(max(limit + 1, 2), dtype=bool)
    flags[:2] = False
    for p in range(2, math.isqrt(limit) + 1):
        if flags[p]:
            flags[p * p :: p] = False
    return flags[: limit + 1]


def _int_ceil(x: float) -> int:
    # powers like 4**1.5 come back as 7.999999999 or 8.000000001
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


def _int_floor(x: float) -> int:
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return int(r)
    return math.floor(x)


def primes_in_range(M: float) -> PrimeWindow:
    """All primes strictly between M and 2M."""
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    hi = math.ceil(2 * M)
    flags = _sieve(hi)
    primes = tuple(int(q) for q in np.flatnonzero(flags) if M < q < 2 * M)
    return PrimeWindow(M=float(M), primes=primes)


def modulus_interval(M: float, beta: float) -> tuple[int, int]:
    """Integer range [ceil(M^(1+beta)), floor(2 M^(1+beta))]."""
    lo = M ** (1.0 + beta)
    return _int_ceil(lo), _int_floor(2.0 * lo)


def choose_modulus(M: float, beta: float, window: PrimeWindow,
                   odd_only: bool = False) -> ProgressionModulus:
    """Smallest admissible B in [M^(1+beta), 2 M^(1+beta)].

    For beta == 0 the modulus must belong to the window, otherwise it must be
    coprime to every window prime.  ``odd_only`` additionally rejects even B;
    the progression a/B with |a| <= (B-1)/2 is a full residue system only when
    B is odd, which the single-scale densities rely on.
    """
    lo, hi = modulus_interval(M, beta)
    for B in range(max(lo, 1), hi + 1):
        if odd_only and B % 2 == 0:
            continue
        if beta == 0:
            if B in window.primes:
                return ProgressionModulus(B=B, beta=beta, M=M)
        elif all(math.gcd(B, p) == 1 for p in window.primes):
            return ProgressionModulus(B=B, beta=beta, M=M)
    raise NoAdmissibleModulus(
        f"no admissible modulus in [{lo}, {hi}] for M={M}, beta={beta}")


def centers(window: PrimeWindow) -> list[Fraction]:
    """Distinct centers r/p, |r| <= (p-1)/2, sorted."""
    out = {Fraction(r, p) for p in window.primes for r in range(-(p - 1) // 2, (p - 1) // 2 + 1)}
    return sorted(out)


def min_center_separation(window: PrimeWindow) -> Fraction:
    """Exact minimum distance between distinct centers r/p of the window.

    Adjacent differences of the sorted center list suffice, so the cost is
    O(n log n) in the number of centers.
    """
    if len(window.primes) < 2:
        raise DegenerateWindow("need at least two primes in the window")
    pts = centers(window)
    return min(b - a for a, b in zip(pts, pts[1:]))
