"""Smooth compactly supported bumps and their Fourier transforms.

The plateau bump is F(x) = c * exp(-1/(1 - 4x^2)) on |x| < 1/2, with c fixed by
unit integral.  The split bump F0 places two half-weight copies of F, shrunk by
a factor 4, at +-1/4.  Transforms are computed by composite Gauss-Legendre
quadrature; for large frequencies the integrand is first integrated by parts
so the rounding floor scales like |xi|^-n instead of staying at machine epsilon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial

from .errors import QuadratureNotConverged

N_MAX = 12
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QuadratureSpec:
    nodes_per_panel: int = 32
    panels: int = 8
    target_rel_error: float = 1e-12
    max_doublings: int = 6


DEFAULT_QUADRATURE = QuadratureSpec()


@lru_cache(maxsize=None)
def _gl_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


def composite_nodes(breaks: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on every panel [breaks[i], breaks[i+1]]."""
    xg, wg = _gl_rule(n)
    a = breaks[:-1]
    b = breaks[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = (half[:, None] * xg[None, :] + mid[:, None]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    return x, w


def integrate(f, a: float, b: float, spec: QuadratureSpec = DEFAULT_QUADRATURE,
              breakpoints=None, abs_floor: float = 0.0):
    """Composite Gauss-Legendre integral of a vectorized f over [a, b].

    Panels are doubled until two successive estimates agree to
    target_rel_error (relative, with ``abs_floor`` as an absolute escape).
    ``breakpoints`` are forced panel edges, e.g. kinks of the integrand.
    """
    if b <= a:
        return 0.0
    edges = [a, b]
    if breakpoints is not None:
        edges += [t for t in breakpoints if a < t < b]
    edges = np.unique(np.asarray(edges, dtype=float))
    panels = max(spec.panels, 1)
    prev = None
    for _ in range(spec.max_doublings + 1):
        br = np.unique(np.concatenate(
            [np.linspace(lo, hi, panels + 1) for lo, hi in zip(edges[:-1], edges[1:])]))
        x, w = composite_nodes(br, spec.nodes_per_panel)
        cur = np.sum(w * f(x))
        if prev is not None:
            tol = spec.target_rel_error * abs(cur) + abs_floor
            if abs(cur - prev) <= tol:
                return cur
        prev = cur
        panels *= 2
    raise QuadratureNotConverged(
        f"integral over [{a}, {b}] did not settle; last change {abs(cur - prev):.3e}")


@lru_cache(maxsize=None)
def _derivative_polys(a: float, nmax: int) -> tuple[Polynomial, ...]:
    """Q_n with d^n/dx^n exp(-a/u) = exp(-a/u) Q_n(x) / u^(2n), u = 1 - 4x^2."""
    u = Polynomial([1.0, 0.0, -4.0])
    du = u.deriv()
    out = [Polynomial([1.0])]
    for n in range(nmax):
        q = out[-1]
        out.append(a * du * q + u * u * q.deriv() - 2 * n * u * du * q)
    return tuple(out)


def _graded_breaks(panels: int, grade: int = 14) -> np.ndarray:
    """Uniform panels on [0, 1/2] with geometric refinement toward x = 1/2."""
    b = np.linspace(0.0, 0.5, panels + 1)
    last = b[-2]
    extra = 0.5 - (0.5 - last) * 2.0 ** -np.arange(1, grade + 1)
    return np.unique(np.concatenate([b, extra]))


class _ExpBump:
    """amp * exp(-a / (1 - 4x^2)) on |x| < 1/2; even, compactly supported."""

    def __init__(self, a: float, amp: float):
        self.a = float(a)
        self.amp = float(amp)
        self.polys = _derivative_polys(self.a, N_MAX + 1)
        self._l1 = None

    def derivative(self, x, n: int = 0):
        x = np.asarray(x, dtype=float)
        u = 1.0 - 4.0 * x * x
        out = np.zeros_like(x)
        m = u > 0
        if np.any(m):
            um = u[m]
            out[m] = self.amp * np.exp(-self.a / um - 2 * n * np.log(um)) * self.polys[n](x[m])
        return out

    def value(self, x):
        return self.derivative(x, 0)

    def derivative_l1(self) -> list[float]:
        """||d^n f||_1 for n = 0..N_MAX (used to pick the integration-by-parts order)."""
        if self._l1 is None:
            x, w = composite_nodes(_graded_breaks(256), 32)
            self._l1 = [float(2 * np.sum(w * np.abs(self.derivative(x, n))))
                        for n in range(N_MAX + 1)]
        return self._l1

    @staticmethod
    def ibp_order(xi: float) -> int:
        if xi < 4:
            return 0
        if xi < 16:
            return 2
        return 4

    def _raw(self, xis: np.ndarray, n: int, panels: int) -> np.ndarray:
        x, w = composite_nodes(_graded_breaks(panels), 32)
        d = self.derivative(x, n) * w
        out = np.empty(len(xis))
        # chunk over frequencies to bound the size of the cosine matrix
        step = max(1, 4_000_000 // max(len(x), 1))
        for i in range(0, len(xis), step):
            xs = xis[i:i + step]
            out[i:i + step] = 2.0 * (np.cos(2 * np.pi * np.outer(xs, x)) @ d)
        if n:
            out *= (-1) ** (n // 2) / (2 * np.pi * xis) ** n
        return out

    def transform_many(self, xi, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
        """Real transform at an array of frequencies (the function is even)."""
        xi = np.abs(np.asarray(xi, dtype=float))
        flat = xi.ravel()
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = np.empty(len(uniq))
        l1 = self.derivative_l1()
        # bucket by octave so panel counts track the oscillation rate
        octave = np.floor(np.log2(np.maximum(uniq, 1.0))).astype(int)
        for j in np.unique(octave):
            sel = np.flatnonzero(octave == j)
            for n in sorted({self.ibp_order(v) for v in uniq[sel]}):
                sub = sel[[self.ibp_order(v) == n for v in uniq[sel]]]
                xs = uniq[sub]
                panels = self._converged_panels(xs, n, spec, l1[n])
                vals[sub] = self._raw(xs, n, panels)
        return vals[inv].reshape(xi.shape)

    def _converged_panels(self, xs, n, spec, l1n) -> int:
        probe = np.unique(np.array([xs.min(), xs.max()]))
        panels = max(spec.panels, int(math.ceil(probe.max() / 2)) + 8)
        prev = self._raw(probe, n, panels)
        for _ in range(spec.max_doublings):
            cur = self._raw(probe, n, 2 * panels)
            floor = 64 * _EPS * l1n / np.where(n > 0, (2 * np.pi * probe) ** n, 1.0)
            if np.all(np.abs(cur - prev) <= spec.target_rel_error * np.abs(cur) + floor):
                return panels
            prev = cur
            panels *= 2
        raise QuadratureNotConverged(
            f"transform did not converge near xi={probe.max():.4g} (order {n})")


@lru_cache(maxsize=None)
def _plateau_core() -> _ExpBump:
    raw = _ExpBump(1.0, 1.0)
    x, w = composite_nodes(_graded_breaks(64), 32)
    c = 1.0 / (2.0 * float(np.sum(w * raw.value(x))))
    return _ExpBump(1.0, c)


@lru_cache(maxsize=None)
def _squared_core() -> _ExpBump:
    c = _plateau_core().amp
    return _ExpBump(2.0, c * c)


@dataclass(frozen=True)
class BumpProfile:
    kind: str  # "F" (plateau bump) or "F0" (split bump)
    normalization: float
    derivative_bounds: tuple[float, ...]
    plateau_constant: float
    plateau_floor: float
    support: tuple[tuple[float, float], ...]
    squared_at_zero: float = field(default=0.0)


def eval_profile(profile: BumpProfile, x):
    """Profile value; exactly zero off the declared support."""
    core = _plateau_core()
    scalar = np.isscalar(x)
    x = np.asarray(x, dtype=float)
    if profile.kind == "F":
        out = core.value(x)
    else:
        out = 2.0 * core.value(4.0 * (x - 0.25)) + 2.0 * core.value(4.0 * (x + 0.25))
    return float(out) if scalar else out


def eval_derivative(profile: BumpProfile, x, n: int):
    core = _plateau_core()
    x = np.asarray(x, dtype=float)
    if profile.kind == "F":
        return core.derivative(x, n)
    s = 2.0 * 4.0 ** n
    return s * (core.derivative(4.0 * (x - 0.25), n) + core.derivative(4.0 * (x + 0.25), n))


def transform_array(profile: BumpProfile, xi, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Real-valued transform at many frequencies (both profiles are even)."""
    core = _plateau_core()
    xi = np.asarray(xi, dtype=float)
    if profile.kind == "F":
        return core.transform_many(xi, spec)
    # F0(x) = 2F(4(x-1/4)) + 2F(4(x+1/4))  =>  F0^(xi) = F^(xi/4) cos(pi xi / 2)
    return core.transform_many(xi / 4.0, spec) * np.cos(0.5 * np.pi * xi)


@lru_cache(maxsize=65536)
def _transform_cached(kind: str, xi: float, spec: QuadratureSpec) -> float:
    prof = plateau_bump() if kind == "F" else split_bump()
    return float(transform_array(prof, np.array([xi]), spec)[0])


def transform(profile: BumpProfile, xi: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> complex:
    """Fourier transform int f(x) exp(-2 pi i x xi) dx; memoized per frequency."""
    return complex(_transform_cached(profile.kind, abs(float(xi)), spec), 0.0)


def squared_transform_array(xi, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Transform of F^2 (not normalized)."""
    return _squared_core().transform_many(np.asarray(xi, dtype=float), spec)


def squared_transform(xi: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    return float(squared_transform_array(np.array([float(xi)]), spec)[0])


_L1_PAD = 1.001


def _core(squared: bool) -> _ExpBump:
    return _squared_core() if squared else _plateau_core()


@lru_cache(maxsize=None)
def _decay_constants(squared: bool) -> tuple[float, ...]:
    l1 = _core(squared).derivative_l1()
    return tuple(_L1_PAD * v / (2 * math.pi) ** n for n, v in enumerate(l1))


def decay_constants(squared: bool = False) -> list[float]:
    """c_N with |F^(xi)| <= c_N |xi|^-N, from integrating by parts N times.

    c_N = ||F^(N)||_1 / (2 pi)^N, padded by 0.1% for the quadrature error of
    the l1 norms.  These are much sharper than the sup-norm constants C_N.
    With ``squared`` the constants are those of F^2.
    """
    return list(_decay_constants(squared))


def decay_majorant(xi, squared: bool = False) -> np.ndarray:
    """Nonincreasing bound on |F^| (or |(F^2)^|): min_N c_N |xi|^-N, N >= 0."""
    xi = np.abs(np.asarray(xi, dtype=float))
    c = decay_constants(squared)
    out = np.full_like(xi, c[0])
    pos = xi > 0
    for n in range(1, len(c)):
        out[pos] = np.minimum(out[pos], c[n] * xi[pos] ** -n)
    return out


def decay_tail_integral(a: float, squared: bool = False) -> float:
    """Bound on int_a^inf |F^(xi)| dxi for a > 0."""
    if a <= 0:
        return math.inf
    c = decay_constants(squared)
    return min(c[n] * a ** (1 - n) / (n - 1) for n in range(2, len(c)))


def lattice_tail(step: float, J: int, squared: bool = False) -> float:
    """Bound on sum_{j > J} |F^(j * step)| (one sign)."""
    if J < 1:
        return decay_constants(squared)[0] + decay_tail_integral(step, squared) / step
    return decay_tail_integral(J * step, squared) / step


def _alias_bound(xi: np.ndarray, L: float, n: int, squared: bool = False) -> np.ndarray:
    """Bound on sum_{m != 0} |(xi + mL)/xi|^n |F^(xi + mL)| for 0 <= xi < L/2."""
    out = np.zeros_like(xi)
    safe = np.where(xi > 0, xi, 1.0)
    for m in range(1, 9):
        for sgn in (1, -1):
            arg = np.abs(xi + sgn * m * L)
            fac = (arg / safe) ** n if n else 1.0
            out += fac * decay_majorant(arg, squared)
    # remainder m > 8: |xi + mL| <= (m + 1) L and >= (m - 1/2) L, majorant <= c_12 x^-12
    c = decay_constants(squared)
    fac = safe ** -n if n else 1.0
    out += 2 * c[-1] * fac * 2.0 ** n * L ** (n - 12) * 7.5 ** (n - 11) / (11 - n)
    return out


def transform_progression(step: float, count: int, spec: QuadratureSpec = DEFAULT_QUADRATURE,
                          min_fft: int = 0, squared: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """F^(j * step) for j = 0..count-1 with a per-value absolute error bound.

    Long progressions use the trapezoid rule on a uniform grid of spacing h,
    which for a compactly supported smooth integrand is exact up to aliasing
    of F^ at distance 1/h; with h = step * (grid size)^-1 one FFT yields all
    values.  Frequencies >= 16 use the fourth derivative (integration by
    parts) so their rounding floor decays like xi^-4.  Progressions shorter
    than ``min_fft`` go through Gauss-Legendre quadrature instead, whose
    error estimate comes from panel doubling rather than a certificate.
    """
    xi = np.arange(count) * step
    core = _core(squared)
    l1 = core.derivative_l1()
    if count < min_fft:
        vals = core.transform_many(xi, spec)
        orders = np.array([core.ibp_order(v) for v in xi])
        floor = 64 * _EPS * np.array([l1[n] for n in orders])
        big = orders > 0
        floor[big] /= (2 * np.pi * xi[big]) ** orders[big]
        return vals, spec.target_rel_error * np.abs(vals) + floor
    xmax = xi[-1]
    L = 2.0 * xmax + 2000.0
    N = int(2 ** math.ceil(math.log2(L / step)))
    if N > max(8 * count, 1 << 16):
        return _trapezoid_direct(xi, L, core, l1, squared)
    h = 1.0 / (N * step)
    # grid x_m = m h for m in (-N/2, N/2]; the integrand vanishes for |x| >= 1/2
    m = np.arange(N)
    x = np.where(m < N // 2, m, m - N) * h
    inside = np.abs(x) < 0.5
    out = np.empty(count)
    err = np.empty(count)
    logN = math.log2(N)
    for n, sel in ((0, xi < 16), (4, xi >= 16)):
        if not np.any(sel):
            continue
        samples = np.zeros(N)
        samples[inside] = core.derivative(x[inside], n)
        spec_vals = h * np.fft.rfft(samples)[:count].real
        xs = xi[sel]
        if n:
            v = spec_vals[sel] / (2 * np.pi * xs) ** n
            scale = (2 * np.pi * xs) ** -n
        else:
            v = spec_vals[sel]
            scale = np.ones_like(xs)
        out[sel] = v
        round_err = 8 * _EPS * logN * l1[n] * scale
        err[sel] = _alias_bound(xs, 1.0 / h, n, squared) + round_err
    return out, err


def _trapezoid_direct(xi: np.ndarray, L: float, core, l1, squared: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid sums h sum_m F(mh) cos(2 pi xi m h) with h = 1/L, evaluated directly.

    Used when the progression is too fine for an FFT grid; the aliasing
    error is the same as on the FFT path.
    """
    h = 1.0 / L
    m = np.arange(1, int(math.ceil(0.5 / h)))
    x = m * h
    out = np.empty(len(xi))
    err = np.empty(len(xi))
    chunk = max(1, int(2e7 // len(x)))
    for n, sel in ((0, xi < 16), (4, xi >= 16)):
        idx = np.flatnonzero(sel)
        if not len(idx):
            continue
        f = core.derivative(x, n)
        f0 = float(core.derivative(np.zeros(1), n)[0])
        for c0 in range(0, len(idx), chunk):
            part = idx[c0:c0 + chunk]
            cs = np.cos(2 * np.pi * np.outer(xi[part], x))
            out[part] = h * (f0 + 2.0 * (cs @ f))
        xs = xi[idx]
        scale = (2 * np.pi * np.where(xs > 0, xs, 1.0)) ** -n if n else np.ones_like(xs)
        out[idx] *= scale
        # summation over len(x) terms plus argument error of cos(2 pi xi x)
        round_err = 1.1 * (len(x) + 4 + np.pi * xs) * _EPS * l1[n] * scale
        err[idx] = _alias_bound(xs, L, n, squared) + round_err
    return out, err


def sup_scan(profile: BumpProfile, n: int, points: int = 200_001) -> float:
    """Max of |d^n profile| over a uniform sample of its support."""
    x = np.linspace(-0.5, 0.5, points)
    return float(np.max(np.abs(eval_derivative(profile, x, n))))


def derivative_sup_bounds(profile: BumpProfile, N_max: int = N_MAX, points: int = 200_001) -> list[float]:
    """C_N = max_{i<=N} sup |d^i profile|, certified by a Lipschitz pad.

    On a grid of spacing h, sup |f| <= max_grid |f| + (h/2) sup |f'|; the
    unknown sup |f'| is replaced by twice its own grid maximum.
    """
    if N_max > N_MAX:
        raise ValueError(f"N_max must be <= {N_MAX}")
    h = 1.0 / (points - 1)
    grid = [sup_scan(profile, n, points) for n in range(N_max + 2)]
    raw = [grid[n] + h * grid[n + 1] for n in range(N_max + 1)]
    return list(np.maximum.accumulate(raw))


def _plateau_constant(spec: QuadratureSpec = DEFAULT_QUADRATURE) -> tuple[float, float, float]:
    """Largest grid-certified C with F2^(xi) >= c0 = F2^(0)/2 on |xi| <= C."""
    f0 = squared_transform(0.0, spec)
    c0 = 0.5 * f0
    grid = np.linspace(0.0, 4.0, 4001)
    vals = squared_transform_array(grid, spec)
    # F2^ is Lipschitz with constant 2 pi int |x| F^2 <= pi F2^(0); pad by that
    lip = math.pi * f0
    ok = vals - lip * (grid[1] - grid[0]) >= c0
    bad = np.flatnonzero(~ok)
    idx = bad[0] - 1 if len(bad) else len(grid) - 1
    return float(grid[max(idx, 0)]), float(c0), float(f0)


@lru_cache(maxsize=None)
def plateau_bump() -> BumpProfile:
    core = _plateau_core()
    proto = BumpProfile("F", core.amp, (), 0.0, 0.0, ((-0.5, 0.5),))
    bounds = tuple(derivative_sup_bounds(proto))
    cf, c0, f0 = _plateau_constant()
    return BumpProfile("F", core.amp, bounds, cf, c0, ((-0.5, 0.5),), f0)


@lru_cache(maxsize=None)
def split_bump() -> BumpProfile:
    core = _plateau_core()
    proto = BumpProfile("F0", core.amp, (), 0.0, 0.0, ((-0.375, -0.125), (0.125, 0.375)))
    bounds = tuple(derivative_sup_bounds(proto))
    base = plateau_bump()
    return BumpProfile("F0", core.amp, bounds, base.plateau_constant, base.plateau_floor,
                       ((-0.375, -0.125), (0.125, 0.375)), base.squared_at_zero)
