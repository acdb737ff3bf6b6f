"""Scale schedules, single-scale densities g_k and finite-stage measures.

At scale k with K = M^(1+alpha) the density g_k is a normalized sum of bumps
F(K(px - r)) centered at r/p for primes p in (M, 2M); at odd scales a second
family F(K'(Bx - a)), K' = M^(1+alpha-beta), sits on the progression a/B.
The stage measure mu_l has density F0 * g_1 * ... * g_l.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import bumps
from .bumps import DEFAULT_QUADRATURE, QuadratureSpec
from .errors import ConfigError, StrictModeInfeasible, TruncationBudgetExceeded
from .numtheory import PrimeWindow, ProgressionModulus, choose_modulus, primes_in_range
from .spectrum import SparseSpectrum, TailLedger, convolve

_LOG_MAX_FLOAT = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class ConstructionParams:
    alpha: float
    beta: float
    q_exponent: float = 2.0
    D: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not -1 < self.beta < 1:
            raise ConfigError(f"beta must satisfy -1 < beta < 1, got {self.beta}")
        if not self.q_exponent >= 1:
            raise ConfigError(f"q_exponent must be >= 1, got {self.q_exponent}")
        if not self.D > 1:
            raise ConfigError(f"D must be > 1, got {self.D}")


@dataclass(frozen=True)
class ScheduleConfig:
    mode: str = "relaxed"
    M_list: tuple[float, ...] = ()
    M0: float | None = None
    K: int | None = None

    def __post_init__(self):
        if self.mode not in ("relaxed", "strict"):
            raise ConfigError(f"mode must be 'relaxed' or 'strict', got {self.mode!r}")
        ms = tuple(float(m) for m in self.M_list)
        object.__setattr__(self, "M_list", ms)
        if self.mode == "relaxed":
            if not ms:
                raise ConfigError("relaxed mode needs a non-empty M_list")
            if any(b <= a for a, b in zip(ms, ms[1:])):
                raise ConfigError("M_list must be strictly increasing")
            if ms[0] < 2:
                raise ConfigError("every M_k must be >= 2")
            if self.K is not None and self.K != len(ms):
                raise ConfigError(f"K={self.K} does not match len(M_list)={len(ms)}")
        else:
            if self.M0 is None:
                raise ConfigError("strict mode needs the seed M0")
            if self.K is None or self.K < 1:
                raise ConfigError("strict mode needs K >= 1")

    @property
    def n_scales(self) -> int:
        return len(self.M_list) if self.mode == "relaxed" else int(self.K)


@dataclass(frozen=True)
class ScaleParams:
    k: int
    M: float
    window: PrimeWindow
    modulus: ProgressionModulus | None
    N_k: int
    N_beta: int
    epsilon: float
    condition_report: dict = field(default_factory=dict, compare=False)

    @property
    def odd(self) -> bool:
        return self.k % 2 == 1

    @property
    def B(self) -> int | None:
        return None if self.modulus is None else self.modulus.B


def n_beta(beta: float) -> int:
    """N(beta) = 99 max(1, 1/(1+beta)), rounded up."""
    v = Fraction(99) * max(Fraction(1), 1 / (1 + Fraction(beta)))
    return math.ceil(v)


def default_epsilon(alpha: float, beta: float, k: int) -> tuple[float, int]:
    """Minimal admissible pair: N_k = max(N(beta), k), eps_k = (2+alpha)/N_k."""
    N_k = max(n_beta(beta), k)
    return (2.0 + alpha) / N_k, N_k


def _log_mcond4_rhs(alpha: float, nb: int, M_prev: float) -> float:
    """log of 4^(N+1) N M_prev^((2+alpha)(N+1))."""
    return (nb + 1) * math.log(4) + math.log(nb) + (2 + alpha) * (nb + 1) * math.log(M_prev)


def _conditions(params: ConstructionParams, k: int, M: float, M_prev: float | None,
                window: PrimeWindow, N_k: int, nb: int, M0: float | None) -> dict:
    a, b, D = params.alpha, params.beta, params.D
    rep: dict = {}
    rep["prime_density"] = bool(len(window) >= M / (D * math.log(M)))
    rep["prime_count"] = len(window)
    rep["prime_density_floor"] = M / (D * math.log(M))
    if M0 is not None:
        rep["seed"] = bool(min(M0, M0 ** (1 + b), M0 ** a) >= 100
                           and min(M0, M0 ** (1 - b)) >= math.log(M0))
    else:
        rep["seed"] = None
    if M_prev is None:
        rep["Mcond4"] = None
        rep["Mcond1"] = None
        rep["Mcond2"] = None
    else:
        # compare logarithms; the right-hand sides overflow floats
        lhs = math.log(math.log(M)) if M > 1 else -math.inf
        rep["Mcond4"] = bool(lhs >= _log_mcond4_rhs(a, nb, M_prev))
        log_rhs1 = (nb + 1) * math.log(4) + (2 + a) * (nb + 1) * math.log(M_prev) + math.log1p(M_prev ** b)
        rep["Mcond1"] = bool(math.log(M) >= log_rhs1)
        rep["Mcond2"] = bool(lhs >= math.log(nb) + 3 * (2 + a) * math.log(M_prev))
    # Mcond5 needs C_{N_k+k} with N_k + k >= 100; C_N is nondecreasing, so the
    # certified C_12 gives a lower bound on the right side.
    prof = bumps.plateau_bump()
    split = bumps.split_bump()
    n_idx = N_k + k
    c_lo = prof.derivative_bounds[-1]
    ct_lo = split.derivative_bounds[-1]
    log_rhs5 = (2 * math.log(1 / (1 + b) + 1) + math.log(1 + 2 * D)
                + math.log(1 + ct_lo + 8.0 ** min(n_idx + 2, 300) * c_lo * D))
    lhs5 = math.log(0.5 * min(M, M ** (1 + b)))
    rep["Mcond5"] = bool(lhs5 > 0 and math.log(lhs5) >= log_rhs5)
    rep["Mcond5_note"] = (f"right side uses C_{n_idx} >= C_12 = {c_lo:.4g}; "
                          "a lower bound, so 'false' is certain")
    return rep


def _make_scale(params: ConstructionParams, k: int, M: float, M_prev, M0) -> ScaleParams:
    window = primes_in_range(M)
    if not len(window):
        raise ConfigError(f"empty prime window at k={k}, M={M}")
    modulus = choose_modulus(M, params.beta, window, odd_only=True) if k % 2 == 1 else None
    eps, N_k = default_epsilon(params.alpha, params.beta, k)
    nb = n_beta(params.beta)
    rep = _conditions(params, k, M, M_prev, window, N_k, nb, M0)
    return ScaleParams(k, float(M), window, modulus, N_k, nb, eps, rep)


def build_schedule(params: ConstructionParams, config: ScheduleConfig) -> list[ScaleParams]:
    """Per-scale parameters with every growth condition evaluated and recorded.

    Relaxed mode takes M_list as given.  Strict mode uses the seed M0 as the
    first scale and must then satisfy the growth condition between scales,
    which is impossible in floating point beyond the first scale.
    """
    if config.mode == "relaxed":
        out = []
        prev = config.M0
        for k, M in enumerate(config.M_list, start=1):
            out.append(_make_scale(params, k, M, prev, config.M0))
            prev = M
        return out

    if config.K > 2:
        raise StrictModeInfeasible("strict mode supports K <= 2 (growth condition Mcond4)")
    M0 = float(config.M0)
    a, b = params.alpha, params.beta
    if not min(M0, M0 ** (1 + b), M0 ** a) >= 100:
        raise StrictModeInfeasible("seed condition min(M0, M0^(1+beta), M0^alpha) >= 100 fails")
    if not min(M0, M0 ** (1 - b)) >= math.log(M0):
        raise StrictModeInfeasible("seed condition min(M0, M0^(1-beta)) >= log(M0) fails")
    out = [_make_scale(params, 1, M0, None, M0)]
    if config.K == 2:
        nb = n_beta(b)
        log_log_needed = _log_mcond4_rhs(a, nb, M0)
        # log M_2 must exceed exp(log_log_needed); M_2 itself must be a float
        if log_log_needed >= math.log(_LOG_MAX_FLOAT):
            raise StrictModeInfeasible(
                f"Mcond4 at k=2: log M_2 must be >= exp({log_log_needed:.1f}), "
                "beyond floating-point range")
    return out


# ---------------------------------------------------------------- densities

def _scale_constants(scale: ScaleParams, params: ConstructionParams):
    M = scale.M
    K = M ** (1 + params.alpha)
    n = len(scale.window)
    if scale.odd:
        den = n + M ** params.beta + 1
        w_p = K / den
        w_b = K * (1 + M ** -params.beta) / den
        Kb = M ** (1 + params.alpha - params.beta)
    else:
        w_p = K / n
        w_b = 0.0
        Kb = None
    return K, w_p, w_b, Kb


def _bump_sum(x: np.ndarray, q: int, scale_inner: float) -> np.ndarray:
    """sum_{|r| <= (q-1)/2} F(scale_inner (q x - r)) using the nearest r only."""
    core = bumps._plateau_core()
    r = np.rint(q * x)
    half = (q - 1) // 2
    ok = np.abs(r) <= half
    return np.where(ok, core.value(scale_inner * (q * x - r)), 0.0)


def eval_g(scale: ScaleParams, params: ConstructionParams, x):
    """g_k(x); each inner sum is localized to the bump nearest to x."""
    scalar = np.isscalar(x)
    x = np.asarray(x, dtype=float)
    K, w_p, w_b, Kb = _scale_constants(scale, params)
    acc = np.zeros_like(x)
    for p in scale.window.primes:
        acc += _bump_sum(x, p, K)
    out = w_p * acc
    if scale.odd:
        out = out + w_b * _bump_sum(x, scale.B, Kb)
    return float(out) if scalar else out


def _phase(q: int, s: int) -> complex:
    # exp(pi i (q-1) s / q) for q | s: (q-1)(s/q) is an integer, so the phase
    # is +-1 by parity (always +1 for odd q)
    return -1.0 if ((q - 1) * (s // q)) % 2 else 1.0


def spectrum_g(scale: ScaleParams, params: ConstructionParams, s: int,
               spec: QuadratureSpec = DEFAULT_QUADRATURE) -> complex:
    """Closed-form Fourier coefficient of g_k at integer s."""
    s = int(s)
    if s == 0:
        return 1.0 + 0j
    prof = bumps.plateau_bump()
    M = scale.M
    K = M ** (1 + params.alpha)
    n = len(scale.window)
    den = n + M ** params.beta + 1 if scale.odd else n
    total = 0.0
    for p in scale.window.primes:
        if s % p == 0:
            total += _phase(p, s) * bumps.transform(prof, s / (p * K), spec).real
    total /= den
    if scale.odd and s % scale.B == 0:
        B = scale.B
        Kb = M ** (1 + params.alpha - params.beta)
        total += (1 + M ** params.beta) / den * _phase(B, s) * bumps.transform(prof, s / (B * Kb), spec).real
    return complex(total, 0.0)


def g_tail_bound(scale: ScaleParams, params: ConstructionParams, R: int) -> float:
    """Certified l1 mass of g_k-hat beyond |s| > R (both signs)."""
    M = scale.M
    K = M ** (1 + params.alpha)
    n = len(scale.window)
    den = n + M ** params.beta + 1 if scale.odd else n
    tot = 0.0
    for p in scale.window.primes:
        tot += bumps.lattice_tail(1.0 / K, R // p) / den
    if scale.odd:
        Kb = M ** (1 + params.alpha - params.beta)
        tot += (1 + M ** params.beta) / den * bumps.lattice_tail(1.0 / Kb, R // scale.B)
    return 2.0 * tot


def g_effective_radius(scale: ScaleParams, params: ConstructionParams, tol: float) -> int:
    """Smallest power-of-two-ish radius with certified tail below tol."""
    R = 1024
    while g_tail_bound(scale, params, R) > tol:
        R = int(R * 1.25) + 1
        if R > 10 ** 12:
            break
    return R


def g_spectrum(scale: ScaleParams, params: ConstructionParams, radius: int,
               spec: QuadratureSpec = DEFAULT_QUADRATURE) -> SparseSpectrum:
    """Sparse g_k-hat on 0 <= s <= radius, with certified tail and error ledger."""
    M = scale.M
    K = M ** (1 + params.alpha)
    n = len(scale.window)
    den = n + M ** params.beta + 1 if scale.odd else n
    out = np.zeros(radius + 1)
    err = np.zeros(radius + 1)
    pmin = min(scale.window.primes)
    Fj, Ej = bumps.transform_progression(1.0 / K, radius // pmin + 1, spec)
    for p in scale.window.primes:
        m = radius // p
        js = np.arange(m + 1)
        ph = np.where(((p - 1) * js) % 2 == 1, -1.0, 1.0)
        out[p * js] += ph * Fj[: m + 1] / den
        err[p * js] += Ej[: m + 1] / den
    lattices = [("p", p) for p in scale.window.primes]
    if scale.odd:
        B = scale.B
        Kb = M ** (1 + params.alpha - params.beta)
        wb = (1 + M ** params.beta) / den
        m = radius // B
        js = np.arange(m + 1)
        ph = np.where(((B - 1) * js) % 2 == 1, -1.0, 1.0)
        Fb, Eb = bumps.transform_progression(1.0 / Kb, m + 1, spec)
        out[B * js] += wb * ph * Fb
        err[B * js] += wb * Eb
        lattices.append(("B", B))
    out[0] = 1.0
    err[0] = 0.0
    return _closed_form(out, err, radius, g_tail_bound(scale, params, radius),
                        f"g_{scale.k}", tuple(lattices))


def _closed_form(out, err, radius, tail, label, lattices) -> SparseSpectrum:
    ledger = TailLedger(((f"{label}: transform quadrature", float(err.max())),))
    err_l1 = float(2 * err.sum() - err[0])
    # |g_k-hat| <= 1 everywhere and |F0-hat| <= 1
    return SparseSpectrum.from_half(out, radius=radius, tail_bound=tail, ledger=ledger,
                                    lattices=lattices, label=label, err_l1=err_l1, tail_sup=1.0)


def base_spectrum(radius: int, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> SparseSpectrum:
    """F0-hat on 0 <= s <= radius: F^(s/4) cos(pi s / 2), zero at odd s."""
    j = np.arange(radius // 2 + 1)
    vals, errs = bumps.transform_progression(0.5, len(j), spec)
    out = np.zeros(radius + 1)
    err = np.zeros(radius + 1)
    out[2 * j] = vals * np.where(j % 2 == 1, -1.0, 1.0)
    err[2 * j] = errs
    tail = 2.0 * bumps.lattice_tail(0.5, radius // 2)
    return _closed_form(out, err, radius, tail, "F0", (("p", 2),))


def base_effective_radius(tol: float) -> int:
    R = 64
    while 2.0 * bumps.lattice_tail(0.5, R // 2) > tol:
        R = int(R * 1.25) + 2
    return R


# ---------------------------------------------------------------- stages

@dataclass(frozen=True, eq=False)
class StageMeasure:
    params: ConstructionParams
    schedule: tuple[ScaleParams, ...]
    l: int
    omitted_scale: int | None
    base: bumps.BumpProfile
    cached_spectrum: SparseSpectrum | None
    mass: float
    ledger: TailLedger = field(default_factory=TailLedger)
    radii: tuple[int, ...] = ()

    @property
    def scales(self) -> tuple[ScaleParams, ...]:
        return tuple(sc for sc in self.schedule[: self.l] if sc.k != self.omitted_scale)


@dataclass(frozen=True)
class StageOptions:
    tail_tol: float = 1e-12
    radius_cap: int = 4_000_000
    budget: float = 1e-6
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE


def default_S_max(params: ConstructionParams, M_l: float, cap: int = 1 << 17) -> int:
    return int(min(4 * math.ceil(M_l ** (2 + params.alpha)), cap))


def stage_radii(params, scales, S_max: int, opts: StageOptions) -> tuple[list[int], list[int]]:
    """Radii of the intermediate spectra and of each g factor.

    mu_j for j < last is resolved to its certified tail tolerance (capped);
    the last stage is evaluated on |s| <= S_max.  g_j is stored out to
    R_j + R_{j-1}, beyond which it cannot reach the output window.
    """
    R = [min(base_effective_radius(opts.tail_tol), opts.radius_cap)]
    for i, sc in enumerate(scales):
        if i == len(scales) - 1:
            R.append(S_max)
        else:
            R.append(min(R[-1] + g_effective_radius(sc, params, opts.tail_tol), opts.radius_cap))
    g_radii = [R[i + 1] + R[i] for i in range(len(scales))]
    return R, g_radii


def build_stage(params: ConstructionParams, schedule, l: int, omit: int | None = None,
                S_max: int | None = None, opts: StageOptions | None = None) -> StageMeasure:
    """mu_l-hat (or mu_{l,omit}-hat) by iterated sparse convolution on |s| <= S_max."""
    opts = opts or StageOptions()
    schedule = tuple(schedule)
    if not 0 <= l <= len(schedule):
        raise ConfigError(f"l must be in 0..{len(schedule)}, got {l}")
    if omit is not None and not 1 <= omit <= l:
        raise ConfigError(f"omit must be in 1..{l}, got {omit}")
    scales = [sc for sc in schedule[:l] if sc.k != omit]
    if S_max is None:
        S_max = default_S_max(params, scales[-1].M if scales else 1.0)
    R, g_radii = stage_radii(params, scales, S_max, opts)
    spec = opts.quadrature
    if not scales:
        H = base_spectrum(max(S_max, R[0]), spec).restricted(S_max)
    else:
        H = base_spectrum(R[0], spec)
    for i, sc in enumerate(scales):
        G = g_spectrum(sc, params, g_radii[i], spec)
        H, _ = convolve(G, H, R[i + 1], label=f"mu_{sc.k}")
        # nonnegative density: every coefficient is bounded by the mass
        H = dataclasses.replace(H, tail_sup=abs(H.values[0]) + H.error_bound if H.nnz else H.error_bound)
    ledger = H.ledger
    if ledger.total > opts.budget:
        raise TruncationBudgetExceeded(
            f"stage l={l}: ledger total {ledger.total:.3e} exceeds budget {opts.budget:.3e}",
            ledger.total, opts.budget)
    mass = float(H[0].real)
    return StageMeasure(params, schedule, l, omit, bumps.split_bump(), H, mass, ledger,
                        tuple(R))


def eval_stage_density(stage: StageMeasure, x):
    """F0(x) * prod g_j(x) over the included scales."""
    scalar = np.isscalar(x)
    x = np.asarray(x, dtype=float)
    out = bumps.eval_profile(stage.base, x)
    for sc in stage.scales:
        nz = out != 0
        if not np.any(nz):
            break
        vals = np.zeros_like(out)
        vals[nz] = eval_g(sc, stage.params, x[nz])
        out = out * vals
    return float(out) if scalar else out


# ---------------------------------------------------------------- support geometry

def bump_intervals(scale: ScaleParams, params: ConstructionParams, lo: float, hi: float):
    """Supports of the bumps of g_k meeting [lo, hi] as (left, right) float pairs."""
    K, _, _, Kb = _scale_constants(scale, params)
    out = []
    fams = [(p, K) for p in scale.window.primes]
    if scale.odd:
        fams.append((scale.B, Kb))
    for q, inner in fams:
        h = 0.5 / inner
        half = (q - 1) // 2
        r0 = max(math.ceil(q * lo - h), -half)
        r1 = min(math.floor(q * hi + h), half)
        for r in range(r0, r1 + 1):
            a = (r - h) / q
            b = (r + h) / q
            if b > lo and a < hi:
                out.append((max(a, lo), min(b, hi)))
    return out


def _merge(intervals):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def support_cells(stage: StageMeasure, lo: float = -0.5, hi: float = 0.5) -> list[tuple[float, float, list[float]]]:
    """Connected pieces of the density support inside [lo, hi] with interior breakpoints.

    Breakpoints are the bump-support edges of all factors falling inside a
    piece; between them the density is a smooth product.
    """
    cells = [(max(a, lo), min(b, hi)) for a, b in stage.base.support if b > lo and a < hi]
    edges: dict = {c: [] for c in cells}
    for sc in stage.scales:
        new = {}
        for (a, b) in cells:
            pieces = bump_intervals(sc, stage.params, a, b)
            brk = sorted({t for pc in pieces for t in pc})
            for (c, d) in _merge(pieces):
                if d <= c:
                    continue
                inner = [t for t in edges[(a, b)] + brk if c < t < d]
                new[(c, d)] = inner
        cells = sorted(new)
        edges = new
    return [(a, b, sorted(set(edges[(a, b)]))) for a, b in cells]


def interval_mass(stage: StageMeasure, I: tuple[float, float],
                  spec: QuadratureSpec = QuadratureSpec(nodes_per_panel=20, panels=2,
                                                        target_rel_error=1e-8)) -> float:
    """int_I density dx with panels aligned to the bump supports of every factor.

    The relative target is 1e-8 rather than tighter: inside a fine bump the
    argument M^(1+alpha) (p x - r) carries a rounding error of order
    M^(1+alpha) p ulp(x), which sets a noise floor near 1e-9.
    """
    lo, hi = max(I[0], -0.5), min(I[1], 0.5)
    if hi <= lo:
        return 0.0
    total = 0.0
    for a, b, brk in support_cells(stage, lo, hi):
        total += bumps.integrate(lambda x: eval_stage_density(stage, x), a, b, spec,
                                 breakpoints=brk, abs_floor=1e-13 * (b - a))
    return float(total)


def in_E(scale: ScaleParams, params: ConstructionParams, x: Fraction) -> bool:
    """x in E(alpha, k), decided in exact rationals."""
    h = _half_width(scale.M, params.alpha)
    for p in scale.window.primes:
        r = round(x * p)
        for rr in (r - 1, r, r + 1):
            if abs(rr) <= (p - 1) // 2 and abs(x - Fraction(rr, p)) <= h:
                return True
    return False


def in_C(scale: ScaleParams, params: ConstructionParams, x: Fraction) -> bool:
    """x in C(beta, k) for odd k, decided in exact rationals."""
    h = _half_width(scale.M, params.alpha)
    B = scale.B
    a = round(x * B)
    for aa in (a - 1, a, a + 1):
        if abs(aa) <= (B - 1) // 2 and abs(x - Fraction(aa, B)) <= h:
            return True
    return False


def _half_width(M: float, alpha: float) -> Fraction:
    """M^-(2+alpha) / 2, exact when M and alpha are integers."""
    if float(M).is_integer() and float(alpha).is_integer():
        return Fraction(1, int(M) ** (2 + int(alpha))) / 2
    return Fraction(M ** -(2 + alpha)) / 2


def in_scale_set(scale: ScaleParams, params: ConstructionParams, x: Fraction) -> bool:
    if scale.odd:
        return in_E(scale, params, x) or in_C(scale, params, x)
    return in_E(scale, params, x)
