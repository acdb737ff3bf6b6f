"""Verifiers: exponent fits, k-interval geometry, the convolution stability
checker and the restriction (extension) experiment.

Every "up to a constant" claim is reported two-sidedly: the smallest
constant that makes the inequality hold on the scanned range is computed and
returned, and assertions only ever fire on explicitly configured bands.
"""

from __future__ import annotations

import csv
import io
import math
from functools import lru_cache
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import bumps
from .bumps import DEFAULT_QUADRATURE, QuadratureSpec
from .construction import (
    ConstructionParams, ScaleParams, _bump_sum, _merge, bump_intervals, eval_g, StageMeasure, StageOptions, _half_width, _scale_constants,
    base_effective_radius, base_spectrum, build_stage, g_spectrum, eval_stage_density, interval_mass, n_beta, support_cells,
)
from .errors import (
    DomainError, EvenScale, HypothesisViolated, InsufficientBlocks, PreconditionUnmet,
    TruncationBudgetExceeded,
)
from .spectrum import SparseSpectrum, TailLedger, convolve, sup_on_dyadic_blocks

# ---------------------------------------------------------------- exponent fits


@dataclass(frozen=True)
class ExponentReport:
    fitted_slope: float
    intercept: float
    residual_max: float
    scale_range: tuple[float, float]
    target_band: tuple[float, float]
    xs: tuple[float, ...] = ()
    ys: tuple[float, ...] = ()
    label: str = ""
    note: str = ""

    @property
    def verdict(self) -> str:
        lo, hi = self.target_band
        return "pass" if lo <= self.fitted_slope <= hi else "fail"

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "fitted_slope": _num(self.fitted_slope),
            "intercept": _num(self.intercept),
            "residual_max": _num(self.residual_max),
            "scale_range": [_num(v) for v in self.scale_range],
            "target_band": list(self.target_band),
            "verdict": self.verdict,
            "points": [[x, y] for x, y in zip(self.xs, self.ys)],
            "note": self.note,
        }

    def to_csv(self) -> str:
        """x, y and the fitted power law, with the fit in a trailing comment row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "fit"])
        for x, y in zip(self.xs, self.ys):
            fit = math.exp(self.intercept) * x ** self.fitted_slope if math.isfinite(self.fitted_slope) else ""
            w.writerow([repr(x), repr(y), repr(fit) if fit != "" else ""])
        buf.write(f"# slope={self.fitted_slope!r},intercept={self.intercept!r},"
                  f"residual_max={self.residual_max!r},band={list(self.target_band)},"
                  f"verdict={self.verdict}\n")
        return buf.getvalue()


def _num(v):
    return v if v is None or math.isfinite(v) else None


def fit_power_law(xs, ys, band: tuple[float, float], label: str = "", note: str = "") -> ExponentReport:
    """Unweighted least squares of log y against log x; nonpositive y are dropped."""
    pts = [(float(x), float(y)) for x, y in zip(xs, ys) if x > 0 and y > 0]
    if len(pts) < 2:
        return ExponentReport(math.nan, math.nan, math.nan, (math.nan, math.nan), band,
                              tuple(p[0] for p in pts), tuple(p[1] for p in pts), label,
                              (note + "; " if note else "") + "fewer than two positive points")
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    slope, icpt = np.polyfit(lx, ly, 1)
    res = float(np.max(np.abs(ly - (slope * lx + icpt))))
    return ExponentReport(float(slope), float(icpt), res, (pts[0][0], pts[-1][0]), band,
                          tuple(p[0] for p in pts), tuple(p[1] for p in pts), label, note)


def decay_target(params: ConstructionParams) -> float:
    a, b = params.alpha, params.beta
    return -(1 - b) / (2 + a) if b >= 0 else -1.0 / (2 + a)


def regularity_target(params: ConstructionParams) -> float:
    a, b = params.alpha, params.beta
    return 2.0 / (2 + a) if b >= 0 else (2.0 + b) / (2 + a)


def fit_decay(S: SparseSpectrum, params: ConstructionParams, M1: float | None = None,
              half_width: float = 0.2, start: float | None = None,
              min_blocks: int = 4) -> ExponentReport:
    """Slope of log(dyadic-block sup) against log(block center).

    Only complete blocks reaching beyond ``start`` (default
    min(M1, M1^(1+beta)) when M1 is given, else 1) whose sup exceeds the
    spectrum's certified pointwise error are used.
    """
    if start is None:
        start = min(M1, M1 ** (1 + params.beta)) if M1 is not None else 1.0
    floor = S.error_bound
    xs, ys = [], []
    for (lo, hi), v in sup_on_dyadic_blocks(S):
        # blocks cut off by the radius would bias the sup downward
        if hi <= start or hi - 1 > S.radius or v <= floor:
            continue
        xs.append(0.5 * (lo + hi))
        ys.append(v)
    if len(xs) < min_blocks:
        raise InsufficientBlocks(
            f"only {len(xs)} dyadic blocks beyond {start:g} rise above the error bound {floor:.3g}")
    c = decay_target(params)
    return fit_power_law(xs, ys, (c - half_width, c + half_width), label="decay")


# ---------------------------------------------------------------- regularity


def _mass_pieces(stage: StageMeasure, sub: int = 4, nodes: int = 16):
    """Piecewise masses of the stage density on a partition of its support."""
    lefts, rights, masses = [], [], []
    xg, wg = bumps._gl_rule(nodes)
    for a, b, brk in support_cells(stage):
        edges = sorted({a, b, *brk})
        for lo, hi in zip(edges[:-1], edges[1:]):
            br = np.linspace(lo, hi, sub + 1)
            for u, v in zip(br[:-1], br[1:]):
                x = 0.5 * (v - u) * xg + 0.5 * (u + v)
                m = 0.5 * (v - u) * float(np.sum(wg * eval_stage_density(stage, x)))
                lefts.append(u)
                rights.append(v)
                masses.append(m)
    return np.array(lefts), np.array(rights), np.array(masses)


def _window_candidates(lefts, rights, masses, length: float, count: int) -> list[float]:
    """Left endpoints of the heaviest windows of a given length (approximate ranking)."""
    if not len(masses):
        return []
    knots = np.concatenate([[lefts[0]], rights])
    cdf = np.concatenate([[0.0], np.cumsum(masses)])
    # density treated as constant on each piece for ranking purposes
    order = np.argsort(knots, kind="stable")
    knots, cdf = knots[order], cdf[order]

    def Phi(x):
        return np.interp(x, knots, cdf)

    starts = np.unique(np.concatenate([lefts, rights - length]))
    starts = np.clip(starts, -0.5, 0.5 - length)
    w = Phi(starts + length) - Phi(starts)
    top = np.argsort(-w, kind="stable")[:count]
    return sorted(float(starts[i]) for i in top)


def sup_interval_mass(stage: StageMeasure, length: float, translates: int = 16, pieces=None) -> float:
    """max of interval_mass over the heaviest translates of a window of given length."""
    lefts, rights, masses = pieces if pieces is not None else _mass_pieces(stage)
    best = 0.0
    for x in _window_candidates(lefts, rights, masses, length, translates):
        best = max(best, interval_mass(stage, (x, x + length)))
    return best


def fit_regularity(stage: StageMeasure, lengths, translates_per_scale: int = 16,
                   half_width: float = 0.2, check_range: bool = True) -> ExponentReport:
    """Slope of log sup_x mu_l([x, x+r]) against log r.

    Translates are ranked with a piecewise mass profile of the support and the
    top ``translates_per_scale`` are measured with ``interval_mass``.
    """
    lengths = sorted(float(r) for r in lengths)
    if check_range and stage.scales:
        rmin = stage.scales[-1].M ** -(2 + stage.params.alpha)
        if lengths[0] < rmin * (1 - 1e-12) or lengths[-1] > 1:
            raise DomainError(f"lengths must lie in [{rmin:.3g}, 1]")
    pieces = _mass_pieces(stage)
    sups = [sup_interval_mass(stage, r, translates_per_scale, pieces) for r in lengths]
    c = regularity_target(stage.params)
    note = "" if any(v > 0 for v in sups) else "stage density vanishes identically"
    return fit_power_law(lengths, sups, (c - half_width, c + half_width), label="regularity",
                         note=note)


# ---------------------------------------------------------------- k-intervals


@dataclass(frozen=True)
class KInterval:
    lo: Fraction
    hi: Fraction
    cls: int  # 1 or 2
    constituents: tuple[tuple[str, int, int], ...]  # ("E", r, p) or ("C", a, B)

    @property
    def center(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def length(self) -> Fraction:
        return self.hi - self.lo


@dataclass(frozen=True)
class KIntervalSet:
    k: int
    half_width: Fraction
    intervals: tuple[KInterval, ...]
    n_E: int
    n_C: int

    @property
    def J1(self) -> tuple[KInterval, ...]:
        return tuple(I for I in self.intervals if I.cls == 1)

    @property
    def J2(self) -> tuple[KInterval, ...]:
        return tuple(I for I in self.intervals if I.cls == 2)


def _E_centers(scale: ScaleParams):
    for p in scale.window.primes:
        h = (p - 1) // 2
        for r in range(-h, h + 1):
            yield Fraction(r, p), ("E", r, p)


def _C_centers(scale: ScaleParams):
    B = scale.B
    h = (B - 1) // 2
    for a in range(-h, h + 1):
        yield Fraction(a, B), ("C", a, B)


def _meets_C(scale: ScaleParams, lo: Fraction, hi: Fraction, h: Fraction) -> bool:
    B = scale.B
    half = (B - 1) // 2
    c = (lo + hi) / 2
    a0 = round(c * B)
    for a in range(a0 - 2, a0 + 3):
        if abs(a) <= half and Fraction(a, B) - h <= hi and Fraction(a, B) + h >= lo:
            return True
    return False


def enumerate_k_intervals(scale: ScaleParams, params: ConstructionParams) -> KIntervalSet:
    """Connected components of E(alpha,k) (and C(beta,k) at odd k), in exact rationals.

    A component I is in class 2 when its doubled copy 2I (same center, twice
    the length) meets C(beta,k), else class 1.
    """
    h = _half_width(scale.M, params.alpha)
    items = list(_E_centers(scale))
    n_E = len(items)
    n_C = 0
    if scale.odd:
        cs = list(_C_centers(scale))
        n_C = len(cs)
        items += cs
    items.sort(key=lambda it: (it[0], it[1]))
    merged: list[list] = []
    for c, tag in items:
        lo, hi = c - h, c + h
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
            merged[-1][2].append(tag)
        else:
            merged.append([lo, hi, [tag]])
    out = []
    for lo, hi, tags in merged:
        cls = 1
        if scale.odd:
            c = (lo + hi) / 2
            L = hi - lo
            if _meets_C(scale, c - L, c + L, h):
                cls = 2
        out.append(KInterval(lo, hi, cls, tuple(tags)))
    return KIntervalSet(scale.k, h, tuple(out), n_E, n_C)


def count_centers(scale: ScaleParams, lo: Fraction, hi: Fraction) -> int:
    """Number of distinct centers r/p (p in the window, |r| <= (p-1)/2) in [lo, hi]."""
    seen = set()
    for p in scale.window.primes:
        half = (p - 1) // 2
        r0 = max(math.ceil(lo * p), -half)
        r1 = min(math.floor(hi * p), half)
        for r in range(r0, r1 + 1):
            seen.add(Fraction(r, p))
    return len(seen)


@dataclass(frozen=True)
class CountBoundReport:
    small_constant: float  # smallest c with count(3I) <= c max(3|I| M^2, 1), |I| <= 1/M
    large_constant: float  # smallest c with count(3I) <= c |I| |P| M, |I| >= 1/M
    samples: int

    def to_json(self) -> dict:
        return {"small_interval_constant": self.small_constant,
                "large_interval_constant": self.large_constant, "samples": self.samples}


def count_bound_report(scale: ScaleParams, lengths, translates: int = 64) -> CountBoundReport:
    """Exact center counts in tripled intervals versus the two counting bounds.

    Translates are the points j/translates of [-1/2, 1/2) plus every center,
    so that the worst placements (an interval centered on a center) are seen.
    """
    M = scale.M
    n = len(scale.window)
    cen = sorted({c for c, _ in _E_centers(scale)})
    small = 0.0
    large = 0.0
    cnt = 0
    for L in lengths:
        L = Fraction(L).limit_denominator(10 ** 12)
        pts = [Fraction(j, translates) - Fraction(1, 2) for j in range(translates)] + cen
        for x in pts:
            # I = [x - L/2, x + L/2], 3I = [x - 3L/2, x + 3L/2]
            c = count_centers(scale, x - 3 * L / 2, x + 3 * L / 2)
            cnt += 1
            if L <= Fraction(1) / Fraction(M):
                small = max(small, c / max(3 * float(L) * M * M, 1.0))
            if L >= Fraction(1) / Fraction(M):
                large = max(large, c / (float(L) * n * M))
    return CountBoundReport(small, large, cnt)


# ---------------------------------------------------------------- stability lemma


@dataclass(frozen=True, eq=False)
class StabilityHypothesis:
    """Inputs of the convolution stability check.

    ``h_tail(u)`` bounds |H(u)| for |u| beyond H's radius (vectorized over
    float arrays); C1 and C2 map N to the constants of the G3 and H estimates.
    ``N_surrogate`` replaces N(beta) when set.
    """
    G: SparseSpectrum
    H: SparseSpectrum
    M_prev: float
    M_cur: int
    alpha: float
    beta: float
    C: float
    C1: dict
    C2: dict
    h_tail: object = None
    N_surrogate: int | None = None

    @property
    def N(self) -> int:
        return self.N_surrogate if self.N_surrogate is not None else n_beta(self.beta)


@dataclass(frozen=True)
class StabilityReport:
    margins: dict
    witnesses: dict
    preconditions: dict
    N: int
    surrogate: bool
    note: str = ""

    @property
    def preconditions_met(self) -> bool:
        return all(self.preconditions.values())

    @property
    def holds(self) -> bool | None:
        """All margins <= 1; None when the preconditions fail (reported only)."""
        if not self.preconditions_met:
            return None
        return all(v <= 1 for v in self.margins.values())

    @property
    def within_bounds(self) -> bool:
        """All margins <= 1, whether or not the preconditions hold."""
        return all(v <= 1 for v in self.margins.values())

    def to_json(self) -> dict:
        return {
            "margins": {k: float(v) for k, v in self.margins.items()},
            "witnesses": {k: (None if v is None else str(v)) for k, v in self.witnesses.items()},
            "preconditions": dict(self.preconditions),
            "preconditions_met": self.preconditions_met,
            "holds": self.holds,
            "within_bounds": self.within_bounds,
            "N": self.N,
            "surrogate": self.surrogate,
            "note": self.note,
        }


def _logabs(s: int) -> float:
    return math.log(abs(s))


def _loglog(s: int) -> float:
    return math.log(_logabs(s))


def _log_majorant(x: float, squared: bool = False) -> float:
    """log of the decay majorant of F^ at x >= 0, safe for huge x."""
    c = bumps.decay_constants(squared)
    if x <= 0:
        return math.log(c[0])
    lx = math.log(x)
    return min(math.log(c[n]) - n * lx for n in range(len(c)))


def _logs_G2(hyp: StabilityHypothesis, s: int) -> float:
    M, b = hyp.M_cur, hyp.beta
    return _loglog(s) - math.log(M) + math.log1p(M ** b)


def _log_G3(hyp: StabilityHypothesis, s: int, N: int) -> float:
    lM = math.log(hyp.M_cur)
    return (_loglog(s) + (-1 + (2 + hyp.alpha) * N) * lM + math.log1p(hyp.M_cur ** hyp.beta)
            - N * _logabs(s))


def _log_H(hyp: StabilityHypothesis, s: int, N: int) -> float:
    lM = math.log(hyp.M_prev)
    return (_loglog(s) + (-1 + (2 + hyp.alpha) * (N + 1)) * lM + math.log1p(hyp.M_prev ** hyp.beta)
            - N * _logabs(s))


def _entries(S: SparseSpectrum):
    idx, val = S.signed_entries()
    return [int(t) for t in idx], [complex(v) for v in val]


def check_hypothesis(hyp: StabilityHypothesis, N_check: int) -> None:
    """Scan stored entries for every hypothesis predicate; raise on the first failure."""
    M, b = hyp.M_cur, hyp.beta
    low = _low(M, b)
    hi_G3 = M ** (2 + hyp.alpha)
    hi_H = 2 * hyp.M_prev ** (2 + hyp.alpha)
    ts, gv = _entries(hyp.G)
    if abs(hyp.G[0] - 1) > 0:
        raise HypothesisViolated("G(0)=1", 0, f"G(0)={hyp.G[0]}")
    for t, v in zip(ts, gv):
        a = abs(v)
        if a > 1:
            raise HypothesisViolated("|G|<=1", t, f"|G|={a:.3g}")
        if t == 0 or a == 0:
            continue
        if abs(t) < low:
            raise HypothesisViolated("G1", t, "nonzero below min(M, M^(1+beta))")
        if math.log(a) > math.log(hyp.C) + _logs_G2(hyp, t) + 1e-12:
            raise HypothesisViolated("G2", t)
        if abs(t) >= hi_G3:
            for N in range(1, N_check + 2):
                if math.log(a) > math.log(hyp.C1[N]) + _log_G3(hyp, t, N) + 1e-12:
                    raise HypothesisViolated(f"G3(N={N})", t)
    us, hv = _entries(hyp.H)
    for u, v in zip(us, hv):
        a = abs(v)
        if a > 2:
            raise HypothesisViolated("|H|<=2", u, f"|H|={a:.3g}")
        if a and abs(u) >= hi_H:
            for N in range(1, N_check + 2):
                if math.log(a) > math.log(hyp.C2[N]) + _log_H(hyp, u, N) + 1e-12:
                    raise HypothesisViolated(f"H(N={N})", u)


def _low(M, beta: float):
    """min(M, M^(1+beta)), exact for integer M at beta = 0."""
    if beta == 0:
        return M
    return min(M, M ** (1 + beta))


def stability_preconditions(M_prev: float, M_cur, alpha: float, beta: float, N: int) -> dict:
    """The seed condition, Mcond1 and Mcond2 of the stability lemma.

    Exact integer arithmetic when M_prev, M_cur and alpha are integers and
    beta = 0, otherwise logarithms.
    """
    ints = beta == 0 and all(float(v).is_integer() for v in (M_prev, alpha)) and isinstance(M_cur, int)
    if ints:
        Mp, a = int(M_prev), int(alpha)
        c1 = M_cur >= 4 ** (N + 1) * Mp ** ((2 + a) * (N + 1)) * 2
    else:
        lp = math.log(M_prev)
        c1 = math.log(M_cur) >= (N + 1) * math.log(4) + (2 + alpha) * (N + 1) * lp + math.log1p(M_prev ** beta)
    c2 = math.log(math.log(M_cur)) >= math.log(N) + 3 * (2 + alpha) * math.log(M_prev)
    return {"Mcond1": bool(c1), "Mcond2": bool(c2), "seed": bool(_low(M_prev, beta) >= 100)}


def convolve_pairs(G: SparseSpectrum, H: SparseSpectrum) -> dict:
    """(G*H)(s) over all stored pairs, keyed by exact integer s.

    Accumulation runs over G entries in ascending order, then H entries in
    ascending order, so the result is deterministic.
    """
    ts, gv = _entries(G)
    us, hv = _entries(H)
    out: dict = {}
    for t, g in zip(ts, gv):
        for u, h in zip(us, hv):
            s = t + u
            out[s] = out.get(s, 0) + g * h
    return out


def _log_gh2_bound(hyp, s, N: int) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    lM = math.log(hyp.M_cur)
    return (math.log(hyp.C + 1) + math.log(hyp.C2[N] + 1) + 2 * np.log(np.log(s))
            - lM + math.log1p(hyp.M_cur ** hyp.beta))


def _log_gh3_bound(hyp, s, n: int) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    lM = math.log(hyp.M_cur)
    cst = 4.0 ** (n + 1) * hyp.C1[n + 1] + hyp.C2[n + 1]
    return (math.log(cst) + np.log(np.log(s)) + (-1 + (2 + hyp.alpha) * (n + 1)) * lM
            + math.log1p(hyp.M_cur ** hyp.beta) - n * np.log(s))


def _log_ratio(val, lbound) -> np.ndarray:
    val = np.asarray(val, dtype=float)
    with np.errstate(divide="ignore"):
        lv = np.log(val)
    return np.where(val > 0, lv - lbound, -np.inf)


def check_stability(hyp: StabilityHypothesis, N_check: int | None = None,
                    strict: bool = False) -> StabilityReport:
    """Margins actual/bound for the three conclusions of the stability lemma.

    The frequency axis s >= 0 (the spectra are conjugate symmetric) is cut
    into blocks [t - R_H, t + R_H] around the stored G frequencies t and the
    gaps between them, gaps further cut into pieces [a, 2a].  Inside a block,
    G*H is G(t)H(s - t) computed exactly at every stored s plus a tail term
    bounding every other pair through ``h_tail`` evaluated at the distance to
    the block.  On a gap piece only tail terms occur.  Each margin is the
    largest ratio of such an upper bound to the smallest value of the
    conclusion's bound over the same set, so it is a certified worst case.
    """
    N = hyp.N if N_check is None else N_check
    check_hypothesis(hyp, N)
    pre = stability_preconditions(hyp.M_prev, hyp.M_cur, hyp.alpha, hyp.beta, N)
    if strict and not all(pre.values()):
        bad = [k for k, v in pre.items() if not v]
        raise PreconditionUnmet(f"stability preconditions fail: {', '.join(bad)}")

    M, b, a = hyp.M_cur, hyp.beta, hyp.alpha
    low = _low(M, b)
    ts, gv = _entries(hyp.G)
    us, hv = _entries(hyp.H)
    RH = int(hyp.H.radius)
    gabs = np.array([abs(v) for v in gv])
    habs = np.array([abs(v) for v in hv])
    herr = hyp.H.error_bound
    h_tail = hyp.h_tail or (lambda x: np.full(np.shape(x), hyp.H.sup_tail_bound))

    def tail(lo: int, hi: int, skip=None) -> float:
        """Sum over G entries t (other than skip) of |G(t)| h_tail(dist(t, [lo, hi]))."""
        d = np.array([float(max(lo - t, t - hi, 0)) for t in ts])
        d = np.maximum(d, RH + 1)
        w = gabs.copy()
        if skip is not None:
            w[ts.index(skip)] = 0.0
        return float(np.sum(w * h_tail(d)))

    margins = {"GH1": 0.0, "GH2": 0.0, "GH3": 0.0}
    wit: dict = {"GH1": None, "GH2": None, "GH3": None}

    def record(key, lr, where):
        if np.isfinite(lr):
            r = math.exp(min(lr, 700.0))
            if r > margins[key]:
                margins[key], wit[key] = r, where

    # GH1: |s| <= low/2; G(0)H(s) cancels H(s) exactly, every other pair is a tail term
    half = low // 2 if isinstance(low, int) else int(low / 2)
    v1 = tail(-half, half, skip=0)
    if v1 > 0:
        record("GH1", math.log(v1) - (math.log(hyp.C2[N]) - (N - 3) * math.log(M)), f"[0, {half}]")

    gh3_edge = 2 * M ** (2 + a)
    u_arr = np.array(us, dtype=float)

    def region(lo: int, hi: int, vals_s=None, vals=None):
        """Update GH2/GH3 margins on [lo, hi] given pointwise values and a floor value."""
        lo = max(lo, -(-low // 2) if isinstance(low, int) else int(math.ceil(low / 2)), 2)
        if hi < lo:
            return
        floor = vals[1]
        # points without a stored pair carry the floor only; bounds are monotone on [lo, hi]
        lr2 = math.log(floor) - float(_log_gh2_bound(hyp, lo, N)) if floor > 0 else -np.inf
        record("GH2", lr2, f"[{lo}, {hi}]")
        if hi >= gh3_edge:
            lo3 = max(lo, int(math.ceil(gh3_edge)))
            for n in range(1, N + 1):
                if floor > 0:
                    record("GH3", math.log(floor) - float(_log_gh3_bound(hyp, hi, n)), f"[{lo3}, {hi}]")
        if vals_s is not None and len(vals_s):
            sv = np.array([float(s) for s in vals_s])
            keep = sv >= lo
            pts, pv = sv[keep], vals[0][keep] + floor
            if len(pts):
                r = _log_ratio(pv, _log_gh2_bound(hyp, pts, N))
                i = int(np.argmax(r))
                record("GH2", float(r[i]), str(vals_s[np.flatnonzero(keep)[i]]))
                k3 = pts >= gh3_edge
                for n in range(1, N + 1):
                    if np.any(k3):
                        r = _log_ratio(pv[k3], _log_gh3_bound(hyp, pts[k3], n))
                        i = int(np.argmax(r))
                        record("GH3", float(r[i]), str(vals_s[np.flatnonzero(keep)[np.flatnonzero(k3)[i]]]))

    pos = [(t, g) for t, g in zip(ts, gv) if t >= 0]
    prev_hi = None
    for j, (t, g) in enumerate(pos):
        lo_b, hi_b = t - RH, t + RH
        if prev_hi is not None and lo_b > prev_hi + 1:
            x = prev_hi + 1
            while x < lo_b:
                y = min(2 * x, lo_b - 1)
                region(x, y, None, (None, tail(x, y)))
                x = y + 1
        if t == 0:
            prev_hi = hi_b
            continue
        s_list = [t + u for u in us]
        region(lo_b, hi_b, s_list, (abs(g) * habs, tail(lo_b, hi_b, skip=t) + abs(g) * herr))
        prev_hi = hi_b
    # beyond the last block
    x = prev_hi + 1
    end = max(int(gh3_edge), prev_hi) * 8
    while x < end:
        y = min(2 * x, end)
        region(x, y, None, (None, tail(x, y)))
        x = y + 1
    note = ("N(beta) replaced by a surrogate N; the full parameters would need "
            "log M_k beyond 10^60 and are not reproducible") if hyp.N_surrogate is not None else ""
    if not all(pre.values()):
        note = (note + "; " if note else "") + "preconditions unmet: margins reported only"
    return StabilityReport(margins, wit, pre, N, hyp.N_surrogate is not None, note)


def surrogate_M_cur(M_prev: float, alpha: float, beta: float, N: int) -> int:
    """Smallest integer M with M >= 4^(N+1) M_prev^((2+alpha)(N+1)) (1 + M_prev^beta).

    Exact in integers when M_prev, alpha and beta are integers, else rounded
    up from a float with a relative safety margin.
    """
    if all(float(v).is_integer() for v in (M_prev, alpha, beta)) and beta >= 0:
        Mp = int(M_prev)
        return 4 ** (N + 1) * Mp ** ((2 + int(alpha)) * (N + 1)) * (1 + Mp ** int(beta))
    lg = (N + 1) * math.log(4) + (2 + alpha) * (N + 1) * math.log(M_prev) + math.log1p(M_prev ** beta)
    return int(math.ceil(math.exp(lg) * (1 + 1e-12)))


def synthetic_G(M_cur: int, alpha: float, beta: float, ratio: int = 4, decay_power: int = 8,
                reach: float = 1e6) -> SparseSpectrum:
    """A lattice spectrum satisfying G1-G3 by construction.

    G(0) = 1 and, at t = q ratio^j with q = ceil(min(M, M^(1+beta))), up to
    reach * M^(2+alpha),
    G(t) = (-1)^j (1/4) log(t) M^-1 (1 + M^beta) min(1, (M^(2+alpha)/t)^decay_power).
    """
    M = M_cur
    low = _low(M, beta)
    q = low if isinstance(low, int) else int(math.ceil(low))
    lM = math.log(M)
    edge = (2 + alpha) * lM
    stop = edge + math.log(reach)
    idx, val = [0], [1.0]
    t, j = q, 0
    while math.log(t) <= stop:
        lt = math.log(t)
        lv = math.log(0.25) + math.log(lt) - lM + math.log1p(M ** beta)
        lv += min(0.0, decay_power * (edge - lt))
        idx.append(t)
        val.append((-1) ** j * math.exp(lv))
        t *= ratio
        j += 1
    return SparseSpectrum(idx, val, idx[-1], label="synthetic G", tail_sup=0.0)


def hypothesis_constants(G: SparseSpectrum, H: SparseSpectrum, M_prev: float, M_cur: int,
                         alpha: float, beta: float, N_max: int, h_tail=None,
                         grid_decades: int = 80, per_decade: int = 40) -> tuple[float, dict, dict]:
    """Smallest constants C, C1[N], C2[N] making G2, G3 and H hold.

    Stored entries are scanned exactly.  H beyond its radius is covered with
    ``h_tail`` on a logarithmic grid s_0 < s_1 < ... from 2 M_prev^(2+alpha):
    on [s_i, s_(i+1)] the tail is at most h_tail(s_i) and the bound at least
    its value at s_(i+1), which makes the constant valid on the whole range.
    """
    hyp0 = StabilityHypothesis(G, H, M_prev, M_cur, alpha, beta, 1.0, {}, {})
    ts, gv = _entries(G)
    C = 0.0
    C1 = {N: 0.0 for N in range(1, N_max + 1)}
    hi_G3 = M_cur ** (2 + alpha)
    for t, v in zip(ts, gv):
        if t == 0 or v == 0:
            continue
        la = math.log(abs(v))
        C = max(C, math.exp(la - _logs_G2(hyp0, t)))
        if abs(t) >= hi_G3:
            for N in C1:
                C1[N] = max(C1[N], math.exp(la - _log_G3(hyp0, t, N)))
    C2 = {N: 0.0 for N in range(1, N_max + 1)}
    us, hv = _entries(H)
    edge = 2 * M_prev ** (2 + alpha)
    for u, v in zip(us, hv):
        if v and abs(u) >= edge:
            for N in C2:
                C2[N] = max(C2[N], math.exp(math.log(abs(v)) - _log_H(hyp0, u, N)))
    if h_tail is not None:
        start = max(edge, H.radius + 1)
        grid = start * np.logspace(0, grid_decades, grid_decades * per_decade + 1)
        ht = np.asarray(h_tail(grid), dtype=float)
        with np.errstate(divide="ignore"):
            lh = np.log(ht)
        for N in C2:
            lb = np.array([_log_H(hyp0, int(s), N) for s in grid[1:]])
            r = lh[:-1] - lb
            if np.any(np.isfinite(r)):
                C2[N] = max(C2[N], math.exp(min(float(np.max(r)), 700.0)))
    # zero constants become the smallest positive float so logarithms stay finite
    tiny = np.finfo(float).tiny
    C = max(C, tiny)
    C1 = {k: max(v, tiny) for k, v in C1.items()}
    C2 = {k: max(v, tiny) for k, v in C2.items()}
    return C, C1, C2


def split_bump_tail(u):
    """|F0^(u)| <= majorant(|u| / 4), from F0^(u) = F^(u/4) cos(pi u / 2)."""
    return bumps.decay_majorant(np.abs(np.asarray(u, dtype=float)) / 4.0)


def surrogate_stability_case(alpha: float = 1.0, beta: float = 0.0, M_prev: float = 100.0,
                             N_surrogate: int = 3, tail_tol: float = 1e-12) -> StabilityHypothesis:
    """Synthetic G and H = F0^ with computed constants at a surrogate-feasible M_cur."""
    M_cur = surrogate_M_cur(M_prev, alpha, beta, N_surrogate)
    G = synthetic_G(M_cur, alpha, beta)
    H = base_spectrum(base_effective_radius(tail_tol))
    C, C1, C2 = hypothesis_constants(G, H, M_prev, M_cur, alpha, beta, N_surrogate + 1,
                                     h_tail=split_bump_tail)
    return StabilityHypothesis(G, H, M_prev, M_cur, alpha, beta, C, C1, C2,
                               h_tail=split_bump_tail, N_surrogate=N_surrogate)


# ---------------------------------------------------------------- restriction experiment


def _require_odd(scale: ScaleParams) -> None:
    if not scale.odd:
        raise EvenScale(f"scale k={scale.k} is even; f_k is defined at odd scales only")


def _fk_inner(scale: ScaleParams, params: ConstructionParams) -> float:
    return scale.M ** (1 + params.alpha - params.beta)


def f_k_density(scale: ScaleParams, params: ConstructionParams, x):
    """f_k(x) = sum_{|a| <= (B-1)/2} F(M^(1+alpha-beta) (B x - a)), nearest bump only."""
    _require_odd(scale)
    scalar = np.isscalar(x)
    out = _bump_sum(np.asarray(x, dtype=float), scale.B, _fk_inner(scale, params))
    return float(out) if scalar else out


def _fk_intervals(scale: ScaleParams, params: ConstructionParams, lo: float, hi: float):
    Kb = _fk_inner(scale, params)
    B = scale.B
    h = 0.5 / Kb
    half = (B - 1) // 2
    out = []
    for a in range(max(math.ceil(B * lo - h), -half), min(math.floor(B * hi + h), half) + 1):
        u, v = (a - h) / B, (a + h) / B
        if v > lo and u < hi:
            out.append((max(u, lo), min(v, hi)))
    return out


def _h1_values(scale: ScaleParams, params: ConstructionParams, count: int, spec: QuadratureSpec):
    M, b = scale.M, params.beta
    den = len(scale.window) + M ** b + 1
    vals, errs = bumps.transform_progression(1.0 / _fk_inner(scale, params), count, spec,
                                             squared=True)
    w = (1 + M ** b) / den
    return w * vals, w * errs


def h1_spectrum(scale: ScaleParams, params: ConstructionParams, S_max: int,
                spec: QuadratureSpec = DEFAULT_QUADRATURE) -> SparseSpectrum:
    """h1^(s) = (1 + M^beta)/(|P| + M^beta + 1) (F^2)^(s / (B M^(1+alpha-beta))) on B Z."""
    _require_odd(scale)
    B = scale.B
    m = S_max // B
    vals, errs = _h1_values(scale, params, m + 1, spec)
    M, b = scale.M, params.beta
    w = (1 + M ** b) / (len(scale.window) + M ** b + 1)
    Kb = _fk_inner(scale, params)
    tail = 2 * w * bumps.lattice_tail(1.0 / Kb, m, squared=True)
    idx = B * np.arange(m + 1)
    ledger = TailLedger((("h1: transform quadrature", float(errs.max())),))
    return SparseSpectrum(idx, vals.astype(complex), S_max, tail_bound=tail, ledger=ledger,
                          lattices=(("B", B),), label=f"h1_{scale.k}",
                          err_l1=float(2 * errs.sum() - errs[0]), tail_sup=w * bumps.decay_constants(True)[0])


def h22_vanishes(scale: ScaleParams, params: ConstructionParams) -> bool:
    """True when the beta = 0 split leaves h_{2,2} supported where F0 vanishes.

    With beta = 0 the progression modulus B is itself one of the primes and
    both bump families have inner scale K.  A p-bump (p != B) at r/p meets a
    B-bump at a/B only if |r B - a p| < (p + B)/(2K); below 1 this forces
    r = a = 0, so h_{2,2} lives in |x| < 1/(2 K min(p, B)), inside the gap
    |x| < 1/8 of the split bump F0.
    """
    if params.beta != 0 or not scale.odd:
        return False
    K = scale.M ** (1 + params.alpha)
    pmax = max(scale.window.primes)
    pmin = min(min(scale.window.primes), scale.B)
    return (pmax + scale.B) / (2 * K) < 1 and 1 / (2 * K * pmin) < 0.125


def h2_spectrum(scale: ScaleParams, params: ConstructionParams, S_max: int,
                spec: QuadratureSpec = DEFAULT_QUADRATURE, n_tol: float = 1e-14) -> SparseSpectrum:
    """h2^ on |s| <= S_max by the residue-class double sum.

    h2^(s) = 1/(K' den) sum_p sum_{n = a_{s,p} (mod p)} F^(n/K') F^((s - B n)/(p K))
    with K' = M^(1+alpha-beta), den = |P| + M^beta + 1 and a_{s,p} = s B^-1 mod p.
    When B is one of the primes (beta = 0) its term is h1^/2 in closed form.
    The n-sum is cut at |n| <= n_max with n_max/K' beyond the point where the
    decay majorant falls below n_tol; the cut is charged to the ledger.
    """
    _require_odd(scale)
    M, a_, b = scale.M, params.alpha, params.beta
    K = M ** (1 + a_)
    Kb = _fk_inner(scale, params)
    B = scale.B
    den = len(scale.window) + M ** b + 1
    # n_max: F^(n/K') below n_tol from here on
    x = 1.0
    while float(bumps.decay_majorant(x)) > n_tol:
        x *= 1.25
    n_max = int(math.ceil(x * Kb))
    Fn, En = bumps.transform_progression(1.0 / Kb, n_max + 1, spec)
    primes = [p for p in scale.window.primes if p != B]
    J = (S_max + B * n_max) // min(primes) + 2 if primes else 0
    Fm, Em = bumps.transform_progression(1.0 / K, J + 1, spec) if primes else (np.zeros(1), np.zeros(1))
    Fm_full = np.concatenate([Fm[:0:-1], Fm])
    Em_full = np.concatenate([Em[:0:-1], Em])
    Fn_abs = np.abs(Fn)
    out = np.zeros(S_max + 1, dtype=complex)
    err = np.zeros(S_max + 1)
    s_all = np.arange(S_max + 1)
    for p in primes:
        Binv = pow(B, -1, p)
        j = np.arange(-(n_max // p) - 1, n_max // p + 2)
        for r in range(p):
            ss = s_all[(s_all * Binv) % p == r]
            n = r + p * j
            n = n[np.abs(n) <= n_max]
            fn = Fn[np.abs(n)]
            en = En[np.abs(n)]
            mm = (ss[:, None] - B * n[None, :]) // p
            fm = Fm_full[mm + J]
            out[ss] += (fm * fn[None, :]).sum(axis=1)
            err[ss] += (np.abs(fm) * en[None, :] + Em_full[mm + J] * Fn_abs[np.abs(n)][None, :]).sum(axis=1)
    scale_f = 1.0 / (Kb * den)
    out *= scale_f
    err *= scale_f
    cut = len(primes) * 2 * bumps.lattice_tail(1.0 / Kb, n_max) * scale_f
    if B in scale.window.primes:
        h1v, h1e = _h1_values(scale, params, S_max // B + 1, spec)
        out[::B] += 0.5 * h1v
        err[::B] += 0.5 * h1e
    # beyond S_max: the residue sum is bounded through the decay of the p-factor
    tail = _h2_tail_bound(scale, params, S_max, n_max, Fn_abs)
    ledger = TailLedger((("h2: transform quadrature", float(err.max())),
                         ("h2: residue-sum cut", float(cut))))
    return SparseSpectrum.from_half(out, radius=S_max, tail_bound=tail, ledger=ledger,
                                    label=f"h2_{scale.k}", err_l1=float(2 * (err + cut).sum()),
                                    tail_sup=float(np.abs(out).max()) + float(err.max() + cut))


def _h2_tail_bound(scale: ScaleParams, params: ConstructionParams, S: int, n_max: int,
                   Fn_abs: np.ndarray) -> float:
    """Bound on sum_{|s| > S} |h2^(s)| through the residue-sum representation.

    Writing s = B n + p m, the terms with |s| > S and a fixed n need
    |m| > (S - B|n|)/p, whose majorant sum is a lattice tail in steps 1/K.
    """
    M, a_, b = scale.M, params.alpha, params.beta
    K = M ** (1 + a_)
    Kb = _fk_inner(scale, params)
    B = scale.B
    den = len(scale.window) + M ** b + 1
    c0 = bumps.decay_constants()[0]
    full = c0 + 2 * bumps.lattice_tail(1.0 / K, 0)
    n = np.arange(n_max + 1)
    mult = np.where(n == 0, 1.0, 2.0)
    tot = 0.0
    for p in scale.window.primes:
        if p == B:
            continue
        J = (S - B * n) // p
        cache: dict = {}
        T = np.empty(len(n))
        for i, j in enumerate(J):
            j = int(j)
            if j not in cache:
                cache[j] = full if j < 1 else 2 * bumps.lattice_tail(1.0 / K, j)
            T[i] = cache[j]
        tot += float(np.sum(mult * Fn_abs * T)) + 2 * bumps.lattice_tail(1.0 / Kb, n_max) * full
    tot /= Kb * den
    if B in scale.window.primes:
        w = 2.0 / den
        tot += 0.5 * 2 * w * bumps.lattice_tail(1.0 / Kb, S // B, squared=True)
    return float(tot)


def gf_quadrature(scale: ScaleParams, params: ConstructionParams, s_list,
                  spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Oracle: int g_k f_k exp(-2 pi i s x) dx by composite Gauss-Legendre on each f_k bump."""
    s_arr = np.asarray(list(s_list), dtype=float)
    out = np.zeros(len(s_arr), dtype=complex)
    xg, wg = bumps._gl_rule(spec.nodes_per_panel)
    for (u, v) in _fk_intervals(scale, params, -0.5, 0.5):
        brk = sorted({u, v, *(t for pc in bump_intervals(scale, params, u, v) for t in pc)})
        for lo, hi in zip(brk[:-1], brk[1:]):
            if hi <= lo:
                continue
            edges = np.linspace(lo, hi, 5)
            for e0, e1 in zip(edges[:-1], edges[1:]):
                x = 0.5 * (e1 - e0) * xg + 0.5 * (e0 + e1)
                w = 0.5 * (e1 - e0) * wg * eval_g(scale, params, x) * f_k_density(scale, params, x)
                out += np.exp(-2j * np.pi * np.outer(s_arr, x)) @ w
    return out


def spectra_h1_h2(scale: ScaleParams, params: ConstructionParams, S_max: int,
                  spec: QuadratureSpec = DEFAULT_QUADRATURE) -> tuple[SparseSpectrum, SparseSpectrum]:
    """(h1^, h2^) on |s| <= S_max with g_k f_k = h1 + h2."""
    return h1_spectrum(scale, params, S_max, spec), h2_spectrum(scale, params, S_max, spec)


def h2_decay_constant(h2: SparseSpectrum, scale: ScaleParams, params: ConstructionParams) -> float:
    """Smallest c with |h2^(s)| <= c (1 + M^(beta-alpha)) M^-1 (1 + |s|/M^(2+alpha))^-10 on the stored range."""
    M, a_, b = scale.M, params.alpha, params.beta
    s = h2.index.astype(float)
    env = (1 + M ** (b - a_)) / M * (1 + s / M ** (2 + a_)) ** -10
    return float(np.max(np.abs(h2.values) / env))


def _fk_mu_nodes(stage: StageMeasure, scale: ScaleParams, sub: int = 4, nodes: int = 20):
    """Quadrature nodes on supp(f_k) within the stage support, with density weights."""
    params = stage.params
    xg, wg = bumps._gl_rule(nodes)
    xs, ws = [], []
    for a, b, brk in support_cells(stage):
        for u, v in _fk_intervals(scale, params, a, b):
            edges = sorted({u, v, *(t for t in brk if u < t < v)})
            for lo, hi in zip(edges[:-1], edges[1:]):
                br = np.linspace(lo, hi, sub + 1)
                for e0, e1 in zip(br[:-1], br[1:]):
                    xs.append(0.5 * (e1 - e0) * xg + 0.5 * (e0 + e1))
                    ws.append(0.5 * (e1 - e0) * wg)
    if not xs:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    x = np.concatenate(xs)
    w = np.concatenate(ws) * eval_stage_density(stage, x)
    return x, w, f_k_density(scale, params, x)


def _nudft(x: np.ndarray, w: np.ndarray, omega: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.zeros(len(omega), dtype=complex)
    for i in range(0, len(omega), chunk):
        om = omega[i:i + chunk]
        out[i:i + chunk] = np.exp(-2j * np.pi * np.outer(om, x)) @ w
    return out


def xi_grid(M: float, per_unit: int = 32) -> np.ndarray:
    """Points -1/2 + j/per_unit (j = 0..per_unit) with |xi| <= min((log M)^-3, 1/2)."""
    lim = min(math.log(M) ** -3, 0.5)
    g = -0.5 + np.arange(per_unit + 1) / per_unit
    return g[np.abs(g) <= lim + 1e-15]


@dataclass(frozen=True, eq=False)
class RestrictionExperiment:
    k: int
    l: int
    p: float
    q: float
    M: float
    beta: float
    B: int
    h1: SparseSpectrum
    h2: SparseSpectrum | None
    m_max: int
    xi: tuple[float, ...]
    lattice_spatial: np.ndarray  # F(f_k mu_l)(B m), m = 0..m_max, by quadrature
    lattice_spectral: np.ndarray  # the same by sparse convolution
    spectral_error: float  # certified pointwise error of lattice_spectral
    numerator: float
    denominator: float
    lq_norm_q: float  # int f_k^q dmu_l
    quadrature_delta: float  # relative change of numerator or L^q norm under node doubling
    split_used: bool
    ledger: TailLedger = field(default_factory=TailLedger)
    fitted_exponent: float | None = None

    def __post_init__(self):
        if not self.p > 1 or not self.q >= 1:
            raise DomainError(f"need p > 1 and q >= 1, got p={self.p}, q={self.q}")
        if self.k % 2 == 0 or self.l <= self.k:
            raise DomainError("need k odd and l > k")

    @property
    def ratio(self) -> float:
        return self.numerator / self.denominator if self.denominator > 0 else math.inf

    @property
    def lower_bound_constant(self) -> float:
        """min over |m| <= m_max of |F(f_k mu_l)(B m)| / (log M M^-1 (1 + M^beta))."""
        return self.lower_constant_of(self.lattice_spectral)

    def lower_constant_of(self, vals) -> float:
        env = math.log(self.M) / self.M * (1 + self.M ** self.beta)
        return float(np.min(np.abs(vals)) / env)

    @property
    def lq_constant(self) -> float:
        """c' with int f_k^q dmu_l = c' log^3(M) M^(beta-1)."""
        return self.lq_norm_q / (math.log(self.M) ** 3 * self.M ** (self.beta - 1))

    @property
    def log_factor(self) -> float:
        """(log M)^(1 - 3/p - 3/q), the logarithmic factor of the ratio bound."""
        return math.log(self.M) ** (1 - 3 / self.p - 3 / self.q)

    def to_json(self) -> dict:
        return {
            "k": self.k, "l": self.l, "p": self.p, "q": self.q, "M_k": self.M, "B_k": self.B,
            "m_max": self.m_max, "xi_grid": list(self.xi),
            "numerator": self.numerator, "denominator": self.denominator, "ratio": self.ratio,
            "lower_bound_constant": self.lower_bound_constant,
            "lq_constant": self.lq_constant,
            "lattice_route_max_diff": float(np.max(np.abs(self.lattice_spatial - self.lattice_spectral))),
            "spectral_error_bound": self.spectral_error,
            "quadrature_delta": self.quadrature_delta,
            "beta0_split_used": self.split_used,
            "ledger": self.ledger.to_json(),
            "fitted_exponent": self.fitted_exponent,
        }


def _add_spectra(A: SparseSpectrum, B: SparseSpectrum, label: str) -> SparseSpectrum:
    R = min(A.radius, B.radius)
    vals = A.half_dense(R) + B.half_dense(R)
    return SparseSpectrum.from_half(
        vals, radius=R, tail_bound=A.l1_beyond(R + 1) + B.l1_beyond(R + 1),
        ledger=A.ledger.merged(B.ledger), label=label, err_l1=A.err_l1 + B.err_l1,
        rel_error=max(A.rel_error, B.rel_error),
        tail_sup=A.sup_beyond(R + 1) + B.sup_beyond(R + 1))


def _h1_radius(scale: ScaleParams, params: ConstructionParams, tol: float) -> int:
    """Smallest multiple of B past which the l1 tail of h1^ is below tol."""
    Kb = _fk_inner(scale, params)
    M, b = scale.M, params.beta
    w = (1 + M ** b) / (len(scale.window) + M ** b + 1)
    j = int(Kb)
    while 2 * w * bumps.lattice_tail(1.0 / Kb, j, squared=True) > tol:
        j = int(j * 1.25) + 1
    return scale.B * j


@dataclass(frozen=True)
class _SpatialRatio:
    numerator: float
    lattice: np.ndarray
    lq_norm_q: float
    delta: float  # relative change of numerator or denominator under node doubling


def _spatial_ratio(stage: StageMeasure, scale: ScaleParams, p: float, q: float, m_max: int,
                   xi: np.ndarray, per_unit: int, sub: int, nodes: int) -> _SpatialRatio:
    B = scale.B
    m = np.arange(-m_max, m_max + 1)
    omega = (B * m[:, None] + xi[None, :]).ravel()
    results = []
    for sb in (sub, 2 * sub):
        x, w, fk = _fk_mu_nodes(stage, scale, sb, nodes)
        vals = _nudft(x, w * fk, omega).reshape(len(m), len(xi))
        num = float(np.sum(np.abs(vals) ** p) / per_unit) ** (1 / p)
        i0 = int(np.argmin(np.abs(xi)))
        lat = vals[m_max:, i0]
        results.append((num, lat, float(np.sum(w * fk ** q))))
    (n1, _, q1), (n2, lat2, q2) = results
    return _SpatialRatio(n2, lat2, q2, max(abs(n2 - n1) / n2, abs(q2 - q1) / q2 if q2 else 0.0))


@lru_cache(maxsize=8)
def _spectral_lattice(params: ConstructionParams, schedule: tuple, k: int, l: int,
                      opts: StageOptions, tail_tol: float):
    """Lattice values F(f_k mu_l)(B m), 0 <= m <= m_max, by sparse convolution."""
    scale = schedule[k - 1]
    B = scale.B
    CF = bumps.plateau_bump().plateau_constant
    m_max = int(math.floor(_fk_inner(scale, params) / CF))
    S_out = B * m_max

    split = h22_vanishes(scale, params)
    R1 = _h1_radius(scale, params, tail_tol)
    h1 = h1_spectrum(scale, params, R1, opts.quadrature)
    h2 = None
    if split:
        hk = h1
        factor = 1.5
    else:
        h2 = h2_spectrum(scale, params, R1, opts.quadrature)
        hk = _add_spectra(h1, h2, f"h1+h2_{k}")
        factor = 1.0
    nu = build_stage(params, schedule, l, omit=k, S_max=R1 + S_out, opts=opts)
    conv, _ = convolve(hk, nu.cached_spectrum, S_out, label=f"f_{k} mu_{l}")
    lattice_spectral = factor * conv.get(B * np.arange(m_max + 1))
    lattice_spectral.setflags(write=False)
    spectral_error = factor * conv.error_bound
    ledger = TailLedger(tuple((name, factor * v) for name, v in conv.ledger.entries))
    if ledger.total > opts.budget:
        raise TruncationBudgetExceeded(
            f"restriction k={k}, l={l}: ledger total {ledger.total:.3e} exceeds budget {opts.budget:.3e}",
            ledger.total, opts.budget)

    return m_max, h1, h2, lattice_spectral, spectral_error, ledger, split


def run_restriction(params: ConstructionParams, schedule, k: int, l: int, p: float, q: float,
                    opts: StageOptions | None = None, per_unit: int = 32, sub: int = 4,
                    nodes: int = 20, tail_tol: float = 1e-10) -> RestrictionExperiment:
    """Both routes to F(f_k mu_l) on the lattice B_k m plus the L^p/L^q ratio.

    Spatial route: Gauss-Legendre nodes on supp(f_k) inside the stage support,
    evaluated at B m + xi by a direct nonuniform DFT; this gives the
    numerator, the denominator and the lattice values.

    Spectral route: f_k mu_l = (h1 + h2) nu with nu = mu_{l} without its k-th
    factor, so the lattice values are (h1^ + h2^) * nu^ by sparse convolution.
    When ``h22_vanishes`` holds (beta = 0) this is exactly (3/2) h1^ * nu^.
    """
    opts = opts or StageOptions()
    schedule = tuple(schedule)
    if not 1 <= k < l <= len(schedule):
        raise DomainError(f"need 1 <= k < l <= {len(schedule)}, got k={k}, l={l}")
    scale = schedule[k - 1]
    _require_odd(scale)
    if not p > 1 or not q >= 1:
        raise DomainError(f"need p > 1 and q >= 1, got p={p}, q={q}")
    M, B = scale.M, scale.B
    m_max, h1, h2, lattice_spectral, spectral_error, ledger, split = _spectral_lattice(
        params, schedule, k, l, opts, tail_tol)
    stage = build_stage(params, schedule, l, S_max=64, opts=opts)
    xi = xi_grid(M, per_unit)
    sp = _spatial_ratio(stage, scale, p, q, m_max, xi, per_unit, sub, nodes)
    return RestrictionExperiment(
        k=k, l=l, p=p, q=q, M=M, beta=params.beta, B=B, h1=h1, h2=h2, m_max=m_max,
        xi=tuple(float(v) for v in xi), lattice_spatial=sp.lattice,
        lattice_spectral=lattice_spectral, spectral_error=spectral_error,
        numerator=sp.numerator, denominator=sp.lq_norm_q ** (1 / q), lq_norm_q=sp.lq_norm_q,
        quadrature_delta=sp.delta, split_used=split, ledger=ledger)


def extension_ratio(exp: RestrictionExperiment, stage_l: StageMeasure, per_unit: int = 32,
                    sub: int = 4, nodes: int = 20) -> float:
    """||F(f_k mu_l)||_{L^p} over the lattice neighbourhoods divided by ||f_k||_{L^q(mu_l)}."""
    if stage_l.l != exp.l or stage_l.omitted_scale is not None:
        raise DomainError("stage must be the full stage l of the experiment")
    scale = stage_l.schedule[exp.k - 1]
    if scale.M != exp.M or scale.B != exp.B:
        raise DomainError("stage schedule does not match the experiment")
    xi = np.array(exp.xi)
    sp = _spatial_ratio(stage_l, scale, exp.p, exp.q, exp.m_max, xi, per_unit, sub, nodes)
    return sp.numerator / sp.lq_norm_q ** (1 / exp.q)


def restriction_target(alpha: float, beta: float, p: float, q: float) -> float:
    lead = (1 - beta) if beta >= 0 else 1.0
    return lead * (1 / q - 1) + (alpha - beta + 1) / p


def fit_restriction_exponent(exps, alpha: float, half_width: float = 0.25,
                             log_corrected: bool = False) -> ExponentReport:
    """Slope of log ratio against log M_k; optionally after dividing out (log M)^(1-3/p-3/q)."""
    exps = sorted(exps, key=lambda e: e.M)
    if len({(e.p, e.q, e.beta) for e in exps}) != 1:
        raise DomainError("experiments must share p, q and beta")
    e0 = exps[0]
    c = restriction_target(alpha, e0.beta, e0.p, e0.q)
    ys = [e.ratio / (e.log_factor if log_corrected else 1.0) for e in exps]
    return fit_power_law([e.M for e in exps], ys, (c - half_width, c + half_width),
                         label="restriction ratio" + (" (log-corrected)" if log_corrected else ""))


# ---------------------------------------------------------------- exponent algebra


def p_star(a: float, b: float, d: float) -> float:
    """(4d - 4a + 2b)/b."""
    if not (a > 0 and b > 0):
        raise DomainError(f"need a > 0 and b > 0, got a={a}, b={b}")
    return (4 * d - 4 * a + 2 * b) / b


def p_plus(alpha: float, beta: float, q: float) -> float:
    """(q/(q-1)) (1 + alpha - beta)/(1 - beta)."""
    if not q > 1:
        raise DomainError(f"need q > 1, got q={q}")
    if not beta < 1:
        raise DomainError(f"need beta < 1, got beta={beta}")
    return q / (q - 1) * (1 + alpha - beta) / (1 - beta)


def p_minus(alpha: float, beta: float, q: float) -> float:
    """(q/(q-1)) (1 + alpha - beta)."""
    if not q > 1:
        raise DomainError(f"need q > 1, got q={q}")
    return q / (q - 1) * (1 + alpha - beta)


def critical_exponents(alpha: float, beta: float, q: float = 2.0) -> dict:
    """p_+ or p_- for the construction and p_* at the matching (a, b, d = 1).

    For beta >= 0, a = 2/(2+alpha) and b = 2(1-beta)/(2+alpha) with p_+;
    for beta < 0, a = (2+beta)/(2+alpha) and b = 2/(2+alpha) with p_-.
    At q = 2 the returned p_+ or p_- equals p_*(a, b, 1).
    """
    if beta >= 0:
        a = 2 / (2 + alpha)
        b = 2 * (1 - beta) / (2 + alpha)
        out = {"a": a, "b": b, "p_plus": p_plus(alpha, beta, q)}
    else:
        a = (2 + beta) / (2 + alpha)
        b = 2 / (2 + alpha)
        out = {"a": a, "b": b, "p_minus": p_minus(alpha, beta, q)}
    out["p_star"] = p_star(a, b, 1)
    return out


# ---------------------------------------------------------------- single-scale certificates


def g_quadrature(scale: ScaleParams, params: ConstructionParams, s_list,
                 spec: QuadratureSpec = DEFAULT_QUADRATURE) -> np.ndarray:
    """Oracle: int g_k(x) exp(-2 pi i s x) dx, Gauss-Legendre on every bump support."""
    s_arr = np.asarray(list(s_list), dtype=float)
    out = np.zeros(len(s_arr), dtype=complex)
    xg, wg = bumps._gl_rule(spec.nodes_per_panel)
    pieces = bump_intervals(scale, params, -0.5, 0.5)
    cuts = sorted({t for pc in pieces for t in pc})
    for u, v in _merge(pieces):
        brk = [t for t in cuts if u <= t <= v]
        for lo, hi in zip(brk[:-1], brk[1:]):
            edges = np.linspace(lo, hi, spec.panels + 1)
            x = (0.5 * (edges[1:] - edges[:-1])[:, None] * xg[None, :]
                 + 0.5 * (edges[1:] + edges[:-1])[:, None]).ravel()
            w = np.repeat(0.5 * (edges[1:] - edges[:-1]), len(xg)) * np.tile(wg, spec.panels)
            out += np.exp(-2j * np.pi * np.outer(s_arr, x)) @ (w * eval_g(scale, params, x))
    return out


@dataclass(frozen=True)
class DecayCertificate:
    k: int
    S_max: int
    sup_abs: float
    worst_ratio: float  # max over 0 < |s| <= S_max of (|g^(s)| + err) / bound(s)
    witness: int | None
    vanishing_band_ok: bool
    band_end: int

    @property
    def passed(self) -> bool:
        return self.sup_abs <= 1 and self.worst_ratio <= 1 and self.vanishing_band_ok

    def to_json(self) -> dict:
        return {"k": self.k, "S_max": self.S_max, "sup_abs": self.sup_abs,
                "worst_ratio": self.worst_ratio, "witness": self.witness,
                "vanishing_band_ok": self.vanishing_band_ok, "band_end": self.band_end,
                "passed": self.passed}


def g_decay_certificate(scale: ScaleParams, params: ConstructionParams, S_max: int,
                        spec: QuadratureSpec = DEFAULT_QUADRATURE) -> DecayCertificate:
    """|g^| <= 1 and |g^(s)| <= 2D((1+beta)^-1 + 1) log|s| M^-1 (1 + M^beta) on 0 < |s| <= S_max.

    Stored values are inflated by the spectrum's certified pointwise error.
    The vanishing band 1 <= |s| < min(M, M^(1+beta)) is checked for exact zeros.
    """
    G = g_spectrum(scale, params, S_max, spec)
    M, b = scale.M, params.beta
    vals = np.abs(G.half_dense(S_max))
    s = np.arange(S_max + 1)
    err = G.error_bound
    # g^(0) = 1 is exact; elsewhere stored values carry the certified error
    sup = max(float(vals[0]), float(vals[1:].max() + err) if S_max >= 1 else 0.0)
    ratio = 0.0
    wit = None
    if S_max >= 2:
        env = 2 * params.D * (1 / (1 + b) + 1) * np.log(s[2:]) / M * (1 + M ** b)
        r = (vals[2:] + err) / env
        i = int(np.argmax(r))
        ratio, wit = float(r[i]), int(s[2:][i])
    # s = +-1: log|s| = 0, so the bound demands an exact zero
    if S_max >= 1 and vals[1] != 0:
        ratio, wit = math.inf, 1
    end = math.ceil(min(M, M ** (1 + b)))
    band = vals[1:min(end, S_max + 1)]
    return DecayCertificate(scale.k, S_max, sup, ratio, wit, bool(np.all(band == 0)), end)
