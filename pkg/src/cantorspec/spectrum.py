"""Sparse integer-frequency spectra and the truncated convolution engine.

A spectrum is stored for s >= 0 only; negative frequencies are the complex
conjugate mirror (all densities here are real).  Each spectrum carries

* ``tail_bound``: certified l1 mass of the amplitudes beyond ``radius``
  (both signs together),
* ``ledger``: per-source bounds on the pointwise error of the stored values,
* ``err_l1``: bound on the summed error of all stored values (both signs),
* ``tail_sup``: optional bound on sup |amplitude| beyond the radius, sharper
  than ``tail_bound`` when the amplitudes are known to be uniformly small.

``convolve`` propagates both, so the ledger total of a result is a bound on
|stored(s) - true(s)| for every |s| <= radius.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class TailLedger:
    entries: tuple[tuple[str, float], ...] = ()

    @property
    def total(self) -> float:
        return float(math.fsum(b for _, b in self.entries))

    def scaled(self, factor: float) -> "TailLedger":
        return TailLedger(tuple((lbl, b * factor) for lbl, b in self.entries))

    def merged(self, other: "TailLedger") -> "TailLedger":
        return TailLedger(self.entries + other.entries)

    def to_json(self) -> dict:
        return {"entries": [[lbl, b] for lbl, b in self.entries], "total": self.total}


@dataclass(frozen=True, eq=False)
class SparseSpectrum:
    index: np.ndarray
    values: np.ndarray
    radius: int
    tail_bound: float = 0.0
    ledger: TailLedger = field(default_factory=TailLedger)
    rel_error: float = 0.0
    lattices: tuple = ()
    label: str = ""
    err_l1: float = 0.0
    tail_sup: float | None = None

    def __post_init__(self):
        try:
            idx = np.asarray(self.index, dtype=np.int64)
        except OverflowError:
            # frequencies beyond 2^63 (stability checks at huge scales)
            idx = np.array([int(v) for v in self.index], dtype=object)
        val = np.asarray(self.values, dtype=np.complex128)
        if idx.shape != val.shape:
            raise ValueError("index and values must have equal length")
        if len(idx) and (idx[0] < 0 or idx[-1] > self.radius or np.any(np.diff(idx) <= 0)):
            raise ValueError("index must be strictly ascending within [0, radius]")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "values", val)

    # construction helpers
    @classmethod
    def from_half(cls, values, radius: int | None = None, **kw) -> "SparseSpectrum":
        """From amplitudes for s = 0..len-1; exact zeros are dropped."""
        v = np.asarray(values, dtype=np.complex128)
        nz = np.flatnonzero(v != 0)
        r = len(v) - 1 if radius is None else radius
        return cls(nz, v[nz], r, **kw)

    @classmethod
    def from_dict(cls, entries: dict, radius: int, **kw) -> "SparseSpectrum":
        keys = sorted(int(k) for k, v in entries.items() if k >= 0 and v != 0)
        # __post_init__ falls back to object indices beyond int64
        return cls(keys,
                   np.array([entries[k] for k in keys], dtype=np.complex128), radius, **kw)

    @classmethod
    def delta(cls, amplitude: complex = 1.0, at: int = 0, radius: int = 0) -> "SparseSpectrum":
        return cls(np.array([at]), np.array([amplitude]), max(radius, at))

    # queries
    @property
    def nnz(self) -> int:
        return len(self.index)

    @property
    def error_bound(self) -> float:
        return self.ledger.total

    def __getitem__(self, s: int) -> complex:
        return complex(self.get(np.array([s]))[0])

    def get(self, s) -> np.ndarray:
        """Amplitudes at integer frequencies (0 for unstored or |s| > radius)."""
        try:
            s = np.asarray(s, dtype=np.int64)
        except OverflowError:
            s = np.array([int(v) for v in np.ravel(s)], dtype=object)
        if s.dtype == object or self.index.dtype == object:
            s = s.astype(object)
        out = np.zeros(s.shape, dtype=np.complex128)
        if not self.nnz:
            return out
        a = np.abs(s)
        pos = np.minimum(np.searchsorted(self.index, a), self.nnz - 1)
        hit = self.index[pos] == a
        v = self.values[pos]
        v = np.where(s < 0, np.conj(v), v)
        return np.where(hit, v, 0)

    def half_dense(self, R: int | None = None) -> np.ndarray:
        R = self.radius if R is None else R
        out = np.zeros(R + 1, dtype=np.complex128)
        m = self.index <= R
        out[self.index[m]] = self.values[m]
        return out

    def dense(self, R: int | None = None) -> np.ndarray:
        """Signed dense array for s = -R..R (position s + R)."""
        R = self.radius if R is None else R
        half = self.half_dense(R)
        return np.concatenate([np.conj(half[:0:-1]), half])

    def signed_entries(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored frequencies of both signs, ascending, with amplitudes."""
        pos = self.index > 0
        neg_idx = -self.index[pos][::-1]
        neg_val = np.conj(self.values[pos][::-1])
        return (np.concatenate([neg_idx, self.index]),
                np.concatenate([neg_val, self.values]))

    def l1_window(self) -> float:
        """sum over stored s of both signs of |amplitude|."""
        a = np.abs(self.values)
        return float(2 * a.sum() - (a[0] if self.nnz and self.index[0] == 0 else 0.0))

    def l1_bound(self) -> float:
        """Bound on the l1 norm of the true (untruncated) amplitudes."""
        return self.l1_window() * (1 + self.rel_error) + self.err_l1 + self.tail_bound

    @property
    def sup_tail_bound(self) -> float:
        if self.tail_sup is None:
            return self.tail_bound
        return min(self.tail_sup, self.tail_bound)

    def sup_beyond(self, R: int) -> float:
        """Bound on sup |true amplitude| over |s| >= R."""
        a = np.abs(self.values[self.index >= max(R, 0)])
        stored = float(a.max()) * (1 + self.rel_error) + self.error_bound if len(a) else 0.0
        return max(stored, self.sup_tail_bound)

    def l1_beyond(self, R: int) -> float:
        """Bound on sum |true amplitude| over |s| >= R (both signs)."""
        R = max(R, 0)
        a = np.abs(self.values[self.index >= R])
        w = 2 * float(a.sum()) - (float(a[0]) if R == 0 and len(a) and self.index[0] == 0 else 0.0)
        return w * (1 + self.rel_error) + self.err_l1 + self.tail_bound

    def restricted(self, R: int) -> "SparseSpectrum":
        """Truncate to |s| <= R, moving the dropped l1 mass into the tail."""
        if R >= self.radius:
            return self
        m = self.index <= R
        dropped = np.abs(self.values[~m])
        extra = float(2 * dropped.sum()) * (1 + self.rel_error) + self.err_l1
        tsup = self.tail_sup
        if tsup is not None and len(dropped):
            tsup = max(tsup, float(dropped.max()) * (1 + self.rel_error) + self.error_bound)
        return SparseSpectrum(self.index[m], self.values[m], R, self.tail_bound + extra,
                              self.ledger, self.rel_error, self.lattices, self.label, self.err_l1,
                              tsup)

    def with_label(self, label: str) -> "SparseSpectrum":
        return SparseSpectrum(self.index, self.values, self.radius, self.tail_bound,
                              self.ledger, self.rel_error, self.lattices, label, self.err_l1,
                              self.tail_sup)

    def _canon_key(self):
        return (self.nnz, self.radius, self.values.tobytes(), self.index.tobytes())

    # serialization
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "re", "im"])
        for s, v in zip(self.index.tolist(), self.values.tolist()):
            w.writerow([s, repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "radius": int(self.radius),
            "tail_bound": self.tail_bound,
            "rel_error": self.rel_error,
            "err_l1": self.err_l1,
            "tail_sup": self.tail_sup,
            "ledger": self.ledger.to_json(),
            "lattices": [list(x) for x in self.lattices],
            "entries": [[int(s), float(v.real), float(v.imag)]
                        for s, v in zip(self.index.tolist(), self.values.tolist())],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SparseSpectrum":
        ent = doc["entries"]
        idx = np.array([e[0] for e in ent], dtype=np.int64)
        val = np.array([complex(e[1], e[2]) for e in ent], dtype=np.complex128)
        led = TailLedger(tuple((str(a), float(b)) for a, b in doc["ledger"]["entries"]))
        return cls(idx, val, int(doc["radius"]), float(doc["tail_bound"]), led,
                   float(doc.get("rel_error", 0.0)),
                   tuple(tuple(x) for x in doc.get("lattices", [])), doc.get("label", ""),
                   float(doc.get("err_l1", 0.0)), doc.get("tail_sup"))


def convolve(G: SparseSpectrum, H: SparseSpectrum, out_radius: int,
             label: str = "", track_tail: bool = True) -> tuple[SparseSpectrum, TailLedger]:
    """(G*H)(s) = sum_t G(t) H(s-t) over stored entries, for 0 <= s <= out_radius.

    The operand with fewer stored entries (ties broken by radius, then raw
    bytes) is iterated in ascending signed t; the other is laid out densely.
    Swapping the arguments therefore performs the identical floating-point
    computation, so the result is bit-for-bit commutative.

    The returned ledger bounds the pointwise error of the output against the
    untruncated convolution of the true spectra: inherited input errors,
    omitted-frequency truncation, and floating-point rounding.
    """
    A, B = sorted((G, H), key=SparseSpectrum._canon_key)
    S = int(out_radius)
    RB = B.radius
    bd = B.dense(RB)
    ts, av = A.signed_entries()
    keep = np.abs(ts) <= S + RB
    ts, av = ts[keep], av[keep]

    out = np.zeros(S + 1, dtype=np.complex128)
    babs = np.abs(bd) if track_tail else None
    absconv = np.zeros(S + 1) if track_tail else None
    real_path = not np.any(av.imag) and not np.any(bd.imag)
    if real_path:
        out_r = np.zeros(S + 1)
        bd_r = bd.real.copy()
        for t, a in zip(ts.tolist(), av.real.tolist()):
            lo = max(0, t - RB)
            hi = min(S, t + RB)
            if lo > hi:
                continue
            out_r[lo:hi + 1] += a * bd_r[lo - t + RB:hi - t + RB + 1]
            if track_tail:
                absconv[lo:hi + 1] += abs(a) * babs[lo - t + RB:hi - t + RB + 1]
        out = out_r.astype(np.complex128)
    else:
        for t, a in zip(ts.tolist(), av.tolist()):
            lo = max(0, t - RB)
            hi = min(S, t + RB)
            if lo > hi:
                continue
            out[lo:hi + 1] += a * bd[lo - t + RB:hi - t + RB + 1]
            if track_tail:
                absconv[lo:hi + 1] += abs(a) * babs[lo - t + RB:hi - t + RB + 1]

    lbl = label or "convolve"
    # omitted t beyond A's radius, and omitted s-t beyond B's radius
    # each omitted pair is charged either as (l1 of the omitted tail) x (sup of
    # the partner) or as (sup of the omitted tail) x (l1 of the partner)
    tA = min(A.tail_bound * B.sup_beyond(A.radius - S), A.sup_tail_bound * B.l1_beyond(A.radius - S))
    tB = min(B.tail_bound * A.sup_beyond(RB - S), B.sup_tail_bound * A.l1_beyond(RB - S))
    trunc = tA + tB
    l1A = A.l1_window()
    l1B = B.l1_window()
    supA = float(np.abs(A.values).max()) if A.nnz else 0.0
    supB = float(np.abs(B.values).max()) if B.nnz else 0.0
    # sum_t |B(s-t)| errA(t) <= min(max errA * |B|_1, sup|B| * sum errA)
    sB = supB * (1 + B.rel_error) + B.error_bound
    sA = supA * (1 + A.rel_error)
    fA = B.l1_bound()
    if A.error_bound > 0:
        fA = min(fA, max(sB, B.sup_tail_bound) * A.err_l1 / A.error_bound)
    fB = l1A * (1 + A.rel_error)
    if B.error_bound > 0:
        fB = min(fB, sA * B.err_l1 / B.error_bound)
    inherit_A = A.ledger.scaled(fA)
    inherit_B = B.ledger.scaled(fB)
    rel_part = (A.rel_error + B.rel_error + A.rel_error * B.rel_error) * l1A * (supB + B.error_bound)
    # recursive summation: |fl(sum) - sum| <= (n+1) eps sum |a_t b_{s-t}|
    if track_tail:
        abs_sup = float(absconv.max()) if S >= 0 else 0.0
    else:
        abs_sup = min(l1A * supB, supA * l1B)
    rounding = 1.01 * (len(ts) + 1) * _EPS * abs_sup
    entries = inherit_A.entries + inherit_B.entries + (
        (f"{lbl}: truncation", trunc),
        (f"{lbl}: relative input error", rel_part),
        (f"{lbl}: rounding", rounding),
    )
    ledger = TailLedger(tuple((k, float(v)) for k, v in entries))

    if track_tail:
        # l1 mass of G*H beyond S: pairs with an omitted factor, plus the
        # computed pairs that land beyond S
        inside = 2 * absconv.sum() - absconv[0]
        fa = 1 + A.rel_error
        fb = 1 + B.rel_error
        upA = fa * l1A + A.err_l1
        upB = fb * l1B + B.err_l1
        beyond = fa * fb * max(l1A * l1B - inside, 0.0) + (upA * upB - fa * fb * l1A * l1B)
        beyond += A.tail_bound * B.l1_bound() + B.tail_bound * A.l1_bound()
    else:
        beyond = A.l1_bound() * B.l1_bound()
    lat = tuple(sorted(set(A.lattices) | set(B.lattices))) if A.lattices and B.lattices else ()
    rel_sum = A.rel_error + B.rel_error + A.rel_error * B.rel_error
    err_l1 = (A.err_l1 * B.l1_bound() + B.err_l1 * l1A + rel_sum * l1A * l1B
              + min(A.tail_bound * B.l1_bound(), (2 * S + 1) * tA)
              + min(B.tail_bound * A.l1_bound(), (2 * S + 1) * tB)
              + 1.01 * (len(ts) + 1) * _EPS * (
                  2 * float(absconv.sum()) if track_tail else l1A * l1B))
    res = SparseSpectrum.from_half(out, radius=S, tail_bound=float(beyond), ledger=ledger,
                                   lattices=lat, label=lbl, err_l1=float(err_l1))
    return res, ledger


def sup_on_dyadic_blocks(S: SparseSpectrum, start: int = 0) -> list[tuple[tuple[int, int], float]]:
    """Max |amplitude| over each block [2^j, 2^(j+1)) up to the radius."""
    out = []
    if S.radius < 1:
        return out
    jmax = int(math.floor(math.log2(S.radius)))
    a = np.abs(S.values)
    for j in range(start, jmax + 1):
        lo, hi = 2 ** j, 2 ** (j + 1)
        m = (S.index >= lo) & (S.index < hi)
        out.append(((lo, hi), float(a[m].max()) if np.any(m) else 0.0))
    return out


def lattice_points_in(S: SparseSpectrum, modulus: int, window: tuple[int, int]) -> list[int]:
    """Multiples of modulus inside window and within the spectrum radius."""
    if modulus < 1:
        raise ValueError("modulus must be >= 1")
    lo = max(window[0], -S.radius)
    hi = min(window[1], S.radius)
    if lo > hi:
        return []
    first = -((-lo) // modulus) * modulus
    return list(range(first, hi + 1, modulus))
