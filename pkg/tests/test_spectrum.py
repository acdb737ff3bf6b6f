from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cantorspec.construction import base_spectrum, g_spectrum
from cantorspec.spectrum import (
    SparseSpectrum, TailLedger, convolve, lattice_points_in, sup_on_dyadic_blocks,
)


def _rand(rng, R, density=0.5, complex_=True):
    v = rng.normal(size=R + 1) * (rng.random(R + 1) < density)
    if complex_:
        v = v + 1j * rng.normal(size=R + 1) * (v != 0)
        v[0] = v[0].real
    return SparseSpectrum.from_half(v)


def _dense_oracle(G, H, S):
    full = np.convolve(G.dense(), H.dense())
    c = G.radius + H.radius
    return full[c: c + S + 1]


spectra = st.builds(lambda seed, R, d, c: _rand(np.random.default_rng(seed), R, d, c),
                    st.integers(0, 10 ** 6), st.integers(0, 40), st.floats(0.05, 1.0), st.booleans())


def test_delta_identity():
    rng = np.random.default_rng(1)
    H = _rand(rng, 30)
    out, _ = convolve(SparseSpectrum.delta(), H, 30)
    assert np.array_equal(out.half_dense(30), H.half_dense(30))


def test_shifted_delta():
    H = SparseSpectrum.from_half([1.0, 0.5, 0.25])
    out, _ = convolve(SparseSpectrum.delta(2.0, at=3), H, 6)
    # 2 (delta_3 + delta_-3) * H
    assert out[3] == pytest.approx(2.0)
    assert out[5] == pytest.approx(0.5)
    assert out[1] == pytest.approx(0.5)
    assert out[0] == 0


@given(spectra, spectra)
def test_convolution_bit_commutative(G, H):
    S = max(G.radius, H.radius) + 3
    a, la = convolve(G, H, S)
    b, lb = convolve(H, G, S)
    assert np.array_equal(a.half_dense(S), b.half_dense(S))
    assert la.total == lb.total


@given(spectra, spectra)
def test_convolution_matches_dense_oracle(G, H):
    S = G.radius + H.radius
    out, led = convolve(G, H, S)
    ref = _dense_oracle(G, H, S)
    assert np.max(np.abs(out.half_dense(S) - ref), initial=0.0) <= led.total + 1e-12
    # exact inputs with full output radius leave nothing beyond S
    assert out.tail_bound == pytest.approx(0.0, abs=1e-9)


@given(spectra, spectra, spectra)
def test_convolution_associative(F, G, H):
    S = F.radius + G.radius + H.radius
    a, _ = convolve(convolve(F, G, F.radius + G.radius)[0], H, S)
    b, _ = convolve(F, convolve(G, H, G.radius + H.radius)[0], S)
    scale = (F.l1_window() * G.l1_window() * H.l1_window()) or 1.0
    assert np.max(np.abs(a.half_dense(S) - b.half_dense(S))) <= 1e-13 * scale


@given(spectra, spectra)
def test_hermitian_symmetry(G, H):
    S = G.radius + H.radius
    out, _ = convolve(G, H, S)
    d = out.dense(S)
    ref = np.convolve(G.dense(), H.dense())
    # the negative half reconstructed by conjugation equals the dense product there too
    assert np.allclose(d, ref, atol=1e-12)


def test_truncated_output_ledger_covers_error():
    rng = np.random.default_rng(7)
    G = _rand(rng, 50, complex_=False)
    H = _rand(rng, 50, complex_=False).restricted(20)
    out, led = convolve(G, H, 30)
    ref = _dense_oracle(G, H, 30)
    assert np.max(np.abs(out.half_dense(30) - ref)) <= led.total
    assert led.total > 0  # the dropped mass of H is charged


def test_truncation_ledger_against_untruncated_product():
    G = base_spectrum(600)
    H = G.restricted(100)
    out, led = convolve(G, H, 50)
    full, _ = convolve(G, G, 50)
    diff = np.max(np.abs(out.half_dense(50) - full.half_dense(50)))
    assert diff <= led.total


def test_dyadic_blocks():
    S = SparseSpectrum.from_dict({1: 1.0, 2: 0.5, 3: -0.75, 9: 0.1}, radius=16)
    blocks = sup_on_dyadic_blocks(S)
    assert blocks == [((1, 2), 1.0), ((2, 4), 0.75), ((4, 8), 0.0), ((8, 16), 0.1), ((16, 32), 0.0)]
    assert sup_on_dyadic_blocks(S, start=3)[0] == ((8, 16), 0.1)


def test_lattice_points_in():
    S = SparseSpectrum.delta(radius=100)
    assert lattice_points_in(S, 11, (-30, 30)) == [-22, -11, 0, 11, 22]
    assert lattice_points_in(S, 7, (95, 200)) == [98]
    assert lattice_points_in(S, 7, (101, 200)) == []
    with pytest.raises(ValueError):
        lattice_points_in(S, 0, (0, 1))


@given(st.integers(1, 50), st.integers(-200, 200), st.integers(0, 200), st.integers(0, 150))
def test_lattice_points_brute(m, lo, width, R):
    S = SparseSpectrum.delta(radius=R)
    hi = lo + width
    brute = [s for s in range(lo, hi + 1) if s % m == 0 and abs(s) <= R]
    assert lattice_points_in(S, m, (lo, hi)) == brute


def test_get_and_conjugate_mirror():
    S = SparseSpectrum.from_half([1.0, 2 + 1j, 0, 3j])
    assert S[1] == 2 + 1j
    assert S[-1] == 2 - 1j
    assert S[-3] == -3j
    assert S[2] == 0
    assert S[10] == 0
    assert S.nnz == 3


def test_invalid_index_rejected():
    with pytest.raises(ValueError):
        SparseSpectrum(np.array([3, 1]), np.array([1.0, 1.0]), 5)
    with pytest.raises(ValueError):
        SparseSpectrum(np.array([1, 9]), np.array([1.0, 1.0]), 5)


def test_big_integer_frequencies():
    big = 2 ** 70
    S = SparseSpectrum(np.array([0, big], dtype=object), np.array([1.0, 0.5]), big + 1)
    assert S[big] == 0.5
    assert S[-big] == 0.5
    assert S[big - 1] == 0


def test_json_roundtrip_and_csv():
    rng = np.random.default_rng(3)
    S = SparseSpectrum.from_half(rng.normal(size=9) + 0j, tail_bound=0.25,
                                 ledger=TailLedger((("x", 1e-9),)), label="demo")
    T = SparseSpectrum.from_json(json.loads(json.dumps(S.to_json())))
    assert np.array_equal(S.index, T.index) and np.array_equal(S.values, T.values)
    assert T.tail_bound == 0.25 and T.error_bound == 1e-9 and T.label == "demo"
    lines = S.to_csv().splitlines()
    assert lines[0] == "s,re,im"
    assert len(lines) == S.nnz + 1


def test_restricted_moves_mass_to_tail():
    S = SparseSpectrum.from_half([1.0, 0.5, 0.25, 0.125])
    R = S.restricted(1)
    assert R.radius == 1 and R.nnz == 2
    assert R.tail_bound == pytest.approx(2 * (0.25 + 0.125))
    assert R.l1_bound() >= S.l1_window()


def test_toy_g_times_base_against_direct_sum(params, sched10):
    # mu_1-hat(s) = sum_t g1(t) F0(s - t): direct double loop over the stored values
    sc = sched10[0]
    H = base_spectrum(2000)
    G = g_spectrum(sc, params, 4000)
    out, led = convolve(G, H, 200)
    gd, hd = G.dense(), H.dense()
    for s in (0, 11, -11, 13, 22, 121, 200):
        ref = sum(gd[t + G.radius] * hd[s - t + H.radius] for t in range(-G.radius, G.radius + 1)
                  if abs(s - t) <= H.radius)
        assert abs(out[s] - ref) <= 1e-10


def test_parseval_on_stage(params, sched10):
    # int |mu_1 density|^2 = sum |mu_1-hat(s)|^2; bumps of width 1e-3 need |s| up to ~6e4
    from cantorspec.bumps import integrate
    from cantorspec.construction import build_stage, eval_stage_density, support_cells
    stage10 = build_stage(params, sched10, 1, S_max=60000)
    S = stage10.cached_spectrum
    spectral = float(np.sum(np.abs(S.dense()) ** 2))
    spatial = sum(integrate(lambda x: eval_stage_density(stage10, x) ** 2, a, b, breakpoints=brk)
                  for a, b, brk in support_cells(stage10))
    assert spectral == pytest.approx(spatial, rel=1e-8)
