from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cantorspec import bumps
from cantorspec.bumps import (
    QuadratureSpec, decay_constants, decay_majorant, derivative_sup_bounds, eval_derivative,
    eval_profile, integrate, plateau_bump, split_bump, squared_transform, transform,
    transform_array, transform_progression,
)

# independent high-precision values (mpmath quadrature, 30 digits)
F_AT_0 = 1.65713767973821030
F_HAT_7_3 = -0.00137554995979955812
F_HAT_0_02 = 0.99968793059603246
F2_HAT_0 = 1.35023362601939506


@pytest.fixture(scope="module")
def F():
    return plateau_bump()


@pytest.fixture(scope="module")
def F0():
    return split_bump()


def test_profile_value_and_support(F, F0):
    assert eval_profile(F, 0.0) == pytest.approx(F_AT_0, rel=1e-14)
    assert eval_profile(F, 0.5) == 0.0
    assert eval_profile(F, -0.7) == 0.0
    assert eval_profile(F0, 0.0) == 0.0
    assert eval_profile(F0, 0.25) == pytest.approx(2 * F_AT_0, rel=1e-14)
    x = np.linspace(-0.49, 0.49, 101)
    assert np.allclose(eval_profile(F, x), eval_profile(F, -x))


def test_normalization(F, F0):
    assert integrate(lambda x: eval_profile(F, x), -0.5, 0.5) == pytest.approx(1.0, abs=1e-12)
    assert integrate(lambda x: eval_profile(F0, x), -0.5, 0.5,
                     breakpoints=[-0.375, -0.125, 0.125, 0.375]) == pytest.approx(1.0, abs=1e-12)
    assert transform(F, 0.0) == pytest.approx(1.0, abs=1e-13)


def test_transform_frozen_values(F):
    v = transform(F, 7.3)
    assert v.imag == 0.0
    assert v.real == pytest.approx(F_HAT_7_3, abs=1e-12)
    assert transform(F, 0.02).real == pytest.approx(F_HAT_0_02, abs=1e-13)
    assert transform(F, -7.3) == transform(F, 7.3)


def test_squared_transform_at_zero(F):
    assert squared_transform(0.0) == pytest.approx(F2_HAT_0, rel=1e-12)
    assert F.squared_at_zero == pytest.approx(F2_HAT_0, rel=1e-12)


def test_split_transform_relation(F, F0):
    xi = np.array([0.0, 0.3, 1.7, 5.0, 22.25, 103.0])
    lhs = transform_array(F0, xi)
    rhs = transform_array(F, xi / 4) * np.cos(np.pi * xi / 2)
    assert np.allclose(lhs, rhs, atol=1e-15)
    # direct spatial quadrature of F0 against cos
    for x in (0.3, 1.7, 5.0):
        direct = integrate(lambda t: eval_profile(F0, t) * np.cos(2 * np.pi * x * t), -0.5, 0.5,
                           breakpoints=[-0.375, -0.125, 0.125, 0.375])
        assert transform(F0, x).real == pytest.approx(direct, abs=1e-12)


def test_plateau_constant(F):
    assert F.plateau_constant >= 1.0
    xi = np.linspace(0, F.plateau_constant, 400)
    assert np.all(bumps.squared_transform_array(xi) >= F.plateau_floor)
    assert F.plateau_floor == pytest.approx(F2_HAT_0 / 2, rel=1e-12)


def test_derivative_bounds_nondecreasing(F):
    c = F.derivative_bounds
    assert len(c) == bumps.N_MAX + 1
    assert all(b >= a for a, b in zip(c, c[1:]))
    assert c[0] >= F_AT_0


def test_second_derivative_bound_vs_finite_differences(F):
    x = np.linspace(-0.5, 0.5, 400_001)
    h = x[1] - x[0]
    f = eval_profile(F, x)
    d1 = np.gradient(f, h)
    d2 = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
    fd = max(np.max(np.abs(f)), np.max(np.abs(d1)), np.max(np.abs(d2)))
    assert abs(F.derivative_bounds[2] - fd) <= 0.05 * fd


def test_derivative_matches_finite_difference(F):
    x = np.linspace(-0.45, 0.45, 37)
    h = 1e-6
    for n in (1, 2, 3):
        fd = (eval_derivative(F, x + h, n - 1) - eval_derivative(F, x - h, n - 1)) / (2 * h)
        assert np.allclose(eval_derivative(F, x, n), fd, rtol=1e-5, atol=1e-4)


def test_derivative_bounds_rejects_large_order(F):
    with pytest.raises(ValueError):
        derivative_sup_bounds(F, N_max=bumps.N_MAX + 1)


@given(st.floats(min_value=1.0, max_value=1e4), st.integers(min_value=0, max_value=8))
def test_decay_certificate(xi, N):
    c = decay_constants()
    v = abs(transform(plateau_bump(), xi).real)
    assert v <= c[N] * xi ** -N
    # orders above 8 fall below the computed values' own rounding floor at xi ~ 1e4
    assert v <= min(c[n] * xi ** -n for n in range(9))


@given(st.floats(min_value=1.0, max_value=500.0), st.integers(min_value=0, max_value=6))
def test_decay_certificate_squared(xi, N):
    c = decay_constants(squared=True)
    assert abs(squared_transform(xi)) <= c[N] * xi ** -N


def test_majorant_nonincreasing():
    xi = np.geomspace(1e-3, 1e5, 2000)
    m = decay_majorant(xi)
    assert np.all(np.diff(m) <= 0)


@pytest.mark.parametrize("step,count", [(0.37, 3000), (1 / 121, 40_000), (0.013, 300)])
def test_progression_matches_gauss_legendre(step, count):
    vals, err = transform_progression(step, count)
    xi = np.arange(count) * step
    gl = transform_array(plateau_bump(), xi)
    diff = np.abs(vals - gl)
    # each route carries its own error; the certified one must cover the gap up to GL noise
    assert np.all(diff <= err + 1e-14)
    assert np.max(diff) < 1e-12


def test_progression_short_path_uses_quadrature():
    vals, err = transform_progression(0.5, 20, min_fft=100)
    gl = transform_array(plateau_bump(), np.arange(20) * 0.5)
    assert np.array_equal(vals, gl)
    assert np.all(err > 0)


@pytest.mark.parametrize("k", [0, 1, 2, 5])
def test_quadrature_battery(k):
    # int_{-1/2}^{1/2} x^(2k) cos(2 pi x) dx has a closed form via repeated integration by parts;
    # compare with a fine midpoint-free analytic evaluation through numpy polynomial integration
    poly = np.polynomial.Polynomial([0] * (2 * k) + [1])
    exact = 0.0
    # expand cos in its Taylor series; 60 terms is far past double precision on |x| <= 1/2
    for j in range(60):
        term = np.polynomial.Polynomial([0] * (2 * j) + [(-1) ** j * (2 * math.pi) ** (2 * j) / math.factorial(2 * j)])
        anti = (poly * term).integ()
        exact += anti(0.5) - anti(-0.5)
    got = integrate(lambda x: x ** (2 * k) * np.cos(2 * np.pi * x), -0.5, 0.5)
    assert got == pytest.approx(exact, abs=1e-12)


def test_quadrature_tolerance_is_honoured():
    spec = QuadratureSpec(nodes_per_panel=4, panels=1, target_rel_error=1e-10)
    got = integrate(np.exp, 0.0, 1.0, spec)
    assert got == pytest.approx(math.e - 1, rel=1e-10)


def test_transform_is_pure(F):
    a = transform_array(F, np.array([0.1, 3.0, 77.0]))
    b = transform_array(F, np.array([0.1, 3.0, 77.0]))
    assert np.array_equal(a, b)
