from fractions import Fraction

import mpmath
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from beamcert.dd import DDC, DDReal, dd_pow, dd_scalar, phase_mod_2pi, rk4_march, two_prod, two_sum

finite = st.floats(-1e150, 1e150, allow_nan=False, allow_infinity=False)
# products stay in the normal range, where two_prod is exact
moderate = st.builds(lambda m, s: s * m, st.floats(1e-100, 1e100), st.sampled_from([-1.0, 1.0]))


@settings(deadline=None)
@given(finite, finite)
def test_two_sum_is_exact(a, b):
    s, e = two_sum(np.float64(a), np.float64(b))
    assert Fraction(float(s)) + Fraction(float(e)) == Fraction(a) + Fraction(b)


@settings(deadline=None)
@given(moderate, moderate)
def test_two_prod_is_exact(a, b):
    p, e = two_prod(np.float64(a), np.float64(b))
    assert Fraction(float(p)) + Fraction(float(e)) == Fraction(a) * Fraction(b)


def test_dd_pow_matches_mpmath():
    with mpmath.workprec(300):
        for n, e in [(13, 12), (20, -6), (17, 24)]:
            hi, lo = dd_pow(n, e)
            exact = mpmath.mpf(n) ** e
            assert abs((mpmath.mpf(hi) + mpmath.mpf(lo)) - exact) / exact < 1e-31


def test_ddc_sum_keeps_small_parts():
    big = DDC.from_complex(np.full(4, 1e16 + 0j))
    small = DDC.from_complex(np.full(4, 1.0 + 1j))
    back = (big + small) - big
    np.testing.assert_array_equal(back.to_complex(), np.full(4, 1.0 + 1j))


def test_dd_derivative_of_quartic_is_exact():
    x = np.arange(-10, 11, dtype=float) * 0.25
    f = DDReal(x ** 4)
    d = f.deriv(0, 1, dd_scalar(0.25), order=4).to_float()
    # 4th-order central stencil is exact for quartics away from the edges
    np.testing.assert_allclose(d[3:-3], 4 * x[3:-3] ** 3, rtol=0, atol=1e-12)


def test_phase_mod_2pi_against_mpmath():
    lam = float(13 ** 12)
    phi = np.array([0.1234567, -0.75, 3.3, 1e-3])
    got = phase_mod_2pi(lam, phi)
    with mpmath.workprec(400):
        for g, p in zip(got, phi):
            ref = mpmath.fmod(mpmath.mpf(lam) * mpmath.mpf(p), 2 * mpmath.pi)
            diff = mpmath.fmod(mpmath.mpf(g) - ref + 3 * mpmath.pi, 2 * mpmath.pi) - mpmath.pi
            assert abs(diff) < 1e-12


def test_rk4_march_linear_source():
    # y' = 1 with y(0) = 0 is integrated exactly
    s = np.linspace(-1, 1, 21)
    h = dd_scalar(s[1] - s[0])
    src = DDC.from_complex(np.ones((2, 21), complex))
    y = rk4_march(src, None, DDC.zeros((2,)), 10, h).to_complex()
    np.testing.assert_allclose(y, np.broadcast_to(s, (2, 21)), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(-30, 30))
def test_dd_pow_property(n, e):
    hi, lo = dd_pow(n, e)
    assert abs(lo) <= abs(hi) * 2.0 ** -52
    assert hi == float(Fraction(n) ** e)
