from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamcert.bands import (amplitude_f, band_domain, band_endpoints, cutoff_chi, make_theta,
                            overlap, plateau_endpoints, s_axis, sigma_to_z, z_to_sigma)
from beamcert.errors import BandOutsideDomain
from beamcert.geometry import DomainSpec


@given(st.integers(3, 400))
def test_band_overlap_pattern(n):
    assert overlap(n, n + 1) is not None
    assert overlap(n, n + 2) is None
    lo, hi = band_endpoints(n)
    assert lo < 1 / n < hi


@given(st.integers(3, 400))
def test_cutoff_nested_inside_band(n):
    a, b, c, d = plateau_endpoints(n)
    lo, hi = band_endpoints(n)
    assert lo < a < b < c < d < hi


def test_theta_values():
    th = make_theta()
    assert th(0.0) == pytest.approx(0.25, abs=1e-15)
    assert th(-0.125) == -0.5 and th(0.125) == 1.0
    d = th(np.array([-0.2, 0.2]), 3)
    assert np.allclose(np.array(d[1:]), 0.0, atol=1e-13)


@pytest.mark.parametrize("n", [10, 12, 16, 20])
def test_amplitude_bounds(n):
    f = amplitude_f(n)
    assert f.check_bounds() == 0
    # on the plateau of theta f_n is exactly linear in z
    sig = z_to_sigma(n, np.array([0.3, 0.4]))
    z = sigma_to_z(n, sig)
    assert np.allclose(f(sig), -n * n * (1 + z), rtol=1e-14)


def test_cutoff_derivatives_scale_like_n_squared():
    K12 = cutoff_chi(12).K
    K20 = cutoff_chi(20).K
    for N in range(5):
        assert 0.2 < K20[N] / K12[N] < 5


def test_band_outside_domain():
    with pytest.raises(BandOutsideDomain):
        band_domain(5, DomainSpec())


@settings(max_examples=40)
@given(st.floats(-3, -0.01), st.floats(0.01, 3), st.integers(5, 300))
def test_s_axis_contains_zero(sm, sp, ns):
    s, i0 = s_axis(sm, sp, ns)
    assert s[i0] == 0.0
    assert np.allclose(np.diff(s), s[1] - s[0])


def test_z_round_trip_is_exact_on_grid():
    b = band_domain(13, DomainSpec(), (129, 5, 9))
    assert np.array_equal(sigma_to_z(13, b.sigma), b.z) or \
        np.max(np.abs(sigma_to_z(13, b.sigma) - b.z)) < 1e-13
    assert b.sigma_lo == pytest.approx(float(Fraction(1, 14) + Fraction(1, 8 * 14 ** 2)))
