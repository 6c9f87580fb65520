from types import SimpleNamespace

import numpy as np
import pytest

from beamcert.bands import amplitude_f, band_domain
from beamcert.errors import RootOutsideOverlap
from beamcert.geometry import DomainSpec
from beamcert.interference import (balance_constant, closed_form_root, locate_surface,
                                   surface_guess, zeta_values)


class _UnitChi:
    """chi identically one."""

    def __call__(self, sigma, nderiv=0):
        one = np.ones_like(np.asarray(sigma, float))
        return one if nderiv == 0 else [one] + [0 * one] * nderiv


def flat_beam(n, res=(65, 3, 5)):
    """A beam with unit envelope and no remainder."""
    band = band_domain(n, DomainSpec(sigma0=0.3), res)
    shape = (band.z.size, res[1], res[2])
    env = SimpleNamespace(band=band, values=np.ones(shape, complex))
    return SimpleNamespace(n=n, f=amplitude_f(n), envelope=env, chi=_UnitChi(), c0_unit=None,
                           rest=np.zeros(shape, complex))


def test_closed_form_root_n10():
    assert float(closed_form_root(10)) == pytest.approx(0.09215417, abs=5e-9)


@pytest.mark.parametrize("n", [10, 13, 19])
def test_flat_surface_matches_closed_form(n):
    surf = locate_surface(n, flat_beam(n), flat_beam(n + 1), require_plateau=(n >= 12))
    assert np.max(np.abs(surf.sfrak - float(closed_form_root(n)))) <= 1e-9
    assert np.ptp(surf.sfrak) == 0.0
    assert surf.stats["min_dphi_over_Bn"] == pytest.approx(1.0, rel=1e-6)


def test_closed_form_expansion_constant():
    for n in range(12, 21):
        assert abs(float(closed_form_root(n)) - surface_guess(n)) * n ** 3 <= 2


def test_small_index_root_leaves_plateau():
    with pytest.raises(RootOutsideOverlap) as ei:
        locate_surface(5, flat_beam(5), flat_beam(6))
    assert ei.value.context["band"] == 5


def test_balance_constant():
    assert balance_constant(12) == 12 ** 4 / 2 + 13 ** 4


def test_zeta_is_one_near_zero_and_vanishes_outside():
    x = np.array([0.0, 0.01, 0.3, 0.6])
    z = zeta_values(x, 0.25)
    assert z[0] == 1.0 and z[-1] == 0.0


def test_real_surfaces_and_sign_bounds(small_run):
    for n, s in small_run.surfaces.items():
        st = s.stats
        assert st["closed_form_dev"] <= 1e-9
        assert st["C_n"] <= 2
        assert st["max_abs_phi_over_Bn"] < 1e-12
        assert st["sign_bounds"]["pass"]
        assert s.sfrak.shape == tuple(small_run.glued.col_shape)


def test_vanishing_order_verdict(small_run):
    v = small_run.verdicts["correction_vanishing_order"]
    assert v["pass"] and v["value"] >= 2.7
