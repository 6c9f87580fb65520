import numpy as np
import pytest

from beamcert.eikonal import (BumpProfile, SectionSpec, construct_eikonal_from_section,
                              deform_sigma, integrate_geodesics, planar_ambient_metric,
                              planar_eikonal, pure_ads_eikonal, smooth_step, verify_eikonal)
from beamcert.errors import DeformationNotTimelike, NotUnit
from beamcert.geometry import PlanarConformal, PureAdsMetric

AX33 = [np.linspace(0.01, 0.1, 33), np.linspace(-1, 1, 33), np.linspace(-1, 1, 33)]


def test_planar_phi_closed_form():
    e = planar_eikonal([1.0])
    X = np.array([0.05, 0.3, 0.2])
    assert e.phi(X) == pytest.approx((0.3 - 0.2) / 2, abs=1e-16)
    Y = e.chart.to_adapted(X)
    assert np.allclose(Y, [0.05, 0.1, 0.2])
    assert np.allclose(e.chart.to_ambient(Y), X)


def test_planar_certification_both_charts():
    e = planar_eikonal([1.0])
    r1 = verify_eikonal(e, planar_ambient_metric(2), AX33)
    r2 = verify_eikonal(e.adapted, PlanarConformal([1.0]), AX33)
    assert r1.passed and r2.passed
    assert max(r1.null_residual, r2.gauge_residual) <= 1e-10


def test_kbar_must_be_unit():
    with pytest.raises(NotUnit):
        planar_eikonal([0.9])


def test_wrong_phase_fails_certification():
    e = planar_eikonal([1.0])
    from beamcert.geometry import ScalarField

    e.phi = ScalarField.linear([0.0, 0.5, -0.4])
    assert not verify_eikonal(e, planar_ambient_metric(2), AX33).passed


def test_pure_ads_explicit_phase():
    pe = pure_ads_eikonal([1.0, 0.0])
    ax = [np.linspace(-1, 1, 8), np.linspace(0.3, 1.2, 8),
          np.linspace(np.pi / 2 + 0.2, np.pi - 0.3, 8), np.linspace(0.2, 2.5, 8)]
    rep = verify_eikonal(pe, PureAdsMetric(3, True), ax, tol=1e-7)
    assert rep.passed, rep.to_dict()


def test_smooth_step_limits_and_symmetry():
    x = np.linspace(-0.5, 1.5, 41)
    s = smooth_step(x)
    assert np.all(s[x <= 0] == 0) and np.all(s[x >= 1] == 1)
    assert np.allclose(s + smooth_step(1 - x), 1.0)


def test_zero_bump_is_identity():
    e = planar_eikonal([1.0])
    assert deform_sigma(e, BumpProfile(0.0, [(-0.2, 0.2)], [(-0.5, 0.5)])) is e


def test_bump_in_null_coordinate_preserves_sigma_norm():
    # ybar = xbar - t has a null gradient, so g^-1(dsigma~, dsigma~) = 1 for any bump
    e = planar_eikonal([1.0])
    for amp, inner, outer in ((0.01, (-0.2, 0.2), (-0.6, 0.6)), (0.05, (-0.05, 0.05), (-0.1, 0.1))):
        d = deform_sigma(e, BumpProfile(amp, [inner], [outer]), planar_ambient_metric(2), AX33)
        assert d.meta["sigma_lower"] == pytest.approx(1.0, abs=1e-8)


def test_non_timelike_deformation_raises():
    e = planar_eikonal([1.0])
    # a bump in t alone tilts dsigma towards the time direction
    e.chart.to_adapted = lambda X: np.stack([X[..., 0], X[..., 2], X[..., 2]], -1)
    grid = [np.linspace(0.05, 0.1, 5), np.linspace(-1, 1, 5), np.linspace(-0.06, 0.06, 121)]
    with pytest.raises(DeformationNotTimelike):
        deform_sigma(e, BumpProfile(0.04, [(-0.01, 0.01)], [(-0.04, 0.04)]),
                     planar_ambient_metric(2), grid)


def test_section_construction_reproduces_planar_phase():
    sec = SectionSpec(lambda xb: np.stack([xb[..., 0], np.zeros(xb.shape[:-1])], -1),
                      [np.linspace(-0.5, 0.5, 9)], np.linspace(0.02, 0.1, 9),
                      foliation_coef=np.array([0.5]))
    d, fam, rep = construct_eikonal_from_section(planar_ambient_metric(2), sec, (-0.5, 0.5), 33)
    assert rep.flagged == 0
    assert rep.null_max < 1e-9
    amb, axes = d.meta["ambient"], d.meta["axes"]
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    assert np.max(np.abs(planar_eikonal([1.0]).phi(amb) - d.phi(Y))) < 1e-12
    assert np.ptp(fam.jacobian_log) < 1e-10
    assert len(fam.to_rows()) == fam.positions.shape[0] * fam.positions.shape[1]


@pytest.mark.parametrize("angle", [0.5, 0.9, 1.3])
def test_pure_ads_null_geodesic_returns_within_pi(angle):
    # a null geodesic leaving near the boundary comes back to it after time just under pi
    m = PureAdsMetric(3, True)
    chi0 = 1e-4
    X0 = np.array([0.0, chi0, np.pi / 2, 0.3])
    v = np.array([1.0, np.sin(angle), 0.0, np.cos(angle) / np.cos(chi0)])
    ev = lambda s, y: y[1] - chi0 * 0.999
    ev.terminal, ev.direction = True, -1
    sol = integrate_geodesics(m, X0, v, 20.0, events=ev)
    tau = sol.y_events[0][0][0]
    assert 0 < np.pi - tau < 10 * chi0 / np.sin(angle)
