import time

import numpy as np
import pytest

from beamcert.aads import (PureAdsChart, conjugate_operator, gncc_check, halton_region,
                           omega_d_from_planar, omega_d_of, pure_to_planar, support_in_half_space,
                           verify_embedding)
from beamcert.eikonal import planar_ambient_metric
from beamcert.errors import NotLorentzian, OutsideRegion
from beamcert.geometry import FGMetric

EPS = 0.3


@pytest.fixture(scope="module")
def samples():
    return halton_region(200, EPS, seed=7)


def test_samples_lie_in_region(samples):
    assert np.all(PureAdsChart(EPS).contains(samples))
    assert np.all(omega_d_of(samples) < 0)


def test_poincare_map_on_the_axis():
    # omega^d = -1 at tau = 0: rho = tan(chi / 2), t = 0, xbar = 0
    chi = 0.7
    X = np.array([[0.0, chi, np.pi - 1e-9, 0.0]])
    P = pure_to_planar(X, EPS)[0]
    assert P[0] == pytest.approx(0.0, abs=1e-12)
    assert P[1] == pytest.approx(np.tan(chi / 2), rel=1e-12)
    assert np.allclose(P[2:], 0.0, atol=1e-8)


def test_isometry_and_round_trip(samples):
    assert verify_embedding(samples, EPS) <= 1e-6
    P = pure_to_planar(samples, EPS)
    back = omega_d_from_planar(P[:, 0], P[:, 1], P[:, 2:])
    assert np.max(np.abs(back - omega_d_of(samples))) <= 1e-9


def test_flipped_sign_breaks_isometry(samples):
    assert verify_embedding(samples[:20], EPS, sign=-1.0) > 1e-2


def test_outside_region_rejected():
    with pytest.raises(OutsideRegion):
        pure_to_planar(np.array([[1.4, 0.5, 2.5, 0.0]]), EPS)


def test_support_lemma_and_its_sharpness():
    ok = support_in_half_space(EPS, 0.01, 0.01, nsample=4000)
    bad = support_in_half_space(EPS, 10.0, 0.01, nsample=4000)
    assert ok.passed and ok.margin > 0 and ok.bound_ok
    assert not bad.passed


def test_support_limit_point():
    assert omega_d_from_planar(0.0, 1e-8, np.zeros(2)) == pytest.approx(-1.0, abs=1e-12)


def test_fg_potential_matches_trace_formula():
    # for gfrak = g0 + rho^2 g2 the potential is b tr(gfrak^-1 g2)
    g0 = np.diag([-1.0, 1.0, 1.0])
    g2 = np.array([[0.3, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, -0.1]])
    op = conjugate_operator(0.3, 3, FGMetric({0: g0, 2: g2}, 3))
    X = np.array([[0.05, 0.1, 0.2, -0.3], [0.1, 0.0, 0.0, 0.0], [0.2, 0.3, 0.1, 0.2]])
    V = op.V(X)
    expect = [op.b * np.trace(np.linalg.solve(g0 + x[0] ** 2 * g2, g2)) for x in X]
    np.testing.assert_allclose(V, expect, atol=1e-8)
    assert op.xi_singular == pytest.approx(0.3 - 2.0)


def test_planar_potential_vanishes():
    op = conjugate_operator(0.3, 2, planar_ambient_metric(2))
    X = np.array([[0.05, 0.1, 0.2], [0.2, -0.4, 0.6]])
    assert np.max(np.abs(op.V(X))) < 1e-8


def _flat(m=64):
    ax = [np.linspace(-1, 1, m)] * 2
    T, X = np.meshgrid(*ax, indexing="ij")
    g0 = np.broadcast_to(np.diag([-1.0, 1.0]), (m, m, 2, 2)).copy()
    return ax, T, X, g0, np.zeros((m, m, 2, 2))


def test_gncc_flat_linear_is_zero():
    ax, T, X, g0, g2 = _flat()
    t = time.perf_counter()
    rep = gncc_check(g0, g2, 1.0 + 0.3 * T + 0.2 * X, ax)
    assert time.perf_counter() - t < 10
    assert abs(rep.margin) <= 1e-9


def test_gncc_convex_example_is_positive():
    # Hessian diag(1, 1); null directions (1, +-1) give Q(Z,Z)/|Z|^2 = 1
    ax, T, X, g0, g2 = _flat(33)
    rep = gncc_check(g0, g2, 1.0 + 0.5 * (T ** 2 + X ** 2), ax)
    assert rep.margin == pytest.approx(1.0, abs=1e-9)


def test_gncc_zero_eta():
    ax, T, X, g0, g2 = _flat(17)
    assert gncc_check(g0, g2 + 0.7, np.zeros_like(T), ax).margin == 0.0


def test_gncc_rejects_riemannian_data():
    ax, T, X, g0, g2 = _flat(9)
    with pytest.raises(NotLorentzian):
        gncc_check(np.abs(g0), g2, T, ax)
