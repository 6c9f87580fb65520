import json

import numpy as np
import pytest

from beamcert.errors import SignatureError, SingularMetric, StencilOutOfDomain
from beamcert.geometry import (ConstantMetric, DomainSpec, FGMetric, GridMetric, PlanarConformal,
                               PureAdsMetric, ScalarField, box_g, christoffels, grad_g,
                               lorentz_check, make_metric)

MINK_FG = FGMetric({0: np.diag([-1.0, 1.0])}, 2)


def test_flat_box_of_quadratics():
    X = np.array([[0.3, 0.1, -0.2], [0.5, 0.4, 0.7]])
    assert np.allclose(box_g(MINK_FG, lambda Y: Y[..., 1] ** 2, X), -2.0, atol=1e-8)
    assert np.allclose(box_g(MINK_FG, lambda Y: Y[..., 0] ** 2 + Y[..., 2] ** 2, X), 4.0, atol=1e-8)


def test_box_matches_divergence_form_on_curved_metric():
    m = PureAdsMetric(3, conformal=True)
    p = np.array([0.2, 0.9, 1.1, 0.4])
    h = lambda Y: np.sin(Y[..., 0]) * np.cos(Y[..., 1]) + Y[..., 2] * Y[..., 3]
    got = box_g(m, h, p, steps=1e-3)
    # |g|^-1/2 d_a (|g|^1/2 g^ab d_b h) with nested central differences
    e = 1e-4

    def flux(Y, a):
        _, ginv, sq = m.eval(Y[None])
        grad = np.array([(h(Y + e * np.eye(4)[b]) - h(Y - e * np.eye(4)[b])) / (2 * e)
                         for b in range(4)])
        return sq[0] * ginv[0, a] @ grad

    div = sum((flux(p + e * np.eye(4)[a], a) - flux(p - e * np.eye(4)[a], a)) / (2 * e)
              for a in range(4))
    _, _, sq = m.eval(p[None])
    assert abs(got - div / sq[0]) < 1e-5


def test_christoffel_of_static_universe():
    # -dtau^2 + dchi^2 + cos^2(chi) (dth^2 + sin^2 th dph^2), chi measured from the boundary
    m = PureAdsMetric(3, conformal=True)
    p = np.array([0.1, 0.8, 1.0, 0.3])
    G = christoffels(m, p)
    chi = p[1]
    assert abs(G[1, 2, 2] - np.sin(chi) * np.cos(chi)) < 1e-8
    assert abs(G[2, 1, 2] + np.tan(chi)) < 1e-8
    assert np.allclose(G[0], 0.0, atol=1e-9)


def test_gradient_raises_index():
    g = grad_g(MINK_FG, ScalarField.coordinate(1, 3), np.array([0.2, 0.0, 0.0]))
    assert np.allclose(g, [0.0, -1.0, 0.0])


def test_signature_and_singularity_errors():
    with pytest.raises(SignatureError):
        lorentz_check(np.eye(3))
    with pytest.raises(SingularMetric):
        lorentz_check(np.diag([-1.0, 1.0, 0.0]))
    with pytest.raises(SignatureError):
        ConstantMetric(np.diag([-1.0, -1.0, 1.0])).eval(np.zeros(3))


def test_stencil_out_of_domain():
    m = PureAdsMetric(3, conformal=True)
    m_in = m.in_domain(np.array([0.0, 1e-3, 1.0, 0.0]))
    if m_in:
        with pytest.raises(StencilOutOfDomain):
            box_g(m, lambda Y: Y[..., 0], np.array([0.0, 1e-3, 1.0, 0.0]), steps=1e-2)


def test_planar_conformal_inverse_and_null_s():
    m = PlanarConformal([1.0])
    g, ginv, _ = m.eval(np.zeros((1, 3)))
    assert np.allclose(g[0] @ ginv[0], np.eye(3))
    # d_s is null: it generates the trapped geodesics
    assert abs(g[0, 2, 2]) < 1e-15


def test_grid_metric_file_round_trip(tmp_path):
    base = PlanarConformal([1.0])
    axes = [np.linspace(0.01, 0.1, 6), np.linspace(-1, 1, 6), np.linspace(-1, 1, 6)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    comps = base.components(X)
    spec = {"coords": ["sigma", "y", "s"], "axes": [a.tolist() for a in axes],
            "components": {f"{a}{b}": comps[..., a, b].tolist()
                           for a in range(3) for b in range(a, 3)}}
    p = tmp_path / "metric.json"
    p.write_text(json.dumps(spec))
    gm = GridMetric.from_file(p)
    Y = np.array([[0.05, 0.1, -0.3]])
    assert np.allclose(gm.components(Y), base.components(Y), atol=1e-12)


@pytest.mark.parametrize("kw", [dict(s_minus=0.5), dict(sigma0=-1.0), dict(d=1),
                                dict(ybar_box=[(1.0, -1.0)]), dict(s_plus=np.inf)])
def test_domain_spec_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        DomainSpec(**kw)


def test_metric_registry():
    assert isinstance(make_metric("planar-conformal"), PlanarConformal)
    with pytest.raises(KeyError):
        make_metric("kerr")
