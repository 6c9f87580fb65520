import numpy as np
import pytest

from beamcert.assembly import DD_UNIT
from beamcert.dd import DDC
from beamcert.errors import ConfigError, OdeToleranceFailure
from beamcert.transport import (HierarchyConfig, assemble_band, conjugated_operator_dd,
                                conjugation_residual, gaussian_envelope, solve_hierarchy)

from conftest import make_op


@pytest.fixture(scope="module")
def band13():
    op = make_op(13)
    hier = solve_hierarchy(op)
    return op, hier


def test_config_validation():
    with pytest.raises(ConfigError):
        HierarchyConfig(alpha=2.0, beta=3.0).validate()
    with pytest.raises(ConfigError):
        HierarchyConfig(alpha=4.0).validate()
    notes = HierarchyConfig(alpha=6.0).validate()
    assert notes and "measured" in notes[0]
    assert HierarchyConfig(alpha=10.0).validate() == []
    assert [HierarchyConfig().depth(n) for n in (8, 12, 15, 16, 40)] == [2, 3, 3, 4, 4]


def test_T1_is_exact_on_linear_s_profiles():
    op = make_op(14, res=(9, 9, 33))
    s = op.band.s
    h = DDC.from_complex(np.broadcast_to(3.0 * s - 0.5, op.shape).astype(complex))
    np.testing.assert_allclose(op.apply_T1(h).to_complex(), 3.0, atol=1e-12)


def test_ladder_telescopes(band13):
    _, hier = band13
    for row in hier.ladder:
        assert row["rel_diff"] < 1e-6
    factors = [r["factor"] for r in hier.ladder[1:]]
    assert all(f < 1 for f in factors)


def test_transport_data_and_support(band13):
    op, hier = band13
    i0 = op.i0
    np.testing.assert_allclose(hier.c0[..., i0], op.chi_plane(), atol=1e-15)
    assert max(hier.support_leak) == 0.0
    assert max(hier.ode_errors) < op.cfg.ode_tol


def test_assembled_beam_bounds(band13):
    op, hier = band13
    beam = assemble_band(op, hier)
    assert beam.stats["sup_envelope"] <= beam.stats["K0_c0"] + 1
    np.testing.assert_allclose(beam.psi, hier.resid.to_complex())


def test_conjugation_identity_gaussian():
    op = make_op(16, res=(65, 33, 129))
    r = conjugation_residual(op, gaussian_envelope(op.band))
    assert r["max_dev"] < 1e-5
    assert r["dev_lambda2"] < 1e-14  # phi is null


def test_dd_conjugated_operator_agrees_with_hierarchy(band13):
    op, hier = band13
    P, mags = conjugated_operator_dd(op, hier.env)
    noise = DD_UNIT * mags
    diff = np.abs(P - hier.resid.to_complex())
    assert np.all(diff <= noise)


def test_ode_tolerance_is_enforced():
    op = make_op(12, res=(17, 9, 33), ode_tol=1e-40)
    with pytest.raises(OdeToleranceFailure):
        solve_hierarchy(op)
