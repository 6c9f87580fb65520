import numpy as np
import pytest

from beamcert.assembly import evaluate_a, evaluate_u
from beamcert.bands import band_endpoints
from beamcert.errors import OutsideBands


def _single_band_node(glued, n):
    """Grid node of band n lying in no other band."""
    band = glued.bands[n].band
    lo, hi = band_endpoints(n + 1)[1], band_endpoints(n - 1)[0]
    i = int(np.nonzero((band.sigma > lo) & (band.sigma < hi))[0][3])
    j, k = 5, 40
    x = np.array([band.sigma[i], band.axes[1][j], band.axes[2][k]])
    return (i, j, k), x


def test_u_at_node_is_weighted_envelope(small_run):
    g = small_run.glued
    (i, j, k), x = _single_band_node(g, 13)
    gb = g.bands[13]
    u = evaluate_u(g, x)
    env = gb.beam.envelope.values[i, j, k]
    expect = float(gb.op.fprof(x[0])) + np.log(abs(env))
    assert u.log_abs() == pytest.approx(expect, abs=1e-9)


def test_a_at_node_is_psi_over_envelope(small_run):
    g = small_run.glued
    (i, j, k), x = _single_band_node(g, 13)
    gb = g.bands[13]
    a = evaluate_a(g, x)
    assert a.bands == (13,)
    expect = gb.beam.psi[i, j, k] / gb.beam.envelope.values[i, j, k]
    assert abs(a.value - expect) <= 1e-8 * abs(expect)


def test_s_derivative_matches_difference_quotient(small_run):
    g = small_run.glued
    _, x = _single_band_node(g, 13)
    jet = evaluate_u(g, x, N=1)
    h = 1e-3
    xp, xm = x.copy(), x.copy()
    xp[2] += h
    xm[2] -= h
    up, um = evaluate_u(g, xp), evaluate_u(g, xm)
    assert up.log_scale == um.log_scale == jet.log_scale
    fd = (up.values[0][0] - um.values[0][0]) / (2 * h)
    assert abs(jet.values[2][1] - fd) <= 1e-3 * abs(fd)


def test_outside_bands_raises(small_run):
    with pytest.raises(OutsideBands):
        evaluate_u(small_run.glued, np.array([0.5, 0.0, 0.0]))


def test_decay_of_u(small_run):
    dec = small_run.decay
    assert dec.monotone_u
    assert 7 / 8 <= dec.q <= 9 / 8
    s = dec.sigma0
    for N in dec.log_sup_u:
        for mu in (0, 12):
            vals = [dec.value(x, N, mu) for x in s]
            assert all(b <= a / 10 for a, b in zip(vals, vals[1:]))


def test_certification_residuals(small_run):
    summ = small_run.certification.summary()
    assert summ["interior"]["count"] > 0 and summ["near"]["count"] > 0
    assert summ["interior"]["max_rel_residual"] <= 1e-5
    assert summ["near"]["max_rel_residual"] <= 1e-4


def test_glued_u_has_no_zeros_off_the_surfaces(small_run):
    for rec in small_run.gluing.values():
        assert rec["rows"] > 0
        assert rec["max_zero_distance_cells"] <= 1.0
        assert rec["K0_lower_bound"] > 0


def test_amplitude_bracket(small_run):
    lo, hi = small_run.verdicts["amplitude_bracket"]["value"]
    assert -9 / 8 - 0.05 <= lo <= hi <= -7 / 8 + 0.05
