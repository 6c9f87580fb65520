"""Asymptotically AdS applications: conformal reduction, the Poincare patch of
pure AdS, the support lemma and the null-convexity diagnostic."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .eikonal import pure_planar_map
from .errors import NotLorentzian, OutsideRegion, VExtractionInconsistent
from .geometry import MetricField, fd_partials, sphere_embedding


class ConformallyScaled(MetricField):
    """g = rho^-2 gbar in the chart of gbar (rho is coordinate 0)."""

    def __init__(self, base: MetricField):
        self.base = base
        self.dim = base.dim
        self.coord_names = base.coord_names

    def in_domain(self, X):
        return self.base.in_domain(X) & (np.asarray(X)[..., 0] > 0)

    def components(self, X):
        rho = np.asarray(X, float)[..., 0]
        return self.base.components(X) / rho[..., None, None] ** 2

    def derivatives(self, X):
        X = np.asarray(X, float)
        rho = X[..., 0][..., None, None]
        out = self.base.derivatives(X) / rho[..., None] ** 2
        out[..., 0, :, :] -= 2 * self.base.components(X) / rho ** 3
        return out


def default_test_functions():
    return [
        lambda X: np.ones(X.shape[:-1]),
        lambda X: 1.0 + 0.3 * np.sin(X[..., 1] + 0.5 * X[..., 0]),
        lambda X: 1.2 + 0.25 * np.cos(2.0 * X[..., -1] - X[..., 1] + X[..., 0] ** 2),
    ]


@dataclass
class ConformalOperator:
    """Pbar w = rho^-(2+b) (box_g + mu)(rho^b w), b = (d-1)/2, g = rho^-2 gbar."""
    mu: float
    d: int
    metric_bar: MetricField
    steps: float = 1e-2
    order: int = 6
    stats: dict = field(default_factory=dict)

    @property
    def b(self):
        return (self.d - 1) / 2

    @property
    def xi_singular(self):
        return self.mu - (self.d ** 2 - 1) / 4

    def _parts(self, w, X):
        X = np.asarray(X, float)
        gw, hw = fd_partials(w, X, self.steps, self.order, 2)
        return X, w(X), gw, hw

    def apply(self, w: Callable, X):
        """The rho^b factor enters through the exact product rule; only w is differenced."""
        X, w0, gw, hw = self._parts(w, X)
        return self._apply(X, w0, gw, hw)

    def _apply(self, X, w0, gw, hw):
        b = self.b
        rho = X[..., 0]
        D = X.shape[-1]
        e0 = np.zeros(D)
        e0[0] = 1.0
        # derivatives of u = rho^b w divided by rho^b
        du = gw + (b / rho * w0)[..., None] * e0
        ddu = (hw + (b / rho)[..., None, None] * (gw[..., :, None] * e0 + e0[:, None] * gw[..., None, :])
               + (b * (b - 1) / rho ** 2 * w0)[..., None, None] * np.outer(e0, e0))
        ginv, B = ConformallyScaled(self.metric_bar).wave_coefficients(X)
        box = np.einsum("...ab,...ab->...", ginv, ddu) + np.einsum("...b,...b->...", B, du)
        return (box + self.mu * w0) / rho ** 2

    def V_from(self, w: Callable, X):
        X, w0, gw, hw = self._parts(w, X)
        ginv, B = self.metric_bar.wave_coefficients(X)
        wb = np.einsum("...ab,...ab->...", ginv, hw) + np.einsum("...b,...b->...", B, gw)
        return (self._apply(X, w0, gw, hw) - wb - self.xi_singular * w0 / X[..., 0] ** 2) / w0

    def V(self, X, tests=None, tol=1e-7):
        """V sampled at X, cross-checked across independent test functions."""
        tests = tests or default_test_functions()
        X = np.asarray(X, float)
        for w in tests:
            if np.any(np.abs(w(X)) < 0.5):
                raise ValueError("test functions must satisfy |w| >= 1/2")
        vals = [self.V_from(w, X) for w in tests]
        spread = max(float(np.max(np.abs(v - vals[0]))) for v in vals)
        self.stats["V_spread"] = spread
        if spread > tol:
            raise VExtractionInconsistent(f"V disagrees across test functions by {spread:.3g}",
                                          spread=spread)
        return vals[0]

    def sup_V_by_floor(self, floors, sigma0, other_axes, npts=9, tests=None):
        """sup |V| over rho in (floor, sigma0) for each floor (bounded, no growth)."""
        out = {}
        for fl in floors:
            rho = np.linspace(fl, sigma0, npts)
            mesh = np.meshgrid(rho, *other_axes, indexing="ij")
            X = np.stack(mesh, axis=-1).reshape(-1, len(other_axes) + 1)
            out[float(fl)] = float(np.max(np.abs(self.V(X, tests))))
        return out


def conjugate_operator(mu, d, metric_bar: MetricField, steps=1e-2, order=6):
    return ConformalOperator(float(mu), int(d), metric_bar, steps, order)


# ----------------------------------------------------------------------------
# pure AdS and the Poincare patch

def omega_d_of(X):
    return sphere_embedding(np.asarray(X, float)[..., 2:])[..., -1]


@dataclass
class PureAdsChart:
    epsilon: float
    d: int = 3

    def __post_init__(self):
        if not 0 < self.epsilon < np.pi / 2:
            raise ValueError("epsilon must lie in (0, pi/2)")

    def contains(self, X):
        X = np.asarray(X, float)
        return (np.abs(X[..., 0]) <= np.pi / 2 - self.epsilon) & (omega_d_of(X) < 0)

    def coordinate_bound(self, nsample=4096, seed=0):
        """Measured c in sup(|t| + rho + |xbar|) <= c / epsilon."""
        X = halton_region(nsample, self.epsilon, self.d, seed=seed)
        P = pure_to_planar(X, self.epsilon, self.d)
        tot = np.abs(P[..., 0]) + P[..., 1] + np.linalg.norm(P[..., 2:], axis=-1)
        return float(np.max(tot) * self.epsilon)


def pure_to_planar(X, eps, d=3, sign=1.0):
    """(tau, chi, angles) -> (t, rho, xbar) on M_{P,eps}.

    ``sign = -1`` flips the sign inside the t denominator (mutation tests only).
    """
    X = np.asarray(X, float)
    chart = PureAdsChart(eps, d)
    if not np.all(chart.contains(X)):
        raise OutsideRegion("point outside {|tau| <= pi/2 - eps, omega^d < 0}", eps=eps)
    P = pure_planar_map(X, d)
    out = np.empty_like(P)
    if sign == 1.0:
        out[..., 0] = P[..., d]
    else:
        tau, chi = X[..., 0], X[..., 1]
        out[..., 0] = np.sin(tau) / (np.cos(tau) + np.cos(chi) * omega_d_of(X))
    out[..., 1] = P[..., 0]
    out[..., 2:] = P[..., 1:d]
    return out


def denominator_floor(X):
    X = np.asarray(X, float)
    return float(np.min(np.cos(X[..., 0]) - np.cos(X[..., 1]) * omega_d_of(X)))


def omega_d_from_planar(t, rho, xbar):
    """omega^d recovered from Poincare coordinates."""
    x2 = np.sum(np.atleast_1d(np.asarray(xbar, float)) ** 2, axis=-1) if np.ndim(xbar) else \
        float(xbar) ** 2
    num = rho ** 2 - 1 + x2 - t ** 2
    den = np.sqrt((rho ** 2 + 1 + x2 - t ** 2) ** 2 + 4 * t ** 2 - 4 * rho ** 2)
    return num / den


def _ads_conformal_metric(X, d):
    """sin^-2 chi [-dtau^2 + dchi^2 + cos^2 chi round] in (tau, chi, angles)."""
    from .geometry import PureAdsMetric
    return PureAdsMetric(d, conformal=False).components(X)


def _planar_metric(P):
    D = P.shape[-1]
    g = np.zeros(P.shape[:-1] + (D, D))
    rho = P[..., 1]
    g[..., 0, 0] = -1.0
    for a in range(1, D):
        g[..., a, a] = 1.0
    return g / rho[..., None, None] ** 2


def verify_embedding(X, eps, d=3, step=1e-6, sign=1.0):
    """Max over samples of max_ab |J^T g_plan J - g_AdS|_ab / max_ab |g_AdS|_ab."""
    X = np.atleast_2d(np.asarray(X, float))
    D = X.shape[-1]
    J = np.empty(X.shape[:-1] + (D, D))
    for c in range(D):
        Xp, Xm = X.copy(), X.copy()
        Xp[..., c] += step
        Xm[..., c] -= step
        J[..., :, c] = (pure_to_planar(Xp, eps, d, sign) - pure_to_planar(Xm, eps, d, sign)) / (2 * step)
    gp = _planar_metric(pure_to_planar(X, eps, d, sign))
    pull = np.einsum("...ai,...ab,...bj->...ij", J, gp, J)
    ga = _ads_conformal_metric(X, d)
    dev = np.max(np.abs(pull - ga), axis=(-2, -1)) / np.max(np.abs(ga), axis=(-2, -1))
    return float(np.max(dev))


def halton_region(n, eps=0.3, d=3, tau_max=1.0, chi=(0.3, 1.2), omega_d=(-1.0, -0.1), pole_gap=0.05,
                  seed=0):
    """Halton samples of {|tau| <= tau_max, chi in range, omega^d in range} in angle coordinates."""
    if d != 3:
        raise NotImplementedError("sampling implemented for d = 3")
    tau_max = min(tau_max, np.pi / 2 - eps)
    h = qmc.Halton(4, seed=seed).random(n)
    th1_lo = np.arccos(omega_d[1])
    th1_hi = min(np.arccos(omega_d[0]), np.pi - pole_gap)
    return np.stack([(2 * h[:, 0] - 1) * tau_max,
                     chi[0] + (chi[1] - chi[0]) * h[:, 1],
                     th1_lo + (th1_hi - th1_lo) * h[:, 2],
                     2 * np.pi * h[:, 3]], axis=-1)


@dataclass
class SupportVerdict:
    passed: bool
    margin: float                 # -max omega^d
    max_omega_d: float
    argmax: list
    c1: float
    c2_measured: float
    c2_bound: float
    bound_ok: bool


def support_in_half_space(eps, delta, rho0, kbar=(1.0, 0.0), nsample=20000, seed=0):
    """max omega^d over {|t| <= c1/eps, |xbar - t kbar| <= delta eps, 0 < rho <= rho0}."""
    k = np.asarray(kbar, float)
    m = k.size
    c1 = eps / np.sin(eps)   # |t| <= 1 / cos(tau) <= 1 / sin(eps) on M_{P,eps}
    tmax = c1 / eps
    r = delta * eps
    rng = np.random.default_rng(seed)

    def unpack(z):
        t = z[..., 0] * tmax
        rho = rho0 * z[..., 1]
        off = z[..., 2:2 + m] * r
        xbar = t[..., None] * k + off
        return t, rho, xbar

    # dense sample: t and rho uniform, offsets uniform in the ball
    z = np.empty((nsample, 2 + m))
    z[:, 0] = rng.uniform(-1, 1, nsample)
    z[:, 1] = rng.uniform(1e-6, 1, nsample)
    v = rng.normal(size=(nsample, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    z[:, 2:] = v * rng.uniform(0, 1, (nsample, 1)) ** (1.0 / m)
    # include the extreme corners
    corners = []
    for ts in (-1.0, 1.0):
        for rs in (1e-6, 1.0):
            for sgn in (-1.0, 1.0):
                for j in range(m):
                    e = np.zeros(m)
                    e[j] = sgn
                    corners.append(np.concatenate([[ts, rs], e]))
    z = np.concatenate([z, np.array(corners)])
    t, rho, xbar = unpack(z)
    od = omega_d_from_planar(t, rho, xbar)
    x2t2 = np.abs(np.sum(xbar ** 2, axis=-1) - t ** 2)
    best = np.argsort(od)[-8:]

    def neg(zz):
        zz = np.array(zz)
        nrm = np.linalg.norm(zz[2:])
        if nrm > 1:
            zz[2:] /= nrm
        tt, rr, xx = unpack(zz)
        return -float(omega_d_from_planar(tt, rr, xx))

    bounds = [(-1, 1), (1e-9, 1)] + [(-1, 1)] * m
    top = od.max()
    arg = z[int(np.argmax(od))]
    for i in best:
        res = minimize(neg, z[i], method="L-BFGS-B", bounds=bounds)
        if -res.fun > top:
            top, arg = -res.fun, res.x
    c2_meas = float(x2t2.max() / delta)
    c2_bound = 2 * c1 / eps + delta * eps ** 2 + 1e-12
    return SupportVerdict(bool(top < 0), float(-top), float(top), np.asarray(arg).tolist(), float(c1),
                          c2_meas, float(c2_bound), bool(c2_meas <= c2_bound))


# ----------------------------------------------------------------------------
# generalised null convexity

@dataclass
class GnccReport:
    margin: float
    argmin: tuple
    directions: int
    eta_boundary_trace: float    # max |eta| on the boundary of the region (reported only)


def _null_fan(g0, ndir):
    """Null vectors of a Lorentzian form: T + unit spatial directions of an orthonormal frame."""
    d = g0.shape[-1]
    ev, V = np.linalg.eigh(g0)
    if np.sum(ev < 0) != 1:
        raise NotLorentzian("boundary metric is not Lorentzian", negative=int(np.sum(ev < 0)))
    T = V[:, 0] / np.sqrt(-ev[0])
    E = [V[:, i] / np.sqrt(ev[i]) for i in range(1, d)]
    if d == 2:
        dirs = [np.array([1.0]), np.array([-1.0])]
    elif d == 3:
        ang = np.linspace(0, 2 * np.pi, ndir, endpoint=False)
        dirs = [np.array([np.cos(a), np.sin(a)]) for a in ang]
    else:
        pts = qmc.Halton(d - 1, seed=0).random(ndir) * 2 - 1
        dirs = [p / np.linalg.norm(p) for p in pts]
    return np.array([T + sum(w * e for w, e in zip(om, E)) for om in dirs])


def gncc_check(g0, g2, eta, axes, ndir=64):
    """min over grid points and null directions of (D^2 eta - eta g2)(Z, Z) / |Z|^2.

    ``g0`` and ``g2`` are arrays (..., d, d) on the tensor grid ``axes``;
    ``eta`` is an array on the same grid. Christoffels and the covariant
    Hessian use fourth-order differences where the grid allows.
    """
    g0 = np.asarray(g0, float)
    g2 = np.asarray(g2, float)
    eta = np.asarray(eta, float)
    d = len(axes)
    ev = np.linalg.eigvalsh(g0)
    if np.any(np.sum(ev < 0, axis=-1) != 1) or np.any(np.abs(ev) < 1e-14):
        raise NotLorentzian("boundary metric is not Lorentzian on the grid")

    def grad(f, ax):
        return np.gradient(f, axes[ax], axis=ax, edge_order=2)

    dg = np.stack([grad(g0, c) for c in range(d)], axis=-3)  # [..., c, a, b]
    ginv = np.linalg.inv(g0)
    low = 0.5 * (np.einsum("...bmc->...mbc", dg) + np.einsum("...cmb->...mbc", dg) - dg)
    Gam = np.einsum("...am,...mbc->...abc", ginv, low)
    de = np.stack([grad(eta, c) for c in range(d)], axis=-1)
    dde = np.stack([np.stack([grad(de[..., a], b) for b in range(d)], axis=-1) for a in range(d)], axis=-2)
    hess = dde - np.einsum("...cab,...c->...ab", Gam, de)
    Q = hess - eta[..., None, None] * g2
    # interior only (edge differences are first order in the Christoffels)
    sl = tuple(slice(2, -2) for _ in range(d))
    Qi = Q[sl]
    gi = g0[sl]
    flatQ = Qi.reshape(-1, d, d)
    flatg = gi.reshape(-1, d, d)
    best = np.inf
    arg = None
    nd = 0
    for p in range(flatQ.shape[0]):
        Z = _null_fan(flatg[p], ndir)
        nd = Z.shape[0]
        vals = np.einsum("ab,ka,kb->k", flatQ[p], Z, Z) / np.sum(Z ** 2, axis=1)
        v = float(vals.min())
        if v < best:
            best, arg = v, np.unravel_index(p, Qi.shape[:d])
    edges = [np.take(eta, [0, -1], axis=a) for a in range(d)]
    trace = float(max(np.max(np.abs(e)) for e in edges))
    return GnccReport(best, tuple(int(i) + 2 for i in arg), nd, trace)
