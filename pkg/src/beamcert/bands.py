"""Band domains, amplitude profiles f_n, the transition theta and cutoffs chi_n.

Band-local sigma arithmetic uses z = n^2 (sigma - 1/n). All derivative
tables come from Taylor jets, so they are exact up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BandOutsideDomain
from .geometry import DomainSpec
from .jets import Jet, fall_jet, ramp_jet, smoothstep_jet

THETA_HALF_WIDTH = 0.125


def _frac_endpoints(n):
    n = Fraction(n)
    lo = 1 / (n + 1) + 1 / (8 * (n + 1) ** 2)
    hi = 1 / (n - 1) - 1 / (8 * (n - 1) ** 2)
    return lo, hi


def band_endpoints(n):
    lo, hi = _frac_endpoints(n)
    return float(lo), float(hi)


def plateau_endpoints(n):
    """(support_lo, plateau_lo, plateau_hi, support_hi) of chi_n."""
    m = Fraction(n)
    return (float(1 / (m + 1) + 1 / (7 * (m + 1) ** 2)),
            float(1 / (m + 1) + 1 / (6 * (m + 1) ** 2)),
            float(1 / (m - 1) - 1 / (6 * (m - 1) ** 2)),
            float(1 / (m - 1) - 1 / (7 * (m - 1) ** 2)))


def sigma_to_z(n, sigma):
    """n^2 (sigma - 1/n) computed as n^2 sigma - n (one rounding for exact sigma)."""
    return n * n * np.asarray(sigma, float) - n


def z_to_sigma(n, z):
    return (np.asarray(z, float) + n) / (n * n)


def overlap(n, m):
    """Open interval Omega_n cap Omega_m, or None if empty."""
    a = _frac_endpoints(n)
    b = _frac_endpoints(m)
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    return (float(lo), float(hi)) if lo < hi else None


@dataclass
class BandDomain:
    n: int
    sigma_lo: float
    sigma_hi: float
    z: np.ndarray
    ybar: list
    s: np.ndarray
    s_index0: int
    spec: DomainSpec = field(repr=False, default=None)

    @property
    def sigma(self):
        return z_to_sigma(self.n, self.z)

    @property
    def hz(self):
        return float(self.z[1] - self.z[0])

    @property
    def hsigma(self):
        return self.hz / self.n ** 2

    @property
    def hs(self):
        return float(self.s[1] - self.s[0])

    @property
    def hy(self):
        return [float(y[1] - y[0]) if len(y) > 1 else 1.0 for y in self.ybar]

    @property
    def axes(self):
        return [self.sigma] + list(self.ybar) + [self.s]

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    def mesh(self):
        """Array (..., D) of all grid points."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(grids, axis=-1)


def s_axis(s_minus, s_plus, ns):
    """Uniform s-axis containing s = 0 exactly; endpoints snap to the lattice."""
    h = (s_plus - s_minus) / (ns - 1)
    i0 = int(round(-s_minus / h))
    i0 = min(max(i0, 1), ns - 2)
    return (np.arange(ns) - i0) * h, i0


def band_domain(n, spec: DomainSpec, resolution=(129, 65, 257)):
    """Band Omega_n with a grid uniform in z.

    ``resolution`` is (n_sigma, n_ybar, n_s); n_ybar applies to every ybar axis.
    """
    lo, hi = band_endpoints(n)
    if n < 2:
        raise ValueError("band index must be at least 2")
    if hi > spec.sigma0:
        raise BandOutsideDomain(f"band {n} reaches sigma={hi:.6g} beyond sigma0={spec.sigma0:g}",
                                band=n, sigma_hi=hi, sigma0=spec.sigma0)
    nsig, ny, ns = resolution
    flo, fhi = _frac_endpoints(n)
    zlo = float(n * n * flo - n)
    zhi = float(n * n * fhi - n)
    z = np.linspace(zlo, zhi, nsig)
    ybar = [np.linspace(a, b, ny) for a, b in spec.ybar_box]
    s, i0 = s_axis(spec.s_minus, spec.s_plus, ns)
    return BandDomain(n, lo, hi, z, ybar, s, i0, spec)


# ----------------------------------------------------------------------------
# theta and f_n

class Theta:
    """theta(z) = -1/2 + (3/2) step((z + 1/8) / (1/4)); derivatives via jets."""

    half_width = THETA_HALF_WIDTH

    def jet(self, z, order):
        w = 2 * self.half_width
        x = Jet.variable((np.asarray(z, float) + self.half_width) / w, order, 1.0 / w)
        return smoothstep_jet(x) * 1.5 + (-0.5)

    def __call__(self, z, nderiv=0):
        d = self.jet(z, nderiv).derivs()
        return d[0] if nderiv == 0 else d

    def describe(self):
        return {"shape": "exp(-1/x) symmetric step", "theta_at_0": float(self(0.0)),
                "ramp": [-self.half_width, self.half_width]}


def make_theta():
    return Theta()


@dataclass
class AmplitudeProfile:
    n: int
    theta: Theta
    K0: float = float("nan")

    def z_jet(self, sigma, order):
        """Jet in sigma of f_n."""
        n = self.n
        z = sigma_to_z(n, sigma)
        zj = Jet.variable(z, order, n * n)
        th = self.theta.jet(z, order)
        # theta jet is in z; rescale its Taylor coefficients to sigma
        scale = (n * n) ** np.arange(order + 1)
        th = Jet(th.c * scale.reshape((-1,) + (1,) * (th.c.ndim - 1)))
        return (zj * th) * (-float(n * n)) + (-float(n * n))

    def __call__(self, sigma, nderiv=0):
        d = self.z_jet(sigma, nderiv).derivs()
        return d[0] if nderiv == 0 else d

    def check_bounds(self, nsample=20001):
        """Assert the three-piece upper bounds on a fine sample; return violations."""
        n = self.n
        lo, hi = band_endpoints(n)
        sig = np.linspace(lo, hi, nsample)
        f = self(sig)
        z = sigma_to_z(n, sig)
        bound = np.where(z <= -0.125, -17 / 16, np.where(z >= 0.125, -9 / 8, -7 / 8)) * n * n
        # bounds hold on the closed pieces; the middle bound covers |z| <= 1/8
        bound = np.where(np.abs(z) <= 0.125, np.maximum(bound, -7 / 8 * n * n), bound)
        return int(np.sum(f > bound + 1e-9 * n * n))


def amplitude_f(n, nsample=4001):
    prof = AmplitudeProfile(n, make_theta())
    lo, hi = band_endpoints(n)
    sig = np.linspace(lo, hi, nsample)
    d1 = prof(sig, 1)[1]
    prof.K0 = float(np.max(np.abs(d1)) / n ** 4)
    bad = prof.check_bounds()
    if bad:
        raise AssertionError(f"f_{n} violates its piecewise bounds at {bad} samples")
    return prof


# ----------------------------------------------------------------------------
# cutoffs

@dataclass
class CutoffProfile:
    n: int
    support_lo: float
    plateau_lo: float
    plateau_hi: float
    support_hi: float
    K: dict = field(default_factory=dict)

    def jet(self, sigma, order):
        sigma = np.asarray(sigma, float)
        up = ramp_jet(sigma, self.support_lo, self.plateau_lo, order)
        down = fall_jet(sigma, self.plateau_hi, self.support_hi, order)
        return up * down

    def __call__(self, sigma, nderiv=0):
        d = self.jet(sigma, nderiv).derivs()
        return d[0] if nderiv == 0 else d

    def derivative_table(self, nmax=4, nsample=20001):
        """K_N = sup |chi^(N)| / n^(2N), measured on a dense sample of the transitions."""
        a = np.linspace(self.support_lo, self.plateau_lo, nsample)
        b = np.linspace(self.plateau_hi, self.support_hi, nsample)
        d = self(np.concatenate([a, b]), nmax)
        return {N: float(np.max(np.abs(d[N])) / self.n ** (2 * N)) for N in range(nmax + 1)}


def cutoff_chi(n, nmax=4):
    c = CutoffProfile(n, *plateau_endpoints(n))
    c.K = c.derivative_table(nmax)
    return c
