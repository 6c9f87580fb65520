"""Interference surfaces between adjacent beams and the envelope correction omega_n.

Columns are the (ybar, s) grid lines shared by all bands. Along each column
envelopes are interpolated in sigma with 8-point Lagrange stencils in the
band-rescaled coordinate z.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial

import numpy as np

from .bands import band_endpoints, plateau_endpoints, sigma_to_z
from .errors import (CoefficientFloorViolated, EnvelopeZero, LobeOverlap, ProbeInconsistent,
                     RootOutsideOverlap)
from .geometry import fd_partials
from .jets import cutoff_zeta_jet
from .stencils import (cubic_grid_interpolator, fd_axis, lagrange_deriv_weights, lagrange_weights,
                       stencil_start)

LOG_FLOOR = 1e-300
NPTS = 8


def balance_constant(n):
    """B_n = n^4/2 + (n+1)^4, the slope of f_n - f_{n+1} across the overlap."""
    return 0.5 * n ** 4 + (n + 1) ** 4


def closed_form_root(n):
    """Root of f_n = f_{n+1} with both theta on their plateaus, as an exact rational."""
    n = Fraction(n)
    num = n ** 2 - (n + 1) ** 2 + n ** 3 / 2 + (n + 1) ** 3
    den = n ** 4 / 2 + (n + 1) ** 4
    return num / den


def surface_guess(m):
    """Leading-order surface position 1/m - 2/(3 m^2)."""
    return 1.0 / m - 2.0 / (3.0 * m * m)


# ----------------------------------------------------------------------------
# column interpolation of envelopes

class ColumnInterpolant:
    """Degree-7 interpolation in sigma of a band field along every column."""

    def __init__(self, beam_or_band, values=None, n=None):
        if values is None:
            band = beam_or_band.envelope.band
            values = beam_or_band.envelope.values
        else:
            band = beam_or_band
        self.band = band
        self.n = band.n
        self.z0 = float(band.z[0])
        self.hz = band.hz
        self.nz = band.z.size
        self.col_shape = values.shape[1:]
        self.vals = np.ascontiguousarray(values.reshape(self.nz, -1))
        self.ncols = self.vals.shape[1]

    def _stencil(self, sigma):
        z = sigma_to_z(self.n, sigma)
        start = stencil_start(self.z0, self.hz, z, self.nz, NPTS)
        return z, start

    def _gather(self, start, cols):
        idx = start[None, :] + np.arange(NPTS)[:, None]
        return self.vals[idx, cols[None, :]]

    def __call__(self, sigma, cols=None, deriv=0):
        """Values (deriv=0) or sigma-derivatives at per-column sigma values."""
        sigma = np.asarray(sigma, float)
        cols = np.arange(self.ncols) if cols is None else np.asarray(cols)
        z, start = self._stencil(sigma)
        x0 = self.z0 + start * self.hz
        if deriv == 0:
            w = lagrange_weights(x0, self.hz, z, NPTS)
        else:
            w = lagrange_deriv_weights(x0, self.hz, z, NPTS, deriv) * float(self.n) ** (2 * deriv)
        return np.sum(w * self._gather(start, cols), axis=0)


class BeamEnvelope:
    """Envelope of a beam along columns: chi_n(sigma) c0_unit + rest.

    chi_n is evaluated exactly; only the smooth unit transport factor and the
    small remainder are interpolated, so the steep cutoff never enters a stencil.
    """

    def __init__(self, beam):
        band = beam.envelope.band
        self.chi = beam.chi
        self.unit = None if beam.c0_unit is None else ColumnInterpolant(band, beam.c0_unit)
        self.rest = ColumnInterpolant(band, beam.rest)
        self.col_shape = self.rest.col_shape
        self.ncols = self.rest.ncols

    def __call__(self, sigma, cols=None, deriv=0):
        sigma = np.asarray(sigma, float)
        ch = self.chi(sigma, deriv)
        if deriv == 0:
            base = ch if self.unit is None else ch * self.unit(sigma, cols)
        elif self.unit is None:
            base = ch[deriv]
        else:
            base = sum(comb(deriv, r) * ch[r] * self.unit(sigma, cols, deriv - r)
                       for r in range(deriv + 1))
        return base + self.rest(sigma, cols, deriv)


def _log_abs(v):
    a = np.abs(v)
    with np.errstate(divide="ignore"):
        return np.where(a < LOG_FLOOR, -np.inf, np.log(np.maximum(a, LOG_FLOOR)))


class PhiEvaluator:
    """Phi_n = f_n - f_{n+1} + log|env_n| - log|env_{n+1}| along columns."""

    def __init__(self, beam_n, beam_np1):
        self.n = beam_n.n
        self.fn = beam_n.f
        self.fm = beam_np1.f
        self.en = BeamEnvelope(beam_n)
        self.em = BeamEnvelope(beam_np1)
        self.col_shape = self.en.col_shape
        self.ncols = self.en.ncols

    def __call__(self, sigma, cols=None, strict=False):
        sigma = np.asarray(sigma, float)
        a = self.en(sigma, cols)
        b = self.em(sigma, cols)
        if strict and (np.any(np.abs(a) < LOG_FLOOR) or np.any(np.abs(b) < LOG_FLOOR)):
            raise EnvelopeZero("envelope magnitude below 1e-300", band=self.n)
        la, lb = _log_abs(a), _log_abs(b)
        fa, fb = self.fn(sigma), self.fm(sigma)
        with np.errstate(invalid="ignore"):
            out = fa - fb + la - lb
        # -inf - (-inf): both vanish; treat by the f difference alone
        return np.where(np.isnan(out), fa - fb, out)

    def derivative(self, sigma, cols=None):
        sigma = np.asarray(sigma, float)
        a = self.en(sigma, cols)
        b = self.em(sigma, cols)
        da = self.en(sigma, cols, 1)
        db = self.em(sigma, cols, 1)
        return (self.fn(sigma, 1)[1] - self.fm(sigma, 1)[1]
                + np.real(da / a) - np.real(db / b))


def interference_phi(n, beam_n, beam_np1, sigma, cols=None):
    return PhiEvaluator(beam_n, beam_np1)(sigma, cols, strict=True)


# ----------------------------------------------------------------------------
# surfaces

@dataclass
class InterferenceSurface:
    n: int
    sfrak: np.ndarray  # shape = column grid
    residual: np.ndarray
    bracket: tuple
    stats: dict = field(default_factory=dict)
    fallback: bool = False

    def interpolator(self, band):
        """Bicubic (tensor cubic) interpolation of sfrak over the column grid."""
        axes = list(band.ybar) + [band.s]
        return cubic_grid_interpolator(axes, self.sfrak,
                                       bounds_error=False, fill_value=None)


def fallback_surface(m, col_shape):
    """Leading-order stand-in for a surface whose second band is not built."""
    return InterferenceSurface(m, np.full(col_shape, surface_guess(m)),
                               np.zeros(col_shape), (np.nan, np.nan), {"fallback": True}, True)


def locate_surface(n, beam_n, beam_np1, require_plateau=True, nbisect=40, nnewton=5):
    """Root of sigma -> Phi_n on every column, inside the overlap of bands n, n+1."""
    ev = PhiEvaluator(beam_n, beam_np1)
    lo = band_endpoints(n)[0]
    hi = band_endpoints(n + 1)[1]
    ncols = ev.ncols
    a = np.full(ncols, lo)
    b = np.full(ncols, hi)
    pa = ev(a)
    pb = ev(b)
    if not (np.all(pa < 0) and np.all(pb > 0)):
        raise RootOutsideOverlap(f"no sign change of Phi_{n} across the overlap of bands "
                                 f"{n} and {n + 1}", band=n)
    for _ in range(nbisect):
        m = 0.5 * (a + b)
        pm = ev(m)
        neg = pm < 0
        a = np.where(neg, m, a)
        b = np.where(neg, b, m)
    x = 0.5 * (a + b)
    for _ in range(nnewton):
        f = ev(x)
        d = ev.derivative(x)
        step = f / d
        xn = x - step
        xn = np.where((xn > a) & (xn < b), xn, x)
        if np.all(np.abs(xn - x) <= 1e-17):
            x = xn
            break
        x = xn
    res = ev(x)
    Bn = balance_constant(n)
    p_lo = plateau_endpoints(n)[1]
    p_hi = plateau_endpoints(n + 1)[2]
    if require_plateau and (np.any(x <= p_lo) or np.any(x >= p_hi)):
        raise RootOutsideOverlap(
            f"interference root of bands {n}, {n + 1} leaves the plateau region "
            f"({p_lo:.8f}, {p_hi:.8f}): min root {x.min():.8f}; raise n0", band=n,
            root_min=float(x.min()), plateau_lo=p_lo)
    stats = {
        "max_abs_phi_over_Bn": float(np.max(np.abs(res)) / Bn),
        "C_n": float(np.max(np.abs(x - surface_guess(n))) * n ** 3),
        "closed_form_dev": float(np.max(np.abs(x - float(closed_form_root(n))))),
        "plateau_margin": float(min(x.min() - p_lo, p_hi - x.max())),
        "B_n": Bn,
    }
    samp = np.linspace(p_lo, p_hi, 22)[1:-1]
    dmin = np.inf
    for sv in samp:
        dmin = min(dmin, float(np.min(ev.derivative(np.full(ncols, sv)))) / Bn)
    stats["min_dphi_over_Bn"] = dmin
    sf = x.reshape(ev.col_shape)
    return InterferenceSurface(n, sf, res.reshape(ev.col_shape), (lo, hi), stats)


def check_sign_bounds(n, beam_n, beam_np1, surface, nsample=400):
    """Both sign bounds on f_{n+1} - f_n across the overlap, with measured constants."""
    lo = band_endpoints(n)[0]
    hi = band_endpoints(n + 1)[1]
    sig = np.linspace(lo, hi, nsample)[1:-1]
    diff = beam_np1.f(sig) - beam_n.f(sig)
    s_min, s_max = float(surface.sfrak.min()), float(surface.sfrak.max())
    above = sig >= s_max
    below = sig <= s_min
    upper_cut = 1.0 / n - 1.0 / (6 * n * n)
    lower_cut = 1.0 / (n + 1) + 1.0 / (6 * (n + 1) ** 2)
    far_above = sig >= upper_cut
    far_below = sig <= lower_cut
    K0_above = float(np.max(diff[above])) if above.any() else float("nan")
    K0_below = float(np.max(-diff[below])) if below.any() else float("nan")
    K_far_above = float(-np.max(diff[far_above]) / n ** 2) if far_above.any() else float("nan")
    K_far_below = float(-np.max(-diff[far_below]) / n ** 2) if far_below.any() else float("nan")
    return {"K0_above": K0_above, "K0_below": K0_below,
            "K_far_above": K_far_above, "K_far_below": K_far_below,
            "pass": bool(K_far_above > 0 and K_far_below > 0)}


# ----------------------------------------------------------------------------
# eta chart

class EtaChart:
    """eta = n^-2 (sigma - a(y)) / (b(y) - a(y)), a = sfrak_n, b = sfrak_{n-1}."""

    def __init__(self, n, lower: InterferenceSurface, upper: InterferenceSurface, band):
        self.n = n
        self.lower = lower
        self.upper = upper
        self.band = band
        self.axes = list(band.ybar) + [band.s]
        self.hy = [float(ax[1] - ax[0]) for ax in self.axes]
        self.col_shape = lower.sfrak.shape
        a = lower.sfrak
        b = upper.sfrak
        self.a = a
        self.Delta = b - a
        if np.any(self.Delta <= 0):
            raise ValueError("surfaces out of order")
        k = len(self.axes)
        self.a_i = [self._d(a, i) for i in range(k)]
        self.D_i = [self._d(self.Delta, i) for i in range(k)]
        self.a_ij = [[self._d2(a, i, j) for j in range(k)] for i in range(k)]
        self.D_ij = [[self._d2(self.Delta, i, j) for j in range(k)] for i in range(k)]

    def _d(self, f, i):
        if f.shape[i] < 7:
            return np.zeros_like(f)
        return fd_axis(f, i, 1, self.hy[i])

    def _d2(self, f, i, j):
        if i == j:
            return fd_axis(f, i, 2, self.hy[i]) if f.shape[i] >= 7 else np.zeros_like(f)
        return self._d(self._d(f, i), j)

    def flat(self, arr):
        return np.asarray(arr).reshape(-1)

    def eta(self, sigma, cols=None):
        a = self.flat(self.a)
        D = self.flat(self.Delta)
        if cols is not None:
            a, D = a[cols], D[cols]
        return (np.asarray(sigma) - a) / D / self.n ** 2

    def sigma_of_eta(self, eta, cols=None):
        a = self.flat(self.a)
        D = self.flat(self.Delta)
        if cols is not None:
            a, D = a[cols], D[cols]
        return a + np.asarray(eta) * self.n ** 2 * D

    def derivs(self, sigma, cols):
        """First and second derivatives of eta in (sigma, y) at per-column sigma.

        Returns (grad list of length D, hess D x D nested list) of arrays.
        """
        n2 = float(self.n) ** 2
        f = self.flat
        a = f(self.a)[cols]
        D = f(self.Delta)[cols]
        u = np.asarray(sigma) - a
        k = len(self.axes)
        ai = [f(x)[cols] for x in self.a_i]
        Di = [f(x)[cols] for x in self.D_i]
        aij = [[f(self.a_ij[i][j])[cols] for j in range(k)] for i in range(k)]
        Dij = [[f(self.D_ij[i][j])[cols] for j in range(k)] for i in range(k)]
        grad = [1.0 / (n2 * D)]
        for i in range(k):
            grad.append((-ai[i] * D - u * Di[i]) / (n2 * D * D))
        Dd = k + 1
        hess = [[np.zeros_like(u) for _ in range(Dd)] for _ in range(Dd)]
        for i in range(k):
            v = -Di[i] / (n2 * D * D)
            hess[0][1 + i] = hess[1 + i][0] = v
        for i in range(k):
            for j in range(k):
                N = -ai[i] * D - u * Di[i]
                Nj = -aij[i][j] * D - ai[i] * Di[j] + aj_times(ai[j], Di[i]) - u * Dij[i][j]
                hess[1 + i][1 + j] = (Nj * D - 2 * N * Di[j]) / (n2 * D ** 3)
        return grad, hess

    def jacobian_range(self):
        g = 1.0 / (self.n ** 2 * self.Delta)
        return float(g.min()), float(g.max())


def aj_times(aj, Di):
    # d_j u = -a_j, so d_j(-u D_i) contributes + a_j D_i
    return aj * Di


# ----------------------------------------------------------------------------
# operator coefficients in (eta, y)

def _col_coeffs(op, sigma, cols):
    """Coefficients of L = i lambda T1 + T2 in (sigma, y) at per-column points.

    Returns (A [D][D], Bp [D], c) with Bp = B + 2 f' A^{sigma.} + i lambda e_s
    and c = C0 + i lambda q.
    """
    D = op.D
    band = op.band
    f = op.fprof(sigma, 2)
    fp, fpp = f[1], f[2]
    col_shape = band.shape[1:]
    if op.metric.is_constant and op.q is None:
        A = [[np.full_like(sigma, op.A[a][b]) for b in range(D)] for a in range(D)]
        B = [np.zeros_like(sigma) for _ in range(D)]
        q = np.zeros_like(sigma)
    else:
        idx = np.unravel_index(cols, col_shape)
        X = np.empty(sigma.shape + (D,))
        X[..., 0] = sigma
        for k, ax in enumerate(list(band.ybar) + [band.s]):
            X[..., 1 + k] = ax[idx[k]]
        ginv, Bv = op.metric.wave_coefficients(X)
        A = [[ginv[..., a, b] for b in range(D)] for a in range(D)]
        B = [Bv[..., b] for b in range(D)]
        gphi = op.phi.grad(X)
        hphi = op.phi.hess(X)
        q = np.einsum("...ab,...ab->...", ginv, hphi) + np.einsum("...b,...b->...", Bv, gphi)
    if op.potential.is_constant:
        xi = op.potential.constant
    else:
        raise NotImplementedError("pointwise xi along columns needs a constant potential")
    C0 = xi / sigma ** 2 + A[0][0] * (fp ** 2 + fpp) + fp * B[0]
    lam = op.lam
    Bp = [B[b] + 2 * fp * A[0][b] + (1j * lam if b == D - 1 else 0) for b in range(D)]
    c = C0 + 1j * lam * q
    return A, Bp, c


def eta_coefficients(op, chart: EtaChart, sigma, cols):
    """Chain-rule coefficients of L in (eta, y): dict with aee, aei, aij, be, bi, c."""
    A, Bp, c = _col_coeffs(op, sigma, cols)
    grad, hess = chart.derivs(sigma, cols)
    D = op.D
    aee = sum(A[a][b] * grad[a] * grad[b] for a in range(D) for b in range(D))
    aei = [sum(A[a][1 + i] * grad[a] for a in range(D)) for i in range(D - 1)]
    aij = [[A[1 + i][1 + j] for j in range(D - 1)] for i in range(D - 1)]
    be = sum(A[a][b] * hess[a][b] for a in range(D) for b in range(D)) + \
        sum(Bp[a] * grad[a] for a in range(D))
    bi = [Bp[1 + i] for i in range(D - 1)]
    return {"aee": aee, "aei": aei, "aij": aij, "be": be, "bi": bi, "c": c}


def probe_operator_coeffs(op, chart: EtaChart, col, sigma, steps=None, rtol=1e-8):
    """Recover the (eta, y) coefficients of L at one point by applying it to monomials.

    L is applied pointwise with centred differences to 1, x^i and x^i x^j,
    x = (eta, y) shifted to vanish at the probe point. Cross-checks a^{eta eta}
    against the chain-rule value.
    """
    band = op.band
    D = op.D
    col_shape = band.shape[1:]
    idx = np.unravel_index(col, col_shape)
    axes = list(band.ybar) + [band.s]
    p = np.array([sigma] + [axes[k][idx[k]] for k in range(D - 1)])
    interp_a = chart.lower.interpolator(band)
    interp_b = chart.upper.interpolator(band)
    n2 = float(op.n) ** 2

    def eta_fn(X):
        Y = X[..., 1:]
        a = interp_a(Y.reshape(-1, D - 1)).reshape(Y.shape[:-1])
        b = interp_b(Y.reshape(-1, D - 1)).reshape(Y.shape[:-1])
        return (X[..., 0] - a) / (b - a) / n2

    if steps is None:
        steps = np.array([0.05 / n2] + [0.25 * h for h in chart.hy])
    x0 = np.array([eta_fn(p[None])[0]] + list(p[1:]))

    def coord(i):
        if i == 0:
            return lambda X: eta_fn(X) - x0[0]
        return lambda X: X[..., i] - x0[i]

    A, Bp, c0 = _col_coeffs(op, np.array([sigma]), np.array([col]))

    def L(fun):
        g, h = fd_partials(fun, p[None], steps, 4, 2)
        val = fun(p[None])
        out = c0 * val
        for a in range(D):
            out = out + Bp[a] * g[..., a]
            for b in range(D):
                out = out + A[a][b] * h[..., a, b]
        return out[0]

    one = L(lambda X: np.ones(X.shape[:-1]))
    xs = [coord(i) for i in range(D)]
    Lx = [L(x) for x in xs]
    b = [Lx[i] - one * 0.0 for i in range(D)]  # x^i(p) = 0
    a = np.zeros((D, D), dtype=complex)
    for i in range(D):
        for j in range(i, D):
            xi_, xj_ = xs[i], xs[j]
            a[i, j] = a[j, i] = 0.5 * L(lambda X, u=xi_, v=xj_: u(X) * v(X))
    direct = eta_coefficients(op, chart, np.array([sigma]), np.array([col]))
    ref = float(np.real(direct["aee"][0]))
    dev = abs(a[0, 0] - ref) / max(abs(ref), 1e-300)
    if dev > rtol:
        raise ProbeInconsistent(f"probed a^(eta eta) deviates by {dev:.3g}", band=op.n, col=int(col))
    return {"c": one, "b": np.array(b), "a": a, "a_ee_direct": ref, "a_ee_dev": float(dev)}


# ----------------------------------------------------------------------------
# correction data

@dataclass
class CorrectionData:
    n: int
    K_corr: int
    h: dict  # lobe j -> list of arrays h_M over the column grid, M = 0..K_corr+2
    traces: dict  # lobe j -> list of R^(M)
    a_floor: float
    lobes: tuple
    stats: dict = field(default_factory=dict)


def _column_fit_derivs(values_fn, sig_center, K, delta):
    """Derivatives of orders 0..K in sigma at ``sig_center`` of column functions.

    ``values_fn`` maps an (8, ncols) array of sigma nodes, spaced by ``delta``
    and centred on sig_center, to values; a degree-7 interpolant is differentiated.
    """
    k = np.arange(NPTS) - (NPTS - 1) / 2
    nodes = sig_center[None, :] + k[:, None] * delta
    vals = values_fn(nodes)
    t = np.full(sig_center.shape, (NPTS - 1) / 2)
    out = []
    for m in range(K + 1):
        if m == 0:
            w = lagrange_weights(0.0, 1.0, t, NPTS)
        else:
            w = lagrange_deriv_weights(0.0, 1.0, t, NPTS, m)
        out.append(np.sum(w * vals, axis=0) / delta ** m)
    return out


def correction_data(op, chart: EtaChart, psi, K_corr=2, lobes=(0, 1), gamma=0.0):
    """Normal-derivative data h^(j)_M on S_{n-j} from the band residual psi.

    Lobe j = 0 sits on S_n (eta = 0), j = 1 on S_{n-1} (eta = n^-2).
    """
    n = op.n
    band = op.band
    interp = ColumnInterpolant(band, psi)
    col_shape = chart.col_shape
    ncols = int(np.prod(col_shape))
    cols = np.arange(ncols)
    k = len(chart.axes)
    hs = {}
    traces = {}
    floor = np.inf
    Dflat = chart.flat(chart.Delta)
    scale = float(n) ** 2 * Dflat  # d_eta = n^2 Delta d_sigma
    for j in lobes:
        surf = chart.lower if j == 0 else chart.upper
        sig0 = surf.sfrak.reshape(-1)
        R = [interp(sig0, cols, m) * scale ** m for m in range(K_corr + 1)]
        # coefficient eta-derivatives by degree-7 interpolation through nearby nodes
        delta = band.hsigma * 0.5

        def coef_fn(nodes, key, sub=None):
            ccols = np.broadcast_to(cols, nodes.shape)
            co = eta_coefficients(op, chart, nodes.reshape(-1), ccols.reshape(-1))
            v = co[key]
            if sub is not None:
                for s_ in sub:
                    v = v[s_]
            return np.broadcast_to(v, nodes.reshape(-1).shape).reshape(nodes.shape)

        def derivs_of(key, sub=None):
            vals = _column_fit_derivs(lambda nd: coef_fn(nd, key, sub), sig0, K_corr, delta)
            return [v * scale ** m for m, v in enumerate(vals)]

        aee = derivs_of("aee")
        be = derivs_of("be")
        cc = derivs_of("c")
        aei = [derivs_of("aei", (i,)) for i in range(k)]
        bi = [derivs_of("bi", (i,)) for i in range(k)]
        aij = [[derivs_of("aij", (i, jj)) for jj in range(k)] for i in range(k)]
        a0 = np.real(aee[0])
        floor = min(floor, float(np.min(np.abs(a0))))
        thr = 1e-8 * float(n) ** (-gamma)
        if np.min(np.abs(a0)) < thr:
            raise CoefficientFloorViolated(f"|g^-1(d eta, d eta)| below {thr:g}", band=n, lobe=j)
        h = [np.zeros(ncols, complex), np.zeros(ncols, complex)]

        def tang(arr, i):
            return chart.flat(chart._d(arr.reshape(col_shape), i))

        def tang2(arr, i, jj):
            return chart.flat(chart._d2(arr.reshape(col_shape), i, jj))

        for M in range(K_corr + 1):
            acc = R[M].astype(complex)
            for r in range(M + 1):
                C = comb(M, r)
                t = 0
                if r > 0:
                    t = t + aee[r] * h[M - r + 2]
                for i in range(k):
                    if np.any(h[M - r + 1]):
                        t = t + 2 * aei[i][r] * tang(h[M - r + 1], i)
                    if np.any(h[M - r]):
                        t = t + bi[i][r] * tang(h[M - r], i)
                        for jj in range(k):
                            t = t + aij[i][jj][r] * tang2(h[M - r], i, jj)
                t = t + be[r] * h[M - r + 1] + cc[r] * h[M - r]
                acc = acc + C * t
            h.append(-acc / aee[0])
        hs[j] = [x.reshape(col_shape) for x in h]
        traces[j] = [x.reshape(col_shape) for x in R]
    return CorrectionData(n, K_corr, hs, traces, floor, tuple(lobes))


# ----------------------------------------------------------------------------
# omega

def zeta_values(x, eps, nderiv=0):
    d = cutoff_zeta_jet(x, eps, nderiv).derivs()
    return d[0] if nderiv == 0 else d


def omega_columns(chart: EtaChart, data: CorrectionData, sigma, cols, eps=0.25, nderiv=0):
    """omega (without the chi_n factor) and its eta-derivatives at per-column sigma."""
    if eps >= 0.5:
        raise LobeOverlap("epsilon must be below 1/2 for disjoint lobes", eps=eps)
    n2 = float(chart.n) ** 2
    eta = chart.eta(sigma, cols)
    out = np.zeros((nderiv + 1,) + np.shape(sigma), complex)
    for j in data.lobes:
        x = eta - j / n2
        zd = zeta_values(n2 * x, eps, nderiv)
        zd = zd[None] if nderiv == 0 else zd
        hk = [chart.flat(h)[cols] for h in data.h[j]]
        # Taylor polynomial P and its derivatives in eta
        P = np.zeros((nderiv + 1,) + np.shape(x), complex)
        for k, hv in enumerate(hk):
            if not np.any(hv):
                continue
            for m in range(min(nderiv, k) + 1):
                P[m] = P[m] + hv * x ** (k - m) / factorial(k - m)
        for m in range(nderiv + 1):
            for r in range(m + 1):
                out[m] = out[m] + comb(m, r) * zd[r] * n2 ** r * P[m - r]
    return out[0] if nderiv == 0 else out


def build_omega(op, chart: EtaChart, data: CorrectionData, eps=0.25):
    """omega_n on the band grid, multiplied by chi_n."""
    band = op.band
    nsig = band.shape[0]
    ncols = int(np.prod(chart.col_shape))
    sig = np.broadcast_to(band.sigma[:, None], (nsig, ncols))
    cols = np.broadcast_to(np.arange(ncols)[None, :], (nsig, ncols))
    om = omega_columns(chart, data, sig.reshape(-1), cols.reshape(-1), eps)
    om = om.reshape(nsig, ncols) * op.chi(band.sigma)[:, None]
    # vanishing on the surfaces (value and first normal derivative)
    checks = {}
    for j in data.lobes:
        surf = chart.lower if j == 0 else chart.upper
        s0 = surf.sfrak.reshape(-1)
        d = omega_columns(chart, data, s0, np.arange(ncols), eps, 1)
        checks[j] = float(np.max(np.abs(d[:2])))
    return om.reshape(band.shape), checks


# ----------------------------------------------------------------------------
# vanishing order along normal lines

def normal_line_residual(op, chart: EtaChart, data: CorrectionData, psi_interp, col, lobe, x):
    """Corrected residual psi + L omega along one column at offsets x = eta - lobe n^-2.

    Offsets must lie inside the plateau of the lobe's cutoff, where omega is the
    bare Taylor polynomial; coefficients are evaluated pointwise.
    """
    n2 = float(chart.n) ** 2
    x = np.asarray(x, float)
    eta = x + lobe / n2
    cols = np.full(x.shape, col)
    sig = chart.sigma_of_eta(eta, cols)
    R = psi_interp(sig, cols)
    co = eta_coefficients(op, chart, sig, cols)
    k = len(chart.axes)
    hk = data.h[lobe]
    col_shape = chart.col_shape
    idx = np.unravel_index(col, col_shape)

    def poly(arrs, m):
        """m-th x-derivative of sum_k arrs[k] x^k / k!."""
        out = np.zeros(x.shape, complex)
        for kk, v in enumerate(arrs):
            if kk >= m and v != 0:
                out = out + v * x ** (kk - m) / factorial(kk - m)
        return out

    base = [complex(h[idx]) for h in hk]
    d_i = [[complex(chart._d(h, i)[idx]) for h in hk] for i in range(k)]
    d_ij = [[[complex(chart._d2(h, i, j)[idx]) for h in hk] for j in range(k)] for i in range(k)]
    Lw = co["aee"] * poly(base, 2) + co["be"] * poly(base, 1) + co["c"] * poly(base, 0)
    for i in range(k):
        Lw = Lw + 2 * co["aei"][i] * poly(d_i[i], 1) + co["bi"][i] * poly(d_i[i], 0)
        for j in range(k):
            Lw = Lw + co["aij"][i][j] * poly(d_ij[i][j], 0)
    return R + Lw, R


def vanishing_order(op, chart, data, psi_interp, col, lobe, eps=0.25, decades=2.0, npts=25,
                    skip=1.0):
    """Fitted exponent p in |psi + L omega| ~ |x|^p approaching S_{n-lobe} from inside the band.

    The window spans ``decades`` below the lobe half-width divided by 10^skip;
    the outermost decade carries the next Taylor orders, which can cancel the
    leading one where the tangential data is stationary.
    """
    n2 = float(chart.n) ** 2
    xmax = eps / n2 / 4
    mag = np.logspace(-decades - skip, -skip, npts) * xmax
    x = mag if lobe == 0 else -mag
    r, R = normal_line_residual(op, chart, data, psi_interp, col, lobe, x)
    y = np.log(np.abs(r))
    p = np.polyfit(np.log(mag), y, 1)[0]
    return float(p), {"x": mag, "abs_residual": np.abs(r), "abs_R": np.abs(R)}
