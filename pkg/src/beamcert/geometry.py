"""Coordinates, Lorentzian metrics and the differential operators built on them.

Coordinates are always ordered (sigma, ybar^1..ybar^{d-1}, s) for adapted
charts. Ambient charts used by the aAdS applications put rho first as well.
Every metric evaluates on arrays of points with shape (..., D).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .errors import SignatureError, SingularMetric, StencilOutOfDomain
from .stencils import central_weights, cubic_grid_interpolator

DET_FLOOR = 1e-14


# ----------------------------------------------------------------------------
# points and domains

@dataclass(frozen=True)
class ChartPoint:
    sigma: float
    ybar: tuple
    s: float

    def __post_init__(self):
        object.__setattr__(self, "ybar", tuple(float(v) for v in np.atleast_1d(self.ybar)))

    def to_array(self):
        return np.array([self.sigma, *self.ybar, self.s], dtype=float)

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, float)
        return cls(float(x[0]), tuple(x[1:-1]), float(x[-1]))


@dataclass
class DomainSpec:
    sigma0: float = 0.1
    s_minus: float = -1.0
    s_plus: float = 1.0
    ybar_box: list = field(default_factory=lambda: [(-1.0, 1.0)])
    d: int = 2

    def __post_init__(self):
        self.ybar_box = [tuple(map(float, b)) for b in self.ybar_box]
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if len(self.ybar_box) != self.d - 1:
            raise ValueError("ybar_box needs d-1 intervals")
        if not (self.s_minus < 0 < self.s_plus):
            raise ValueError("need s_minus < 0 < s_plus")
        if not np.isfinite([self.s_minus, self.s_plus]).all():
            raise ValueError("s range must be finite")
        if any(lo >= hi for lo, hi in self.ybar_box):
            raise ValueError("empty ybar box")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")

    def contains(self, p: ChartPoint) -> bool:
        return (0 < p.sigma < self.sigma0 and self.s_minus < p.s < self.s_plus
                and all(lo <= y <= hi for y, (lo, hi) in zip(p.ybar, self.ybar_box)))

    def to_dict(self):
        return {"sigma0": self.sigma0, "s_minus": self.s_minus, "s_plus": self.s_plus,
                "ybar_box": [list(b) for b in self.ybar_box], "d": self.d}


# ----------------------------------------------------------------------------
# finite differences of callables

def _steps(steps, D):
    return np.broadcast_to(np.asarray(steps, float), (D,)).copy()


def fd_partials(f: Callable, X, steps, order=4, max_order=2):
    """First and second partial derivatives of a callable at points X.

    Returns (grad (..., D), hess (..., D, D)); hess is None if max_order < 2.
    """
    X = np.asarray(X, float)
    D = X.shape[-1]
    h = _steps(steps, D)
    off1, w1 = central_weights(1, order)
    grad = np.zeros(X.shape, dtype=np.result_type(f(X[..., :1, :] if X.ndim > 1 else X), float))
    for a in range(D):
        acc = 0
        for o, w in zip(off1, w1):
            if w == 0:
                continue
            Y = X.copy()
            Y[..., a] += o * h[a]
            acc = acc + w * f(Y)
        grad[..., a] = acc / h[a]
    if max_order < 2:
        return grad, None
    off2, w2 = central_weights(2, order)
    hess = np.zeros(X.shape + (D,), dtype=grad.dtype)
    for a in range(D):
        acc = 0
        for o, w in zip(off2, w2):
            Y = X.copy()
            Y[..., a] += o * h[a]
            acc = acc + w * f(Y)
        hess[..., a, a] = acc / h[a] ** 2
        for b in range(a + 1, D):
            acc = 0
            for (oa, wa), (ob, wb) in product(zip(off1, w1), zip(off1, w1)):
                if wa == 0 or wb == 0:
                    continue
                Y = X.copy()
                Y[..., a] += oa * h[a]
                Y[..., b] += ob * h[b]
                acc = acc + wa * wb * f(Y)
            hess[..., a, b] = hess[..., b, a] = acc / (h[a] * h[b])
    return grad, hess


def stencil_points(X, steps, order=4):
    """All points touched by fd_partials (used for domain checks)."""
    X = np.asarray(X, float)
    D = X.shape[-1]
    h = _steps(steps, D)
    off1, _ = central_weights(1, order)
    r = int(np.max(np.abs(off1)))
    pts = []
    for a in range(D):
        for b in range(D):
            for oa in range(-r, r + 1):
                Y = X.copy()
                Y[..., a] += oa * h[a]
                Y[..., b] += oa * h[b] * (a != b)
                pts.append(Y)
    return np.stack(pts)


class ScalarField:
    """A scalar function of chart coordinates, optionally with analytic derivatives."""

    def __init__(self, func, grad=None, hess=None, steps=1e-3, order=4, name=""):
        self.func = func
        self._grad = grad
        self._hess = hess
        self.steps = steps
        self.order = order
        self.name = name

    def __call__(self, X):
        return self.func(np.asarray(X, float))

    def grad(self, X):
        if self._grad is not None:
            return self._grad(np.asarray(X, float))
        return fd_partials(self.func, X, self.steps, self.order, 1)[0]

    def hess(self, X):
        if self._hess is not None:
            return self._hess(np.asarray(X, float))
        return fd_partials(self.func, X, self.steps, self.order, 2)[1]

    @classmethod
    def linear(cls, coef, const=0.0, name=""):
        coef = np.asarray(coef, float)
        D = coef.size

        def f(X):
            return np.asarray(X, float) @ coef + const

        def g(X):
            return np.broadcast_to(coef, np.shape(X)).copy()

        def h(X):
            return np.zeros(np.shape(X) + (D,))

        fld = cls(f, g, h, name=name)
        fld.linear_coef = coef
        return fld

    @classmethod
    def coordinate(cls, index, D, name=""):
        c = np.zeros(D)
        c[index] = 1.0
        return cls.linear(c, name=name)


# ----------------------------------------------------------------------------
# metric data and checks

@dataclass
class MetricData:
    g: np.ndarray
    ginv: np.ndarray
    sqrt_abs_det: np.ndarray
    dg: np.ndarray  # dg[..., c, a, b] = d_c g_ab


def lorentz_check(g, where=""):
    """Raise if any metric in the batch is singular or not of signature (-,+,..,+)."""
    det = np.linalg.det(g)
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) < DET_FLOOR):
        raise SingularMetric(f"|det g| below {DET_FLOOR:g}{where}",
                             min_abs_det=float(np.nanmin(np.abs(det))))
    ev = np.linalg.eigvalsh(0.5 * (g + np.swapaxes(g, -1, -2)))
    neg = np.sum(ev < 0, axis=-1)
    if np.any(neg != 1):
        raise SignatureError(f"metric is not Lorentzian{where}",
                             negative_counts=sorted(set(np.atleast_1d(neg).tolist())))
    return det


class MetricField:
    """Base class: subclasses implement ``components``; derivatives default to FD."""

    dim: int
    is_constant = False
    fd_step = 1e-5
    coord_names: Sequence[str] = ()

    def components(self, X):
        raise NotImplementedError

    def in_domain(self, X):
        return np.ones(np.shape(X)[:-1], dtype=bool)

    def derivatives(self, X):
        """Centered second-order differences with step ``fd_step``."""
        X = np.asarray(X, float)
        D = self.dim
        out = np.zeros(X.shape[:-1] + (D, D, D))
        for c in range(D):
            Xp = X.copy()
            Xm = X.copy()
            Xp[..., c] += self.fd_step
            Xm[..., c] -= self.fd_step
            out[..., c, :, :] = (self.components(Xp) - self.components(Xm)) / (2 * self.fd_step)
        return out

    def eval(self, X, check=True):
        X = np.asarray(X, float)
        g = self.components(X)
        if check:
            det = lorentz_check(g)
        else:
            det = np.linalg.det(g)
        ginv = np.linalg.inv(g)
        return g, ginv, np.sqrt(np.abs(det))

    def wave_coefficients(self, X):
        """(g^{ab}, B^b) with  box h = g^{ab} d_ab h + B^b d_b h."""
        X = np.asarray(X, float)
        g, ginv, _ = self.eval(X)
        dg = self.derivatives(X)
        # d_a g^{ab} = - g^{am} g^{bn} d_a g_mn
        dginv = -np.einsum("...am,...bn,...amn->...b", ginv, ginv, dg)
        dlog = 0.5 * np.einsum("...mn,...amn->...a", ginv, dg)
        B = dginv + np.einsum("...ab,...a->...b", ginv, dlog)
        return ginv, B


def metric_at(metric: MetricField, p) -> MetricData:
    X = p.to_array() if isinstance(p, ChartPoint) else np.asarray(p, float)
    g = metric.components(X)
    det = lorentz_check(g, f" at {X.tolist()}")
    ginv = np.linalg.inv(g)
    return MetricData(g, ginv, float(np.sqrt(abs(det))), metric.derivatives(X))


def _check_stencil(metric, X, steps, order):
    pts = stencil_points(X, steps, order)
    if not np.all(metric.in_domain(pts)):
        raise StencilOutOfDomain("finite-difference stencil leaves the metric domain",
                                 point=np.asarray(X).tolist())


def box_g(metric: MetricField, h, p, steps=1e-2, order=4):
    """Divergence-form wave operator applied to a callable at a point (or points)."""
    X = p.to_array() if isinstance(p, ChartPoint) else np.asarray(p, float)
    _check_stencil(metric, X, steps, order)
    f = h if callable(h) else h.func
    if isinstance(h, ScalarField) and h._grad is not None and h._hess is not None:
        grad, hess = h.grad(X), h.hess(X)
    else:
        grad, hess = fd_partials(f, X, steps, order, 2)
    ginv, B = metric.wave_coefficients(X)
    return np.einsum("...ab,...ab->...", ginv, hess) + np.einsum("...b,...b->...", B, grad)


def grad_g(metric: MetricField, h, p, steps=1e-2, order=4):
    X = p.to_array() if isinstance(p, ChartPoint) else np.asarray(p, float)
    _check_stencil(metric, X, steps, order)
    if isinstance(h, ScalarField) and h._grad is not None:
        dh = h.grad(X)
    else:
        dh = fd_partials(h if callable(h) else h.func, X, steps, order, 1)[0]
    _, ginv, _ = metric.eval(X)
    return np.einsum("...ab,...b->...a", ginv, dh)


def christoffels(metric: MetricField, p):
    """Gamma[..., a, b, c] = Gamma^a_{bc}."""
    X = p.to_array() if isinstance(p, ChartPoint) else np.asarray(p, float)
    g = metric.components(X)
    lorentz_check(g)
    ginv = np.linalg.inv(g)
    dg = metric.derivatives(X)
    # Gamma_{m b c} = 1/2 (d_b g_mc + d_c g_mb - d_m g_bc)
    low = 0.5 * (np.einsum("...bmc->...mbc", dg) + np.einsum("...cmb->...mbc", dg)
                 - dg)
    return np.einsum("...am,...mbc->...abc", ginv, low)


# ----------------------------------------------------------------------------
# built-in metrics

class ConstantMetric(MetricField):
    is_constant = True

    def __init__(self, g, coord_names=()):
        self.g0 = np.asarray(g, float)
        self.dim = self.g0.shape[0]
        self.coord_names = tuple(coord_names)
        lorentz_check(self.g0)

    def components(self, X):
        return np.broadcast_to(self.g0, np.shape(X)[:-1] + self.g0.shape).copy()

    def derivatives(self, X):
        return np.zeros(np.shape(X)[:-1] + (self.dim,) * 3)


class PlanarConformal(ConstantMetric):
    """d rho^2 - dt^2 + dxbar^2 rewritten in (sigma, ybar, s) with t = s, xbar = ybar + s kbar."""

    def __init__(self, kbar):
        kbar = np.atleast_1d(np.asarray(kbar, float))
        self.kbar = kbar
        dm1 = kbar.size
        D = dm1 + 2
        g = np.zeros((D, D))
        g[0, 0] = 1.0
        g[1:1 + dm1, 1:1 + dm1] = np.eye(dm1)
        g[1:1 + dm1, -1] = kbar
        g[-1, 1:1 + dm1] = kbar
        g[-1, -1] = kbar @ kbar - 1.0
        names = ["sigma"] + [f"y{i + 1}" for i in range(dm1)] + ["s"]
        super().__init__(g, names)


def sphere_embedding(angles):
    """Hyperspherical angles (th1..th_{d-1}) -> unit vector in R^d.

    omega^d = cos th1; for d = 3 this is (sin th1 cos th2, sin th1 sin th2, cos th1).
    """
    th = np.asarray(angles, float)
    m = th.shape[-1]
    d = m + 1
    out = np.zeros(th.shape[:-1] + (d,))
    sprod = np.ones(th.shape[:-1])
    for k in range(m):
        out[..., d - 1 - k] = sprod * np.cos(th[..., k])
        sprod = sprod * np.sin(th[..., k])
    out[..., 0] = sprod
    # put the cosine of the last angle first for the familiar d = 3 layout
    if m >= 2:
        out[..., [0, 1]] = out[..., [1, 0]]
    return out


def _sphere_metric_diag(th):
    """Diagonal of the round metric in hyperspherical angles and its angle derivatives."""
    m = th.shape[-1]
    diag = np.ones(th.shape[:-1] + (m,))
    ddiag = np.zeros(th.shape[:-1] + (m, m))  # ddiag[..., c, k] = d_c diag_k
    for k in range(1, m):
        diag[..., k] = np.prod(np.sin(th[..., :k]) ** 2, axis=-1)
        for c in range(k):
            others = np.prod([np.sin(th[..., j]) ** 2 for j in range(k) if j != c], axis=0) \
                if k > 1 else 1.0
            ddiag[..., c, k] = others * 2 * np.sin(th[..., c]) * np.cos(th[..., c])
    return diag, ddiag


class PureAdsMetric(MetricField):
    """Pure AdS in (tau, chi, angles): sin^-2(chi)[-dtau^2 + dchi^2 + cos^2(chi) round].

    With ``conformal=True`` the sin^2(chi)-rescaled metric is returned.
    """

    def __init__(self, d=3, conformal=True):
        self.d = d
        self.dim = d + 1
        self.conformal = conformal
        self.coord_names = ("tau", "chi") + tuple(f"th{i + 1}" for i in range(d - 1))

    def in_domain(self, X):
        chi = np.asarray(X)[..., 1]
        return (chi > 0) & (chi < np.pi / 2)

    def components(self, X):
        X = np.asarray(X, float)
        chi = X[..., 1]
        diag, _ = _sphere_metric_diag(X[..., 2:])
        g = np.zeros(X.shape[:-1] + (self.dim, self.dim))
        g[..., 0, 0] = -1.0
        g[..., 1, 1] = 1.0
        for k in range(self.d - 1):
            g[..., 2 + k, 2 + k] = np.cos(chi) ** 2 * diag[..., k]
        if not self.conformal:
            g = g / np.sin(chi)[..., None, None] ** 2
        return g

    def derivatives(self, X):
        X = np.asarray(X, float)
        chi = X[..., 1]
        diag, ddiag = _sphere_metric_diag(X[..., 2:])
        D = self.dim
        out = np.zeros(X.shape[:-1] + (D, D, D))
        c2 = np.cos(chi) ** 2
        dc2 = -2 * np.sin(chi) * np.cos(chi)
        for k in range(self.d - 1):
            out[..., 1, 2 + k, 2 + k] = dc2 * diag[..., k]
            for c in range(self.d - 1):
                out[..., 2 + c, 2 + k, 2 + k] = c2 * ddiag[..., c, k]
        if not self.conformal:
            gbar = PureAdsMetric(self.d, True).components(X)
            s2 = np.sin(chi) ** 2
            out = out / s2[..., None, None, None]
            # d_chi (1/sin^2) = -2 cos / sin^3
            out[..., 1, :, :] += gbar * (-2 * np.cos(chi) / np.sin(chi) ** 3)[..., None, None]
        return out


class FGMetric(MetricField):
    """Fefferman-Graham form  d rho^2 + sum_k rho^k g^(k)(x)  in (rho, x^0..x^{d-1}).

    ``coeffs`` maps k to a constant (d, d) matrix or to a callable x -> (..., d, d).
    """

    def __init__(self, coeffs: dict, d: int, fd_step=1e-5):
        self.coeffs = {int(k): v for k, v in coeffs.items()}
        self.d = d
        self.dim = d + 1
        self.fd_step = fd_step
        self.coord_names = ("rho",) + tuple(f"x{i}" for i in range(d))
        self.is_constant = all(not callable(v) for v in self.coeffs.values()) and \
            set(self.coeffs) <= {0}

    def _coef(self, k, x):
        v = self.coeffs[k]
        if callable(v):
            return np.asarray(v(x), float)
        return np.broadcast_to(np.asarray(v, float), x.shape[:-1] + (self.d, self.d))

    def components(self, X):
        X = np.asarray(X, float)
        rho = X[..., 0]
        x = X[..., 1:]
        g = np.zeros(X.shape[:-1] + (self.dim, self.dim))
        g[..., 0, 0] = 1.0
        for k in self.coeffs:
            g[..., 1:, 1:] += (rho ** k)[..., None, None] * self._coef(k, x)
        return g

    def derivatives(self, X):
        X = np.asarray(X, float)
        rho = X[..., 0]
        x = X[..., 1:]
        D = self.dim
        out = np.zeros(X.shape[:-1] + (D, D, D))
        for k in self.coeffs:
            if k > 0:
                out[..., 0, 1:, 1:] += (k * rho ** (k - 1))[..., None, None] * self._coef(k, x)
            if callable(self.coeffs[k]):
                for c in range(self.d):
                    xp = x.copy()
                    xm = x.copy()
                    xp[..., c] += self.fd_step
                    xm[..., c] -= self.fd_step
                    out[..., 1 + c, 1:, 1:] += (rho ** k)[..., None, None] * (
                        self._coef(k, xp) - self._coef(k, xm)) / (2 * self.fd_step)
        return out


class PullbackMetric(MetricField):
    """Metric of ``base`` expressed in new coordinates Y with X = F(Y)."""

    def __init__(self, base: MetricField, F: Callable, jac: Callable, fd_step=1e-5,
                 coord_names=()):
        self.base = base
        self.F = F
        self.jac = jac
        self.dim = base.dim
        self.fd_step = fd_step
        self.coord_names = tuple(coord_names) or base.coord_names

    def components(self, Y):
        Y = np.asarray(Y, float)
        J = self.jac(Y)
        g = self.base.components(self.F(Y))
        return np.einsum("...ai,...ab,...bj->...ij", J, g, J)


class GridMetric(MetricField):
    """Metric sampled on a tensor grid, interpolated with cubic splines."""

    def __init__(self, axes, comps, coord_names=(), fd_step=1e-5):

        self.axes = [np.asarray(a, float) for a in axes]
        self.dim = len(self.axes)
        self.fd_step = fd_step
        self.coord_names = tuple(coord_names)
        comps = np.asarray(comps, float)
        self._interp = {}
        for a in range(self.dim):
            for b in range(a, self.dim):
                self._interp[a, b] = cubic_grid_interpolator(self.axes, comps[..., a, b])

    def in_domain(self, X):
        X = np.asarray(X)
        ok = np.ones(X.shape[:-1], bool)
        for a, ax in enumerate(self.axes):
            ok &= (X[..., a] >= ax[0]) & (X[..., a] <= ax[-1])
        return ok

    def components(self, X):
        X = np.asarray(X, float)
        flat = X.reshape(-1, self.dim)
        g = np.zeros((flat.shape[0], self.dim, self.dim))
        for (a, b), f in self._interp.items():
            g[:, a, b] = g[:, b, a] = f(flat)
        return g.reshape(X.shape[:-1] + (self.dim, self.dim))

    @classmethod
    def from_file(cls, path):
        """JSON file with keys ``coords``, ``axes`` and ``components``.

        ``components`` maps "ab" index strings (a <= b) to nested lists on the grid.
        """
        with open(path) as fh:
            spec = json.load(fh)
        axes = [np.asarray(a, float) for a in spec["axes"]]
        D = len(axes)
        shape = tuple(len(a) for a in axes)
        comps = np.zeros(shape + (D, D))
        for key, arr in spec["components"].items():
            a, b = int(key[0]), int(key[1])
            comps[..., a, b] = comps[..., b, a] = np.asarray(arr, float).reshape(shape)
        return cls(axes, comps, spec.get("coords", ()))


class SingularPotential:
    """The function xi of the singular term xi / sigma^2 together with the timelike bound."""

    def __init__(self, xi=-0.75, gamma=0.0, C=0.5):
        self._xi = xi
        self.gamma = float(gamma)
        self.C = float(C)

    def xi(self, X):
        if callable(self._xi):
            return self._xi(np.asarray(X, float))
        return np.full(np.shape(X)[:-1], self._xi, dtype=np.result_type(self._xi, float))

    @property
    def is_constant(self):
        return not callable(self._xi)

    @property
    def constant(self):
        return self._xi

    def check(self, metric: MetricField, X, sigma_field=None):
        """Return (sup|xi|, min of g^-1(dsigma,dsigma) - C sigma^gamma) on the points."""
        X = np.asarray(X, float)
        xi = self.xi(X)
        if sigma_field is None:
            sigma_field = ScalarField.coordinate(0, X.shape[-1])
        _, ginv, _ = metric.eval(X)
        ds = sigma_field.grad(X)
        q = np.einsum("...a,...ab,...b->...", ds, ginv, ds)
        sig = sigma_field(X)
        return float(np.max(np.abs(xi))), float(np.min(q - self.C * np.abs(sig) ** self.gamma))


METRIC_REGISTRY = {
    "planar-conformal": lambda kbar=(1.0,), **kw: PlanarConformal(kbar),
    "pure-ads-conformal": lambda d=3, **kw: PureAdsMetric(d, conformal=True),
    "fg-generic": lambda coeffs=None, d=2, **kw: FGMetric(
        coeffs if coeffs is not None else {0: np.diag([-1.0] + [1.0] * (d - 1))}, d),
}


def make_metric(name, **kwargs):
    try:
        return METRIC_REGISTRY[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown metric {name!r}; known: {sorted(METRIC_REGISTRY)}") from None
