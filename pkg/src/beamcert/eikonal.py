"""Eikonal functions, adapted charts (sigma, ybar, s) and their certification.

Three constructions are provided: the closed-form planar phase, the explicit
pure-AdS phase obtained through the Poincare patch, and a geodesic spray
launched from a boundary section for general metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (DeformationNotTimelike, GeodesicBlowup, NotUnit,
                     SectionNotSpacelike)
from .geometry import (ConstantMetric, GridMetric, MetricField, ScalarField,
                       christoffels, sphere_embedding)
from .stencils import cubic_grid_interpolator

TAU_EIK = 1e-9
CAUSTIC_EPS = 1e-3
CAUSTIC_MARGIN = 5


@dataclass
class AdaptedChart:
    """Maps between ambient coordinates and (sigma, ybar, s)."""
    to_adapted: Callable
    to_ambient: Callable | None
    s_vector: Callable          # components of d/ds in ambient coordinates
    names: tuple = ()


@dataclass
class CertificationReport:
    null_residual: float
    gauge_residual: float
    sigma_lower: float
    sup_norms: dict
    tol: float
    npoints: int

    @property
    def passed(self):
        return (self.null_residual <= self.tol and self.gauge_residual <= self.tol
                and self.sigma_lower > 0)

    def to_dict(self):
        return {"null_residual": self.null_residual, "gauge_residual": self.gauge_residual,
                "sigma_lower": self.sigma_lower, "sup_norms": self.sup_norms,
                "tol": self.tol, "npoints": self.npoints, "passed": self.passed}


@dataclass
class EikonalData:
    phi: ScalarField
    sigma_field: ScalarField
    chart: AdaptedChart | None
    certification: CertificationReport | None = None
    adapted: "EikonalData | None" = None
    meta: dict = field(default_factory=dict)


def planar_ambient_metric(d=2):
    """d rho^2 + dxbar^2 - dt^2 in (rho, x^1..x^{d-1}, t)."""
    g = np.diag([1.0] + [1.0] * (d - 1) + [-1.0])
    return ConstantMetric(g, ["rho"] + [f"x{i + 1}" for i in range(d - 1)] + ["t"])


def _unit_kbar(kbar):
    k = np.atleast_1d(np.asarray(kbar, float))
    if abs(np.linalg.norm(k) - 1.0) > 1e-12:
        raise NotUnit(f"|kbar| = {np.linalg.norm(k):.15g}", kbar=k.tolist())
    return k


def planar_eikonal(kbar) -> EikonalData:
    """phi = (kbar.xbar - t)/2 with sigma = rho, ybar = xbar - t kbar, s = t."""
    k = _unit_kbar(kbar)
    m = k.size
    D = m + 2

    def to_adapted(X):
        X = np.asarray(X, float)
        Y = X.copy()
        Y[..., 1:1 + m] = X[..., 1:1 + m] - X[..., -1:] * k
        return Y

    def to_ambient(Y):
        Y = np.asarray(Y, float)
        X = Y.copy()
        X[..., 1:1 + m] = Y[..., 1:1 + m] + Y[..., -1:] * k
        return X

    sv = np.concatenate([[0.0], k, [1.0]])
    chart = AdaptedChart(to_adapted, to_ambient,
                         lambda X: np.broadcast_to(sv, np.shape(X)).copy(),
                         ("sigma",) + tuple(f"y{i + 1}" for i in range(m)) + ("s",))
    phi = ScalarField.linear(np.concatenate([[0.0], 0.5 * k, [-0.5]]), name="phi")
    sig = ScalarField.coordinate(0, D, name="sigma")
    e_s = np.zeros(D)
    e_s[-1] = 1.0
    adapted = EikonalData(ScalarField.linear(np.concatenate([[0.0], 0.5 * k, [0.0]]), name="phi"),
                          ScalarField.coordinate(0, D, name="sigma"),
                          AdaptedChart(lambda Y: np.asarray(Y, float), lambda Y: np.asarray(Y, float),
                                       lambda Y: np.broadcast_to(e_s, np.shape(Y)).copy(), chart.names))
    return EikonalData(phi, sig, chart, adapted=adapted, meta={"kind": "planar", "kbar": k.tolist()})


def _points(grid):
    if isinstance(grid, (list, tuple)):
        mesh = np.meshgrid(*[np.asarray(a, float) for a in grid], indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, len(grid))
    X = np.asarray(grid, float)
    return X.reshape(-1, X.shape[-1])


def verify_eikonal(data: EikonalData, metric: MetricField, grid, tol=TAU_EIK, gamma=0.0):
    """Null condition, 2 grad phi = d_s, and g^-1(dsigma, dsigma) >= C sigma^gamma on a grid.

    ``grid`` is a list of axes or an array of points in the metric's coordinates.
    """
    X = _points(grid)
    _, ginv, _ = metric.eval(X)
    dphi = data.phi.grad(X)
    null = np.abs(np.einsum("...ab,...a,...b->...", ginv, dphi, dphi))
    if data.chart is not None:
        grad = 2 * np.einsum("...ab,...b->...a", ginv, dphi)
        gauge = float(np.max(np.abs(grad - data.chart.s_vector(X))))
    else:
        gauge = float("nan")
    dsig = data.sigma_field.grad(X)
    gss = np.einsum("...ab,...a,...b->...", ginv, dsig, dsig)
    sig = data.sigma_field(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = gss / np.abs(sig) ** gamma if gamma else gss
    hess = data.phi.hess(X)
    sup = {"phi": float(np.max(np.abs(data.phi(X)))),
           "dphi": float(np.max(np.abs(dphi))),
           "d2phi": float(np.max(np.abs(hess)))}
    return CertificationReport(float(np.max(null)), gauge, float(np.min(ratio)), sup, tol, int(X.shape[0]))


# ----------------------------------------------------------------------------
# boundary deformation

def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, built from exp(-1/x)."""
    x = np.asarray(x, float)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass
class BumpProfile:
    """Psi(ybar) = sigma1 (1 - prod_k p_k(ybar_k)), p_k = 1 on the inner box, 0 off the outer box."""
    sigma1: float
    inner_box: list
    outer_box: list

    def __post_init__(self):
        if self.sigma1 < 0:
            raise ValueError("sigma1 must be non-negative")
        for (a, b), (A, B) in zip(self.inner_box, self.outer_box):
            if not (A < a <= b < B):
                raise ValueError("inner box must be compactly contained in the outer box")

    def __call__(self, Y):
        Y = np.atleast_2d(np.asarray(Y, float)) if np.ndim(Y) == 1 and len(self.inner_box) > 1 \
            else np.asarray(Y, float)
        if Y.ndim == 0 or (len(self.inner_box) == 1 and (Y.ndim == 0 or Y.shape[-1] != 1)):
            Y = Y[..., None]
        p = np.ones(Y.shape[:-1])
        for k, ((a, b), (A, B)) in enumerate(zip(self.inner_box, self.outer_box)):
            y = Y[..., k]
            p = p * smooth_step((y - A) / (a - A)) * smooth_step((B - y) / (B - b))
        return self.sigma1 * (1.0 - p)


def deform_sigma(data: EikonalData, bump: BumpProfile, metric: MetricField = None, grid=None):
    """Replace sigma by sigma - Psi(ybar); phi and s are untouched.

    With a metric and grid the lower bound of g^-1(dsigma~, dsigma~) is measured
    on the part of the grid with sigma~ > 0.
    """
    if bump.sigma1 == 0:
        return data
    chart = data.chart
    m = len(bump.inner_box)
    base = data.sigma_field

    def f(X):
        Y = chart.to_adapted(X)
        return base(X) - bump(Y[..., 1:1 + m])

    new_sig = ScalarField(f, steps=1e-4, order=4, name="sigma_tilde")
    out = EikonalData(data.phi, new_sig, chart, data.certification, None,
                      dict(data.meta, bump={"sigma1": bump.sigma1, "inner": bump.inner_box,
                                            "outer": bump.outer_box}))
    if metric is not None and grid is not None:
        X = _points(grid)
        keep = new_sig(X) > 0
        if np.any(keep):
            X = X[keep]
            _, ginv, _ = metric.eval(X)
            ds = new_sig.grad(X)
            C = float(np.min(np.einsum("...ab,...a,...b->...", ginv, ds, ds)))
            out.meta["sigma_lower"] = C
            if C <= 0:
                raise DeformationNotTimelike(f"g^-1(dsigma~, dsigma~) reaches {C:.3g}", C=C)
    return out


# ----------------------------------------------------------------------------
# pure AdS through the Poincare patch

def pure_planar_map(X, d=3):
    """(tau, chi, angles) -> (rho, xbar, t) of the Poincare patch."""
    X = np.asarray(X, float)
    tau, chi = X[..., 0], X[..., 1]
    om = sphere_embedding(X[..., 2:])
    den = np.cos(tau) - np.cos(chi) * om[..., d - 1]
    out = np.empty(X.shape[:-1] + (d + 1,))
    out[..., 0] = np.sin(chi) / den
    out[..., 1:d] = np.cos(chi)[..., None] * om[..., :d - 1] / den[..., None]
    out[..., d] = np.sin(tau) / den
    return out


def pure_ads_eikonal(kbar, d=3, fd_step=1e-4) -> EikonalData:
    """Explicit phase (cos chi kbar.(w^1..w^{d-1}) - sin tau) / (2 (cos tau - cos chi w^d)).

    Gradients are finite differences. The s-vector is the planar d_s pushed
    through the inverse Jacobian, rescaled for the sin^2(chi) conformal frame.
    """
    k = _unit_kbar(kbar)
    if k.size != d - 1:
        raise ValueError("kbar must have d-1 components")

    def phi(X):
        X = np.asarray(X, float)
        tau, chi = X[..., 0], X[..., 1]
        om = sphere_embedding(X[..., 2:])
        num = np.cos(chi) * (om[..., :d - 1] @ k) - np.sin(tau)
        return num / (2 * (np.cos(tau) - np.cos(chi) * om[..., d - 1]))

    def sigma(X):
        return pure_planar_map(X, d)[..., 0]

    sv_planar = np.concatenate([[0.0], k, [1.0]])

    def s_vector(X):
        X = np.asarray(X, float)
        D = d + 1
        J = np.empty(X.shape[:-1] + (D, D))
        for c in range(D):
            Xp, Xm = X.copy(), X.copy()
            Xp[..., c] += 1e-6
            Xm[..., c] -= 1e-6
            J[..., :, c] = (pure_planar_map(Xp, d) - pure_planar_map(Xm, d)) / 2e-6
        v = np.linalg.solve(J, np.broadcast_to(sv_planar, X.shape)[..., None])[..., 0]
        rho = pure_planar_map(X, d)[..., 0]
        return v * (rho / np.sin(X[..., 1]))[..., None] ** 2

    def to_adapted(X):
        P = pure_planar_map(X, d)
        Y = P.copy()
        Y[..., 1:d] = P[..., 1:d] - P[..., d:] * k
        return Y

    chart = AdaptedChart(to_adapted, None, s_vector,
                         ("sigma",) + tuple(f"y{i + 1}" for i in range(d - 1)) + ("s",))
    return EikonalData(ScalarField(phi, steps=fd_step, order=4, name="phi"),
                       ScalarField(sigma, steps=fd_step, order=4, name="sigma"),
                       chart, meta={"kind": "pure-ads", "kbar": k.tolist(), "d": d})


# ----------------------------------------------------------------------------
# geodesic spray from a boundary section

@dataclass
class SectionSpec:
    """Spacelike section H of the boundary, sampled on a grid of xbar.

    ``embed`` maps xbar (..., d-1) to boundary coordinates (..., d); ``foliation``
    is the function x^1 on H whose level sets the null hypersurfaces extend.
    """
    embed: Callable
    xbar_axes: list
    rho_axis: np.ndarray
    foliation: Callable = None
    foliation_coef: np.ndarray | None = None   # set when x^1 is linear in xbar

    def __post_init__(self):
        if self.foliation is None and self.foliation_coef is None:
            self.foliation_coef = np.eye(len(self.xbar_axes))[0]
        if self.foliation is None:
            c = np.asarray(self.foliation_coef, float)
            self.foliation = lambda xb: np.asarray(xb, float) @ c


@dataclass
class GeodesicFamily:
    section: np.ndarray          # launch points (P, D)
    params: np.ndarray           # (P, d) transversal parameters (rho, xbar)
    s_prime: np.ndarray          # affine sample grid
    positions: np.ndarray        # (P, S, D)
    velocities: np.ndarray       # (P, S, D)
    null_residual: np.ndarray    # (P, S)
    jacobian_log: np.ndarray     # (P, S)
    kappa: np.ndarray            # (P,) |grad_Sigma x^1|

    def to_rows(self):
        """CSV rows: p-index, s, coordinates, velocity, null residual, jacobian_log."""
        rows = []
        for p in range(self.positions.shape[0]):
            for j, sp in enumerate(self.s_prime):
                rows.append([p, sp / (2 * self.kappa[p])] + self.positions[p, j].tolist()
                            + self.velocities[p, j].tolist()
                            + [self.null_residual[p, j], self.jacobian_log[p, j]])
        return rows


@dataclass
class CausticReport:
    lifespan: np.ndarray         # (P, 2) affine interval free of caustics and exits
    flagged: int
    s_range: tuple               # common surviving s interval
    affine_residual: float
    null_max: float


def geodesic_rhs(metric):
    D = metric.dim

    def rhs(_, y):
        Y = y.reshape(-1, 2 * D)
        X, V = Y[:, :D], Y[:, D:]
        G = christoffels(metric, X)
        acc = -np.einsum("pabc,pb,pc->pa", G, V, V)
        return np.concatenate([V, acc], axis=1).reshape(-1)

    return rhs


def integrate_geodesics(metric, X0, V0, s_end, rtol=1e-10, atol=1e-10, events=None, max_step=np.inf):
    """Adaptive RK4(5) integration of a batch of geodesics from s' = 0 to s_end."""
    y0 = np.concatenate([np.atleast_2d(X0), np.atleast_2d(V0)], axis=1).reshape(-1)
    sol = solve_ivp(geodesic_rhs(metric), (0.0, s_end), y0, method="RK45", rtol=rtol, atol=atol,
                    dense_output=True, events=events, max_step=max_step)
    if sol.status == -1:
        raise GeodesicBlowup(sol.message, s_end=s_end)
    return sol


def _section_frame(metric, X, tangents):
    """Unit future timelike normal T to span(tangents) and the Gram matrix of tangents."""
    g = metric.components(X)
    P, D = X.shape
    # covector annihilating the tangent space
    n = np.empty((P, D))
    for p in range(P):
        _, _, vt = np.linalg.svd(tangents[p])
        n[p] = vt[-1]
    ginv = np.linalg.inv(g)
    T = np.einsum("pab,pb->pa", ginv, n)
    norm = np.einsum("pab,pa,pb->p", g, T, T)
    if np.any(norm >= 0):
        raise SectionNotSpacelike("section normal is not timelike", min_norm=float(norm.max()))
    T = T / np.sqrt(-norm)[:, None]
    T = T * np.sign(T[:, -1])[:, None]
    return g, T


def construct_eikonal_from_section(metric: MetricField, section: SectionSpec, s_range=(-1.0, 1.0),
                                   ns=65, rtol=1e-10, atol=1e-10, eps_caustic=CAUSTIC_EPS):
    """phi, sigma and ybar constant along null geodesics launched from Sigma with N = T + E.

    Coordinates of ``metric`` are (rho, boundary coordinates). The affine
    parameter is rescaled by 2 kappa, kappa = |grad_Sigma x^1|, so that
    2 grad phi = d_s holds exactly; kappa = 1 reproduces s = s'/2.
    Returns (EikonalData on the adapted grid, GeodesicFamily, CausticReport).
    """
    rho = np.asarray(section.rho_axis, float)
    xaxes = [np.asarray(a, float) for a in section.xbar_axes]
    m = len(xaxes)
    D = metric.dim
    mesh = np.meshgrid(rho, *xaxes, indexing="ij")
    params = np.stack(mesh, axis=-1).reshape(-1, m + 1)
    xb = params[:, 1:]
    bnd = section.embed(xb)
    X0 = np.concatenate([params[:, :1], bnd], axis=1)
    P = X0.shape[0]
    # tangents of Sigma: d_rho and d_{x^i} of the embedding
    h = 1e-6
    tang = np.zeros((P, m + 1, D))
    tang[:, 0, 0] = 1.0
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        tang[:, 1 + i, 1:] = (section.embed(xb + e) - section.embed(xb - e)) / (2 * h)
    g, T = _section_frame(metric, X0, tang)
    # E: unit normal to the x^1 level sets inside Sigma, pointing to increasing x^1
    G = np.einsum("pia,pab,pjb->pij", tang, g, tang)
    if np.any(np.linalg.eigvalsh(G)[:, 0] <= 0):
        raise SectionNotSpacelike("Sigma is not spacelike", band=None)
    dfol = np.zeros((P, m + 1))
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        dfol[:, 1 + i] = (section.foliation(xb + e) - section.foliation(xb - e)) / (2 * h)
    coef = np.linalg.solve(G, dfol[..., None])[..., 0]       # gradient in Sigma coordinates
    kappa = np.sqrt(np.einsum("pi,pij,pj->p", coef, G, coef))
    E = np.einsum("pi,pia->pa", coef, tang) / kappa[:, None]
    N = T + E
    smin, smax = s_range
    sp_lo, sp_hi = 2 * smin * kappa.min(), 2 * smax * kappa.max()
    out_X = []
    sprime = np.linspace(2 * smin, 2 * smax, ns)   # affine grid for kappa = 1; rescaled below
    for sgn, end in ((1, sp_hi), (-1, sp_lo)):
        if end == 0:
            continue
        sol = integrate_geodesics(metric, X0, N, end, rtol, atol)
        out_X.append(sol)
    # sample every geodesic at s' = 2 kappa_p s on the common s grid
    s_grid = np.linspace(smin, smax, ns)
    pos = np.empty((P, ns, D))
    vel = np.empty((P, ns, D))
    fwd = out_X[0]
    bwd = out_X[1] if len(out_X) > 1 else None
    for j, s in enumerate(s_grid):
        spj = 2 * kappa * s
        for sol in ((fwd,) if s >= 0 or bwd is None else (bwd,)):
            Y = np.stack([sol.sol(v).reshape(-1, 2 * D)[p] for p, v in enumerate(spj)])
        pos[:, j] = Y[:, :D]
        vel[:, j] = Y[:, D:] * (2 * kappa)[:, None]   # d/ds
    gpos = metric.components(pos.reshape(-1, D)).reshape(P, ns, D, D)
    vnull = np.einsum("psab,psa,psb->ps", gpos, vel / (2 * kappa)[:, None, None],
                      vel / (2 * kappa)[:, None, None])
    # transversal Jacobian d(position)/d(rho, xbar) by differences across the section grid
    shp = (rho.size,) + tuple(a.size for a in xaxes)
    posg = pos.reshape(shp + (ns, D))
    cols = []
    for ax, axv in enumerate([rho] + xaxes):
        cols.append(np.gradient(posg, axv, axis=ax))
    Jt = np.stack(cols, axis=-1)                      # (..., ns, D, m+1)
    gram = np.einsum("...ai,...aj->...ij", Jt, Jt)
    logdet = 0.5 * np.linalg.slogdet(gram)[1]
    logdet = logdet.reshape(P, ns)
    j0 = int(np.argmin(np.abs(s_grid)))
    rel = logdet - logdet[:, j0:j0 + 1]
    inside = metric.in_domain(pos.reshape(-1, D)).reshape(P, ns) & (pos[..., 0] > 0)
    ok = (rel >= np.log(eps_caustic)) & inside
    lifespan = np.zeros((P, 2))
    for p in range(P):
        lo = j0
        while lo > 0 and ok[p, lo - 1]:
            lo -= 1
        hi = j0
        while hi < ns - 1 and ok[p, hi + 1]:
            hi += 1
        lifespan[p] = s_grid[lo], s_grid[hi]
    flagged = int(np.sum(~ok))
    lo_i = int(np.searchsorted(s_grid, lifespan[:, 0].max()))
    hi_i = int(np.searchsorted(s_grid, lifespan[:, 1].min(), side="right")) - 1
    if flagged:
        lo_i, hi_i = min(lo_i + CAUSTIC_MARGIN, j0), max(hi_i - CAUSTIC_MARGIN, j0)
    keep = slice(lo_i, hi_i + 1)
    # affine residual: dV/ds' + Gamma(V, V) with V = dX/ds'
    Vp = vel / (2 * kappa)[:, None, None]
    ds = (s_grid[1] - s_grid[0]) * 2 * kappa
    dV = np.gradient(Vp, axis=1, edge_order=2) / ds[:, None, None]
    Gm = christoffels(metric, pos.reshape(-1, D)).reshape(P, ns, D, D, D)
    aff = dV + np.einsum("psabc,psb,psc->psa", Gm, Vp, Vp)
    affine = float(np.max(np.abs(aff[:, 2:-2])))
    fam = GeodesicFamily(X0, params, sprime, pos, vel / (2 * kappa)[:, None, None], vnull, logdet, kappa)
    rep = CausticReport(lifespan, flagged, (float(s_grid[lo_i]), float(s_grid[hi_i])), affine,
                        float(np.max(np.abs(vnull))))
    # adapted chart: (sigma, ybar, s) -> ambient position, phi = x^1 of the launch point
    s_keep = s_grid[keep]
    amb = posg[..., keep, :]
    axes = [rho] + xaxes + [s_keep]
    phi_vals = section.foliation(xb).reshape(shp)
    phi_grid = np.broadcast_to(phi_vals[..., None], shp + (s_keep.size,))
    # pull the metric back to the adapted grid
    Jc = np.stack([np.gradient(amb, ax, axis=i, edge_order=2) for i, ax in enumerate(axes)], axis=-1)
    gamb = metric.components(amb.reshape(-1, D)).reshape(amb.shape + (D,))
    gad = np.einsum("...ai,...ab,...bj->...ij", Jc, gamb, Jc)
    gm = GridMetric(axes, 0.5 * (gad + np.swapaxes(gad, -1, -2)), ("sigma",) + tuple(f"y{i + 1}" for i in range(m)) + ("s",))
    phi_int = cubic_grid_interpolator(axes, phi_grid)
    e_s = np.zeros(D)
    e_s[-1] = 1.0
    fol_lin = section.foliation_coef is not None
    phi_f = (ScalarField.linear(np.concatenate([[0.0], section.foliation_coef, [0.0]]), name="phi")
             if fol_lin else ScalarField(lambda Y: phi_int(np.asarray(Y, float)), steps=1e-3, name="phi"))
    data = EikonalData(phi_f, ScalarField.coordinate(0, D, name="sigma"),
                       AdaptedChart(lambda Y: np.asarray(Y, float), None,
                                    lambda Y: np.broadcast_to(e_s, np.shape(Y)).copy(), gm.coord_names),
                       meta={"kind": "section", "grid_metric": gm, "ambient": amb, "axes": axes})
    return data, fam, rep
