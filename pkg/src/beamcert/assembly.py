"""Gluing of band beams into u, the quotient a = Pu/u, decay tables and certification.

Every magnitude is carried as (log scale, complex mantissa). Exponentials
e^{f_n} and the fast phases e^{i lambda_n phi} are cancelled or factored
before any division, so nothing of size e^{-n^2} is ever formed directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .bands import band_endpoints, overlap, plateau_endpoints
from .dd import phase_mod_2pi
from .errors import NearSurfaceIllConditioned, OutsideBands
from .geometry import ChartPoint
from .interference import BeamEnvelope, ColumnInterpolant
from .stencils import cubic_grid_interpolator, fd_axis, fornberg
from .transport import Beam, BandOperator

COND_LIMIT = 1e6
DD_UNIT = 2.0 ** -100  # per-term rounding allowance of a dd sum


@dataclass
class GluedBand:
    """Final beam of one band: envelope includes omega, ``beam.psi`` is psi + L omega.

    ``P`` is the independently assembled conjugated operator applied to the
    envelope and ``noise`` its rounding allowance; both live on the band grid.
    """
    n: int
    op: BandOperator
    beam: Beam
    P: np.ndarray | None = None
    noise: np.ndarray | None = None
    stats: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def band(self):
        return self.op.band

    @property
    def env(self):
        if "env" not in self._cache:
            self._cache["env"] = BeamEnvelope(self.beam)
        return self._cache["env"]

    def interp(self, name):
        if name not in self._cache:
            arr = {"psi": self.beam.psi, "P": self.P, "noise": self.noise}[name]
            self._cache[name] = ColumnInterpolant(self.band, arr)
        return self._cache[name]


@dataclass
class GluedCounterexample:
    bands: dict
    surfaces: dict = field(default_factory=dict)
    n0: int = 0
    nmax: int = 0

    def __post_init__(self):
        if self.bands:
            self.n0 = min(self.bands)
            self.nmax = max(self.bands)
        self.check_exclusivity()

    def check_exclusivity(self):
        ns = sorted(self.bands)
        for i, n in enumerate(ns):
            for m in ns[i + 2:]:
                if m - n >= 2 and overlap(n, m) is not None:
                    raise AssertionError(f"bands {n} and {m} overlap")

    def bands_at(self, sigma):
        """Indices n with sigma inside the open band Omega_n (at most two, consecutive)."""
        out = []
        for n in sorted(self.bands):
            lo, hi = band_endpoints(n)
            if lo < sigma < hi:
                out.append(n)
        if len(out) > 2 or (len(out) == 2 and out[1] - out[0] != 1):
            raise AssertionError(f"sigma={sigma} lies in bands {out}")
        return out

    @property
    def col_axes(self):
        b = next(iter(self.bands.values())).band
        return b.axes[1:]

    @property
    def col_shape(self):
        return tuple(len(a) for a in self.col_axes)


# ----------------------------------------------------------------------------
# slices

def _phi_derivs(phi, X, axis, N, h=1e-3):
    """Directional derivatives d^k phi along one coordinate axis, k = 1..N."""
    if hasattr(phi, "linear_coef"):
        c = float(phi.linear_coef[axis])
        return [c] + [0.0] * (N - 1)
    offs = np.arange(-3, 4)
    vals = []
    for o in offs:
        Y = X.copy()
        Y[..., axis] += o * h
        vals.append(phi(Y))
    vals = np.stack(vals)
    out = []
    for k in range(1, N + 1):
        w = np.array([float(x) for x in fornberg(offs, 0, k)])
        out.append(np.tensordot(w, vals, axes=1) / h ** k)
    return out


def _bell(Z, N):
    """Complete Bell polynomials Y_k(Z_1..Z_k) for k = 0..N."""
    Y = [1.0]
    if N >= 1:
        Y.append(Z[1])
    if N >= 2:
        Y.append(Z[2] + Z[1] ** 2)
    if N >= 3:
        Y.append(Z[3] + 3 * Z[1] * Z[2] + Z[1] ** 3)
    if N >= 4:
        raise ValueError("derivative order above 3 not supported")
    return Y


@dataclass
class BandSlice:
    """One band on sigma = sigma0: D_dir^k v / e^{f(sigma0)} for k <= N on the column grid."""
    n: int
    sigma: float
    f: float
    phase: np.ndarray      # lambda phi mod 2 pi
    env: np.ndarray
    psi: np.ndarray
    derivs: list           # derivs[dir][k], phase factor excluded

    def weight(self, f_ref):
        return np.exp(self.f - f_ref + 1j * self.phase)


def band_slice(gb: GluedBand, sigma0, N=0, with_psi=True):
    band = gb.band
    n = gb.n
    D = len(band.shape)
    col_shape = band.shape[1:]
    ncols = int(np.prod(col_shape))
    sig = np.full(ncols, float(sigma0))
    cols = np.arange(ncols)
    grids = list(np.meshgrid(*band.axes[1:], indexing="ij"))
    X = np.stack([np.full(col_shape, float(sigma0))] + grids, axis=-1)
    phi = gb.op.phi
    lam = gb.op.lam
    env0 = gb.env(sig, cols).reshape(col_shape)
    psi = gb.interp("psi")(sig, cols).reshape(col_shape) if with_psi else None
    fd = gb.op.fprof(float(sigma0), max(N, 1))
    derivs = []
    if N > 0:
        hs = [None] + list(band.hy) + [band.hs]
        for a in range(D):
            dphi = _phi_derivs(phi, X, a, N)
            if a == 0:
                sc = float(n) ** -2
                E = [env0] + [gb.env(sig, cols, k).reshape(col_shape) * sc ** k for k in range(1, N + 1)]
                Z = [None] + [sc ** k * (fd[k] + 1j * lam * dphi[k - 1]) for k in range(1, N + 1)]
            else:
                E = [env0] + [fd_axis(env0, a - 1, k, hs[a]) for k in range(1, N + 1)]
                Z = [None] + [1j * lam * dphi[k - 1] for k in range(1, N + 1)]
            Y = _bell(Z, N)
            derivs.append([sum(comb(k, r) * Y[r] * E[k - r] for r in range(k + 1)) for k in range(N + 1)])
    phase = phase_mod_2pi(lam, phi(X))
    return BandSlice(n, float(sigma0), float(fd[0]), phase, env0, psi, derivs)


def _slices(glued, sigma0, N=0, with_psi=True):
    ns = glued.bands_at(sigma0)
    if not ns:
        raise OutsideBands(f"sigma={sigma0} lies in no band", sigma=sigma0)
    return [band_slice(glued.bands[n], sigma0, N, with_psi) for n in ns]


def slice_u(glued, sigma0, N=0):
    """(log scale, mantissas[dir][k]) of u and its rescaled directional derivatives on a slice.

    For N = 0 the mantissa list is [[u / e^scale]].
    """
    sl = _slices(glued, sigma0, N, with_psi=False)
    f_ref = max(s.f for s in sl)
    if N == 0:
        return f_ref, [[sum(s.weight(f_ref) * s.env for s in sl)]]
    D = len(sl[0].derivs)
    out = [[sum(s.weight(f_ref) * s.derivs[a][k] for s in sl) for k in range(N + 1)] for a in range(D)]
    return f_ref, out


def slice_a(glued, sigma0):
    """a on a slice, with the conditioning estimate of the two-band quotient."""
    sl = _slices(glued, sigma0, 0)
    if len(sl) == 1:
        s = sl[0]
        return s.psi / s.env, np.ones(s.env.shape)
    f_ref = max(s.f for s in sl)
    w = [s.weight(f_ref) for s in sl]
    den = w[0] * sl[0].env + w[1] * sl[1].env
    num = w[0] * sl[0].psi + w[1] * sl[1].psi
    cond = (np.abs(w[0] * sl[0].env) + np.abs(w[1] * sl[1].env)) / np.abs(den)
    return num / den, cond


# ----------------------------------------------------------------------------
# pointwise evaluation

@dataclass
class UJet:
    """D_dir^k u = values[dir][k] * exp(log_scale); dir 0 is n^-2 d_sigma."""
    log_scale: float
    values: list

    @property
    def value(self):
        return self.values[0][0] * np.exp(self.log_scale)

    def log_abs(self, k=0, direction=0):
        return self.log_scale + float(np.log(np.abs(self.values[direction][k])))


@dataclass
class AValue:
    value: complex
    conditioning: float
    bands: tuple
    ill_conditioned: bool = False


def _point_coords(p):
    return np.asarray(p.coords if isinstance(p, ChartPoint) else p, float)


def _interp_col(glued, arr, x):
    rgi = cubic_grid_interpolator(glued.col_axes, arr)
    return complex(rgi(x[None, 1:])[0])


def _point_slices(glued, x, N, with_psi):
    out = []
    for s in _slices(glued, x[0], N, with_psi):
        gb = glued.bands[s.n]
        ph = float(phase_mod_2pi(gb.op.lam, gb.op.phi(x[None])[0:1])[0])
        env = _interp_col(glued, s.env, x)
        psi = _interp_col(glued, s.psi, x) if with_psi else None
        der = [[_interp_col(glued, d, x) for d in row] for row in s.derivs]
        out.append((s.f, ph, env, psi, der))
    return out


def evaluate_u(glued, p, N=0):
    x = _point_coords(p)
    parts = _point_slices(glued, x, N, False)
    f_ref = max(q[0] for q in parts)
    w = [np.exp(q[0] - f_ref + 1j * q[1]) for q in parts]
    if N == 0:
        return UJet(f_ref, [[sum(wi * q[2] for wi, q in zip(w, parts))]])
    D = len(parts[0][4])
    vals = [[sum(wi * q[4][a][k] for wi, q in zip(w, parts)) for k in range(N + 1)] for a in range(D)]
    return UJet(f_ref, vals)


def evaluate_a(glued, p, strict=False):
    """a at a point; the two-band quotient factors out the dominant exponential first."""
    x = _point_coords(p)
    parts = _point_slices(glued, x, 0, True)
    ns = tuple(glued.bands_at(x[0]))
    if len(parts) == 1:
        _, _, env, psi, _ = parts[0]
        return AValue(psi / env, 1.0, ns)
    f_ref = max(q[0] for q in parts)
    w = [np.exp(q[0] - f_ref + 1j * q[1]) for q in parts]
    den = sum(wi * q[2] for wi, q in zip(w, parts))
    num = sum(wi * q[3] for wi, q in zip(w, parts))
    cond = float(sum(abs(wi * q[2]) for wi, q in zip(w, parts)) / abs(den))
    val = AValue(num / den, cond, ns, cond > COND_LIMIT)
    if val.ill_conditioned and strict:
        raise NearSurfaceIllConditioned("two-band quotient ill conditioned", sigma=float(x[0]),
                                        conditioning=cond, value=val.value)
    return val


# ----------------------------------------------------------------------------
# decay tables

@dataclass
class DecayReport:
    sigma0: list
    log_sup_u: dict           # N -> list over sigma0 of log sup |D^N u|
    log_sup_a: dict           # N -> list over sigma0 of log sup |D^N a|
    mu_list: list
    q: float
    r: float
    monotone_u: bool
    monotone_a: bool
    failures: list

    def table(self):
        """Rows (sigma0, N, mu, sup_value, log10_sup, quantity)."""
        rows = []
        for qty, src in (("u", self.log_sup_u), ("a", self.log_sup_a)):
            for N, logs in src.items():
                for s, L in zip(self.sigma0, logs):
                    for mu in self.mu_list:
                        lv = L - mu * np.log(s)
                        rows.append((s, N, mu, float(np.exp(lv)), float(lv / np.log(10)), qty))
        return rows

    def value(self, sigma0, N, mu, qty="u"):
        src = self.log_sup_u if qty == "u" else self.log_sup_a
        i = int(np.argmin(np.abs(np.asarray(self.sigma0) - sigma0)))
        return float(np.exp(src[N][i] - mu * np.log(self.sigma0[i])))


def _log_sup_Da(glued, sigma0, N):
    """log sup over the slice of |D_dir^N a| for each N' <= N (max over directions)."""
    a0, _ = slice_a(glued, sigma0)
    n = glued.bands_at(sigma0)[0]
    band = glued.bands[n].band
    out = [float(np.log(np.max(np.abs(a0))))]
    if N == 0:
        return out
    h = band.hsigma
    offs = np.arange(-3, 4)
    stack = np.stack([a0 if o == 0 else slice_a(glued, sigma0 + o * h)[0] for o in offs])
    hs = list(band.hy) + [band.hs]
    for k in range(1, N + 1):
        w = np.array([float(x) for x in fornberg(offs, 0, k)])
        ds = np.tensordot(w, stack, axes=1) / h ** k * float(n) ** (-2 * k)
        m = np.max(np.abs(ds))
        for ax in range(a0.ndim):
            m = max(m, np.max(np.abs(fd_axis(a0, ax, k, hs[ax]))))
        out.append(float(np.log(m)))
    return out


def decay_report(glued, sigma_samples=None, mu_list=tuple(range(13)), N_probe=3):
    """Sup-norm tables on slices sigma = sigma0 and the fit log sup|u| = -q sigma^-2 + r."""
    if sigma_samples is None:
        sigma_samples = [1.0 / n for n in sorted(glued.bands)
                         if len(glued.bands_at(1.0 / n)) == 1]
    sig = sorted(float(s) for s in sigma_samples)[::-1]
    lo, hi = 1.0 / glued.nmax, 1.0 / glued.n0
    for s in sig:
        if not (lo <= s <= hi):
            raise OutsideBands(f"sample sigma={s} outside (1/n_max, 1/n_0)", sigma=s)
    log_u = {N: [] for N in range(N_probe + 1)}
    log_a = {N: [] for N in range(N_probe + 1)}
    for s in sig:
        f_ref, m = slice_u(glued, s, N_probe)
        for N in range(N_probe + 1):
            if N == 0:
                v = np.max(np.abs(m[0][0]))
            else:
                v = max(np.max(np.abs(m[a][N])) for a in range(len(m)))
            log_u[N].append(f_ref + float(np.log(v)))
        la = _log_sup_Da(glued, s, N_probe)
        for N in range(N_probe + 1):
            log_a[N].append(la[N])
    x = np.array(sig) ** -2.0
    slope, r = np.polyfit(x, np.array(log_u[0]), 1)
    failures = []

    def mono(src, qty):
        ok = True
        for N, logs in src.items():
            for mu in mu_list:
                v = np.array(logs) - mu * np.log(sig)
                steps = np.diff(v) / np.log(10)
                for i, d in enumerate(steps):
                    if not d <= -1.0:
                        ok = False
                        failures.append({"quantity": qty, "N": N, "mu": mu, "sigma0": sig[i + 1],
                                         "log10_step": float(d)})
        return ok

    mu = list(mu_list)
    mu_ok = mono(log_u, "u")
    ma_ok = mono(log_a, "a")
    return DecayReport(sig, log_u, log_a, mu, float(-slope), float(r), mu_ok, ma_ok, failures)


# ----------------------------------------------------------------------------
# certification

@dataclass
class ProbeResult:
    band: int
    index: tuple
    sigma: float
    rel_residual: float
    noise_ratio: float
    conditioning: float
    kind: str


@dataclass
class CertificationReport:
    probes: list
    tol: float
    tol_near: float
    skipped: int

    def _sel(self, kind):
        return [p for p in self.probes if p.kind == kind]

    @property
    def interior(self):
        return self._sel("interior")

    @property
    def near(self):
        return self._sel("near")

    def summary(self):
        out = {}
        for kind, tol in (("interior", self.tol), ("near", self.tol_near)):
            ps = self._sel(kind)
            r = np.array([p.rel_residual for p in ps]) if ps else np.zeros(0)
            out[kind] = {"count": len(ps), "max_rel_residual": float(r.max()) if r.size else None,
                         "tol": tol, "pass": bool(r.size and r.max() <= tol)}
        out["skipped_inadmissible"] = self.skipped
        return out


def _interior_candidates(gb, margin=5, sigma_margin=1):
    band = gb.band
    n = gb.n
    sig = band.sigma
    h = band.hsigma
    # single-band strip; column margins keep stencils off the grid edges
    lo = max(band_endpoints(n + 1)[1], band.sigma_lo) + sigma_margin * h
    hi = min(band_endpoints(n - 1)[0], band.sigma_hi) - sigma_margin * h
    rows = np.nonzero((sig > lo) & (sig < hi))[0]
    col_ok = [np.arange(margin, m - margin) for m in band.shape[1:]]
    return rows, col_ok


def certify_equation(glued, n_interior=60, n_near=14, tol=1e-5, tol_near=1e-4,
                     admissible=1e-6, near_cells=6, seed=0):
    """Compare Pu with a u at sampled grid probes, both normalised by the dominant e^F.

    Pu comes from the conjugated operator assembled in double-double on the
    final envelope; a u from the quotient a = psi~/envelope times the envelope.
    Probes whose rounding allowance exceeds ``admissible`` times the signal are
    skipped and counted.
    """
    rng = np.random.default_rng(seed)
    probes = []
    skipped = 0
    for n in sorted(glued.bands):
        gb = glued.bands[n]
        rows, col_ok = _interior_candidates(gb)
        env = gb.beam.envelope.values
        psi = gb.beam.psi
        got = 0
        tries = 0
        while got < n_interior and tries < 50 * n_interior and rows.size:
            tries += 1
            idx = (int(rng.choice(rows)),) + tuple(int(rng.choice(c)) for c in col_ok)
            P, q, e, nz = gb.P[idx], psi[idx], env[idx], gb.noise[idx]
            if nz > admissible * abs(q) or abs(e) == 0:
                skipped += 1
                continue
            a = q / e
            au = a * e
            rel = abs(P - au) / (abs(P) + abs(au) + nz)
            probes.append(ProbeResult(n, idx, float(gb.band.sigma[idx[0]]), float(rel),
                                      float(nz / abs(q)), 1.0, "interior"))
            got += 1
    for n in sorted(glued.surfaces):
        if n not in glued.bands or n + 1 not in glued.bands:
            continue
        surf = glued.surfaces[n]
        if surf.fallback:
            continue
        gn, gm = glued.bands[n], glued.bands[n + 1]
        band = gn.band
        h = band.hsigma
        sig = band.sigma
        sf = surf.sfrak
        col_shape = band.shape[1:]
        cand = []
        for flat in range(int(np.prod(col_shape))):
            ci = np.unravel_index(flat, col_shape)
            if any(c < 5 or c >= m - 5 for c, m in zip(ci, col_shape)):
                continue
            d = np.abs(sig - sf[ci]) / h
            for i in np.nonzero((d <= near_cells) & (d > 0))[0]:
                cand.append((int(i), flat))
        order = rng.permutation(len(cand))
        got = 0
        for k in order:
            if got >= n_near:
                break
            i, flat = cand[k]
            ci = np.unravel_index(flat, col_shape)
            idx = (i,) + tuple(int(c) for c in ci)
            s0 = float(sig[i])
            x = np.array([s0] + [float(ax[c]) for ax, c in zip(band.axes[1:], ci)])
            vals = []
            for gb, at_node in ((gn, True), (gm, False)):
                if at_node:
                    P, q, e, nz = gb.P[idx], gb.beam.psi[idx], gb.beam.envelope.values[idx], gb.noise[idx]
                else:
                    sg, cc = np.array([s0]), np.array([flat])
                    P = gb.interp("P")(sg, cc)[0]
                    q = gb.interp("psi")(sg, cc)[0]
                    e = gb.env(sg, cc)[0]
                    nz = abs(gb.interp("noise")(sg, cc)[0])
                f = float(gb.op.fprof(s0))
                ph = float(phase_mod_2pi(gb.op.lam, gb.op.phi(x[None]))[0])
                vals.append((f, ph, P, q, e, nz))
            f_ref = max(v[0] for v in vals)
            w = [np.exp(v[0] - f_ref + 1j * v[1]) for v in vals]
            Pu = sum(wi * v[2] for wi, v in zip(w, vals))
            num = sum(wi * v[3] for wi, v in zip(w, vals))
            den = sum(wi * v[4] for wi, v in zip(w, vals))
            nz = sum(abs(wi) * v[5] for wi, v in zip(w, vals))
            if nz > admissible * abs(num) or den == 0:
                skipped += 1
                continue
            cond = float(sum(abs(wi * v[4]) for wi, v in zip(w, vals)) / abs(den))
            au = (num / den) * den
            rel = abs(Pu - au) / (abs(Pu) + abs(au) + nz)
            probes.append(ProbeResult(n, idx, s0, float(rel), float(nz / abs(num)), cond, "near"))
            got += 1
    return CertificationReport(probes, tol, tol_near, skipped)


# ----------------------------------------------------------------------------
# gluing invariants

def surface_zero_check(glued, n, ratio=0.5):
    """Zeros of |u| in the overlap of bands n, n+1 against S_n.

    Returns the largest distance (in sigma cells) from S_n of a node where
    |v_n + v_{n+1}| < ratio |v_dominant|, and the lower-bound constant
    min |v_n + v_{n+1}| / (|v_dominant| min(|sigma - s_n|, 1)).
    """
    gn, gm = glued.bands[n], glued.bands[n + 1]
    surf = glued.surfaces[n]
    band = gn.band
    ov = overlap(n, n + 1)
    # plateau of both cutoffs inside the overlap
    lo = max(ov[0], plateau_endpoints(n)[1])
    hi = min(ov[1], plateau_endpoints(n + 1)[2])
    rows = np.nonzero((band.sigma > lo) & (band.sigma < hi))[0]
    col_shape = band.shape[1:]
    ncols = int(np.prod(col_shape))
    sf = surf.sfrak.reshape(-1)
    worst_dist = 0.0
    K0 = np.inf
    h = band.hsigma
    grids = list(np.meshgrid(*band.axes[1:], indexing="ij"))
    phiX = [g.reshape(-1) for g in grids]
    for i in rows:
        s0 = float(band.sigma[i])
        sg = np.full(ncols, s0)
        cols = np.arange(ncols)
        X = np.stack([sg] + phiX, axis=-1)
        parts = []
        for gb in (gn, gm):
            e = gb.env(sg, cols)
            f = float(gb.op.fprof(s0))
            ph = phase_mod_2pi(gb.op.lam, gb.op.phi(X))
            parts.append((f, ph, e))
        f_ref = max(p[0] for p in parts)
        terms = [np.exp(p[0] - f_ref + 1j * p[1]) * p[2] for p in parts]
        tot = np.abs(terms[0] + terms[1])
        dom = np.maximum(np.abs(terms[0]), np.abs(terms[1]))
        r = tot / dom
        dist = np.abs(s0 - sf)
        small = r < ratio
        if np.any(small):
            worst_dist = max(worst_dist, float(np.max(dist[small]) / h))
        K0 = min(K0, float(np.min(r / np.minimum(dist, 1.0))))
    return {"max_zero_distance_cells": worst_dist, "K0_lower_bound": K0, "rows": int(rows.size)}
