"""Configuration and end-to-end orchestration.

``run_pipeline`` sequences eikonal certification, per-band transport,
interference surfaces, the envelope correction, gluing and the conformal
checks. Every asserted property is recorded in ``RunResult.verdicts`` with its
measured value and tolerance; nothing raises on a failed check.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import (DD_UNIT, GluedBand, GluedCounterexample, certify_equation, decay_report,
                       surface_zero_check)
from .bands import band_domain
from .dd import DDC
from .errors import BeamcertError, ConfigError
from .geometry import DomainSpec, FGMetric, PlanarConformal, PureAdsMetric, SingularPotential
from .interference import (ColumnInterpolant, EtaChart, build_omega, check_sign_bounds,
                           correction_data, fallback_surface, locate_surface, vanishing_order)
from .transport import (BandOperator, HierarchyConfig, assemble_band, conjugated_operator_dd,
                        conjugation_residual, gaussian_envelope, solve_hierarchy)

SCENARIOS = ("planar", "planar-localized", "pure-ads", "fg-generic", "custom-metric")
STAGES = ("eikonal", "conjugation", "bands", "surfaces", "correction", "assembly", "aads")

DEFAULT_TOL = {
    "eikonal_planar": 1e-10,
    "eikonal_pure": 1e-7,
    "conjugation": 1e-5,
    "ladder_rel": 0.01,
    "surface_closed_form": 1e-9,
    "surface_C": 2.0,
    "vanishing_order": 2.7,
    "bracket_pad": 0.05,
    "decay_decades": 1.0,
    "certify": 1e-5,
    "certify_near": 1e-4,
    "isometry": 1e-6,
    "roundtrip": 1e-9,
    "gncc_zero": 1e-9,
}

TEST_ENVELOPES = (((0.0, 0.0, 0.0), (0.25, 0.6, 0.5)),
                  ((0.1, 0.2, -0.1), (0.2, 0.4, 0.4)),
                  ((-0.1, -0.3, 0.2), (0.3, 0.5, 0.6)))


def _tuple(x):
    return tuple(_tuple(v) for v in x) if isinstance(x, (list, tuple)) else x


def _list(x):
    return [_list(v) for v in x] if isinstance(x, (list, tuple)) else x


@dataclass
class RunConfig:
    scenario: str = "planar"
    domain: DomainSpec = field(default_factory=DomainSpec)
    exponents: HierarchyConfig = field(default_factory=HierarchyConfig)
    n0: int = 12
    nmax: int = 20
    resolution: tuple = (129, 65, 257)
    conj_resolution: tuple = (65, 33, 129)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOL))
    K_corr: int = 2
    lobe_eps: float = 0.25
    kbar: tuple = (1.0,)
    xi: float = -1.0
    bump: dict | None = None
    aads: dict = field(default_factory=lambda: {"eps": 0.3, "delta": 0.01, "rho0": 0.01,
                                                "delta_fail": 10.0, "nsample": 200,
                                                "gncc_grid": 64})
    boundary: dict | None = None     # {"g0": path, "g2": path, "eta": path} BCGRID1 files
    fg_coeffs: dict | None = None    # k -> (d, d) matrix for fg-generic
    metric_file: str | None = None   # GridMetric JSON for custom-metric
    n_interior: int = 60
    n_near: int = 14
    dump_fields: tuple = ()
    out: str | None = None
    seed: int = 0
    strict_alpha: bool = False

    def __post_init__(self):
        if isinstance(self.domain, dict):
            self.domain = DomainSpec(**self.domain)
        if isinstance(self.exponents, dict):
            self.exponents = HierarchyConfig(**self.exponents)
        self.resolution = _tuple(self.resolution)
        self.conj_resolution = _tuple(self.conj_resolution)
        self.kbar = _tuple(self.kbar)
        self.dump_fields = _tuple(self.dump_fields)
        tol = dict(DEFAULT_TOL)
        tol.update(self.tolerances)
        self.tolerances = tol
        if self.strict_alpha:
            self.exponents.alpha = 10.0

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}", known=list(SCENARIOS))
        bad = {k: v for k, v in self.tolerances.items() if not v > 0}
        if bad:
            raise ConfigError("tolerances must be positive", **bad)
        if not (2 <= self.n0 < self.nmax):
            raise ConfigError("need 2 <= n0 < nmax", n0=self.n0, nmax=self.nmax)
        notes = list(self.exponents.validate())
        if self.scenario in ("planar", "planar-localized") and self.n0 < 10:
            msg = (f"n0={self.n0} < 10: the flat balance root leaves the cutoff plateau "
                   "for small bands")
            warnings.warn(msg)
            notes.append(msg)
        return notes

    def to_dict(self):
        d = asdict(self)
        d["domain"] = self.domain.to_dict()
        d["exponents"] = asdict(self.exponents)
        return _list(d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in d.items() if not k.startswith("_")}
        if d.get("fg_coeffs"):
            d["fg_coeffs"] = {str(k): v for k, v in d["fg_coeffs"].items()}
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


@dataclass
class RunResult:
    config: RunConfig
    notes: list = field(default_factory=list)
    eikonal: dict = field(default_factory=dict)
    conjugation: dict = field(default_factory=dict)
    bands: dict = field(default_factory=dict)
    surfaces: dict = field(default_factory=dict)
    decay: object = None
    certification: object = None
    gluing: dict = field(default_factory=dict)
    aads: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    col_axes: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)
    glued: object = None
    timings: dict = field(default_factory=dict)

    def verdict(self, name, passed, value, tol=None, **extra):
        self.verdicts[name] = {"pass": bool(passed), "value": value, "tol": tol, **extra}

    @property
    def passed(self):
        return all(v["pass"] for v in self.verdicts.values())

    def to_dict(self):
        """Deterministic content of the result file (timings are left out)."""
        dec = None
        if self.decay is not None:
            d = self.decay
            dec = {"sigma0": d.sigma0, "q": d.q, "r": d.r, "mu_list": d.mu_list,
                   "log_sup_u": d.log_sup_u, "log_sup_a": d.log_sup_a,
                   "monotone_u": d.monotone_u, "monotone_a": d.monotone_a,
                   "failures": d.failures[:50], "failure_count": len(d.failures)}
        return {
            "config": self.config.to_dict(),
            "notes": self.notes,
            "eikonal": self.eikonal,
            "conjugation": self.conjugation,
            "bands": self.bands,
            "surfaces": {n: s.stats for n, s in self.surfaces.items()},
            "decay": dec,
            "certification": None if self.certification is None else self.certification.summary(),
            "gluing": self.gluing,
            "aads": self.aads,
            "verdicts": self.verdicts,
            "passed": self.passed,
        }


# ----------------------------------------------------------------------------
# stages

def _box_axes(n, lo, hi):
    return np.linspace(lo, hi, n)


def stage_eikonal(cfg: RunConfig, res: RunResult):
    from .eikonal import (BumpProfile, deform_sigma, planar_ambient_metric, planar_eikonal,
                          pure_ads_eikonal, verify_eikonal)

    tol = cfg.tolerances
    out = {}
    if cfg.scenario in ("planar", "planar-localized"):
        d = cfg.domain.d
        e = planar_eikonal(list(cfg.kbar))
        ax = [_box_axes(33, 0.01, cfg.domain.sigma0)] + \
            [_box_axes(33, lo, hi) for lo, hi in cfg.domain.ybar_box] + \
            [_box_axes(33, cfg.domain.s_minus, cfg.domain.s_plus)]
        rep = verify_eikonal(e, planar_ambient_metric(d), ax, tol=tol["eikonal_planar"])
        rep_a = verify_eikonal(e.adapted, PlanarConformal(list(cfg.kbar)), ax,
                               tol=tol["eikonal_planar"])
        out["planar"] = rep.to_dict()
        out["planar_adapted"] = rep_a.to_dict()
        worst = max(rep.null_residual, rep.gauge_residual, rep_a.null_residual, rep_a.gauge_residual)
        res.verdict("eikonal_planar", rep.passed and rep_a.passed, worst, tol["eikonal_planar"])
        if cfg.scenario == "planar-localized" and cfg.bump:
            bump = BumpProfile(**cfg.bump)
            dd = deform_sigma(e, bump, planar_ambient_metric(d), ax)
            lower = dd.meta.get("sigma_lower")
            out["localized"] = {"sigma_lower": lower, "sigma1": bump.sigma1}
            res.verdict("eikonal_localized_timelike", lower is None or lower > 0, lower, 0.0)
    if cfg.scenario == "pure-ads":
        k = list(cfg.kbar) if len(cfg.kbar) == 2 else [1.0, 0.0]
        pe = pure_ads_eikonal(k)
        ax = [np.linspace(-1, 1, 12), np.linspace(0.3, 1.2, 12),
              np.linspace(np.pi / 2 + 0.2, np.pi - 0.3, 12), np.linspace(0.2, 2.5, 12)]
        rep = verify_eikonal(pe, PureAdsMetric(3, True), ax, tol=tol["eikonal_pure"])
        out["pure_ads"] = rep.to_dict()
        res.verdict("eikonal_pure_ads", rep.passed, max(rep.null_residual, rep.gauge_residual),
                    tol["eikonal_pure"])
    res.eikonal = out


def _band_metric(cfg):
    return PlanarConformal(list(cfg.kbar))


def _band_phi(cfg):
    from .eikonal import planar_eikonal

    return planar_eikonal(list(cfg.kbar)).adapted.phi


def stage_conjugation(cfg: RunConfig, res: RunResult):
    metric, phi = _band_metric(cfg), _band_phi(cfg)
    pot = SingularPotential(cfg.xi)
    rows = {}
    worst = 0.0
    for n in range(cfg.n0, cfg.nmax + 1):
        band = band_domain(n, cfg.domain, cfg.conj_resolution)
        op = BandOperator(band, metric, pot, phi, cfg.exponents)
        devs = []
        for c, w in TEST_ENVELOPES:
            r = conjugation_residual(op, gaussian_envelope(band, c, w))
            devs.append(max(r["max_dev"], r["total_rel_dev"]))
        rows[n] = devs
        worst = max(worst, max(devs))
    res.conjugation = {"resolution": list(cfg.conj_resolution), "max_rel_dev": rows}
    res.verdict("conjugation_identity", worst <= cfg.tolerances["conjugation"], worst,
                cfg.tolerances["conjugation"])


def _band_record(beam, hier):
    st = beam.stats
    return {"J": hier.J, "ladder": hier.ladder, "ode_errors": hier.ode_errors,
            "transport_residuals": hier.transport_residuals, "support_leak": hier.support_leak,
            "sup_c": hier.sup_c, "sup_T2c": hier.sup_T2c, "sup_envelope": st["sup_envelope"],
            "K0_c0": st["K0_c0"], "sup_cstar_ratio": st["sup_cstar_ratio"]}


def stage_bands(cfg: RunConfig, res: RunResult, work: dict):
    metric, phi = _band_metric(cfg), _band_phi(cfg)
    pot = SingularPotential(cfg.xi)
    tol = cfg.tolerances
    worst_rel, worst_factor = 0.0, 0.0
    for n in range(cfg.n0, cfg.nmax + 1):
        try:
            band = band_domain(n, cfg.domain, cfg.resolution)
            op = BandOperator(band, metric, pot, phi, cfg.exponents)
            hier = solve_hierarchy(op)
            beam = assemble_band(op, hier)
            P, mags = conjugated_operator_dd(op, hier.env)
        except BeamcertError as exc:
            raise exc.with_context(stage="bands", band=n)
        rec = _band_record(beam, hier)
        del hier
        work[n] = {"op": op, "beam": beam, "P": P, "noise": DD_UNIT * mags}
        del mags
        rel = max(r["rel_diff"] for r in rec["ladder"])
        fac = max((r["factor"] for r in rec["ladder"] if r["factor"] is not None), default=0.0)
        worst_rel, worst_factor = max(worst_rel, rel), max(worst_factor, fac)
        res.bands[n] = rec
        if not res.col_axes:
            res.col_axes = [a.tolist() for a in band.axes[1:]]
    res.verdict("ladder_telescoping", worst_rel <= tol["ladder_rel"], worst_rel, tol["ladder_rel"])
    res.verdict("ladder_contraction", worst_factor < 1.0, worst_factor, 1.0)


def stage_surfaces(cfg: RunConfig, res: RunResult, work: dict):
    tol = cfg.tolerances
    worst_cf, worst_C, signs = 0.0, 0.0, True
    for n in range(cfg.n0, cfg.nmax):
        bn, bm = work[n]["beam"], work[n + 1]["beam"]
        try:
            surf = locate_surface(n, bn, bm)
        except BeamcertError as exc:
            raise exc.with_context(stage="surfaces", band=n)
        sb = check_sign_bounds(n, bn, bm, surf)
        surf.stats["sign_bounds"] = sb
        res.surfaces[n] = surf
        worst_cf = max(worst_cf, surf.stats["closed_form_dev"])
        worst_C = max(worst_C, surf.stats["C_n"])
        signs = signs and sb["pass"]
    res.verdict("surface_closed_form", worst_cf <= tol["surface_closed_form"], worst_cf,
                tol["surface_closed_form"])
    res.verdict("surface_expansion_C", worst_C <= tol["surface_C"], worst_C, tol["surface_C"])
    res.verdict("surface_sign_bounds", signs, signs)


def _sample_columns(col_shape, k=5):
    """Columns spread over the interior of the column grid, clear of the edges."""
    out = []
    for t in np.linspace(0.2, 0.8, k):
        idx = tuple(int(round(t * (m - 1))) for m in col_shape)
        out.append(int(np.ravel_multi_index(idx, col_shape)))
    return out


def stage_correction(cfg: RunConfig, res: RunResult, work: dict):
    tol = cfg.tolerances
    worst = np.inf
    for n in range(cfg.n0, cfg.nmax + 1):
        w = work[n]
        op, beam = w["op"], w["beam"]
        col_shape = beam.envelope.values.shape[1:]
        lower = res.surfaces.get(n)
        upper = res.surfaces.get(n - 1)
        lobes = tuple(j for j, s in ((0, lower), (1, upper)) if s is not None)
        rec = res.bands[n]
        rec["correction_lobes"] = list(lobes)
        if not lobes:
            continue
        chart = EtaChart(n, lower or fallback_surface(n, col_shape),
                         upper or fallback_surface(n - 1, col_shape), op.band)
        psi0 = beam.psi
        try:
            data = correction_data(op, chart, psi0, cfg.K_corr, lobes)
            om, checks = build_omega(op, chart, data, cfg.lobe_eps)
        except BeamcertError as exc:
            raise exc.with_context(stage="correction", band=n)
        omd = DDC.from_complex(om)
        beam.psi = psi0 + op.apply_L(omd).to_complex()
        P2, m2 = conjugated_operator_dd(op, omd)
        del omd
        w["P"] = w["P"] + P2
        w["noise"] = w["noise"] + DD_UNIT * m2
        del P2, m2
        beam.envelope.values = beam.envelope.values + om
        beam.rest = beam.rest + om
        rec["omega_sup"] = float(np.max(np.abs(om)))
        rec["omega_surface_checks"] = {str(j): v for j, v in checks.items()}
        rec["a_floor"] = data.a_floor
        del om
        pi = ColumnInterpolant(op.band, psi0)
        orders = {}
        for j in lobes:
            ps = [vanishing_order(op, chart, data, pi, c, j, cfg.lobe_eps)[0]
                  for c in _sample_columns(col_shape)]
            orders[str(j)] = ps
            worst = min(worst, min(ps))
        rec["vanishing_orders"] = orders
        del pi, psi0
    res.verdict("correction_vanishing_order", worst >= tol["vanishing_order"], float(worst),
                tol["vanishing_order"])


def _amplitude_bracket(work, n):
    op, beam = work[n]["op"], work[n]["beam"]
    f = op.fprof(op.band.sigma)
    env = np.max(np.abs(beam.envelope.values).reshape(op.band.shape[0], -1), axis=1)
    with np.errstate(divide="ignore"):
        return float(np.max(f + np.log(env)) / n ** 2)


def stage_assembly(cfg: RunConfig, res: RunResult, work: dict):
    tol = cfg.tolerances
    pad = tol["bracket_pad"]
    lo, hi = -9 / 8 - pad, -7 / 8 + pad
    brackets = {}
    for n in work:
        brackets[n] = _amplitude_bracket(work, n)
        res.bands[n]["amplitude_log_sup_over_n2"] = brackets[n]
    vals = list(brackets.values())
    res.verdict("amplitude_bracket", all(lo <= v <= hi for v in vals),
                [min(vals), max(vals)], [lo, hi])

    bands = {n: GluedBand(n, w["op"], w["beam"], w["P"], w["noise"]) for n, w in work.items()}
    glued = GluedCounterexample(bands, dict(res.surfaces))
    res.glued = glued
    try:
        # interior bands carry both correction lobes
        samples = [1.0 / n for n in range(cfg.n0 + 1, cfg.nmax)]
        samples = samples if len(samples) >= 2 else None
        res.decay = dec = decay_report(glued, samples)
    except BeamcertError as exc:
        raise exc.with_context(stage="assembly")
    steps_u = [f for f in dec.failures if f["quantity"] == "u"]
    steps_a = [f for f in dec.failures if f["quantity"] == "a"]
    res.verdict("decay_u", dec.monotone_u, len(steps_u), tol["decay_decades"])
    res.verdict("decay_a", dec.monotone_a, len(steps_a), tol["decay_decades"],
                worst_log10_step=max((f["log10_step"] for f in steps_a), default=None))
    res.verdict("decay_q", 7 / 8 <= dec.q <= 9 / 8, dec.q, [7 / 8, 9 / 8])

    cert = certify_equation(glued, cfg.n_interior, cfg.n_near, tol["certify"],
                            tol["certify_near"], seed=cfg.seed)
    res.certification = cert
    s = cert.summary()
    res.verdict("certify_interior", s["interior"]["pass"] and s["interior"]["count"] >= 500,
                s["interior"]["max_rel_residual"], tol["certify"], count=s["interior"]["count"])
    res.verdict("certify_near", s["near"]["pass"] and s["near"]["count"] >= 100,
                s["near"]["max_rel_residual"], tol["certify_near"], count=s["near"]["count"])
    res.gluing = {str(n): surface_zero_check(glued, n) for n in sorted(res.surfaces)}
    if cfg.dump_fields:
        for n, w in work.items():
            arrs = {"envelope": w["beam"].envelope.values, "psi": w["beam"].psi, "P": w["P"]}
            res.fields[n] = {k: (w["op"].band.axes, arrs[k]) for k in cfg.dump_fields}


def _boundary_data(cfg):
    """(g0, g2, eta, axes) from BCGRID1 files, else the flat planar data with linear eta."""
    if cfg.boundary:
        from .io import read_grid

        g0 = read_grid(cfg.boundary["g0"])
        g2 = read_grid(cfg.boundary["g2"])
        eta = read_grid(cfg.boundary["eta"])
        return g0.data, g2.data, eta.data, g0.axes
    m = cfg.aads["gncc_grid"]
    ax = [np.linspace(-1, 1, m)] * 2
    T, X = np.meshgrid(*ax, indexing="ij")
    g0 = np.broadcast_to(np.diag([-1.0, 1.0]), (m, m, 2, 2)).copy()
    return g0, np.zeros((m, m, 2, 2)), 0.3 * T + 0.2 * X + 1.0, ax


def stage_aads(cfg: RunConfig, res: RunResult):
    from .aads import (conjugate_operator, gncc_check, halton_region, omega_d_from_planar,
                       omega_d_of, pure_to_planar, support_in_half_space, verify_embedding)
    from .eikonal import planar_ambient_metric

    tol = cfg.tolerances
    A = cfg.aads
    out = {}
    if cfg.scenario in ("pure-ads", "planar", "planar-localized"):
        S = halton_region(A["nsample"], A["eps"], seed=cfg.seed)
        dev = verify_embedding(S, A["eps"])
        Pl = pure_to_planar(S, A["eps"])
        rt = float(np.max(np.abs(omega_d_from_planar(Pl[:, 0], Pl[:, 1], Pl[:, 2:]) -
                                 omega_d_of(S))))
        out["embedding"] = {"max_rel_dev": dev, "roundtrip": rt, "samples": len(S)}
        res.verdict("aads_isometry", dev <= tol["isometry"], dev, tol["isometry"])
        res.verdict("aads_roundtrip", rt <= tol["roundtrip"], rt, tol["roundtrip"])
        ok = support_in_half_space(A["eps"], A["delta"], A["rho0"], seed=cfg.seed)
        bad = support_in_half_space(A["eps"], A["delta_fail"], A["rho0"], seed=cfg.seed)
        out["support"] = {"configured": asdict(ok), "large_delta": asdict(bad)}
        res.verdict("aads_support", ok.passed and not bad.passed, ok.margin, 0.0,
                    large_delta_margin=bad.margin)
    if cfg.scenario == "fg-generic":
        d = cfg.domain.d
        coeffs = {int(k): np.asarray(v, float) for k, v in (cfg.fg_coeffs or {}).items()}
        coeffs.setdefault(0, np.diag([-1.0] + [1.0] * (d - 1)))
        op = conjugate_operator(0.3, d, FGMetric(coeffs, d))
        out["V_by_floor"] = op.sup_V_by_floor([0.1, 0.05, 0.02], cfg.domain.sigma0,
                                              [np.linspace(-1, 1, 3)] * d)
    elif cfg.scenario in ("planar", "planar-localized"):
        op = conjugate_operator(0.3, cfg.domain.d, planar_ambient_metric(cfg.domain.d))
        X = np.stack(np.meshgrid(np.linspace(0.05, 0.3, 5), np.linspace(-1, 1, 5),
                                 np.linspace(-1, 1, 5), indexing="ij"), -1).reshape(-1, 3)
        out["V_flat_sup"] = float(np.max(np.abs(op.V(X))))
    if cfg.scenario == "custom-metric" and cfg.metric_file:
        from .geometry import GridMetric

        gm = GridMetric.from_file(cfg.metric_file)
        op = conjugate_operator(0.3, gm.dim - 1, gm)
        out["V_by_floor"] = op.sup_V_by_floor([0.1, 0.05], cfg.domain.sigma0,
                                              [ax[2:-2][[0, -1]] for ax in gm.axes[1:]])
    g0, g2, eta, axes = _boundary_data(cfg)
    rep = gncc_check(g0, g2, eta, axes)
    out["gncc"] = asdict(rep)
    if not cfg.boundary:
        res.verdict("gncc_flat_linear", abs(rep.margin) <= tol["gncc_zero"], rep.margin,
                    tol["gncc_zero"])
    res.aads = out


# ----------------------------------------------------------------------------

def run_pipeline(config: RunConfig, stages=None) -> RunResult:
    """Run the configured stages in order; see STAGES for names.

    Band stages run only for the planar scenarios. Errors from any module
    propagate with stage and band attached to their context.
    """
    cfg = config
    res = RunResult(cfg)
    res.notes = cfg.validate()
    stages = STAGES if stages is None else tuple(stages)
    planar = cfg.scenario in ("planar", "planar-localized")
    work = {}

    def timed(name, fn, *args):
        t = time.perf_counter()
        fn(*args)
        res.timings[name] = time.perf_counter() - t

    if "eikonal" in stages:
        timed("eikonal", stage_eikonal, cfg, res)
    if planar and "conjugation" in stages:
        timed("conjugation", stage_conjugation, cfg, res)
    if planar and "bands" in stages:
        timed("bands", stage_bands, cfg, res, work)
        if "surfaces" in stages:
            timed("surfaces", stage_surfaces, cfg, res, work)
        if "correction" in stages:
            timed("correction", stage_correction, cfg, res, work)
        if "assembly" in stages:
            timed("assembly", stage_assembly, cfg, res, work)
    if "aads" in stages:
        timed("aads", stage_aads, cfg, res)
    return res
