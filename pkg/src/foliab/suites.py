"""Verification suites: each returns rows of (check, anchor, residual, tolerance).

Anchors are short dotted tags naming the identity a row verifies; they are
stable across releases so reports can be diffed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from . import audit as _audit
from . import connections as cx
from . import jacobi as jc
from . import normal_charts as nc
from .core import MetricField, vertical_projector
from .fixtures import Fixture
from .transport import geodesic_flow, speed_drift, submersion_commutation_residual


@dataclass(frozen=True)
class Check:
    name: str
    anchor: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "anchor": self.anchor, "residual": float(self.residual),
                "tolerance": float(self.tolerance), "pass": self.passed}


@dataclass
class SuiteResult:
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> list of flat rows
    info: dict = field(default_factory=dict)

    def add(self, name, anchor, residual, tol, scale=1.0):
        self.checks.append(Check(name, anchor, float(residual), float(tol) * scale))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def sample_points(fx: Fixture, k: int, rng: np.random.Generator, shrink: float = 1.0) -> np.ndarray:
    box = fx.sample_box
    mid = box.mean(1)
    half = 0.5 * (box[:, 1] - box[:, 0]) * shrink
    return rng.uniform(mid - half, mid + half, size=(k, len(mid)))


# identities -------------------------------------------------------------------------
def identities(fx: Fixture, points: int = 5, seed: int = 0, tol_scale: float = 1.0) -> SuiteResult:
    """Pointwise identities of the metric, the O'Neill tensors and the connections."""
    m = fx.metric
    rng = np.random.default_rng(seed)
    res = SuiteResult()
    pts = sample_points(fx, points, rng)
    n = m.n
    w = {k: 0.0 for k in ("inv", "orth", "idem", "sym", "tT", "tA", "dec", "tor", "breve", "VV", "XY", "XV",
                          "skew", "block", "bracket", "theta")}
    for p in pts:
        G = m.g(p)
        Gi = cx.LocalGeometry(m, p, order=0).ginv.value
        w["inv"] = max(w["inv"], np.max(np.abs(G @ Gi - np.eye(n))))
        v = rng.standard_normal(n)
        vv, hh = cx.split(m, p, v)
        w["orth"] = max(w["orth"], abs(vv @ G @ hh) / (v @ G @ v))
        v2, h2 = cx.split(m, p, vv)
        w["idem"] = max(w["idem"], np.max(np.abs(v2 - vv)), np.max(np.abs(h2)))
        gam = cx.christoffel(m, p)
        w["sym"] = max(w["sym"], np.max(np.abs(gam - np.swapaxes(gam, -1, -2))))
        E, F = rng.standard_normal(n), rng.standard_normal(n)
        M = rng.standard_normal((n, n))
        lin = cx.VectorField.linear(F, M, p)
        w["tT"] = max(w["tT"], np.max(np.abs(cx.oneill_direct(m, p, E, lin, "T") - cx.oneill_T(m, p, E, F))))
        w["tA"] = max(w["tA"], np.max(np.abs(cx.oneill_direct(m, p, E, lin, "A") - cx.oneill_A(m, p, E, F))))
        VE, HE = cx.split(m, p, E)
        diff = cx.levi_civita_derivative(m, p, E, lin) - cx.adapted_derivative(m, p, E, lin)
        w["dec"] = max(w["dec"], np.max(np.abs(diff - cx.oneill_T(m, p, VE, F) - cx.oneill_A(m, p, HE, F))))
        lin2 = cx.VectorField.linear(E, rng.standard_normal((n, n)), p)
        w["tor"] = max(w["tor"], np.max(np.abs(cx.adapted_torsion_direct(m, p, lin2, lin) - cx.adapted_torsion(m, p, E, F))))
        w["breve"] = max(w["breve"], np.max(np.abs(cx.breve_torsion(m, p, E, F))))
        for case in ("VV", "XY", "XV"):
            w[case] = max(w[case], cx.curvature_difference_check(m, p, case, rng))
        V, _, X, Y = cx.random_split_vectors(m, p, rng)
        Gv, Hv = rng.standard_normal(n), rng.standard_normal(n)
        RG = cx.curvature(m, p, "adapted", E, F, Gv)
        RH = cx.curvature(m, p, "adapted", E, F, Hv)
        w["skew"] = max(w["skew"], abs(RG @ G @ Hv + RH @ G @ Gv))
        Rv = cx.curvature(m, p, "adapted", E, F, X)
        Rvert = cx.curvature(m, p, "adapted", E, F, V)
        P = vertical_projector(G, m.spec)
        w["block"] = max(w["block"], np.max(np.abs(P @ Rv)), np.max(np.abs(Rvert - P @ Rvert)))
        w["bracket"] = max(w["bracket"], np.max(np.abs(cx.vertical_bracket(m, p, X, Y) - 2 * cx.oneill_A(m, p, X, Y))))
        Vf = cx.VectorField.linear(rng.standard_normal(n), rng.standard_normal((n, n)), p)
        w["theta"] = max(w["theta"], np.max(np.abs(cx.theta_operator(m, p, X, Vf) - cx.theta_bracket(m, p, X, Vf))))
    s = tol_scale
    res.add("metric inverse round trip", "metric.inverse", w["inv"], 1e-10, s)
    res.add("split orthogonality", "split.orthogonal", w["orth"], 1e-10, s)
    res.add("split idempotence", "split.idempotent", w["idem"], 1e-10, s)
    res.add("Levi-Civita symmetry", "christoffel.symmetric", w["sym"], 1e-10, s)
    res.add("T tensoriality", "oneill.T.tensorial", w["tT"], 1e-8, s)
    res.add("A tensoriality", "oneill.A.tensorial", w["tA"], 1e-8, s)
    res.add("connection decomposition", "adapted.difference", w["dec"], 1e-8, s)
    res.add("adapted torsion formula", "adapted.torsion", w["tor"], 1e-8, s)
    res.add("breve torsion free", "breve.torsion", w["breve"], 1e-8, s)
    res.add("curvature difference VV", "curvature.difference.VV", w["VV"], 1e-5, s)
    res.add("curvature difference XY", "curvature.difference.XY", w["XY"], 1e-5, s)
    res.add("curvature difference XV", "curvature.difference.XV", w["XV"], 1e-5, s)
    res.add("adapted curvature skew", "adapted.curvature.skew", w["skew"], 1e-8, s)
    res.add("adapted curvature block structure", "adapted.curvature.blocks", w["block"], 1e-8, s)
    res.add("vertical bracket equals 2A", "oneill.A.bracket", w["bracket"], 1e-8, s)
    res.add("theta operator bracket", "theta.bracket", w["theta"], 1e-6, s)
    _transport_checks(fx, pts[: min(3, len(pts))], rng, res, s)
    return res


def _transport_checks(fx: Fixture, pts, rng, res: SuiteResult, s: float):
    m = fx.metric
    E = cx.adapted_frame(m, pts)
    nt = m.spec.n_transverse
    dirs = 0.3 * np.einsum("bij,bj->bi", E, rng.standard_normal((len(pts), m.n)))
    drift = 0.0
    for kind in ("levi_civita", "adapted"):
        c, _ = geodesic_flow(m, kind, pts, dirs, 1.0, 1e-3)
        drift = max(drift, speed_drift(m, c))
    res.add("geodesic speed drift", "transport.speed", drift, 1e-6, s)
    if fx.has_projection:
        worst = 0.0
        for p, Ep in zip(pts, E):
            for cols in (slice(0, nt), slice(nt, None)):
                v = 0.3 * Ep[:, cols] @ rng.standard_normal(Ep[:, cols].shape[1])
                worst = max(worst, submersion_commutation_residual(fx, p, v, step=1e-2))
        res.add("submersion commutation (split vectors)", "transport.submersion", worst, 1e-5, s)


# jacobi ------------------------------------------------------------------------------
def random_leaf_geodesic(m: MetricField, p, rng, speed: float = 0.5):
    E = cx.adapted_frame(m, p)[:, m.spec.n_transverse:]
    u = E @ rng.standard_normal(E.shape[1])
    u *= speed / math.sqrt(u @ m.g(p) @ u)
    return jc.leafwise_geodesic(m, p, u, 1.0, 1e-2)


def jacobi(fx: Fixture, solves: int = 20, curves: int = 2, seed: int = 0, tol_scale: float = 1.0,
           richardson: bool = False) -> SuiteResult:
    m = fx.metric
    rng = np.random.default_rng(seed)
    res = SuiteResult()
    s = tol_scale
    w = {k: 0.0 for k in ("gd", "tgd", "vert", "hx", "margin", "nc", "lin", "ipd", "star")}
    w["margin"] = np.inf
    ranks = []
    per = max(1, solves // curves)
    for p in sample_points(fx, curves, rng, shrink=0.5):
        g = random_leaf_geodesic(m, p, rng)
        u0 = g.velocities[0]
        sol = jc.solve_adapted_jacobi(m, g, np.stack([u0, np.zeros_like(u0)]), np.stack([np.zeros_like(u0), u0]))
        X = sol.X
        t = (g.times - g.times[0])[:, None]
        w["gd"] = max(w["gd"], np.max(np.abs(X[:, 0] - g.velocities)))
        w["tgd"] = max(w["tgd"], np.max(np.abs(X[:, 1] - t * g.velocities)))
        E = cx.adapted_frame(m, p)
        X0 = rng.standard_normal((per, m.n)) @ E.T
        Y0 = rng.standard_normal((per, m.n - m.spec.n_transverse)) @ E[:, m.spec.n_transverse:].T
        sol = jc.solve_adapted_jacobi(m, g, X0, Y0)
        w["vert"] = max(w["vert"], jc.vertical_residual(sol))
        w["hx"] = max(w["hx"], jc.horizontal_norm_drift(sol))
        w["margin"] = min(w["margin"], float(np.min(jc.growth_bound_margin(sol))))
        w["nc"] = max(w["nc"], jc.normal_connection_residual(sol))
        ip = jc.y_inner_gamma(sol)
        w["ipd"] = max(w["ipd"], float(np.max(np.abs(ip - ip[0]))))
        star = jc.normalize_jacobi(sol)
        w["star"] = max(w["star"], float(np.max(np.abs(jc.y_inner_gamma(star)))))
        a, b = rng.standard_normal(2)
        both = jc.solve_adapted_jacobi(m, g, np.stack([X0[0], X0[-1], a * X0[0] + b * X0[-1]]),
                                       np.stack([Y0[0], Y0[-1], a * Y0[0] + b * Y0[-1]]))
        w["lin"] = max(w["lin"], float(np.max(np.abs(both.x[:, 2] - a * both.x[:, 0] - b * both.x[:, 1]))))
        ranks.append(jc.endpoint_rank(m, g))
        if richardson:
            e1, e2, ratio = jc.richardson_check(m, g, X0[0], Y0[0])
            res.add("variation field Richardson ratio deviation", "jacobi.variation.order", abs(ratio - 4.0), 0.5, 1.0)
            res.add("variation field error", "jacobi.variation", e2, 1e-4, s)
    res.add("velocity is a Jacobi field", "jacobi.velocity", w["gd"], 1e-6, s)
    res.add("(t-a) velocity is a Jacobi field", "jacobi.affine_velocity", w["tgd"], 1e-6, s)
    res.add("Y vertical", "jacobi.Y.vertical", w["vert"], 1e-6, s)
    res.add("|HX| constant", "jacobi.HX.constant", w["hx"], 1e-6, s)
    res.add("growth bound margin (negated)", "jacobi.growth", max(0.0, -w["margin"]), 1e-8, s)
    res.add("normal connection of HX", "jacobi.normal_connection", w["nc"], 1e-6, s)
    res.add("superposition", "jacobi.linear", w["lin"], 1e-8, s)
    res.add("(Y, velocity) constant", "jacobi.Y_dot_velocity", w["ipd"], 1e-6, s)
    res.add("normalized Y orthogonal to velocity", "jacobi.normalized", w["star"], 1e-8, s)
    expected = m.n + m.n - m.spec.n_transverse
    res.add("solution space dimension defect", "jacobi.dimension", float(max(abs(r - expected) for r in ranks)), 0.0)
    return res


# normal charts ---------------------------------------------------------------------------
def chart_samples(chart: nc.NormalChart, k: int, rng, scale: float = 0.5):
    return chart.sample(k, rng, "full", scale), chart.sample(k, rng, "transversal", scale)


def normal_chart(fx: Fixture, center=None, radii=(0.2, 0.2), points: int = 3, seed: int = 0,
                 tol_scale: float = 1.0, integral: bool = False) -> SuiteResult:
    m = fx.metric
    rng = np.random.default_rng(seed)
    p = fx.sample_box.mean(1) if center is None else np.asarray(center, dtype=float)
    chart = nc.build_normal_chart(m, p, *radii)
    s = tol_scale
    res = SuiteResult(info={"center": p.tolist(), "radii": [chart.r_t, chart.r_l]})
    xf, xt = chart_samples(chart, points, rng)
    nc.prefetch_rays(chart, xf, xt)
    res.add("forward at zero", "chart.center", float(np.max(np.abs(chart.forward(np.zeros(m.n)) - p))), 1e-12, s)
    res.add("Jacobian at zero", "chart.jacobian_identity", nc.jacobian_at_zero_residual(chart), 1e-6, s)
    res.add("round trip", "chart.round_trip", nc.round_trip_residual(chart, xf), 1e-8, s)
    if fx.has_projection:
        res.add("plaque spread", "chart.plaques", nc.plaque_spread(chart, fx, xt[:, : chart.nt]), 1e-6, s)
    res.add("leaf restriction", "chart.leaf_restriction", nc.leaf_restriction_residual(chart, xt[0, : chart.nt]), 1e-6, s)
    fr = nc.frame_invariant_residuals(chart, xf)
    for key, val in fr.items():
        res.add(f"frame {key.replace('_', ' ')}", f"frame.{key}", val, 1e-6, s)
    res.add("metric pullback", "frame.pullback", nc.metric_pullback_residual(chart, xf), 1e-5, s)
    c0, c1 = nc.gamma_vanishing_residuals(chart, xt[:, : chart.nt])
    res.add("frame connection at centre", "connection.vanish.center", c0, 1e-5, s)
    res.add("leafwise frame connection on transversal", "connection.vanish.transversal", c1, 1e-5, s)
    modes = ("differential", "integral") if integral else ("differential",)
    for variant in nc.RADIAL_VARIANTS[:4]:
        region = xt if "transverse" in variant else xf
        for mode in modes:
            vals = [nc.radial_identity_residual(chart, variant, x, mode) for x in region]
            vals = [v for v in vals if v is not None]
            if vals:
                res.add(f"radial {variant} ({mode})", f"radial.{variant}.{mode}", max(vals), 1e-3, s)
    for variant in nc.FRAME_VARIANTS:
        region = xt if variant.startswith("transverse") else xf
        for mode in modes:
            vals = [nc.frame_ode_residual(chart, variant, x, mode) for x in region]
            vals = [v for v in vals if v is not None]
            if vals:
                res.add(f"frame ODE {variant} ({mode})", f"frame_ode.{variant}.{mode}", max(vals), 1e-3, s)
    res.add("structure equation", "frame.structure", nc.structure_equation_residual(chart, xf), 1e-4, s)
    for key, val in nc.radial_normalization_residuals(chart, xt, xf).items():
        res.add(f"radial normalization {key.replace('_', ' ')}", f"frame.normalization.{key}", val, 1e-5, s)
    F1, F2 = nc.F_tensor(chart, xf), nc.F_tensor_direct(chart, xf)
    res.add("F assemblies agree", "F.assemblies", float(np.max(np.abs(F1 - F2))), 1e-6, s)
    res.info["F_max"] = float(np.max(np.abs(F1)))
    return res


# audit -------------------------------------------------------------------------------------
def audit_rows(fx: Fixture, cfg: _audit.AuditConfig, injectivity: bool = True, charts: bool = False,
               tol_scale: float = 1.0) -> SuiteResult:
    """Covariant table and verdict; the verdict check fails on growth beyond ``growth_factor``."""
    m = fx.metric
    res = SuiteResult()
    rep = _audit.covariant_bound_table(m, cfg, fx)
    worst = max((max(r) if r else 1.0) for r in rep.growth.values())
    res.add("growth across exhausting regions", "audit.growth", worst, cfg.growth_factor * tol_scale)
    res.info["verdict"] = rep.verdict
    res.info["witness"] = None if rep.witness is None else rep.witness.tolist()
    res.info["witness_quantity"] = rep.witness_quantity
    res.info["sup"] = {f"|nabla^{o} {t}|": v for (t, o), v in rep.sup.items()}
    res.tables["norms"] = rep.rows()
    if injectivity:
        kinds = {"leafwise": lambda: _audit.leafwise_injectivity_floor(m, cfg, fx),
                 "ambient": lambda: _audit.ambient_injectivity_floor(m, cfg, fx)}
        if fx.has_projection:
            kinds["transverse"] = lambda: _audit.transverse_injectivity_floor(fx, cfg)
        inj = {}
        for k, fn in kinds.items():
            est = fn()
            inj[k] = {"floor": est.floor, "truncated": est.truncated, "inconclusive": est.inconclusive}
            if est.inclusion is not None:
                inj[k]["inclusion"] = est.inclusion
                res.add("chart inclusion at injectivity floor", "audit.inclusion",
                        est.inclusion["max_relative_chart_radius"], 1.0)
        res.info["injectivity"] = inj
    if charts:
        cb = _audit.chart_coefficient_bounds(m, cfg, fx)
        if cb["sup"] is not None:
            res.info["chart_sup"] = cb["sup"].tolist()
            res.info["chart_spread"] = cb["spread"].tolist()
            res.add("chart coefficient spread", "audit.chart_uniformity", float(np.max(cb["spread"])), 0.1, tol_scale)
        res.info["chart_excluded"] = cb["excluded"].tolist()
    return res


def partition(fx: Fixture, r1: float, region, radii=None, test_k: int = 100, queries: int = 1000, seed: int = 0,
              tol_scale: float = 1.0) -> SuiteResult:
    m = fx.metric
    rng = np.random.default_rng(seed)
    res = SuiteResult()
    cover = _audit.build_cover(m, r1, region, radii, test_k=test_k)
    res.info.update({"centers": cover.centers.tolist(), "N": cover.N, "N_volume": cover.N_volume,
                     "coverage": cover.coverage, "radii": list(cover.radii)})
    res.add("uncovered fraction of test lattice", "cover.coverage", 1.0 - cover.coverage, 0.0)
    box = np.asarray(region, dtype=float)
    y = rng.uniform(box[:, 0], box[:, 1], size=(queries, m.n))
    pu = _audit.partition_of_unity(cover)
    wts = pu(y)
    res.add("partition sums to one", "partition.sum", float(np.max(np.abs(wts.sum(1) - 1))), 1e-9, tol_scale)
    inside, _ = _audit.membership(cover, y, scale=2.0, refine_all=True)
    res.add("weights outside supports", "partition.support", float(np.max(np.where(inside, 0.0, wts))), 1e-12, tol_scale)
    res.add("multiplicity excess over N", "cover.multiplicity", float(max(0, int(inside.sum(1).max()) - cover.N)), 0.0)
    res.tables["weights"] = [dict({f"x{k + 1}": float(v) for k, v in enumerate(p)},
                                  **{f"phi{i}": float(wi) for i, wi in enumerate(wr)}) for p, wr in zip(y, wts)]
    return res
