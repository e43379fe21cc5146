"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line; the lines are collected
again in the terminal summary (see ``conftest.py``).
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import sympy as sp

from foliab import audit as au
from foliab import cli
from foliab import connections as cx
from foliab import fixtures
from foliab import normal_charts as nc
from foliab import suites
from foliab.jacobi import richardson_check

from conftest import box_points

pytestmark = pytest.mark.acceptance

SCEN = Path(__file__).resolve().parents[1] / "scenarios"
RESULTS: dict = {}


def report(num: int, title: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} [{num}] {title}: {detail}"
    RESULTS[num] = line
    print(line)
    assert ok, line


def worst(res, pred=lambda name: True) -> float:
    vals = [c.residual for c in res.checks if pred(c.name)]
    return max(vals) if vals else float("nan")


def test_criterion_1_product_identities():
    fx = fixtures.get("FIX-PRODUCT")
    t0 = time.perf_counter()
    runs = [suites.identities(fx), suites.normal_chart(fx)]
    elapsed = time.perf_counter() - t0
    r = max(worst(res) for res in runs)
    n = sum(len(res.checks) for res in runs)
    report(1, "trivial fixture identities", r <= 1e-10 and elapsed <= 10.0,
           f"max residual {r:.2e} over {n} checks (<= 1e-10), {elapsed:.1f} s (<= 10 s)")


def _warp_T_oracle():
    """Horizontal part of the Levi-Civita derivative of the unit vertical field, symbolically."""
    x, y = sp.symbols("x y")
    g = sp.diag(1, sp.exp(2 * x))
    gi = g.inv()
    c = (x, y)
    gam = [[[sum(gi[i, l] * (sp.diff(g[l, j], c[k]) + sp.diff(g[l, k], c[j]) - sp.diff(g[j, k], c[l]))
                 for l in range(2)) / 2 for k in range(2)] for j in range(2)] for i in range(2)]
    V = [0, sp.exp(-x)]
    nab = [sp.simplify(sum(V[k] * sp.diff(V[i], c[k]) for k in range(2))
                       + sum(gam[i][j][k] * V[j] * V[k] for j in range(2) for k in range(2))) for i in range(2)]
    # vertical direction is ∂y, its g-orthogonal complement is ∂x
    return sp.lambdify((x, y), [nab[0], 0 * x], "numpy")


def test_criterion_2_oneill_values():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    warp, hopf = fixtures.get("FIX-WARP"), fixtures.get("FIX-HOPF")
    oracle = _warp_T_oracle()
    eT = eA = hT = hA = 0.0
    for p in box_points(warp, 50, rng):
        V = np.array([0.0, math.exp(-p[0])])
        eT = max(eT, np.max(np.abs(cx.oneill_T(warp.metric, p, V, V) - np.array(oracle(*p), dtype=float))))
        E, F = rng.normal(size=(2, 2))
        eA = max(eA, np.max(np.abs(cx.oneill_A(warp.metric, p, E, F))))
    m = hopf.metric
    k_total, k_base = 1.0, 4.0
    expected = math.sqrt((k_base - k_total) / 3.0)
    for p in box_points(hopf, 50, rng):
        E, F = rng.normal(size=(2, 3))
        hT = max(hT, np.max(np.abs(cx.oneill_T(m, p, E, F))))
        G = m.g(p)
        X, Y = (cx.split(m, p, rng.normal(size=3))[1] for _ in range(2))
        X = X / math.sqrt(X @ G @ X)
        Y = Y - (X @ G @ Y) * X
        Y = Y / math.sqrt(Y @ G @ Y)
        AXY = cx.oneill_A(m, p, X, Y)
        hA = max(hA, abs(math.sqrt(AXY @ G @ AXY) - expected))
    elapsed = time.perf_counter() - t0
    ok = eT <= 1e-6 and eA <= 1e-8 and hT <= 1e-6 and hA <= 1e-4 and elapsed <= 30.0
    report(2, "O'Neill tensor values", ok,
           f"WARP |T_VV + d_x| {eT:.1e}, |A| {eA:.1e}; HOPF |T| {hT:.1e}, ||A_XY| - 1| {hA:.1e}; {elapsed:.1f} s")


def test_criterion_3_curvature_differences():
    rng = np.random.default_rng(3)
    out = {}
    for name in ("FIX-WARP", "FIX-HOPF"):
        fx = fixtures.get(name)
        out[name] = max(cx.curvature_difference_check(fx.metric, p, case, rng)
                        for p in box_points(fx, 50, rng) for case in ("VV", "XY", "XV"))
    r = max(out.values())
    report(3, "curvature difference identities", r <= 1e-5,
           ", ".join(f"{k} {v:.1e}" for k, v in out.items()) + " at 50 points each (<= 1e-5)")


def test_criterion_4_jacobi():
    t0 = time.perf_counter()
    w = {"trivial": 0.0, "invariants": 0.0, "margin": math.inf}
    ratios = {}
    for name in ("FIX-PRODUCT", "FIX-SLOPE", "FIX-WARP", "FIX-HOPF"):
        fx = fixtures.get(name)
        res = suites.jacobi(fx, solves=200, curves=4, seed=4)
        c = {ch.name: ch.residual for ch in res.checks}
        w["trivial"] = max(w["trivial"], c["velocity is a Jacobi field"], c["(t-a) velocity is a Jacobi field"])
        w["invariants"] = max(w["invariants"], c["Y vertical"], c["|HX| constant"])
        w["margin"] = min(w["margin"], -c["growth bound margin (negated)"])
        if name in ("FIX-WARP", "FIX-HOPF"):
            m = fx.metric
            rng = np.random.default_rng(4)
            p = fx.sample_box.mean(1)
            g = suites.random_leaf_geodesic(m, p, rng, speed=0.4)
            E = cx.adapted_frame(m, p)
            nt = m.spec.n_transverse
            ratios[name] = richardson_check(m, g, E @ rng.normal(size=m.n), E[:, nt:] @ rng.normal(size=m.n - nt),
                                            h=0.1)[2]
    elapsed = time.perf_counter() - t0
    ok = (w["trivial"] <= 1e-6 and w["invariants"] <= 1e-6 and w["margin"] >= -1e-8
          and all(3.5 <= r <= 4.5 for r in ratios.values()) and elapsed <= 120.0)
    report(4, "adapted Jacobi fields", ok,
           f"trivial solutions {w['trivial']:.1e}, verticality/|HX| {w['invariants']:.1e}, "
           f"margin {w['margin']:.1e}, Richardson " + ", ".join(f"{k} {v:.3f}" for k, v in ratios.items())
           + f"; {elapsed:.1f} s")


def test_criterion_5_normal_charts():
    found = {}
    for name, center, radii, gtol in (("FIX-WARP", None, (0.2, 0.2), 1e-5),
                                      ("FIX-HOPF", [1.2, 0.1, 0.2], (0.2, 0.2), 1e-4)):
        res = suites.normal_chart(fixtures.get(name), center=center, radii=radii, integral=True)
        found[name] = {
            "gamma": (worst(res, lambda s: "frame connection" in s), gtol),
            "radial": (worst(res, lambda s: s.startswith("radial underlined")), 1e-3),
            "frame": (worst(res, lambda s: s.startswith("frame ODE")), 1e-3),
            "jacobian": (worst(res, lambda s: s == "Jacobian at zero"), 1e-6),
        }
    chart = nc.build_normal_chart(fixtures.get("FIX-WARP").metric, [0.0, 0.0], 0.3, 0.3)
    xs = np.stack([np.linspace(-0.25, 0.25, 11), np.zeros(11)], axis=1)
    a, _ = nc.frame_coefficients(chart, xs, coords="ambient")
    a22 = float(np.max(np.abs(a[:, 1, 1] - np.exp(xs[:, 0]))))
    ok = a22 <= 1e-5 and all(v <= tol for d in found.values() for v, tol in d.values())
    detail = "; ".join(f"{k}: " + ", ".join(f"{q} {v:.1e}" for q, (v, _) in d.items()) for k, d in found.items())
    report(5, "normal foliation charts", ok, f"{detail}; WARP a_22 vs exp {a22:.1e}")


def test_criterion_6_audit():
    t0 = time.perf_counter()
    cfg = au.AuditConfig()
    warp = fixtures.get("FIX-WARP")
    rep = au.covariant_bound_table(warp.metric, cfg, warp)
    sT, sA = rep.sup[("T", 0)], rep.sup[("A", 0)]
    ok = abs(sT - 1) <= 1e-3 and sA <= 1e-6 and rep.verdict == "bounded_up_to_sampled_order" and cfg.m_max == 2
    sing = {}
    for eps in (0.1, 0.01):
        fx = fixtures.get("FIX-WARP-SINGULAR", eps=eps)
        sing[eps] = au.covariant_bound_table(fx.metric, cfg, fx).sup[("T", 0)]
        ok &= abs(sing[eps] * eps - 1) <= 0.05
    ratio = sing[0.01] / sing[0.1]
    ok &= 9 <= ratio <= 11
    hopf = fixtures.get("FIX-HOPF")
    inj = {"ambient": au.ambient_injectivity_floor(hopf.metric, cfg, hopf).floor,
           "leafwise": au.leafwise_injectivity_floor(hopf.metric, cfg, hopf).floor,
           "transverse": au.transverse_injectivity_floor(hopf, cfg).floor}
    target = {"ambient": math.pi, "leafwise": math.pi, "transverse": math.pi / 2}
    rel = {k: inj[k] / target[k] - 1 for k in inj}
    ok &= all(abs(v) <= 0.1 for v in rel.values())
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 300.0
    report(6, "bounded geometry audit", ok,
           f"WARP sup|T| {sT:.6f}, sup|A| {sA:.1e}, verdict {rep.verdict}; "
           f"SINGULAR eps*sup|T| {sing[0.1] * 0.1:.4f}/{sing[0.01] * 0.01:.4f}, ratio {ratio:.3f}; HOPF injectivity "
           + ", ".join(f"{k} {inj[k]:.3f} ({rel[k]:+.1%})" for k in inj) + f"; {elapsed:.1f} s")


def test_criterion_7_cover_and_partition():
    parts = []
    ok = True
    for name, r1 in (("FIX-PRODUCT", 0.5), ("FIX-WARP", 0.3)):
        res = suites.partition(fixtures.get(name), r1, [[-1, 1], [-1, 1]], test_k=100, queries=1000, seed=7)
        c = {ch.name: ch.residual for ch in res.checks}
        ok &= (c["uncovered fraction of test lattice"] == 0 and c["partition sums to one"] <= 1e-9
               and c["weights outside supports"] == 0 and c["multiplicity excess over N"] == 0)
        parts.append(f"{name} r1={r1}: coverage {res.info['coverage']:.0%}, N={res.info['N']}, "
                     f"sum error {c['partition sums to one']:.1e}")
    report(7, "cover and partition of unity", ok, "; ".join(parts))


def test_criterion_8_determinism(tmp_path):
    names = sorted(p.name for p in SCEN.glob("*.json") if p.stem != "malformed")
    same = []
    for fname in names:
        data = json.loads((SCEN / fname).read_text())
        command = data.get("command", "identities")
        reports = []
        for run in ("a", "b"):
            out = tmp_path / f"{fname}-{run}"
            cli.main([command, "--scenario", str(SCEN / fname), "--out", str(out)])
            reports.append((out / "report.json").read_bytes())
        same.append(reports[0] == reports[1])
    report(8, "deterministic reports", all(same), f"{sum(same)}/{len(same)} scenarios byte-identical across two runs")
