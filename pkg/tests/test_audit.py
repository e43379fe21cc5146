import math
import os

import numpy as np
import pytest

from foliab import audit as au
from foliab import fixtures

SMALL = au.AuditConfig(lattice=3, m_max=1, exhaustion=(0.25,))


def test_config_validation():
    for bad in ({"m_max": -1}, {"radii": (0.0, 0.2)}, {"cap": 0}, {"norm": "sup"}, {"lattice": 0}):
        with pytest.raises(ValueError):
            au.AuditConfig(**bad)


def test_lattice_shape_and_corners():
    pts = au.lattice([[0, 1], [-1, 1]], 3)
    assert pts.shape == (9, 2)
    assert [0, -1] in pts.tolist() and [1, 1] in pts.tolist()


def test_product_table_zero(product):
    rep = au.covariant_bound_table(product.metric, SMALL, product)
    assert all(v == 0 for v in rep.sup.values())
    assert rep.verdict == "bounded_up_to_sampled_order"
    assert rep.witness is None


def test_warp_table(warp):
    rep = au.covariant_bound_table(warp.metric, SMALL, warp)
    assert rep.sup[("T", 0)] == pytest.approx(1.0, abs=1e-10)
    assert rep.sup[("A", 0)] <= 1e-12
    assert rep.verdict == "bounded_up_to_sampled_order"
    rows = rep.rows()
    assert len(rows) == sum(len(t.points) for t in rep.tables)
    assert all(v >= 0 for r in rows for k, v in r.items() if k.startswith("|"))
    frob = au.covariant_bound_table(warp.metric, au.AuditConfig(lattice=3, m_max=0, exhaustion=(0.25,),
                                                                norm="frobenius"), warp)
    assert frob.sup[("T", 0)] == pytest.approx(math.sqrt(2), abs=1e-10)


def test_warp_singular_violation():
    fx = fixtures.get("FIX-WARP-SINGULAR", eps=0.05)
    rep = au.covariant_bound_table(fx.metric, au.AuditConfig(lattice=5, m_max=0), fx)
    assert rep.sup[("T", 0)] == pytest.approx(1 / 0.05, rel=1e-8)
    assert rep.verdict == "violation_found"
    assert rep.witness is not None and rep.witness_quantity
    assert rep.witness[0] == pytest.approx(0.05)


def test_explicit_sample_points(warp):
    cfg = au.AuditConfig(sample_points=((0.0, 0.0), (0.5, 0.5)), m_max=0, exhaustion=())
    rep = au.covariant_bound_table(warp.metric, cfg, warp)
    assert len(rep.tables[0].points) == 2


def test_thread_count_does_not_change_results(hopf, monkeypatch):
    cfg = au.AuditConfig(lattice=3, m_max=1, exhaustion=())
    outs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("FOLIAB_THREADS", threads)
        assert au.worker_count() == int(threads)
        rep = au.covariant_bound_table(hopf.metric, cfg, hopf)
        outs.append(np.concatenate([t.norms[k].ravel() for t in rep.tables for k in sorted(t.norms)]))
    assert outs[0].tobytes() == outs[1].tobytes()


def test_flat_injectivity_hits_cap(product, warp):
    cfg = au.AuditConfig(cap=1.0, injectivity_lattice=2, shoot_step=0.05)
    for fx in (product, warp):
        assert au.leafwise_injectivity_floor(fx.metric, cfg, fx).floor == pytest.approx(1.0)
        assert au.transverse_injectivity_floor(fx, cfg).floor == pytest.approx(1.0)
    amb = au.ambient_injectivity_floor(product.metric, cfg, product)
    assert amb.floor == pytest.approx(1.0)
    assert amb.inclusion is not None and amb.inclusion["passed"]


def test_injectivity_monotone_in_cap(hopf):
    floors = [au.leafwise_injectivity_floor(hopf.metric, au.AuditConfig(cap=c, injectivity_lattice=1,
                                                                        shoot_step=0.02), hopf).floor
              for c in (1.0, 2.5, 4.0)]
    assert floors == sorted(floors)
    assert floors[0] == pytest.approx(1.0)
    assert floors[-1] == pytest.approx(math.pi, rel=0.1)


def test_transverse_needs_projection():
    fx = fixtures.build_fixture("inline", {"n_transverse": 1, "n_leafwise": 1, "domain": [[-1, 1], [-1, 1]],
                                           "metric": [["1", "0"], ["0", "1"]]})
    with pytest.raises(Exception):
        au.transverse_injectivity_floor(fx, au.AuditConfig())


def test_product_chart_bounds(product):
    cfg = au.AuditConfig(chart_centers=2, chart_lattice=3, deriv_order_chart=2, radii=(0.2, 0.2))
    out = au.chart_coefficient_bounds(product.metric, cfg, product)
    assert len(out["excluded"]) == 0 and len(out["centers"]) == 4
    # rows: g and its inverse; columns: derivative order
    np.testing.assert_allclose(out["sup"][:, 0], 1.0, atol=1e-8)
    assert np.max(np.abs(out["sup"][:, 1:])) <= 1e-6
    assert np.all(out["spread"] == 0)


def test_distances(product, warp):
    d = au.riemannian_distance(product.metric, [0.0, 0.0], np.array([[0.3, 0.4], [-0.6, 0.8]]))
    np.testing.assert_allclose(d, [0.5, 1.0], atol=1e-8)
    # upper half-plane model with u = exp(-x)
    p, q = np.array([0.1, -0.3]), np.array([-0.4, 0.5])
    u1, u2 = math.exp(-p[0]), math.exp(-q[0])
    exact = math.acosh(1 + ((q[1] - p[1]) ** 2 + (u2 - u1) ** 2) / (2 * u1 * u2))
    assert float(au.riemannian_distance(warp.metric, p, q[None])[0]) == pytest.approx(exact, abs=1e-6)


def test_bump_profile():
    s = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    b = au.bump(s, 1.0)
    assert b[0] == b[1] == b[2] == 1.0 and b[4] == b[5] == 0.0
    assert 0 < b[3] < 1
    xs = np.linspace(0, 2.5, 2001)
    assert np.all(np.diff(au.bump(xs, 1.0)) <= 0)


@pytest.fixture(scope="module")
def small_cover():
    m = fixtures.get("FIX-PRODUCT").metric
    return au.build_cover(m, 0.5, [[-0.5, 0.5], [-0.5, 0.5]], radii=(0.25, 0.25), test_k=30)


def test_cover_invariants(small_cover):
    cov = small_cover
    assert cov.coverage == 1.0
    assert cov.multiplicity_observed <= cov.N
    c = cov.centers
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    assert np.min(d[np.triu_indices(len(c), 1)]) >= 0.5 - 1e-9
    assert cov.N_volume is not None and cov.N_volume >= 1


def test_partition_sums_and_supports(small_cover):
    pu = au.partition_of_unity(small_cover)
    y = au.lattice(small_cover.region, 12)
    w = pu(y)
    assert np.max(np.abs(w.sum(1) - 1)) <= 1e-9
    inside, _ = au.membership(small_cover, y, scale=2.0, refine_all=True)
    assert np.max(np.where(inside, 0.0, w)) <= 1e-12
    g = pu.gradient_bounds(y)
    assert np.all(np.isfinite(g))
    with pytest.raises(au.UncoveredPoint):
        pu(np.array([[3.5, 3.5]]))


def test_single_center_cover(product):
    cov = au.build_cover(product.metric, 0.5, [[0.0, 0.05], [0.0, 0.05]], test_k=5)
    assert len(cov) == 1 and cov.N == 1
    w = au.partition_of_unity(cov)(cov.centers)
    np.testing.assert_array_equal(w, [[1.0]])


def test_region_too_coarse(product):
    with pytest.raises(au.RegionTooCoarse):
        au.build_cover(product.metric, 0.4, [[-1, 1], [-1, 1]], spacing=0.2)
