import math

import numpy as np
import pytest

from foliab import connections as cx
from foliab import fixtures
from foliab.jacobi import (NotLeafwise, endpoint_rank, growth_bound_margin, horizontal_norm_drift, leafwise_geodesic,
                           normal_connection_residual, normalize_jacobi, richardson_check, solve_adapted_jacobi,
                           variation_field, vertical_residual, y_inner_gamma)
from foliab.suites import random_leaf_geodesic

from conftest import box_points

P0 = {"FIX-PRODUCT": [0.1, -0.2], "FIX-WARP": [0.2, 0.1], "FIX-SLOPE": [0.0, 0.3],
      "FIX-WARP-SINGULAR": [0.6, 0.0], "FIX-HOPF": [1.2, 0.1, 0.2]}


@pytest.fixture(scope="module")
def curves():
    rng = np.random.default_rng(7)
    out = {}
    for name, p in P0.items():
        fx = fixtures.get(name)
        out[name] = (fx, random_leaf_geodesic(fx.metric, np.array(p), rng, speed=0.4))
    return out


def random_initial(m, p, k, rng):
    X0 = rng.normal(size=(k, m.n))
    Y0, _ = cx.split(m, p, rng.normal(size=(k, m.n)))
    return X0, Y0


@pytest.mark.parametrize("name", list(P0))
def test_trivial_solutions(name, curves):
    fx, gam = curves[name]
    u0 = gam.velocities[0]
    t = (gam.times - gam.times[0])[:, None]
    sol = solve_adapted_jacobi(fx.metric, gam, u0, np.zeros_like(u0))
    assert np.max(np.abs(sol.X - gam.velocities)) <= 1e-6
    sol = solve_adapted_jacobi(fx.metric, gam, np.zeros_like(u0), u0)
    assert np.max(np.abs(sol.X - t * gam.velocities)) <= 1e-6


def test_product_horizontal_field_constant(curves):
    fx, gam = curves["FIX-PRODUCT"]
    sol = solve_adapted_jacobi(fx.metric, gam, [1.0, 0.0], [0.0, 0.0])
    np.testing.assert_allclose(sol.X, np.broadcast_to([1.0, 0.0], sol.X.shape), atol=1e-14)
    assert sol.C_const == 3.0
    margin = growth_bound_margin(sol)
    assert margin == pytest.approx((math.exp(3 * (gam.times[-1] - gam.times[0])) - 1.0), rel=1e-12)


@pytest.mark.parametrize("name", list(P0))
def test_invariants_on_random_solves(name, curves, rng):
    fx, gam = curves[name]
    m = fx.metric
    X0, Y0 = random_initial(m, gam.points[0], 50, rng)
    sol = solve_adapted_jacobi(m, gam, X0, Y0)
    assert vertical_residual(sol) <= 1e-6
    assert horizontal_norm_drift(sol) <= 1e-6
    assert np.min(growth_bound_margin(sol)) >= -1e-8
    assert normal_connection_residual(sol) <= 1e-6
    ip = y_inner_gamma(sol)
    assert np.max(np.abs(ip - ip[0])) <= 1e-6
    # Y stays vertical in chart components too
    _, hY = cx.split(m, gam.points[:, None, :], sol.Y)
    assert np.max(np.abs(hY)) <= 1e-6


def test_speed_solution_energy(curves):
    fx, gam = curves["FIX-HOPF"]
    u = gam.velocities[0]
    u = u / math.sqrt(u @ fx.metric.g(gam.points[0]) @ u)
    gam1 = leafwise_geodesic(fx.metric, gam.points[0], u, t_end=1.0, step=1e-2)
    sol = solve_adapted_jacobi(fx.metric, gam1, gam1.velocities[0], np.zeros(3))
    e0 = np.sum(sol.x[0] ** 2) + np.sum(sol.y[0] ** 2)
    e1 = np.sum(sol.x[-1] ** 2) + np.sum(sol.y[-1] ** 2)
    assert e1 == pytest.approx(e0, abs=1e-8)
    assert growth_bound_margin(sol) > 0


def test_superposition(curves, rng):
    fx, gam = curves["FIX-HOPF"]
    m = fx.metric
    (X1, X2), (Y1, Y2) = random_initial(m, gam.points[0], 2, rng)
    a, b = 0.3, -2.1
    s1, s2, s12 = (solve_adapted_jacobi(m, gam, X, Y) for X, Y in
                   ((X1, Y1), (X2, Y2), (a * X1 + b * X2, a * Y1 + b * Y2)))
    assert np.max(np.abs(s12.X - a * s1.X - b * s2.X)) <= 1e-8
    assert np.max(np.abs(s12.Y - a * s1.Y - b * s2.Y)) <= 1e-8


def test_normalization(curves, rng):
    fx, gam = curves["FIX-HOPF"]
    m = fx.metric
    p, u = gam.points[0], gam.velocities[0]
    G = m.g(p)
    # a vertical Y0 orthogonal to the velocity is zero on a one-dimensional leaf
    sol = solve_adapted_jacobi(m, gam, rng.normal(size=3), np.zeros(3))
    star = normalize_jacobi(sol)
    np.testing.assert_allclose(star.x, sol.x, atol=1e-14)
    sol = solve_adapted_jacobi(m, gam, np.zeros(3), u)
    star = normalize_jacobi(sol)
    assert np.max(np.abs(star.X)) <= 1e-8 and np.max(np.abs(star.Y)) <= 1e-8
    sol = solve_adapted_jacobi(m, gam, *random_initial(m, p, 5, rng))
    assert np.max(np.abs(y_inner_gamma(normalize_jacobi(sol)))) <= 1e-8
    assert u @ G @ u > 0


@pytest.mark.parametrize("name", ["FIX-WARP", "FIX-HOPF"])
def test_solution_space_dimension(name, curves):
    fx, gam = curves[name]
    assert endpoint_rank(fx.metric, gam) == fx.metric.n + fx.metric.spec.n_leafwise


def test_variation_field_product(curves, rng):
    fx, gam = curves["FIX-PRODUCT"]
    X0, Y0 = np.array([0.4, -0.3]), np.array([0.0, 0.7])
    sol = solve_adapted_jacobi(fx.metric, gam, X0, Y0)
    assert np.max(np.abs(variation_field(fx.metric, gam, X0, Y0) - sol.X)) <= 1e-8


def test_richardson_ratio_warp(curves):
    fx, gam = curves["FIX-WARP"]
    e1, e2, ratio = richardson_check(fx.metric, gam, np.array([0.5, 0.3]), np.array([0.0, 0.4]), h=0.1)
    assert 3.5 <= ratio <= 4.5


def test_rejects_non_leafwise(warp):
    with pytest.raises(NotLeafwise):
        leafwise_geodesic(warp.metric, [0, 0], [1.0, 0.5])
    c = leafwise_geodesic(warp.metric, [0, 0], [0.0, 0.5], step=1e-2)
    with pytest.warns(UserWarning):
        solve_adapted_jacobi(warp.metric, c, [1.0, 0.0], [0.3, 0.1])
    with pytest.raises(ValueError):
        variation_field(warp.metric, c, [1.0, 0.0], [0.0, 0.1], h=0.5)
