import numpy as np
import pytest
from hypothesis import given, strategies as st

from foliab.core import DifferentiationConfig, differentiate
from foliab.expr import Expr
from foliab.jets import Jet, contract, inverse, stack


def test_against_symbolic_derivatives(oracles):
    for row in oracles["jets"]:
        e = Expr.parse(row["expr"], 2)
        got = differentiate(e, row["alpha"], np.array(row["point"]))
        assert got == pytest.approx(row["value"], rel=1e-10, abs=1e-10), row


def test_finite_difference_mode_agrees(oracles):
    cfg = DifferentiationConfig("fd")
    for row in oracles["jets"]:
        if sum(row["alpha"]) > 2:
            continue
        e = Expr.parse(row["expr"], 2)
        got = differentiate(e, row["alpha"], np.array(row["point"]), cfg)
        assert got == pytest.approx(row["value"], rel=1e-4, abs=1e-4)


def test_batched_points_match_single():
    e = Expr.parse("sin(x1)*exp(x2) + x1^3", 2)
    pts = np.array([[0.1, 0.2], [-0.4, 0.9], [1.3, -0.5]])
    batched = differentiate(e, (2, 1), pts)
    single = [differentiate(e, (2, 1), p) for p in pts]
    np.testing.assert_allclose(batched, single, rtol=1e-14)


def test_product_rule_and_chain_rule():
    x, y = Jet.variables(np.array([0.3, -0.8]), 4)
    f, g = x.sin() * y, (x * y).exp()
    lhs = (f * g).partial((1, 1))
    rhs = (f.partial((1, 1)) * g.value + f.partial((1, 0)) * g.partial((0, 1))
           + f.partial((0, 1)) * g.partial((1, 0)) + f.value * g.partial((1, 1)))
    assert lhs == pytest.approx(rhs, rel=1e-13)


@given(st.floats(0.2, 3.0), st.integers(1, 4))
def test_power_and_sqrt(a, k):
    (x,) = Jet.variables(np.array([a]), 4)
    # d^k of x^(1/2)
    coef = np.prod([0.5 - i for i in range(k)])
    assert x.sqrt().partial((k,)) == pytest.approx(coef * a ** (0.5 - k), rel=1e-12)
    assert (1 / x).partial((k,)) == pytest.approx((-1) ** k * np.prod(range(1, k + 1)) * a ** (-1 - k), rel=1e-12)


def test_d_lowers_order_and_commutes():
    x, y = Jet.variables(np.array([0.2, 0.5]), 4)
    f = (x * x * y).cosh()
    assert f.d(0).d(1).order == 2
    np.testing.assert_allclose(f.d(0).d(1).c, f.d(1).d(0).c, atol=1e-13)
    assert f.d(0).d(1).value == pytest.approx(f.partial((1, 1)))


def test_matrix_inverse_jet():
    x, y = Jet.variables(np.array([0.4, -0.3]), 3)
    A = stack([stack([2 + x * x, y]), stack([y, 1 + x.exp()])], axis=-2)
    Ai = inverse(A)
    eye = contract("ij,jk->ik", A, Ai)
    np.testing.assert_allclose(eye.value, np.eye(2), atol=1e-14)
    assert np.max(np.abs(eye.c[1:])) < 1e-13


def test_order_guard():
    (x,) = Jet.variables(np.array([0.0]), 2)
    with pytest.raises(ValueError):
        x.partial((3,))
