"""Levi-Civita, adapted and breve connections, O'Neill tensors and curvature.

Index conventions (chart coordinates):

* ``gamma[i, j, k] = Γ^i_jk`` with ``∇_{∂_k} ∂_j = Γ^i_jk ∂_i``;
* a (1,2) tensor ``S`` is stored as ``S[i, k, j]`` so that
  ``(S_E F)^i = S[i, k, j] E^k F^j``;
* torsion ``tor[i, k, j]`` is the i-th component of ``Tor(∂_k, ∂_j)``;
* curvature ``R[i, j, k, l]`` is the i-th component of ``R(∂_k, ∂_l) ∂_j``
  with ``R(E, F) = [∇_E, ∇_F] - ∇_[E,F]``.

Everything is computed as Taylor jets at one point or a batch of points, so
derivatives of tensors (needed for curvature and covariant norms) are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .core import (
    DegenerateMetricError,
    MetricField,
    OrderError,
    Point,
    TangentVector,
    vertical_projector,
    vertical_projector_jet,
)
from .expr import Expr
from .jets import Jet, contract, inverse, stack


def _swap(j: Jet, a: int, b: int) -> Jet:
    return j.map(lambda c: np.swapaxes(c, a, b))


def curvature_from(gamma: Jet) -> Jet:
    """``R[i,j,k,l]`` of a connection given its coefficient jet."""
    dG = gamma.grad()  # dG[i,j,l,k] = ∂_k Γ^i_jl
    R = _swap(dG, -1, -2) - dG
    R = R + contract("iak,ajl->ijkl", gamma, gamma) - contract("ial,ajk->ijkl", gamma, gamma)
    return R


def covariant(S: Jet, types: str, gamma: Jet) -> Jet:
    """Covariant derivative of a tensor jet; the new index is appended last.

    ``types`` lists the variance of each tensor index, ``'u'`` or ``'d'``.
    """
    out = S.grad()
    letters = "abcdefgh"[: len(types)]
    for pos, t in enumerate(types):
        swapped = letters[:pos] + "z" + letters[pos + 1:]
        if t == "u":
            out = out + contract(f"{letters[pos]}zm,{swapped}->{letters}m", gamma, S)
        else:
            out = out - contract(f"z{letters[pos]}m,{swapped}->{letters}m", gamma, S)
    return out


def tensor_norm(S: np.ndarray, types: str, g: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """g-Frobenius norm of a tensor with leading batch axes."""
    r = len(types)
    batch = S.shape[: S.ndim - r]
    nb = len(batch)
    W = S
    for pos, t in enumerate(types):
        M = g if t == "u" else ginv
        ax = nb + pos
        Wm = np.moveaxis(W, ax, -1)
        shp = Wm.shape
        Wm = Wm.reshape(batch + (-1, shp[-1])) @ M
        W = np.moveaxis(Wm.reshape(shp), -1, ax)
    sq = (S * W).reshape(batch + (-1,)).sum(-1)
    return np.sqrt(np.maximum(sq, 0.0))


class LocalGeometry:
    """All connection data of a metric as jets at points ``x``.

    ``order`` is the jet order of the metric; Christoffel symbols carry one
    order less, curvature two less.
    """

    def __init__(self, metric: MetricField, x, order: int = 2):
        self.metric = metric
        self.spec = metric.spec
        self.x = np.asarray(x, dtype=float)
        self.order = order
        self.n = metric.n
        self.g = metric.jet(self.x, order)
        cond = np.linalg.cond(self.g.value)
        if np.any(~np.isfinite(cond)) or np.any(cond > metric.cond_cap):
            raise DegenerateMetricError("metric is numerically singular")

    @cached_property
    def ginv(self) -> Jet:
        return inverse(self.g)

    @cached_property
    def gamma(self) -> Jet:
        dg = self.g.grad()  # dg[l,j,k] = ∂_k g_lj
        brk = dg + _swap(dg, -1, -2) - dg.map(lambda c: np.moveaxis(c, -1, -3))
        # third term: ∂_l g_jk stored as dg[j,k,l] -> reorder to [l,j,k]
        return 0.5 * contract("il,ljk->ijk", self.ginv.truncate(self.order - 1), brk)

    @cached_property
    def P(self) -> Jet:
        return vertical_projector_jet(self.g, self.spec)

    @cached_property
    def Q(self) -> Jet:
        return self.P.map(lambda c: np.broadcast_to(_eye_like(c), c.shape) - c)

    def _split_connection(self, Pj: Jet, dPj: Jet, G: Jet) -> Jet:
        inner = dPj + contract("bak,aj->bjk", G, Pj)
        return contract("ib,bjk->ijk", Pj, inner)

    @cached_property
    def gamma_adapted(self) -> Jet:
        o = self.order - 1
        P, Q = self.P.truncate(o), self.Q.truncate(o)
        dP, dQ = self.P.grad(), self.Q.grad()
        G = self.gamma
        return self._split_connection(P, dP, G) + self._split_connection(Q, dQ, G)

    @cached_property
    def difference(self) -> Jet:
        """``D[i,k,j]`` with ``∇_E F - ∇̊_E F = D(E, F)``."""
        return _swap(self.gamma - self.gamma_adapted, -1, -2)

    @cached_property
    def T(self) -> Jet:
        return contract("iaj,ak->ikj", self.difference, self.P.truncate(self.order - 1))

    @cached_property
    def A(self) -> Jet:
        return contract("iaj,ak->ikj", self.difference, self.Q.truncate(self.order - 1))

    @cached_property
    def torsion(self) -> Jet:
        Ga = self.gamma_adapted
        return _swap(Ga, -1, -2) - Ga

    @cached_property
    def gamma_breve(self) -> Jet:
        return self.gamma_adapted - 0.5 * _swap(self.torsion, -1, -2)

    @cached_property
    def R(self) -> Jet:
        return curvature_from(self.gamma)

    @cached_property
    def R_adapted(self) -> Jet:
        return curvature_from(self.gamma_adapted)

    def connection(self, kind: str) -> Jet:
        names = {"levi_civita": "gamma", "adapted": "gamma_adapted", "breve": "gamma_breve"}
        return getattr(self, names[kind])

    def curvature(self, kind: str) -> Jet:
        return getattr(self, {"levi_civita": "R", "adapted": "R_adapted"}[kind])


def _eye_like(c: np.ndarray) -> np.ndarray:
    eye = np.zeros(c.shape)
    n = c.shape[-1]
    eye[0, ..., range(n), range(n)] = 1.0
    return eye


# fast value-only evaluation for ODE right-hand sides -------------------------
def connection_values(metric: MetricField, x: np.ndarray, kind: str) -> np.ndarray:
    """Connection coefficients at a batch of points without jet bookkeeping."""
    x = np.asarray(x, dtype=float)
    n = metric.n
    J = metric.jet(x, 1)
    G = J.value
    batch = G.shape[:-2]
    dg = J.grad().value  # dg[...,l,j,k] = ∂_k g_lj
    ginv = np.linalg.inv(G)
    brk = dg + np.swapaxes(dg, -1, -2) - np.moveaxis(dg, -1, -3)
    # small batched contractions go through matmul, which beats einsum here
    gamma = 0.5 * (ginv @ brk.reshape(batch + (n, n * n))).reshape(batch + (n, n, n))
    if kind == "levi_civita":
        return gamma
    spec = metric.spec
    lw = spec.leafwise
    nl = spec.n_leafwise
    Gll_inv = np.linalg.inv(G[..., lw, lw])
    rows = Gll_inv @ G[..., lw, :]
    P = np.zeros_like(G)
    P[..., lw, :] = rows
    dP = np.zeros_like(dg)
    # d(Gll^-1 Gl:) = Gll^-1 (dGl: - dGll Gll^-1 Gl:)
    dGll = np.moveaxis(dg[..., lw, lw, :], -1, -3)  # [..., k, a, b]
    corr = np.moveaxis(dGll @ rows[..., None, :, :], -3, -1)  # [..., a, j, k]
    inner = (dg[..., lw, :, :] - corr).reshape(batch + (nl, n * n))
    dP[..., lw, :, :] = (Gll_inv @ inner).reshape(batch + (nl, n, n))
    Q = np.eye(n) - P
    # GP[i,j,k] = gamma[i,a,k] P[a,j]
    GP = np.swapaxes(np.swapaxes(gamma, -1, -2) @ P[..., None, :, :], -1, -2)
    GQ = gamma - GP
    ga = (P @ (dP + GP).reshape(batch + (n, n * n)) + Q @ (GQ - dP).reshape(batch + (n, n * n))).reshape(batch + (n, n, n))
    if kind == "adapted":
        return ga
    tor = np.swapaxes(ga, -1, -2) - ga
    return ga - 0.5 * np.swapaxes(tor, -1, -2)


def _lmul(A: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``A[..., i, a] Y[..., a, *rest]`` via one matmul."""
    return (A @ Y.reshape(Y.shape[: A.ndim - 2] + (Y.shape[A.ndim - 2], -1))).reshape(A.shape[:-1] + Y.shape[A.ndim - 1:])


def _by_last(D: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``D[..., a, b, m] Y[..., b, *rest] -> out[..., a, *rest, m]``."""
    nb = D.ndim - 3
    Dm = np.moveaxis(D, -1, -3)
    Yf = Y.reshape(Y.shape[:nb] + (Y.shape[nb], -1))
    out = (Dm @ Yf[..., None, :, :]).reshape(Dm.shape[:-1] + Y.shape[nb + 1:])
    return np.moveaxis(out, nb, -1)


def connection_jets(metric: MetricField, x: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Connection coefficients and first derivatives, ``dG[..., i, j, k, m] = ∂_m Γ^i_jk``.

    Hand-differentiated counterpart of :func:`connection_values`.
    """
    x = np.asarray(x, dtype=float)
    n = metric.n
    J = metric.jet(x, 2)
    G = J.value
    d1 = J.grad()
    dg = d1.value  # [l, j, k] = ∂_k g_lj
    ddg = d1.grad().value  # [l, j, k, m] = ∂_m ∂_k g_lj
    ginv = np.linalg.inv(G)
    brk = dg + np.swapaxes(dg, -1, -2) - np.moveaxis(dg, -1, -3)
    dbrk = ddg + np.swapaxes(ddg, -2, -3) - np.moveaxis(ddg, -2, -4)
    dginv = -_by_last(_lmul(ginv, dg), ginv)  # [i, l, m]
    gamma = 0.5 * _lmul(ginv, brk)
    dgamma = 0.5 * (_by_last(dginv, brk) + _lmul(ginv, dbrk))
    if kind == "levi_civita":
        return gamma, dgamma
    lw = metric.spec.leafwise
    L, M = G[..., lw, lw], G[..., lw, :]
    dL, dM = dg[..., lw, lw, :], dg[..., lw, :, :]
    ddL, ddM = ddg[..., lw, lw, :, :], ddg[..., lw, :, :, :]
    Linv = np.linalg.inv(L)
    rows = Linv @ M
    drows = _lmul(Linv, dM - _by_last(dL, rows))
    ddLr = np.moveaxis(np.moveaxis(ddL, -3, -1) @ rows[..., None, None, :, :], -1, -3)
    inner = ddM - ddLr - np.swapaxes(_by_last(dL, drows), -1, -2) - _by_last(dL, drows)
    ddrows = _lmul(Linv, inner)
    P = np.zeros_like(G)
    P[..., lw, :] = rows
    dP = np.zeros_like(dg)
    dP[..., lw, :, :] = drows
    ddP = np.zeros_like(ddg)
    ddP[..., lw, :, :, :] = ddrows
    Q = np.eye(n) - P
    # GP[b,j,k] = Γ[b,a,k] P[a,j]
    GP = np.swapaxes(np.swapaxes(gamma, -1, -2) @ P[..., None, :, :], -1, -2)
    GQ = gamma - GP
    gT = np.moveaxis(dgamma, -3, -1)  # [b,k,m,a]
    dGP = np.moveaxis(gT @ P[..., None, None, :, :], -1, -3)
    gk = np.swapaxes(gamma, -1, -2).reshape(G.shape[:-2] + (n * n, n))
    dGP = dGP + np.swapaxes(_lmul(gk, dP).reshape(dgamma.shape), -3, -2)
    dGQ = dgamma - dGP
    ga = _lmul(P, dP + GP) + _lmul(Q, GQ - dP)
    dga = _by_last(dP, 2 * dP + GP - GQ) + _lmul(P, ddP + dGP) + _lmul(Q, dGQ - ddP)
    if kind == "adapted":
        return ga, dga
    tor = np.swapaxes(ga, -1, -2) - ga
    dtor = np.swapaxes(dga, -2, -3) - dga
    return ga - 0.5 * np.swapaxes(tor, -1, -2), dga - 0.5 * np.swapaxes(dtor, -2, -3)


# vector fields -----------------------------------------------------------------
@dataclass(frozen=True)
class VectorField:
    """Components as a map from coordinates (floats, arrays or jets) to n entries."""

    components: Callable[[Sequence], Sequence]
    n: int

    @classmethod
    def constant(cls, v) -> "VectorField":
        v = np.asarray(v, dtype=float)
        return cls(lambda xs: list(v), len(v))

    @classmethod
    def linear(cls, v, M, x0) -> "VectorField":
        v, M, x0 = (np.asarray(a, dtype=float) for a in (v, M, x0))
        n = len(v)

        def comps(xs):
            return [v[i] + sum(M[i, k] * (xs[k] - x0[k]) for k in range(n)) for i in range(n)]

        return cls(comps, n)

    @classmethod
    def from_strings(cls, exprs: Sequence[str]) -> "VectorField":
        parsed = [Expr.parse(s, len(exprs)) for s in exprs]
        return cls(lambda xs: [e(xs) for e in parsed], len(parsed))

    def jet(self, x, order: int) -> Jet:
        xs = Jet.variables(np.asarray(x, dtype=float), order)
        comps = self.components(xs)
        if not any(isinstance(c, Jet) for c in comps):
            comps = [c + 0.0 * xs[0] for c in comps]
        return stack(comps)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        comps = self.components([x[..., k] for k in range(self.n)])
        return np.stack([np.broadcast_to(c, x.shape[:-1]) for c in comps], axis=-1)


def _vec(v) -> np.ndarray:
    return v.components if isinstance(v, TangentVector) else np.asarray(v, dtype=float)


def _coords(p) -> np.ndarray:
    return p.coords if isinstance(p, Point) else np.asarray(p, dtype=float)


def _as_field(F) -> VectorField:
    if isinstance(F, VectorField):
        return F
    return VectorField.constant(_vec(F))


def _nabla_jet(G: Jet, E: np.ndarray, F: Jet) -> np.ndarray:
    """``∇_E F`` at the base point for a connection jet and a field jet."""
    dF = F.grad().value  # dF[i,k] = ∂_k F^i
    Fv = F.value
    return np.einsum("...ik,...k->...i", dF, E) + np.einsum("...iak,...a,...k->...i", G.value, Fv, E)


# public point operations ---------------------------------------------------------
def christoffel(m: MetricField, p, kind: str = "levi_civita") -> np.ndarray:
    x = _coords(p)
    m.check_domain(x)
    return LocalGeometry(m, x, order=1).connection(kind).value


def oneill_T(m: MetricField, p, E, F) -> np.ndarray:
    geo = LocalGeometry(m, _coords(p), order=1)
    return np.einsum("...ikj,...k,...j->...i", geo.T.value, _vec(E), _vec(F))


def oneill_A(m: MetricField, p, E, F) -> np.ndarray:
    geo = LocalGeometry(m, _coords(p), order=1)
    return np.einsum("...ikj,...k,...j->...i", geo.A.value, _vec(E), _vec(F))


def oneill_direct(m: MetricField, p, E, F, which: str = "T") -> np.ndarray:
    """O'Neill tensor from its defining formula, with ``F`` a vector field.

    Used to check tensoriality: the result must not depend on how ``F`` is
    extended away from the point.
    """
    x = _coords(p)
    geo = LocalGeometry(m, x, order=1)
    Fj = _as_field(F).jet(x, 1)
    P, Q = geo.P.value, geo.Q.value
    E = _vec(E)
    Es = np.einsum("...ij,...j->...i", P if which == "T" else Q, E)
    PF = contract("ij,j->i", geo.P, Fj)
    QF = contract("ij,j->i", geo.Q, Fj)
    a = _nabla_jet(geo.gamma, Es, PF)
    b = _nabla_jet(geo.gamma, Es, QF)
    return np.einsum("...ij,...j->...i", Q, a) + np.einsum("...ij,...j->...i", P, b)


def levi_civita_derivative(m: MetricField, p, direction, F) -> np.ndarray:
    x = _coords(p)
    geo = LocalGeometry(m, x, order=1)
    return _nabla_jet(geo.gamma, _vec(direction), _as_field(F).jet(x, 1))


def adapted_derivative(m: MetricField, p, direction, F) -> np.ndarray:
    """``∇̊_E F = V∇_E(VF) + H∇_E(HF)`` evaluated from the definition."""
    x = _coords(p)
    geo = LocalGeometry(m, x, order=1)
    return _adapted_jet(geo, _vec(direction), _as_field(F).jet(x, 1))


def _adapted_jet(geo: LocalGeometry, E: np.ndarray, Fj: Jet) -> np.ndarray:
    PF = contract("ij,j->i", geo.P, Fj)
    QF = contract("ij,j->i", geo.Q, Fj)
    return np.einsum("...ij,...j->...i", geo.P.value, _nabla_jet(geo.gamma, E, PF)) + np.einsum(
        "...ij,...j->...i", geo.Q.value, _nabla_jet(geo.gamma, E, QF)
    )


def adapted_derivative_coeffs(m: MetricField, p, direction, F) -> np.ndarray:
    """``∇̊_E F`` from the adapted Christoffel symbols."""
    x = _coords(p)
    geo = LocalGeometry(m, x, order=1)
    return _nabla_jet(geo.gamma_adapted, _vec(direction), _as_field(F).jet(x, 1))


def split(m: MetricField, p, v) -> tuple[np.ndarray, np.ndarray]:
    G = m.g(_coords(p))
    P = vertical_projector(G, m.spec)
    vv = np.einsum("...ij,...j->...i", P, _vec(v))
    return vv, _vec(v) - vv


def adapted_torsion(m: MetricField, p, E, F) -> np.ndarray:
    """Torsion of ∇̊ assembled from the O'Neill case formulas."""
    x = _coords(p)
    geo = LocalGeometry(m, x, order=1)
    T, A = geo.T.value, geo.A.value
    ap = lambda S, a, b: np.einsum("...ikj,...k,...j->...i", S, a, b)  # noqa: E731
    VE, HE = split(m, x, E)
    VF, HF = split(m, x, F)
    mixed_EF = -(ap(T, VE, HF) - ap(A, HF, VE))  # T̊(V, X) = -(T_V X - A_X V)
    mixed_FE = ap(T, VF, HE) - ap(A, HE, VF)  # T̊(X, V) = T_V X - A_X V
    return mixed_EF + mixed_FE - 2.0 * ap(A, HE, HF)


def adapted_torsion_direct(m: MetricField, p, E, F) -> np.ndarray:
    """``∇̊_E F - ∇̊_F E - [E, F]`` on vector-field extensions."""
    x = _coords(p)
    Ef, Ff = _as_field(E), _as_field(F)
    e, f = Ef(x), Ff(x)
    Ej, Fj = Ef.jet(x, 1), Ff.jet(x, 1)
    bracket = np.einsum("...ik,...k->...i", Fj.grad().value, e) - np.einsum("...ik,...k->...i", Ej.grad().value, f)
    return adapted_derivative(m, x, e, Ff) - adapted_derivative(m, x, f, Ef) - bracket


def adapted_torsion_coeffs(m: MetricField, p, E, F) -> np.ndarray:
    geo = LocalGeometry(m, _coords(p), order=1)
    return np.einsum("...ikj,...k,...j->...i", geo.torsion.value, _vec(E), _vec(F))


def breve_derivative(m: MetricField, p, direction, F) -> np.ndarray:
    """``∇̆_E F = ∇̊_E F - ½ T̊(E, F)``."""
    x = _coords(p)
    e = _vec(direction)
    f = _as_field(F)(x)
    return adapted_derivative(m, x, e, F) - 0.5 * adapted_torsion(m, x, e, f)


def breve_torsion(m: MetricField, p, E, F) -> np.ndarray:
    geo = LocalGeometry(m, _coords(p), order=1)
    Gb = geo.gamma_breve.value
    tor = Gb - np.swapaxes(Gb, -1, -2)
    return np.einsum("...ijk,...k,...j->...i", tor, _vec(E), _vec(F))


def curvature(m: MetricField, p, kind: str, E, F, G) -> np.ndarray:
    """``R(E, F) G`` for the Levi-Civita or adapted connection."""
    geo = LocalGeometry(m, _coords(p), order=2)
    Rm = geo.curvature(kind).value
    return np.einsum("...ijkl,...j,...k,...l->...i", Rm, _vec(G), _vec(E), _vec(F))


def horizontal_bracket(m: MetricField, p, X, Y) -> np.ndarray:
    """``[X̃, Ỹ]`` for the horizontal projections of constant extensions."""
    x = _coords(p)
    geo = LocalGeometry(m, x, order=1)
    Xj = contract("ij,j->i", geo.Q, VectorField.constant(_vec(X)).jet(x, 1))
    Yj = contract("ij,j->i", geo.Q, VectorField.constant(_vec(Y)).jet(x, 1))
    return np.einsum("...ik,...k->...i", Yj.grad().value, Xj.value) - np.einsum(
        "...ik,...k->...i", Xj.grad().value, Yj.value
    )


def vertical_bracket(m: MetricField, p, X, Y) -> np.ndarray:
    vb, _ = split(m, p, horizontal_bracket(m, p, X, Y))
    return vb


class DifferenceTerms:
    """Both sides of the curvature-difference identities at one point."""

    def __init__(self, m: MetricField, x):
        self.m = m
        self.x = np.asarray(x, dtype=float)
        geo = LocalGeometry(m, self.x, order=2)
        self.geo = geo
        self.T = geo.T.value
        self.A = geo.A.value
        self.dT = covariant(geo.T, "udd", geo.gamma).value  # [i,k,j,m]: (∇_m T)_k j
        self.dA = covariant(geo.A, "udd", geo.gamma).value
        self.Rdiff = geo.R_adapted.value - geo.R.value

    def op(self, S, a):
        return np.einsum("ikj,k->ij", S, a)

    def dop(self, dS, direction, a):
        return np.einsum("ikjm,k,m->ij", dS, a, direction)

    def lhs(self, E, F):
        return np.einsum("ijkl,k,l->ij", self.Rdiff, E, F)

    def rhs_VV(self, V, W):
        TV, TW = self.op(self.T, V), self.op(self.T, W)
        return -self.dop(self.dT, V, W) + self.dop(self.dT, W, V) + TV @ TW - TW @ TV

    def rhs_XY(self, X, Y, vbracket):
        AX, AY = self.op(self.A, X), self.op(self.A, Y)
        return (
            -self.dop(self.dA, X, Y) + self.dop(self.dA, Y, X) + AX @ AY - AY @ AX + self.op(self.T, vbracket)
        )

    def rhs_XV(self, X, V):
        AX, TV = self.op(self.A, X), self.op(self.T, V)
        TVX = TV @ X
        AXV = AX @ V
        return (
            -self.dop(self.dT, X, V)
            + self.dop(self.dA, V, X)
            - self.op(self.T, TVX)
            + self.op(self.A, AXV)
            + AX @ TV
            - TV @ AX
        )


def random_split_vectors(m: MetricField, x, rng: np.random.Generator):
    """Random unit vertical pair and unit horizontal pair at ``x``."""
    G = m.g(x)
    n = m.n
    out = []
    for want in ("V", "V", "H", "H"):
        v = rng.standard_normal(n)
        vv, hh = split(m, x, v)
        w = vv if want == "V" else hh
        out.append(w / np.sqrt(w @ G @ w))
    return out


def curvature_difference_check(m: MetricField, p, case: str, rng=None, draws: int = 3) -> float:
    """Max residual of one curvature-difference identity over random vectors."""
    rng = np.random.default_rng(0) if rng is None else rng
    x = _coords(p)
    terms = DifferenceTerms(m, x)
    worst = 0.0
    for _ in range(draws):
        V, W, X, Y = random_split_vectors(m, x, rng)
        if case == "VV":
            lhs, rhs = terms.lhs(V, W), terms.rhs_VV(V, W)
        elif case == "XY":
            lhs, rhs = terms.lhs(X, Y), terms.rhs_XY(X, Y, vertical_bracket(m, x, X, Y))
        elif case == "XV":
            lhs, rhs = terms.lhs(X, V), terms.rhs_XV(X, V)
        else:
            raise ValueError(f"unknown case {case!r}")
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def theta_operator(m: MetricField, p, X, Vf, tol: float = 1e-8) -> np.ndarray:
    """``θ_X V = ∇̊_X V - T_V X`` for horizontal ``X`` and a vertical field."""
    x = _coords(p)
    X = _vec(X)
    vx, _ = split(m, x, X)
    if np.linalg.norm(vx) > tol * max(1.0, np.linalg.norm(X)):
        raise ValueError("theta_operator needs a horizontal X")
    geo = LocalGeometry(m, x, order=1)
    Vj = contract("ij,j->i", geo.P, _as_field(Vf).jet(x, 1))  # vertical part of the extension
    TV = np.einsum("ikj,k,j->i", geo.T.value, Vj.value, X)
    return _adapted_jet(geo, X, Vj) - TV


def theta_bracket(m: MetricField, p, X, Vf) -> np.ndarray:
    """``V[X̃, V]`` with ``X̃`` the horizontal projection of the constant field."""
    x = _coords(p)
    geo = LocalGeometry(m, x, order=1)
    Xj = contract("ij,j->i", geo.Q, VectorField.constant(_vec(X)).jet(x, 1))
    Vj = contract("ij,j->i", geo.P, _as_field(Vf).jet(x, 1))
    br = np.einsum("...ik,...k->...i", Vj.grad().value, Xj.value) - np.einsum(
        "...ik,...k->...i", Xj.grad().value, Vj.value
    )
    return np.einsum("...ij,...j->...i", geo.P.value, br)


def normal_connection_derivative(m: MetricField, p, V, Xf, tol: float = 1e-8) -> np.ndarray:
    """Horizontal representative of ``∇^F_V X̄ = overline(∇̊_V X - A_X V)``."""
    x = _coords(p)
    V = _vec(V)
    _, hv = split(m, x, V)
    if np.linalg.norm(hv) > tol * max(1.0, np.linalg.norm(V)):
        raise ValueError("normal_connection_derivative needs a vertical V")
    geo = LocalGeometry(m, x, order=1)
    Xj = contract("ij,j->i", geo.Q, _as_field(Xf).jet(x, 1))  # horizontal part of the extension
    AX = np.einsum("ikj,k,j->i", geo.A.value, Xj.value, V)
    val = _adapted_jet(geo, V, Xj) - AX
    return val - geo.P.value @ val


TENSOR_TYPES = {"R": "uddd", "T": "udd", "A": "udd"}


def covariant_norms(m: MetricField, x, tensor: str, m_max: int) -> np.ndarray:
    """``|∇^k S|`` for ``k = 0..m_max`` at points ``x`` (batched).

    Returns an array of shape ``(m_max + 1, *batch)``.
    """
    types = TENSOR_TYPES[tensor]
    base = 2 if tensor == "R" else 1
    geo = LocalGeometry(m, x, order=base + m_max)
    S = getattr(geo, tensor)
    G = geo.gamma
    g, ginv = geo.g.value, geo.ginv.value
    out = []
    for k in range(m_max + 1):
        out.append(tensor_norm(S.value, types, g, ginv))
        if k < m_max:
            S = covariant(S, types, G)
            types = types + "d"
    return np.array(out)


def covariant_norm(m: MetricField, p, tensor: str, order: int, max_order: int = 4) -> float:
    if order > max_order:
        raise OrderError(f"covariant order {order} exceeds cap {max_order}")
    return float(covariant_norms(m, _coords(p), tensor, order)[order])


def adapted_frame(m: MetricField, x) -> np.ndarray:
    """Orthonormal frame adapted to the splitting, as columns.

    The first ``n'`` columns are Gram-Schmidt of the horizontal parts of the
    transverse coordinate vectors, the remaining ones Gram-Schmidt of the
    leafwise coordinate vectors (which are vertical in a foliated chart).
    """
    x = np.asarray(x, dtype=float)
    G = m.g(x)
    P = vertical_projector(G, m.spec)
    n, nt = m.n, m.spec.n_transverse
    Q = np.eye(n) - P
    out = np.empty(G.shape)
    for cols, B in ((slice(0, nt), Q[..., :, :nt]), (slice(nt, n), np.broadcast_to(np.eye(n)[:, nt:], G.shape[:-2] + (n, n - nt)))):
        gram = np.swapaxes(B, -1, -2) @ G @ B
        L = np.linalg.cholesky(gram)
        # B L^{-T}: same span, orthonormal, triangular like Gram-Schmidt
        out[..., :, cols] = np.swapaxes(np.linalg.solve(L, np.swapaxes(B, -1, -2)), -1, -2)
    return out


def frame_components(m: MetricField, x, frame: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Components of ``v`` in an orthonormal ``frame`` (columns)."""
    G = m.g(x)
    return np.einsum("...ai,...ab,...b->...i", frame, G, v)
