"""Adapted Jacobi fields along leafwise geodesics.

With ``Y = ∇̊_γ' X - T̊(γ', X)`` the defining equations become the first-order
system ``∇̊_γ' X = Y + T̊(γ', X)``, ``∇̊_γ' Y = R̊(γ', X)γ'``. In a ∇̊-parallel
orthonormal frame along γ, covariant derivatives are plain derivatives of
components, so the system is linear with coefficient matrices that are
evaluated once at the nodes of γ and interpolated by cubic splines.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .connections import LocalGeometry, adapted_frame, split, tensor_norm
from .core import GeometryError, MetricField
from .transport import BoundaryExit, CurveSolution, geodesic_flow, parallel_transport, rk4


class NotLeafwise(GeometryError):
    pass


@dataclass(frozen=True)
class JacobiSolution:
    """Adapted Jacobi field ``X`` and companion ``Y`` sampled at the nodes of ``gamma``.

    ``X`` and ``Y`` hold chart components with shape ``(N+1, *batch, n)``;
    ``x`` and ``y`` hold the components in the parallel frame ``frame``
    (shape ``(N+1, n, n)``, columns are frame vectors).
    """

    metric: MetricField
    gamma: CurveSolution
    frame: np.ndarray
    x: np.ndarray
    y: np.ndarray
    C_const: float

    @property
    def times(self) -> np.ndarray:
        return self.gamma.times

    def _chart(self, comps):
        F = self.frame.reshape(self.frame.shape[:1] + (1,) * (comps.ndim - 2) + self.frame.shape[1:])
        return np.einsum("t...ij,t...j->t...i", F, comps)

    @property
    def X(self) -> np.ndarray:
        return self._chart(self.x)

    @property
    def Y(self) -> np.ndarray:
        return self._chart(self.y)

    @property
    def n_transverse(self) -> int:
        return self.metric.spec.n_transverse


def leafwise_geodesic(m: MetricField, p, u, t_end: float = 1.0, step: float = 1e-3, tol: float = 1e-8) -> CurveSolution:
    """Adapted geodesic with vertical initial velocity ``u`` (a leaf geodesic)."""
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    _, hu = split(m, p, u)
    if np.linalg.norm(hu) > tol * max(1.0, np.linalg.norm(u)):
        raise NotLeafwise("initial velocity is not vertical")
    curve = geodesic_flow(m, "adapted", p, u, t_end, step)[0]
    if curve.partial:
        raise BoundaryExit("leafwise geodesic left the chart domain")
    return curve


@dataclass(frozen=True)
class _Coefficients:
    frame: np.ndarray  # (N+1, n, n)
    Tm: np.ndarray  # (N+1, n, n): θ^i T̊(γ', E_j)
    Rm: np.ndarray  # (N+1, n, n): θ^i R̊(γ', E_j)γ'
    T_norm: np.ndarray
    R_norm: np.ndarray
    speed: np.ndarray


def _coefficients(m: MetricField, gamma: CurveSolution, step: float) -> _Coefficients:
    x = gamma.points
    v = gamma.velocities
    E0 = adapted_frame(m, x[0])
    frame = parallel_transport(m, "adapted", gamma, E0).frames
    geo = LocalGeometry(m, x, order=2)
    tor = geo.torsion.value
    R = geo.R_adapted.value
    G = geo.g.value
    ginv = np.linalg.inv(G)
    coframe = np.einsum("tai,tab->tib", frame, G)  # rows θ^i
    TE = np.einsum("takb,tk,tbj->taj", tor, v, frame)
    RE = np.einsum("tabkl,tb,tk,tlj->taj", R, v, v, frame)
    speed = np.sqrt(np.einsum("ti,tij,tj->t", v, G, v))
    return _Coefficients(
        frame,
        np.einsum("tia,taj->tij", coframe, TE),
        np.einsum("tia,taj->tij", coframe, RE),
        tensor_norm(tor, "udd", G, ginv),
        tensor_norm(R, "uddd", G, ginv),
        speed,
    )


def growth_constant(coef: _Coefficients) -> float:
    s = coef.speed
    c = 2 * coef.T_norm**2 * s**2 + 1 + coef.R_norm**2 * s**4
    return float(max(3.0, np.max(c)))


def solve_adapted_jacobi(
    m: MetricField,
    gamma: CurveSolution,
    X0,
    Y0,
    tol: float = 1e-8,
    leaf_tol: float = 1e-6,
) -> JacobiSolution:
    """Unique adapted Jacobi field with ``X(a) = X0`` and ``Y(a) = Y0``.

    ``X0``, ``Y0`` may carry leading batch axes; all solves share ``gamma``.
    A ``Y0`` with a horizontal part above ``tol`` is projected (with a
    warning) onto the vertical space.
    """
    if gamma.partial:
        raise BoundaryExit("gamma is a partial solution")
    if gamma.batch_shape:
        raise ValueError("gamma must be a single curve")
    _, hv = split(m, gamma.points, gamma.velocities)
    if np.max(np.abs(hv)) > leaf_tol:
        raise NotLeafwise("gamma is not a leafwise geodesic")
    X0 = np.asarray(X0, dtype=float)
    Y0 = np.asarray(Y0, dtype=float)
    X0, Y0 = np.broadcast_arrays(X0, Y0)
    p = gamma.points[0]
    Yv, Yh = split(m, p, Y0)
    if np.max(np.abs(Yh), initial=0.0) > tol:
        warnings.warn("Y0 had a horizontal part; projected onto the vertical space", stacklevel=2)
    Y0 = Yv
    coef = _coefficients(m, gamma, gamma.step)
    n = m.n
    G0 = m.g(p)
    th0 = np.einsum("ai,ab->ib", coef.frame[0], G0)
    batch = X0.shape[:-1]
    z0 = np.concatenate([X0.reshape(-1, n) @ th0.T, Y0.reshape(-1, n) @ th0.T], axis=1)

    t = gamma.times
    Ts = CubicSpline(t, coef.Tm, axis=0)
    Rs = CubicSpline(t, coef.Rm, axis=0)

    def f(tt, z):
        x, y = z[:, :n], z[:, n:]
        return np.concatenate([y + x @ Ts(tt).T, x @ Rs(tt).T], axis=1)

    times, Z, _ = rk4(f, z0, t[-1], abs(gamma.step), None, t0=t[0])
    Z = Z.reshape((len(times),) + batch + (2 * n,))
    return JacobiSolution(m, gamma, coef.frame, Z[..., :n], Z[..., n:], growth_constant(coef))


def growth_bound_margin(sol: JacobiSolution) -> np.ndarray:
    """``e^{C(b-a)}(|X(a)|²+|Y(a)|²) - (|X(b)|²+|Y(b)|²)``."""
    L = sol.times[-1] - sol.times[0]
    e0 = np.sum(sol.x[0] ** 2, -1) + np.sum(sol.y[0] ** 2, -1)
    e1 = np.sum(sol.x[-1] ** 2, -1) + np.sum(sol.y[-1] ** 2, -1)
    return np.exp(sol.C_const * L) * e0 - e1


def _velocity_components(sol: JacobiSolution) -> np.ndarray:
    G = sol.metric.g(sol.gamma.points)
    return np.einsum("tai,tab,tb->ti", sol.frame, G, sol.gamma.velocities)


def _bcast(a: np.ndarray, like: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[:1] + (1,) * (like.ndim - a.ndim) + a.shape[1:])


def y_inner_gamma(sol: JacobiSolution) -> np.ndarray:
    """``(Y, γ')`` at every node."""
    u = _bcast(_velocity_components(sol), sol.y)
    return np.sum(sol.y * u, -1)


def normalize_jacobi(sol: JacobiSolution, drift_tol: float = 1e-6) -> JacobiSolution:
    """Starred solution ``X* = X - c(t-a)γ'``, ``Y* = Y - cγ'``, orthogonal to γ'."""
    u = _velocity_components(sol)
    s2 = np.sum(u[0] ** 2)
    if s2 == 0:
        raise GeometryError("zero-speed geodesic")
    ip = y_inner_gamma(sol)
    if np.max(np.abs(ip - ip[0])) > drift_tol:
        raise GeometryError("(Y, γ') is not constant along the solution")
    c = ip[0] / s2
    ub = _bcast(u, sol.y)
    tt = (sol.times - sol.times[0]).reshape((-1,) + (1,) * (sol.y.ndim - 1))
    cb = np.expand_dims(c, -1)
    return replace(sol, x=sol.x - cb * tt * ub, y=sol.y - cb * ub)


# invariant checks ----------------------------------------------------------------
def vertical_residual(sol: JacobiSolution) -> float:
    """Max size of the horizontal part of ``Y`` (its first ``n'`` frame components)."""
    return float(np.max(np.abs(sol.y[..., : sol.n_transverse])))


def horizontal_norm_drift(sol: JacobiSolution) -> float:
    hx = np.linalg.norm(sol.x[..., : sol.n_transverse], axis=-1)
    return float(np.max(hx.max(0) - hx.min(0)))


def normal_connection_residual(sol: JacobiSolution) -> float:
    """Max of ``|H(∇̊_γ' HX) - A_{HX}γ'|`` along γ (vanishes for Jacobi fields).

    The derivative of the frame components is taken with a 5-point stencil,
    so this is independent of the ODE right-hand side.
    """
    nt = sol.n_transverse
    h = sol.gamma.step
    x = sol.x
    dx = (x[:-4] - 8 * x[1:-3] + 8 * x[3:-1] - x[4:]) / (12 * h)
    m = sol.metric
    pts = sol.gamma.points[2:-2]
    geo = LocalGeometry(m, pts, order=1)
    A = geo.A.value
    G = geo.g.value
    F = sol.frame[2:-2]
    HX = np.einsum("taj,t...j->t...a", F[:, :, :nt], x[2:-2, ..., :nt])
    AX = np.einsum("takb,t...k,tb->t...a", A, HX, sol.gamma.velocities[2:-2])
    thA = np.einsum("tai,tab,t...b->t...i", F, G, AX)
    return float(np.max(np.abs(dx[..., :nt] - thA[..., :nt])))


def endpoint_rank(m: MetricField, gamma: CurveSolution, threshold: float = 1e-6) -> int:
    """Numerical rank of ``(X0, Y0) -> (X(b), Y(b))`` over a basis of ``T_pM ⊕ T_pF``."""
    n, nt = m.n, m.spec.n_transverse
    E = adapted_frame(m, gamma.points[0])
    X0 = np.concatenate([E.T, np.zeros((n - nt, n))])
    Y0 = np.concatenate([np.zeros((n, n)), E[:, nt:].T])
    sol = solve_adapted_jacobi(m, gamma, X0, Y0)
    M = np.concatenate([sol.x[-1], sol.y[-1]], axis=1)
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > threshold * s[0]))


# variation fields -------------------------------------------------------------------
def _variation_endpoints(m, gamma, X0, Y0, s, xi_steps):
    p = gamma.points[0]
    u = gamma.velocities[0]
    if s == 0:
        return gamma.points
    _, tr = geodesic_flow(m, "adapted", p, X0, s, abs(s) / xi_steps, frame=np.stack([u, Y0], axis=-1))
    if tr.curve.partial:
        raise BoundaryExit("variation base curve left the chart")
    q = tr.curve.endpoint
    V, W = tr.frames[-1][:, 0], tr.frames[-1][:, 1]
    c = geodesic_flow(m, "adapted", q, V + s * W, gamma.times[-1], gamma.step)[0]
    if c.partial:
        raise BoundaryExit("variation geodesic left the chart")
    return c.points


def variation_field(m: MetricField, gamma: CurveSolution, X0, Y0, h: float = 1e-2, xi_steps: int = 64) -> np.ndarray:
    """Central difference in ``s`` of the leafwise geodesic variation
    ``f(t, s) = exp̊_{ξ(s)}((t - a)(V(s) + s W(s)))``.
    """
    if not 0 < h <= 1e-2:
        raise ValueError("h must lie in (0, 1e-2]")
    X0 = np.asarray(X0, dtype=float)
    Y0 = np.asarray(Y0, dtype=float)
    fp = _variation_endpoints(m, gamma, X0, Y0, h, xi_steps)
    fm = _variation_endpoints(m, gamma, X0, Y0, -h, xi_steps)
    return (fp - fm) / (2 * h)


def richardson_check(m: MetricField, gamma: CurveSolution, X0, Y0, h: float = 2e-2):
    """Errors of the variation field at ``h`` and ``h/2`` against the ODE solution and their ratio.

    ``h`` may exceed the 1e-2 cap of :func:`variation_field` because the
    coarse level only serves the refinement ratio.
    """
    sol = solve_adapted_jacobi(m, gamma, X0, Y0)
    X = sol.X
    errs = []
    for hh in (h, h / 2):
        vf = (_variation_endpoints(m, gamma, X0, Y0, hh, 64) - _variation_endpoints(m, gamma, X0, Y0, -hh, 64)) / (2 * hh)
        errs.append(float(np.max(np.abs(vf - X))))
    return errs[0], errs[1], errs[0] / errs[1]
