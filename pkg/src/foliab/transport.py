"""Geodesics, parallel transport and the adapted exponential map.

All integrators are classical fixed-step RK4, vectorised over a batch of
trajectories. A trajectory whose state (or an RK stage) leaves the chart box
is frozen at its last valid node and flagged through ``exit_index``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .connections import connection_jets, connection_values
from .core import DomainError, GeometryError, MetricField
from .fixtures import Fixture


class BoundaryExit(DomainError):
    """A trajectory left the chart domain before the requested time."""


class UnsupportedFixture(GeometryError):
    pass


# generic batched RK4 ---------------------------------------------------------
def rk4(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_end: float,
    step: float,
    inside: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    t0: float = 0.0,
):
    """Integrate ``y' = f(t, y)`` for a batch ``y0`` of shape ``(B, D)``.

    Returns ``(times, Y, exit_index)`` with ``Y`` of shape ``(N+1, B, D)``;
    ``exit_index[b]`` is the last valid node of a trajectory that left the
    region accepted by ``inside`` (``-1`` if it never did).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    y0 = np.asarray(y0, dtype=float)
    span = t_end - t0
    N = max(1, int(np.ceil(abs(span) / step - 1e-9))) if span != 0 else 0
    h = span / N if N else 0.0
    times = t0 + h * np.arange(N + 1)
    Y = np.empty((N + 1,) + y0.shape)
    Y[0] = y0
    exit_index = np.full(y0.shape[0], -1, dtype=int)
    alive = np.ones(y0.shape[0], bool) if inside is None else inside(y0).copy()
    exit_index[~alive] = 0
    for s in range(N):
        Y[s + 1] = Y[s]
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            continue
        y = Y[s, idx]
        t = times[s]
        ok = np.ones(idx.size, bool)

        def guard(arg):
            if inside is not None:
                bad = ~inside(arg)
                if bad.any():
                    ok[bad] = False
                    arg = np.where(bad[:, None], y, arg)
            return arg

        k1 = f(t, y)
        k2 = f(t + h / 2, guard(y + h / 2 * k1))
        k3 = f(t + h / 2, guard(y + h / 2 * k2))
        k4 = f(t + h, guard(y + h * k3))
        ynew = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if inside is not None:
            ok &= inside(ynew)
        good = idx[ok]
        Y[s + 1, good] = ynew[ok]
        dead = idx[~ok]
        alive[dead] = False
        exit_index[dead] = s
    # frozen rows already carry their last valid state forward
    return times, Y, exit_index


# solutions -------------------------------------------------------------------
@dataclass(frozen=True)
class CurveSolution:
    """Sampled curve with cubic Hermite interpolation.

    Arrays carry a leading time axis followed by optional batch axes.
    """

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    kind: str
    exit_index: np.ndarray  # -1 where the trajectory reached the end time

    @property
    def partial(self) -> bool:
        return bool(np.any(self.exit_index >= 0))

    @property
    def batch_shape(self):
        return self.points.shape[1:-1]

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def _splines(self):
        x = CubicHermiteSpline(self.times, self.points, self.velocities, axis=0)
        v = CubicHermiteSpline(self.times, self.velocities, self.accelerations, axis=0)
        return x, v

    def __call__(self, t) -> np.ndarray:
        return self._splines()[0](t)

    def velocity(self, t) -> np.ndarray:
        return self._splines()[1](t)


@dataclass(frozen=True)
class TransportSolution:
    curve: CurveSolution
    frames: np.ndarray  # (N+1, *batch, n, k)
    kind: str

    def at(self, t) -> np.ndarray:
        i = int(np.argmin(np.abs(self.curve.times - t)))
        return self.frames[i]


# geodesic right-hand sides -----------------------------------------------------
def _flatten(a: np.ndarray, tail: int):
    a = np.asarray(a, dtype=float)
    batch = a.shape[: a.ndim - tail]
    return a.reshape((-1,) + a.shape[a.ndim - tail:]), batch


def _geodesic_rhs(m: MetricField, kind: str, n: int, k: int):
    def f(t, y):
        x, v = y[:, :n], y[:, n: 2 * n]
        G = connection_values(m, x, kind)
        Gv = (G.reshape(-1, n * n, n) @ v[:, :, None]).reshape(-1, n, n)  # Γ^i_jk v^k
        acc = -(Gv @ v[:, :, None])[:, :, 0]
        parts = [v, acc]
        if k:
            E = y[:, 2 * n:].reshape(-1, n, k)
            parts.append(-(Gv @ E).reshape(len(y), -1))
        return np.concatenate(parts, axis=1)

    return f


def _inside(m: MetricField, n: int):
    return lambda y: m.contains(y[:, :n])


def geodesic_flow(m: MetricField, kind: str, p, v, t_end: float = 1.0, step: float = 1e-3, frame=None):
    """Batched geodesic (and optional transported frame) integration.

    ``p``, ``v`` have shape ``(*batch, n)``; ``frame`` (optional) has shape
    ``(*batch, n, k)``. Returns ``(CurveSolution, TransportSolution | None)``.
    """
    n = m.n
    p = np.asarray(p, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), np.broadcast_shapes(p.shape, np.shape(v)))
    p = np.broadcast_to(p, v.shape)
    pf, batch = _flatten(p, 1)
    vf, _ = _flatten(v, 1)
    k = 0
    parts = [pf, vf]
    if frame is not None:
        frame = np.broadcast_to(np.asarray(frame, dtype=float), batch + np.shape(frame)[-2:])
        k = frame.shape[-1]
        parts.append(frame.reshape(len(pf), -1))
    y0 = np.concatenate(parts, axis=1)
    times, Y, exit_index = rk4(_geodesic_rhs(m, kind, n, k), y0, t_end, step, _inside(m, n))
    X = Y[:, :, :n]
    V = Y[:, :, n: 2 * n]
    G = connection_values(m, X.reshape(-1, n), kind).reshape(X.shape[:2] + (n, n, n))
    Acc = -np.einsum("tbijk,tbj,tbk->tbi", G, V, V)
    T = len(times)
    curve = CurveSolution(
        times,
        X.reshape((T,) + batch + (n,)),
        V.reshape((T,) + batch + (n,)),
        Acc.reshape((T,) + batch + (n,)),
        kind,
        exit_index.reshape(batch),
    )
    transport = None
    if k:
        transport = TransportSolution(curve, Y[:, :, 2 * n:].reshape((T,) + batch + (n, k)), kind)
    return curve, transport


def _tangent_rhs(m: MetricField, kind: str, n: int, k: int, d: int):
    sizes = [n, n, n * k, n * d, n * d, n * k * d]
    cuts = np.cumsum(sizes)[:-1]

    def f(t, y):
        B = len(y)
        x, v, E, dx, dv, dE = np.split(y, cuts, axis=1)
        E = E.reshape(B, n, k)
        dx, dv = dx.reshape(B, n, d), dv.reshape(B, n, d)
        dE = dE.reshape(B, n, k, d)
        G, dG = connection_jets(m, x, kind)
        dGx = np.einsum("bijkl,blm->bijkm", dG, dx)
        acc = -np.einsum("bijk,bj,bk->bi", G, v, v)
        Edot = -np.einsum("bijk,bjc,bk->bic", G, E, v)
        dacc = -(
            np.einsum("bijkm,bj,bk->bim", dGx, v, v)
            + np.einsum("bijk,bjm,bk->bim", G, dv, v)
            + np.einsum("bijk,bj,bkm->bim", G, v, dv)
        )
        dEdot = -(
            np.einsum("bijkm,bjc,bk->bicm", dGx, E, v)
            + np.einsum("bijk,bjcm,bk->bicm", G, dE, v)
            + np.einsum("bijk,bjc,bkm->bicm", G, E, dv)
        )
        return np.concatenate(
            [v, acc, Edot.reshape(B, -1), dv.reshape(B, -1), dacc.reshape(B, -1), dEdot.reshape(B, -1)], axis=1
        )

    return f, cuts


def geodesic_flow_tangent(m: MetricField, kind: str, p, v, frame, dp, dv, dframe, t_end: float = 1.0, step: float = 1e-3):
    """Geodesic flow together with its linearisation.

    Besides the state ``(p, v, frame)`` (shapes ``(B, n)``, ``(B, n)``,
    ``(B, n, k)``) this propagates ``d`` tangent directions ``dp``, ``dv``
    (``(B, n, d)``) and ``dframe`` (``(B, n, k, d)``) through the variational
    equations. Only the endpoint is returned:
    ``(p1, v1, frame1, dp1, dv1, dframe1, exit_index)``.
    """
    n = m.n
    p, v, frame = (np.asarray(a, dtype=float) for a in (p, v, frame))
    dp, dv, dframe = (np.asarray(a, dtype=float) for a in (dp, dv, dframe))
    B, k, d = len(p), frame.shape[-1], dp.shape[-1]
    f, cuts = _tangent_rhs(m, kind, n, k, d)
    y0 = np.concatenate([a.reshape(B, -1) for a in (p, v, frame, dp, dv, dframe)], axis=1)
    _, Y, exit_index = rk4(f, y0, t_end, step, _inside(m, n))
    x1, v1, E1, dx1, dv1, dE1 = np.split(Y[-1], cuts, axis=1)
    return (
        x1, v1, E1.reshape(B, n, k),
        dx1.reshape(B, n, d), dv1.reshape(B, n, d), dE1.reshape(B, n, k, d),
        exit_index,
    )


def integrate_geodesic(m: MetricField, kind: str, p, v, t_end: float = 1.0, step: float = 1e-3) -> CurveSolution:
    """Geodesic of the Levi-Civita or adapted connection from ``p`` with velocity ``v``.

    A trajectory that leaves the chart is returned partial (see
    ``CurveSolution.exit_index``) rather than raising.
    """
    if kind not in ("levi_civita", "adapted", "breve"):
        raise ValueError(f"unknown connection kind {kind!r}")
    return geodesic_flow(m, kind, p, v, t_end, step)[0]


def parallel_transport(m: MetricField, kind: str, curve: CurveSolution, v0) -> TransportSolution:
    """Transport ``v0`` (shape ``(*batch, n)`` or ``(*batch, n, k)``) along ``curve``."""
    n = m.n
    v0 = np.asarray(v0, dtype=float)
    single = v0.shape == curve.batch_shape + (n,)
    E0 = v0[..., None] if single else v0
    k = E0.shape[-1]
    xs, vs = curve._splines()
    batch = curve.batch_shape
    B = int(np.prod(batch)) if batch else 1

    def f(t, y):
        x = xs(t).reshape(B, n)
        vel = vs(t).reshape(B, n)
        G = connection_values(m, x, kind)
        Gv = (G.reshape(B, n * n, n) @ vel[:, :, None]).reshape(B, n, n)
        return -(Gv @ y.reshape(B, n, k)).reshape(B, -1)

    t0, t1 = curve.times[0], curve.times[-1]
    times, Y, _ = rk4(f, E0.reshape(B, -1), t1, abs(curve.step), None, t0=t0)
    frames = Y.reshape((len(times),) + batch + (n, k))
    if single:
        frames = frames[..., 0]
    return TransportSolution(curve, frames, kind)


def polynomial_curve(coeffs, t_end: float = 1.0, step: float = 1e-3, kind: str = "path") -> CurveSolution:
    """Curve ``x(t) = sum_r coeffs[r] t^r`` sampled on a fixed grid."""
    c = np.asarray(coeffs, dtype=float)
    N = max(1, int(np.ceil(t_end / step - 1e-9)))
    t = np.linspace(0.0, t_end, N + 1)
    pw = np.stack([t**r for r in range(len(c))], axis=1)
    dpw = np.stack([r * t ** max(r - 1, 0) for r in range(len(c))], axis=1)
    ddpw = np.stack([r * (r - 1) * t ** max(r - 2, 0) for r in range(len(c))], axis=1)
    ex = np.full(c.shape[1:-1], -1, dtype=int)
    return CurveSolution(
        t,
        np.tensordot(pw, c, axes=(1, 0)),
        np.tensordot(dpw, c, axes=(1, 0)),
        np.tensordot(ddpw, c, axes=(1, 0)),
        kind,
        ex,
    )


# invariants ---------------------------------------------------------------------
def geodesic_residual(m: MetricField, curve: CurveSolution) -> float:
    """Max of ``|x'' + Γ(x', x')|`` at interior nodes, with ``x''`` from a 5-point stencil."""
    v, h = curve.velocities, curve.step
    if len(curve.times) < 5:
        raise ValueError("need at least five nodes")
    dv = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    x = curve.points[2:-2]
    n = m.n
    G = connection_values(m, x.reshape(-1, n), curve.kind).reshape(x.shape[:-1] + (n, n, n))
    vm = v[2:-2]
    res = dv + np.einsum("...ijk,...j,...k->...i", G, vm, vm)
    valid = _valid_nodes(curve)[4:]  # whole stencil before any exit
    return float(np.max(np.where(valid[..., None], np.abs(res), 0.0)))


def _valid_nodes(curve: CurveSolution) -> np.ndarray:
    T = len(curve.times)
    idx = np.arange(T).reshape((T,) + (1,) * len(curve.batch_shape))
    ex = curve.exit_index
    return np.where(ex < 0, True, idx <= ex)


def speeds(m: MetricField, curve: CurveSolution) -> np.ndarray:
    G = m.g(curve.points)
    return np.sqrt(np.einsum("...i,...ij,...j->...", curve.velocities, G, curve.velocities))


def speed_drift(m: MetricField, curve: CurveSolution) -> float:
    s = speeds(m, curve)
    valid = _valid_nodes(curve)
    hi = np.max(np.where(valid, s, -np.inf), axis=0)
    lo = np.min(np.where(valid, s, np.inf), axis=0)
    return float(np.max(hi - lo))


def adapted_exp(m: MetricField, p, v, step: float = 1e-3) -> np.ndarray:
    """``exp̊_p(v)``: endpoint at ``t = 1`` of the adapted geodesic."""
    curve = integrate_geodesic(m, "adapted", p, v, 1.0, step)
    if curve.partial:
        raise BoundaryExit("adapted geodesic left the chart domain")
    return curve.endpoint


def _require_projection(fx: Fixture):
    if not fx.has_projection:
        raise UnsupportedFixture(f"{fx.name} declares no distinguished submersion")


def submersion_commutation_residual(fx: Fixture, p, v, step: float = 1e-3) -> float:
    """``|π(exp̊_p v) - exp̌_{π(p)}(π_* v)|`` in base chart coordinates."""
    _require_projection(fx)
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    top = fx.project(adapted_exp(fx.metric, p, v, step))
    base_curve = integrate_geodesic(fx.base_metric, "levi_civita", fx.project(p), fx.project_vector(p, v), 1.0, step)
    if base_curve.partial:
        raise BoundaryExit("base geodesic left the base chart")
    return float(np.max(np.abs(top - base_curve.endpoint)))


def plaque_residual(fx: Fixture, p, E, F, step: float = 1e-3) -> float:
    _require_projection(fx)
    a = fx.project(adapted_exp(fx.metric, p, E, step))
    b = fx.project(adapted_exp(fx.metric, p, F, step))
    return float(np.max(np.abs(a - b)))


def plaque_criterion_check(fx: Fixture, p, E, F, tol: float = 1e-6, step: float = 1e-3) -> bool:
    """Whether ``exp̊ E`` and ``exp̊ F`` land on the same plaque."""
    return plaque_residual(fx, p, E, F, step) <= tol


# leaves ---------------------------------------------------------------------------
class _LeafEntry:
    """Metric coefficient with the transverse coordinates frozen."""

    def __init__(self, expr, fixed: np.ndarray):
        self.expr = expr
        self.fixed = [float(c) for c in fixed]

    def __call__(self, ys):
        return self.expr(self.fixed + list(ys))


def leaf_metric(m: MetricField, x_transverse) -> MetricField:
    """Induced metric on the plaque ``{x' = x_transverse}`` in leafwise coordinates."""
    if m.entries is None:
        raise UnsupportedFixture("leaf restriction needs an expression metric")
    nt = m.spec.n_transverse
    lw = range(nt, m.n)
    entries = tuple(tuple(_LeafEntry(m.entries[i][j], x_transverse) for j in lw) for i in lw)
    return MetricField(None, m.domain[nt:], entries, diff=m.diff, name=m.name + ":leaf")


def leaf_exp_residual(m: MetricField, p, v, step: float = 1e-3) -> float:
    """Distance between ``exp̊_p v`` (vertical ``v``) and the leaf's own exponential."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    nt = m.spec.n_transverse
    end = adapted_exp(m, p, v, step)
    leaf = leaf_metric(m, p[:nt])
    lc = integrate_geodesic(leaf, "levi_civita", p[nt:], v[nt:], 1.0, step)
    if lc.partial:
        raise BoundaryExit("leaf geodesic left the chart")
    return float(max(np.max(np.abs(end[:nt] - p[:nt])), np.max(np.abs(end[nt:] - lc.endpoint))))
