"""Normal foliation charts and their parallel orthonormal frames.

The chart at ``p`` sends ``(x', x'')`` to the point reached by first following
the adapted geodesic from ``p`` with horizontal velocity ``x'^i e_i`` and then
the leafwise geodesic with velocity ``x''^a`` times the transported vertical
basis. Transporting the whole basis ``e`` along both legs produces the frame
``s_1..s_n``; ``θ^i = a^i_j dx^j`` is its dual coframe in chart coordinates.

The coordinate Jacobian and the frame derivatives are exact up to the
integrator: both legs are integrated together with their variational
equations. Second derivatives of the forward map are central differences of
that Jacobian. Radial identities are evaluated along rays with 5-point
stencils in the ray parameter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .connections import LocalGeometry, adapted_frame, connection_values, covariant
from .core import GeometryError, MetricField
from .fixtures import Fixture
from .jacobi import leafwise_geodesic, solve_adapted_jacobi
from .transport import BoundaryExit, geodesic_flow, geodesic_flow_tangent


class ChartTooLarge(GeometryError):
    pass


class InverseFailed(GeometryError):
    pass


@dataclass(frozen=True)
class ChartConfig:
    step: float = 1e-2  # RK4 step of both legs (unit parameter interval)
    fd_step: float = 2e-4  # differences of the exact Jacobian (Hessian)
    outer_step: float = 1e-3  # derivatives of stencil-derived quantities
    ray_step: float = 1e-2  # radial derivatives along rays
    quad_tol: float = 1e-8
    max_halvings: int = 3


@dataclass
class ChartGeometry:
    """Chart-coordinate data at a batch of points (leading axes ``batch``).

    Naming: ``*_frame`` arrays carry an upper frame index (``θ^i`` applied),
    ``*_coord`` arrays are plain coordinate components. Index layout follows
    the package conventions, e.g. ``gamma_frame[i, j, k] = θ^i(∇̊_{∂_k} s_j)``
    and ``curvature_frame[i, j, k, l] = θ^i(R̊(∂_k, ∂_l) s_j)``.
    """

    x: np.ndarray
    points: np.ndarray
    S: np.ndarray
    J: np.ndarray
    hessian: np.ndarray
    dS: np.ndarray
    G: np.ndarray
    gamma_ambient: np.ndarray
    torsion_ambient: np.ndarray
    curvature_ambient: np.ndarray
    dtorsion_ambient: np.ndarray

    @cached_property
    def theta(self) -> np.ndarray:
        return np.einsum("...ai,...ab->...ib", self.S, self.G)

    @cached_property
    def Jinv(self) -> np.ndarray:
        return np.linalg.inv(self.J)

    @cached_property
    def a(self) -> np.ndarray:
        return self.theta @ self.J

    @cached_property
    def b(self) -> np.ndarray:
        return np.linalg.inv(self.a)

    @cached_property
    def metric(self) -> np.ndarray:
        return np.swapaxes(self.a, -1, -2) @ self.a

    @cached_property
    def pullback_metric(self) -> np.ndarray:
        return np.swapaxes(self.J, -1, -2) @ self.G @ self.J

    @cached_property
    def gamma_frame(self) -> np.ndarray:
        nab = self.dS + np.einsum("...abc,...bj,...ck->...ajk", self.gamma_ambient, self.S, self.J)
        return np.einsum("...ia,...ajk->...ijk", self.theta, nab)

    @cached_property
    def gamma_coord(self) -> np.ndarray:
        nab = self.hessian + np.einsum("...abc,...bj,...ck->...ajk", self.gamma_ambient, self.J, self.J)
        return np.einsum("...ia,...ajk->...ijk", self.Jinv, nab)

    def _lower(self, up: np.ndarray, T: np.ndarray, spec: str) -> np.ndarray:
        return np.einsum(spec, up, T, *([self.J] * (spec.count(",") - 1)))

    @cached_property
    def torsion_frame(self) -> np.ndarray:
        return self._lower(self.theta, self.torsion_ambient, "...ia,...acd,...ck,...dj->...ikj")

    @cached_property
    def torsion_coord(self) -> np.ndarray:
        return self._lower(self.Jinv, self.torsion_ambient, "...ia,...acd,...ck,...dj->...ikj")

    @cached_property
    def curvature_frame(self) -> np.ndarray:
        return np.einsum(
            "...ia,...abcd,...bj,...ck,...dl->...ijkl", self.theta, self.curvature_ambient, self.S, self.J, self.J
        )

    @cached_property
    def curvature_coord(self) -> np.ndarray:
        return self._lower(self.Jinv, self.curvature_ambient, "...ia,...abcd,...bj,...ck,...dl->...ijkl")

    @cached_property
    def torsion_frame_covariant(self) -> np.ndarray:
        """``(T̊^i)_{kl;m}``: derivative of the scalar forms ``θ^i∘T̊``."""
        full = self._lower(self.theta, self.dtorsion_ambient, "...ia,...acde,...ck,...dl,...em->...iklm")
        return full - np.einsum("...jkl,...ijm->...iklm", self.torsion_frame, self.gamma_frame)

    @cached_property
    def F(self) -> np.ndarray:
        return assemble_F(self.gamma_coord, self.torsion_frame, self.torsion_coord, self.torsion_frame_covariant)


def assemble_F(gamma_coord, torsion_frame, torsion_coord, Tcov) -> np.ndarray:
    """``F[i, j, k, l]`` from coordinate Christoffels, torsion and ``Tcov[i, k, l, m] = (T̊^i)_{kl;m}``."""
    Gc, Tf, Tc = gamma_coord, torsion_frame, torsion_coord
    return (
        np.einsum("...mkl,...imj->...ijkl", Gc, Tf)
        - np.einsum("...mkj,...iml->...ijkl", Gc, Tf)
        + np.einsum("...ikjl->...ijkl", Tcov)
        - np.einsum("...iklj->...ijkl", Tcov)
        + np.einsum("...mlj,...ikm->...ijkl", Tc, Tf)
    )


class NormalChart:
    """Normal foliation chart centred at ``center`` with radii ``(r_t, r_l)``.

    Forward evaluations are memoised per point until :meth:`freeze`; after
    freezing the memo is read-only and the chart can be queried concurrently.
    """

    def __init__(self, m: MetricField, center, r_t: float, r_l: float, cfg: ChartConfig = ChartConfig()):
        self.metric = m
        self.center = np.asarray(center, dtype=float)
        self.r_t = float(r_t)
        self.r_l = float(r_l)
        self.cfg = cfg
        self.n = m.n
        self.nt = m.spec.n_transverse
        self.basis = adapted_frame(m, self.center)
        self._memo: dict = {}
        self._tmemo: dict = {}
        self._frozen = False

    # forward map ---------------------------------------------------------------
    def _compute(self, X: np.ndarray, allow_exit: bool = False):
        nt = self.nt
        step = self.cfg.step
        v1 = X[:, :nt] @ self.basis[:, :nt].T
        c1, t1 = geodesic_flow(self.metric, "adapted", self.center, v1, 1.0, step, frame=self.basis)
        out1 = c1.exit_index >= 0
        if out1.any() and not allow_exit:
            raise BoundaryExit("horizontal leg left the chart domain")
        q, F1 = c1.endpoint, t1.frames[-1]
        v2 = np.einsum("bij,bj->bi", F1[:, :, nt:], X[:, nt:])
        c2, t2 = geodesic_flow(self.metric, "adapted", q, v2, 1.0, step, frame=F1)
        out = out1 | (c2.exit_index >= 0)
        if out.any() and not allow_exit:
            raise BoundaryExit("leafwise leg left the chart domain")
        P, S = c2.endpoint.copy(), t2.frames[-1].copy()
        P[out] = np.nan
        S[out] = np.nan
        return P, S

    def _compute_tangent(self, X: np.ndarray):
        n, nt, step = self.n, self.nt, self.cfg.step
        B = len(X)
        m, E0 = self.metric, self.basis
        dv1 = np.zeros((B, n, n))
        dv1[:, :, :nt] = E0[:, :nt]
        q, _, F1, dq, _, dF1, ex1 = geodesic_flow_tangent(
            m, "adapted", np.broadcast_to(self.center, (B, n)), X[:, :nt] @ E0[:, :nt].T,
            np.broadcast_to(E0, (B, n, n)), np.zeros((B, n, n)), dv1, np.zeros((B, n, n, n)), 1.0, step,
        )
        if (ex1 >= 0).any():
            raise BoundaryExit("horizontal leg left the chart domain")
        xl = X[:, nt:]
        v2 = np.einsum("bia,ba->bi", F1[:, :, nt:], xl)
        dv2 = np.einsum("biad,ba->bid", dF1[:, :, nt:, :], xl)
        dv2[:, :, nt:] += F1[:, :, nt:]
        P, _, S, J, _, dS, ex2 = geodesic_flow_tangent(m, "adapted", q, v2, F1, dq, dv2, dF1, 1.0, step)
        if (ex2 >= 0).any():
            raise BoundaryExit("leafwise leg left the chart domain")
        return P, S, J, dS

    def evaluate_tangent(self, x):
        """Points, frames, Jacobians ``∂P/∂x`` and frame derivatives ``dS[..., a, j, k] = ∂_k S^a_j``."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        X = x.reshape(-1, self.n)
        keys = [row.tobytes() for row in X]
        todo = {}
        for i, k in enumerate(keys):
            if k not in self._tmemo:
                todo.setdefault(k, i)
        fresh = {}
        if todo:
            rows = list(todo.values())
            out = self._compute_tangent(X[rows])
            fresh = {k: tuple(a[r] for a in out) for r, k in enumerate(todo)}
            if not self._frozen:
                self._tmemo.update(fresh)
        vals = [self._tmemo[k] if k in self._tmemo else fresh[k] for k in keys]
        n = self.n
        shapes = [(n,), (n, n), (n, n), (n, n, n)]
        return tuple(np.array([v[c] for v in vals]).reshape(batch + sh) for c, sh in enumerate(shapes))

    def evaluate(self, x, allow_exit: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Ambient points and frames (columns ``s_i``) at chart points ``x``.

        With ``allow_exit`` rows whose geodesics leave the domain come back as
        NaN instead of raising :class:`BoundaryExit`.
        """
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        X = x.reshape(-1, self.n)
        keys = [row.tobytes() for row in X]
        missing = [i for i, k in enumerate(keys) if k not in self._memo]
        pts = np.empty_like(X)
        frames = np.empty((len(X), self.n, self.n))
        fresh = {}
        if missing:
            # duplicates share one integration
            uniq = {}
            for i in missing:
                uniq.setdefault(keys[i], i)
            rows = list(uniq.values())
            P, S = self._compute(X[rows], allow_exit)
            fresh = {keys[i]: (P[r], S[r]) for r, i in enumerate(rows)}
            if not self._frozen:
                self._memo.update({k: v for k, v in fresh.items() if np.isfinite(v[0]).all()})
        for i, k in enumerate(keys):
            p, s = self._memo[k] if k in self._memo else fresh[k]
            pts[i], frames[i] = p, s
        return pts.reshape(batch + (self.n,)), frames.reshape(batch + (self.n, self.n))

    def forward(self, x) -> np.ndarray:
        return self.evaluate(x)[0]

    def frame(self, x) -> np.ndarray:
        return self.evaluate(x)[1]

    def freeze(self) -> "NormalChart":
        self._frozen = True
        return self

    def clear(self):
        if self._frozen:
            raise RuntimeError("chart is frozen")
        self._memo.clear()
        self._tmemo.clear()

    # derived data ----------------------------------------------------------------
    def geometry(self, x, h: Optional[float] = None) -> ChartGeometry:
        x = np.asarray(x, dtype=float)
        h = self.cfg.fd_step if h is None else h
        n = self.n
        offs = np.concatenate([np.zeros((1, n)), np.eye(n), -np.eye(n)])
        pts, S, Js, dSs = self.evaluate_tangent(x[..., None, :] + h * offs)
        P0, S0, J, dS = pts[..., 0, :], S[..., 0, :, :], Js[..., 0, :, :], dSs[..., 0, :, :, :]
        H = np.moveaxis((Js[..., 1: n + 1, :, :] - Js[..., n + 1:, :, :]) / (2 * h), -3, -1)
        H = 0.5 * (H + np.swapaxes(H, -1, -2))
        geo = LocalGeometry(self.metric, P0, order=2)
        dtor = covariant(geo.torsion, "udd", geo.gamma_adapted).value
        return ChartGeometry(
            x,
            P0,
            S0,
            J,
            H,
            dS,
            geo.g.value,
            geo.gamma_adapted.value,
            geo.torsion.value,
            geo.R_adapted.value,
            dtor,
        )

    def jacobian(self, x) -> np.ndarray:
        return self.evaluate_tangent(x)[2]

    def inverse(self, y, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
        """Damped Newton inverse, seeded at the origin with the centre Jacobian."""
        y = np.asarray(y, dtype=float)
        batch = y.shape[:-1]
        Y = y.reshape(-1, self.n)
        X = np.linalg.solve(self.basis, (Y - self.center).T).T
        for _ in range(max_iter):
            r = self.forward(X) - Y
            err = np.max(np.abs(r), axis=-1)
            if np.all(err <= tol):
                break
            J = self.jacobian(X)
            dx = np.linalg.solve(J, r[..., None])[..., 0]
            lam = np.ones(len(X))
            for _ in range(6):
                trial = X - lam[:, None] * dx
                bad = np.max(np.abs(self.forward(trial) - Y), axis=-1) > err
                if not bad.any():
                    break
                lam[bad] *= 0.5
            X = X - lam[:, None] * dx
        else:
            if np.max(np.abs(self.forward(X) - Y)) > tol * 1e3:
                raise InverseFailed("Newton iteration did not converge")
        return X.reshape(batch + (self.n,))

    def inverse_table(self, R_t: float, R_l: float, k: int = 33) -> "InverseTable":
        key = (float(R_t), float(R_l), int(k))
        tables = self.__dict__.setdefault("_tables", {})
        if key not in tables:
            tables[key] = InverseTable(self, R_t, R_l, k)
        return tables[key]

    # sampling helpers ----------------------------------------------------------------
    def sample(self, k: int, rng: np.random.Generator, region: str = "full", scale: float = 0.9) -> np.ndarray:
        """Random chart points: ``region`` is ``full``, ``transversal`` (x'' = 0) or ``leaf`` (x' = 0)."""
        nt, nl = self.nt, self.n - self.nt

        def ball(d, r):
            u = rng.standard_normal((k, d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            return u * (r * scale * rng.random((k, 1)) ** (1 / d))

        xt = ball(nt, self.r_t) if region != "leaf" else np.zeros((k, nt))
        xl = ball(nl, self.r_l) if region != "transversal" else np.zeros((k, nl))
        return np.concatenate([xt, xl], axis=1)


class InverseTable:
    """Approximate inverse of a chart on the box ``[-R_t, R_t]^{n'} x [-R_l, R_l]^{n''}``.

    A piecewise-linear interpolant of the inverse over the image of a grid
    gives a first guess; quasi-Newton steps with the interpolated Jacobian
    polish it. Points outside the image of the grid map to NaN.
    """

    def __init__(self, chart: "NormalChart", R_t: float, R_l: float, k: int = 33):
        from scipy.interpolate import LinearNDInterpolator

        n, nt = chart.n, chart.nt
        self.chart = chart
        axes = [np.linspace(-R_t, R_t, k)] * nt + [np.linspace(-R_l, R_l, k)] * (n - nt)
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        img = chart.evaluate(grid.reshape(-1, n), allow_exit=True)[0].reshape(grid.shape)
        Jg = np.stack([np.stack(np.gradient(img[..., a], *axes), axis=-1) for a in range(n)], axis=-2)  # [..., a, k]
        ok = np.isfinite(img).all(-1) & np.isfinite(Jg).all((-1, -2))
        self.interp = LinearNDInterpolator(img[ok], grid[ok])
        self.jinterp = LinearNDInterpolator(img[ok], Jg[ok].reshape(-1, n * n))
        # interpolation error at cell centres of a coarse sub-grid
        h = np.array([a[1] - a[0] for a in axes])
        centres = grid[(slice(0, -1, max(1, k // 8)),) * n].reshape(-1, n) + h / 2
        cimg = chart.evaluate(centres, allow_exit=True)[0]
        good = np.isfinite(cimg).all(-1)
        guess = self.interp(cimg[good])
        err = np.abs(guess - centres[good])
        self.error = float(np.nanmax(err)) if err.size else np.inf

    def __call__(self, y, refine: int = 2) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        batch = y.shape[:-1]
        n = self.chart.n
        Y = y.reshape(-1, n)
        X = self.interp(Y)
        live = np.isfinite(X).all(-1)
        if refine and live.any():
            J = self.jinterp(Y[live]).reshape(-1, n, n)
            x = X[live]
            for _ in range(refine):
                r = self.chart.evaluate(x, allow_exit=True)[0] - Y[live]
                x = x - np.linalg.solve(J, r[..., None])[..., 0]
            X[live] = x
        return X.reshape(batch + (n,))


def _probe_directions(nt: int, nl: int) -> np.ndarray:
    out = []
    for u in np.concatenate([np.eye(nt), -np.eye(nt)]):
        for w in np.concatenate([np.eye(nl), -np.eye(nl)]):
            out.append(np.concatenate([u, w]))
    return np.array(out)


def build_normal_chart(m: MetricField, p, r_t: float, r_l: float, cfg: ChartConfig = ChartConfig()) -> NormalChart:
    """Normal chart at ``p``; radii are halved (with a warning) until probe geodesics stay inside."""
    if m.spec is None:
        raise GeometryError("a foliated metric is required")
    p = np.asarray(p, dtype=float)
    m.check_domain(p)
    nt, nl = m.spec.n_transverse, m.spec.n_leafwise
    dirs = _probe_directions(nt, nl)
    for attempt in range(cfg.max_halvings + 1):
        chart = NormalChart(m, p, r_t, r_l, cfg)
        probe = dirs * np.concatenate([np.full(nt, r_t), np.full(nl, r_l)])
        try:
            chart.forward(probe)
            chart.clear()
            return chart
        except BoundaryExit:
            if attempt == cfg.max_halvings:
                break
            r_t, r_l = r_t / 2, r_l / 2
            warnings.warn(f"normal chart radii halved to ({r_t:g}, {r_l:g})", stacklevel=2)
    raise ChartTooLarge(f"no admissible radii after {cfg.max_halvings} halvings")


# frame coefficients and metric -----------------------------------------------------
def frame_coefficients(chart: NormalChart, x, coords: str = "normal") -> tuple[np.ndarray, np.ndarray]:
    """``(a, b)`` with ``θ^i = a^i_j dx^j`` and ``s_i = b^j_i ∂_j``.

    ``coords="normal"`` uses the chart coordinates; ``coords="ambient"`` the
    coordinates of the underlying metric chart at ``forward(x)``.
    """
    x = np.asarray(x, dtype=float)
    if coords == "ambient":
        pts, S = chart.evaluate(x)
        G = chart.metric.g(pts)
        return np.einsum("...ai,...ab->...ib", S, G), S
    if coords != "normal":
        raise ValueError("coords must be 'normal' or 'ambient'")
    geo = chart.geometry(x)
    return geo.a, geo.b


def metric_in_normal_chart(chart: NormalChart, x) -> np.ndarray:
    """``g_ij = a^α_i a^α_j`` in normal coordinates."""
    return chart.geometry(x).metric


def metric_pullback_residual(chart: NormalChart, x) -> float:
    geo = chart.geometry(x)
    return float(np.max(np.abs(geo.metric - geo.pullback_metric)))


def frame_invariant_residuals(chart: NormalChart, x) -> dict:
    """Orthonormality, ``g = aᵀa``, ``g⁻¹ = b bᵀ`` and splitting of the frame."""
    geo = chart.geometry(x)
    n, nt = chart.n, chart.nt
    eye = np.eye(n)
    gram = np.swapaxes(geo.S, -1, -2) @ geo.G @ geo.S
    gp = geo.pullback_metric
    # horizontal columns are orthogonal to the leafwise coordinate vectors
    hv = np.einsum("...ab,...bi->...ai", geo.G[..., nt:, :], geo.S[..., :, :nt])
    # vertical columns have no transverse coordinate part
    vh = geo.S[..., :nt, nt:]
    return {
        "orthonormality": float(np.max(np.abs(gram - eye))),
        "metric": float(np.max(np.abs(gp - geo.metric))),
        "inverse_metric": float(np.max(np.abs(np.linalg.inv(gp) - geo.b @ np.swapaxes(geo.b, -1, -2)))),
        "ab_inverse": float(np.max(np.abs(geo.a @ geo.b - eye))),
        "splitting": float(max(np.max(np.abs(hv)), np.max(np.abs(vh)))),
    }


# chart invariants ----------------------------------------------------------------
def jacobian_at_zero_residual(chart: NormalChart) -> float:
    J = chart.jacobian(np.zeros(chart.n))
    return float(np.max(np.abs(np.linalg.solve(chart.basis, J) - np.eye(chart.n))))


def round_trip_residual(chart: NormalChart, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.max(np.abs(chart.inverse(chart.forward(x)) - x)))


def plaque_spread(chart: NormalChart, fx: Fixture, x_t, k: int = 7) -> float:
    """π-value spread of ``forward(x', ·)`` over a grid of leaf directions."""
    if not fx.has_projection:
        raise GeometryError("fixture declares no projection")
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    nl = chart.n - chart.nt
    dirs = np.concatenate([np.eye(nl), -np.eye(nl)])
    rs = np.linspace(0, chart.r_l, k)
    xl = (rs[:, None, None] * dirs[None]).reshape(-1, nl)
    pts = np.concatenate(
        [np.broadcast_to(x_t[:, None, :], (len(x_t), len(xl), chart.nt)), np.broadcast_to(xl, (len(x_t),) + xl.shape)],
        axis=-1,
    )
    pi = fx.project(chart.forward(pts))
    return float(np.max(np.ptp(pi, axis=1)))


def leaf_restriction_residual(chart: NormalChart, x_t, k: int = 5) -> float:
    """Leaf rays from ``(x', 0)`` have constant speed and orthonormal initial directions."""
    x_t = np.asarray(x_t, dtype=float)
    nl = chart.n - chart.nt
    rng = np.random.default_rng(0)
    u = rng.standard_normal((3, nl))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    ts = np.linspace(0, chart.r_l, k)
    pts = np.concatenate([np.broadcast_to(x_t, (3, k, chart.nt)), ts[None, :, None] * u[:, None, :]], axis=-1)
    geo = chart.geometry(pts)
    vel = np.einsum("...ak,...k->...a", geo.J[..., :, chart.nt:], np.broadcast_to(u[:, None, :], (3, k, nl)))
    speed = np.sqrt(np.einsum("...a,...ab,...b->...", vel, geo.G, vel))
    g0 = geo.pullback_metric[:, 0, chart.nt:, chart.nt:]
    return float(max(np.max(np.abs(speed - 1)), np.max(np.abs(g0 - np.eye(nl)))))


def gamma_vanishing_residuals(chart: NormalChart, samples) -> tuple[float, float]:
    """``max |Γ̊^i_jk(0)|`` (frame indices i, j) and ``max |Γ̊^i_jk(x', 0)|`` over ``k > n'``.

    ``samples`` are transverse coordinates ``x'`` (shape ``(k, n')``).
    """
    nt = chart.nt
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    pts = np.zeros((len(samples) + 1, chart.n))
    pts[1:, :nt] = samples
    Gf = chart.geometry(pts).gamma_frame
    return float(np.max(np.abs(Gf[0]))), float(np.max(np.abs(Gf[1:, :, :, nt:])))


# radial identities -----------------------------------------------------------------
_RAY = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])


def _ray_points(x: np.ndarray, ts, radial: str, nt: int) -> np.ndarray:
    ts = np.asarray(ts, dtype=float)
    x = np.asarray(x, dtype=float)
    if radial == "transverse":
        return ts[:, None] * x
    out = np.broadcast_to(x, (len(ts), len(x))).copy()
    out[:, nt:] = ts[:, None] * x[nt:]
    return out


def prefetch_rays(chart: NormalChart, x_full, x_transversal):
    """Batch the geometry needed by the differential radial checks at these points.

    Purely a speed-up: later per-point calls are served from the chart memo.
    """
    nt, d = chart.nt, chart.cfg.ray_step
    pts = [np.atleast_2d(x_full), np.atleast_2d(x_transversal)]
    for x in np.atleast_2d(x_full):
        if np.any(x[nt:] != 0):
            pts.append(_ray_points(x, 1 + d * _RAY, "leafwise", nt))
    for x in np.atleast_2d(x_transversal):
        if np.any(x[:nt] != 0):
            pts.append(_ray_points(x, 1 + d * _RAY, "transverse", nt))
        if np.any(x[nt:] != 0):
            pts.append(_ray_points(x, 1 + d * _RAY, "leafwise", nt))
    chart.geometry(np.concatenate(pts))


def _radial_vector(x: np.ndarray, radial: str, nt: int) -> np.ndarray:
    r = np.zeros_like(x)
    sl = slice(0, nt) if radial == "transverse" else slice(nt, None)
    r[sl] = x[sl]
    return r


def _ray_derivatives(values: np.ndarray, d: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives at the centre of 5 equally spaced samples."""
    f = values
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * d)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * d**2)
    return d1, d2


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-8, max_depth: int = 14, min_depth: int = 2):
    """Adaptive Simpson quadrature of an array-valued function.

    ``f`` maps an array of abscissae to values stacked along axis 0; all
    abscissae of one refinement level are evaluated in a single call.
    """
    a, b = float(a), float(b)
    vals = f(np.array([a, 0.5 * (a + b), b]))
    active = [(a, b, vals[0], vals[1], vals[2], tol, 0)]
    total = np.zeros_like(vals[0])
    while active:
        mids = np.array([[0.5 * (lo + 0.5 * (lo + hi)), 0.5 * (0.5 * (lo + hi) + hi)] for lo, hi, *_ in active]).ravel()
        fm = f(mids).reshape((len(active), 2) + vals.shape[1:])
        nxt = []
        for (lo, hi, fa, fc, fb, eps, depth), (fl, fr) in zip(active, fm):
            c = 0.5 * (lo + hi)
            whole = (hi - lo) / 6 * (fa + 4 * fc + fb)
            left = (c - lo) / 6 * (fa + 4 * fl + fc)
            right = (hi - c) / 6 * (fc + 4 * fr + fb)
            diff = left + right - whole
            if depth + 1 >= max_depth or (depth + 1 >= min_depth and np.max(np.abs(diff)) <= 15 * eps):
                total = total + left + right + diff / 15
            else:
                nxt.append((lo, c, fa, fl, fc, eps / 2, depth + 1))
                nxt.append((c, hi, fc, fr, fb, eps / 2, depth + 1))
        active = nxt
    return total


RADIAL_VARIANTS = (
    "underlined_transverse_k_le",
    "underlined_transverse_k_gt",
    "underlined_leafwise_k_le",
    "underlined_leafwise_k_gt",
    "plain_all_four",
)


def _check_region(chart: NormalChart, x: np.ndarray, radial: str) -> bool:
    """False when the ray degenerates; raises when ``x`` is off the required region."""
    nt = chart.nt
    if radial == "transverse":
        if np.any(x[nt:] != 0):
            raise ValueError("transverse radial identities live on B' x {0}")
        return bool(np.any(x[:nt] != 0))
    return bool(np.any(x[nt:] != 0))


def _gamma_residual(chart, x, radial, k_block, plain, mode):
    nt, n = chart.nt, chart.n
    ks = slice(0, nt) if k_block == "le" else slice(nt, n)
    rv = _radial_vector(x, radial, nt)
    plus = (radial == "transverse") == (k_block == "le")  # R'Γ + Γ or R''Γ + Γ

    def gam(g):
        return g.gamma_coord if plain else g.gamma_frame

    def curv(g):
        return g.curvature_coord if plain else g.curvature_frame

    if mode == "differential":
        d = chart.cfg.ray_step
        geo = chart.geometry(_ray_points(x, 1 + d * _RAY, radial, nt))
        Gm = gam(geo)
        d1, _ = _ray_derivatives(Gm, d)
        lhs = d1 + (Gm[2] if plus else 0.0)
        rhs = np.einsum("ijlk,l->ijk", curv(geo)[2], rv)
        return float(np.max(np.abs(lhs - rhs)[..., ks]))

    def integrand(ts):
        g = chart.geometry(_ray_points(x, ts, radial, nt))
        val = np.einsum("tijlk,l->tijk", curv(g), rv)
        weight = ts if (radial == "transverse") == (k_block == "le") else np.ones_like(ts)
        return val * weight[:, None, None, None]

    integral = adaptive_simpson(integrand, 0.0, 1.0, chart.cfg.quad_tol)
    pts = np.stack([x, _ray_points(x, [0.0], radial, nt)[0]])
    geo = chart.geometry(pts)
    lhs = gam(geo)[0]
    if radial == "leafwise" and k_block == "le":
        integral = integral + gam(geo)[1]
    return float(np.max(np.abs(lhs - integral)[..., ks]))


def radial_identity_residual(chart: NormalChart, variant: str, x, mode: str = "differential") -> Optional[float]:
    """Residual of a radial identity for the Christoffel symbols at ``x``.

    ``mode`` is ``"differential"`` (radial derivative along the ray) or
    ``"integral"`` (quadrature of curvature along the ray). Returns ``None``
    when the ray through ``x`` is degenerate. ``plain_all_four`` checks the
    coordinate-component versions; the transverse pair is included only on
    ``B' x {0}``.
    """
    if variant not in RADIAL_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if mode not in ("differential", "integral"):
        raise ValueError("mode must be 'differential' or 'integral'")
    x = np.asarray(x, dtype=float)
    if variant == "plain_all_four":
        out = plain_radial_residuals(chart, x, mode)
        return max(out.values()) if out else None
    _, radial, _, kb = variant.split("_")
    if not _check_region(chart, x, radial):
        return None
    return _gamma_residual(chart, x, radial, kb, False, mode)


def plain_radial_residuals(chart: NormalChart, x, mode: str = "differential") -> dict:
    """Per-case residuals of the coordinate-component radial identities.

    Keys are ``(radial, block)`` with ``radial`` in {transverse, leafwise} and
    ``block`` in {le, gt}; the transverse cases are present only on ``B' x {0}``.
    """
    x = np.asarray(x, dtype=float)
    out = {}
    on_transversal = not np.any(x[chart.nt:] != 0)
    for radial in ("transverse", "leafwise") if on_transversal else ("leafwise",):
        if _check_region(chart, x, radial):
            for kb in ("le", "gt"):
                out[(radial, kb)] = _gamma_residual(chart, x, radial, kb, True, mode)
    return out


def coordinate_connection_radial(chart: NormalChart, x_transversal, x_full) -> dict:
    """``|θ^i_j(R')|`` on ``B' x {0}`` and ``|θ^i_j(R'')|`` on the chart for the coordinate connection forms."""
    nt = chart.nt
    xt = np.atleast_2d(np.asarray(x_transversal, dtype=float))
    xf = np.atleast_2d(np.asarray(x_full, dtype=float))
    gt = chart.geometry(xt).gamma_coord
    gf = chart.geometry(xf).gamma_coord
    return {
        "transverse": float(np.max(np.abs(np.einsum("bijk,bk->bij", gt[..., :nt], xt[:, :nt])))),
        "leafwise": float(np.max(np.abs(np.einsum("bijk,bk->bij", gf[..., nt:], xf[:, nt:])))),
    }


# the tensor F --------------------------------------------------------------------
def F_tensor(chart: NormalChart, x) -> np.ndarray:
    """``F[i, j, k, l]`` at chart points ``x`` (upper index i is a frame index)."""
    return chart.geometry(x).F


def F_tensor_direct(chart: NormalChart, x) -> np.ndarray:
    """``F`` with ``(T̊^i)_{kj;l}`` from finite differences of ``θ^i(T̊(∂_k, ∂_j))`` in the chart."""
    x = np.asarray(x, dtype=float)
    n = chart.n
    H = chart.cfg.outer_step
    eye = np.eye(n)
    pts = np.concatenate([x[..., None, :], x[..., None, :] + H * eye, x[..., None, :] - H * eye], axis=-2)
    geo = chart.geometry(pts)
    Tf = geo.torsion_frame
    dT = np.moveaxis((Tf[..., 1: n + 1, :, :, :] - Tf[..., n + 1:, :, :, :]) / (2 * H), -4, -1)
    Gc = geo.gamma_coord[..., 0, :, :, :]
    T0 = Tf[..., 0, :, :, :]
    Tcov = dT - np.einsum("...mkl,...imj->...ikjl", Gc, T0) - np.einsum("...mjl,...ikm->...ikjl", Gc, T0)
    return assemble_F(Gc, T0, geo.torsion_coord[..., 0, :, :, :], Tcov)


# frame ODEs ------------------------------------------------------------------------
FRAME_VARIANTS = tuple(f"{r}_{b}" for r in ("transverse", "leafwise") for b in ("hh", "vh", "hv", "vv"))

# (sign of the first-order term, curvature present, torsion present) per variant;
# blocks name (i, j): h for indices <= n', v for indices > n'
_FRAME_CASES = {
    "transverse_hh": (+1, True, True),
    "transverse_vh": (+1, False, True),
    "transverse_hv": (-1, True, False),
    "transverse_vv": (-1, False, False),
    "leafwise_hh": (-1, False, False),
    "leafwise_vh": (-1, True, False),
    "leafwise_hv": (+1, False, False),
    "leafwise_vv": (+1, True, False),
}


def _blocks(chart, variant):
    nt, n = chart.nt, chart.n
    bi, bj = variant.split("_")[1]
    pick = {"h": slice(0, nt), "v": slice(nt, n)}
    return pick[bi], pick[bj]


def _frame_kernel(geo: ChartGeometry, rv: np.ndarray, with_R: bool, with_T: bool):
    K = geo.F.copy()
    if with_R:
        # R̊^i_{k l j} placed at [i, j, k, l]
        K = K + np.einsum("...iklj->...ijkl", geo.curvature_frame)
    quad = np.einsum("...ijkl,l,k->...ij", K, rv, rv)
    lin = np.einsum("...ikj,k->...ij", geo.torsion_frame, rv) if with_T else np.zeros_like(quad)
    return quad, lin


def frame_ode_residual(chart: NormalChart, variant: str, x, mode: str = "differential") -> Optional[float]:
    """Residual of a second-order radial identity for ``a^i_j`` at ``x``.

    Returns ``None`` on a degenerate ray.
    """
    if variant not in _FRAME_CASES:
        raise ValueError(f"unknown variant {variant!r}")
    x = np.asarray(x, dtype=float)
    radial = variant.split("_")[0]
    if not _check_region(chart, x, radial):
        return None
    sign, with_R, with_T = _FRAME_CASES[variant]
    si, sj = _blocks(chart, variant)
    nt = chart.nt
    rv = _radial_vector(x, radial, nt)
    d = chart.cfg.ray_step
    geo = chart.geometry(_ray_points(x, 1 + d * _RAY, radial, nt))
    d1, d2 = _ray_derivatives(geo.a, d)
    if mode == "differential":
        lhs = d2 + (2 * d1 if sign > 0 else 0.0)
        g2 = chart.geometry(_ray_points(x, [1.0], radial, nt))
        quad, lin = _frame_kernel(g2, rv, with_R, with_T)
        res = lhs - quad[0] - lin[0]
        return float(np.max(np.abs(res[si, sj])))
    if mode != "integral":
        raise ValueError("mode must be 'differential' or 'integral'")

    def integrand(us):
        g = chart.geometry(_ray_points(x, us, radial, nt))
        quad, lin = _frame_kernel(g, rv, with_R, with_T)
        if sign > 0:
            return np.stack([quad * us[:, None, None] ** 2, lin * us[:, None, None]], axis=1)
        return np.stack([quad, lin], axis=1)

    q, lpart = adaptive_simpson(integrand, 0.0, 1.0, chart.cfg.quad_tol)
    if sign > 0:
        rhs = q + lpart
    else:
        g0 = chart.geometry(_ray_points(x, d * _RAY, radial, nt))
        d1_0, _ = _ray_derivatives(g0.a, d)
        rhs = d1_0 + q
    return float(np.max(np.abs((d1 - rhs)[si, sj])))


# structure equations and normalizations -------------------------------------------
def structure_equation_residual(chart: NormalChart, x) -> float:
    """``dθ^i + θ^i_j ∧ θ^j - T̊^i`` with ``dθ`` from finite differences of ``a``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = chart.n
    H = chart.cfg.outer_step
    eye = np.eye(n)
    pts = np.concatenate([x[:, None, :], x[:, None, :] + H * eye, x[:, None, :] - H * eye], axis=1)
    geo = chart.geometry(pts)
    a = geo.a
    da = (a[:, 1: n + 1] - a[:, n + 1:]) / (2 * H)  # da[b, k, i, l] = ∂_k a^i_l
    dtheta = np.einsum("bkil->bikl", da) - np.einsum("blik->bikl", da)
    Gf, a0 = geo.gamma_frame[:, 0], a[:, 0]
    wedge = np.einsum("bijk,bjl->bikl", Gf, a0) - np.einsum("bijl,bjk->bikl", Gf, a0)
    return float(np.max(np.abs(dtheta + wedge - geo.torsion_frame[:, 0])))


def radial_normalization_residuals(chart: NormalChart, x_transversal, x_full) -> dict:
    """``θ'(R') = x'`` on ``B' x {0}``, ``θ''(R'') = x''`` and ``θ^i_j(R'') = 0`` on the chart."""
    nt = chart.nt
    xt = np.atleast_2d(np.asarray(x_transversal, dtype=float))
    xf = np.atleast_2d(np.asarray(x_full, dtype=float))
    gt = chart.geometry(xt)
    gf = chart.geometry(xf)
    r1 = np.einsum("bij,bj->bi", gt.a[:, :nt, :nt], xt[:, :nt]) - xt[:, :nt]
    r2 = np.einsum("bij,bj->bi", gf.a[:, nt:, nt:], xf[:, nt:]) - xf[:, nt:]
    r3 = np.einsum("bijk,bk->bij", gf.gamma_frame[..., nt:], xf[:, nt:])
    return {
        "theta_t_radial": float(np.max(np.abs(r1))),
        "theta_l_radial": float(np.max(np.abs(r2))),
        "connection_radial": float(np.max(np.abs(r3))),
    }


# coordinate fields as Jacobi fields -----------------------------------------------
def coordinate_jacobi_check(chart: NormalChart, x_t, x_l, i: int, nodes: int = 11) -> float:
    """Distance between ``t -> ∂'_i(x', t x'')`` and the adapted Jacobi field with matched initial data."""
    nt = chart.nt
    if not 0 <= i < nt:
        raise ValueError("i must index a transverse coordinate")
    x_t = np.asarray(x_t, dtype=float)
    x_l = np.asarray(x_l, dtype=float)
    m = chart.metric
    d = chart.cfg.ray_step
    base = np.concatenate([x_t, np.zeros_like(x_l)])
    pts_ray = np.stack([np.concatenate([x_t, s * x_l]) for s in d * _RAY])
    J = chart.jacobian(pts_ray)[..., :, i]
    q, S = chart.evaluate(base)
    u = S[:, nt:] @ x_l
    gamma = leafwise_geodesic(m, q, u, 1.0, chart.cfg.step)
    X0 = J[2]
    dX, _ = _ray_derivatives(J, d)
    ga = connection_values(m, q, "adapted")
    tor = np.swapaxes(ga, -1, -2) - ga
    nab = dX + np.einsum("abc,b,c->a", ga, X0, u)
    Y0 = nab - np.einsum("akb,k,b->a", tor, u, X0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sol = solve_adapted_jacobi(m, gamma, X0, Y0)
    idx = np.linspace(0, len(gamma.times) - 1, nodes).round().astype(int)
    ts = gamma.times[idx]
    field_vals = chart.jacobian(np.stack([np.concatenate([x_t, t * x_l]) for t in ts]))[..., :, i]
    return float(np.max(np.abs(field_vals - sol.X[idx])))
