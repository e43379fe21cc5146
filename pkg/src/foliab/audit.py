"""Sampled bounded-geometry audit: covariant bounds, injectivity floors,
normal-chart coefficient bounds, ball covers and partitions of unity.

Every quantity is a sup over finite lattices, so verdicts hold only up to
the sampled derivative order and the sampled regions.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .connections import TENSOR_TYPES, adapted_frame, covariant_norms
from .core import GeometryError, MetricField, central_weights
from .fixtures import Fixture
from .normal_charts import ChartConfig, ChartTooLarge, NormalChart, build_normal_chart
from .transport import UnsupportedFixture, geodesic_flow

VERDICTS = ("bounded_up_to_sampled_order", "violation_found", "inconclusive")
NORMS = ("block", "frobenius")
# T and A are skew-adjoint operator-valued forms, so their Frobenius norm counts
# every independent block twice; "block" counts it once.
_BLOCK_SCALE = {"R": 1.0, "T": 1 / math.sqrt(2), "A": 1 / math.sqrt(2)}


class RegionTooCoarse(GeometryError):
    pass


class UncoveredPoint(GeometryError):
    pass


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FOLIAB_THREADS", "1")))
    except ValueError:
        return 1


def _map_chunks(fn, items: list, workers: Optional[int] = None) -> list:
    """Apply ``fn`` to chunks in parallel; results come back in index order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True)
class AuditConfig:
    region: Optional[tuple] = None  # working box, defaults to the fixture sample box
    lattice: int = 9  # points per axis for norm sampling
    sample_points: Optional[tuple] = None  # explicit points override the lattice
    exhaustion: tuple = (0.25, 0.1, 0.0)  # domain margins (fraction of width) of the exhausting regions
    growth_factor: float = 1.5
    zero_tol: float = 1e-5  # relative noise floor for growth ratios
    norm: str = "block"  # "block" (skew block counted once for T and A) or "frobenius"
    m_max: int = 2
    # injectivity estimates
    cap: float = 4.0
    shoot_step: float = 1e-2
    reapproach: float = 0.05
    injectivity_lattice: int = 3
    inclusion_radius: float = 0.15
    inclusion_points: int = 3  # sample points (evenly spread) that get the chart-inclusion check
    # normal-chart coefficient bounds
    radii: tuple = (0.3, 0.3)
    deriv_order_chart: int = 3
    chart_centers: int = 3  # lattice points per axis
    chart_lattice: int = 3
    chart_fd_step: float = 0.02
    chart_step: float = 1e-2
    spread_floor: float = 1e-3  # sups below this count as zero when measuring spread

    def __post_init__(self):
        if self.m_max < 0:
            raise ValueError("m_max must be nonnegative")
        if min(self.radii) <= 0:
            raise ValueError("radii must be positive")
        if self.lattice < 1 or self.cap <= 0:
            raise ValueError("lattice and cap must be positive")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")


def lattice(box, k: int) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    axes = [np.linspace(lo, hi, k) if k > 1 else np.array([(lo + hi) / 2]) for lo, hi in box]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(box))


def _working_box(m: MetricField, cfg: AuditConfig, fx: Optional[Fixture] = None) -> np.ndarray:
    if cfg.region is not None:
        return np.asarray(cfg.region, dtype=float)
    if fx is not None and fx.sample_box is not None:
        return fx.sample_box
    return m.domain


def _points(m, cfg, fx=None, k=None) -> np.ndarray:
    if cfg.sample_points is not None:
        return np.atleast_2d(np.asarray(cfg.sample_points, dtype=float))
    return lattice(_working_box(m, cfg, fx), cfg.lattice if k is None else k)


# covariant bound table ----------------------------------------------------------
@dataclass
class NormTable:
    region: np.ndarray
    points: np.ndarray
    norms: dict  # tensor -> (m_max+1, k)

    def sup(self, tensor: str, order: int = 0) -> float:
        return float(np.max(self.norms[tensor][order]))

    def argmax(self, tensor: str, order: int = 0) -> np.ndarray:
        return self.points[int(np.argmax(self.norms[tensor][order]))]


def norm_table(m: MetricField, points: np.ndarray, m_max: int, region=None, chunk: int = 256,
               norm: str = "block") -> NormTable:
    chunks = [points[i: i + chunk] for i in range(0, len(points), chunk)]
    out = {}
    for tensor in TENSOR_TYPES:
        parts = _map_chunks(lambda c: covariant_norms(m, c, tensor, m_max), chunks)
        scale = _BLOCK_SCALE[tensor] if norm == "block" else 1.0
        out[tensor] = scale * np.concatenate(parts, axis=1)
    return NormTable(region, points, out)


@dataclass
class AuditReport:
    fixture: str
    m_max: int
    tables: list = field(default_factory=list)  # working region first, then exhausting regions
    sup: dict = field(default_factory=dict)  # (tensor, order) -> sup over all regions
    growth: dict = field(default_factory=dict)  # (tensor, order) -> successive sup ratios
    verdict: str = "inconclusive"
    witness: Optional[np.ndarray] = None
    witness_quantity: Optional[str] = None
    injectivity: dict = field(default_factory=dict)
    chart: Optional[dict] = None

    def rows(self) -> list[dict]:
        """Flat per-point rows (region index, point, every norm)."""
        rows = []
        for r, t in enumerate(self.tables):
            for i, p in enumerate(t.points):
                row = {"region": r}
                row.update({f"x{k + 1}": float(v) for k, v in enumerate(p)})
                for tensor, arr in t.norms.items():
                    for o in range(arr.shape[0]):
                        row[f"|nabla^{o} {tensor}|"] = float(arr[o, i])
                rows.append(row)
        return rows


def exhausting_regions(m: MetricField, cfg: AuditConfig) -> list[np.ndarray]:
    dom = m.domain
    w = dom[:, 1] - dom[:, 0]
    return [np.stack([dom[:, 0] + f * w, dom[:, 1] - f * w], axis=1) for f in cfg.exhaustion]


def covariant_bound_table(m: MetricField, cfg: AuditConfig = AuditConfig(), fx: Optional[Fixture] = None) -> AuditReport:
    """Sampled sups of ``|∇^k R|``, ``|∇^k T|``, ``|∇^k A|`` and the resulting verdict.

    With ``norm="block"`` the values for T and A are their Frobenius norms
    divided by √2. Sups below a noise floor ``zero_tol (1 + scale)`` do not
    count as growth. The working region is sampled first, then the exhausting regions (nested
    boxes growing to the domain). A sup that grows by more than
    ``growth_factor`` from one exhausting region to the next is reported as a
    violation, with the maximising point as witness.
    """
    work = _working_box(m, cfg, fx)
    tables = [norm_table(m, _points(m, cfg, fx), cfg.m_max, work, norm=cfg.norm)]
    for box in exhausting_regions(m, cfg):
        tables.append(norm_table(m, lattice(box, cfg.lattice), cfg.m_max, box, norm=cfg.norm))
    rep = AuditReport(m.name, cfg.m_max, tables)
    finite = True
    scale = max(t.sup(k, 0) for t in tables[:1] for k in TENSOR_TYPES)
    floor = cfg.zero_tol * (1.0 + scale) if np.isfinite(scale) else cfg.zero_tol
    worst = (1.0, None, None)
    for tensor in TENSOR_TYPES:
        for o in range(cfg.m_max + 1):
            sups = [t.sup(tensor, o) for t in tables]
            finite &= all(np.isfinite(sups))
            rep.sup[(tensor, o)] = max(sups)
            ex = sups[1:]
            ratios = [(b + floor) / (a + floor) for a, b in zip(ex, ex[1:])]
            rep.growth[(tensor, o)] = ratios
            if ratios and max(ratios) > worst[0]:
                worst = (max(ratios), tensor, o)
    if not finite:
        rep.verdict = "inconclusive"
    elif worst[0] > cfg.growth_factor:
        rep.verdict = "violation_found"
        _, tensor, o = worst
        rep.witness = tables[-1].argmax(tensor, o)
        rep.witness_quantity = f"|nabla^{o} {tensor}|"
    else:
        rep.verdict = "bounded_up_to_sampled_order"
    return rep


# injectivity floors -----------------------------------------------------------------
@dataclass
class InjectivityEstimate:
    floor: float
    per_point: np.ndarray
    points: np.ndarray
    truncated: int  # trajectories that left the chart before the cap
    inconclusive: bool = False
    inclusion: Optional[dict] = None


def _fan(E: np.ndarray) -> np.ndarray:
    """Unit directions ``±E_a`` and ``±(E_a ± E_b)/√2`` for orthonormal columns ``E`` (batched)."""
    d = E.shape[-1]
    cols = []
    for a in range(d):
        cols += [E[..., a], -E[..., a]]
    for a in range(d):
        for b in range(a + 1, d):
            for s in (1, -1):
                u = (E[..., a] + s * E[..., b]) / math.sqrt(2)
                cols += [u, -u]
    return np.stack(cols, axis=-2)


def _first_reapproach(Y: np.ndarray, alive: np.ndarray, times: np.ndarray, rho: float) -> float:
    """First time two trajectories (or one and its start) come back within ``rho``.

    ``Y`` has shape ``(N+1, D, e)`` (embedded positions), ``alive`` ``(N+1, D)``.
    A pair only counts after it has been at least ``2 rho`` apart.
    """
    N1, D, _ = Y.shape
    origin = Y[0, :1]
    Z = np.concatenate([np.broadcast_to(origin, (N1, 1, Y.shape[2])), Y], axis=1)
    live = np.concatenate([np.ones((N1, 1), bool), alive], axis=1)
    iu, ju = np.triu_indices(D + 1, 1)
    dist = np.linalg.norm(Z[:, iu] - Z[:, ju], axis=-1)
    ok = live[:, iu] & live[:, ju]
    dist = np.where(ok, dist, np.nan)
    armed = np.maximum.accumulate(np.nan_to_num(dist, nan=0.0), axis=0) >= 2 * rho
    hit = armed & (dist < rho)
    if not hit.any():
        return np.inf
    first = np.where(hit.any(0), hit.argmax(0), N1)
    best = np.inf
    for c in np.flatnonzero(first < N1):
        k = first[c]
        d0, d1 = dist[k - 1, c], dist[k, c]
        frac = (d0 - rho) / (d0 - d1) if d0 != d1 else 1.0
        best = min(best, times[k - 1] + frac * (times[k] - times[k - 1]))
    return best


def shooting_floor(m: MetricField, kind: str, points: np.ndarray, frames: np.ndarray, cap: float, step: float,
                   rho: float, embed) -> InjectivityEstimate:
    """``min(first re-approach, cap)`` over fan geodesics from each point.

    The integration grid is ``k * step`` regardless of ``cap`` so raising the
    cap can never lower the result.
    """
    dirs = _fan(frames)  # (P, D, n)
    P, D, n = dirs.shape
    t_end = step * math.ceil(cap / step - 1e-12)
    curve, _ = geodesic_flow(m, kind, np.repeat(points[:, None, :], D, axis=1), dirs, t_end, step)
    X = curve.points  # (N+1, P, D, n)
    N1 = X.shape[0]
    idx = np.arange(N1)[:, None, None]
    ex = curve.exit_index
    alive = (ex[None] < 0) | (idx <= ex[None])
    Y = embed(X)
    per = np.empty(P)
    for i in range(P):
        per[i] = min(_first_reapproach(Y[:, i], alive[:, i], curve.times, rho), cap)
    truncated = int(np.sum((ex >= 0) & (curve.times[np.maximum(ex, 0)] < cap)))
    return InjectivityEstimate(float(per.min()), per, points, truncated, inconclusive=bool(per.min() <= step))


def leafwise_injectivity_floor(m: MetricField, cfg: AuditConfig = AuditConfig(), fx: Optional[Fixture] = None) -> InjectivityEstimate:
    """Shooting estimate over leaf geodesics (adapted geodesics with vertical fan directions)."""
    pts = _points(m, cfg, fx, cfg.injectivity_lattice)
    E = adapted_frame(m, pts)[..., m.spec.n_transverse:]
    embed = (lambda X: fx.embed(X)) if fx is not None else (lambda X: X)
    return shooting_floor(m, "adapted", pts, E, cfg.cap, cfg.shoot_step, cfg.reapproach, embed)


def _orthonormal_basis(G: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(G)
    return np.swapaxes(np.linalg.inv(L), -1, -2)


def transverse_injectivity_floor(fx: Fixture, cfg: AuditConfig = AuditConfig()) -> InjectivityEstimate:
    """Shooting estimate on the base metric at projected sample points."""
    if not fx.has_projection:
        raise UnsupportedFixture(f"{fx.name} declares no projection and base metric")
    pts = np.unique(fx.project(_points(fx.metric, cfg, fx, cfg.injectivity_lattice)), axis=0)
    base = fx.base_metric
    E = _orthonormal_basis(base.g(pts))
    embed = lambda X: fx.embed(X, base=True)  # noqa: E731
    return shooting_floor(base, "levi_civita", pts, E, cfg.cap, cfg.shoot_step, cfg.reapproach, embed)


def ambient_injectivity_floor(m: MetricField, cfg: AuditConfig = AuditConfig(), fx: Optional[Fixture] = None) -> InjectivityEstimate:
    """Levi-Civita shooting estimate plus the chart-inclusion check.

    The inclusion check shoots the fan to radius ``min(floor, inclusion_radius)``
    from every sample point and requires each endpoint to invert through the
    normal chart at that point into ``B' x B''`` with radii ``cfg.radii``.
    """
    pts = _points(m, cfg, fx, cfg.injectivity_lattice)
    E = adapted_frame(m, pts)
    embed = (lambda X: fx.embed(X)) if fx is not None else (lambda X: X)
    est = shooting_floor(m, "levi_civita", pts, E, cfg.cap, cfg.shoot_step, cfg.reapproach, embed)
    r = min(est.floor, cfg.inclusion_radius)
    sel = np.unique(np.linspace(0, len(pts) - 1, min(cfg.inclusion_points, len(pts))).round().astype(int))
    est.inclusion = inclusion_check(m, pts[sel], r, cfg)
    return est


def inclusion_check(m: MetricField, pts: np.ndarray, r: float, cfg: AuditConfig) -> dict:
    """Whether geodesic spheres of radius ``r`` sit inside the normal charts at ``pts``."""
    worst = 0.0
    passed = True
    E = adapted_frame(m, pts)
    dirs = _fan(E)
    curve, _ = geodesic_flow(m, "levi_civita", np.repeat(pts[:, None, :], dirs.shape[1], axis=1), dirs, r,
                             min(cfg.shoot_step, r / 4))
    ends = curve.endpoint
    nt = m.spec.n_transverse
    for i, p in enumerate(pts):
        try:
            chart = build_normal_chart(m, p, *cfg.radii, ChartConfig(step=cfg.chart_step, max_halvings=0))
            x = chart.inverse(ends[i])
        except GeometryError:
            passed = False
            worst = np.inf
            continue
        ratio = max(np.max(np.linalg.norm(x[:, :nt], axis=1)) / cfg.radii[0],
                    np.max(np.linalg.norm(x[:, nt:], axis=1)) / cfg.radii[1])
        worst = max(worst, float(ratio))
        passed &= bool(ratio < 1.0)
    return {"radius": float(r), "passed": bool(passed), "max_relative_chart_radius": float(worst)}


# chart coefficient bounds -------------------------------------------------------------
def _partials_stencil(n: int, K: int):
    """Union stencil and weights for all ``∂^I`` with ``|I| <= K`` (tensor-product central differences)."""
    alphas = [a for a in product(range(K + 1), repeat=n) if sum(a) <= K]
    table = {}
    offsets = {}
    for a in alphas:
        terms = []
        st = [central_weights(k) for k in a]
        for combo in product(*[range(len(s[0])) for s in st]):
            off = tuple(int(st[d][0][c]) for d, c in enumerate(combo))
            w = math.prod(st[d][1][c] for d, c in enumerate(combo))
            offsets.setdefault(off, len(offsets))
            terms.append((offsets[off], w))
        table[a] = terms
    offs = np.array(sorted(offsets, key=offsets.get), dtype=float)
    return alphas, table, offs


def chart_partials(chart: NormalChart, x: np.ndarray, K: int, h: float) -> dict:
    """``{I: ∂^I g^p_ij}`` and ``{I: ∂^I g_p^ij}`` at chart points ``x`` for ``|I| <= K``."""
    n = chart.n
    alphas, table, offs = _partials_stencil(n, K)
    pts = x[:, None, :] + h * offs[None]
    geo = chart.geometry(pts)
    g = geo.metric
    ginv = np.linalg.inv(g)
    out_g, out_ginv = {}, {}
    for a in alphas:
        scale = h ** (-sum(a))
        out_g[a] = sum(w * g[:, i] for i, w in table[a]) * scale
        out_ginv[a] = sum(w * ginv[:, i] for i, w in table[a]) * scale
    return {"g": out_g, "ginv": out_ginv}


def chart_coefficient_bounds(m: MetricField, cfg: AuditConfig = AuditConfig(), fx: Optional[Fixture] = None,
                             centers: Optional[np.ndarray] = None) -> dict:
    """Per-centre sups of ``|∂_I g^p_ij|`` and ``|∂_I g_p^ij|`` by derivative order.

    Centres whose chart does not fit (even after halving) are flagged and
    excluded. ``spread`` is ``(max - min) / max`` across centres per order,
    taken as zero where the sup is below ``spread_floor`` (finite-difference noise).
    """
    centers = _points(m, cfg, fx, cfg.chart_centers) if centers is None else np.atleast_2d(centers)
    K = cfg.deriv_order_chart
    r_t, r_l = cfg.radii
    nt, n = m.spec.n_transverse, m.n
    reach = 0.5 + 2 * cfg.chart_fd_step / min(r_t, r_l)
    u = lattice(np.array([[-0.5, 0.5]] * n), cfg.chart_lattice)
    excluded = []
    per_center = []
    kept = []
    for p in centers:
        try:
            chart = build_normal_chart(m, p, r_t, r_l, ChartConfig(step=cfg.chart_step, max_halvings=0))
            probe = np.concatenate([np.full(nt, r_t), np.full(n - nt, r_l)]) * reach
            chart.forward(np.array([probe, -probe]))
        except GeometryError:
            excluded.append(p)
            continue
        x = u * np.concatenate([np.full(nt, r_t), np.full(n - nt, r_l)])
        d = chart_partials(chart, x, K, cfg.chart_fd_step)
        sups = np.zeros((2, K + 1))
        for w, key in enumerate(("g", "ginv")):
            for a, arr in d[key].items():
                sups[w, sum(a)] = max(sups[w, sum(a)], float(np.max(np.abs(arr))))
        per_center.append(sups)
        kept.append(p)
    if not per_center:
        return {"centers": np.empty((0, n)), "excluded": np.array(excluded), "per_center": np.empty((0, 2, K + 1)),
                "sup": None, "spread": None}
    arr = np.array(per_center)
    mx, mn = arr.max(0), arr.min(0)
    big = mx > cfg.spread_floor
    spread = np.where(big, (mx - mn) / np.where(big, mx, 1.0), 0.0)
    return {
        "centers": np.array(kept),
        "excluded": np.array(excluded).reshape(-1, n),
        "per_center": arr,  # [center, g|ginv, order]
        "sup": mx,
        "spread": spread,
    }


# covers ------------------------------------------------------------------------------
def _lattice_graph(m: MetricField, pts: np.ndarray, shape: tuple, spacing: np.ndarray):
    """Sparse graph on a lattice with edges to all offsets in ``{-2..2}^n`` of coprime entries."""
    n = len(shape)
    idx = np.arange(len(pts)).reshape(shape)
    offs = [o for o in product(range(-2, 3), repeat=n) if any(o) and math.gcd(*[abs(v) for v in o]) == 1]
    rows, cols, vals = [], [], []
    for o in offs:
        src = tuple(slice(max(0, -d), s - max(0, d)) for d, s in zip(o, shape))
        dst = tuple(slice(max(0, d), s - max(0, -d) if d < 0 else s) for d, s in zip(o, shape))
        a, b = idx[src].ravel(), idx[dst].ravel()
        if a.size == 0:
            continue
        mid = 0.5 * (pts[a] + pts[b])
        dv = pts[b] - pts[a]
        G = m.g(mid)
        rows.append(a)
        cols.append(b)
        vals.append(np.sqrt(np.einsum("ki,kij,kj->k", dv, G, dv)))
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    return coo_matrix((vals, (rows, cols)), shape=(len(pts), len(pts))).tocsr()


def riemannian_distance(m: MetricField, p, q, step: float = 1e-2, max_iter: int = 50, tol: float = 1e-10):
    """Geodesic shooting distance from ``p`` to each row of ``q``; NaN where shooting fails."""
    p = np.asarray(p, dtype=float)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = m.n
    v = q - p
    h = 1e-6
    eye = np.eye(n)
    done = np.zeros(len(q), bool)
    for _ in range(max_iter):
        trial = np.concatenate([v[:, None, :], v[:, None, :] + h * eye, v[:, None, :] - h * eye], axis=1)
        c, _ = geodesic_flow(m, "levi_civita", p, trial, 1.0, step)
        end = c.endpoint
        if c.partial:
            bad = (c.exit_index >= 0).any(-1)
            end[bad] = np.nan
        r = end[:, 0] - q
        J = np.swapaxes((end[:, 1: n + 1] - end[:, n + 1:]) / (2 * h), -1, -2)
        done = np.all(np.abs(r) <= tol, axis=-1) | ~np.isfinite(r).all(-1)
        if done.all():
            break
        dv = np.linalg.solve(np.where(np.isfinite(J), J, np.eye(n)), np.nan_to_num(r)[..., None])[..., 0]
        v = np.where(done[:, None], v, v - dv)
    G = m.g(np.broadcast_to(p, v.shape))
    d = np.sqrt(np.einsum("ki,kij,kj->k", v, G, v))
    ok = np.isfinite(r).all(-1) & np.all(np.abs(r) <= 1e3 * tol, axis=-1)
    return np.where(ok, d, np.nan)


@dataclass
class Cover:
    centers: np.ndarray
    radii: tuple
    r1: float
    N: int
    charts: list
    region: np.ndarray
    coverage: float = 0.0
    multiplicity_observed: int = 0
    N_volume: Optional[int] = None
    test_points: int = 0

    def __len__(self):
        return len(self.centers)


def _greedy_packing(m: MetricField, cand: np.ndarray, shape: tuple, spacing: np.ndarray, r1: float, band: float = 0.1):
    graph = _lattice_graph(m, cand, shape, spacing)
    blocked = np.zeros(len(cand), bool)
    accepted = []
    for i in range(len(cand)):
        if blocked[i]:
            continue
        accepted.append(i)
        d = dijkstra(graph, indices=i, limit=(1 + band) * r1 * 1.5)
        near = d < (1 - band) * r1
        amb = np.flatnonzero((d >= (1 - band) * r1) & (d <= (1 + band) * r1) & ~blocked)
        if amb.size:
            ds = riemannian_distance(m, cand[i], cand[amb], step=0.05)
            ds = np.where(np.isfinite(ds), ds, d[amb])  # graph fallback
            near[amb] = ds < r1 * (1 - 1e-9)
        blocked |= near
        blocked[i] = True
    return np.array(accepted)


def _lower_metric_bound(m: MetricField, box: np.ndarray) -> float:
    G = m.g(lattice(box, 9))
    return float(np.min(np.linalg.eigvalsh(G)))


def build_cover(m: MetricField, r1: float, region=None, radii: Optional[tuple] = None, spacing: Optional[float] = None,
                test_k: int = 100, chart_step: float = 0.05) -> Cover:
    """Greedy maximal ``r1``-separated packing of a lattice in ``region`` and its chart cover.

    ``radii`` default to ``(r1, r1)`` so that ``B(p, r1)`` sits in ``U_{p,r',r''}``.
    Coverage and multiplicity are verified on a ``test_k``-per-axis lattice;
    ``N`` is the observed maximal multiplicity of the doubled sets.
    """
    box = m.domain if region is None else np.asarray(region, dtype=float)
    radii = (r1, r1) if radii is None else tuple(radii)
    n = m.n
    width = box[:, 1] - box[:, 0]
    spacing = r1 / 4 if spacing is None else spacing
    if spacing > r1 / 4 + 1e-12:
        raise RegionTooCoarse("candidate lattice spacing exceeds r1/4")
    counts = [max(1, int(math.ceil(w / spacing - 1e-9)) + 1) for w in width]
    axes = [np.linspace(lo, hi, k) if k > 1 else np.array([(lo + hi) / 2]) for (lo, hi), k in zip(box, counts)]
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    idx = _greedy_packing(m, cand, tuple(counts), np.array([a[1] - a[0] if len(a) > 1 else 1.0 for a in axes]), r1)
    centers = cand[idx]
    ccfg = ChartConfig(step=chart_step, max_halvings=0)
    charts = [build_normal_chart(m, c, 2 * radii[0], 2 * radii[1], ccfg) for c in centers]
    cover = Cover(centers, radii, r1, 0, charts, box)
    test = lattice(box, test_k)
    inside, _ = membership(cover, test, scale=1.0)
    doubled, _ = membership(cover, test, scale=2.0)
    cover.coverage = float(np.mean(inside.any(1)))
    cover.multiplicity_observed = int(doubled.sum(1).max())
    cover.N = cover.multiplicity_observed
    cover.test_points = len(test)
    cover.N_volume = volume_ratio_bound(m, cover)
    return cover


def _candidates(cover: Cover, y: np.ndarray, scale: float) -> list:
    """Per centre, indices of ``y`` that may lie in ``U_{p, scale r', scale r''}``."""
    r = scale * (cover.radii[0] + cover.radii[1])
    m = cover.charts[0].metric if cover.charts else None
    if m is None:
        return []
    lo = np.minimum(cover.region[:, 0], y.min(0)) - r
    hi = np.maximum(cover.region[:, 1], y.max(0)) + r
    lam = _lower_metric_bound(m, np.clip(np.stack([lo, hi], 1), m.domain[:, 0:1], m.domain[:, 1:2]))
    bound = r / math.sqrt(lam) * 1.05
    return [np.flatnonzero(np.linalg.norm(y - c, axis=1) <= bound) for c in cover.centers]


def membership(cover: Cover, y, scale: float = 1.0, refine_all: bool = False):
    """Boolean matrix ``(len(y), len(centres))`` of ``y ∈ U_{p_i, scale r', scale r''}`` plus chart coordinates."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    nt = cover.charts[0].nt if cover.charts else 0
    r_t, r_l = cover.radii[0] * scale, cover.radii[1] * scale
    inside = np.zeros((len(y), len(cover.centers)), bool)
    coords = np.full((len(y), len(cover.centers), y.shape[1]), np.nan)
    for c, (chart, cand) in enumerate(zip(cover.charts, _candidates(cover, y, scale))):
        if cand.size == 0:
            continue
        tab = chart.inverse_table(1.1 * 2 * cover.radii[0], 1.1 * 2 * cover.radii[1])
        x = tab(y[cand], refine=0)
        if refine_all:
            x = tab(y[cand], refine=2)
        else:
            rt = np.linalg.norm(x[:, :nt], axis=1)
            rl = np.linalg.norm(x[:, nt:], axis=1)
            margin = 10 * tab.error + 1e-9
            amb = np.isfinite(x).all(1) & ((np.abs(rt - r_t) <= margin) | (np.abs(rl - r_l) <= margin))
            if amb.any():
                x[amb] = tab(y[cand][amb], refine=2)
        rt = np.linalg.norm(x[:, :nt], axis=1)
        rl = np.linalg.norm(x[:, nt:], axis=1)
        ok = np.isfinite(x).all(1) & (rt <= r_t * (1 + 1e-9)) & (rl <= r_l * (1 + 1e-9))
        inside[cand, c] = ok
        coords[cand, c] = x
    return inside, coords


def volume_ratio_bound(m: MetricField, cover: Cover, k: int = 41) -> Optional[int]:
    """``max_p vol B(p, r1 + r2) / vol B(p, r1/2)`` with ``r2 = 2r' + 2r''`` by lattice quadrature."""
    r2 = 2 * cover.radii[0] + 2 * cover.radii[1]
    R = cover.r1 + r2
    worst = 0.0
    for c in cover.centers:
        box = np.stack([c - R * 1.05, c + R * 1.05], axis=1)
        box[:, 0] = np.maximum(box[:, 0], m.domain[:, 0])
        box[:, 1] = np.minimum(box[:, 1], m.domain[:, 1])
        pts = lattice(box, k)
        shape = (k,) * m.n
        spacing = (box[:, 1] - box[:, 0]) / (k - 1)
        graph = _lattice_graph(m, pts, shape, spacing)
        src = int(np.argmin(np.linalg.norm(pts - c, axis=1)))
        d = dijkstra(graph, indices=src, limit=R * 1.01)
        dv = np.sqrt(np.linalg.det(m.g(pts))) * np.prod(spacing)
        big = dv[d <= R].sum()
        small_r = cover.r1 / 2
        # the small ball needs a finer lattice
        sbox = np.stack([c - small_r * 1.05, c + small_r * 1.05], axis=1)
        spts = lattice(sbox, k)
        sspacing = (sbox[:, 1] - sbox[:, 0]) / (k - 1)
        sg = _lattice_graph(m, spts, shape, sspacing)
        ssrc = int(np.argmin(np.linalg.norm(spts - c, axis=1)))
        sd = dijkstra(sg, indices=ssrc, limit=small_r * 1.01)
        small = (np.sqrt(np.linalg.det(m.g(spts))) * np.prod(sspacing))[sd <= small_r].sum()
        worst = max(worst, big / small)
    return int(math.ceil(worst)) if worst else None


# partition of unity -------------------------------------------------------------------
def _h(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def bump(s, r: float) -> np.ndarray:
    """Smooth profile: 1 for ``s <= r``, 0 for ``s >= 2r``, built from ``exp(-1/t)``."""
    s = np.asarray(s, dtype=float) / r
    a, b = _h(2.0 - s), _h(s - 1.0)
    return a / (a + b)


class PartitionOfUnity:
    """Weights ``φ_i = ψ_i / Σψ`` with ``ψ_i = ρ'(|x'|) ρ''(|x''|)`` in the chart at ``p_i``."""

    def __init__(self, cover: Cover):
        self.cover = cover

    def psi(self, y) -> np.ndarray:
        cov = self.cover
        y = np.atleast_2d(np.asarray(y, dtype=float))
        inside, x = membership(cov, y, scale=2.0, refine_all=True)
        nt = cov.charts[0].nt
        rt = np.linalg.norm(x[..., :nt], axis=-1)
        rl = np.linalg.norm(x[..., nt:], axis=-1)
        val = bump(np.nan_to_num(rt, nan=np.inf), cov.radii[0]) * bump(np.nan_to_num(rl, nan=np.inf), cov.radii[1])
        return np.where(inside, val, 0.0)

    def __call__(self, y) -> np.ndarray:
        psi = self.psi(y)
        tot = psi.sum(1)
        if np.any(tot <= 0):
            raise UncoveredPoint("query point outside every cover set")
        return psi / tot[:, None]

    def gradient_bounds(self, y, h: float = 1e-3) -> np.ndarray:
        """Per-centre sup over ``y`` of the coordinate gradient norm of ``φ_i``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = y.shape[1]
        eye = np.eye(n)
        pts = np.concatenate([y + h * e for e in eye] + [y - h * e for e in eye])
        w = self(pts).reshape(2, n, len(y), -1)
        grad = (w[0] - w[1]) / (2 * h)
        return np.sqrt((grad ** 2).sum(0)).max(0)


def partition_of_unity(cover: Cover) -> PartitionOfUnity:
    return PartitionOfUnity(cover)


def full_audit(fx: Fixture, cfg: AuditConfig = AuditConfig(), charts: bool = False) -> AuditReport:
    """Covariant table, verdict and the injectivity floors of a fixture."""
    m = fx.metric
    rep = covariant_bound_table(m, cfg, fx)
    rep.injectivity["leafwise"] = leafwise_injectivity_floor(m, cfg, fx)
    if fx.has_projection:
        rep.injectivity["transverse"] = transverse_injectivity_floor(fx, cfg)
    rep.injectivity["ambient"] = ambient_injectivity_floor(m, cfg, fx)
    if charts:
        rep.chart = chart_coefficient_bounds(m, cfg, fx)
    return rep


__all__ = [
    "AuditConfig",
    "AuditReport",
    "ChartTooLarge",
    "Cover",
    "InjectivityEstimate",
    "PartitionOfUnity",
    "RegionTooCoarse",
    "UncoveredPoint",
    "VERDICTS",
    "ambient_injectivity_floor",
    "build_cover",
    "bump",
    "chart_coefficient_bounds",
    "covariant_bound_table",
    "full_audit",
    "leafwise_injectivity_floor",
    "membership",
    "partition_of_unity",
    "riemannian_distance",
    "transverse_injectivity_floor",
]
