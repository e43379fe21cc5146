"""Foliated charts, tangent vectors, metric evaluation and differentiation.

Charts are axis-aligned boxes whose first ``n_transverse`` coordinates are
transverse to the foliation and whose last ``n_leafwise`` coordinates run
along the plaques.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import Expr
from .jets import Jet, basis, contract, inverse, stack


class GeometryError(RuntimeError):
    """Base class for numerical failures in the geometry engine."""


class DomainError(GeometryError):
    pass


class DegenerateMetricError(GeometryError):
    pass


class OrderError(GeometryError):
    pass


@dataclass(frozen=True)
class FoliationSpec:
    n_transverse: int
    n_leafwise: int

    def __post_init__(self):
        if self.n_transverse < 1 or self.n_leafwise < 1:
            raise ValueError("both n_transverse and n_leafwise must be >= 1")

    @property
    def n_total(self) -> int:
        return self.n_transverse + self.n_leafwise

    @property
    def transverse(self) -> slice:
        return slice(0, self.n_transverse)

    @property
    def leafwise(self) -> slice:
        return slice(self.n_transverse, self.n_total)


@dataclass(frozen=True)
class DifferentiationConfig:
    mode: str = "dual"  # "dual" or "fd"
    fd_step: float = 1e-5
    max_order: int = 6

    def __post_init__(self):
        if self.mode not in ("dual", "fd"):
            raise ValueError(f"unknown differentiation mode {self.mode!r}")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.max_order < 4:
            raise ValueError("max_order must be at least 4")

    def step_for(self, order: int) -> float:
        # balances O(h^2) truncation against O(eps / h^order) roundoff
        return self.fd_step ** (3.0 / (order + 2))


@dataclass(frozen=True)
class MultiIndex:
    exponents: tuple
    n_transverse: int = 0

    @property
    def order(self) -> int:
        return sum(self.exponents)

    @property
    def transverse_order(self) -> int:
        return sum(self.exponents[: self.n_transverse])

    @property
    def leafwise_order(self) -> int:
        return sum(self.exponents[self.n_transverse:])


@dataclass(frozen=True)
class Point:
    coords: np.ndarray
    chart_id: str = "main"

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True)
class TangentVector:
    base: Point
    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape != self.base.coords.shape:
            raise ValueError("components length must match the base point dimension")
        object.__setattr__(self, "components", comps)


# finite differences --------------------------------------------------------
@lru_cache(maxsize=None)
def central_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Second-order accurate central stencil for the ``order``-th derivative."""
    if order == 0:
        return np.array([0.0]), np.array([1.0])
    r = (order + 1) // 2
    offs = np.arange(-r, r + 1, dtype=float)
    V = np.vander(offs, 2 * r + 1, increasing=True).T
    rhs = np.zeros(2 * r + 1)
    rhs[order] = math.factorial(order)
    w = np.linalg.solve(V, rhs)
    keep = np.abs(w) > 1e-14
    return offs[keep], w[keep]


def fd_partial(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, alpha: Sequence[int], h: float) -> np.ndarray:
    """Tensor-product central difference for ``d^alpha f`` at points ``x``."""
    x = np.asarray(x, dtype=float)
    stencils = [central_weights(int(a)) for a in alpha]
    shifts, weights = [], []
    for combo in product(*[range(len(s[0])) for s in stencils]):
        off = np.array([stencils[k][0][c] for k, c in enumerate(combo)])
        w = math.prod(stencils[k][1][c] for k, c in enumerate(combo))
        shifts.append(off * h)
        weights.append(w)
    pts = x[None, ...] + np.array(shifts).reshape((len(shifts),) + (1,) * (x.ndim - 1) + (x.shape[-1],))
    vals = np.asarray(f(pts))
    w = np.array(weights).reshape((-1,) + (1,) * (vals.ndim - 1))
    return (w * vals).sum(axis=0) / h ** sum(alpha)


def differentiate(f: Callable, alpha: Sequence[int], p, cfg: DifferentiationConfig = DifferentiationConfig()):
    """``d^alpha f(p)`` for a scalar map written against the expression protocol."""
    alpha = tuple(int(a) for a in alpha)
    order = sum(alpha)
    if order > cfg.max_order:
        raise OrderError(f"order {order} exceeds configured maximum {cfg.max_order}")
    p = np.asarray(p, dtype=float)
    if cfg.mode == "dual":
        xs = Jet.variables(p, max(order, 1))
        val = f(xs)
        if not isinstance(val, Jet):
            return np.zeros(p.shape[:-1]) if order else np.broadcast_to(val, p.shape[:-1]).astype(float)
        return val.partial(alpha)

    def g(pts):
        return np.asarray(f([pts[..., k] for k in range(pts.shape[-1])]), dtype=float) * np.ones(pts.shape[:-1])

    return fd_partial(g, p, alpha, cfg.step_for(max(order, 1)))


# metric ----------------------------------------------------------------------
@dataclass(frozen=True)
class MetricField:
    """Chart metric ``x -> g_ij(x)`` on an axis-aligned domain box."""

    spec: Optional[FoliationSpec]
    domain: np.ndarray
    entries: Optional[tuple] = None  # n x n nested tuple of Expr
    func: Optional[Callable] = None  # black-box alternative: (..., n) -> (..., n, n)
    diff: DifferentiationConfig = field(default_factory=DifferentiationConfig)
    name: str = "metric"
    cond_cap: float = 1e12

    def __post_init__(self):
        object.__setattr__(self, "domain", np.asarray(self.domain, dtype=float))
        n = self.domain.shape[0]
        if self.domain.shape != (n, 2) or (self.spec is not None and self.spec.n_total != n):
            raise ValueError("domain must have shape (n, 2) matching the foliation")
        if self.entries is None and self.func is None:
            raise ValueError("metric needs expressions or a callable")
        if self.entries is None and self.diff.mode == "dual":
            object.__setattr__(self, "diff", DifferentiationConfig("fd", self.diff.fd_step, self.diff.max_order))

    @classmethod
    def from_strings(cls, spec: Optional[FoliationSpec], domain, rows: Sequence[Sequence[str]], **kw) -> "MetricField":
        n = len(rows)
        if len(rows) != n or any(len(r) != n for r in rows):
            raise ValueError(f"metric must be {n}x{n}")
        parsed = [[Expr.parse(str(rows[i][j]), n) for j in range(n)] for i in range(n)]
        for i in range(n):
            for j in range(i):
                if parsed[i][j].source.replace(" ", "") != parsed[j][i].source.replace(" ", ""):
                    raise ValueError(f"metric entries ({i},{j}) and ({j},{i}) differ")
        return cls(spec, domain, tuple(tuple(r) for r in parsed), **kw)

    @property
    def n(self) -> int:
        return self.domain.shape[0]

    def contains(self, x, slack: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain[:, 0] - slack, self.domain[:, 1] + slack
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def check_domain(self, x):
        if not np.all(self.contains(x)):
            raise DomainError("point outside chart domain")

    def _eval_entries(self, xs):
        n = self.n
        return [[self.entries[i][j](xs) for j in range(n)] for i in range(n)]

    def g(self, x) -> np.ndarray:
        """Metric matrices at points of shape ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        if self.entries is None:
            G = np.asarray(self.func(x), dtype=float)
        else:
            xs = [x[..., k] for k in range(self.n)]
            vals = self._eval_entries(xs)
            G = np.empty(x.shape[:-1] + (self.n, self.n))
            for i in range(self.n):
                for j in range(self.n):
                    G[..., i, j] = vals[i][j]
        return 0.5 * (G + np.swapaxes(G, -1, -2))

    def jet(self, x, order: int) -> Jet:
        """Taylor jet of ``g`` at points ``x`` up to the given order."""
        if order > self.diff.max_order:
            raise OrderError(f"order {order} exceeds configured maximum {self.diff.max_order}")
        x = np.asarray(x, dtype=float)
        if self.diff.mode == "dual":
            xs = Jet.variables(x, order)
            vals = self._eval_entries(xs)
            rows = [stack(vals[i]) if any(isinstance(v, Jet) for v in vals[i]) else None for i in range(self.n)]
            B = xs[0].B
            batch = x.shape[:-1]
            fixed = []
            for i in range(self.n):
                if rows[i] is None:
                    rows[i] = Jet.constant(np.broadcast_to(np.array(vals[i], dtype=float), batch + (self.n,)), B, order)
                fixed.append(rows[i])
            G = stack(fixed, axis=-2)
            return G.map(lambda c: 0.5 * (c + np.swapaxes(c, -1, -2)))
        return self._fd_jet(x, order)

    def _fd_jet(self, x, order: int) -> Jet:
        B = basis(self.n, max(order, 1))
        m = B.size_upto[order]
        c = np.zeros((m,) + x.shape[:-1] + (self.n, self.n))
        for idx in range(m):
            alpha = B.monomials[idx]
            d = sum(alpha)
            if d == 0:
                c[idx] = self.g(x)
            else:
                c[idx] = fd_partial(self.g, x, alpha, self.diff.step_for(d)) / B.factorial[idx]
        return Jet(c, B, order)


def eval_metric(m: MetricField, p) -> np.ndarray:
    x = p.coords if isinstance(p, Point) else np.asarray(p, dtype=float)
    m.check_domain(x)
    return m.g(x)


def inverse_metric(m: MetricField, p) -> np.ndarray:
    G = eval_metric(m, p)
    cond = np.linalg.cond(G)
    if np.any(~np.isfinite(cond)) or np.any(cond > m.cond_cap):
        raise DegenerateMetricError(f"metric condition number {np.max(cond):.3g} above cap")
    return np.linalg.inv(G)


def vertical_projector(G: np.ndarray, spec: FoliationSpec) -> np.ndarray:
    """Matrix of the g-orthogonal projection onto span of the leafwise axes."""
    lw = spec.leafwise
    Gll = G[..., lw, lw]
    P = np.zeros_like(G)
    P[..., lw, :] = np.linalg.solve(Gll, G[..., lw, :])
    return P


def vertical_projector_jet(G: Jet, spec: FoliationSpec) -> Jet:
    lw = spec.leafwise
    n, nt = spec.n_total, spec.n_transverse
    Gll_inv = inverse(G[..., lw, lw])
    rows = contract("ab,bj->aj", Gll_inv, G[..., lw, :])
    zeros = np.zeros(rows.c.shape[:-2] + (nt, n))
    return rows._like(np.concatenate([zeros, rows.c], axis=-2))


def split_tangent(m: MetricField, v: TangentVector) -> tuple[TangentVector, TangentVector]:
    """Vertical and horizontal parts of ``v`` (orthogonal projections)."""
    G = eval_metric(m, v.base)
    P = vertical_projector(G, m.spec)
    vert = P @ v.components
    return TangentVector(v.base, vert), TangentVector(v.base, v.components - vert)


def inner(G: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...ij,...j->...", u, G, v)


def check_positive_definite(m: MetricField, samples: np.ndarray) -> float:
    """Minimum eigenvalue of ``g`` over the sample points."""
    return float(np.min(np.linalg.eigvalsh(m.g(samples))))
