"""Truncated multivariate Taylor arithmetic (higher-order forward mode).

A :class:`Jet` stores the Taylor coefficients ``c_a`` of a tensor-valued
function around a base point, ``f(p + h) = sum_a c_a h^a``, for every
multi-index ``a`` up to a valid order. Order one jets are ordinary dual
numbers; higher orders replace nested duals with a single flat
coefficient table, which keeps mixed partials exact and cheap.

Coefficient arrays have shape ``(M, *batch, *tensor)``. Elementwise
operations broadcast over the trailing axes, and :func:`contract` runs an
einsum over tensor axes while convolving the Taylor coefficients.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


class JetBasis:
    """Multi-index bookkeeping for ``n`` variables up to total order ``K``."""

    def __init__(self, n: int, K: int):
        self.n, self.K = n, K
        monos = []
        for d in range(K + 1):
            for combo in itertools.combinations_with_replacement(range(n), d):
                a = [0] * n
                for c in combo:
                    a[c] += 1
                monos.append(tuple(a))
        # graded, and within a degree lexicographically descending
        monos.sort(key=lambda a: (sum(a), tuple(-x for x in a)))
        self.monomials = monos
        self.index = {a: i for i, a in enumerate(monos)}
        self.degree = np.array([sum(a) for a in monos])
        self.size_upto = [int(np.sum(self.degree <= o)) for o in range(K + 1)]
        self.factorial = np.array([math.prod(math.factorial(x) for x in a) for a in monos], dtype=float)
        self._mul = {}
        self._deriv = {}

    def mul_table(self, order: int):
        if order not in self._mul:
            ia, ib, ic = [], [], []
            m = self.size_upto[order]
            for c in range(m):
                ac = self.monomials[c]
                for a_idx in range(m):
                    a = self.monomials[a_idx]
                    b = tuple(x - y for x, y in zip(ac, a))
                    if min(b) >= 0:
                        ia.append(a_idx)
                        ib.append(self.index[b])
                        ic.append(c)
            ic = np.array(ic)
            starts = np.flatnonzero(np.r_[True, ic[1:] != ic[:-1]])
            self._mul[order] = (np.array(ia), np.array(ib), starts)
        return self._mul[order]

    def deriv_table(self, k: int, order: int):
        """Source indices and factors for d/dx_k of a jet of the given order."""
        key = (k, order)
        if key not in self._deriv:
            m = self.size_upto[order - 1]
            src, fac = [], []
            for b in self.monomials[:m]:
                a = list(b)
                a[k] += 1
                src.append(self.index[tuple(a)])
                fac.append(float(a[k]))
            self._deriv[key] = (np.array(src), np.array(fac))
        return self._deriv[key]


@lru_cache(maxsize=None)
def basis(n: int, K: int) -> JetBasis:
    return JetBasis(n, K)


def _expand(fac: np.ndarray, ndim: int) -> np.ndarray:
    return fac.reshape((-1,) + (1,) * (ndim - 1))


class Jet:
    """Taylor jet with coefficient array ``c`` of shape ``(M_order, ...)``."""

    __array_priority__ = 100

    def __init__(self, c: np.ndarray, B: JetBasis, order: int):
        self.c = c
        self.B = B
        self.order = order

    # construction ------------------------------------------------------
    @classmethod
    def variables(cls, point: np.ndarray, order: int) -> list["Jet"]:
        """Independent variable jets at ``point`` of shape ``(*batch, n)``."""
        point = np.asarray(point, dtype=float)
        n = point.shape[-1]
        B = basis(n, max(order, 1))
        m = B.size_upto[order]
        out = []
        for k in range(n):
            c = np.zeros((m,) + point.shape[:-1])
            c[0] = point[..., k]
            if order >= 1:
                e = [0] * n
                e[k] = 1
                c[B.index[tuple(e)]] = 1.0
            out.append(cls(c, B, order))
        return out

    @classmethod
    def constant(cls, value, B: JetBasis, order: int, shape=()) -> "Jet":
        value = np.broadcast_to(np.asarray(value, dtype=float), shape) if shape else np.asarray(value, dtype=float)
        c = np.zeros((B.size_upto[order],) + value.shape)
        c[0] = value
        return cls(c, B, order)

    def _like(self, c, order=None) -> "Jet":
        return Jet(c, self.B, self.order if order is None else order)

    # accessors ---------------------------------------------------------
    @property
    def value(self) -> np.ndarray:
        return self.c[0]

    @property
    def shape(self):
        return self.c.shape[1:]

    def truncate(self, order: int) -> "Jet":
        if order >= self.order:
            return self
        return self._like(self.c[: self.B.size_upto[order]], order)

    def partial(self, alpha) -> np.ndarray:
        """Partial derivative ``d^alpha`` at the base point."""
        alpha = tuple(int(a) for a in alpha)
        if sum(alpha) > self.order:
            raise ValueError(f"derivative order {sum(alpha)} exceeds jet order {self.order}")
        i = self.B.index[alpha]
        return self.c[i] * self.B.factorial[i]

    def d(self, k: int) -> "Jet":
        """Partial derivative field d/dx_k, one order lower."""
        if self.order < 1:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = self.B.deriv_table(k, self.order)
        return self._like(self.c[src] * _expand(fac, self.c.ndim), self.order - 1)

    def grad(self) -> "Jet":
        """Stack of all first partials along a new last axis."""
        parts = [self.d(k).c for k in range(self.B.n)]
        return self._like(np.stack(parts, axis=-1), self.order - 1)

    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return self._like(self.c[(slice(None),) + idx])

    def map(self, fn) -> "Jet":
        """Apply a linear map acting on the trailing axes of every coefficient."""
        return self._like(fn(self.c))

    # arithmetic --------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            order = min(self.order, other.order)
            return self.truncate(order), other.truncate(order), order
        return self, other, self.order

    def __add__(self, other):
        a, b, o = self._coerce(other)
        if isinstance(b, Jet):
            return a._like(a.c + b.c, o)
        c = a.c.copy() if np.ndim(b) <= a.c.ndim - 1 else np.broadcast_to(a.c, a.c.shape[:1] + np.broadcast_shapes(a.c.shape[1:], np.shape(b))).copy()
        c[0] = c[0] + b
        return a._like(c, o)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return self._like(self.c * np.asarray(other))
        a, b, o = self._coerce(other)
        ia, ib, starts = self.B.mul_table(o)
        prod = a.c[ia] * b.c[ib]
        return Jet(np.add.reduceat(prod, starts, axis=0), self.B, o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self._like(self.c / np.asarray(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            return (p * self.log()).exp()
        if float(p).is_integer() and p >= 0:
            p = int(p)
            result = Jet.constant(1.0, self.B, self.order, self.shape)
            base = self
            while p:
                if p & 1:
                    result = result * base
                p >>= 1
                if p:
                    base = base * base
            return result
        if float(p).is_integer():
            return (self ** (-int(p))).reciprocal()
        return self._power(float(p))

    def __rpow__(self, base):
        return (self * np.log(base)).exp()

    # univariate composition -------------------------------------------
    def compose(self, derivs) -> "Jet":
        """Compose with a scalar function given its derivatives at the base value."""
        o = self.order
        out = np.zeros_like(self.c)
        out[0] = derivs[0]
        if o == 0:
            return self._like(out)
        N = self._like(self.c.copy())
        N.c[0] = 0.0
        power = N
        for m in range(1, o + 1):
            out = out + power.c * (np.asarray(derivs[m]) / math.factorial(m))
            if m < o:
                power = power * N
        return self._like(out)

    def exp(self):
        e = np.exp(self.value)
        return self.compose([e] * (self.order + 1))

    def log(self):
        v = self.value
        ds = [np.log(v)] + [(-1) ** (m - 1) * math.factorial(m - 1) / v**m for m in range(1, self.order + 1)]
        return self.compose(ds)

    def sin(self):
        s, c = np.sin(self.value), np.cos(self.value)
        cyc = [s, c, -s, -c]
        return self.compose([cyc[m % 4] for m in range(self.order + 1)])

    def cos(self):
        s, c = np.sin(self.value), np.cos(self.value)
        cyc = [c, -s, -c, s]
        return self.compose([cyc[m % 4] for m in range(self.order + 1)])

    def sinh(self):
        s, c = np.sinh(self.value), np.cosh(self.value)
        return self.compose([s if m % 2 == 0 else c for m in range(self.order + 1)])

    def cosh(self):
        s, c = np.sinh(self.value), np.cosh(self.value)
        return self.compose([c if m % 2 == 0 else s for m in range(self.order + 1)])

    def _power(self, r: float):
        v = self.value
        ds, coef = [], 1.0
        for m in range(self.order + 1):
            ds.append(coef * v ** (r - m))
            coef *= r - m
        return self.compose(ds)

    def sqrt(self):
        return self._power(0.5)

    def reciprocal(self):
        return self._power(-1.0)


# tensor helpers ---------------------------------------------------------
def stack(items, axis: int = -1) -> Jet:
    """Stack jets (or constants) along a new trailing tensor axis."""
    jets = [x for x in items if isinstance(x, Jet)]
    if not jets:
        raise ValueError("stack needs at least one jet")
    ref = jets[0]
    order = min(j.order for j in jets)
    B = ref.B
    batch = np.broadcast_shapes(*(j.shape for j in jets))
    arrs = []
    for x in items:
        if isinstance(x, Jet):
            arrs.append(np.broadcast_to(x.truncate(order).c, (B.size_upto[order],) + batch))
        else:
            arrs.append(Jet.constant(x, B, order, batch).c)
    if axis < 0:
        axis = len(batch) + 1 + axis + 1
    return Jet(np.stack(arrs, axis=axis), B, order)


def contract(subscripts: str, a, b) -> Jet:
    """Einsum over tensor axes; batch axes are matched by ellipsis."""
    lhs, out = subscripts.split("->")
    sa, sb = lhs.split(",")
    if isinstance(a, Jet) and isinstance(b, Jet):
        o = min(a.order, b.order)
        a, b = a.truncate(o), b.truncate(o)
        ia, ib, starts = a.B.mul_table(o)
        prod = np.einsum(f"Z...{sa},Z...{sb}->Z...{out}", a.c[ia], b.c[ib])
        return Jet(np.add.reduceat(prod, starts, axis=0), a.B, o)
    if isinstance(a, Jet):
        return a._like(np.einsum(f"Z...{sa},...{sb}->Z...{out}", a.c, np.asarray(b)))
    if isinstance(b, Jet):
        return b._like(np.einsum(f"...{sa},Z...{sb}->Z...{out}", np.asarray(a), b.c))
    return np.einsum(f"...{sa},...{sb}->...{out}", a, b)


def inverse(A: Jet) -> Jet:
    """Matrix inverse of a jet of square matrices (Neumann series)."""
    A0inv = np.linalg.inv(A.value)
    N = A._like(A.c.copy())
    N.c[0] = 0.0
    M = contract("ij,jk->ik", A0inv, N)  # A0^{-1} N, nilpotent
    result = Jet.constant(A0inv, A.B, A.order)
    term = result
    for _ in range(A.order):
        term = -contract("ij,jk->ik", M, term)
        result = result + term
    return result


def value(x):
    return x.value if isinstance(x, Jet) else np.asarray(x)
