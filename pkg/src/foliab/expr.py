"""Small arithmetic expression language for metric coefficients.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'

Variables are ``x1 .. xn`` (one-based). Functions are ``exp``, ``sin``,
``cos``, ``sinh``, ``cosh`` and ``sqrt``. Compiled expressions accept
floats, numpy arrays or :class:`foliab.jets.Jet` objects, so the same
source evaluates values and exact Taylor coefficients.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

FUNCTIONS = ("exp", "sin", "cos", "sinh", "cosh", "sqrt")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


class ParseError(ValueError):
    """Raised for malformed expressions; carries the character offset."""

    def __init__(self, message: str, source: str, pos: int):
        super().__init__(f"{message} at offset {pos} in {source!r}")
        self.source = source
        self.pos = pos


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero-based


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Node"


Node = Union[Num, Var, Unary, Bin, Call]


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    src_stripped = src.rstrip()
    while pos < len(src_stripped):
        m = _TOKEN.match(src_stripped, pos)
        if m is None or m.end() == pos:
            bad = pos + len(src_stripped[pos:]) - len(src_stripped[pos:].lstrip())
            raise ParseError("unexpected character", src, bad)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(src_stripped)))
    return out


class _Parser:
    def __init__(self, src: str, n_vars: int | None):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.n_vars = n_vars

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", self.src, pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", self.src, pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            arg = self.unary()
            return arg if op == "+" else Unary("-", arg)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            m = re.fullmatch(r"x([1-9]\d*)", val)
            if m is None:
                raise ParseError(f"unknown identifier {val!r}", self.src, pos)
            idx = int(m.group(1)) - 1
            if self.n_vars is not None and idx >= self.n_vars:
                raise ParseError(f"variable {val!r} exceeds dimension {self.n_vars}", self.src, pos)
            return Var(idx)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected token {val or 'end of input'!r}", self.src, pos)


def parse(src: str, n_vars: int | None = None) -> Node:
    if not isinstance(src, str):
        raise ParseError("expression must be a string", repr(src), 0)
    return _Parser(src, n_vars).parse()


# Function dispatch: jets carry their own methods, everything else goes to numpy.
def _fn(name: str) -> Callable:
    npf = getattr(np, name)

    def apply(x):
        meth = getattr(x, name, None)
        if meth is not None and not isinstance(x, (np.ndarray, np.generic)):
            return meth()
        return npf(x)

    return apply


_DISPATCH = {name: _fn(name) for name in FUNCTIONS}


def _pow(a, b):
    if isinstance(b, (int, float)) and float(b).is_integer() and not isinstance(a, (int, float)):
        return a ** int(b)
    return a ** b


def _compile(node: Node) -> Callable[[Sequence], object]:
    if isinstance(node, Num):
        v = node.value
        return lambda xs: v
    if isinstance(node, Var):
        i = node.index
        return lambda xs: xs[i]
    if isinstance(node, Unary):
        f = _compile(node.arg)
        return lambda xs: -f(xs)
    if isinstance(node, Call):
        f, g = _compile(node.arg), _DISPATCH[node.name]
        return lambda xs: g(f(xs))
    left, right = _compile(node.left), _compile(node.right)
    if node.op == "+":
        return lambda xs: left(xs) + right(xs)
    if node.op == "-":
        return lambda xs: left(xs) - right(xs)
    if node.op == "*":
        return lambda xs: left(xs) * right(xs)
    if node.op == "/":
        return lambda xs: left(xs) / right(xs)
    return lambda xs: _pow(left(xs), right(xs))


def free_vars(node: Node) -> set[int]:
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Unary, Call)):
        return free_vars(node.arg)
    return free_vars(node.left) | free_vars(node.right)


@dataclass(frozen=True)
class Expr:
    """A parsed expression together with its compiled evaluator."""

    source: str
    node: Node
    fn: Callable

    @classmethod
    def parse(cls, src: str, n_vars: int | None = None) -> "Expr":
        node = parse(src, n_vars)
        return cls(src, node, _compile(node))

    @property
    def is_constant(self) -> bool:
        return not free_vars(self.node)

    def __call__(self, xs: Sequence):
        return self.fn(xs)
