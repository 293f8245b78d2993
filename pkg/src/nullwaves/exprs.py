"""Closed-form scalar field expressions on the chart (t, x1, x2, x3).

A deliberately small grammar: constants, coordinates, sums, products,
integer powers, exp, sin and cos.  Every expression can be differentiated
exactly inside the grammar (``cos`` is included so that ``sin`` closes under
``d``), evaluated with numpy broadcasting over point arrays, and serialized
back to the text form used in experiment config files.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

COORD_NAMES = ("t", "x1", "x2", "x3")
_COORD_ALIASES = {"t": 0, "x0": 0, "x1": 1, "x2": 2, "x3": 3}


class ExprError(ValueError):
    """Malformed expression text or operation outside the grammar."""


@dataclass(frozen=True)
class Expr:
    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Coord(Expr):
    axis: int


@dataclass(frozen=True)
class Add(Expr):
    terms: tuple


@dataclass(frozen=True)
class Mul(Expr):
    factors: tuple


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    n: int


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr


@dataclass(frozen=True)
class Cos(Expr):
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def const(v) -> Const:
    return Const(float(v))


def add(*terms) -> Expr:
    flat = []
    c = 0.0
    for term in terms:
        if isinstance(term, Add):
            flat.extend(term.terms)
        else:
            flat.append(term)
    out = []
    for term in flat:
        if isinstance(term, Const):
            c += term.value
        else:
            out.append(term)
    if c != 0.0 or not out:
        out.append(Const(c))
    if len(out) == 1:
        return out[0]
    return Add(tuple(out))


def mul(*factors) -> Expr:
    flat = []
    c = 1.0
    for f in factors:
        if isinstance(f, Mul):
            flat.extend(f.factors)
        else:
            flat.append(f)
    out = []
    for f in flat:
        if isinstance(f, Const):
            c *= f.value
        else:
            out.append(f)
    if c == 0.0:
        return ZERO
    if c != 1.0 or not out:
        out.insert(0, Const(c))
    if len(out) == 1:
        return out[0]
    return Mul(tuple(out))


def pow_(base: Expr, n: int) -> Expr:
    if not isinstance(n, int) or n < 0:
        raise ExprError(f"only nonnegative integer powers are in the grammar, got {n!r}")
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value**n)
    return Pow(base, n)


def neg(e: Expr) -> Expr:
    return mul(Const(-1.0), e)


def evaluate(e: Expr, coords):
    """Evaluate at a point or arrays of points.

    ``coords`` is a sequence of four scalars or broadcastable numpy arrays
    (t, x1, x2, x3).
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Coord):
        return coords[e.axis]
    if isinstance(e, Add):
        total = evaluate(e.terms[0], coords)
        for term in e.terms[1:]:
            total = total + evaluate(term, coords)
        return total
    if isinstance(e, Mul):
        total = evaluate(e.factors[0], coords)
        for f in e.factors[1:]:
            total = total * evaluate(f, coords)
        return total
    if isinstance(e, Pow):
        return evaluate(e.base, coords) ** e.n
    if isinstance(e, Exp):
        return np.exp(evaluate(e.arg, coords))
    if isinstance(e, Sin):
        return np.sin(evaluate(e.arg, coords))
    if isinstance(e, Cos):
        return np.cos(evaluate(e.arg, coords))
    raise ExprError(f"unknown node {e!r}")


def diff(e: Expr, axis: int) -> Expr:
    """Exact partial derivative with respect to coordinate ``axis``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Coord):
        return ONE if e.axis == axis else ZERO
    if isinstance(e, Add):
        return add(*(diff(t, axis) for t in e.terms))
    if isinstance(e, Mul):
        parts = []
        for i, f in enumerate(e.factors):
            rest = e.factors[:i] + e.factors[i + 1 :]
            parts.append(mul(diff(f, axis), *rest))
        return add(*parts)
    if isinstance(e, Pow):
        return mul(Const(float(e.n)), pow_(e.base, e.n - 1), diff(e.base, axis))
    if isinstance(e, Exp):
        return mul(e, diff(e.arg, axis))
    if isinstance(e, Sin):
        return mul(Cos(e.arg), diff(e.arg, axis))
    if isinstance(e, Cos):
        return mul(Const(-1.0), Sin(e.arg), diff(e.arg, axis))
    raise ExprError(f"unknown node {e!r}")


def depends_on(e: Expr) -> frozenset:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Coord):
        return frozenset((e.axis,))
    if isinstance(e, Add):
        return frozenset().union(*(depends_on(t) for t in e.terms))
    if isinstance(e, Mul):
        return frozenset().union(*(depends_on(f) for f in e.factors))
    if isinstance(e, Pow):
        return depends_on(e.base)
    return depends_on(e.arg)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


# --- serialization -----------------------------------------------------------

def to_text(e: Expr) -> str:
    return _text(e, 0)


def _text(e: Expr, prec: int) -> str:
    if isinstance(e, Const):
        s = repr(e.value)
        if e.value < 0 and prec > 1:
            s = f"({s})"
        return s
    if isinstance(e, Coord):
        return COORD_NAMES[e.axis]
    if isinstance(e, Add):
        s = " + ".join(_text(t, 1) for t in e.terms)
        return f"({s})" if prec > 1 else s
    if isinstance(e, Mul):
        s = "*".join(_text(f, 2) for f in e.factors)
        return f"({s})" if prec > 2 else s
    if isinstance(e, Pow):
        return f"{_text(e.base, 3)}**{e.n}"
    if isinstance(e, Exp):
        return f"exp({_text(e.arg, 0)})"
    if isinstance(e, Sin):
        return f"sin({_text(e.arg, 0)})"
    if isinstance(e, Cos):
        return f"cos({_text(e.arg, 0)})"
    raise ExprError(f"unknown node {e!r}")


# --- parser ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/()]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            raise ExprError(f"cannot tokenize {rest[:12]!r} at column {pos + 1}")
        pos = m.end()
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, col = self.next()
        if val != value:
            raise ExprError(f"expected {value!r} at column {col + 1}, got {val!r}")

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, col = self.peek()
        if kind != "end":
            raise ExprError(f"trailing input {val!r} at column {col + 1}")
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            t = self.term()
            terms.append(t if op == "+" else neg(t))
        return add(*terms)

    def term(self) -> Expr:
        factors = [self.factor()]
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            f = self.factor()
            if op == "/":
                if not isinstance(f, Const) or f.value == 0.0:
                    raise ExprError("division is only allowed by a nonzero constant")
                f = Const(1.0 / f.value)
            factors.append(f)
        return mul(*factors)

    def factor(self) -> Expr:
        # unary minus binds more loosely than ** (python semantics)
        if self.peek()[1] == "-":
            self.next()
            return neg(self.factor())
        if self.peek()[1] == "+":
            self.next()
            return self.factor()
        base = self.atom()
        if self.peek()[1] == "**":
            self.next()
            kind, val, col = self.next()
            sign = 1
            if val == "-":
                sign = -1
                kind, val, col = self.next()
            if kind != "num" or "." in val or "e" in val or "E" in val:
                raise ExprError(f"exponent must be an integer at column {col + 1}")
            return pow_(base, sign * int(val))
        return base

    def atom(self) -> Expr:
        kind, val, col = self.next()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in _COORD_ALIASES:
                return Coord(_COORD_ALIASES[val])
            if val == "pi":
                return Const(math.pi)
            if val in ("exp", "sin", "cos"):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                node = {"exp": Exp, "sin": Sin, "cos": Cos}[val]
                if isinstance(arg, Const):
                    fn = {"exp": math.exp, "sin": math.sin, "cos": math.cos}[val]
                    return Const(fn(arg.value))
                return node(arg)
            raise ExprError(f"unknown name {val!r} at column {col + 1}")
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprError(f"unexpected {val!r} at column {col + 1}")


def parse(text) -> Expr:
    """Parse expression text; floats and Expr nodes pass through."""
    if isinstance(text, Expr):
        return text
    if isinstance(text, (int, float)):
        return Const(float(text))
    return _Parser(text).parse()
