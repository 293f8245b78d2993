"""Expansion terms of the small-source iteration u = v - Qinv(H(x, u)).

The solution of the semilinear problem with source sum_i eps_i f_i expands in
the eps variables; every coefficient is a signed tree of pointwise products
(weighted by the Taylor coefficients h_k of H) and applications of the causal
inverse.  This module generates those trees.

Two layers:

* shape trees over anonymous source slots, produced by iterating the
  fixed-point map with exact rational multipliers, and
* labeled trees, where a multi-index (m1, m2, m3, m4) assigns concrete
  sources to the slots.

``generate_expansion_terms`` returns one canonical representative per shape
(the convention of the explicit low-order formulas: the representative's
multiplier is the iteration multiplier, and the full interaction is the sum
of the representative over all distinct arrangements of the source multiset).
``expand_over_sources`` performs that arrangement sum; multiplying by the
multi-index factorial converts the series coefficient into the mixed
eps-derivative normalization.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

from .exprs import Expr, evaluate, parse


class TermCapError(RuntimeError):
    """Shape generation exceeded the configured term cap."""

    def __init__(self, cap, partial_count):
        super().__init__(f"term cap {cap} exceeded (at least {partial_count} terms)")
        self.partial_count = partial_count


@dataclass(frozen=True)
class TaylorNonlinearity:
    """H(x, z) = sum_k h_k(x) z^k for k in 2..max_order (<= 12)."""

    coeffs: tuple  # of (k, Expr), sorted by k

    @staticmethod
    def from_dict(d) -> "TaylorNonlinearity":
        items = []
        for k in sorted(d):
            if not 2 <= k <= 12:
                raise ValueError(f"coefficient order {k} outside 2..12")
            items.append((int(k), parse(d[k])))
        return TaylorNonlinearity(tuple(items))

    def orders(self):
        return tuple(k for k, _ in self.coeffs)

    def coeff(self, k) -> Expr:
        for kk, e in self.coeffs:
            if kk == k:
                return e
        raise KeyError(k)

    def values_at(self, x) -> dict:
        coords = [c for c in x]
        return {k: float(evaluate(e, coords)) for k, e in self.coeffs}

    def genuinely_nonlinear_at(self, x, tol=0.0) -> bool:
        return any(abs(v) > tol for v in self.values_at(x).values())

    def evaluate_sum(self, x_coords, z):
        """H(x, z) on arrays (z and coordinate arrays broadcast)."""
        total = 0.0
        for k, e in self.coeffs:
            total = total + evaluate(e, x_coords) * z**k
        return total


# --- trees --------------------------------------------------------------------
#
# Leaf(0) is an anonymous slot; Leaf(1..4) a concrete source.  A Prod holds a
# coefficient order k and its factor children (leaves and Apply nodes); an
# Apply is one causal-inverse application.  Roots of generated terms are
# always Apply nodes.

@dataclass(frozen=True)
class Leaf:
    src: int


@dataclass(frozen=True)
class Prod:
    order: int
    children: tuple


@dataclass(frozen=True)
class Apply:
    child: "Prod"


def sexp(node) -> str:
    if isinstance(node, Leaf):
        return f"v{node.src}" if node.src else "v"
    if isinstance(node, Prod):
        inner = " ".join(sexp(c) for c in node.children)
        return f"(h{node.order} {inner})"
    if isinstance(node, Apply):
        return f"(Q {sexp(node.child)})"
    raise TypeError(node)


def canonical(node):
    """Sort product children into canonical order (leaves first, then by text)."""
    if isinstance(node, Leaf):
        return node
    if isinstance(node, Apply):
        return Apply(canonical(node.child))
    kids = tuple(canonical(c) for c in node.children)
    kids = tuple(sorted(kids, key=_child_key))
    return Prod(node.order, kids)


def _child_key(c):
    if isinstance(c, Leaf):
        return (0, c.src, "")
    return (1, 0, sexp(c))


def degree(node) -> int:
    if isinstance(node, Leaf):
        return 1
    if isinstance(node, Apply):
        return degree(node.child)
    return sum(degree(c) for c in node.children)


def leaves(node):
    if isinstance(node, Leaf):
        yield node
    elif isinstance(node, Apply):
        yield from leaves(node.child)
    else:
        for c in node.children:
            yield from leaves(c)


def interior_applies(node, depth=0) -> int:
    """Number of causal-inverse applications below the outermost one."""
    if isinstance(node, Leaf):
        return 0
    if isinstance(node, Apply):
        inner = interior_applies(node.child, depth + 1)
        return inner + (1 if depth > 0 else 0)
    return sum(interior_applies(c, depth) for c in node.children)


@dataclass(frozen=True)
class InteractionTerm:
    """A labeled tree with its rational multiplier and target multi-index."""

    tree: Apply
    multiplier: Fraction
    multi_index: tuple

    def __str__(self):
        return f"{self.multiplier} {sexp(self.tree)}"


# --- shape generation ---------------------------------------------------------

def _pair_products(sum_a, sum_b, max_degree, cap):
    """Product of two term sums; terms are (factors-tuple, degree) keyed dicts.

    A "partial product" here is a tuple of factor nodes destined to become
    children of one Prod.
    """
    out = {}
    for (fa, da), ca in sum_a.items():
        for (fb, db), cb in sum_b.items():
            if da + db > max_degree:
                continue
            key = (tuple(sorted(fa + fb, key=_child_key)), da + db)
            out[key] = out.get(key, Fraction(0)) + ca * cb
            if len(out) > cap:
                raise TermCapError(cap, len(out))
    return out


def _powers(u_terms, k, max_degree, cap):
    """u^k as factor tuples with multiplicities; u_terms: {node: Fraction}."""
    base = {((node,), degree(node)): c for node, c in u_terms.items()}
    acc = base
    for _ in range(k - 1):
        acc = _pair_products(acc, base, max_degree, cap)
    return acc


def expansion_shapes(orders, max_degree, cap=200000) -> dict:
    """Iterate u = v - Q(sum_k h_k u^k) to degree ``max_degree``.

    Returns {canonical shape tree: Fraction multiplier} for degrees 2..max_degree
    (the degree-1 term is the bare leaf and is omitted).
    """
    v = Leaf(0)
    u = {v: Fraction(1)}
    for _ in range(max(1, max_degree - 1)):
        new = {v: Fraction(1)}
        for k in orders:
            if k > max_degree:
                continue
            for (factors, d), mult in _powers(u, k, max_degree, cap).items():
                node = Apply(canonical(Prod(k, factors)))
                new[node] = new.get(node, Fraction(0)) - mult
                if len(new) > cap:
                    raise TermCapError(cap, len(new))
        new = {t: c for t, c in new.items() if c != 0}
        if new == u:
            break
        u = new
    return {t: c for t, c in u.items() if not isinstance(t, Leaf)}


def _assign_sources(node, seq, pos):
    """Replace anonymous leaves by seq[pos:] in traversal order."""
    if isinstance(node, Leaf):
        return Leaf(seq[pos]), pos + 1
    if isinstance(node, Apply):
        child, pos = _assign_sources(node.child, seq, pos)
        return Apply(child), pos
    kids = []
    for c in node.children:
        kid, pos = _assign_sources(c, seq, pos)
        kids.append(kid)
    return Prod(node.order, tuple(kids)), pos


def _source_sequence(multi_index):
    seq = []
    for i, m in enumerate(multi_index, start=1):
        if m < 0:
            raise ValueError("multi-index entries must be >= 0")
        seq.extend([i] * m)
    return tuple(seq)


def generate_expansion_terms(H: TaylorNonlinearity, multi_index, cap=200000):
    """Canonical representative terms at the given multi-index.

    One InteractionTerm per shape of total degree sum(multi_index), with the
    iteration multiplier and the sorted source sequence assigned to slots in
    canonical traversal order.  Deterministic output order (by tree text).
    """
    seq = _source_sequence(multi_index)
    d = len(seq)
    if d > 12:
        raise ValueError("total degree above 12 is not supported")
    if d < 2:
        raise ValueError("need total degree >= 2")
    shapes = expansion_shapes(H.orders(), d, cap)
    out = []
    for shape, mult in shapes.items():
        if degree(shape) != d:
            continue
        labeled, _ = _assign_sources(shape, seq, 0)
        out.append(InteractionTerm(canonical(labeled), mult, tuple(multi_index)))
    out.sort(key=lambda t: sexp(t.tree))
    return out


def expand_over_sources(terms, multi_index) -> dict:
    """Sum the representatives over all distinct source-sequence arrangements.

    Returns {canonical labeled tree: Fraction}; this is the series coefficient
    of the eps monomial.  Multiply by ``derivative_normalization(multi_index)``
    for the mixed-derivative value.
    """
    seq = _source_sequence(multi_index)
    out = {}
    arrangements = sorted(set(itertools.permutations(seq)))
    for term in terms:
        shape = _strip_sources(term.tree)
        for arr in arrangements:
            labeled, _ = _assign_sources(shape, arr, 0)
            labeled = canonical(labeled)
            out[labeled] = out.get(labeled, Fraction(0)) + term.multiplier
    return {t: c for t, c in out.items() if c != 0}


def _strip_sources(node):
    if isinstance(node, Leaf):
        return Leaf(0)
    if isinstance(node, Apply):
        return Apply(_strip_sources(node.child))
    return Prod(node.order, tuple(_strip_sources(c) for c in node.children))


def derivative_normalization(multi_index) -> int:
    """Multi-index factorial: d^m1_e1 ... u = (prod m_i!) * series coefficient."""
    out = 1
    for m in multi_index:
        out *= math.factorial(m)
    return out
