"""Principal-symbol interaction coefficients on light-like covector quadruples.

Composition rules implemented here, with every 2*pi prefactor carried
explicitly:

* a pointwise product of conormal factors contributes (2pi)^-1 per binary
  product,
* an interior causal-inverse application divides by |sum of the factor
  covectors|^2 in the dual metric,
* a repeated source inside one product becomes a fiber self-convolution with
  one (2pi)^-1/2 per convolution,
* the outermost causal inverse contributes the common flow-out factor, which
  is treated as an abstract positive constant and never evaluated here.

Norms of covector sums are always assembled from the pairwise Gram matrix;
summing components first loses all significant digits on the rho family
(the pair products reach rho^11 while the components are O(1)).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import terms as terms_mod
from .exprs import Exp as ExprExp, const as expr_const, mul as expr_mul, parse
from .metrics import MetricSpec, Point4, covector, metric_fields, point
from .terms import Apply, InteractionTerm, Leaf, TaylorNonlinearity, sexp

TWO_PI = 2.0 * math.pi
TAU_NULL = 1e-9
TAU_INDEP = 1e-6


class SingularDenominator(ArithmeticError):
    """An interior causal inverse was evaluated at a (near-)light-like covector."""

    def __init__(self, where, value):
        super().__init__(f"|sum|^2 = {value:.3e} at {where}")
        self.where = where
        self.value = value


class UnsupportedConvolution(ValueError):
    """Repeated source spans an interior causal-inverse boundary.

    The exact symbol then involves a kernel-weighted partial convolution; the
    pure cubic case of that pattern is served by quintic_symbol.
    """


@dataclass(frozen=True)
class CovectorQuadruple:
    """Four light-like covectors at q0 plus their sum and pairwise Gram matrix.

    ``exact_sums`` optionally overrides |sum over an index set|^2 with a
    closed-form value for families whose Gram entries still cancel (the rho
    family's zeta1+zeta2+zeta3 has norm ~ 2 rho^10 out of O(rho) entries).
    """

    base: Point4
    zetas: tuple                # 4 x (4,) component tuples
    gram: np.ndarray            # (4,4) pairwise dual products
    metric_id: str
    zeta_is_null: bool
    exact_sums: tuple = ()      # of (frozenset, value)

    @property
    def zeta(self) -> np.ndarray:
        return np.asarray(self.zetas).sum(axis=0)

    def covectors(self):
        return tuple(covector(self.base, z) for z in self.zetas)

    def norm_sq_of_sum(self, idx) -> float:
        """|sum_{i in idx} zeta_i|^2_{g*} from the Gram matrix (cancellation-free)."""
        key = frozenset(idx)
        for k, v in self.exact_sums:
            if k == key:
                return v
        return float(sum(self.gram[i, j] for i in sorted(key) for j in sorted(key)))


def make_quadruple(spec: MetricSpec, q0, zetas, tau_null=TAU_NULL, tau_indep=TAU_INDEP,
                   gram=None, exact_sums=()) -> CovectorQuadruple:
    """Validate and build a quadruple: each zeta_i null, linearly independent."""
    if not isinstance(q0, Point4):
        q0 = point(q0)
    Z = np.asarray(zetas, dtype=float)
    if Z.shape != (4, 4):
        raise ValueError("need exactly four covectors")
    g_inv = metric_fields(spec, [np.asarray(c) for c in q0.coords])["g_inv"]
    if gram is None:
        gram = Z @ g_inv @ Z.T
    gram = np.asarray(gram, dtype=float)
    for i in range(4):
        ref = float(Z[i] @ Z[i])
        if ref == 0.0 or abs(gram[i, i]) > tau_null * ref:
            raise ValueError(f"zeta_{i+1} is not light-like: |P| = {abs(gram[i, i]):.2e}")
    scale = np.linalg.norm(Z, axis=1).prod()
    if abs(np.linalg.det(Z)) < tau_indep * scale:
        raise ValueError("covectors are not linearly independent")
    total = Z.sum(axis=0)
    nsq = float(gram.sum())
    for k, v in exact_sums:
        if k == frozenset(range(4)):
            nsq = v
    is_null = abs(nsq) <= 1e-10 * float(total @ total)
    gram.flags.writeable = False
    return CovectorQuadruple(q0, tuple(map(tuple, Z)), gram, spec.name, is_null, tuple(exact_sums))


def rho_quadruple(rho: float) -> CovectorQuadruple:
    """The one-parameter Minkowski family used for the small-rho asymptotics.

    Directions (1,0,1,0), (1,0,0,1), (-1,-1,0,0), (1,-1,0,0) with weights
    1, alpha2, rho, rho^10; alpha2 solves 2 sum_{i<j} g(zeta_i, zeta_j) = 0
    exactly, so the sum is light-like to machine precision.
    """
    if not 0.0 < rho <= 0.3:
        raise ValueError(f"rho must be in (0, 0.3], got {rho}")
    a3, a4 = rho, rho**10
    if 1.0 - a3 - a4 <= 0.0:
        raise ValueError("rho too large")
    a2 = (a3 - a4 + 2.0 * a3 * a4) / (1.0 - a3 + a4)
    xi = np.array([
        (1.0, 0.0, 1.0, 0.0),
        (1.0, 0.0, 0.0, 1.0),
        (-1.0, -1.0, 0.0, 0.0),
        (1.0, -1.0, 0.0, 0.0),
    ])
    al = np.array([1.0, a2, a3, a4])
    Z = xi * al[:, None]
    # exact dual products of the integer directions (Minkowski)
    gxi = np.array([
        [0.0, -1.0, 1.0, -1.0],
        [-1.0, 0.0, 1.0, -1.0],
        [1.0, 1.0, 0.0, 2.0],
        [-1.0, -1.0, 2.0, 0.0],
    ])
    gram = np.outer(al, al) * gxi
    # |z1+z2+z3|^2 = 2(g12+g13+g23) = 2 rho^10 (1 - 2 rho + 2 rho^2)/(1 - rho + rho^10):
    # the Gram entries cancel to O(rho^10), so the sum needs its closed form.
    triple123 = 2.0 * rho**10 * (1.0 - 2.0 * rho + 2.0 * rho**2) / (1.0 - rho + rho**10)
    exact = (
        (frozenset((0, 1, 2)), triple123),
        (frozenset((0, 1, 2, 3)), 0.0),
    )
    return make_quadruple(MetricSpec.minkowski(), (0.0, 0.0, 0.0, 0.0), Z, gram=gram,
                          exact_sums=exact)


def random_quadruple(rng, spec=None, q0=(0.0, 0.0, 0.0, 0.0), min_pair=0.05,
                     max_tries=200) -> CovectorQuadruple:
    """Random valid quadruple with all pair/triple sums bounded away from null.

    Rejection-sampled so the interior denominators of the symbol formulas are
    well-conditioned; deterministic given the rng state.
    """
    if spec is None:
        spec = MetricSpec.minkowski()
    if not isinstance(q0, Point4):
        q0 = point(q0)
    g_inv = metric_fields(spec, [np.asarray(c) for c in q0.coords])["g_inv"]
    for _ in range(max_tries):
        dirs = rng.normal(size=(4, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        scales = rng.uniform(0.3, 1.5, size=4)
        Z = []
        for d, s in zip(dirs, scales):
            k = np.array([0.0, *d]) * s
            ksq = float(k @ g_inv @ k)
            xi0 = math.sqrt(-ksq / g_inv[0, 0])
            if g_inv[0, 0] < 0:
                xi0 = -xi0
            Z.append(np.array([xi0, *k[1:]]))
        Z = np.stack(Z)
        gram = Z @ g_inv @ Z.T
        ok = True
        for r in (2, 3):
            for idx in itertools.combinations(range(4), r):
                if abs(sum(gram[i, j] for i in idx for j in idx)) < min_pair:
                    ok = False
        if ok and abs(np.linalg.det(Z)) > 1e-3:
            return make_quadruple(spec, q0, Z, gram=gram)
    raise RuntimeError("could not sample a well-conditioned quadruple")


# --- symbol profiles -----------------------------------------------------------

@dataclass(frozen=True)
class SymbolProfile:
    """Nonnegative symbol values on the fiber {alpha * zeta_1}, alpha > 0."""

    alphas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if a.ndim != 1 or a.shape != v.shape or len(a) < 4:
            raise ValueError("profile needs matching 1d grids of length >= 4")
        if a[0] <= 0.0 or np.any(np.diff(a) <= 0):
            raise ValueError("alphas must be increasing and strictly positive")
        if np.any(v < 0):
            raise ValueError("profile values must be nonnegative")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "values", v)

    @staticmethod
    def bump(alpha_min=0.2, alpha_max=0.8, n=401, height=1.0) -> "SymbolProfile":
        a = np.linspace(alpha_min, alpha_max, n)
        s = 2.0 * (a - alpha_min) / (alpha_max - alpha_min) - 1.0
        with np.errstate(divide="ignore", over="ignore"):
            v = np.where(np.abs(s) < 1.0, np.exp(1.0 - 1.0 / np.maximum(1e-300, 1.0 - s * s)), 0.0)
        return SymbolProfile(a, height * v)

    def __call__(self, alpha):
        return np.interp(alpha, self.alphas, self.values, left=0.0, right=0.0)

    def convolve_power(self, m, at=1.0) -> float:
        """(m+1)-fold product's convolution value at fiber point ``at``.

        m = number of convolution integrals; trapezoid on the profile grid.
        """
        if m < 1:
            return float(self(at))
        cur_grid = self.alphas
        cur_vals = self.values
        for _ in range(m - 1):
            # convolve profile with current table onto a grid spanning the sum support
            lo = cur_grid[0] + self.alphas[0]
            hi = cur_grid[-1] + self.alphas[-1]
            n = max(len(cur_grid), len(self.alphas)) * 2
            grid = np.linspace(lo, hi, n)
            vals = np.array([
                np.trapezoid(self(g - cur_grid) * cur_vals, cur_grid) for g in grid
            ])
            cur_grid, cur_vals = grid, vals
        interp = np.interp(at - self.alphas, cur_grid, cur_vals, left=0.0, right=0.0)
        return float(np.trapezoid(interp * self.values, self.alphas))

    def weighted_self_convolution(self, at, weight) -> float:
        """int p(at - a) p(a) weight(a) da by trapezoid on the profile grid."""
        w = weight(self.alphas)
        return float(np.trapezoid(self(at - self.alphas) * self.values * w, self.alphas))


# --- recursive evaluation -------------------------------------------------------

def eval_interaction_coefficient(term: InteractionTerm, quad: CovectorQuadruple,
                                 coeff_values: dict, profiles=None, symbols=None,
                                 denominator_floor=1e-300, near_tol=None,
                                 near_flags=None) -> float:
    """Value of one term (multiplier included) on the quadruple.

    ``coeff_values`` maps coefficient order k -> h_k(q0).  ``symbols`` maps
    source index -> principal symbol value A_i (default 1).  ``profiles`` maps
    source index -> SymbolProfile, required when a source repeats inside one
    product.  The outermost causal inverse is the common flow-out factor and
    contributes nothing.
    """
    symbols = symbols or {}
    profiles = profiles or {}
    tree = term.tree
    if not isinstance(tree, Apply):
        raise ValueError("term root must be a causal-inverse application")
    val, _ = _eval_node(tree.child, quad, coeff_values, profiles, symbols,
                        denominator_floor, near_tol, near_flags)
    return float(term.multiplier) * val


def _eval_node(node, quad, coeffs, profiles, symbols, floor, near_tol, near_flags):
    """Returns (value, frozenset of distinct sources below)."""
    if isinstance(node, Apply):
        val, idx = _eval_node(node.child, quad, coeffs, profiles, symbols,
                              floor, near_tol, near_flags)
        denom = quad.norm_sq_of_sum(tuple(i - 1 for i in sorted(idx)))
        if abs(denom) < floor:
            raise SingularDenominator(sexp(node), denom)
        if near_tol is not None and abs(denom) < near_tol and near_flags is not None:
            near_flags.append((sexp(node), denom))
        return val / denom, idx
    if isinstance(node, Leaf):
        return symbols.get(node.src, 1.0), frozenset((node.src,))
    # product node
    counts = {}
    factor_vals = []
    seen = frozenset()
    for c in node.children:
        if isinstance(c, Leaf):
            counts[c.src] = counts.get(c.src, 0) + 1
        else:
            v, idx = _eval_node(c, quad, coeffs, profiles, symbols, floor, near_tol, near_flags)
            if idx & seen or any(s in counts for s in idx):
                raise UnsupportedConvolution(
                    f"repeated source across a causal-inverse boundary in {sexp(node)}")
            seen |= idx
            factor_vals.append(v)
    for src, m in sorted(counts.items()):
        if src in seen:
            raise UnsupportedConvolution(
                f"repeated source across a causal-inverse boundary in {sexp(node)}")
        seen |= {src}
        if m == 1:
            factor_vals.append(symbols.get(src, 1.0))
        else:
            if src not in profiles:
                raise ValueError(f"source {src} repeats {m} times; a SymbolProfile is required")
            conv = profiles[src].convolve_power(m - 1, at=1.0)
            factor_vals.append(TWO_PI ** (-(m - 1) / 2.0) * conv)
    n_factors = len(factor_vals)
    value = coeffs.get(node.order, 0.0) * TWO_PI ** (-(n_factors - 1))
    for v in factor_vals:
        value *= v
    return value, seen


# --- closed forms ----------------------------------------------------------------

CASES = ("a", "b", "c")


def _guard(quad, idx, floor, label):
    denom = quad.norm_sq_of_sum(idx)
    if abs(denom) < floor:
        raise SingularDenominator(label, denom)
    return denom


def P_case(case: str, quad: CovectorQuadruple, coeff_values: dict,
           denominator_floor=1e-300) -> float:
    """Closed-form interaction coefficient of the three leading cases.

    case "a": quartic coefficient only, -4! (2pi)^-3 h4;
    case "b": quadratic-cubic pair, (2pi)^-3 h2 h3 * permutation sum of
              3/|pair|^2 + 2/|triple|^2;
    case "c": quadratic only, -(2pi)^-3 h2^3 * permutation sum of
              4/(|triple|^2 |pair|^2) + 1/(|pair|^2 |pair|^2).

    All permutation sums run over the 24 orderings of (1,2,3,4); this matches
    the signed sum of the generated order-4 trees exactly.
    """
    if case == "a":
        return -24.0 * TWO_PI ** (-3) * coeff_values[4]
    total = 0.0
    if case == "b":
        for (i, j, k, l) in itertools.permutations(range(4)):
            pair = _guard(quad, (k, l), denominator_floor, f"zeta{k+1}+zeta{l+1}")
            triple = _guard(quad, (j, k, l), denominator_floor, f"zeta{j+1}+zeta{k+1}+zeta{l+1}")
            total += 3.0 / pair + 2.0 / triple
        return TWO_PI ** (-3) * coeff_values[2] * coeff_values[3] * total
    if case == "c":
        for (i, j, k, l) in itertools.permutations(range(4)):
            pair_kl = _guard(quad, (k, l), denominator_floor, f"zeta{k+1}+zeta{l+1}")
            pair_ij = _guard(quad, (i, j), denominator_floor, f"zeta{i+1}+zeta{j+1}")
            triple = _guard(quad, (j, k, l), denominator_floor, f"zeta{j+1}+zeta{k+1}+zeta{l+1}")
            total += 4.0 / (triple * pair_kl) + 1.0 / (pair_ij * pair_kl)
        return -(TWO_PI ** (-3)) * coeff_values[2] ** 3 * total
    raise ValueError(f"case must be one of {CASES}, got {case!r}")


def case_nonlinearity(case: str, coeff_values: dict) -> TaylorNonlinearity:
    """The Taylor data whose order-4 terms realize each closed-form case."""
    if case == "a":
        return TaylorNonlinearity.from_dict({4: coeff_values[4]})
    if case == "b":
        return TaylorNonlinearity.from_dict({2: coeff_values[2], 3: coeff_values[3]})
    if case == "c":
        return TaylorNonlinearity.from_dict({2: coeff_values[2]})
    raise ValueError(case)


def P_case_from_trees(case: str, quad: CovectorQuadruple, coeff_values: dict) -> float:
    """Independent route to P_case: sum the generated trees over all 24
    source orderings, keeping only the leading terms (minimal number of
    interior causal-inverse applications, per the singularity-order hierarchy).
    """
    H = case_nonlinearity(case, coeff_values)
    reps = terms_mod.generate_expansion_terms(H, (1, 1, 1, 1))
    depths = {t: terms_mod.interior_applies(t.tree) for t in reps}
    dmin = min(depths.values())
    leading = [t for t in reps if depths[t] == dmin]
    full = terms_mod.expand_over_sources(leading, (1, 1, 1, 1))
    total = 0.0
    for tree, mult in full.items():
        t = InteractionTerm(tree, mult, (1, 1, 1, 1))
        total += eval_interaction_coefficient(t, quad, coeff_values)
    return total


# --- quintic symbol (pure cubic nonlinearity) -------------------------------------

def quintic_symbol(quad: CovectorQuadruple, b_value: float, profile: SymbolProfile,
                   symbols=None, denominator_floor=1e-300) -> float:
    """Leading symbol of the fifth-order term for a pure cubic nonlinearity.

    Closed-form part: (2pi)^{-7/2} b^2 [18/|z2+z3+z4|^2 + 6 sum_k 1/|z1+zk|^2]
    times the self-convolution of the source-1 profile at its fiber point and
    the product of the other symbols; plus kernel-weighted self-convolutions
    2 * sum over orderings (i,j,k) of (2,3,4) of
    int p(1-a) p(a) / |a z1 + zj + zk|^2 da.
    """
    symbols = symbols or {}
    A = [symbols.get(i, 1.0) for i in (2, 3, 4)]
    prod_A = A[0] * A[1] * A[2]
    conv1 = profile.convolve_power(1, at=1.0)
    triple = _guard(quad, (1, 2, 3), denominator_floor, "zeta2+zeta3+zeta4")
    closed = 18.0 / triple
    for k in (1, 2, 3):
        closed += 6.0 / _guard(quad, (0, k), denominator_floor, f"zeta1+zeta{k+1}")
    total = closed * conv1
    g = quad.gram
    for (i, j, k) in itertools.permutations((1, 2, 3)):
        # |alpha zeta1 + zeta_{j+1} + zeta_{k+1}|^2 as a quadratic in alpha
        c2 = g[0, 0]
        c1 = 2.0 * (g[0, j] + g[0, k])
        c0 = g[j, j] + g[k, k] + 2.0 * g[j, k]

        def kernel(a, c2=c2, c1=c1, c0=c0):
            return c2 * a * a + c1 * a + c0

        kv = kernel(profile.alphas)
        if np.any(np.abs(kv) < denominator_floor):
            bad = float(profile.alphas[int(np.argmin(np.abs(kv)))])
            raise SingularDenominator(f"alpha*zeta1+zeta{j+1}+zeta{k+1} at alpha={bad}", 0.0)
        total += 2.0 * profile.weighted_self_convolution(1.0, lambda a: 1.0 / kernel(a))
    return TWO_PI ** (-3.5) * b_value**2 * prod_A * total


def quintic_reference(quad: CovectorQuadruple, b_value: float, profile: SymbolProfile,
                      symbols=None, rho=None) -> float:
    """The leading-order reference -3 rho^-10 (2pi)^{-7/2} b^2 conv1 prod A."""
    symbols = symbols or {}
    prod_A = symbols.get(2, 1.0) * symbols.get(3, 1.0) * symbols.get(4, 1.0)
    conv1 = profile.convolve_power(1, at=1.0)
    return -3.0 * rho ** (-10) * TWO_PI ** (-3.5) * b_value**2 * conv1 * prod_A


# --- asymptotics fitting -----------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticsReport:
    case: str
    rhos: np.ndarray
    values: np.ndarray
    exponent: float = math.nan
    coefficient: float = math.nan
    residual: float = math.nan

    def __post_init__(self):
        r = np.asarray(self.rhos, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if np.any(np.diff(r) >= 0):
            raise ValueError("rho values must be strictly decreasing")
        object.__setattr__(self, "rhos", r)
        object.__setattr__(self, "values", v)


def fit_leading_order(report: AsymptoticsReport, decade=10.0):
    """Least-squares fit of log|P| vs log rho over the last decade.

    Returns (exponent, signed coefficient, rms residual).  All fitted values
    must share one sign; a sign change means the sweep is not yet asymptotic.
    """
    r, v = report.rhos, report.values
    mask = r <= decade * r.min() * (1 + 1e-12)
    r, v = r[mask], v[mask]
    if len(r) < 4:
        raise ValueError("need at least 4 data points in the fitting decade")
    signs = np.sign(v)
    if np.any(signs == 0) or len(set(signs.tolist())) != 1:
        raise ValueError("data changes sign; rho range is not asymptotic")
    A = np.vstack([np.log(r), np.ones_like(r)]).T
    sol, *_ = np.linalg.lstsq(A, np.log(np.abs(v)), rcond=None)
    expo, logc = float(sol[0]), float(sol[1])
    resid = float(np.sqrt(np.mean((A @ sol - np.log(np.abs(v))) ** 2)))
    return expo, float(signs[0] * math.exp(logc)), resid


def fitted_report(case, rhos, values, decade=10.0) -> AsymptoticsReport:
    rep = AsymptoticsReport(case, np.asarray(rhos), np.asarray(values))
    expo, coeff, resid = fit_leading_order(rep, decade=decade)
    return AsymptoticsReport(case, rep.rhos, rep.values, expo, coeff, resid)


# --- gauge transformation of the nonlinearity ---------------------------------------

def gauge_transform_H(gamma, H: TaylorNonlinearity) -> TaylorNonlinearity:
    """h_k -> e^{(k-3) gamma} h_k, the conformal gauge action on Taylor data."""
    gamma = parse(gamma)
    out = {}
    for k, e in H.coeffs:
        weight = ExprExp(expr_mul(expr_const(float(k - 3)), gamma))
        out[k] = expr_mul(weight, e)
    return TaylorNonlinearity.from_dict(out)
