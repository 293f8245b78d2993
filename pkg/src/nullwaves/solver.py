"""Causal finite-difference solver for box_g u + Q u + H(x, u) = f.

The operator is discretized in divergence form with half-node flux
coefficients; the explicit leapfrog march inverts exactly the same stencil,
so apply_box(solve(f)) reproduces f - Q u - H(u) on interior levels to
rounding.  Metrics must satisfy g^{0j} = 0 (all supported families do).  On
1+1 grids the metric is the four-dimensional one restricted to x2 = x3 = 0
and must not depend on x2, x3; the full 4d volume weight is kept, which is
what makes the four-dimensional conformal identities hold on the reduced
grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stepper
from .exprs import evaluate, parse
from .grids import Field, Grid, relative_l2
from .metrics import MetricSpec, metric_fields
from .symbols import gauge_transform_H
from .terms import (Apply, Leaf, Prod, TaylorNonlinearity, derivative_normalization,
                    expand_over_sources, generate_expansion_terms, sexp)

DEFAULT_GUARD = 1e6


class BlowUpError(RuntimeError):
    def __init__(self, level, guard):
        super().__init__(
            f"solution exceeded the blow-up guard {guard:g} at time level {level}; "
            "reduce the source amplitude (the smallness regime was left)"
        )
        self.level = level


def _spatial_offsets(grid: Grid, axis):
    off = [0.0] * grid.spatial_dim
    off[axis] = 0.5
    return tuple(off)


def _fields_on(spec, grid, t_offset=0.0, x_offsets=None, need="g"):
    """Metric fields on grid nodes, with a fast path for static metrics."""
    mesh = grid.mesh(t_offset, x_offsets)
    if spec.is_static() and grid.shape[0] > 1:
        slab = [m[:1] if m.shape[0] == grid.shape[0] else m for m in mesh]
        f = metric_fields(spec, slab, need=need)
        return f, True
    return metric_fields(spec, mesh, need=need), False


def _expand_t(arr, nt):
    """Broadcast a single-time-slab array to nt levels (C-contiguous)."""
    if arr.shape[0] == nt:
        return np.ascontiguousarray(arr)
    target = (nt,) + arr.shape[1:]
    return np.ascontiguousarray(np.broadcast_to(arr, target))


@dataclass
class _Assembled:
    """Grid coefficient tables for one (metric, potential, nonlinearity)."""

    spec: MetricSpec
    grid: Grid
    at_half: np.ndarray
    bxs_half: list
    cross: dict
    w: np.ndarray
    qpot: np.ndarray
    hk: np.ndarray
    powers: np.ndarray
    guard: float = DEFAULT_GUARD

    def march(self, source_values, force_pure=False):
        g = self.grid
        u = np.zeros(g.shape)
        src = np.ascontiguousarray(source_values)
        if g.spatial_dim == 1:
            status = stepper.march_1p1(
                u, self.at_half, self.bxs_half[0], self.w, src, self.qpot,
                self.hk, self.powers, g.dt, g.dx[0], self.guard, force_pure=force_pure)
        else:
            status = stepper.march_1p3(
                u, self.at_half, self.bxs_half, self.cross, self.w, src, self.qpot,
                self.hk, self.powers, g.dt, g.dx, self.guard)
        if status >= 0:
            raise BlowUpError(status, self.guard)
        return u


def _check_metric_for_grid(spec: MetricSpec, grid: Grid):
    deps = spec.depends_on()
    if grid.spatial_dim == 1 and deps & {2, 3}:
        raise ValueError("1+1 grids need a metric independent of x2, x3")


def assemble(spec: MetricSpec, Q, H, grid: Grid, guard=DEFAULT_GUARD,
             yamabe=False) -> _Assembled:
    """Precompute all march coefficients; reused across many solves.

    With ``yamabe=True`` the potential picks up the (1/6) R_g curvature term
    of the conformal wave operator.
    """
    _check_metric_for_grid(spec, grid)
    nt = grid.shape[0]
    fnode, _ = _fields_on(spec, grid)
    g_inv = fnode["g_inv"]
    if np.max(np.abs(g_inv[..., 0, 1:])) > 1e-13:
        raise ValueError("the march requires g^{0j} = 0")
    w = np.sqrt(-fnode["det"])
    # CFL from characteristic speeds of the spatial dual block
    spat = g_inv[..., 1:, 1:][..., : grid.spatial_dim, : grid.spatial_dim]
    lam = np.linalg.eigvalsh(spat)[..., -1]
    speed = np.sqrt(lam / (-g_inv[..., 0, 0]))
    grid.check_cfl([float(np.max(speed))] * grid.spatial_dim)

    fhalf_t, _ = _fields_on(spec, Grid((nt - 1,) + grid.shape[1:], grid.t_max - grid.dt,
                                       grid.lengths), t_offset=0.5)
    wt = np.sqrt(-fhalf_t["det"])
    at_half = _expand_t(wt * fhalf_t["g_inv"][..., 0, 0], nt - 1)

    bxs = []
    cross = {}
    for a in range(grid.spatial_dim):
        fx, _ = _fields_on(spec, grid, x_offsets=_spatial_offsets(grid, a))
        wx = np.sqrt(-fx["det"])
        bxs.append(_expand_t(wx * fx["g_inv"][..., 1 + a, 1 + a], nt))
    if grid.spatial_dim == 3:
        for a in range(3):
            for b in range(a + 1, 3):
                coef = fnode["g_inv"][..., 1 + a, 1 + b]
                if np.max(np.abs(coef)) > 1e-14:
                    cross[(a, b)] = _expand_t(w * coef, nt)
    w_full = _expand_t(np.broadcast_to(w, fnode["g"].shape[:-2]), nt)

    if Q is None:
        qpot = np.zeros(grid.shape)
    else:
        qpot = _expand_t(np.broadcast_to(
            np.asarray(evaluate(parse(Q), grid.mesh()), dtype=float), grid.shape), nt)
    if yamabe:
        qpot = qpot + scalar_curvature_grid(spec, grid) / 6.0
    if H is None or not H.coeffs:
        hk = np.zeros((0,) + grid.shape)
        powers = np.zeros(0, dtype=np.int64)
    else:
        mesh = grid.mesh()
        hk = np.stack([
            _expand_t(np.broadcast_to(np.asarray(evaluate(e, mesh), dtype=float), grid.shape), nt)
            for _, e in H.coeffs
        ])
        powers = np.array([k for k, _ in H.coeffs], dtype=np.int64)
    return _Assembled(spec, grid, at_half, bxs, cross, w_full, qpot,
                      np.ascontiguousarray(hk), powers, guard)


def _require_quiet_start(f: Field):
    if np.max(np.abs(f.values[:2])) != 0.0:
        raise ValueError("source must vanish on the initial slab (first two levels)")


def solve_linear_causal(spec: MetricSpec, Q, f: Field, assembled=None) -> Field:
    """Discrete causal inverse: march with zero past data."""
    _require_quiet_start(f)
    asm = assembled or assemble(spec, Q, None, f.grid)
    return Field(f.grid, asm.march(f.values))


def solve_semilinear(spec: MetricSpec, Q, H: TaylorNonlinearity, f: Field,
                     guard=DEFAULT_GUARD, smallness=None, assembled=None,
                     yamabe=False) -> Field:
    """Explicit march with H evaluated pointwise at the current level."""
    _require_quiet_start(f)
    if smallness is not None:
        nrm = float(np.max(np.abs(f.values)))
        if nrm > smallness:
            raise ValueError(f"source sup-norm {nrm:g} above the smallness threshold {smallness:g}")
    asm = assembled or assemble(spec, Q, H, f.grid, guard, yamabe=yamabe)
    return Field(f.grid, asm.march(f.values))


# --- direct operator application -------------------------------------------------

def apply_box(spec: MetricSpec, field: Field) -> Field:
    """Divergence-form second-order discretization of box_g on interior levels.

    Output rows 0 and nt-1 are zero (the stencil needs both neighbors).
    """
    _check_metric_for_grid(spec, field.grid)
    g = field.grid
    u = field.values
    nt = g.shape[0]
    fnode, _ = _fields_on(spec, g)
    w = _expand_t(np.broadcast_to(np.sqrt(-fnode["det"]), g.shape), nt)
    fhalf_t, _ = _fields_on(spec, Grid((nt - 1,) + g.shape[1:], g.t_max - g.dt, g.lengths),
                            t_offset=0.5)
    at = _expand_t(np.sqrt(-fhalf_t["det"]) * fhalf_t["g_inv"][..., 0, 0], nt - 1)
    out = np.zeros_like(u)
    tpart = (at[1:] * (u[2:] - u[1:-1]) - at[:-1] * (u[1:-1] - u[:-2])) / g.dt**2
    sp = np.zeros_like(u)
    for a in range(g.spatial_dim):
        fx, _ = _fields_on(spec, g, x_offsets=_spatial_offsets(g, a))
        bx = _expand_t(np.sqrt(-fx["det"]) * fx["g_inv"][..., 1 + a, 1 + a], nt)
        ax = a + 1
        sp += (bx * (np.roll(u, -1, axis=ax) - u)
               - np.roll(bx, 1, axis=ax) * (u - np.roll(u, 1, axis=ax))) / g.dx[a] ** 2
    if g.spatial_dim == 3:
        ginv = fnode["g_inv"]
        for a in range(3):
            for b in range(a + 1, 3):
                coef = ginv[..., 1 + a, 1 + b]
                if np.max(np.abs(coef)) <= 1e-14:
                    continue
                c = _expand_t(np.broadcast_to(np.sqrt(-fnode["det"]) * coef, g.shape), nt)
                axa, axb = a + 1, b + 1
                dbu = (np.roll(u, -1, axis=axb) - np.roll(u, 1, axis=axb)) / (2 * g.dx[b])
                dau = (np.roll(u, -1, axis=axa) - np.roll(u, 1, axis=axa)) / (2 * g.dx[a])
                sp += (np.roll(c * dbu, -1, axis=axa) - np.roll(c * dbu, 1, axis=axa)) / (2 * g.dx[a])
                sp += (np.roll(c * dau, -1, axis=axb) - np.roll(c * dau, 1, axis=axb)) / (2 * g.dx[b])
    out[1:-1] = (tpart + sp[1:-1]) / w[1:-1]
    return Field(g, out)


def scalar_curvature_grid(spec: MetricSpec, grid: Grid) -> np.ndarray:
    f, _ = _fields_on(spec, grid, need="curv")
    return _expand_t(np.broadcast_to(f["R"], grid.shape), grid.shape[0])


def yamabe_apply(spec: MetricSpec, field: Field) -> Field:
    """Conformal wave operator: box_g u + (1/6) R_g u."""
    box = apply_box(spec, field)
    R = scalar_curvature_grid(spec, field.grid)
    out = box.values.copy()
    out[1:-1] += (R[1:-1] / 6.0) * field.values[1:-1]
    return Field(field.grid, out)


def conformal_covariance_residual(gamma, field: Field, interior_margin=1) -> float:
    """L2 norm over interior nodes of Y_{e^{2 gamma} eta} u - e^{-3 gamma} Y_eta(e^gamma u)."""
    gamma = parse(gamma)
    grid = field.grid
    base = MetricSpec.minkowski()
    conf = MetricSpec.conformal_minkowski(gamma)
    gam = np.broadcast_to(np.asarray(evaluate(gamma, grid.mesh()), dtype=float), grid.shape)
    lhs = yamabe_apply(conf, field)
    rhs = yamabe_apply(base, Field(grid, np.exp(gam) * field.values))
    resid = lhs.values - np.exp(-3.0 * gam) * rhs.values
    m = interior_margin
    mask = np.zeros(grid.shape)
    mask[m:grid.shape[0] - m] = 1.0
    return grid.norm_l2(resid, mask)


# --- epsilon-expansion extraction -------------------------------------------------

_STENCILS = {
    0: ((0, 1.0),),
    1: ((-1, -0.5), (1, 0.5)),                 # central first derivative * eps
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),       # central second derivative * eps^2
}


def _fd_once(asm: _Assembled, sources, eps, multi_index):
    offsets = []
    weights = []
    for m in multi_index:
        if m not in _STENCILS:
            raise ValueError("multi-index entries up to 2 are supported by the FD stencil")
        offsets.append(_STENCILS[m])
    total = np.zeros(asm.grid.shape)
    n_solves = 0

    def rec(i, amp, wgt):
        nonlocal total, n_solves
        if i == len(offsets):
            f = sum(a * s.values for a, s in zip(amp, sources))
            total += wgt * asm.march(f)
            n_solves += 1
            return
        for off, wv in offsets[i]:
            rec(i + 1, amp + [off * eps[i]], wgt * wv)

    rec(0, [], 1.0)
    scale = 1.0
    for m, e in zip(multi_index, eps):
        scale *= e**m
    return total / scale, n_solves


@dataclass(frozen=True)
class ExpansionResult:
    field: Field
    multi_index: tuple
    method: str
    eps: tuple
    n_solves: int = 0


def extract_expansion_fd(spec: MetricSpec, Q, H, sources, eps, multi_index,
                         richardson=True, guard=DEFAULT_GUARD) -> ExpansionResult:
    """Mixed central eps-differences of the semilinear solution.

    One Richardson level (eps and eps/2) removes the leading O(eps^2)
    truncation term of the even central stencils.
    """
    grid = sources[0].grid
    for s in sources:
        _require_quiet_start(s)
    if np.isscalar(eps):
        eps = (float(eps),) * len(multi_index)
    asm = assemble(spec, Q, H, grid, guard)
    coarse, n1 = _fd_once(asm, sources, eps, multi_index)
    if not richardson:
        return ExpansionResult(Field(grid, coarse), tuple(multi_index), "eps-fd", tuple(eps), n1)
    fine, n2 = _fd_once(asm, sources, tuple(e / 2 for e in eps), multi_index)
    vals = (4.0 * fine - coarse) / 3.0
    return ExpansionResult(Field(grid, vals), tuple(multi_index), "eps-fd+richardson",
                           tuple(eps), n1 + n2)


def formula_expansion(spec: MetricSpec, Q, H: TaylorNonlinearity, sources, multi_index,
                      terms=None) -> ExpansionResult:
    """Evaluate the generated interaction trees with the discrete causal inverse.

    Sum over all source arrangements times the multi-index factorial: the
    mixed-derivative normalization, directly comparable with the eps-FD route.
    """
    grid = sources[0].grid
    asm = assemble(spec, Q, None, grid)
    v = [asm.march(s.values) for s in sources]
    mesh = grid.mesh()
    hvals = {k: np.broadcast_to(np.asarray(evaluate(e, mesh), dtype=float), grid.shape)
             for k, e in H.coeffs}
    if terms is None:
        terms = generate_expansion_terms(H, multi_index)
    full = expand_over_sources(terms, multi_index)
    memo = {}

    def ev(node):
        key = sexp(node)
        if key in memo:
            return memo[key]
        if isinstance(node, Leaf):
            out = v[node.src - 1]
        elif isinstance(node, Prod):
            out = hvals[node.order].copy()
            for c in node.children:
                out = out * ev(c)
        else:  # Apply
            out = asm.march(ev(node.child))
        memo[key] = out
        return out

    total = np.zeros(grid.shape)
    for tree, mult in full.items():
        total += float(mult) * ev(tree)
    total *= derivative_normalization(multi_index)
    n_solves = sum(1 for k in memo if k.startswith("(Q")) + len(sources)
    return ExpansionResult(Field(grid, total), tuple(multi_index), "formula",
                           (), n_solves)


# --- gauge experiments -------------------------------------------------------------

def gauge_experiment(example, gamma, grid: Grid, source: Field, v_mask,
                     b_value=1.0, guard=DEFAULT_GUARD) -> dict:
    """Solve the pair of gauge-related problems and compare on V.

    example "one": quadratic nonlinearity, transformed by the conformal gauge
    rule; example "two": pure cubic (the nonlinearity is gauge-invariant).
    The source must be supported where gamma = 0 (inside V); then the
    transformed source equals the original and the two solutions agree on V
    up to discretization error.
    """
    gamma = parse(gamma)
    base = MetricSpec.minkowski()
    conf = MetricSpec.conformal_minkowski(gamma)
    if example == "two":
        H1 = TaylorNonlinearity.from_dict({3: b_value})
        H2 = H1
    elif example == "one":
        H1 = TaylorNonlinearity.from_dict({2: b_value})
        H2 = gauge_transform_H(gamma, H1)
    else:
        raise ValueError("example must be 'one' or 'two'")
    gam = np.broadcast_to(np.asarray(evaluate(gamma, grid.mesh()), dtype=float), grid.shape)
    if float(np.max(np.abs(gam * (source.values != 0)))) > 1e-12:
        raise ValueError("source must be supported where gamma = 0")
    u1 = solve_semilinear(base, None, H1, source, guard=guard, yamabe=True)
    f2 = Field(grid, np.exp(-3.0 * gam) * source.values)
    u2 = solve_semilinear(conf, None, H2, f2, guard=guard, yamabe=True)
    # gauge transform back: u = e^{gamma} u_tilde; on V gamma = 0
    diff = relative_l2(grid, u1.values, u2.values * np.exp(gam), mask=v_mask)
    return {
        "example": example,
        "grid": list(grid.shape),
        "relative_l2_on_V": diff,
        "u1_norm": grid.norm_l2(u1.values, v_mask),
    }
