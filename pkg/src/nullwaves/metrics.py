"""Coordinate-chart Lorentzian metric families on R x R^3.

Three families are supported, all in the single global chart x = (t, x1, x2, x3)
with signature (-,+,+,+):

* ``minkowski``            g = diag(-1, 1, 1, 1)
* ``conformal_minkowski``  g = e^{2 gamma(x)} eta
* ``product``              g = -beta(t,y) dt^2 + kappa_ij(t,y) dy^i dy^j

Metric components are expressions from :mod:`nullwaves.exprs`, so all the
derivatives entering Christoffel symbols and curvature are analytic, not
finite differences.  Evaluation broadcasts over numpy arrays of points; the
pointwise API wraps the batched one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import exprs
from .exprs import Expr, parse

TAU_NULL = 1e-9


class SignatureError(ValueError):
    """Metric fails the (-,+,+,+) signature check at a sampled point."""


class BasePointMismatch(ValueError):
    """Covectors passed to a bilinear operation sit at different base points."""


@dataclass(frozen=True)
class Point4:
    coords: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.coords)
        if len(c) != 4 or not all(np.isfinite(c)):
            raise ValueError(f"need 4 finite coordinates, got {self.coords!r}")
        object.__setattr__(self, "coords", c)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords)

    @property
    def t(self) -> float:
        return self.coords[0]

    @property
    def spatial(self) -> np.ndarray:
        return np.array(self.coords[1:])


@dataclass(frozen=True)
class Covector4:
    base: Point4
    components: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.components)
        if len(c) != 4 or not all(np.isfinite(c)):
            raise ValueError(f"need 4 finite components, got {self.components!r}")
        object.__setattr__(self, "components", c)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.components)


def point(*coords) -> Point4:
    if len(coords) == 1:
        coords = tuple(coords[0])
    return Point4(tuple(coords))


def covector(base, components) -> Covector4:
    if not isinstance(base, Point4):
        base = point(base)
    return Covector4(base, tuple(components))


@dataclass(frozen=True)
class MetricEval:
    """All pointwise metric data: g, g^{-1}, dg, Christoffels, curvature."""

    x: Point4
    g: np.ndarray              # (4,4)
    g_inv: np.ndarray          # (4,4)
    dg: np.ndarray             # (4,4,4); dg[k,i,j] = d_k g_ij
    christoffel: np.ndarray    # (4,4,4); christoffel[i,j,k] = Gamma^i_{jk}
    scalar_curvature: float


@dataclass(frozen=True)
class MetricSpec:
    """A metric family plus the analytic component/derivative tables."""

    family: str
    name: str
    components: tuple          # 4x4 nested tuple of Expr
    check_box: tuple = ((-2.0, 2.0),) * 4
    check_n: int = 3

    @staticmethod
    def minkowski() -> "MetricSpec":
        eta = _diag_exprs([-1.0, 1.0, 1.0, 1.0])
        return MetricSpec("minkowski", "minkowski", eta)

    @staticmethod
    def conformal_minkowski(gamma) -> "MetricSpec":
        gamma = parse(gamma)
        factor = exprs.Exp(exprs.mul(exprs.const(2.0), gamma)) if not exprs.is_zero(gamma) else exprs.ONE
        comps = [[exprs.ZERO] * 4 for _ in range(4)]
        signs = [-1.0, 1.0, 1.0, 1.0]
        for i in range(4):
            comps[i][i] = exprs.mul(exprs.const(signs[i]), factor)
        spec = MetricSpec("conformal_minkowski", f"conformal[{gamma}]", _freeze(comps))
        object.__setattr__(spec, "gamma", gamma)
        return spec

    @staticmethod
    def product(beta, kappa) -> "MetricSpec":
        """g = -beta dt^2 + kappa, with kappa a 3x3 (nested) spec of expressions."""
        beta = parse(beta)
        comps = [[exprs.ZERO] * 4 for _ in range(4)]
        comps[0][0] = exprs.neg(beta)
        for i in range(3):
            for j in range(3):
                kij = parse(kappa[i][j])
                kji = parse(kappa[j][i])
                if exprs.to_text(kij) != exprs.to_text(kji):
                    raise ValueError("kappa must be symmetric")
                comps[i + 1][j + 1] = kij
        spec = MetricSpec("product", f"product[beta={beta}]", _freeze(comps))
        object.__setattr__(spec, "beta", beta)
        return spec

    def __post_init__(self):
        self._check_signature()

    @cached_property
    def _dg_table(self):
        return tuple(
            tuple(tuple(exprs.diff(self.components[i][j], k) for j in range(4)) for i in range(4))
            for k in range(4)
        )

    @cached_property
    def _d2g_table(self):
        return tuple(
            tuple(
                tuple(tuple(exprs.diff(self._dg_table[k][i][j], m) for j in range(4)) for i in range(4))
                for k in range(4)
            )
            for m in range(4)
        )

    @cached_property
    def gamma_expr(self):
        return getattr(self, "gamma", None)

    def is_static(self) -> bool:
        deps = frozenset().union(*(exprs.depends_on(self.components[i][j]) for i in range(4) for j in range(4)))
        return 0 not in deps

    def depends_on(self) -> frozenset:
        return frozenset().union(
            *(exprs.depends_on(self.components[i][j]) for i in range(4) for j in range(4))
        )

    # --- batched evaluation ---------------------------------------------

    def g_array(self, coords) -> np.ndarray:
        """Metric components at points; returns shape coords_shape + (4,4)."""
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*coords).shape
        out = np.empty(shape + (4, 4))
        for i in range(4):
            for j in range(i, 4):
                val = np.broadcast_to(exprs.evaluate(self.components[i][j], coords), shape)
                out[..., i, j] = val
                out[..., j, i] = val
        return out

    def dg_array(self, coords) -> np.ndarray:
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*coords).shape
        out = np.empty(shape + (4, 4, 4))
        for k in range(4):
            for i in range(4):
                for j in range(i, 4):
                    val = np.broadcast_to(exprs.evaluate(self._dg_table[k][i][j], coords), shape)
                    out[..., k, i, j] = val
                    out[..., k, j, i] = val
        return out

    def d2g_array(self, coords) -> np.ndarray:
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*coords).shape
        out = np.empty(shape + (4, 4, 4, 4))
        for m in range(4):
            for k in range(m, 4):
                for i in range(4):
                    for j in range(i, 4):
                        val = np.broadcast_to(
                            exprs.evaluate(self._d2g_table[m][k][i][j], coords), shape
                        )
                        out[..., m, k, i, j] = val
                        out[..., m, k, j, i] = val
                        out[..., k, m, i, j] = val
                        out[..., k, m, j, i] = val
        return out

    def _check_signature(self):
        axes = [np.linspace(lo, hi, self.check_n) for lo, hi in self.check_box]
        grids = np.meshgrid(*axes, indexing="ij")
        g = self.g_array([a.ravel() for a in grids])
        eig = np.linalg.eigvalsh(g)
        neg = (eig < 0).sum(axis=-1)
        if not np.all(neg == 1):
            bad = int(np.argmax(neg != 1))
            pt = tuple(float(a.ravel()[bad]) for a in grids)
            raise SignatureError(f"metric {self.name!r} is not Lorentzian at {pt}")


def _diag_exprs(diag):
    comps = [[exprs.ZERO] * 4 for _ in range(4)]
    for i, v in enumerate(diag):
        comps[i][i] = exprs.const(v)
    return _freeze(comps)


def _freeze(comps):
    return tuple(tuple(row) for row in comps)


# --- batched geometry ---------------------------------------------------------

def metric_fields(spec: MetricSpec, coords, need="g"):
    """Batched geometry at points given as 4 broadcastable coordinate arrays.

    ``need`` selects how much is computed: "g" (g, g_inv, det),
    "dg" (plus derivatives, inverse derivatives, Christoffels) or
    "curv" (plus Riemann/Ricci/scalar curvature).  Returns a dict.
    """
    out = {}
    g = spec.g_array(coords)
    g_inv = np.linalg.inv(g)
    out["g"], out["g_inv"] = g, g_inv
    out["det"] = np.linalg.det(g)
    if need == "g":
        return out

    dg = spec.dg_array(coords)
    out["dg"] = dg
    # d_k g^{ij} = -g^{ia} (d_k g_ab) g^{bj}
    dginv = -np.einsum("...ia,...kab,...bj->...kij", g_inv, dg, g_inv)
    out["dg_inv"] = dginv
    # Gamma^i_{jk} = 1/2 g^{il} (d_j g_lk + d_k g_lj - d_l g_jk); dg[k,i,j] = d_k g_ij
    d_j_g_lk = dg                                     # axes already (j,l,k)
    d_k_g_lj = np.einsum("...klj->...jlk", dg)
    d_l_g_jk = np.einsum("...ljk->...jlk", dg)
    gamma = 0.5 * np.einsum("...il,...jlk->...ijk", g_inv, d_j_g_lk + d_k_g_lj - d_l_g_jk)
    out["christoffel"] = gamma
    if need == "dg":
        return out

    d2g = spec.d2g_array(coords)
    # dGamma[m,i,j,k] = d_m Gamma^i_{jk}
    d2_j_lk = np.einsum("...mjlk->...mjlk", d2g)
    d2_k_lj = np.einsum("...mklj->...mjlk", d2g)
    d2_l_jk = np.einsum("...mljk->...mjlk", d2g)
    inner = d2_j_lk + d2_k_lj - d2_l_jk
    d_inner = np.einsum("...jlk->...jlk", d_j_g_lk + d_k_g_lj - d_l_g_jk)
    dgamma = 0.5 * (
        np.einsum("...mil,...jlk->...mijk", dginv, d_inner)
        + np.einsum("...il,...mjlk->...mijk", g_inv, inner)
    )
    # R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + Gamma^i_{ka} Gamma^a_{lj}
    #           - Gamma^i_{la} Gamma^a_{kj}
    riem = (
        np.einsum("...kilj->...ijkl", dgamma)
        - np.einsum("...likj->...ijkl", dgamma)
        + np.einsum("...ika,...alj->...ijkl", gamma, gamma)
        - np.einsum("...ila,...akj->...ijkl", gamma, gamma)
    )
    ric = np.einsum("...kjkl->...jl", riem)
    out["riemann"] = riem
    out["ricci"] = ric
    # Scalar curvature in the wave-operator convention: the sign is fixed so
    # that box_g + R/6 is the conformally covariant operator for the
    # divergence-form box used here (box t^2 = -2 on Minkowski).  This is the
    # negative of the trace in the geodesic-deviation convention of
    # ``riemann``/``ricci`` above.
    out["R"] = -np.einsum("...jl,...jl->...", g_inv, ric)
    return out


def eval_metric(spec: MetricSpec, x) -> MetricEval:
    """Pointwise metric data with analytic derivatives.

    Raises SignatureError if g(x) is not Lorentzian.
    """
    if not isinstance(x, Point4):
        x = point(x)
    coords = [np.asarray(c) for c in x.coords]
    f = metric_fields(spec, coords, need="curv")
    g = f["g"]
    eig = np.linalg.eigvalsh(g)
    if (eig < 0).sum() != 1:
        raise SignatureError(f"metric {spec.name!r} is not Lorentzian at {x.coords}")
    if not np.allclose(g @ f["g_inv"], np.eye(4), atol=1e-10):
        raise SignatureError(f"inverse check failed at {x.coords}")
    return MetricEval(
        x=x,
        g=g,
        g_inv=f["g_inv"],
        dg=f["dg"],
        christoffel=f["christoffel"],
        scalar_curvature=float(f["R"]),
    )


def scalar_curvature(spec: MetricSpec, x) -> float:
    return eval_metric(spec, x).scalar_curvature


def dual_norm_sq(spec: MetricSpec, xi: Covector4) -> float:
    """|xi|^2 in the dual metric at the covector's base point."""
    g_inv = metric_fields(spec, [np.asarray(c) for c in xi.base.coords])["g_inv"]
    v = xi.array
    return float(v @ g_inv @ v)


def pairwise_product(spec: MetricSpec, xi: Covector4, eta: Covector4) -> float:
    """Dual metric pairing g*(xi, eta); requires a common base point."""
    if xi.base.coords != eta.base.coords:
        raise BasePointMismatch(f"{xi.base.coords} != {eta.base.coords}")
    g_inv = metric_fields(spec, [np.asarray(c) for c in xi.base.coords])["g_inv"]
    return float(xi.array @ g_inv @ eta.array)


def causal_class(spec: MetricSpec, x, components, kind="covector", tau_null=TAU_NULL) -> str:
    """Classify a vector or covector as timelike / null / spacelike.

    The null band is |norm^2| <= tau_null * |components|^2_euclid.
    """
    v = np.asarray(components, dtype=float)
    ref = float(v @ v)
    if ref == 0.0:
        raise ValueError("zero vector has no causal class")
    if not isinstance(x, Point4):
        x = point(x)
    f = metric_fields(spec, [np.asarray(c) for c in x.coords])
    mat = f["g_inv"] if kind == "covector" else f["g"]
    n2 = float(v @ mat @ v)
    if abs(n2) <= tau_null * ref:
        return "null"
    return "timelike" if n2 < 0 else "spacelike"
