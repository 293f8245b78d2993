"""Hamiltonian ray tracing in the dual metric function P(x, xi) = |xi|^2_{g*}.

Null bicharacteristics are integral curves of the Hamilton field of P inside
the characteristic set; their projections are light-like geodesics.  The
module integrates batches of rays with classical RK4, computes Jacobi fields
and first conjugate parameters, forward light cones, earliest light
observation sets for static observer tubes, and the amplitude transport along
null rays driven by the sub-principal symbol of the wave operator.

Rays are independent and all inputs are immutable, so batches can be traced
in parallel threads with a shared MetricSpec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import MetricSpec, Point4, metric_fields, point

TAU_FLOW = 1e-6


@dataclass(frozen=True)
class PhasePoint:
    x: tuple
    xi: tuple

    def arrays(self):
        return np.array(self.x, dtype=float), np.array(self.xi, dtype=float)


@dataclass(frozen=True)
class RayTrajectory:
    """Samples of one integral curve of H_P.

    ``s`` is the flow parameter, ``x`` the spacetime points (N,4), ``xi`` the
    covectors (N,4), ``p_defect`` the relative drift |P|/|xi|^2_euclid per
    sample.  ``truncated`` flags an exit from the chart domain.
    """

    s: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    p_defect: np.ndarray
    ds: float
    metric_id: str
    truncated: bool = False

    def __len__(self):
        return len(self.s)

    @property
    def spatial_arclength(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.x[:, 1:], axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass(frozen=True)
class ObservationSet:
    source: Point4
    observer_positions: np.ndarray      # (n_obs, 3)
    points: tuple                       # of (observer_id, Point4)
    empty: bool


@dataclass(frozen=True)
class AmplitudeSample:
    along: RayTrajectory
    values: np.ndarray                  # complex, per sample


def _hamilton_rhs(spec, x, xi):
    """Batched Hamilton field: x (n,4), xi (n,4) -> (dx/ds, dxi/ds)."""
    f = metric_fields(spec, [x[:, i] for i in range(4)], need="dg")
    dx = 2.0 * np.einsum("nij,nj->ni", f["g_inv"], xi)
    dxi = -np.einsum("nkij,ni,nj->nk", f["dg_inv"], xi, xi)
    return dx, dxi


def _p_value(spec, x, xi):
    g_inv = metric_fields(spec, [x[:, i] for i in range(4)], need="g")["g_inv"]
    return np.einsum("nij,ni,nj->n", g_inv, xi, xi)


def hamilton_flow_batch(spec: MetricSpec, x0, xi0, s_max, ds, domain=None):
    """Trace many rays at once.  Returns (s, x, xi, pdef, truncated_mask).

    x0, xi0: (n,4).  Output arrays have shape (steps+1, n, 4).  When a ray
    leaves ``domain`` (a list of 4 (lo, hi) pairs or None) it is frozen in
    place and flagged.
    """
    n_steps = max(1, int(round(s_max / ds)))
    ds = s_max / n_steps
    x = np.array(x0, dtype=float)
    xi = np.array(xi0, dtype=float)
    n = x.shape[0]
    xs = np.empty((n_steps + 1, n, 4))
    xis = np.empty((n_steps + 1, n, 4))
    xs[0], xis[0] = x, xi
    alive = np.ones(n, dtype=bool)
    for m in range(n_steps):
        k1x, k1p = _hamilton_rhs(spec, x, xi)
        k2x, k2p = _hamilton_rhs(spec, x + 0.5 * ds * k1x, xi + 0.5 * ds * k1p)
        k3x, k3p = _hamilton_rhs(spec, x + 0.5 * ds * k2x, xi + 0.5 * ds * k2p)
        k4x, k4p = _hamilton_rhs(spec, x + ds * k3x, xi + ds * k3p)
        x_new = x + (ds / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        xi_new = xi + (ds / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        if domain is not None:
            inside = np.ones(n, dtype=bool)
            for i, box in enumerate(domain):
                if box is None:
                    continue
                lo, hi = box
                inside &= (x_new[:, i] >= lo) & (x_new[:, i] <= hi)
            alive &= inside
        x = np.where(alive[:, None], x_new, x)
        xi = np.where(alive[:, None], xi_new, xi)
        xs[m + 1], xis[m + 1] = x, xi
    s = np.linspace(0.0, s_max, n_steps + 1)
    pvals = np.empty((n_steps + 1, n))
    for m in range(n_steps + 1):
        pvals[m] = _p_value(spec, xs[m], xis[m])
    ref = np.einsum("mni,mni->mn", xis, xis)
    pdef = np.abs(pvals) / ref
    return s, xs, xis, pdef, ~alive


def hamilton_flow(spec: MetricSpec, start: PhasePoint, s_max, ds, domain=None) -> RayTrajectory:
    """Integrate one ray from ``start``; see hamilton_flow_batch."""
    x0, xi0 = start.arrays()
    if not np.any(xi0):
        raise ValueError("zero covector cannot start a ray")
    s, xs, xis, pdef, trunc = hamilton_flow_batch(spec, x0[None], xi0[None], s_max, ds, domain)
    return RayTrajectory(
        s=s, x=xs[:, 0], xi=xis[:, 0], p_defect=pdef[:, 0], ds=ds,
        metric_id=spec.name, truncated=bool(trunc[0]),
    )


def null_covector(spec: MetricSpec, x, spatial_dir, future=True):
    """Future null covector at x with prescribed dual spatial direction.

    Solves g*^{00} xi_0^2 + |k|^2_{g* spatial} = 0 for metrics with
    g^{0j} = 0; the sign of xi_0 is fixed by dx^0/ds = 2 g*^{00} xi_0 > 0.
    """
    k = np.asarray(spatial_dir, dtype=float)
    f = metric_fields(spec, [np.asarray(c, dtype=float) for c in x], need="g")
    g_inv = f["g_inv"]
    if np.max(np.abs(g_inv[0, 1:])) > 1e-14:
        raise ValueError("null_covector requires g^{0j} = 0")
    ksq = float(k @ g_inv[1:, 1:] @ k)
    xi0 = math.sqrt(-ksq / g_inv[0, 0])
    if future == (g_inv[0, 0] < 0):
        xi0 = -xi0
    return np.array([xi0, k[0], k[1], k[2]])


def fibonacci_directions(n: int) -> np.ndarray:
    """n nearly-uniform unit vectors on S^2 (deterministic)."""
    i = np.arange(n) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def forward_light_cone(spec: MetricSpec, q, n_dirs, s_max, ds, domain=None):
    """Rays from q in n_dirs future null directions, uniform on the sphere."""
    if n_dirs < 1:
        raise ValueError("n_dirs >= 1")
    if not isinstance(q, Point4):
        q = point(q)
    dirs = fibonacci_directions(n_dirs)
    x0 = np.tile(q.array, (n_dirs, 1))
    xi0 = np.stack([null_covector(spec, q.coords, d) for d in dirs])
    s, xs, xis, pdef, trunc = hamilton_flow_batch(spec, x0, xi0, s_max, ds, domain)
    rays = []
    for j in range(n_dirs):
        rays.append(
            RayTrajectory(s=s, x=xs[:, j], xi=xis[:, j], p_defect=pdef[:, j], ds=ds,
                          metric_id=spec.name, truncated=bool(trunc[j]))
        )
    return rays


# --- conjugate points ---------------------------------------------------------

def _geodesic_dense(spec, start: PhasePoint, s_max, ds):
    """Geodesic at half-step resolution, with velocity and curvature data."""
    x0, xi0 = start.arrays()
    s, xs, xis, _, _ = hamilton_flow_batch(spec, x0[None], xi0[None], s_max, ds / 2.0)
    xs, xis = xs[:, 0], xis[:, 0]
    f = metric_fields(spec, [xs[:, i] for i in range(4)], need="curv")
    v = 2.0 * np.einsum("nij,nj->ni", f["g_inv"], xis)
    return s, xs, v, f["christoffel"], f["riemann"]


def _jacobi_rhs(J, W, v, gamma, riem):
    # J, W: (4,4) columns are fields; v: (4,)
    gv = np.einsum("ijk,j->ik", gamma, v)
    dJ = W - gv @ J
    dW = -gv @ W - np.einsum("ijkl,j,kc,l->ic", riem, v, J, v)
    return dJ, dW


def jacobi_determinant(spec: MetricSpec, start: PhasePoint, s_max, ds):
    """det of the 4x4 Jacobi matrix with J(0) = 0, (DJ/ds)(0) = I, per step.

    Zeros of the determinant (for s > 0) are the conjugate parameters: they
    are exactly the parameters where the exponential map degenerates.
    """
    s2, xs, v, gamma, riem = _geodesic_dense(spec, start, s_max, ds)
    n2 = len(s2)                      # half-step samples: 2*m + 1
    m = (n2 - 1) // 2
    J = np.zeros((4, 4))
    W = np.eye(4)
    dets = np.empty(m + 1)
    dets[0] = 0.0
    svals = s2[::2]
    for k in range(m):
        i0, i1, i2 = 2 * k, 2 * k + 1, 2 * k + 2
        h = svals[k + 1] - svals[k]
        k1J, k1W = _jacobi_rhs(J, W, v[i0], gamma[i0], riem[i0])
        k2J, k2W = _jacobi_rhs(J + 0.5 * h * k1J, W + 0.5 * h * k1W, v[i1], gamma[i1], riem[i1])
        k3J, k3W = _jacobi_rhs(J + 0.5 * h * k2J, W + 0.5 * h * k2W, v[i1], gamma[i1], riem[i1])
        k4J, k4W = _jacobi_rhs(J + h * k3J, W + h * k3W, v[i2], gamma[i2], riem[i2])
        J = J + (h / 6.0) * (k1J + 2 * k2J + 2 * k3J + k4J)
        W = W + (h / 6.0) * (k1W + 2 * k2W + 2 * k3W + k4W)
        dets[k + 1] = np.linalg.det(J)
    return svals, dets


def first_conjugate_parameter(spec: MetricSpec, start: PhasePoint, s_max, ds=0.01):
    """Smallest s in (0, s_max] where the Jacobi determinant vanishes.

    Returns None when no sign change occurs before s_max.  The root is
    located by cubic interpolation through the bracketing samples plus
    bisection on the interpolant.
    """
    svals, dets = jacobi_determinant(spec, start, s_max, ds)
    # near s=0 the determinant behaves like s^4 * det(basis) > 0; skip the seed
    for k in range(2, len(svals) - 1):
        if dets[k] != 0.0 and np.sign(dets[k + 1]) != np.sign(dets[k]):
            lo, hi = svals[k], svals[k + 1]
            i0 = max(0, k - 1)
            coeffs = np.polyfit(svals[i0:k + 3] - lo, dets[i0:k + 3], 3)
            a, b = 0.0, hi - lo
            fa = np.polyval(coeffs, a)
            for _ in range(80):
                mid = 0.5 * (a + b)
                fm = np.polyval(coeffs, mid)
                if fa * fm <= 0:
                    b = mid
                else:
                    a, fa = mid, fm
            return lo + 0.5 * (a + b)
        if dets[k] == 0.0 and k > 2:
            return float(svals[k])
    return None


# --- observation sets ---------------------------------------------------------

@dataclass(frozen=True)
class ObserverTube:
    """Static observers on a sphere |y - center| = radius, one world line each."""

    center: tuple
    radius: float
    n_observers: int
    t_min: float
    t_max: float

    @property
    def positions(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + self.radius * fibonacci_directions(self.n_observers)


def _closest_approach(ray: RayTrajectory, pos: np.ndarray):
    """(s*, t*, point, dist) of the ray's nearest pass to the observer line."""
    d2 = np.einsum("ni,ni->n", ray.x[:, 1:] - pos, ray.x[:, 1:] - pos)
    k = int(np.argmin(d2))
    if 0 < k < len(d2) - 1:
        denom = d2[k - 1] - 2 * d2[k] + d2[k + 1]
        frac = 0.5 * (d2[k - 1] - d2[k + 1]) / denom if denom > 0 else 0.0
        frac = min(1.0, max(-1.0, frac))
    else:
        frac = 0.0
    # quadratic refinement of the sample position as well
    lo = max(0, k - 1)
    w = frac
    if w >= 0 and k + 1 < len(d2):
        xstar = (1 - w) * ray.x[k] + w * ray.x[k + 1]
        sstar = (1 - w) * ray.s[k] + w * ray.s[k + 1]
    else:
        xstar = (1 + w) * ray.x[k] - w * ray.x[lo]
        sstar = (1 + w) * ray.s[k] - w * ray.s[lo]
    dist = float(np.linalg.norm(xstar[1:] - pos))
    return float(sstar), float(xstar[0]), xstar, dist


def earliest_filter(hits):
    """Keep, per observer id, the hit with smallest proper ordering (here t)."""
    best = {}
    for obs_id, pt in hits:
        if obs_id not in best or pt.t < best[obs_id].t:
            best[obs_id] = pt
    return tuple(sorted(best.items()))


def earliest_obs(spec: MetricSpec, q, tube: ObserverTube, n_dirs=400, s_max=4.0,
                 ds=0.01, hit_tol=None) -> ObservationSet:
    """Earliest light observation set of q on the tube's observer lines.

    Every forward-cone ray is intersected with each observer world line
    (closest spatial approach); passes within ``hit_tol`` count as hits, and
    per observer only the earliest hit in coordinate time survives (static
    observers: proper time is monotone in t).
    """
    if not isinstance(q, Point4):
        q = point(q)
    rays = forward_light_cone(spec, q, n_dirs, s_max, ds)
    positions = tube.positions
    if hit_tol is None:
        # nearest-ray angular spacing at the tube distance
        d = max(np.linalg.norm(positions - q.spatial, axis=1).max(), 1e-12)
        hit_tol = 4.0 * d * math.sqrt(4.0 * math.pi / n_dirs)
    hits = []
    for obs_id, pos in enumerate(positions):
        for ray in rays:
            sstar, tstar, xstar, dist = _closest_approach(ray, pos)
            if dist <= hit_tol and tube.t_min <= tstar <= tube.t_max and sstar > 0:
                hits.append((obs_id, point(xstar)))
    pts = earliest_filter(hits)
    return ObservationSet(source=q, observer_positions=positions, points=pts, empty=not pts)


# --- amplitude transport ------------------------------------------------------

def _subprincipal_trace(spec, x, xi):
    """S = sum_i d^2 P / dx^i dxi_i = 2 sum_{ij} d_i g*^{ij} xi_j, batched."""
    f = metric_fields(spec, [x[:, i] for i in range(4)], need="dg")
    return 2.0 * np.einsum("niij,nj->n", f["dg_inv"], xi)


def transport_amplitude(spec: MetricSpec, ray: RayTrajectory, init=1.0) -> AmplitudeSample:
    """Solve the transport equation d sigma/ds = (1/2) S(x, xi) sigma along the ray.

    S is the trace sum_i d^2 P/dx^i dxi_i, i.e. the (trivialized) sub-principal
    part of the wave operator; on Minkowski S = 0 and the amplitude is constant.
    sigma(s) = init * exp(1/2 int_0^s S), with the integral done by composite
    Simpson using Hermite-interpolated midpoints (O(ds^4)).
    """
    if init == 0:
        return AmplitudeSample(ray, np.zeros(len(ray), dtype=complex))
    S = _subprincipal_trace(spec, ray.x, ray.xi)
    dx, dxi = _hamilton_rhs(spec, ray.x, ray.xi)
    h = np.diff(ray.s)
    xm = 0.5 * (ray.x[:-1] + ray.x[1:]) + (h[:, None] / 8.0) * (dx[:-1] - dx[1:])
    xim = 0.5 * (ray.xi[:-1] + ray.xi[1:]) + (h[:, None] / 8.0) * (dxi[:-1] - dxi[1:])
    Sm = _subprincipal_trace(spec, xm, xim)
    seg = (h / 6.0) * (S[:-1] + 4.0 * Sm + S[1:])
    integral = np.concatenate([[0.0], np.cumsum(seg)])
    values = complex(init) * np.exp(0.5 * integral)
    return AmplitudeSample(ray, values)


def match_by_arclength(ray_a: RayTrajectory, ray_b: RayTrajectory):
    """Indices pairing samples of two rays with equal spatial arclength.

    Used to compare differently parametrized flows of conformal metrics; the
    projected curves coincide, only the parameter differs.
    """
    la, lb = ray_a.spatial_arclength, ray_b.spatial_arclength
    lmax = min(la[-1], lb[-1])
    la = np.clip(la, 0, lmax)
    idx_b = np.searchsorted(lb, la)
    idx_b = np.clip(idx_b, 0, len(lb) - 1)
    return np.arange(len(la)), idx_b


def hausdorff_distance(pts_a: np.ndarray, pts_b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two sampled point sets."""
    d2 = np.sum((pts_a[:, None, :] - pts_b[None, :, :]) ** 2, axis=-1)
    return float(np.sqrt(max(d2.min(axis=1).max(), d2.min(axis=0).max())))


def cone_to_rows(rays):
    """CSV rows (ray id, s, t, x1, x2, x3, P-defect) for a set of rays."""
    rows = []
    for rid, ray in enumerate(rays):
        for m in range(len(ray)):
            rows.append((rid, ray.s[m], ray.x[m, 0], ray.x[m, 1], ray.x[m, 2],
                         ray.x[m, 3], ray.p_defect[m]))
    return rows
