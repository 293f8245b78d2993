"""Time-march kernels: compiled core with a pure-numpy twin.

The compiled extension is picked at import time when available; set
NULLWAVES_PURE=1 to force the numpy path.  Both produce bit-identical
results (same elementwise operations in the same order), which the test
suite asserts.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised indirectly
    from . import _march as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

USING_COMPILED = _compiled is not None and os.environ.get("NULLWAVES_PURE", "") != "1"


def _march_1p1_numpy(u, at_half, bx_half, w, source, qpot, hk, powers, dt, dx, guard):
    nt, nx = u.shape
    inv_dx2 = 1.0 / (dx * dx)
    dt2 = dt * dt
    for n in range(1, nt - 1):
        z = u[n]
        zright = np.roll(z, -1)
        zleft = np.roll(z, 1)
        sp = (bx_half[n] * (zright - z) - np.roll(bx_half[n], 1) * (z - zleft)) * inv_dx2
        hval = np.zeros(nx)
        for kk in range(hk.shape[0]):
            hval += hk[kk, n] * z ** int(powers[kk])
        u[n + 1] = z + (at_half[n - 1] * (z - u[n - 1])
                        + dt2 * (w[n] * (source[n] - qpot[n] * z - hval) - sp)) / at_half[n]
        mx = float(np.max(np.abs(u[n + 1])))
        if mx > guard:
            return n
    return -1


def march_1p1(u, at_half, bx_half, w, source, qpot, hk, powers, dt, dx, guard,
              force_pure=False):
    """Dispatch to the compiled kernel or the numpy twin. Mutates u in place."""
    args = (u, at_half, bx_half, w, source, qpot, hk, powers, dt, dx, guard)
    if USING_COMPILED and not force_pure:
        return _compiled.march_1p1(*args)
    return _march_1p1_numpy(*args)


def march_1p3(u, at_half, bxs_half, cross, w, source, qpot, hk, powers, dt, dxs, guard):
    """Numpy-only 1+3 march (smoke-test scale).

    ``bxs_half[a]`` holds w*g^{aa} at the half node of spatial axis a;
    ``cross[(a,b)]`` holds w*g^{ab} at nodes for a < b (may be empty).
    """
    nt = u.shape[0]
    dt2 = dt * dt
    for n in range(1, nt - 1):
        z = u[n]
        sp = np.zeros_like(z)
        for a in range(3):
            ax = a + 1
            zr = np.roll(z, -1, axis=a)
            zl = np.roll(z, 1, axis=a)
            b = bxs_half[a][n]
            sp += (b * (zr - z) - np.roll(b, 1, axis=a) * (z - zl)) / dxs[a] ** 2
        for (a, b), coef in cross.items():
            # d_a (c d_b u) + d_b (c d_a u), centered-of-centered
            dbu = (np.roll(z, -1, axis=b) - np.roll(z, 1, axis=b)) / (2 * dxs[b])
            dau = (np.roll(z, -1, axis=a) - np.roll(z, 1, axis=a)) / (2 * dxs[a])
            c = coef[n]
            sp += (np.roll(c * dbu, -1, axis=a) - np.roll(c * dbu, 1, axis=a)) / (2 * dxs[a])
            sp += (np.roll(c * dau, -1, axis=b) - np.roll(c * dau, 1, axis=b)) / (2 * dxs[b])
        hval = np.zeros_like(z)
        for kk in range(hk.shape[0]):
            hval += hk[kk, n] * z ** int(powers[kk])
        u[n + 1] = z + (at_half[n - 1] * (z - u[n - 1])
                        + dt2 * (w[n] * (source[n] - qpot[n] * z - hval) - sp)) / at_half[n]
        if float(np.max(np.abs(u[n + 1]))) > guard:
            return n
    return -1
