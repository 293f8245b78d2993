# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Leapfrog march of the damped semilinear wave operator on a 1+1 grid.

The hot kernel behind the epsilon-expansion oracle runs and the refinement
studies; a pure-numpy twin lives in nullwaves.stepper and is selected when
this extension is unavailable.
"""

import numpy as np
cimport numpy as cnp


def march_1p1(double[:, ::1] u, double[:, ::1] at_half, double[:, ::1] bx_half,
              double[:, ::1] w, double[:, ::1] source, double[:, ::1] qpot,
              double[:, :, ::1] hk, long[::1] powers, double dt, double dx,
              double guard):
    """Fill u[2:] in place; returns -1 on success or the level where |u| blew up.

    u[0] and u[1] must hold the initial (zero) past.  at_half[m] holds
    w*g^00 at t=(m+1/2)dt, bx_half[n,i] holds w*g^11 at x=(i+1/2)dx.
    """
    cdef Py_ssize_t nt = u.shape[0]
    cdef Py_ssize_t nx = u.shape[1]
    cdef Py_ssize_t nk = hk.shape[0]
    cdef Py_ssize_t n, i, ip, im, kk, p
    cdef double inv_dx2 = 1.0 / (dx * dx)
    cdef double dt2 = dt * dt
    cdef double sp, hval, z, zp, val, mx

    for n in range(1, nt - 1):
        mx = 0.0
        for i in range(nx):
            ip = i + 1 if i + 1 < nx else 0
            im = i - 1 if i > 0 else nx - 1
            z = u[n, i]
            sp = (bx_half[n, i] * (u[n, ip] - z) - bx_half[n, im] * (z - u[n, im])) * inv_dx2
            hval = 0.0
            for kk in range(nk):
                zp = z
                for p in range(powers[kk] - 1):
                    zp *= z
                hval += hk[kk, n, i] * zp
            val = z + (at_half[n - 1, i] * (z - u[n - 1, i])
                       + dt2 * (w[n, i] * (source[n, i] - qpot[n, i] * z - hval) - sp)) / at_half[n, i]
            u[n + 1, i] = val
            if val > mx:
                mx = val
            elif -val > mx:
                mx = -val
        if mx > guard:
            return n
    return -1
