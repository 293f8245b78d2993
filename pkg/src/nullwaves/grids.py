"""Uniform spacetime grids, sampled fields and smooth source bumps.

Grids cover [0, t_max] x prod_a [0, L_a) with periodic spatial axes; the
domain is sized so causal cones never wrap within the time window, which
removes boundary conditions entirely.  Fields carry their grid.  Snapshots
serialize to a small little-endian binary format (see README) and CSV slices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"NWFLD001"
CFL_SAFETY = 0.5


class CFLViolation(RuntimeError):
    """Time step too large for the metric's characteristic speeds."""


@dataclass(frozen=True)
class Grid:
    """shape = (nt, nx1[, nx2, nx3]); spacings dt = t_max/nt, dx_a = L_a/nx_a."""

    shape: tuple
    t_max: float
    lengths: tuple
    cfl_safety: float = CFL_SAFETY

    def __post_init__(self):
        if len(self.shape) not in (2, 4):
            raise ValueError("grid must be 1+1 or 1+3")
        if len(self.lengths) != len(self.shape) - 1:
            raise ValueError("one length per spatial axis")

    @property
    def nt(self) -> int:
        return self.shape[0]

    @property
    def dt(self) -> float:
        return self.t_max / self.shape[0]

    @property
    def dx(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.shape[1:]))

    @property
    def spatial_dim(self) -> int:
        return len(self.shape) - 1

    def axis_t(self, offset=0.0) -> np.ndarray:
        return (np.arange(self.shape[0]) + offset) * self.dt

    def axis_x(self, a, offset=0.0) -> np.ndarray:
        return (np.arange(self.shape[1 + a]) + offset) * self.dx[a]

    def mesh(self, t_offset=0.0, x_offsets=None):
        """Coordinate arrays (t, x1, x2, x3) broadcastable to ``shape``.

        Unused spatial coordinates are zero (1+1 grids live on the x2=x3=0
        slice of the chart).
        """
        x_offsets = x_offsets or (0.0,) * self.spatial_dim
        n = len(self.shape)
        out = [np.zeros((1,) * n)] * 4
        sh = [1] * n
        sh[0] = self.shape[0]
        out[0] = self.axis_t(t_offset).reshape(sh)
        for a in range(self.spatial_dim):
            sh = [1] * n
            sh[1 + a] = self.shape[1 + a]
            out[1 + a] = self.axis_x(a, x_offsets[a]).reshape(sh)
        return out

    def check_cfl(self, speeds):
        """speeds: per-axis max characteristic speed over the grid."""
        for a, (c, dx) in enumerate(zip(speeds, self.dx)):
            if self.dt > self.cfl_safety * dx / max(c, 1e-300):
                raise CFLViolation(
                    f"dt = {self.dt:.3e} exceeds {self.cfl_safety} * dx/c = "
                    f"{self.cfl_safety * dx / c:.3e} on axis {a}"
                )

    def norm_l2(self, values, mask=None) -> float:
        """Discrete L2 norm (cell measure included)."""
        v = np.asarray(values)
        if mask is not None:
            v = v * mask
        cell = self.dt * float(np.prod(self.dx))
        return float(np.sqrt(np.sum(v * v) * cell))


@dataclass(frozen=True)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        object.__setattr__(self, "values", v)


def relative_l2(grid: Grid, a, b, mask=None) -> float:
    return grid.norm_l2(np.asarray(a) - np.asarray(b), mask) / max(grid.norm_l2(b, mask), 1e-300)


def mollifier(s):
    """C^infty bump: exp(1 - 1/(1-s^2)) for |s| < 1, else 0."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    out = np.zeros_like(s)
    w = 1.0 - s[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / w)
    return out


@dataclass(frozen=True)
class SourceSpec:
    """Smooth compactly supported bump, optionally modulated along a wavevector."""

    center: tuple               # (t, x1[, x2, x3]) for the grid's dimension
    widths: tuple
    amplitude: float = 1.0
    modulation: tuple = None    # wavevector, same length as center

    def to_field(self, grid: Grid) -> Field:
        mesh = grid.mesh()
        coords = [mesh[0]] + [mesh[1 + a] for a in range(grid.spatial_dim)]
        if len(self.center) != len(coords):
            raise ValueError("source center dimension does not match the grid")
        val = np.ones(grid.shape)
        for c, wdt, arr in zip(self.center, self.widths, coords):
            val = val * mollifier((arr - c) / wdt)
        if self.modulation is not None:
            phase = sum(k * (arr - c) for k, c, arr in zip(self.modulation, self.center, coords))
            val = val * np.cos(phase)
        if self.center[0] - self.widths[0] < 0:
            raise ValueError("source support must sit in t >= 0")
        return Field(grid, self.amplitude * np.broadcast_to(val, grid.shape).copy())


# --- serialization -------------------------------------------------------------

def write_field(path, field: Field):
    """magic | ndim u32 | shape u64[ndim] | t_max f64 | lengths f64[ndim-1] | data."""
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(g.shape)))
        fh.write(struct.pack(f"<{len(g.shape)}Q", *g.shape))
        fh.write(struct.pack("<d", g.t_max))
        fh.write(struct.pack(f"<{len(g.lengths)}d", *g.lengths))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path) -> Field:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError("not a field snapshot file")
        (ndim,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        (t_max,) = struct.unpack("<d", fh.read(8))
        lengths = struct.unpack(f"<{ndim - 1}d", fh.read(8 * (ndim - 1)))
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
    return Field(Grid(tuple(shape), t_max, tuple(lengths)), data.copy())


def csv_rows_slice(field: Field, t_index) -> list:
    """(x..., value) rows of one time slice, fixed ordering."""
    g = field.grid
    rows = []
    sl = field.values[t_index]
    for idx in np.ndindex(*g.shape[1:]):
        xs = [g.axis_x(a)[idx[a]] for a in range(g.spatial_dim)]
        rows.append((*xs, sl[idx]))
    return rows
