"""Periodic grid, fields and exact discrete calculus on the 2D torus.

All differential operators are Fourier multipliers evaluated with real FFTs
on a uniform n1 x n2 sampling of the box [0, L]^2 (no duplicated endpoint).
First-derivative multipliers zero the Nyquist mode, the standard symmetric
convention for odd derivatives on even grids; the inverse Laplacian is
defined on mean-zero data only (the mean is stripped and handled by the
caller).  Norms are non-dimensional: ||f||_p = (L^-2 int |f|^p)^(1/p), i.e.
plain grid averages, so constants have norm equal to their magnitude.
"""

from dataclasses import dataclass, field as dataclass_field
from functools import cached_property
import struct

import numpy as np
from scipy.ndimage import map_coordinates, spline_filter


class SnapshotError(Exception):
    """Raised when a field snapshot cannot be parsed."""


class PeriodicGrid:
    """Uniform sampling of [0, L]^2 with n1 x n2 points, spacing h = L/n.

    Sample points are x_j = j*h per axis, j = 0..n-1.  Axis 0 of a value
    array is the x1 direction, axis 1 is x2.
    """

    def __init__(self, n1, n2, L=2.0 * np.pi):
        if n1 < 4 or n2 < 4 or n1 % 2 or n2 % 2:
            raise ValueError("grid sizes must be even and >= 4, got (%d, %d)" % (n1, n2))
        if not (L > 0):
            raise ValueError("box side must be positive")
        self.n1 = int(n1)
        self.n2 = int(n2)
        self.L = float(L)
        self.h1 = self.L / self.n1
        self.h2 = self.L / self.n2

    def __eq__(self, other):
        return (isinstance(other, PeriodicGrid)
                and (self.n1, self.n2, self.L) == (other.n1, other.n2, other.L))

    def __hash__(self):
        return hash((self.n1, self.n2, self.L))

    def __repr__(self):
        return "PeriodicGrid(%d, %d, L=%g)" % (self.n1, self.n2, self.L)

    @cached_property
    def x1(self):
        return np.arange(self.n1) * self.h1

    @cached_property
    def x2(self):
        return np.arange(self.n2) * self.h2

    @cached_property
    def nodes(self):
        """Physical coordinates of all nodes, shape (n1, n2, 2)."""
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        return np.stack([X1, X2], axis=-1)

    # -- spectral machinery (rfft2 layout: full axis 0, half axis 1) --

    @cached_property
    def k1(self):
        return 2.0 * np.pi * np.fft.fftfreq(self.n1, d=self.h1)

    @cached_property
    def k2(self):
        return 2.0 * np.pi * np.fft.rfftfreq(self.n2, d=self.h2)

    @cached_property
    def ik1(self):
        """d/dx1 multiplier, Nyquist zeroed, shaped for broadcasting."""
        k = self.k1.copy()
        k[self.n1 // 2] = 0.0
        return (1j * k)[:, None]

    @cached_property
    def ik2(self):
        """d/dx2 multiplier, Nyquist zeroed."""
        k = self.k2.copy()
        k[-1] = 0.0
        return (1j * k)[None, :]

    @cached_property
    def ksq(self):
        return self.k1[:, None] ** 2 + self.k2[None, :] ** 2

    @cached_property
    def inv_ksq(self):
        """Multiplier for -(-Laplace)^-1 division; zero mode mapped to 0."""
        out = np.zeros_like(self.ksq)
        nz = self.ksq > 0
        out[nz] = 1.0 / self.ksq[nz]
        return out

    def rfft2(self, values):
        return np.fft.rfft2(values, axes=(0, 1))

    def irfft2(self, values_hat):
        return np.fft.irfft2(values_hat, s=(self.n1, self.n2), axes=(0, 1))

    def wrap(self, pts):
        """Wrap physical coordinates into [0, L) per axis."""
        return np.mod(pts, self.L)


def _check_values(grid, values, comp_shape, mean_zero):
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n1, grid.n2) + comp_shape:
        raise ValueError("field values have shape %s, expected %s"
                         % (values.shape, (grid.n1, grid.n2) + comp_shape))
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite samples")
    if mean_zero:
        sup = np.max(np.abs(values))
        if sup > 0:
            means = np.abs(values.reshape(grid.n1 * grid.n2, -1).mean(axis=0))
            if np.any(means > 1e-12 * sup):
                raise ValueError("field flagged mean-zero has grid average %g" % means.max())
    return values


@dataclass
class ScalarField:
    grid: PeriodicGrid
    values: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, (), self.mean_zero)


@dataclass
class VectorField:
    grid: PeriodicGrid
    values: np.ndarray  # (n1, n2, 2)
    mean_zero: bool = False

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, (2,), self.mean_zero)


@dataclass
class TensorField:
    grid: PeriodicGrid
    values: np.ndarray  # (n1, n2, 2, 2), [..., i, j] = row i, column j

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, (2, 2), False)


def grid_mean(f):
    """Grid average of each component."""
    return f.values.reshape(f.grid.n1 * f.grid.n2, -1).mean(axis=0).squeeze()


def nondim_norm(f, p):
    """Non-dimensional L^p norm, p in {1, 2, inf}.

    Vector and tensor samples are measured with the pointwise Euclidean
    (Frobenius) magnitude before the grid-average quadrature.
    """
    v = f.values if not isinstance(f, np.ndarray) else f
    mag2 = v * v
    while mag2.ndim > 2:
        mag2 = mag2.sum(axis=-1)
    if p == np.inf or p == "inf":
        return float(np.sqrt(mag2.max()))
    if p == 2:
        return float(np.sqrt(mag2.mean()))
    if p == 1:
        return float(np.sqrt(mag2).mean())
    raise ValueError("p must be 1, 2 or inf")


# ---------------------------------------------------------------------------
# spectral operators


def gradient(f):
    """Spectral gradient of a scalar field."""
    g = f.grid
    fh = g.rfft2(f.values)
    d1 = g.irfft2(g.ik1 * fh)
    d2 = g.irfft2(g.ik2 * fh)
    return VectorField(g, np.stack([d1, d2], axis=-1))


def jacobian(v):
    """Spectral Jacobian of a vector field; J[..., i, j] = d v_i / d x_j."""
    g = v.grid
    vh = g.rfft2(v.values)
    rows = []
    for i in range(2):
        d1 = g.irfft2(g.ik1 * vh[..., i])
        d2 = g.irfft2(g.ik2 * vh[..., i])
        rows.append(np.stack([d1, d2], axis=-1))
    return TensorField(g, np.stack(rows, axis=-2))


def divergence(v):
    g = v.grid
    vh = g.rfft2(v.values)
    return ScalarField(g, g.irfft2(g.ik1 * vh[..., 0] + g.ik2 * vh[..., 1]))


def curl2d(v):
    """Scalar curl d1 v2 - d2 v1 of a periodic vector field."""
    g = v.grid
    vh = g.rfft2(v.values)
    w = g.irfft2(g.ik1 * vh[..., 1] - g.ik2 * vh[..., 0])
    return ScalarField(g, w, mean_zero=True)


def biot_savart(w):
    """Divergence-free velocity with curl w; mean of w is projected out.

    In Fourier space u = (ik2, -ik1) w_hat / |k|^2, which inverts the curl
    on mean-zero data.  The returned field is mean-zero; callers carry any
    conserved mean velocity separately.
    """
    g = w.grid
    wh = g.rfft2(w.values)
    wh[0, 0] = 0.0
    mult = g.inv_ksq
    u1 = g.irfft2(g.ik2 * wh * mult)
    u2 = g.irfft2(-g.ik1 * wh * mult)
    return VectorField(g, np.stack([u1, u2], axis=-1), mean_zero=True)


def leray_project(v):
    """Orthogonal projection onto divergence-free fields.

    Mode-wise u_hat = v_hat - k (k . v_hat) / |k|^2 with the same
    (Nyquist-zeroed) wavenumbers as the derivative operators, so the
    projection annihilates exactly the discrete gradients.  The mean
    (k = 0) component passes through unchanged.
    """
    g = v.grid
    vh0 = g.rfft2(v.values[..., 0])
    vh1 = g.rfft2(v.values[..., 1])
    kap1 = g.ik1.imag
    kap2 = g.ik2.imag
    kk = kap1 ** 2 + kap2 ** 2
    kk_safe = np.where(kk > 0, kk, 1.0)
    kdotv = (kap1 * vh0 + kap2 * vh1) / kk_safe
    u1 = g.irfft2(vh0 - kap1 * kdotv)
    u2 = g.irfft2(vh1 - kap2 * kdotv)
    return VectorField(g, np.stack([u1, u2], axis=-1))


# ---------------------------------------------------------------------------
# interpolation


class FieldSampler:
    """Periodic interpolation of one field at arbitrary points.

    The spline coefficients are prefiltered once at construction so that
    repeated evaluation (the hot path of map stepping) costs a single
    B-spline kernel pass per call.  order=3 is bicubic, order=1 bilinear.
    """

    def __init__(self, f, order=3):
        if order not in (1, 3):
            raise ValueError("interpolation order must be 1 (bilinear) or 3 (bicubic)")
        self.grid = f.grid
        self.order = order
        vals = f.values
        self._comp_shape = vals.shape[2:]
        comps = vals.reshape(vals.shape[0], vals.shape[1], -1)
        if order > 1:
            self._coef = [spline_filter(comps[..., c], order=order, mode="grid-wrap")
                          for c in range(comps.shape[-1])]
        else:
            self._coef = [np.ascontiguousarray(comps[..., c]) for c in range(comps.shape[-1])]

    def __call__(self, pts):
        """Evaluate at physical points of shape (..., 2); wraps periodically."""
        pts = np.asarray(pts, dtype=float)
        idx = [pts[..., 0] / self.grid.h1, pts[..., 1] / self.grid.h2]
        out = [map_coordinates(c, idx, order=self.order, mode="grid-wrap", prefilter=False)
               for c in self._coef]
        if not self._comp_shape:
            return out[0]
        return np.stack(out, axis=-1).reshape(pts.shape[:-1] + self._comp_shape)


def interpolate(f, pts, order=3):
    """Periodic interpolation of field f at points pts (shape (..., 2)).

    Exact on constants and at grid nodes; linear in f.
    """
    return FieldSampler(f, order=order)(pts)


# ---------------------------------------------------------------------------
# resampling between grids


def subsample(f, coarse):
    """Restrict a field to a coarser grid sharing nodes (integer ratio)."""
    g = f.grid
    if g.n1 % coarse.n1 or g.n2 % coarse.n2 or abs(g.L - coarse.L) > 1e-12 * g.L:
        raise ValueError("subsample needs matching box and integer grid ratio")
    r1, r2 = g.n1 // coarse.n1, g.n2 // coarse.n2
    values = f.values[::r1, ::r2]
    return type(f)(coarse, values.copy())


def spectral_refine(f, fine):
    """Evaluate a band-limited field on a finer grid by Fourier padding.

    Nyquist rows and columns of the source are split half-and-half between
    the +-Nyquist frequencies of the target, which keeps the result real and
    reproduces the trigonometric interpolant exactly.
    """
    g = f.grid
    if fine.n1 < g.n1 or fine.n2 < g.n2 or abs(g.L - fine.L) > 1e-12 * g.L:
        raise ValueError("target grid must be at least as fine with the same box")
    vals = f.values
    comp_shape = vals.shape[2:]
    comps = vals.reshape(g.n1, g.n2, -1)
    m1, m2 = g.n1 // 2, g.n2 // 2
    freqs1 = [(a, (0.5 if abs(a) == m1 else 1.0)) for a in range(-m1, m1 + 1)]
    freqs2 = [(b, (0.5 if abs(b) == m2 else 1.0)) for b in range(-m2, m2 + 1)]
    scale = (fine.n1 * fine.n2) / (g.n1 * g.n2)
    out = []
    for c in range(comps.shape[-1]):
        fh = np.fft.fft2(comps[..., c])
        gh = np.zeros((fine.n1, fine.n2), dtype=complex)
        for a, wa in freqs1:
            for b, wb in freqs2:
                gh[a % fine.n1, b % fine.n2] += wa * wb * fh[a % g.n1, b % g.n2]
        out.append(np.fft.ifft2(gh).real * scale)
    values = np.stack(out, axis=-1).reshape((fine.n1, fine.n2) + comp_shape)
    return type(f)(fine, values)


# ---------------------------------------------------------------------------
# snapshot format: magic, n1, n2, L, component count, little-endian f64 rows

_SNAP_MAGIC = b"NSRFLD01"
_FIELD_TYPES = {1: ScalarField, 2: VectorField, 4: TensorField}


def snapshot_bytes(f):
    vals = f.values
    ncomp = int(np.prod(vals.shape[2:], dtype=int)) if vals.ndim > 2 else 1
    header = _SNAP_MAGIC + struct.pack("<IIdI", f.grid.n1, f.grid.n2, f.grid.L, ncomp)
    return header + np.ascontiguousarray(vals, dtype="<f8").tobytes()


def write_snapshot(f, path):
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(f))


def snapshot_from_bytes(buf, offset=0):
    """Parse one snapshot; returns (field, next_offset)."""
    head = buf[offset:offset + len(_SNAP_MAGIC) + 20]
    if len(head) < len(_SNAP_MAGIC) + 20 or head[:len(_SNAP_MAGIC)] != _SNAP_MAGIC:
        raise SnapshotError("bad snapshot magic/header")
    n1, n2, L, ncomp = struct.unpack_from("<IIdI", head, len(_SNAP_MAGIC))
    if ncomp not in _FIELD_TYPES:
        raise SnapshotError("unsupported component count %d" % ncomp)
    start = offset + len(_SNAP_MAGIC) + 20
    nbytes = n1 * n2 * ncomp * 8
    if len(buf) < start + nbytes:
        raise SnapshotError("snapshot truncated")
    data = np.frombuffer(buf[start:start + nbytes], dtype="<f8").astype(float)
    try:
        grid = PeriodicGrid(n1, n2, L)
    except ValueError as exc:
        raise SnapshotError(str(exc)) from exc
    shape = {1: (n1, n2), 2: (n1, n2, 2), 4: (n1, n2, 2, 2)}[ncomp]
    f = _FIELD_TYPES[ncomp](grid, data.reshape(shape))
    return f, start + nbytes


def read_snapshot(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    f, end = snapshot_from_bytes(buf)
    if end != len(buf):
        raise SnapshotError("trailing bytes after snapshot")
    return f
