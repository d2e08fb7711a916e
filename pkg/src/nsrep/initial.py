"""Initial data families for the experiment runs.

The random family is a sum of explicit Fourier modes with isotropic
amplitude falling off like 1/|k| up to a cutoff, normalized analytically so
the non-dimensional L2 norm of the vorticity is exactly 1.  Because the
coefficients, not grid samples, define the field, the same realization can
be sampled on any resolution, which keeps ensemble and reference runs (or
runs in a refinement study) pointed at the same continuum data.
"""

from dataclasses import dataclass

import numpy as np

from .grid import ScalarField, VectorField, biot_savart, curl2d, read_snapshot
from .streams import INIT_TAG, normals, stream_key


@dataclass
class VorticityModes:
    """omega0(x) = sum_k a_k cos(k.x) + b_k sin(k.x), integer k scaled by 2pi/L."""
    kint: np.ndarray   # (m, 2) integer wavevectors
    a: np.ndarray
    b: np.ndarray
    L: float

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        phase = pts @ (self.kint.T * (2.0 * np.pi / self.L))
        return np.cos(phase) @ self.a + np.sin(phase) @ self.b

    def l2_norm(self):
        return float(np.sqrt(0.5 * np.sum(self.a ** 2 + self.b ** 2)))

    def sample(self, grid):
        return ScalarField(grid, self(grid.nodes), mean_zero=True)


def _isotropic_modes(kmax):
    ks = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if (k1, k2) == (0, 0) or k1 ** 2 + k2 ** 2 > kmax ** 2:
                continue
            if (k1, k2) < (-k1, -k2):
                continue  # one representative per +-k pair
            ks.append((k1, k2))
    return np.array(sorted(ks), dtype=int)


def random_vorticity(master_seed, kmax=6, L=2.0 * np.pi, norm=1.0):
    """Seeded isotropic random vorticity, amplitude ~ 1/|k|, ||omega||_2 = norm."""
    kint = _isotropic_modes(kmax)
    m = len(kint)
    amp = 1.0 / np.sqrt((kint ** 2).sum(axis=1).astype(float))
    draws = normals(stream_key(master_seed, 0, 0, tag=INIT_TAG), step=0, n=2 * m)
    a = draws[:m] * amp
    b = draws[m:] * amp
    scale = norm / np.sqrt(0.5 * np.sum(a ** 2 + b ** 2))
    return VorticityModes(kint, a * scale, b * scale, L)


def shear_initial_velocity(grid, amplitude=1.0):
    """u0 = (amplitude cos(2 pi x2 / L), 0); its vorticity has L2 norm
    amplitude * (2 pi / L) / sqrt(2)."""
    k = 2.0 * np.pi / grid.L
    x2 = grid.nodes[..., 1]
    vals = np.stack([amplitude * np.cos(k * x2), np.zeros_like(x2)], axis=-1)
    return VectorField(grid, vals)


def initial_velocity(kind, grid, master_seed=0, kmax=6, path=None):
    """Velocity field for a named initial-data family on the given grid."""
    if kind == "random_bandlimited":
        w0 = random_vorticity(master_seed, kmax=kmax, L=grid.L).sample(grid)
        return biot_savart(w0)
    if kind == "shear_cos":
        return shear_initial_velocity(grid)
    if kind == "custom":
        if path is None:
            raise ValueError("custom initial data needs a snapshot path")
        f = read_snapshot(path)
        if f.grid != grid:
            raise ValueError("snapshot grid %r does not match run grid %r" % (f.grid, grid))
        if isinstance(f, VectorField):
            return f
        if isinstance(f, ScalarField):
            return biot_savart(ScalarField(grid, f.values - f.values.mean(), mean_zero=True))
        raise ValueError("custom initial data must be a scalar or vector snapshot")
    raise ValueError("unknown initial data kind %r" % (kind,))


def vorticity_of(u0):
    return curl2d(u0)
