"""Band-limited random test fields built by direct mode summation.

Everything here evaluates explicit sine/cosine modes with numpy
broadcasting and never touches the FFT machinery under test, so these
helpers double as independent oracles: they can be sampled on any grid
or at arbitrary points, and their derivatives, curls and L2 norms are
known in closed form from the coefficients.
"""

import numpy as np


def mode_list(kmax):
    """Integer wavevectors with 0 < |k| <= kmax, one per +-k pair."""
    modes = []
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if k1 == 0 and k2 == 0:
                continue
            if k1 ** 2 + k2 ** 2 > kmax ** 2:
                continue
            if (k1, k2) < (-k1, -k2):
                continue
            modes.append((k1, k2))
    return modes


class ModeSum:
    """f(x) = sum_k a_k cos(k.x) + b_k sin(k.x), with 2pi/L wavenumbers."""

    def __init__(self, modes, a, b, L=2.0 * np.pi):
        self.kvecs = np.asarray(modes, dtype=float) * (2.0 * np.pi / L)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.L = L

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        phase = pts @ self.kvecs.T  # (..., nmodes)
        return np.cos(phase) @ self.a + np.sin(phase) @ self.b

    def deriv(self, axis):
        """Partial derivative along an axis, as another ModeSum."""
        k = self.kvecs[:, axis]
        out = ModeSum.__new__(ModeSum)
        out.kvecs = self.kvecs.copy()
        out.a = k * self.b
        out.b = -k * self.a
        out.L = self.L
        return out

    def l2_norm_sq(self):
        """Exact non-dimensional squared L2 norm."""
        return float(0.5 * np.sum(self.a ** 2 + self.b ** 2))


def random_mode_sum(kmax, seed, L=2.0 * np.pi, decay=0.0):
    rng = np.random.default_rng(seed)
    modes = mode_list(kmax)
    amp = np.array([ (k1 ** 2 + k2 ** 2) ** (-decay / 2.0) for k1, k2 in modes])
    a = rng.standard_normal(len(modes)) * amp
    b = rng.standard_normal(len(modes)) * amp
    return ModeSum(modes, a, b, L)


def sample_scalar(ms, grid):
    from nsrep.grid import ScalarField
    return ScalarField(grid, ms(grid.nodes))


def random_scalar(grid, kmax, seed, decay=0.0):
    return sample_scalar(random_mode_sum(kmax, seed, L=grid.L, decay=decay), grid)


def random_vector(grid, kmax, seed, decay=0.0):
    from nsrep.grid import VectorField
    f1 = random_mode_sum(kmax, seed, L=grid.L, decay=decay)
    f2 = random_mode_sum(kmax, seed + 1, L=grid.L, decay=decay)
    return VectorField(grid, np.stack([f1(grid.nodes), f2(grid.nodes)], axis=-1))


def random_divfree_vector(grid, kmax, seed, decay=0.0):
    """Divergence-free field from a random stream function."""
    from nsrep.grid import VectorField
    psi = random_mode_sum(kmax, seed, L=grid.L, decay=decay)
    u1 = psi.deriv(1)(grid.nodes)
    u2 = -psi.deriv(0)(grid.nodes)
    return VectorField(grid, np.stack([u1, u2], axis=-1), mean_zero=True)
