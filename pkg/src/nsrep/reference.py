"""Deterministic baselines: pseudo-spectral vorticity solver and shear solutions.

The solver advances the scalar vorticity with a classical fourth-order
Runge-Kutta step combined with the exact integrating factor for the viscous
term, and evaluates the advection term pseudo-spectrally with the 2/3-rule
mask, so the quadratic invariants of the truncated system are exact up to
time-integration error.  Shear flows admit closed-form treatment: the
nonlinear term vanishes, so the profile obeys the 1D heat equation, and the
stochastic ensemble's vorticity is a profile shifted by each copy's noise.
"""

from dataclasses import dataclass

import numpy as np

from .grid import PeriodicGrid, ScalarField, VectorField, biot_savart, grid_mean
from .flowmap import StepRejected


@dataclass
class ReferenceState:
    omega: ScalarField
    nu: float
    t: float
    dealias: bool = True


def make_reference(omega0, nu, dealias=True):
    vals = omega0.values - omega0.values.mean()
    return ReferenceState(ScalarField(omega0.grid, vals, mean_zero=True),
                          float(nu), 0.0, dealias)


def _dealias_mask(grid, dealias):
    m1 = np.rint(np.fft.fftfreq(grid.n1) * grid.n1).astype(int)
    m2 = np.rint(np.fft.rfftfreq(grid.n2) * grid.n2).astype(int)
    if not dealias:
        return np.ones((grid.n1, m2.size), dtype=bool)
    return (np.abs(m1)[:, None] <= grid.n1 // 3) & (m2[None, :] <= grid.n2 // 3)


def _velocity_hat(grid, wh):
    mult = grid.inv_ksq
    return grid.ik2 * wh * mult, -grid.ik1 * wh * mult


def velocity(r):
    """Velocity field recovered from the vorticity."""
    return biot_savart(r.omega)


def ns_step(r, h):
    """One RK4 / integrating-factor step of the vorticity equation.

    Enforces a CFL-type advisory h * ||u||_inf / h_grid <= 0.5 and conserves
    the (zero) mean vorticity exactly.
    """
    grid = r.omega.grid
    mask = _dealias_mask(grid, r.dealias)

    def rhs(wh):
        u1h, u2h = _velocity_hat(grid, wh)
        u1 = grid.irfft2(u1h)
        u2 = grid.irfft2(u2h)
        w1 = grid.irfft2(grid.ik1 * wh)
        w2 = grid.irfft2(grid.ik2 * wh)
        conv = grid.rfft2(u1 * w1 + u2 * w2)
        conv *= mask
        conv[0, 0] = 0.0
        return -conv

    wh = grid.rfft2(r.omega.values)
    wh[0, 0] = 0.0  # mean vorticity is identically zero; keep it exact
    u1h, u2h = _velocity_hat(grid, wh)
    umax = float(np.sqrt(grid.irfft2(u1h) ** 2 + grid.irfft2(u2h) ** 2).max())
    if h * umax / min(grid.h1, grid.h2) > 0.5:
        raise StepRejected("CFL advisory: h * ||u||_inf / h_grid = %.3g > 0.5"
                           % (h * umax / min(grid.h1, grid.h2)))

    E = np.exp(-0.5 * r.nu * grid.ksq * h)
    E2 = E * E
    a = h * rhs(wh)
    b = h * rhs(E * (wh + 0.5 * a))
    c = h * rhs(E * wh + 0.5 * b)
    d = h * rhs(E2 * wh + E * c)
    wh_new = E2 * wh + (E2 * a + 2.0 * E * (b + c) + d) / 6.0

    omega = ScalarField(grid, grid.irfft2(wh_new), mean_zero=True)
    return ReferenceState(omega, r.nu, r.t + h, r.dealias)


def run_reference(omega0, nu, T, dt, dealias=True):
    """Integrate to time T (last step shortened to land exactly on T)."""
    r = make_reference(omega0, nu, dealias)
    nsteps = int(round(T / dt))
    for _ in range(nsteps):
        r = ns_step(r, dt)
    return r


def heat_profile(phi0, nu, t, n, L=2.0 * np.pi):
    """Heat semigroup on the circle applied to a 1D profile.

    phi0 may be a callable evaluated on the n-point grid or an array of n
    samples.  Returns samples of the profile at time t.
    """
    x = np.arange(n) * (L / n)
    samples = np.asarray(phi0(x) if callable(phi0) else phi0, dtype=float)
    if samples.shape != (n,):
        raise ValueError("profile needs %d samples" % n)
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=L / n)
    return np.fft.irfft(np.fft.rfft(samples) * np.exp(-nu * k * k * t), n=n)


def _shifted_profile_derivative(samples, shifts, L):
    """Rows -phi0'(x2 - shift_i), evaluated exactly via the Fourier series."""
    n = samples.size
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=L / n)
    dk = 1j * k
    if n % 2 == 0:
        dk[-1] = 0.0
    ph = np.fft.rfft(samples) * dk
    twist = np.exp(-1j * np.outer(np.asarray(shifts, dtype=float), k))
    return -np.fft.irfft(ph[None, :] * twist, n=n, axis=-1)


def shear_oracle(phi0, nu, t, w2, grid, dphi0=None):
    """Exact ensemble fields for shear initial data (phi0(x2), 0).

    w2 holds each copy's Brownian second coordinate at time t (unscaled);
    every copy contributes the initial vorticity profile shifted by
    sqrt(2 nu) w2[i], and the velocity is recovered by the Biot-Savart
    law with the conserved mean restored.  Bypasses flow maps entirely.
    """
    shifts = np.sqrt(2.0 * nu) * np.asarray(w2, dtype=float)
    if callable(phi0):
        samples = phi0(grid.x2)
    else:
        samples = np.asarray(phi0, dtype=float)
        if samples.shape != (grid.n2,):
            raise ValueError("profile needs %d samples" % grid.n2)
    if dphi0 is not None:
        rows = np.stack([-dphi0(grid.x2 - s) for s in shifts], axis=0)
    else:
        rows = _shifted_profile_derivative(samples, shifts, grid.L)
    profile = rows.mean(axis=0)
    w_vals = np.broadcast_to(profile[None, :], (grid.n1, grid.n2)).copy()
    w_vals -= w_vals.mean()
    omega = ScalarField(grid, w_vals, mean_zero=True)
    u = biot_savart(omega)
    u_vals = u.values.copy()
    u_vals[..., 0] += samples.mean()
    return omega, VectorField(grid, u_vals)
