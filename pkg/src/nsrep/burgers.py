"""1D replica system for viscous Burgers: the mesh-degeneration probe.

Each copy advances a forward map of the periodic line by its own noise; the
velocity is the average of the initial profile composed with the inverse
maps.  In 1D there is no projection and no Jacobian factor, and the inverse
is obtained by monotone (shape-preserving cubic) interpolation of the
forward samples, which cannot oscillate near steepening.  When the forward
map stops being strictly increasing on the mesh, the run aborts with
ShockDetected; continuation past shocks is not implemented.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .streams import normals


class ShockDetected(Exception):
    """Forward map reached the degeneration threshold on some copy."""

    def __init__(self, t, copy, min_jac):
        super().__init__("copy %d reached min dX/dy = %.3e at t = %.6g"
                         % (copy, min_jac, t))
        self.t = t
        self.copy = copy
        self.min_jac = min_jac


@dataclass
class LineMap:
    n: int
    L: float
    lam: np.ndarray      # forward displacement X(y) - y on the mesh
    brownian: float
    t: float

    @property
    def x(self):
        return np.arange(self.n) * (self.L / self.n)

    def forward_positions(self):
        return self.x + self.lam

    def min_jacobian(self):
        """min over mesh cells of (X_{j+1} - X_j) / h, wrap included."""
        X = self.forward_positions()
        dX = np.diff(np.append(X, X[0] + self.L))
        return float(dX.min() / (self.L / self.n))

    def inverse_at(self, x_query):
        """Y at the query points by monotone interpolation of the samples.

        The forward samples are unrolled over three periods so queries can
        be reduced into covered territory; Y(x + mL) = Y(x) + mL.
        """
        X = self.forward_positions()
        y = self.x
        Xs = np.concatenate([X - self.L, X, X + self.L])
        ys = np.concatenate([y - self.L, y, y + self.L])
        interp = PchipInterpolator(Xs, ys, extrapolate=False)
        m = np.floor((x_query - X[0]) / self.L)
        xr = x_query - m * self.L
        out = interp(xr)
        if np.any(~np.isfinite(out)):
            raise RuntimeError("inverse query left the unrolled sample range")
        return out + m * self.L


def identity_line_map(n, L=2.0 * np.pi):
    return LineMap(n, L, np.zeros(n), 0.0, 0.0)


@dataclass
class BurgersState:
    u0: object                  # periodic callable, the initial profile
    nu: float
    t: float
    step_index: int
    maps: list
    u: np.ndarray               # current velocity samples on the mesh
    streams: np.ndarray         # (N, 4)
    eps_shock: float = 1e-3
    min_jac: np.ndarray = field(default=None)

    @property
    def n_copies(self):
        return len(self.maps)

    @property
    def grid_x(self):
        return self.maps[0].x


def make_burgers(u0, n, n_copies, nu, streams, L=2.0 * np.pi, eps_shock=1e-3):
    if not callable(u0):
        raise ValueError("initial profile must be a periodic callable")
    streams = np.asarray(streams, dtype=np.uint64)
    if streams.shape != (n_copies, 4):
        raise ValueError("stream table must have shape (N, 4)")
    maps = [identity_line_map(n, L) for _ in range(n_copies)]
    x = maps[0].x
    state = BurgersState(u0=u0, nu=float(nu), t=0.0, step_index=0, maps=maps,
                         u=np.asarray(u0(x), dtype=float).copy(),
                         streams=streams, eps_shock=eps_shock,
                         min_jac=np.ones(n_copies))
    return state


def reconstruct_velocity(state, pts=None):
    """u = (1/N) sum_i u0(Y_i), evaluated at pts (default: the mesh).

    The average of compositions is a function that can be evaluated at
    arbitrary points straight through each copy's monotone inverse; in
    particular a copy's own forward points recover u0 at its labels
    exactly, so the single-copy inviscid probe rides true characteristics.
    """
    if pts is None:
        pts = state.grid_x
    acc = np.zeros_like(pts, dtype=float)
    for m in state.maps:
        acc += state.u0(m.inverse_at(pts))
    return acc / state.n_copies


def burgers_advance(state, h):
    """One step of all copies; aborts with ShockDetected on degeneration."""
    scale = np.sqrt(2.0 * state.nu * h)
    new_maps = []
    min_jac = np.empty(state.n_copies)
    for i, m in enumerate(state.maps):
        dw = scale * float(normals(state.streams[i], state.step_index, 1)[0])
        X = m.forward_positions()
        lam_new = m.lam + h * reconstruct_velocity(state, X) + dw
        m2 = replace(m, lam=lam_new, brownian=m.brownian + dw, t=m.t + h)
        min_jac[i] = m2.min_jacobian()
        new_maps.append(m2)
    t_new = state.t + h
    worst = int(np.argmin(min_jac))
    if min_jac[worst] <= state.eps_shock:
        raise ShockDetected(t_new, worst, min_jac[worst])
    new = replace(state, t=t_new, step_index=state.step_index + 1,
                  maps=new_maps, min_jac=min_jac)
    new.u = reconstruct_velocity(new)
    return new


@dataclass
class BurgersRecord:
    t: float
    energy: float
    min_jac: np.ndarray
    shock_time: float = None


def record_burgers(state, shock_time=None):
    return BurgersRecord(t=state.t, energy=float((state.u ** 2).mean()),
                         min_jac=state.min_jac.copy(), shock_time=shock_time)


def run_burgers(state, T, dt, record_every=1):
    """Advance to T or the first shock; returns (records, shock_time_or_None).

    The shock time reported is the time at which the degeneration threshold
    was first crossed (the aborting step's end time).
    """
    records = [record_burgers(state)]
    nsteps = int(round((T - state.t) / dt))
    for k in range(nsteps):
        try:
            state = burgers_advance(state, dt)
        except ShockDetected as exc:
            records.append(BurgersRecord(t=exc.t, energy=records[-1].energy,
                                         min_jac=np.full(state.n_copies, exc.min_jac),
                                         shock_time=exc.t))
            return records, exc.t
        if (k + 1) % record_every == 0 or k == nsteps - 1:
            records.append(record_burgers(state))
    return records, None


def shock_time(records, eps_shock=1e-3):
    """First recorded time min dX/dy dropped to the threshold, else None."""
    for rec in records:
        if rec.shock_time is not None:
            return rec.shock_time
        if rec.min_jac.size and rec.min_jac.min() <= eps_shock:
            return rec.t
    return None


def burgers_csv_columns(n_copies):
    return (["t", "energy"] + ["min_jacobian_%d" % i for i in range(n_copies)]
            + ["shock_time"])


def write_burgers_csv(path, records, n_copies):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(burgers_csv_columns(n_copies)) + "\n")
        for rec in records:
            row = [repr(float(rec.t)), repr(float(rec.energy))]
            row += [repr(float(v)) for v in rec.min_jac]
            row.append("" if rec.shock_time is None else repr(float(rec.shock_time)))
            fh.write(",".join(row) + "\n")
