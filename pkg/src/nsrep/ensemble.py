"""The N-replica system: coupled stepping and velocity reconstruction.

Each replica owns a stochastic flow map driven by its own noise stream.
The shared velocity is rebuilt from the N inverse maps after every step,
either from the averaged transported vorticity followed by the Biot-Savart
law (the default, one projection per step) or by averaging the per-copy
projected pullbacks of the initial velocity.  The two forms are
algebraically equivalent and the second is recomputed periodically as a
cross-check.  The mean velocity is a conserved quantity and is stripped
from all spectral inversions and restored explicitly.

Stepping is deterministic for a fixed seed regardless of evaluation order:
each copy's Brownian increments come from a counter-based stream indexed by
(replication, copy, step).
"""

import io
import json
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .flowmap import (
    FlowMap,
    MeshDegenerate,
    StepRejected,
    composition_residual,
    flow_step,
    forward_jacobian_det,
    grad_sup,
    grad_transpose_inverse,
    identity_map,
)
from .grid import (
    FieldSampler,
    PeriodicGrid,
    ScalarField,
    VectorField,
    biot_savart,
    curl2d,
    leray_project,
    nondim_norm,
    snapshot_bytes,
    snapshot_from_bytes,
)
from .streams import normals

logger = logging.getLogger(__name__)


class CheckpointError(Exception):
    """Raised when an ensemble checkpoint cannot be restored."""


@dataclass
class StepSettings:
    reconstruction: str = "vorticity"   # or "weber"
    integrator: str = "euler"           # or "heun"
    order: int = 3                      # interpolation order (3 bicubic, 1 bilinear)
    tol_fp_rel: float = 1e-10           # one-step inversion tolerance, relative to L
    max_iter: int = 50
    contraction_limit: float = 0.5
    tol_comp_rel: float = 1e-6          # composition-residual flag level, relative to L
    cross_check_interval: int = 10      # steps between form cross-checks (0 = never)
    cross_check_tol: float = 0.05
    monitor_interval: int = 10          # steps between Jacobian-det checks
    det_floor: float = 0.0              # min det before the run aborts
    eps_jac: float = 0.2                # warn band |det - 1| > eps_jac
    grad_route: str = "spectral"

    def validate(self):
        if self.reconstruction not in ("vorticity", "weber"):
            raise ValueError("reconstruction must be 'vorticity' or 'weber'")
        if self.integrator not in ("euler", "heun"):
            raise ValueError("integrator must be 'euler' or 'heun'")
        if self.order not in (1, 3):
            raise ValueError("interpolation order must be 1 or 3")
        return self


@dataclass
class EnsembleState:
    nu: float
    t: float
    step_index: int
    maps: list                      # N FlowMaps
    u: VectorField                  # current reconstructed velocity
    omega: ScalarField              # current reconstructed vorticity
    u0: list                        # per-copy initial velocities
    mean_u: np.ndarray              # conserved mean velocity, shape (2,)
    streams: np.ndarray             # (N, 4) uint64 stream descriptors
    settings: StepSettings
    omega_sup_bound: float          # (1/N) sum_i sup|omega0_i| incl. overshoot
    overshoot_tol: float
    comp_residual: float = 0.0      # forward/inverse residual after last step
    comp_flagged: bool = False
    last_form_check: float = float("nan")
    _omega0_samplers: list = field(default=None, repr=False, compare=False)
    _u0_samplers: list = field(default=None, repr=False, compare=False)
    _mean_u0: list = field(default=None, repr=False, compare=False)

    @property
    def n_copies(self):
        return len(self.maps)

    @property
    def grid(self):
        return self.u.grid

    def omega0(self, i):
        return curl2d(self.u0[i])


def _build_caches(state):
    order = state.settings.order
    state._u0_samplers = [FieldSampler(u0i, order=order) for u0i in state.u0]
    state._omega0_samplers = [FieldSampler(curl2d(u0i), order=order) for u0i in state.u0]
    state._mean_u0 = [u0i.values.reshape(-1, 2).mean(axis=0) for u0i in state.u0]
    return state


def _interp_overshoot(samplers, grid, refine=4):
    """Worst relative overshoot of the initial-vorticity interpolants,
    measured on a refine-times denser mesh.  Zero for bilinear."""
    dense = PeriodicGrid(refine * grid.n1, refine * grid.n2, grid.L)
    worst = 0.0
    for smp in samplers:
        if smp.order == 1:
            continue
        sup_dense = float(np.abs(smp(dense.nodes)).max())
        sup_nodes = float(np.abs(smp(grid.nodes)).max())
        if sup_nodes > 0:
            worst = max(worst, sup_dense / sup_nodes - 1.0)
    return max(worst, 0.0) + 1e-12


def make_ensemble(u0, n_copies, nu, streams, settings=None):
    """Build the time-zero state with identity maps.

    u0 is a single divergence-free VectorField shared by every copy, or a
    list of per-copy fields.  streams is the (N, 4) stream table for this
    replication.
    """
    settings = (settings or StepSettings()).validate()
    if isinstance(u0, VectorField):
        u0_list = [u0] * n_copies
    else:
        u0_list = list(u0)
        if len(u0_list) != n_copies:
            raise ValueError("need one initial field per copy")
    grid = u0_list[0].grid
    streams = np.asarray(streams, dtype=np.uint64)
    if streams.shape != (n_copies, 4):
        raise ValueError("stream table must have shape (N, 4)")
    if nu < 0:
        raise ValueError("viscosity must be non-negative")

    mean_u = np.mean([u.values.reshape(-1, 2).mean(axis=0) for u in u0_list], axis=0)
    state = EnsembleState(
        nu=float(nu), t=0.0, step_index=0,
        maps=[identity_map(grid) for _ in range(n_copies)],
        u=u0_list[0], omega=curl2d(u0_list[0]),
        u0=u0_list, mean_u=mean_u, streams=streams,
        settings=settings, omega_sup_bound=0.0, overshoot_tol=0.0,
    )
    _build_caches(state)
    state.overshoot_tol = _interp_overshoot(state._omega0_samplers, grid)
    sups = [float(np.abs(curl2d(u0i).values).max()) for u0i in u0_list]
    state.omega_sup_bound = float(np.mean(sups)) * (1.0 + state.overshoot_tol)
    omega, u = reconstruct_velocity_vorticity(state)
    state.omega, state.u = omega, u
    return state


# ---------------------------------------------------------------------------
# velocity reconstruction


def reconstruct_velocity_vorticity(state):
    """Averaged transported vorticity and its Biot-Savart velocity."""
    if state._omega0_samplers is None:
        _build_caches(state)
    grid = state.grid
    acc = np.zeros((grid.n1, grid.n2))
    for smp, m in zip(state._omega0_samplers, state.maps):
        acc += smp(grid.nodes + m.mu.values)
    acc /= state.n_copies
    acc -= acc.mean()
    omega = ScalarField(grid, acc, mean_zero=True)
    u = biot_savart(omega)
    vals = u.values + state.mean_u
    return omega, VectorField(grid, vals)


def per_copy_velocity(state, i):
    """Projected pullback of copy i's initial velocity: P[(grad^T Y_i)(u0_i o Y_i)]."""
    if not 0 <= i < state.n_copies:
        raise IndexError("copy index out of range")
    if state._u0_samplers is None:
        _build_caches(state)
    grid = state.grid
    m = state.maps[i]
    G = grad_transpose_inverse(m, route=state.settings.grad_route).values
    w = np.einsum("xyij,xyj->xyi", G, state._u0_samplers[i](grid.nodes + m.mu.values))
    w -= w.reshape(-1, 2).mean(axis=0)
    u = leray_project(VectorField(grid, w))
    return VectorField(grid, u.values + state._mean_u0[i])


def reconstruct_velocity_weber(state):
    """Average of the per-copy projected pullbacks (same quadrature path)."""
    acc = per_copy_velocity(state, 0).values.copy()
    for i in range(1, state.n_copies):
        acc += per_copy_velocity(state, i).values
    return VectorField(state.grid, acc / state.n_copies)


def form_discrepancy(state):
    """Relative L2 gap between the two reconstructions."""
    _, u_v = reconstruct_velocity_vorticity(state)
    u_w = reconstruct_velocity_weber(state)
    denom = max(nondim_norm(u_v, 2), 1e-300)
    return nondim_norm(VectorField(state.grid, u_w.values - u_v.values), 2) / denom


# ---------------------------------------------------------------------------
# stepping


def advance(state, h):
    """One coupled step: freeze u, move all maps, rebuild u at t + h."""
    s = state.settings
    grid = state.grid
    gs = grad_sup(state.u)
    if h * gs > s.contraction_limit:
        raise StepRejected("h * sup|grad u| = %.3g exceeds %.3g; shrink the time step"
                           % (h * gs, s.contraction_limit))
    sampler_u = FieldSampler(state.u, order=s.order)
    scale = np.sqrt(2.0 * state.nu) * np.sqrt(h)
    new_maps = []
    comp = 0.0
    for i, m in enumerate(state.maps):
        dw = scale * normals(state.streams[i], state.step_index, 2)
        m2 = flow_step(m, state.u, h, dw, integrator=s.integrator, order=s.order,
                       tol_rel=s.tol_fp_rel, max_iter=s.max_iter,
                       contraction_limit=s.contraction_limit,
                       _sampler_cache=sampler_u, _grad_sup=gs)
        comp = max(comp, composition_residual(m2, order=s.order))
        new_maps.append(m2)

    new = replace(state, t=state.t + h, step_index=state.step_index + 1,
                  maps=new_maps, comp_residual=comp)
    new._omega0_samplers = state._omega0_samplers
    new._u0_samplers = state._u0_samplers
    new._mean_u0 = state._mean_u0

    if comp > s.tol_comp_rel * grid.L and not state.comp_flagged:
        logger.warning("composition residual %.3e exceeds %.1e L at t=%.4g",
                       comp, s.tol_comp_rel, new.t)
        new.comp_flagged = True

    if s.monitor_interval and new.step_index % s.monitor_interval == 0:
        for i, m in enumerate(new.maps):
            det = forward_jacobian_det(m)
            dmin, dmax = float(det.min()), float(det.max())
            if dmin <= s.det_floor:
                raise MeshDegenerate(
                    "forward Jacobian of copy %d reached det %.3g at t=%.4g"
                    % (i, dmin, new.t))
            if max(abs(dmin - 1.0), abs(dmax - 1.0)) > s.eps_jac:
                logger.warning("copy %d det(grad X) in [%.3g, %.3g] at t=%.4g",
                               i, dmin, dmax, new.t)

    omega, u = _reconstruct(new)
    new.omega, new.u = omega, u

    sup = float(np.abs(omega.values).max())
    if sup > new.omega_sup_bound * (1.0 + 1e-9):
        logger.warning("sup|omega| = %.4g exceeds transport bound %.4g at t=%.4g",
                       sup, new.omega_sup_bound, new.t)

    if s.cross_check_interval and new.step_index % s.cross_check_interval == 0:
        gap = form_discrepancy(new)
        new.last_form_check = gap
        if gap > s.cross_check_tol:
            logger.warning("reconstruction forms differ by %.3g (rel L2) at t=%.4g",
                           gap, new.t)
    return new


def _reconstruct(state):
    if state.settings.reconstruction == "weber":
        u = reconstruct_velocity_weber(state)
        return curl2d(u), u
    return reconstruct_velocity_vorticity(state)


def run(state, T, dt, callback=None):
    """Advance until t reaches T; callback(state) after every step."""
    nsteps = int(round((T - state.t) / dt))
    for _ in range(nsteps):
        state = advance(state, dt)
        if callback is not None:
            callback(state)
    return state


# ---------------------------------------------------------------------------
# checkpoint container

_CKPT_MAGIC = b"NSRENS01"


def checkpoint(state):
    """Serialize the full state; restart() inverts bit-exactly."""
    s = state.settings
    meta = {
        "reconstruction": s.reconstruction, "integrator": s.integrator,
        "order": s.order, "tol_fp_rel": s.tol_fp_rel, "max_iter": s.max_iter,
        "contraction_limit": s.contraction_limit, "tol_comp_rel": s.tol_comp_rel,
        "cross_check_interval": s.cross_check_interval,
        "cross_check_tol": s.cross_check_tol,
        "monitor_interval": s.monitor_interval,
        "det_floor": s.det_floor, "eps_jac": s.eps_jac,
        "grad_route": s.grad_route,
        "omega_sup_bound": state.omega_sup_bound,
        "overshoot_tol": state.overshoot_tol,
        "comp_residual": state.comp_residual,
        "comp_flagged": state.comp_flagged,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    grid = state.grid
    out = io.BytesIO()
    out.write(_CKPT_MAGIC)
    out.write(struct.pack("<IIIdIddQ", 1, grid.n1, grid.n2, grid.L,
                          state.n_copies, state.nu, state.t, state.step_index))
    out.write(struct.pack("<dd", *state.mean_u))
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)
    out.write(np.ascontiguousarray(state.streams, dtype="<u8").tobytes())
    for m in state.maps:
        out.write(struct.pack("<dd", *m.brownian))
        out.write(snapshot_bytes(m.lam))
        out.write(snapshot_bytes(m.mu))
    for u0i in state.u0:
        out.write(snapshot_bytes(u0i))
    out.write(snapshot_bytes(state.u))
    out.write(snapshot_bytes(state.omega))
    return out.getvalue()


def restart(buf):
    """Rebuild an EnsembleState from checkpoint bytes.

    Validates the container before constructing anything, so a corrupted
    checkpoint raises CheckpointError and leaves no partial state.
    """
    try:
        if buf[:8] != _CKPT_MAGIC:
            raise CheckpointError("bad checkpoint magic")
        off = 8
        version, n1, n2, L, N, nu, t, step = struct.unpack_from("<IIIdIddQ", buf, off)
        off += struct.calcsize("<IIIdIddQ")
        if version != 1:
            raise CheckpointError("unsupported checkpoint version %d" % version)
        mean_u = np.array(struct.unpack_from("<dd", buf, off))
        off += 16
        (blob_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        meta = json.loads(buf[off:off + blob_len].decode())
        off += blob_len
        streams = np.frombuffer(buf[off:off + N * 32], dtype="<u8").reshape(N, 4).copy()
        off += N * 32
        maps = []
        for _ in range(N):
            brownian = np.array(struct.unpack_from("<dd", buf, off))
            off += 16
            lam, off = snapshot_from_bytes(buf, off)
            mu, off = snapshot_from_bytes(buf, off)
            maps.append((brownian, lam, mu))
        u0 = []
        for _ in range(N):
            f, off = snapshot_from_bytes(buf, off)
            u0.append(f)
        u, off = snapshot_from_bytes(buf, off)
        omega, off = snapshot_from_bytes(buf, off)
        if off != len(buf):
            raise CheckpointError("trailing bytes in checkpoint")
    except (struct.error, IndexError, ValueError, KeyError) as exc:
        raise CheckpointError("corrupt checkpoint: %s" % exc) from exc

    grid = PeriodicGrid(n1, n2, L)
    for f in [u, omega] + u0:
        if f.grid != grid:
            raise CheckpointError("inconsistent grids inside checkpoint")
    settings = StepSettings(
        reconstruction=meta["reconstruction"], integrator=meta["integrator"],
        order=int(meta["order"]), tol_fp_rel=meta["tol_fp_rel"],
        max_iter=int(meta["max_iter"]),
        contraction_limit=meta["contraction_limit"],
        tol_comp_rel=meta["tol_comp_rel"],
        cross_check_interval=int(meta["cross_check_interval"]),
        cross_check_tol=meta["cross_check_tol"],
        monitor_interval=int(meta["monitor_interval"]),
        det_floor=meta["det_floor"], eps_jac=meta["eps_jac"],
        grad_route=meta["grad_route"],
    ).validate()
    flow_maps = [FlowMap(lam, mu, brownian, t) for brownian, lam, mu in maps]
    state = EnsembleState(
        nu=nu, t=t, step_index=int(step), maps=flow_maps,
        u=u, omega=omega,
        u0=u0, mean_u=mean_u, streams=streams, settings=settings,
        omega_sup_bound=meta["omega_sup_bound"], overshoot_tol=meta["overshoot_tol"],
        comp_residual=meta["comp_residual"], comp_flagged=meta["comp_flagged"],
    )
    return _build_caches(state)
