"""One replica's stochastic flow of diffeomorphisms on the torus.

A map is stored as a pair of periodic displacement fields: the forward
displacement lam(y) = X(y) - y sampled on the mesh, and the inverse
displacement mu(x) = Y(x) - x, where Y is the spatial inverse of X.  A
time step composes the map with the one-step motion s(z) = z + h u(z) + dw
(velocity frozen over the step, spatially uniform noise), so the forward
update is exact at the nodes and the inverse is maintained by composing
with s^-1, found by fixed-point iteration.

The scattered-data route (forward positions carry the known inverse values,
which are then interpolated back to the mesh) is kept as a cross-validation
path in invert_map.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from .grid import FieldSampler, TensorField, VectorField, jacobian


class MeshDegenerate(Exception):
    """Forward map lost injectivity on the sample mesh."""


class StepRejected(Exception):
    """Advisory: the step violates the contraction condition, shrink h."""


class FixedPointError(Exception):
    """One-step inversion failed to converge; carries the final residual."""

    def __init__(self, residual, iterations):
        super().__init__("one-step inversion stalled at residual %.3e after %d iterations"
                         % (residual, iterations))
        self.residual = residual
        self.iterations = iterations


@dataclass
class FlowMap:
    lam: VectorField        # forward displacement X(y) - y
    mu: VectorField         # inverse displacement Y(x) - x
    brownian: np.ndarray    # accumulated noise position shift, shape (2,)
    t: float

    @property
    def grid(self):
        return self.lam.grid


def identity_map(grid):
    zero = np.zeros((grid.n1, grid.n2, 2))
    return FlowMap(VectorField(grid, zero), VectorField(grid, zero.copy()),
                   np.zeros(2), 0.0)


def grad_sup(u):
    """Pointwise-Frobenius sup of the velocity gradient (Lipschitz bound)."""
    J = jacobian(u).values
    return float(np.sqrt((J * J).sum(axis=(-2, -1)).max()))


def _sampler(u, order):
    return u if isinstance(u, FieldSampler) else FieldSampler(u, order=order)


def _one_step_motion(sampler, h, dw, integrator):
    """Displacement g with s(z) = z + g(z) for one step of frozen velocity."""
    dw = np.asarray(dw, dtype=float)
    if integrator == "euler":
        def g(z):
            return h * sampler(z) + dw
    elif integrator == "heun":
        def g(z):
            v0 = sampler(z)
            v1 = sampler(z + h * v0 + dw)
            return 0.5 * h * (v0 + v1) + dw
    else:
        raise ValueError("unknown integrator %r" % (integrator,))
    return g


def one_step_inverse(u, h, dw, *, integrator="euler", order=3,
                     tol_rel=1e-10, max_iter=50):
    """Displacement d with s(x + d(x)) = x for the one-step motion s.

    Plain fixed-point iteration d <- -g(x + d); converges when
    h * ||grad u||_inf is below 1/2.  Tolerance is tol_rel * L on the sup
    norm of the composition residual.
    """
    smp = _sampler(u, order)
    grid = smp.grid
    g = _one_step_motion(smp, h, dw, integrator)
    x = grid.nodes
    tol = tol_rel * grid.L
    d = np.zeros_like(x)
    res = np.inf
    for it in range(max_iter):
        gd = g(x + d)
        res = float(np.sqrt(((d + gd) ** 2).sum(axis=-1)).max())
        if res <= tol:
            return VectorField(grid, d)
        d = -gd
    raise FixedPointError(res, max_iter)


def flow_step(m, u, h, dw, *, integrator="euler", order=3, tol_rel=1e-10,
              max_iter=50, contraction_limit=0.5, _sampler_cache=None,
              _grad_sup=None):
    """Advance one map by the frozen-velocity step dX = u(X) h + dw.

    dw is the Brownian position increment for the step, already scaled by
    sqrt(2 nu) by the caller.  Raises StepRejected when h * ||grad u||_inf
    exceeds the contraction limit needed by the inverse update.
    """
    if not (h > 0):
        raise ValueError("time step must be positive")
    gs = grad_sup(u) if _grad_sup is None else _grad_sup
    if h * gs > contraction_limit:
        raise StepRejected("h * sup|grad u| = %.3g exceeds %.3g; shrink the time step"
                           % (h * gs, contraction_limit))
    smp = _sampler_cache if _sampler_cache is not None else _sampler(u, order)
    grid = m.grid
    dw = np.asarray(dw, dtype=float)
    g = _one_step_motion(smp, h, dw, integrator)

    x = grid.nodes
    lam_new = m.lam.values + g(x + m.lam.values)
    d = one_step_inverse(smp, h, dw, integrator=integrator, order=order,
                         tol_rel=tol_rel, max_iter=max_iter)
    mu_at = FieldSampler(m.mu, order=order)(x + d.values)
    mu_new = mu_at + d.values

    return FlowMap(VectorField(grid, lam_new), VectorField(grid, mu_new),
                   m.brownian + dw, m.t + h)


def pullback(f, m, order=3):
    """Samples of f composed with the inverse map, f(x + mu(x))."""
    grid = m.grid
    vals = interpolate_at_inverse(f, m, order)
    return type(f)(grid, vals)


def interpolate_at_inverse(f, m, order=3):
    return FieldSampler(f, order=order)(m.grid.nodes + m.mu.values)


def grad_transpose_inverse(m, route="spectral", order=3, margin=None):
    """Transposed Jacobian of the inverse map, G[.., i, j] = d_i Y_j.

    route="spectral" differentiates the inverse displacement on the mesh
    (the default).  route="forward" differentiates the forward map instead,
    inverts the 2x2 Jacobians where they are known (the forward image
    points), and interpolates the tensor back to the mesh; it needs the
    forward map to be injective.
    """
    grid = m.grid
    if route == "spectral":
        Jmu = jacobian(m.mu).values          # [.., i, j] = d_j mu_i
        G = np.swapaxes(Jmu, -2, -1).copy()  # d_i mu_j
        G[..., 0, 0] += 1.0
        G[..., 1, 1] += 1.0
        return TensorField(grid, G)
    if route == "forward":
        Jlam = jacobian(m.lam).values
        JX = Jlam.copy()
        JX[..., 0, 0] += 1.0
        JX[..., 1, 1] += 1.0
        det = JX[..., 0, 0] * JX[..., 1, 1] - JX[..., 0, 1] * JX[..., 1, 0]
        if det.min() <= 0.0:
            raise MeshDegenerate("forward Jacobian not positive (min det %.3g)" % det.min())
        inv = np.empty_like(JX)              # (grad X)^-1 evaluated at X(y)
        inv[..., 0, 0] = JX[..., 1, 1] / det
        inv[..., 0, 1] = -JX[..., 0, 1] / det
        inv[..., 1, 0] = -JX[..., 1, 0] / det
        inv[..., 1, 1] = JX[..., 0, 0] / det
        invT = np.swapaxes(inv, -2, -1)
        vals = _scatter_to_mesh(grid, m.lam.values, invT.reshape(-1, 4), margin)
        return TensorField(grid, vals.reshape(grid.n1, grid.n2, 2, 2))
    raise ValueError("unknown route %r" % (route,))


def forward_jacobian_det(m):
    """det(grad X) on the mesh; 1 for exactly volume-preserving maps."""
    J = jacobian(m.lam).values
    a = 1.0 + J[..., 0, 0]
    b = J[..., 0, 1]
    c = J[..., 1, 0]
    d = 1.0 + J[..., 1, 1]
    return a * d - b * c


def composition_residual(m, order=3):
    """Sup norm of X(Y(x)) - x, the forward/inverse consistency error."""
    lam_at = interpolate_at_inverse(m.lam, m, order)
    r = m.mu.values + lam_at
    return float(np.sqrt((r * r).sum(axis=-1)).max())


def _scatter_to_mesh(grid, lam_values, values_flat, margin=None):
    """Linear scattered interpolation from forward image points to the mesh.

    Image points are wrapped into the box and tiled into the neighbouring
    periods within a margin so every mesh node is interior to the
    triangulation.
    """
    if margin is None:
        margin = 0.25 * grid.L
    pts = grid.wrap(grid.nodes + lam_values).reshape(-1, 2)
    vals = values_flat
    tiles_p = [pts]
    tiles_v = [vals]
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            if s1 == 0 and s2 == 0:
                continue
            shifted = pts + np.array([s1 * grid.L, s2 * grid.L])
            keep = ((shifted[:, 0] > -margin) & (shifted[:, 0] < grid.L + margin)
                    & (shifted[:, 1] > -margin) & (shifted[:, 1] < grid.L + margin))
            if keep.any():
                tiles_p.append(shifted[keep])
                tiles_v.append(vals[keep])
    allp = np.concatenate(tiles_p, axis=0)
    allv = np.concatenate(tiles_v, axis=0)
    interp = LinearNDInterpolator(allp, allv)
    out = interp(grid.nodes.reshape(-1, 2))
    if np.any(~np.isfinite(out)):
        raise MeshDegenerate("scattered inverse interpolation left uncovered mesh nodes")
    return out


def invert_map(m, order=3, margin=None, det_floor=0.0):
    """Inverse displacement recomputed from the forward map alone.

    The forward positions X(y) carry the known inverse values Y(X(y)) = y,
    i.e. the displacement -lam(y); those scattered samples are interpolated
    linearly back to the mesh.  Cross-validates the composition-maintained
    inverse.  Raises MeshDegenerate when the forward Jacobian is not
    positive on the mesh.
    """
    det = forward_jacobian_det(m)
    if det.min() <= det_floor:
        raise MeshDegenerate("forward Jacobian not positive (min det %.3g)" % det.min())
    vals = _scatter_to_mesh(m.grid, m.lam.values, -m.lam.values.reshape(-1, 2), margin)
    return VectorField(m.grid, vals.reshape(m.grid.n1, m.grid.n2, 2))
