"""Transformed driver ``G_u``, its pointwise optimizer, and the composition residual.

For a decoupling field ``(y, z, k)`` the transformed driver at a node is

    G_u = g(t, x, y, z~, k~, u) + y' alpha + 1/2 y'' beta^2 + z' beta
          + int {y(x + gamma) - y - y' gamma} nu(dzeta)
          + int {k(x + gamma, zeta) - k(x, zeta)} nu(dzeta)

with ``z~ = z + y' beta`` and ``k~ = y(x + gamma) - y + k(x + gamma)``.
Coefficients are evaluated at ``(t, x, y(t,x), z(t,x), k(t,x,.), u)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .errors import InvalidProblemError, NonFiniteError
from .field import DecouplingField, DerivativeLayer, derivative_layer, interp_row, lift_Z
from .model import ProblemSpec


class Branch(IntEnum):
    """How the optimizer settled a node."""

    MAX = 1                        # concave quadratic, clamped vertex
    MIN = 2                        # convex quadratic under minimize, clamped vertex
    FALLBACK_FLAT = 3              # vanishing second-order coefficient
    FALLBACK_WRONG_CURVATURE = 4   # stationary point is the wrong extremum
    FALLBACK_NONQUADRATIC = 5
    ENUMERATED = 6                 # finite control list


class OptimizerResult(NamedTuple):
    u_hat: np.ndarray
    G_hat: np.ndarray
    branch: np.ndarray


@dataclass(frozen=True, eq=False)
class DriverContext:
    """Everything ``G_u`` needs on one time layer, for all spatial nodes."""

    spec: ProblemSpec
    t: float
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    k: np.ndarray
    derivs: DerivativeLayer

    @classmethod
    def from_layer(cls, spec: ProblemSpec, x_nodes, t: float, y_row, z_row=None, k_row=None):
        x_nodes = np.asarray(x_nodes, dtype=float)
        y_row = np.asarray(y_row, dtype=float)
        zero_z = z_row is None
        z_row = np.zeros_like(y_row) if zero_z else np.asarray(z_row, dtype=float)
        A = spec.jumps.n_atoms
        k_row = np.zeros(y_row.shape + (A,)) if k_row is None else np.asarray(k_row, dtype=float)
        if not 0.0 <= t <= spec.T * (1 + 1e-12):
            raise InvalidProblemError(f"driver time {t} outside [0, {spec.T}]")
        if not (x_nodes.shape == y_row.shape == z_row.shape and k_row.shape == y_row.shape + (A,)):
            raise InvalidProblemError("driver layers do not share the spatial grid")
        dx = (x_nodes[-1] - x_nodes[0]) / (x_nodes.size - 1)
        if zero_z:
            d = derivative_layer(y_row, z_row[:0], dx, skip_z=True)
            d = d._replace(z_prime=z_row)
        else:
            d = derivative_layer(y_row, z_row, dx)
        return cls(spec, float(t), x_nodes, y_row, z_row, k_row, d)

    @classmethod
    def from_field(cls, spec: ProblemSpec, field: DecouplingField, time_index: int):
        y, z, k = field.row(time_index)
        return cls.from_layer(spec, field.grid.x_nodes, field.grid.t_nodes[time_index], y, z, k)

    @property
    def n_nodes(self) -> int:
        return self.x.size


def _bc(a, shape):
    return a if a.shape == shape else np.broadcast_to(a, shape)


def _checked(name, value, shape):
    out = _bc(np.asarray(value, dtype=float), shape)
    if not np.isfinite(out).all():
        raise NonFiniteError(f"coefficient {name} returned a non-finite value")
    return out


def _terms(ctx: DriverContext, u, nodes):
    """Coefficient values and lifted arguments at ``nodes`` for controls ``u``."""
    c = ctx.spec.coefficients
    x, y, z = ctx.x[nodes], ctx.y[nodes], ctx.z[nodes]
    k = ctx.k[nodes]
    u = np.asarray(u, dtype=float)
    shape = np.broadcast_shapes(u.shape, x.shape)
    x, y, z, u = (_bc(a, shape) for a in (x, y, z, u))
    k = _bc(k, shape + k.shape[-1:])
    t = ctx.t
    alpha = _checked("alpha", c.alpha(t, x, y, z, k, u), shape)
    beta = _checked("beta", c.beta(t, x, y, z, k, u), shape)
    gammas = [
        _checked(f"gamma[atom {a}]", c.gamma(t, x, y, z, k, u, zeta), shape)
        for a, zeta in enumerate(ctx.spec.jumps.zetas)
    ]
    return t, x, y, z, k, u, alpha, beta, gammas


def driver_values(ctx: DriverContext, u, nodes=slice(None)) -> np.ndarray:
    """Vectorized ``G_u`` at ``nodes``; ``u`` broadcasts against the node axis."""
    c = ctx.spec.coefficients
    nu = ctx.spec.jumps
    t, x, y, z, k, u, alpha, beta, gammas = _terms(ctx, u, nodes)
    shape = x.shape
    yp = _bc(ctx.derivs.y_prime[nodes], shape)
    ypp = _bc(ctx.derivs.y_double_prime[nodes], shape)
    zp = _bc(ctx.derivs.z_prime[nodes], shape)

    z_lift = lift_Z(z, yp, beta)
    k_lift = np.zeros(shape + (nu.n_atoms,))
    compensator_y, compensator_k = [], []
    for a, gam in enumerate(gammas):
        shifted = x + gam
        y_shift = interp_row(ctx.x, ctx.y, shifted)
        k_shift = interp_row(ctx.x, ctx.k[:, a], shifted)
        k_lift[..., a] = y_shift - y + k_shift
        compensator_y.append(y_shift - y - yp * gam)
        compensator_k.append(k_shift - k[..., a])

    g = _checked("g_driver", c.g_driver(t, x, y, z_lift, k_lift, u), shape)
    G = g + yp * alpha + 0.5 * ypp * beta**2 + zp * beta
    if nu.n_atoms:
        G = G + nu.integrate_values(compensator_y) + nu.integrate_values(compensator_k)
    return G


def eval_driver(ctx: DriverContext, x_index: int, u: float) -> float:
    """``G_u(t, x)`` at a single node for a single control value."""
    if not -ctx.n_nodes <= x_index < ctx.n_nodes:
        raise IndexError(f"node {x_index} outside grid of {ctx.n_nodes}")
    if not ctx.spec.controls.contains(u, atol=1e-12):
        raise InvalidProblemError(f"control {u} is outside the control set")
    return float(driver_values(ctx, np.asarray(u, dtype=float), np.array([x_index]))[0])


def jump_targets(ctx: DriverContext, u, nodes=slice(None)) -> np.ndarray:
    """Post-jump positions ``x + gamma`` with shape ``(..., A)``."""
    _, x, *_, gammas = _terms(ctx, u, nodes)
    if not gammas:
        return np.zeros(x.shape + (0,))
    return np.stack([x + g for g in gammas], axis=-1)


def _grid_search(ctx: DriverContext, nodes: np.ndarray, candidates: np.ndarray, sign: float,
                 chunk: int = 512):
    """Exhaustive search; ties resolve toward the smallest candidate."""
    best_val = np.full(nodes.size, -np.inf)
    best_u = np.full(nodes.size, candidates[0])
    best_G = np.zeros(nodes.size)
    for start in range(0, candidates.size, chunk):
        cand = candidates[start:start + chunk]
        G = driver_values(ctx, cand[:, None], nodes)
        score = sign * G
        idx = np.argmax(score, axis=0)
        cols = np.arange(nodes.size)
        top = score[idx, cols]
        better = top > best_val
        best_val = np.where(better, top, best_val)
        best_u = np.where(better, cand[idx], best_u)
        best_G = np.where(better, G[idx, cols], best_G)
    return best_u, best_G


def optimize_layer(ctx: DriverContext, nodes=None, quad_tol: float = 1e-10) -> OptimizerResult:
    """Pointwise optimizer of ``u -> G_u`` at every node (vectorized).

    Interval controls are probed at five equally spaced points. When the
    three-point quadratic through the outer and middle probes reproduces the
    other two probes to ``quad_tol`` (relative), and its curvature matches the
    objective sense, the vertex is clamped to the interval. Every other case
    falls back to exhaustive search on the resolution grid.
    """
    spec = ctx.spec
    ctrl = spec.controls
    sign = spec.sense_sign
    sel = slice(None) if nodes is None else np.asarray(nodes)
    nodes = np.arange(ctx.n_nodes) if nodes is None else np.asarray(nodes)
    u_hat = np.empty(nodes.size)
    G_hat = np.empty(nodes.size)
    branch = np.empty(nodes.size, dtype=np.int8)

    if ctrl.kind == "list":
        u_hat[:], G_hat[:] = _grid_search(ctx, nodes, ctrl.search_grid(), sign)
        branch[:] = Branch.ENUMERATED
        return OptimizerResult(u_hat, G_hat, branch)

    probes = ctrl.probe_points(5)
    G = driver_values(ctx, probes[:, None], sel)  # (5, n)
    h = 0.5 * (ctrl.hi - ctrl.lo)
    mid = probes[2]
    A = (G[0] - 2.0 * G[2] + G[4]) / (2.0 * h * h)
    B = (G[4] - G[0]) / (2.0 * h)
    C = G[2]
    scale = np.maximum(1.0, np.abs(G).max(axis=0))
    fit = A * (probes[[1, 3], None] - mid) ** 2 + B * (probes[[1, 3], None] - mid) + C
    quadratic = (np.abs(fit - G[[1, 3]]) <= quad_tol * scale).all(axis=0)
    flat = np.abs(A) * h * h <= quad_tol * scale
    curved_right = sign * A < 0

    closed = quadratic & ~flat & curved_right
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = mid - B / (2.0 * A)
    if closed.all():
        u_hat[:] = np.clip(vertex, ctrl.lo, ctrl.hi)
        G_hat[:] = driver_values(ctx, u_hat, sel)
        branch[:] = Branch.MAX if sign > 0 else Branch.MIN
        return OptimizerResult(u_hat, G_hat, branch)
    if closed.any():
        u_c = np.clip(vertex[closed], ctrl.lo, ctrl.hi)
        u_hat[closed] = u_c
        G_hat[closed] = driver_values(ctx, u_c, nodes[closed])
        branch[closed] = Branch.MAX if sign > 0 else Branch.MIN

    rest = ~closed
    if rest.any():
        u_r, G_r = _grid_search(ctx, nodes[rest], ctrl.search_grid(), sign)
        u_hat[rest], G_hat[rest] = u_r, G_r
        branch[rest] = np.where(
            ~quadratic[rest], Branch.FALLBACK_NONQUADRATIC,
            np.where(flat[rest], Branch.FALLBACK_FLAT, Branch.FALLBACK_WRONG_CURVATURE),
        )
    return OptimizerResult(u_hat, G_hat, branch)


def maximize_driver(ctx: DriverContext, x_index: int) -> tuple[float, float, Branch]:
    """Optimal control and driver value at one node.

    Honors ``spec.objective_sense``: maximize ``G_u``, or minimize it when
    the sense is ``"minimize"``.
    """
    if not -ctx.n_nodes <= x_index < ctx.n_nodes:
        raise IndexError(f"node {x_index} outside grid of {ctx.n_nodes}")
    res = optimize_layer(ctx, np.array([x_index % ctx.n_nodes]))
    return float(res.u_hat[0]), float(res.G_hat[0]), Branch(int(res.branch[0]))


class ResidualStats(NamedTuple):
    mean: float
    rms: float
    max_abs: float
    n_values: int


def ito_ventzell_residual(field: DecouplingField, spec: ProblemSpec, bundle, dt: float,
                          paths=None) -> ResidualStats:
    """Per-step defect of the composed process ``y(t, X(t))`` along simulated paths.

    For each step the increment of ``y(t, X)`` is compared with the drift,
    Brownian and compensated-jump parts predicted by the chain rule for a
    field composed with a jump diffusion. The field time derivative plays the
    role of the field drift. ``paths`` selects rows of the bundle (all by
    default). Each step contributes
    ``r_n = dY - drift*dt - (z + y' beta) dB - sum_a jump_a * dN~_a``.
    """
    if abs(bundle.dt - dt) > 1e-12 * max(1.0, dt):
        raise InvalidProblemError(f"path step {bundle.dt} does not match dt={dt}")
    rows = slice(None) if paths is None else np.atleast_1d(paths)
    X = bundle.X[rows]
    dB = bundle.dB[rows]
    counts = bundle.jump_counts[rows]
    U = bundle.u[rows]
    nu = spec.jumps
    w = nu.weights
    c = spec.coefficients
    coupling = bundle.coupling
    res = np.empty(dB.shape)
    for n in range(dB.shape[1]):
        t = bundle.times[n]
        x = X[:, n]
        u = U[:, n]
        here = field.interpolate(field.y_values, t, x)
        ahead = field.interpolate(field.y_values, bundle.times[n + 1], X[:, n + 1])
        d = field.derivatives_at(t, x)
        zf = field.interpolate(field.z_values, t, x)
        yc, zc, kc = _coupling_args(coupling, t, x, nu.n_atoms)
        alpha = _checked("alpha", c.alpha(t, x, yc, zc, kc, u), x.shape)
        beta = _checked("beta", c.beta(t, x, yc, zc, kc, u), x.shape)
        drift = field.time_slope(t, x) + d.y_prime * alpha + 0.5 * d.y_double_prime * beta**2 \
            + d.z_prime * beta
        jump_part = 0.0
        for a, zeta in enumerate(nu.zetas):
            gam = _checked(f"gamma[atom {a}]", c.gamma(t, x, yc, zc, kc, u, zeta), x.shape)
            shifted = x + gam
            y_shift = field.interpolate(field.y_values, t, shifted)
            k_here = field.interpolate(field.k_values[..., a], t, x) if field.n_atoms else 0.0
            k_shift = field.interpolate(field.k_values[..., a], t, shifted) if field.n_atoms else 0.0
            drift = drift + w[a] * (y_shift - here - d.y_prime * gam) + w[a] * (k_shift - k_here)
            jump_part = jump_part + (y_shift - here + k_shift) * (counts[:, n, a] - w[a] * bundle.dt)
        res[:, n] = (ahead - here) - drift * bundle.dt - (zf + d.y_prime * beta) * dB[:, n] - jump_part
    return ResidualStats(float(res.mean()), float(np.sqrt(np.mean(res**2))),
                         float(np.abs(res).max()), int(res.size))


def _coupling_args(coupling, t, x, n_atoms):
    """``(y, z, k)`` arguments passed to the forward coefficients."""
    if coupling is None:
        zero = np.zeros_like(x)
        return zero, zero, np.zeros(x.shape + (n_atoms,))
    return (coupling.interpolate(coupling.y_values, t, x),
            coupling.interpolate(coupling.z_values, t, x),
            coupling.interpolate(coupling.k_values, t, x) if n_atoms else np.zeros(x.shape + (0,)))
