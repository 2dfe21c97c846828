"""Grid-sampled decoupling field ``y(t, x)`` with its ``z`` and ``k`` layers.

The field links the backward process to the forward one through
``Y(t) = y(t, X(t))``. This module handles finite-difference derivatives,
off-grid interpolation and the two lifting maps that turn field data into
the ``Z`` and ``K`` components of the backward SDE.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import InvalidProblemError, NonFiniteError
from .model import SpaceTimeGrid

DETERMINISTIC = "deterministic"
STOCHASTIC_READONLY = "stochastic-readonly"


class DerivativeLayer(NamedTuple):
    y_prime: np.ndarray
    y_double_prime: np.ndarray
    z_prime: np.ndarray


class FieldValue(NamedTuple):
    y: np.ndarray
    z: np.ndarray
    k: np.ndarray
    extrapolated: np.ndarray


def first_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    # central interior, second-order one-sided at both ends
    return np.gradient(values, dx, edge_order=2, axis=-1)


def second_derivative(values: np.ndarray, dx: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    d = np.diff(v, axis=-1)
    # written on differences so that constants give exactly zero
    out[..., 1:-1] = (d[..., 1:] - d[..., :-1]) / dx**2
    # (2 y0 - 5 y1 + 4 y2 - y3) / dx^2 and its mirror image
    out[..., 0] = (-2.0 * d[..., 0] + 3.0 * d[..., 1] - d[..., 2]) / dx**2
    out[..., -1] = (2.0 * d[..., -1] - 3.0 * d[..., -2] + d[..., -3]) / dx**2
    return out


def derivative_layer(y_row, z_row, dx: float, skip_z: bool = False) -> DerivativeLayer:
    y_row = np.asarray(y_row, dtype=float)
    if y_row.shape[-1] < 5:
        raise InvalidProblemError("derivative stencils need at least 5 spatial nodes")
    z_prime = None if skip_z else first_derivative(np.asarray(z_row, dtype=float), dx)
    return DerivativeLayer(first_derivative(y_row, dx), second_derivative(y_row, dx), z_prime)


def locate_x(x_nodes: np.ndarray, x):
    """Cell index and (unclipped) weight for linear interpolation in ``x``.

    Weights fall outside ``[0, 1]`` beyond the end nodes, which turns the
    interpolant into the linear extrapolant from the two nearest nodes.
    """
    x = np.asarray(x, dtype=float)
    i = np.clip(np.searchsorted(x_nodes, x, side="right") - 1, 0, x_nodes.size - 2)
    w = (x - x_nodes[i]) / (x_nodes[i + 1] - x_nodes[i])
    outside = (x < x_nodes[0]) | (x > x_nodes[-1])
    return i, w, outside


def interp_row(x_nodes: np.ndarray, row: np.ndarray, x) -> np.ndarray:
    """Piecewise-linear interpolation of ``row`` along its first axis.

    ``row`` has shape ``(N,)`` or ``(N, A)``; linear extrapolation outside.
    """
    i, w, _ = locate_x(x_nodes, x)
    if row.ndim == 2:
        w = w[..., None]
    return (1.0 - w) * row[i] + w * row[i + 1]


@dataclass(frozen=True, eq=False)
class DecouplingField:
    """Random field ``y`` and its martingale layers on a space-time grid.

    ``y_values`` and ``z_values`` have shape ``(M+1, N)``; ``k_values`` has
    shape ``(M+1, N, A)`` with one slice per jump atom. In deterministic mode
    the ``z`` and ``k`` layers are identically zero.
    """

    grid: SpaceTimeGrid
    y_values: np.ndarray
    z_values: np.ndarray | None = None
    k_values: np.ndarray | None = None
    n_atoms: int = 0
    mode: str = DETERMINISTIC

    def __post_init__(self):
        shape = (self.grid.t_nodes.size, self.grid.n_x)
        y = np.array(self.y_values, dtype=float)
        z = np.zeros(shape) if self.z_values is None else np.array(self.z_values, dtype=float)
        k = (np.zeros(shape + (self.n_atoms,)) if self.k_values is None
             else np.array(self.k_values, dtype=float))
        errs = []
        if y.shape != shape:
            errs.append(f"y layer has shape {y.shape}, grid needs {shape}")
        if z.shape != shape:
            errs.append(f"z layer has shape {z.shape}, grid needs {shape}")
        if k.shape != shape + (self.n_atoms,):
            errs.append(f"k layer has shape {k.shape}, expected {shape + (self.n_atoms,)}")
        if self.mode not in (DETERMINISTIC, STOCHASTIC_READONLY):
            errs.append(f"unknown field mode {self.mode!r}")
        if errs:
            raise InvalidProblemError(errs)
        if not (np.isfinite(y).all() and np.isfinite(z).all() and np.isfinite(k).all()):
            raise NonFiniteError("decoupling field holds non-finite values")
        if self.mode == DETERMINISTIC and (np.any(z != 0) or np.any(k != 0)):
            raise InvalidProblemError("deterministic field must have zero z and k layers")
        for a in (y, z, k):
            a.setflags(write=False)
        object.__setattr__(self, "y_values", y)
        object.__setattr__(self, "z_values", z)
        object.__setattr__(self, "k_values", k)

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn, n_atoms: int = 0) -> "DecouplingField":
        """Sample a deterministic field ``fn(t, x)`` on the grid nodes."""
        tt, xx = np.meshgrid(grid.t_nodes, grid.x_nodes, indexing="ij")
        y = np.broadcast_to(np.asarray(fn(tt, xx), dtype=float), tt.shape)
        return cls(grid, y, n_atoms=n_atoms)

    @cached_property
    def derivatives(self) -> DerivativeLayer:
        """Derivative layers for every time index, each of shape ``(M+1, N)``."""
        return derivative_layer(self.y_values, self.z_values, self.grid.dx)

    def _locate_t(self, t):
        t = np.asarray(t, dtype=float)
        tn = self.grid.t_nodes
        if np.any(t < tn[0]) or np.any(t > tn[-1]):
            raise InvalidProblemError(f"time outside [0, {tn[-1]}]")
        j = np.clip(np.searchsorted(tn, t, side="right") - 1, 0, tn.size - 2)
        w = (t - tn[j]) / (tn[j + 1] - tn[j])
        return j, w

    def interpolate(self, layers: np.ndarray, t, x) -> np.ndarray:
        """Bilinear interpolation of any ``(M+1, N[, A])`` stack at ``(t, x)``."""
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        j, wt = self._locate_t(t)
        i, wx, _ = locate_x(self.grid.x_nodes, x)
        if layers.ndim == 3:
            wt, wx = wt[..., None], wx[..., None]
        lo = (1.0 - wx) * layers[j, i] + wx * layers[j, i + 1]
        hi = (1.0 - wx) * layers[j + 1, i] + wx * layers[j + 1, i + 1]
        return (1.0 - wt) * lo + wt * hi

    def time_slope(self, t, x) -> np.ndarray:
        """``dy/dt`` of the interpolant on the time cell starting at or before ``t``."""
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        j, _ = self._locate_t(t)
        i, wx, _ = locate_x(self.grid.x_nodes, x)
        dt = self.grid.t_nodes[j + 1] - self.grid.t_nodes[j]
        Y = self.y_values
        lo = (1.0 - wx) * Y[j, i] + wx * Y[j, i + 1]
        hi = (1.0 - wx) * Y[j + 1, i] + wx * Y[j + 1, i + 1]
        return (hi - lo) / dt

    def derivatives_at(self, t, x) -> DerivativeLayer:
        d = self.derivatives
        return DerivativeLayer(*(self.interpolate(layer, t, x) for layer in d))

    def row(self, time_index: int):
        return (self.y_values[time_index], self.z_values[time_index],
                self.k_values[time_index])


def estimate_derivatives(field: DecouplingField, time_index: int) -> DerivativeLayer:
    """Spatial derivatives ``y'``, ``y''`` and ``z'`` at one time index.

    Interior nodes use second-order central differences and the two end
    nodes use second-order one-sided stencils.
    """
    M = field.grid.n_steps
    if not -M - 1 <= time_index <= M:
        raise IndexError(f"time index {time_index} outside 0..{M}")
    return derivative_layer(field.y_values[time_index], field.z_values[time_index],
                            field.grid.dx)


def eval_field(field: DecouplingField, t, x) -> FieldValue:
    """Field values at arbitrary ``(t, x)``.

    Bilinear inside the grid box; beyond ``[x_min, x_max]`` the two nearest
    nodes are extrapolated linearly and the query is flagged in
    ``FieldValue.extrapolated``. Times outside ``[0, T]`` raise.
    """
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    _, _, outside = locate_x(field.grid.x_nodes, x)
    return FieldValue(
        field.interpolate(field.y_values, t, x),
        field.interpolate(field.z_values, t, x),
        field.interpolate(field.k_values, t, x),
        outside,
    )


def lift_Z(z, y_prime, beta):
    """Martingale integrand of the composed process: ``z + y' * beta``."""
    return z + y_prime * beta


def lift_K(field: DecouplingField, t, x, gamma_at_atom, atom_index: int):
    """Jump integrand ``y(t, x+gamma) - y(t, x) + k(t, x+gamma, atom)``."""
    if field.n_atoms and not 0 <= atom_index < field.n_atoms:
        raise IndexError(f"atom index {atom_index} outside 0..{field.n_atoms - 1}")
    shifted = np.asarray(x, dtype=float) + gamma_at_atom
    y_shift = field.interpolate(field.y_values, t, shifted)
    y_here = field.interpolate(field.y_values, t, x)
    if field.n_atoms == 0:
        k_shift = 0.0
    else:
        k_shift = field.interpolate(field.k_values[..., atom_index], t, shifted)
    return y_shift - y_here + k_shift


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_field_csv(field: DecouplingField, path, u_hat: np.ndarray | None = None):
    """One row per ``(t, x)``: ``t, x, y, z, k_1..k_A, u_hat`` at 17 significant digits."""
    grid = field.grid
    header = ["t", "x", "y", "z"] + [f"k_{a + 1}" for a in range(field.n_atoms)] + ["u_hat"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j, t in enumerate(grid.t_nodes):
            for i, x in enumerate(grid.x_nodes):
                u = "" if u_hat is None else _fmt(u_hat[j, i])
                row = [_fmt(t), _fmt(x), _fmt(field.y_values[j, i]), _fmt(field.z_values[j, i])]
                row += [_fmt(v) for v in field.k_values[j, i]]
                w.writerow(row + [u])


def read_field_csv(path, grid: SpaceTimeGrid) -> tuple[DecouplingField, np.ndarray]:
    """Inverse of :func:`write_field_csv` for a known grid."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_atoms = sum(1 for h in header if h.startswith("k_"))
    shape = (grid.t_nodes.size, grid.n_x)
    data = np.array([[float(v) if v else np.nan for v in r] for r in body])
    y = data[:, 2].reshape(shape)
    k = data[:, 4:4 + n_atoms].reshape(shape + (n_atoms,))
    u = data[:, 4 + n_atoms].reshape(shape)
    z = data[:, 3].reshape(shape)
    mode = DETERMINISTIC if not (np.any(z != 0) or np.any(k != 0)) else STOCHASTIC_READONLY
    return DecouplingField(grid, y, z, k, n_atoms, mode), u
