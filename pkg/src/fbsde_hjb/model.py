"""Problem data model for controlled forward-backward SDEs with jumps.

The forward state ``X`` follows

    dX = alpha dt + beta dB + int gamma(zeta) N~(dt, dzeta),

and the backward triple ``(Y, Z, K)`` solves

    dY = -g dt + Z dB + int K(zeta) N~(dt, dzeta),   Y(T) = h(X(T)).

Coefficient callables must broadcast over numpy arrays. The signatures are

    alpha(t, x, y, z, k, u)          beta(t, x, y, z, k, u)
    gamma(t, x, y, z, k, u, zeta)    g_driver(t, x, y, z, k, u)
    h_terminal(x)

where ``k`` carries a trailing axis with one entry per jump atom and ``zeta``
is a scalar atom location.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidProblemError, NonFiniteError

MAXIMIZE = "maximize"
MINIMIZE = "minimize"


def _zero(*args):
    return 0.0


@dataclass(frozen=True)
class CoefficientSet:
    """The five model functions alpha, beta, gamma, g and h."""

    alpha: Callable = _zero
    beta: Callable = _zero
    gamma: Callable = _zero
    g_driver: Callable = _zero
    h_terminal: Callable = _zero


@dataclass(frozen=True)
class JumpMeasure:
    """Finite-atom Levy measure: ``nu = sum_i weight_i * delta(zeta_i)``.

    Construction is permissive so that :func:`validate_problem` can report
    broken invariants instead of failing early.
    """

    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "atoms", tuple((float(z), float(w)) for z, w in self.atoms)
        )

    @classmethod
    def none(cls) -> "JumpMeasure":
        return cls(())

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def zetas(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    @property
    def total_intensity(self) -> float:
        total = 0.0
        for _, w in self.atoms:
            total = total + w
        return total

    def problems(self) -> list[str]:
        out = []
        for i, (z, w) in enumerate(self.atoms):
            if z == 0.0:
                out.append(f"atom at zero (index {i})")
            if not math.isfinite(z):
                out.append(f"non-finite atom location (index {i})")
            if not math.isfinite(w):
                out.append(f"non-finite jump weight (index {i})")
            elif w < 0:
                out.append(f"negative jump weight (index {i})")
        return out

    def integrate_values(self, values: Sequence[Any]):
        """Weighted sum ``sum_i weight_i * values[i]`` over the atoms.

        ``values[i]`` may be a scalar or an array; arrays are summed
        elementwise. Atoms are accumulated in order so that results are
        reproducible to the bit.
        """
        if len(values) != self.n_atoms:
            raise ValueError(f"expected {self.n_atoms} atom values, got {len(values)}")
        acc = 0.0
        for i, ((zeta, w), v) in enumerate(zip(self.atoms, values)):
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(
                    f"integrand is non-finite at atom {i} (zeta={zeta!r})"
                )
            acc = acc + w * v
        return acc


def levy_integral(measure: JumpMeasure, integrand: Callable[[float], Any]):
    """Integrate ``integrand`` against the finite-atom measure.

    Exact finite sum, no quadrature error. The empty measure returns 0.

    >>> levy_integral(JumpMeasure(((-1.0, 0.3), (2.0, 0.1))), lambda z: z)
    -0.09999999999999998
    """
    return measure.integrate_values([integrand(z) for z, _ in measure.atoms])


@dataclass(frozen=True)
class ControlSet:
    """Admissible control values: an interval ``[lo, hi]`` or a finite list.

    ``resolution`` is the spacing of the exhaustive search grid used when an
    interval control cannot be optimized in closed form.
    """

    kind: str = "interval"
    lo: float = -1.0
    hi: float = 1.0
    resolution: float = 1e-2
    values: tuple[float, ...] = ()

    @classmethod
    def interval(cls, lo: float, hi: float, resolution: float = 1e-2) -> "ControlSet":
        return cls("interval", float(lo), float(hi), float(resolution))

    @classmethod
    def finite(cls, values: Sequence[float]) -> "ControlSet":
        vals = tuple(sorted(float(v) for v in values))
        lo = vals[0] if vals else 0.0
        hi = vals[-1] if vals else 0.0
        return cls("list", lo, hi, 1.0, vals)

    def problems(self) -> list[str]:
        if self.kind == "interval":
            out = []
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
                out.append("control interval bounds must be finite")
            elif not self.lo < self.hi:
                out.append("control interval requires lo < hi")
            if not (self.resolution > 0 and math.isfinite(self.resolution)):
                out.append("control resolution must be positive")
            return out
        if self.kind == "list":
            if not self.values:
                return ["control list is empty"]
            if not all(math.isfinite(v) for v in self.values):
                return ["control list has non-finite values"]
            return []
        return [f"unknown control set kind {self.kind!r}"]

    def search_grid(self) -> np.ndarray:
        """Ascending candidates for exhaustive search."""
        if self.kind == "list":
            return np.array(self.values, dtype=float)
        n = int(round((self.hi - self.lo) / self.resolution)) + 1
        return np.linspace(self.lo, self.hi, max(n, 2))

    def probe_points(self, n: int = 5) -> np.ndarray:
        if self.kind == "list":
            return np.array(self.values, dtype=float)
        return np.linspace(self.lo, self.hi, n)

    def project(self, u):
        """Map arbitrary values onto the set (clip, or nearest list entry)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "interval":
            return np.clip(u, self.lo, self.hi)
        vals = np.array(self.values)
        idx = np.abs(u[..., None] - vals).argmin(axis=-1)
        return vals[idx]

    def contains(self, u, atol: float = 0.0) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "interval":
            return (u >= self.lo - atol) & (u <= self.hi + atol)
        vals = np.array(self.values)
        return (np.abs(u[..., None] - vals) <= atol).any(axis=-1)


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Time nodes ``0 = t_0 < ... < t_M = T`` and uniform space nodes."""

    t_nodes: np.ndarray
    x_nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.t_nodes, dtype=float)
        x = np.array(self.x_nodes, dtype=float)
        errs = []
        if t.ndim != 1 or t.size < 2:
            errs.append("grid needs at least one time step")
        elif t[0] != 0.0 or not np.all(np.diff(t) > 0):
            errs.append("time nodes must start at 0 and increase strictly")
        if x.ndim != 1 or x.size < 5:
            errs.append("grid needs at least 5 spatial nodes")
        elif not np.all(np.diff(x) > 0):
            errs.append("space nodes must increase strictly")
        else:
            dx = np.diff(x)
            if np.max(np.abs(dx - dx.mean())) > 1e-12 * dx.mean() * max(1.0, x.size):
                errs.append("space nodes must be uniformly spaced")
        if errs:
            raise InvalidProblemError(errs)
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "t_nodes", t)
        object.__setattr__(self, "x_nodes", x)

    @classmethod
    def uniform(cls, T: float, n_steps: int, x_min: float, x_max: float, n_x: int) -> "SpaceTimeGrid":
        if not T > 0:
            raise InvalidProblemError("horizon nonpositive")
        return cls(np.linspace(0.0, T, n_steps + 1), np.linspace(x_min, x_max, n_x))

    @property
    def T(self) -> float:
        return float(self.t_nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.t_nodes.size - 1

    @property
    def n_x(self) -> int:
        return self.x_nodes.size

    @property
    def dx(self) -> float:
        return float((self.x_nodes[-1] - self.x_nodes[0]) / (self.x_nodes.size - 1))

    @property
    def x_min(self) -> float:
        return float(self.x_nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.x_nodes[-1])


@dataclass(frozen=True)
class ProblemSpec:
    """A complete controlled FBSDE problem.

    ``x_domain`` is the state box on which the coefficients are required to be
    total; it drives the validation probe lattice and the default grid.
    ``meta`` carries free-form provenance such as benchmark parameters.
    """

    coefficients: CoefficientSet
    jumps: JumpMeasure = field(default_factory=JumpMeasure.none)
    controls: ControlSet = field(default_factory=ControlSet)
    T: float = 1.0
    x0: float = 0.0
    objective_sense: str = MAXIMIZE
    deterministic_coefficients: bool = True
    x_domain: tuple[float, float] = (-1.0, 1.0)
    name: str = "custom"
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def sense_sign(self) -> float:
        return 1.0 if self.objective_sense == MAXIMIZE else -1.0


def with_shifts(spec: ProblemSpec, terminal_shift: float = 0.0, driver_shift: float = 0.0) -> ProblemSpec:
    """Copy of ``spec`` with ``h + terminal_shift`` and ``g + driver_shift``."""
    c = spec.coefficients
    h0, g0 = c.h_terminal, c.g_driver

    def h(x):
        return h0(x) + terminal_shift

    def g(t, x, y, z, k, u):
        return g0(t, x, y, z, k, u) + driver_shift

    coeffs = CoefficientSet(c.alpha, c.beta, c.gamma, g, h)
    meta = dict(spec.meta)
    meta["shifts"] = {"terminal": terminal_shift, "driver": driver_shift}
    return ProblemSpec(
        coeffs, spec.jumps, spec.controls, spec.T, spec.x0, spec.objective_sense,
        spec.deterministic_coefficients, spec.x_domain, spec.name + "+shift", meta,
    )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self):
        if self.violations:
            raise InvalidProblemError(self.violations)


def probe_lattice(spec: ProblemSpec, n: int = 5):
    """Deterministic sample arguments ``(t, x, y, z, k, u)`` for coefficient probes."""
    T = spec.T if spec.T > 0 else 1.0
    lo, hi = spec.x_domain
    ts = np.linspace(0.0, T, n)
    xs = np.linspace(lo, hi, n)
    ys = np.array([-1.0, 0.0, 1.0])
    zs = np.array([-1.0, 0.0, 1.0])
    us = spec.controls.probe_points(5) if not spec.controls.problems() else np.array([0.0])
    grids = np.meshgrid(ts, xs, ys, zs, us, indexing="ij")
    t, x, y, z, u = (a.ravel() for a in grids)
    k = np.zeros(x.shape + (spec.jumps.n_atoms,))
    return t, x, y, z, k, u


def validate_problem(spec: ProblemSpec) -> ValidationReport:
    """List every broken invariant of ``spec``; an empty report means valid.

    Each coefficient is probed twice on a fixed lattice inside ``x_domain``
    to catch non-finite outputs and non-deterministic evaluation.
    """
    v: list[str] = []
    if not (spec.T > 0 and math.isfinite(spec.T)):
        v.append("horizon nonpositive")
    if spec.objective_sense not in (MAXIMIZE, MINIMIZE):
        v.append(f"unknown objective sense {spec.objective_sense!r}")
    lo, hi = spec.x_domain
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        v.append("state domain requires finite lo < hi")
    if not math.isfinite(spec.x0):
        v.append("initial state is not finite")
    v.extend(spec.jumps.problems())
    v.extend(spec.controls.problems())
    if v:
        return ValidationReport(tuple(v))

    t, x, y, z, k, u = probe_lattice(spec)
    c = spec.coefficients
    calls = {
        "alpha": lambda: c.alpha(t, x, y, z, k, u),
        "beta": lambda: c.beta(t, x, y, z, k, u),
        "g_driver": lambda: c.g_driver(t, x, y, z, k, u),
        "h_terminal": lambda: c.h_terminal(x),
    }
    for i, zeta in enumerate(spec.jumps.zetas):
        calls[f"gamma[atom {i}]"] = lambda zeta=zeta: c.gamma(t, x, y, z, k, u, zeta)
    for name, call in calls.items():
        try:
            with np.errstate(all="ignore"):
                first = np.broadcast_to(np.asarray(call(), dtype=float), x.shape)
                second = np.broadcast_to(np.asarray(call(), dtype=float), x.shape)
        except Exception as exc:  # coefficient must be total on the box
            v.append(f"{name} raised {type(exc).__name__}: {exc}")
            continue
        bad = ~np.isfinite(first)
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            v.append(f"{name} non-finite at t={t[j]:g}, x={x[j]:g}, u={u[j]:g}")
        if not np.array_equal(first, second, equal_nan=True):
            v.append(f"{name} is not deterministic")
    return ValidationReport(tuple(v))
