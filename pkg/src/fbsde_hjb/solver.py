"""Backward explicit solver for the stochastic HJB equation.

Specialized to deterministic coefficients (``z = k = 0``), where the field
equation becomes the backward integro-differential equation

    dy/dt + G_{u_hat}(t, x) = 0,    y(T, x) = h(x),

with ``u_hat`` the pointwise optimizer of ``u -> G_u``. Each backward step is

    y(t_n) = y(t_{n+1}) + dt * G_{u_hat}(t_{n+1}),

split into equal substeps when the effective diffusion ``beta(u_hat)^2 / 2``
would break the explicit stability bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Any

import numpy as np

from .benchmarks import MarketParams
from .driver import Branch, DriverContext, driver_values, jump_targets, optimize_layer
from .errors import InvalidProblemError, NonFiniteError, UnstableStepError
from .field import DecouplingField, eval_field
from .model import ProblemSpec, SpaceTimeGrid, probe_lattice, validate_problem

TOLERANCES = {
    "algebraic": 1e-12,
    "pde_vs_closed_form_rel": 1e-3,
    "monte_carlo_se": 3.0,
}


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Solved value field, feedback control and run diagnostics."""

    field: DecouplingField
    control_field: np.ndarray
    branch_field: np.ndarray
    y0_at_x0: float
    diagnostics: dict[str, Any] = dc_field(default_factory=dict)

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.field.grid

    def summary(self) -> dict:
        return {"y0_at_x0": self.y0_at_x0, "diagnostics": self.diagnostics}


def _effective_diffusion(ctx: DriverContext, u_hat: np.ndarray) -> float:
    c = ctx.spec.coefficients
    beta = np.broadcast_to(c.beta(ctx.t, ctx.x, ctx.y, ctx.z, ctx.k, u_hat), ctx.x.shape)
    return float(0.5 * np.max(beta**2))


def solve(spec: ProblemSpec, grid: SpaceTimeGrid, *, cfl: float | None = 0.45,
          max_growth: float = 1e6) -> SolveReport:
    """Solve the HJB equation backward from ``y(T) = h`` on ``grid``.

    ``cfl`` bounds ``D dt / dx^2`` per substep, where ``D`` is the largest
    ``beta(u_hat)^2 / 2`` on the layer; ``None`` disables substepping and
    takes exactly one explicit step per grid interval. A layer whose largest
    magnitude grows by more than ``max_growth`` aborts the run.
    """
    if not spec.deterministic_coefficients:
        raise InvalidProblemError("solver only handles deterministic coefficients")
    validate_problem(spec).raise_if_invalid()
    if abs(grid.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise InvalidProblemError(f"grid horizon {grid.T} differs from problem horizon {spec.T}")

    x = grid.x_nodes
    M, N = grid.n_steps, grid.n_x
    dx = grid.dx
    Y = np.empty((M + 1, N))
    U = np.empty((M + 1, N))
    branches = np.empty((M + 1, N), dtype=np.int8)
    Y[M] = np.broadcast_to(np.asarray(spec.coefficients.h_terminal(x), dtype=float), (N,))
    if not np.isfinite(Y[M]).all():
        raise NonFiniteError("terminal condition is non-finite on the grid")

    max_G = np.zeros(M)
    substeps = np.zeros(M, dtype=int)
    extrap_hits = 0
    extrap_total = 0

    for n in range(M - 1, -1, -1):
        t_hi = grid.t_nodes[n + 1]
        step = t_hi - grid.t_nodes[n]
        row = Y[n + 1].copy()
        ctx = DriverContext.from_layer(spec, x, t_hi, row)
        res = optimize_layer(ctx)
        U[n + 1], branches[n + 1] = res.u_hat, res.branch
        if spec.jumps.n_atoms:
            targets = jump_targets(ctx, res.u_hat)
            extrap_hits += int(((targets < x[0]) | (targets > x[-1])).sum())
            extrap_total += targets.size
        n_sub = 1
        if cfl is not None:
            D = _effective_diffusion(ctx, res.u_hat)
            if D > 0:
                n_sub = max(1, math.ceil(step * D / (cfl * dx * dx)))
        h = step / n_sub
        G = res.G_hat
        tau = t_hi
        for s in range(n_sub):
            if s > 0:
                ctx = DriverContext.from_layer(spec, x, tau, row)
                G = optimize_layer(ctx).G_hat
            max_G[n] = max(max_G[n], float(np.max(np.abs(G))))
            new = row + h * G
            if not np.isfinite(new).all():
                raise UnstableStepError(f"unstable step size: non-finite values at t={tau:g}")
            row = new
            tau = t_hi - (s + 1) * h
        ref = max(float(np.max(np.abs(Y[n + 1]))), 1.0)
        if float(np.max(np.abs(row))) > max_growth * ref:
            raise UnstableStepError(
                f"unstable step size: max|y| grew by more than {max_growth:g} at t={grid.t_nodes[n]:g}")
        substeps[n] = n_sub
        Y[n] = row

    ctx0 = DriverContext.from_layer(spec, x, 0.0, Y[0])
    res0 = optimize_layer(ctx0)
    U[0], branches[0] = res0.u_hat, res0.branch

    fld = DecouplingField(grid, Y)
    y0 = float(eval_field(fld, 0.0, spec.x0).y)
    counts = {b.name: int((branches == b).sum()) for b in Branch if (branches == b).any()}
    diagnostics = {
        "time_steps": M,
        "substeps_total": int(substeps.sum()),
        "substeps_max": int(substeps.max()),
        "space_nodes": N,
        "x0_extrapolated": bool(spec.x0 < x[0] or spec.x0 > x[-1]),
        "jump_extrapolation_fraction": extrap_hits / extrap_total if extrap_total else 0.0,
        "max_abs_G_per_step": max_G.tolist(),
        "branch_counts": counts,
    }
    return SolveReport(fld, U, branches, y0, diagnostics)


def check_feedback_optimality(spec: ProblemSpec, report: SolveReport, fraction: float = 0.01,
                              n_probe: int = 50, seed: int = 0) -> float:
    """Smallest sense-adjusted slack ``G_u_hat - G_v`` over sampled nodes.

    A value ``>= -1e-9`` means no probe control beats the recorded one.
    """
    grid = report.grid
    rng = np.random.default_rng(seed)
    n_total = (grid.n_steps + 1) * grid.n_x
    picks = rng.choice(n_total, size=max(1, int(fraction * n_total)), replace=False)
    probes = spec.controls.probe_points(n_probe)
    worst = np.inf
    for j in np.unique(picks // grid.n_x):
        nodes = picks[picks // grid.n_x == j] % grid.n_x
        ctx = DriverContext.from_field(spec, report.field, int(j))
        G_hat = driver_values(ctx, report.control_field[j, nodes], nodes)
        G_v = driver_values(ctx, probes[:, None], nodes)
        slack = spec.sense_sign * (G_hat - G_v)
        worst = min(worst, float(slack.min()))
    return worst


@dataclass(frozen=True)
class ComparisonDeclarations:
    """Analytic conditions the user asserts rather than the code proving them."""

    lipschitz: bool = False
    bounded: bool = False
    square_integrable: bool = False


@dataclass(frozen=True)
class HypothesisReport:
    no_jumps: bool
    alpha_independent_of_z: bool
    lipschitz_declared: bool
    bounded_declared: bool
    square_integrability_declared: bool

    @property
    def satisfied(self) -> bool:
        return all((self.no_jumps, self.alpha_independent_of_z, self.lipschitz_declared,
                    self.bounded_declared, self.square_integrability_declared))


def check_comparison_hypotheses(spec: ProblemSpec,
                                declarations: ComparisonDeclarations | None = None,
                                tol: float = 1e-12) -> HypothesisReport:
    """Machine-check the no-jump and z-independent drift conditions.

    The remaining sufficient conditions (Lipschitz coefficients, bounded
    drift and volatility, square integrability) are echoed from
    ``declarations``.
    """
    declarations = declarations or ComparisonDeclarations()
    t, x, y, z, k, u = probe_lattice(spec)
    base = np.broadcast_to(spec.coefficients.alpha(t, x, y, z, k, u), x.shape)
    independent = True
    for delta in (1e-3, 0.1, 1.0, 10.0):
        moved = np.broadcast_to(spec.coefficients.alpha(t, x, y, z + delta, k, u), x.shape)
        if not np.all(np.abs(moved - base) < tol):
            independent = False
            break
    return HypothesisReport(
        no_jumps=spec.jumps.n_atoms == 0,
        alpha_independent_of_z=independent,
        lipschitz_declared=declarations.lipschitz,
        bounded_declared=declarations.bounded,
        square_integrability_declared=declarations.square_integrable,
    )


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    verdict: str
    min_gap: float
    argmin: tuple[float, float]
    tol: float
    gap: np.ndarray | None
    reports: tuple[SolveReport, SolveReport] | None = None


def verify_comparison(spec1: ProblemSpec, spec2: ProblemSpec, grid: SpaceTimeGrid,
                      tol: float | None = None, n_probe_layers: int = 5) -> ComparisonReport:
    """Solve both problems and check ``y_1 <= y_2`` on the grid.

    The ordering hypotheses ``h_1 <= h_2`` and ``G_1 <= G_2`` are spot-checked
    first, the latter on layers of the first solution. If they fail, the
    verdict is ``"hypothesis violated"`` and no conclusion is drawn.
    """
    dt = float(np.max(np.diff(grid.t_nodes)))
    tol = 10.0 * dt if tol is None else tol
    x = grid.x_nodes
    h1 = np.broadcast_to(spec1.coefficients.h_terminal(x), x.shape)
    h2 = np.broadcast_to(spec2.coefficients.h_terminal(x), x.shape)
    r1 = solve(spec1, grid)
    ordered = bool(np.all(h1 <= h2))
    for j in np.unique(np.linspace(0, grid.n_steps, n_probe_layers).astype(int)):
        row = r1.field.y_values[j]
        t = grid.t_nodes[j]
        G1 = optimize_layer(DriverContext.from_layer(spec1, x, t, row)).G_hat
        G2 = optimize_layer(DriverContext.from_layer(spec2, x, t, row)).G_hat
        scale = max(1.0, float(np.abs(G1).max()))
        if np.any(G1 > G2 + 1e-12 * scale):
            ordered = False
    if not ordered:
        return ComparisonReport("hypothesis violated", math.nan, (math.nan, math.nan), tol,
                                None, (r1, r1))
    r2 = solve(spec2, grid)
    gap = r2.field.y_values - r1.field.y_values
    j, i = np.unravel_index(np.argmin(gap), gap.shape)
    min_gap = float(gap[j, i])
    verdict = "PASS" if min_gap >= -tol else "FAIL"
    return ComparisonReport(verdict, min_gap, (float(grid.t_nodes[j]), float(x[i])), tol, gap,
                            (r1, r2))


@dataclass(frozen=True)
class CrosscheckReport:
    max_discrepancy: float
    max_solver_discrepancy: float
    n_nodes: int
    u_field_formula: np.ndarray
    u_classical: np.ndarray


def classical_hjb_crosscheck(spec: ProblemSpec, grid: SpaceTimeGrid,
                             report: SolveReport | None = None) -> CrosscheckReport:
    """Compare two closed-form Merton feedbacks on the solved field.

    One comes from optimizing the transformed driver with ``z' = 0``,
    ``-(y' b + z' sigma) / (y'' sigma^2)``; the other from the classical HJB
    maximization, ``-b phi' / (phi'' sigma^2)``. Both are evaluated at
    interior nodes of every layer. ``max_solver_discrepancy`` measures the
    solver's recorded control against the first formula where the vertex was
    not clamped.
    """
    params: MarketParams = spec.meta["market"]
    report = report or solve(spec, grid)
    d = report.field.derivatives
    t = grid.t_nodes[:, None]
    b = params.b_fn(t)
    s = params.sigma_fn(t)
    yp = d.y_prime[:, 1:-1]
    ypp = d.y_double_prime[:, 1:-1]
    zp = d.z_prime[:, 1:-1]
    ok = ypp != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u_field = np.where(ok, -(yp * b + zp * s) / (ypp * s**2), np.nan)
        u_classic = np.where(ok, -(b * yp) / (ypp * s**2), np.nan)
    diff = np.abs(u_field - u_classic)[ok]
    ctrl = spec.controls
    inside = ok & (u_field > ctrl.lo) & (u_field < ctrl.hi)
    solver_diff = np.abs(report.control_field[:, 1:-1] - u_field)[inside]
    return CrosscheckReport(
        float(diff.max()) if diff.size else 0.0,
        float(solver_diff.max()) if solver_diff.size else 0.0,
        int(ok.sum()), u_field, u_classic,
    )
