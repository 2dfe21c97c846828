"""Worked portfolio problems with closed-form answers.

Both problems share the self-financing wealth dynamics

    dX = u (b(t) dt + sigma(t) dB),

where ``u`` is the amount held in the risky asset.

* Merton: ``g = 0`` and ``h = U``; for ``U = ln`` the value field is
  ``ln x + int_t^T b^2 / (2 sigma^2) ds`` and the feedback is ``b x / sigma^2``.
* Entropic risk minimization: ``g(z) = -z^2 / 2`` and ``h(x) = x``; the value
  field is ``x + a(t)`` with ``a(t) = int_t^T (b / sigma)^2 / 2 ds`` and the
  optimal holding is ``b / sigma^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidProblemError
from .field import first_derivative, second_derivative
from .model import (MAXIMIZE, CoefficientSet, ControlSet, JumpMeasure, ProblemSpec,
                    SpaceTimeGrid)

QUAD_NODES = 20_001


def _as_curve(value) -> Callable:
    if callable(value):
        return value
    c = float(value)
    return lambda t: c + 0.0 * np.asarray(t, dtype=float)


def _simpson_weights(n: int) -> np.ndarray:
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson rule needs an odd node count >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * (n - 1))


def tail_integral(f: Callable, t, T: float, n: int = QUAD_NODES):
    """Composite Simpson approximation of ``int_t^T f(s) ds`` for scalar or array ``t``.

    Simpson is the trapezoid rule with one Richardson step; on ``n = 20001``
    nodes it is accurate to well below 1e-10 for smooth integrands.
    """
    t = np.asarray(t, dtype=float)
    # field grids repeat each time value across space; integrate each once
    flat, inverse = np.unique(np.atleast_1d(t).ravel(), return_inverse=True)
    out = np.empty(flat.size)
    frac = np.linspace(0.0, 1.0, n)
    w = _simpson_weights(n)
    for start in range(0, flat.size, 64):
        lo = flat[start:start + 64, None]
        s = lo + (T - lo) * frac
        vals = np.broadcast_to(f(s), s.shape)
        out[start:start + 64] = (vals @ w) * (T - lo[:, 0])
    out = out[inverse.ravel()]
    return out.reshape(t.shape) if t.ndim else float(out[0])


@dataclass(frozen=True)
class MarketParams:
    """One risky asset with drift ``b(t)`` and volatility ``sigma(t)``.

    ``b`` and ``sigma`` may be numbers or vectorized callables of time.
    ``utility`` is ``"log"``, ``"power"`` (``x**p / p``), ``"linear"`` or a
    callable terminal function.
    """

    b: float | Callable = 0.05
    sigma: float | Callable = 0.2
    T: float = 1.0
    x0: float = 1.0
    utility: str | Callable = "log"
    power: float = 0.5
    u_bounds: tuple[float, float] = (-20.0, 20.0)
    u_resolution: float = 1e-2
    sigma_min: float = 1e-8

    @property
    def b_fn(self) -> Callable:
        return _as_curve(self.b)

    @property
    def sigma_fn(self) -> Callable:
        return _as_curve(self.sigma)

    def check(self):
        errs = []
        if not self.T > 0:
            errs.append("horizon nonpositive")
        else:
            lattice = np.linspace(0.0, self.T, 1001)
            if np.min(self.sigma_fn(lattice)) < self.sigma_min:
                errs.append("volatility must stay above sigma_min")
        if errs:
            raise InvalidProblemError(errs)

    def half_sharpe_squared(self, t):
        b = self.b_fn(t)
        s = self.sigma_fn(t)
        return 0.5 * (b / s) ** 2

    def describe(self) -> dict:
        d = {"T": self.T, "x0": self.x0}
        for name in ("b", "sigma"):
            v = getattr(self, name)
            d[name] = v if not callable(v) else getattr(v, "__name__", "callable")
        d["utility"] = self.utility if isinstance(self.utility, str) else "custom"
        if self.utility == "power":
            d["power"] = self.power
        return d


def _utility(params: MarketParams) -> Callable:
    U = params.utility
    if callable(U):
        return U
    if U == "log":
        return np.log
    if U == "linear":
        return lambda x: np.asarray(x, dtype=float) * 1.0
    if U == "power":
        p = params.power
        if p == 0 or p >= 1:
            raise InvalidProblemError("power utility needs p < 1, p != 0")
        return lambda x: np.asarray(x, dtype=float) ** p / p
    raise InvalidProblemError(f"unknown utility {U!r}")


def _wealth_coefficients(params: MarketParams):
    b, s = params.b_fn, params.sigma_fn

    def alpha(t, x, y, z, k, u):
        return u * b(t)

    def beta(t, x, y, z, k, u):
        return u * s(t)

    return alpha, beta


def build_merton(params: MarketParams, x_domain=(0.2, 5.0)) -> ProblemSpec:
    """Terminal-utility maximization with ``g = 0``."""
    params.check()
    alpha, beta = _wealth_coefficients(params)
    U = _utility(params)
    coeffs = CoefficientSet(alpha=alpha, beta=beta, h_terminal=U)
    lo, hi = params.u_bounds
    return ProblemSpec(
        coeffs, JumpMeasure.none(), ControlSet.interval(lo, hi, params.u_resolution),
        params.T, params.x0, MAXIMIZE, True, tuple(x_domain),
        name=f"merton-{params.utility if isinstance(params.utility, str) else 'custom'}",
        meta={"market": params, "benchmark": "merton"},
    )


def build_riskmin(params: MarketParams, half_width: float = 2.0) -> ProblemSpec:
    """Entropic risk problem: ``g(z) = -z^2/2``, ``h(x) = x``.

    Minimizing the risk ``-Y(0)`` is the same as maximizing ``Y(0)``, so the
    spec carries the maximize sense.
    """
    params.check()
    alpha, beta = _wealth_coefficients(params)

    def g(t, x, y, z, k, u):
        return -0.5 * z**2

    def h(x):
        return np.asarray(x, dtype=float) * 1.0

    coeffs = CoefficientSet(alpha=alpha, beta=beta, g_driver=g, h_terminal=h)
    lo, hi = params.u_bounds
    return ProblemSpec(
        coeffs, JumpMeasure.none(), ControlSet.interval(lo, hi, params.u_resolution),
        params.T, params.x0, MAXIMIZE, True,
        (params.x0 - half_width, params.x0 + half_width),
        name="riskmin", meta={"market": params, "benchmark": "riskmin"},
    )


def default_grid(spec: ProblemSpec, n_x: int = 200, n_steps: int = 400) -> SpaceTimeGrid:
    lo, hi = spec.x_domain
    return SpaceTimeGrid.uniform(spec.T, n_steps, lo, hi, n_x)


def merton_log_value(t, x, params: MarketParams):
    """``ln x + int_t^T b^2/(2 sigma^2) ds`` by Simpson quadrature."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InvalidProblemError("log utility needs positive wealth")
    b, s = params.b_fn, params.sigma_fn

    def rate(u):
        return b(u) ** 2 / (2.0 * s(u) ** 2)

    t = np.asarray(t, dtype=float)
    tail = np.where(t >= params.T, 0.0, tail_integral(rate, np.minimum(t, params.T), params.T))
    out = np.log(x) + tail
    return float(out) if out.ndim == 0 else out


def merton_log_feedback(t, x, params: MarketParams):
    return params.b_fn(t) * np.asarray(x, dtype=float) / params.sigma_fn(t) ** 2


class RiskminSolution(NamedTuple):
    a: Callable
    y_hat: Callable
    rho_min: float
    u_hat: Callable


def riskmin_closed_form(params: MarketParams) -> RiskminSolution:
    """Closed-form value field, minimal risk and optimal holding."""
    params.check()
    f = params.half_sharpe_squared
    T = params.T

    def a(t):
        t = np.asarray(t, dtype=float)
        out = np.where(t >= T, 0.0, tail_integral(f, np.minimum(t, T), T))
        return float(out) if out.ndim == 0 else out

    def y_hat(t, x):
        return np.asarray(x, dtype=float) + a(t)

    def u_hat(t):
        return params.b_fn(t) / params.sigma_fn(t) ** 2

    return RiskminSolution(a, y_hat, -params.x0 - a(0.0), u_hat)


def pde_residual(spec: ProblemSpec, grid: SpaceTimeGrid, value_fn) -> float:
    """Max interior residual of the reduced HJB equation for a candidate field.

    Uses the forward time difference and central space differences, with the
    optimized driver in its closed form for the two benchmarks:
    Merton ``-(y' b)^2 / (2 y'' sigma^2)`` and risk-min
    ``(y' b)^2 / (2 ((y')^2 - y'') sigma^2)``.
    """
    params: MarketParams = spec.meta["market"]
    kind = spec.meta["benchmark"]
    tt, xx = np.meshgrid(grid.t_nodes, grid.x_nodes, indexing="ij")
    Y = np.asarray(value_fn(tt, xx), dtype=float)
    dx = grid.dx
    yp = first_derivative(Y, dx)[:-1, 1:-1]
    ypp = second_derivative(Y, dx)[:-1, 1:-1]
    dt = np.diff(grid.t_nodes)[:, None]
    yt = (Y[1:, 1:-1] - Y[:-1, 1:-1]) / dt
    t = grid.t_nodes[:-1, None]
    b, s = params.b_fn(t), params.sigma_fn(t)
    if kind == "merton":
        G = -(yp * b) ** 2 / (2.0 * ypp * s**2)
    else:
        G = (yp * b) ** 2 / (2.0 * (yp**2 - ypp) * s**2)
    return float(np.abs(yt + G).max())
