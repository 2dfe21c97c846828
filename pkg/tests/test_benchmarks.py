import numpy as np
import pytest

from fbsde_hjb.benchmarks import (MarketParams, build_merton, build_riskmin, default_grid,
                                  merton_log_value, pde_residual, riskmin_closed_form,
                                  tail_integral)
from fbsde_hjb.errors import InvalidProblemError
from fbsde_hjb.model import SpaceTimeGrid
from fbsde_hjb.solver import solve


def test_merton_log_value_at_origin():
    # 0.05^2 / (2 * 0.2^2) * 1
    assert merton_log_value(0.0, 1.0, MarketParams()) == pytest.approx(0.03125, abs=1e-12)


def test_merton_log_value_terminal_identity():
    x = np.array([0.3, 1.0, 4.2])
    assert np.array_equal(merton_log_value(1.0, x, MarketParams()), np.log(x))


def test_merton_log_value_zero_drift():
    x = np.linspace(0.5, 2, 5)
    assert np.allclose(merton_log_value(0.3, x, MarketParams(b=0.0)), np.log(x), atol=0, rtol=0)


def test_merton_log_value_needs_positive_wealth():
    with pytest.raises(InvalidProblemError):
        merton_log_value(0.0, 0.0, MarketParams())


def test_quadrature_accuracy():
    # smooth integrand, exact value sin(1)
    assert tail_integral(np.cos, 0.0, 1.0) == pytest.approx(np.sin(1.0), abs=1e-10)
    t = np.array([[0.0, 0.5], [1.0, 0.25]])
    out = tail_integral(lambda s: 3 * s**2, t, 1.0)
    assert np.allclose(out, 1 - t**3, atol=1e-10)


def test_riskmin_closed_form_constant():
    sol = riskmin_closed_form(MarketParams(b=0.2, sigma=0.4, x0=1.0))
    assert sol.a(0.0) == pytest.approx(0.125, abs=1e-12)
    assert sol.rho_min == pytest.approx(-1.125, abs=1e-12)
    assert sol.u_hat(0.3) == pytest.approx(1.25)
    assert sol.y_hat(0.0, 2.0) == pytest.approx(2.125)


def test_riskmin_closed_form_zero_drift():
    sol = riskmin_closed_form(MarketParams(b=0.0, sigma=0.4, x0=2.0))
    assert sol.a(0.0) == 0.0 and sol.rho_min == -2.0 and sol.u_hat(0.5) == 0.0


def test_riskmin_closed_form_time_varying():
    sol = riskmin_closed_form(MarketParams(b=lambda t: 0.2 * t, sigma=0.4))
    # int_0^1 (0.5 s)^2 / 2 ds
    assert sol.a(0.0) == pytest.approx(1 / 24, abs=1e-10)


def test_market_validation():
    with pytest.raises(InvalidProblemError, match="horizon nonpositive"):
        MarketParams(T=0.0).check()
    with pytest.raises(InvalidProblemError):
        MarketParams(sigma=lambda t: 0.2 - 0.2 * t).check()
    with pytest.raises(InvalidProblemError):
        build_merton(MarketParams(utility="power", power=1.5))


def test_merton_spec_shape():
    spec = build_merton(MarketParams(b=0.1, sigma=0.2))
    c = spec.coefficients
    assert c.alpha(0.0, 1.0, 0, 0, None, 2.0) == pytest.approx(0.2)
    assert c.beta(0.0, 1.0, 0, 0, None, 2.0) == pytest.approx(0.4)
    assert c.gamma(0.0, 1.0, 0, 0, None, 2.0, 1.0) == 0.0
    assert c.g_driver(0.0, 1.0, 0, 0, None, 2.0) == 0.0
    assert spec.objective_sense == "maximize" and spec.jumps.n_atoms == 0


def test_riskmin_spec_shape():
    spec = build_riskmin(MarketParams(b=0.2, sigma=0.4, x0=0.5))
    c = spec.coefficients
    assert c.g_driver(0.0, 0.0, 0, 0.6, None, 0) == pytest.approx(-0.18)
    assert c.h_terminal(np.array(2.0)) == 2.0
    assert spec.x_domain == (-1.5, 2.5)


def test_zero_drift_merton_keeps_terminal_utility():
    spec = build_merton(MarketParams(b=0.0))
    rep = solve(spec, default_grid(spec, 40, 40))
    assert np.allclose(rep.control_field, 0.0, atol=1e-12)
    assert np.allclose(rep.field.y_values, np.log(rep.grid.x_nodes), atol=1e-12)


@pytest.mark.parametrize("kind", ["merton", "riskmin"])
def test_oracle_pde_residual_decreases(kind):
    params = MarketParams() if kind == "merton" else MarketParams(b=lambda t: 0.2 * t, sigma=0.4)
    if kind == "merton":
        spec = build_merton(params)

        def value(t, x):
            return merton_log_value(t, x, params)
    else:
        spec = build_riskmin(params)
        value = riskmin_closed_form(params).y_hat
    res = []
    for n in (20, 40, 80):
        grid = default_grid(spec, n + 1, n)
        res.append(pde_residual(spec, grid, value))
    assert res[0] > res[1] > res[2]
    if kind == "merton":
        # constant b: the oracle satisfies the discrete operator up to O(dx^2)
        assert res[2] < 1e-3


def test_power_utility_residual_decreases():
    params = MarketParams(utility="power", power=0.5)
    spec = build_merton(params, x_domain=(0.5, 3.0))
    res = []
    for n_x, n_t in ((26, 50), (51, 100)):
        grid = default_grid(spec, n_x, n_t)
        rep = solve(spec, grid)
        coarse = SpaceTimeGrid.uniform(1.0, 10, 0.8, 1.6, 9)
        y = rep.field

        def value(t, x):
            return y.interpolate(y.y_values, t, x)

        res.append(pde_residual(spec, coarse, value))
    assert res[1] < res[0]
