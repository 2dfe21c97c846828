import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbsde_hjb.benchmarks import MarketParams, build_merton, build_riskmin
from fbsde_hjb.errors import InvalidProblemError, NonFiniteError
from fbsde_hjb.model import (CoefficientSet, ControlSet, JumpMeasure, ProblemSpec, SpaceTimeGrid,
                             levy_integral, validate_problem, with_shifts)


def test_levy_integral_single_atom():
    assert levy_integral(JumpMeasure(((1.0, 0.5),)), lambda z: z**2) == 0.5


def test_levy_integral_empty_measure():
    assert levy_integral(JumpMeasure.none(), lambda z: 1e9) == 0.0


def test_levy_integral_two_atoms():
    # -1 * 0.3 + 2 * 0.1
    val = levy_integral(JumpMeasure(((-1.0, 0.3), (2.0, 0.1))), lambda z: z)
    assert val == pytest.approx(-0.1, abs=1e-15)


def test_levy_integral_names_bad_atom():
    nu = JumpMeasure(((1.0, 0.5), (2.0, 0.5)))
    with pytest.raises(NonFiniteError, match="atom 1"):
        levy_integral(nu, lambda z: math.inf if z == 2.0 else 1.0)


def test_levy_integral_array_values():
    nu = JumpMeasure(((1.0, 0.5), (-1.0, 0.25)))
    x = np.linspace(0, 1, 4)
    out = levy_integral(nu, lambda z: x * z)
    assert np.allclose(out, 0.25 * x)


atoms = st.lists(
    st.tuples(st.floats(-5, 5).filter(lambda z: abs(z) > 1e-3), st.floats(0, 10)),
    min_size=0, max_size=6,
)


@settings(max_examples=60, deadline=None)
@given(atoms, st.floats(-3, 3), st.floats(-3, 3))
def test_levy_integral_linear(at, a, b):
    nu = JumpMeasure(tuple(at))

    def f(z):
        return math.sin(z)

    def g(z):
        return z**2

    lhs = levy_integral(nu, lambda z: a * f(z) + b * g(z))
    rhs = a * levy_integral(nu, f) + b * levy_integral(nu, g)
    scale = max(1.0, sum(w * (abs(a * f(z)) + abs(b * g(z))) for z, w in at))
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(atoms)
def test_unit_integrand_equals_total_intensity(at):
    nu = JumpMeasure(tuple(at))
    assert levy_integral(nu, lambda z: 1.0) == nu.total_intensity


def test_total_intensity():
    nu = JumpMeasure(((1.0, 0.1), (2.0, 0.2), (-3.0, 0.7)))
    assert nu.total_intensity == pytest.approx(1.0, abs=1e-15)


def test_control_set_invariants():
    assert ControlSet.interval(1.0, 1.0).problems()
    assert ControlSet.interval(0.0, 1.0, 0.0).problems()
    assert ControlSet.finite([]).problems()
    assert ControlSet.interval(-1, 1).problems() == []
    c = ControlSet.finite([2.0, -1.0, 0.5])
    assert list(c.search_grid()) == [-1.0, 0.5, 2.0]
    assert c.project(0.6) == 0.5
    assert ControlSet.interval(-1, 1).project(3.0) == 1.0


def test_grid_invariants():
    with pytest.raises(InvalidProblemError, match="5 spatial"):
        SpaceTimeGrid.uniform(1.0, 10, 0.0, 1.0, 4)
    with pytest.raises(InvalidProblemError, match="horizon nonpositive"):
        SpaceTimeGrid.uniform(0.0, 10, 0.0, 1.0, 11)
    with pytest.raises(InvalidProblemError, match="uniform"):
        SpaceTimeGrid(np.linspace(0, 1, 3), np.array([0.0, 0.1, 0.2, 0.35, 0.4]))
    with pytest.raises(InvalidProblemError):
        SpaceTimeGrid(np.array([0.1, 1.0]), np.linspace(0, 1, 5))
    g = SpaceTimeGrid.uniform(2.0, 8, -1.0, 1.0, 21)
    assert g.T == 2.0 and g.n_steps == 8 and g.n_x == 21
    assert g.dx == pytest.approx(0.1)


def test_validate_merton_is_clean():
    assert validate_problem(build_merton(MarketParams())).violations == ()
    assert validate_problem(build_riskmin(MarketParams(b=0.2, sigma=0.4))).ok


def test_validate_reports_horizon():
    spec = ProblemSpec(CoefficientSet(), T=0.0)
    assert "horizon nonpositive" in validate_problem(spec).violations


def test_validate_reports_atom_at_zero():
    spec = ProblemSpec(CoefficientSet(), JumpMeasure(((0.0, 1.0),)))
    assert any("atom at zero" in v for v in validate_problem(spec).violations)


def test_validate_reports_negative_weight():
    spec = ProblemSpec(CoefficientSet(), JumpMeasure(((1.0, -1.0),)))
    assert any("negative" in v for v in validate_problem(spec).violations)


def test_validate_reports_non_finite_coefficient():
    coeffs = CoefficientSet(alpha=lambda t, x, y, z, k, u: np.log(x))
    spec = ProblemSpec(coeffs, x_domain=(-1.0, 1.0))
    assert any("alpha" in v for v in validate_problem(spec).violations)


def test_validate_reports_nondeterminism():
    rng = np.random.default_rng(0)
    coeffs = CoefficientSet(g_driver=lambda t, x, y, z, k, u: rng.random(np.shape(x)))
    rep = validate_problem(ProblemSpec(coeffs))
    assert any("deterministic" in v for v in rep.violations)


def test_validate_is_idempotent():
    spec = ProblemSpec(CoefficientSet(), JumpMeasure(((0.0, -1.0),)), T=-1.0)
    assert validate_problem(spec) == validate_problem(spec)


def test_with_shifts():
    spec = build_riskmin(MarketParams(b=0.2, sigma=0.4))
    s2 = with_shifts(spec, terminal_shift=0.5, driver_shift=0.01)
    c = s2.coefficients
    assert c.h_terminal(np.array(1.0)) == 1.5
    assert c.g_driver(0.0, 1.0, 0.0, 0.0, None, 0.0) == pytest.approx(0.01)
