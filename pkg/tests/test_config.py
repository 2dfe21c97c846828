import json

import numpy as np
import pytest

from fbsde_hjb.config import (benchmark_document, build_problem, curve, load_problem,
                              parse_document)
from fbsde_hjb.errors import ConfigError, InvalidProblemError
from fbsde_hjb.solver import solve

POLY = {
    "model": {"family": "polynomial", "x0": 0.5, "alpha": {"u": 1}, "beta": {"1": 0.3},
              "gamma": {"zeta": 0.1}, "g": {"z*z": -0.5, "u*u": -0.5}, "h": {"x": 1}},
    "grid": {"n_x": 41, "n_steps": 100, "x_min": -2, "x_max": 3},
    "jumps": [{"zeta": 1, "weight": 0.5}],
    "controls": {"kind": "interval", "lo": -1, "hi": 1},
    "horizon": 1,
    "sense": "maximize",
    "declarations": {"lipschitz": True},
}


def test_benchmark_documents_build():
    for name in ("merton-log", "riskmin"):
        lp = build_problem(benchmark_document(name))
        assert lp.grid.n_x == 200 and lp.grid.n_steps == 400
    assert build_problem(benchmark_document("riskmin", x0=3.0)).spec.x_domain == (1.0, 5.0)
    with pytest.raises(ConfigError):
        benchmark_document("heston")


def test_polynomial_family_solves():
    lp = build_problem(POLY)
    assert lp.declarations.lipschitz and not lp.declarations.bounded
    # y = x + a(t): G = max_u (u - u^2/2) - 0.3^2/2 = 0.455 per unit time
    assert solve(lp.spec, lp.grid).y0_at_x0 == pytest.approx(0.955, abs=1e-10)


def test_polynomial_rejects_foreign_variable():
    doc = json.loads(json.dumps(POLY))
    doc["model"]["h"] = {"u": 1.0}
    with pytest.raises(ConfigError, match="not allowed"):
        build_problem(doc)


def test_curve_polynomial_in_time():
    c = curve({"poly": [0.1, 0.2, 0.3]})
    assert c(2.0) == pytest.approx(0.1 + 0.4 + 1.2)
    assert curve(0.5) == 0.5


def test_unknown_key_reports_line_and_column():
    text = json.dumps(benchmark_document("riskmin"), indent=2)
    text = text.replace('"n_x": 200', '"n_x": 200, "bogus": 1')
    with pytest.raises(ConfigError) as exc:
        parse_document(text)
    line = next(i for i, ln in enumerate(text.splitlines(), 1) if "bogus" in ln)
    col = text.splitlines()[line - 1].index('"bogus"') + 1
    assert (exc.value.line, exc.value.column) == (line, col)
    assert "bogus" in str(exc.value)


def test_bad_value_points_at_value():
    text = '{\n "model": {"family": "riskmin"},\n "grid": {"n_x": 3, "n_steps": 1, ' \
           '"x_min": 0, "x_max": 1},\n "jumps": [], "controls": {"kind": "interval", ' \
           '"lo": 0, "hi": 1}, "horizon": 1, "sense": "maximize"}'
    with pytest.raises(ConfigError) as exc:
        parse_document(text)
    assert exc.value.line == 3
    assert text.splitlines()[2][exc.value.column - 1:].startswith("3")


def test_malformed_json():
    with pytest.raises(ConfigError) as exc:
        parse_document('{\n  "model": ,\n}')
    assert exc.value.line == 2


def test_missing_key():
    doc = benchmark_document("riskmin")
    del doc["sense"]
    with pytest.raises(ConfigError, match="sense"):
        build_problem(doc)


def test_jumps_rejected_for_market_families():
    doc = benchmark_document("riskmin")
    doc["jumps"] = [{"zeta": 1.0, "weight": 1.0}]
    with pytest.raises(ConfigError):
        build_problem(doc)


def test_horizon_nonpositive():
    doc = benchmark_document("merton-log", T=0.0)
    with pytest.raises(InvalidProblemError, match="horizon nonpositive"):
        build_problem(doc)


def test_finite_control_list_and_time_varying_drift(tmp_path):
    doc = benchmark_document("riskmin", b={"poly": [0.0, 0.2]})
    doc["controls"] = {"kind": "list", "values": [0.0, 0.5, 1.0]}
    doc["grid"].update(n_x=21, n_steps=40)
    path = tmp_path / "p.json"
    path.write_text(json.dumps(doc))
    lp = load_problem(path)
    rep = solve(lp.spec, lp.grid)
    assert set(np.unique(rep.control_field)) <= {0.0, 0.5, 1.0}
