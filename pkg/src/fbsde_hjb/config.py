"""JSON problem documents: schema, line/column error reporting, and spec building.

A problem document has the top-level keys ``model``, ``grid``, ``jumps``,
``controls``, ``horizon`` and ``sense`` (plus optional ``declarations``).
The ``model.family`` selects a parametric coefficient family:

* ``merton``   wealth dynamics with terminal utility (log, power, linear)
* ``riskmin``  wealth dynamics with ``g(z) = -z^2/2`` and ``h(x) = x``
* ``polynomial``  each coefficient is a sum of monomials in its arguments

See ``docs/problem-schema.md`` for the full layout.
"""
from __future__ import annotations

import json
import re
from dataclasses import replace
from pathlib import Path
from typing import Any, NamedTuple

import jsonschema
import numpy as np

from .benchmarks import MarketParams, build_merton, build_riskmin
from .errors import ConfigError
from .model import (MAXIMIZE, MINIMIZE, CoefficientSet, ControlSet, JumpMeasure, ProblemSpec,
                    SpaceTimeGrid)
from .solver import ComparisonDeclarations

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_CURVE = {
    "oneOf": [
        _NUM,
        {"type": "object", "additionalProperties": False, "required": ["poly"],
         "properties": {"poly": {"type": "array", "items": _NUM, "minItems": 1}}},
    ]
}
_MONOMIALS = {"type": "object", "additionalProperties": _NUM,
              "propertyNames": {"pattern": r"^(1|[a-z]+(\*[a-z]+)*)$"}}

PROBLEM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "grid", "jumps", "controls", "horizon", "sense"],
    "properties": {
        "model": {
            "type": "object",
            "required": ["family"],
            "properties": {"family": {"enum": ["merton", "riskmin", "polynomial"]}},
            "allOf": [
                {"if": {"properties": {"family": {"const": "merton"}}},
                 "then": {"additionalProperties": False, "properties": {
                     "family": {}, "b": _CURVE, "sigma": _CURVE, "x0": _NUM,
                     "utility": {"enum": ["log", "power", "linear"]}, "power": _NUM}}},
                {"if": {"properties": {"family": {"const": "riskmin"}}},
                 "then": {"additionalProperties": False, "properties": {
                     "family": {}, "b": _CURVE, "sigma": _CURVE, "x0": _NUM}}},
                {"if": {"properties": {"family": {"const": "polynomial"}}},
                 "then": {"additionalProperties": False, "properties": {
                     "family": {}, "x0": _NUM, "alpha": _MONOMIALS, "beta": _MONOMIALS,
                     "gamma": _MONOMIALS, "g": _MONOMIALS, "h": _MONOMIALS}}},
            ],
        },
        "grid": {
            "type": "object", "additionalProperties": False,
            "required": ["n_x", "n_steps", "x_min", "x_max"],
            "properties": {"n_x": {"type": "integer", "minimum": 5}, "n_steps": _POS_INT,
                           "x_min": _NUM, "x_max": _NUM},
        },
        "jumps": {
            "type": "array",
            "items": {"type": "object", "additionalProperties": False,
                      "required": ["zeta", "weight"],
                      "properties": {"zeta": _NUM, "weight": _NUM}},
        },
        "controls": {
            "oneOf": [
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "lo", "hi"],
                 "properties": {"kind": {"const": "interval"}, "lo": _NUM, "hi": _NUM,
                                "resolution": {"type": "number", "exclusiveMinimum": 0}}},
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "values"],
                 "properties": {"kind": {"const": "list"},
                                "values": {"type": "array", "items": _NUM, "minItems": 1}}},
            ]
        },
        "horizon": _NUM,
        "sense": {"enum": [MAXIMIZE, MINIMIZE]},
        "declarations": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "boolean"}
                           for k in ("lipschitz", "bounded", "square_integrable")},
        },
    },
}

# variables each polynomial coefficient may use
_ARGS = {
    "alpha": ("t", "x", "y", "z", "u"),
    "beta": ("t", "x", "y", "z", "u"),
    "gamma": ("t", "x", "y", "z", "u", "zeta"),
    "g": ("t", "x", "y", "z", "u"),
    "h": ("x",),
}


class LoadedProblem(NamedTuple):
    spec: ProblemSpec
    grid: SpaceTimeGrid
    declarations: ComparisonDeclarations
    document: dict


# --------------------------------------------------------------- positions

def _value_positions(text: str) -> dict[tuple, int]:
    """Character offset of every value in a JSON document, keyed by path."""
    dec = json.JSONDecoder()
    ws = re.compile(r"[ \t\n\r]*")
    out: dict[tuple, int] = {}

    def skip(i):
        return ws.match(text, i).end()

    def value(i, path):
        i = skip(i)
        out[path] = i
        ch = text[i:i + 1]
        if ch == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                start = skip(i)
                key, i = dec.raw_decode(text, start)
                out[path + (key, "__key__")] = start
                i = skip(i)
                i = value(i + 1, path + (key,))
                i = skip(i)
                if text[i] == "}":
                    return i + 1
                i += 1
        if ch == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            n = 0
            while True:
                i = skip(value(i, path + (n,)))
                n += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = dec.raw_decode(text, i)
        return end

    value(0, ())
    return out


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def parse_document(text: str, schema: dict = PROBLEM_SCHEMA, what: str = "problem") -> dict:
    """Parse and schema-check JSON text, raising :class:`ConfigError` with a location."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno, exc.colno) from None
    check_document(doc, schema, what, text)
    return doc


def check_document(doc: Any, schema: dict = PROBLEM_SCHEMA, what: str = "problem",
                   text: str | None = None):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if not errors:
        return
    err = jsonschema.exceptions.best_match(errors)
    path = tuple(err.absolute_path)
    where = "/".join(map(str, path)) or "<root>"
    msg = f"{what} {where}: {err.message}"
    if text is None:
        raise ConfigError(msg)
    pos = _value_positions(text)
    bad_key = None
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        m = re.search(r"'([^']+)' (was|were) unexpected", err.message)
        bad_key = m.group(1) if m else None
    offset = pos.get(path + (bad_key, "__key__")) if bad_key else None
    if offset is None:
        offset = pos.get(path, 0)
    raise ConfigError(msg, *_line_col(text, offset))


# ----------------------------------------------------------------- building

def curve(spec) -> Any:
    """Number, or ``{"poly": [c0, c1, ...]}`` meaning ``c0 + c1 t + ...``."""
    if isinstance(spec, dict):
        coeffs = [float(c) for c in spec["poly"]]

        def poly(t):
            t = np.asarray(t, dtype=float)
            out = np.zeros_like(t)
            for c in reversed(coeffs):
                out = out * t + c
            return out

        poly.__name__ = f"poly{coeffs}"
        return poly
    return float(spec)


def _monomial_fn(name: str, terms: dict[str, float]):
    allowed = _ARGS[name]
    parsed = []
    for key, coef in terms.items():
        names = [] if key == "1" else key.split("*")
        for v in names:
            if v not in allowed:
                raise ConfigError(f"{name}: variable {v!r} not allowed (use {', '.join(allowed)})")
        parsed.append((float(coef), names))

    def fn(**kw):
        out = 0.0
        for coef, names in parsed:
            term = coef
            for v in names:
                term = term * kw[v]
            out = out + term
        shape = np.broadcast(*(np.asarray(kw[a]) for a in allowed)).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape) + 0.0

    return fn


def _polynomial_coefficients(model: dict) -> CoefficientSet:
    fns = {k: _monomial_fn(k, model.get(k, {})) for k in _ARGS}
    return CoefficientSet(
        alpha=lambda t, x, y, z, k, u: fns["alpha"](t=t, x=x, y=y, z=z, u=u),
        beta=lambda t, x, y, z, k, u: fns["beta"](t=t, x=x, y=y, z=z, u=u),
        gamma=lambda t, x, y, z, k, u, zeta: fns["gamma"](t=t, x=x, y=y, z=z, u=u, zeta=zeta),
        g_driver=lambda t, x, y, z, k, u: fns["g"](t=t, x=x, y=y, z=z, u=u),
        h_terminal=lambda x: fns["h"](x=x),
    )


def build_problem(doc: dict) -> LoadedProblem:
    """Turn a schema-valid document into a spec, grid and declarations."""
    check_document(doc)
    model, g = doc["model"], doc["grid"]
    T = float(doc["horizon"])
    c = doc["controls"]
    if c["kind"] == "interval":
        controls = ControlSet.interval(c["lo"], c["hi"], c.get("resolution", 1e-2))
    else:
        controls = ControlSet.finite(c["values"])
    jumps = JumpMeasure(tuple((float(a["zeta"]), float(a["weight"])) for a in doc["jumps"]))
    x_domain = (float(g["x_min"]), float(g["x_max"]))
    family = model["family"]
    x0 = float(model.get("x0", 1.0))

    if family in ("merton", "riskmin"):
        if jumps.n_atoms:
            raise ConfigError(f"{family} wealth dynamics take no jumps; use the polynomial family")
        params = MarketParams(b=curve(model.get("b", 0.05 if family == "merton" else 0.2)),
                              sigma=curve(model.get("sigma", 0.2 if family == "merton" else 0.4)),
                              T=T, x0=x0, utility=model.get("utility", "log"),
                              power=float(model.get("power", 0.5)))
        lo = controls.lo if controls.kind == "interval" else min(controls.values)
        hi = controls.hi if controls.kind == "interval" else max(controls.values)
        params = replace(params, u_bounds=(lo, hi),
                         u_resolution=controls.resolution if controls.kind == "interval" else 1e-2)
        base = build_merton(params, x_domain) if family == "merton" else build_riskmin(params)
        spec = replace(base, controls=controls, x_domain=x_domain, objective_sense=doc["sense"])
    else:
        spec = ProblemSpec(_polynomial_coefficients(model), jumps, controls, T, x0,
                           doc["sense"], True, x_domain, name="polynomial")
    grid = SpaceTimeGrid.uniform(T, int(g["n_steps"]), x_domain[0], x_domain[1], int(g["n_x"]))
    decl = ComparisonDeclarations(**doc.get("declarations", {}))
    return LoadedProblem(spec, grid, decl, doc)


def load_problem(path) -> LoadedProblem:
    """Read, validate and build a problem document from disk."""
    text = Path(path).read_text()
    return build_problem(parse_document(text))


def benchmark_document(name: str, T: float = 1.0, b=None, sigma=None, x0: float = 1.0,
                       grid: dict | None = None) -> dict:
    """Problem document for a named benchmark (``merton-log`` or ``riskmin``)."""
    if name == "merton-log":
        model = {"family": "merton", "utility": "log",
                 "b": 0.05 if b is None else b, "sigma": 0.2 if sigma is None else sigma, "x0": x0}
        g = {"n_x": 200, "n_steps": 400, "x_min": 0.2, "x_max": 5.0}
    elif name == "riskmin":
        model = {"family": "riskmin", "b": 0.2 if b is None else b,
                 "sigma": 0.4 if sigma is None else sigma, "x0": x0}
        g = {"n_x": 200, "n_steps": 400, "x_min": x0 - 2.0, "x_max": x0 + 2.0}
    else:
        raise ConfigError(f"unknown benchmark {name!r} (choose merton-log or riskmin)")
    g.update(grid or {})
    return {"model": model, "grid": g, "jumps": [],
            "controls": {"kind": "interval", "lo": -20.0, "hi": 20.0, "resolution": 0.01},
            "horizon": T, "sense": MAXIMIZE}
