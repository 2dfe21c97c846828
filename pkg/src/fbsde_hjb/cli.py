"""Command-line entry point: ``fbsde-hjb {solve,simulate,verify,entropy,bench}``.

Exit codes: 0 when every check passes, 2 on a numerical failure, 1 on a
usage or configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .benchmarks import MarketParams, merton_log_value, merton_log_feedback, riskmin_closed_form
from .config import (PROBLEM_SCHEMA, benchmark_document, build_problem, check_document, curve,
                     parse_document)
from .driver import ito_ventzell_residual
from .errors import ConfigError, FBSDEError, InvalidProblemError, NonFiniteError, UnstableStepError
from .field import DecouplingField, write_field_csv
from .montecarlo import (bsde_residual, girsanov_entropy, reconstruct_backward, simulate_forward,
                         write_bundle_csv)
from .solver import TOLERANCES, solve

COMMANDS = ("solve", "simulate", "verify", "entropy", "bench")
BENCHMARKS = ("merton-log", "riskmin")
DEFAULT_SEED = 42
MC_DEFAULTS = {
    "solve": {"n_paths": 1000, "dt": 0.01},
    "simulate": {"n_paths": 10_000, "dt": 0.01},
    "verify": {"n_paths": 1000, "dt": 0.01},
    "entropy": {"n_paths": 100_000, "dt": 1e-3},
    "bench": {"n_paths": 1000, "dt": 0.01},
}
LADDER = dict(TOLERANCES, residual_halving_ratio=1.4, terminal_mismatch=1e-3,
              residual_floor=1e-10, entropy_identity=1e-10)

_PROBLEM_REF = {"oneOf": [{"enum": list(BENCHMARKS)}, PROBLEM_SCHEMA]}
RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "problem": {"oneOf": [_PROBLEM_REF, {"type": "array", "items": _PROBLEM_REF,
                                             "minItems": 1}]},
        "params": {"type": "object", "additionalProperties": False,
                   "properties": {"T": {"type": "number"}, "x0": {"type": "number"},
                                  "b": PROBLEM_SCHEMA["properties"]["model"]["allOf"][1]["then"]["properties"]["b"],
                                  "sigma": PROBLEM_SCHEMA["properties"]["model"]["allOf"][1]["then"]["properties"]["sigma"]}},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"n_x": {"type": "integer", "minimum": 5},
                                "n_steps": {"type": "integer", "minimum": 1},
                                "x_min": {"type": "number"}, "x_max": {"type": "number"}}},
        "mc": {"type": "object", "additionalProperties": False,
               "properties": {"n_paths": {"type": "integer", "minimum": 1},
                              "dt": {"type": "number", "exclusiveMinimum": 0},
                              "seed": {"type": "integer", "minimum": 0},
                              "policy": {"oneOf": [{"const": "optimal"}, {"type": "number"}]}}},
        "out": {"type": "string"},
        "format": {"enum": ["json", "csv"]},
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fbsde-hjb", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=COMMANDS)
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--problem", help="benchmark name (merton-log, riskmin) or problem JSON file")
    p.add_argument("--T", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--x0", type=float)
    p.add_argument("--n-paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for path simulation (results do not depend on it)")
    return p


# ------------------------------------------------------------- resolution

def _read_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_document(text, RUN_SCHEMA, "config")


def _apply_overrides(doc: dict, params: dict, grid: dict) -> dict:
    doc = copy.deepcopy(doc)
    model = doc["model"]
    if "T" in params:
        doc["horizon"] = params["T"]
    if "x0" in params:
        model["x0"] = params["x0"]
    for key in ("b", "sigma"):
        if key in params:
            if model["family"] == "polynomial":
                raise ConfigError(f"--{key} applies to the merton and riskmin families only")
            model[key] = params[key]
    doc["grid"].update(grid)
    return doc


def _resolve_problem(ref, params: dict, grid: dict) -> dict:
    if isinstance(ref, str):
        if ref in BENCHMARKS:
            doc = benchmark_document(ref, params.get("T", 1.0), params.get("b"),
                                     params.get("sigma"), params.get("x0", 1.0), grid)
            return doc
        path = Path(ref)
        if not path.exists():
            raise ConfigError(f"unknown problem {ref!r}: not a benchmark name or a file")
        doc = parse_document(path.read_text())
    else:
        doc = ref
    check_document(doc)
    return _apply_overrides(doc, params, grid)


def resolve(args: argparse.Namespace) -> dict:
    """Merge config file, defaults and flags into a fully explicit RunConfig."""
    cfg = _read_config(args.config) if args.config else {}
    command = args.command or cfg.get("command")
    if command is None:
        raise UsageError("no command given (solve, simulate, verify, entropy, bench)")
    params = dict(cfg.get("params", {}))
    for key in ("T", "b", "sigma", "x0"):
        v = getattr(args, key)
        if v is not None:
            params[key] = v
    grid = dict(cfg.get("grid", {}))
    problem = args.problem if args.problem is not None else cfg.get("problem")
    if problem is None:
        problem = list(BENCHMARKS) if command == "bench" else "riskmin"
    refs = problem if isinstance(problem, list) else [problem]
    docs = [_resolve_problem(r, params, grid) for r in refs]

    mc = dict(MC_DEFAULTS[command], seed=DEFAULT_SEED, policy="optimal")
    mc.update(cfg.get("mc", {}))
    for key, flag in (("n_paths", args.n_paths), ("dt", args.dt), ("seed", args.seed)):
        if flag is not None:
            mc[key] = flag
    if mc["n_paths"] < 1:
        raise ConfigError("n_paths must be at least 1")
    if not mc["dt"] > 0:
        raise ConfigError("dt must be positive")
    resolved = {
        "command": command,
        "problem": docs if command == "bench" else docs[0],
        "mc": mc,
        "format": args.format or cfg.get("format", "json"),
    }
    if command != "bench" and len(docs) > 1:
        raise UsageError(f"{command} takes a single problem")
    check_document(resolved, RUN_SCHEMA, "resolved config")
    resolved["out"] = args.out or cfg.get("out")
    return resolved


# ---------------------------------------------------------------- helpers

def _market(spec) -> MarketParams | None:
    return spec.meta.get("market") if spec.meta else None


def _oracle(spec) -> float | None:
    """Closed-form ``y(0, x0)`` when one is known."""
    params = _market(spec)
    kind = spec.meta.get("benchmark") if spec.meta else None
    if kind == "riskmin":
        return params.x0 + riskmin_closed_form(params).a(0.0)
    if kind == "merton" and params.utility == "log":
        return merton_log_value(0.0, params.x0, params)
    return None


def _policy(loaded, mc, report=None):
    """Feedback used for simulation: a constant, the closed form, or the solved field."""
    spec = loaded.spec
    if mc["policy"] != "optimal":
        return float(mc["policy"]), report
    params = _market(spec)
    kind = spec.meta.get("benchmark") if spec.meta else None
    ctrl = spec.controls
    if kind == "riskmin":
        sol = riskmin_closed_form(params)

        def riskmin_feedback(t, x):
            return ctrl.project(np.full(np.shape(x), sol.u_hat(t)))
        return riskmin_feedback, report
    if kind == "merton" and params.utility == "log":
        def merton_feedback(t, x):
            return ctrl.project(merton_log_feedback(t, x, params))
        return merton_feedback, report
    report = report or solve(spec, loaded.grid)
    return report, report


def _check(value, threshold, passed, **extra) -> dict:
    return dict(extra, value=value, threshold=threshold, verdict="PASS" if passed else "FAIL")


def _halving(coarse: float, fine: float) -> dict:
    floor = LADDER["residual_floor"]
    ratio = coarse / fine if fine > 0 else math.inf
    ok = fine <= max(coarse / LADDER["residual_halving_ratio"], floor)
    return _check(ratio if math.isfinite(ratio) else None, LADDER["residual_halving_ratio"], ok,
                  coarse=coarse, fine=fine, floor=floor)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _dumps(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default)


def _envelope(cfg: dict, result: dict, checks: dict) -> dict:
    embedded = {k: v for k, v in cfg.items() if k != "out"}
    docs = cfg["problem"] if isinstance(cfg["problem"], list) else [cfg["problem"]]
    ok = all(c["verdict"] == "PASS" for c in checks.values())
    return {
        "config": embedded,
        "seed": cfg["mc"]["seed"],
        "grid_sizes": [{"n_x": d["grid"]["n_x"], "n_steps": d["grid"]["n_steps"]} for d in docs],
        "tolerances": LADDER,
        "result": result,
        "checks": checks,
        "verdict": "PASS" if ok else "FAIL",
    }


def _write_csv_table(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands

def cmd_solve(cfg, threads, out):
    loaded = build_problem(cfg["problem"])
    report = solve(loaded.spec, loaded.grid)
    spec = loaded.spec
    checks = {"finite_field": _check(bool(np.isfinite(report.field.y_values).all()), True,
                                     bool(np.isfinite(report.field.y_values).all()))}
    inside = bool(np.all(spec.controls.contains(report.control_field, atol=1e-12)))
    checks["controls_in_set"] = _check(inside, True, inside)
    oracle = _oracle(spec)
    if oracle is not None:
        err = abs(report.y0_at_x0 - oracle)
        tol = TOLERANCES["pde_vs_closed_form_rel"] * max(1.0, abs(oracle))
        checks["closed_form"] = _check(err, tol, err <= tol, oracle=oracle)
    result = report.summary()
    if out and cfg["format"] == "csv":
        write_field_csv(report.field, out / "field.csv", report.control_field)
    return _envelope(cfg, result, checks), None


def cmd_simulate(cfg, threads, out):
    loaded = build_problem(cfg["problem"])
    mc = cfg["mc"]
    policy, _ = _policy(loaded, mc)
    bundle = simulate_forward(loaded.spec, policy, mc["n_paths"], mc["dt"], mc["seed"],
                              threads=threads)
    stats = bundle.stats()
    n = bundle.dB.size
    bound = 4.0 * math.sqrt(bundle.dt / n)
    checks = {"dB_mean": _check(abs(stats["dB_mean"]), bound, abs(stats["dB_mean"]) < bound)}
    if n >= 10_000:
        rel = abs(stats["dB_var"] / bundle.dt - 1.0)
        checks["dB_variance"] = _check(rel, 0.05, rel <= 0.05)
    lam = loaded.spec.jumps.total_intensity
    if lam > 0:
        per_path = bundle.jump_counts.sum(axis=(1, 2))
        mean = lam * loaded.spec.T
        se = math.sqrt(mean / bundle.n_paths)
        dev = abs(float(per_path.mean()) - mean)
        checks["jump_count_mean"] = _check(dev, 4 * se, dev <= 4 * se, expected=mean)
    if out and cfg["format"] == "csv":
        write_bundle_csv(bundle, out / "paths.csv")
    return _envelope(cfg, stats, checks), None


def cmd_verify(cfg, threads, out):
    loaded = build_problem(cfg["problem"])
    spec, grid, mc = loaded.spec, loaded.grid, cfg["mc"]
    if spec.meta and spec.meta.get("benchmark") == "riskmin":
        sol = riskmin_closed_form(spec.meta["market"])
        fld = DecouplingField.from_function(grid, sol.y_hat)
        source = "closed-form"
        report = None
    else:
        report = solve(spec, grid)
        fld = report.field
        source = "solved"
    policy, _ = _policy(loaded, mc, report)
    stats = {}
    for label, dt in (("dt", mc["dt"]), ("dt_half", mc["dt"] / 2)):
        bundle = simulate_forward(spec, policy, mc["n_paths"], dt, mc["seed"], threads=threads)
        bundle = reconstruct_backward(fld, bundle, spec)
        bs = bsde_residual(spec, bundle)
        iv = ito_ventzell_residual(fld, spec, bundle, bundle.dt)
        stats[label] = {"dt": bundle.dt, "bsde": bs._asdict(), "ito_ventzell": iv._asdict()}
    c, f = stats["dt"], stats["dt_half"]
    tm = max(c["bsde"]["terminal_mismatch"], f["bsde"]["terminal_mismatch"])
    checks = {
        "bsde_residual_halving": _halving(c["bsde"]["rms"], f["bsde"]["rms"]),
        "ito_ventzell_halving": _halving(c["ito_ventzell"]["rms"], f["ito_ventzell"]["rms"]),
        "terminal_mismatch": _check(tm, LADDER["terminal_mismatch"],
                                    tm <= LADDER["terminal_mismatch"]),
    }
    result = {"field": source, "residuals": stats}
    table = _table(["check", "value", "threshold", "verdict"],
                   [[k, v["value"], v["threshold"], v["verdict"]] for k, v in checks.items()])
    if out and cfg["format"] == "csv":
        _write_csv_table(out / "verify.csv",
                         [[k, v["value"], v["threshold"], v["verdict"]] for k, v in checks.items()],
                         ["check", "value", "threshold", "verdict"])
    return _envelope(cfg, result, checks), table


def cmd_entropy(cfg, threads, out):
    doc, mc = cfg["problem"], cfg["mc"]
    model = doc["model"]
    if model["family"] == "polynomial":
        raise ConfigError("entropy needs a market model (merton or riskmin family)")
    T = float(doc["horizon"])
    b = curve(model.get("b", 0.2 if model["family"] == "riskmin" else 0.05))
    sigma = curve(model.get("sigma", 0.4 if model["family"] == "riskmin" else 0.2))
    params = MarketParams(b=b, sigma=sigma, T=T, x0=float(model.get("x0", 1.0)))
    params.check()
    est = girsanov_entropy(b, sigma, T, mc["n_paths"], mc["dt"], mc["seed"], threads=threads)
    diff = abs(est.entropy_hat - est.closed_form)
    k = TOLERANCES["monte_carlo_se"]
    checks = {
        "entropy_vs_closed_form": _check(diff, k * est.std_err,
                                         diff <= k * est.std_err or diff <= 1e-12),
        "density_mean_one": _check(abs(est.gamma_mean - 1.0), 4 * est.gamma_std_err,
                                   abs(est.gamma_mean - 1.0) <= 4 * est.gamma_std_err + 1e-12),
    }
    rho = riskmin_closed_form(params).rho_min
    gap = abs(-rho - params.x0 - est.closed_form)
    checks["entropy_identity"] = _check(gap, LADDER["entropy_identity"],
                                        gap <= LADDER["entropy_identity"], rho_min=rho)
    result = dict(vars(est), z_score=est.z_score if math.isfinite(est.z_score) else None)
    return _envelope(cfg, result, checks), None


def cmd_bench(cfg, threads, out):
    rows, checks, result = [], {}, []
    for doc in cfg["problem"]:
        loaded = build_problem(doc)
        spec = loaded.spec
        oracle = _oracle(spec)
        if oracle is None:
            raise ConfigError(f"bench needs a problem with a closed form; {spec.name} has none")
        report = solve(spec, loaded.grid)
        err = abs(report.y0_at_x0 - oracle)
        rel = err / abs(oracle) if oracle else math.inf
        tol = TOLERANCES["pde_vs_closed_form_rel"] * max(1.0, abs(oracle))
        name = spec.name
        checks[name] = _check(err, tol, err <= tol, oracle=oracle, solver=report.y0_at_x0)
        result.append({"problem": name, "solver": report.y0_at_x0, "oracle": oracle,
                       "abs_err": err, "rel_err": rel, "verdict": checks[name]["verdict"]})
        rows.append([name, report.y0_at_x0, oracle, err, rel, checks[name]["verdict"]])
    header = ["problem", "solver", "oracle", "abs_err", "rel_err", "verdict"]
    if out and cfg["format"] == "csv":
        _write_csv_table(out / "bench.csv", rows, header)
    return _envelope(cfg, {"rows": result}, checks), _table(header, rows)


def _table(header, rows) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.10g}"
        return str(v)

    cells = [header] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells)


DISPATCH = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify,
            "entropy": cmd_entropy, "bench": cmd_bench}


def run(argv=None, stdout=None, stderr=None) -> int:
    """Run one command; returns the process exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = resolve(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return 1
    except (ConfigError, InvalidProblemError) as exc:
        print(f"config error: {exc}", file=stderr)
        return 1

    out = Path(cfg["out"]) if cfg["out"] else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    try:
        payload, table = DISPATCH[cfg["command"]](cfg, args.threads, out)
    except (ConfigError, InvalidProblemError) as exc:
        print(f"config error: {exc}", file=stderr)
        return 1
    except (UnstableStepError, NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=stderr)
        print(_dumps({"config": {k: v for k, v in cfg.items() if k != "out"},
                      "error": str(exc), "verdict": "FAIL"}), file=stderr)
        return 2
    except FBSDEError as exc:
        print(f"error: {exc}", file=stderr)
        return 1

    text = _dumps(payload)
    if out:
        (out / f"{cfg['command']}.json").write_text(text + "\n")
    print(table if table is not None else text, file=stdout)
    if table is not None:
        print(f"verdict: {payload['verdict']}", file=stdout)
    return 0 if payload["verdict"] == "PASS" else 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
