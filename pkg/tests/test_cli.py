import io
import json
import subprocess
import sys

import pytest

from fbsde_hjb.cli import run
from fbsde_hjb.config import benchmark_document


def invoke(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def small_problem(tmp_path, name="riskmin", **kw):
    doc = benchmark_document(name, grid={"n_x": 41, "n_steps": 60}, **kw)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_bench_riskmin_passes(tmp_path):
    code, out, _ = invoke("bench", "--problem", "riskmin", "--out", str(tmp_path))
    assert code == 0
    assert "PASS" in out and "verdict: PASS" in out
    payload = json.loads((tmp_path / "bench.json").read_text())
    row = payload["result"]["rows"][0]
    assert row["oracle"] == pytest.approx(1.125, abs=1e-12)
    assert payload["grid_sizes"] == [{"n_x": 200, "n_steps": 400}]


def test_entropy_zero_drift(tmp_path):
    code, out, _ = invoke("entropy", "--b", "0", "--sigma", "0.4", "--n-paths", "200",
                          "--out", str(tmp_path))
    payload = json.loads(out)
    assert code == 0 and payload["verdict"] == "PASS"
    assert payload["result"]["entropy_hat"] == 0.0
    assert payload["checks"]["entropy_identity"]["value"] <= 1e-10


def test_solve_nonpositive_horizon():
    code, _, err = invoke("solve", "--problem", "merton-log", "--T", "0")
    assert code == 1 and "horizon nonpositive" in err


def test_malformed_config_reports_position(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text('{\n  "command": "solve",\n  "problem": "riskmin",\n  "mc": {"paths": 3}\n}')
    code, _, err = invoke("--config", str(cfg))
    assert code == 1
    assert "line 4" in err and "column" in err


def test_usage_errors():
    assert invoke("frobnicate")[0] == 1
    assert invoke()[0] == 1
    assert invoke("solve", "--threads", "0")[0] == 1
    code, _, err = invoke("solve", "--problem", "no-such-thing")
    assert code == 1 and "unknown problem" in err


def test_solve_writes_field_csv(tmp_path):
    code, out, _ = invoke("solve", "--problem", small_problem(tmp_path), "--out",
                          str(tmp_path / "o"), "--format", "csv")
    assert code == 0
    header = (tmp_path / "o" / "field.csv").read_text().splitlines()[0]
    assert header.startswith("t,x,y")
    assert json.loads(out)["checks"]["closed_form"]["verdict"] == "PASS"


def test_simulate_is_thread_independent(tmp_path):
    prob = small_problem(tmp_path)
    a = invoke("simulate", "--problem", prob, "--n-paths", "3000", "--threads", "1")
    b = invoke("simulate", "--problem", prob, "--n-paths", "3000", "--threads", "8")
    assert a[0] == b[0] == 0
    assert a[1] == b[1]


def test_embedded_config_round_trip(tmp_path):
    prob = small_problem(tmp_path)
    code, first, _ = invoke("simulate", "--problem", prob, "--n-paths", "500", "--seed", "7",
                            "--out", str(tmp_path / "a"), "--format", "csv")
    assert code == 0
    cfg = json.loads(first)["config"]
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, second, _ = invoke("--config", str(tmp_path / "cfg.json"))
    assert code == 0 and second == first
    lines = (tmp_path / "a" / "paths.csv").read_text().splitlines()
    assert lines[0] == "path,t,X,Y,Z" and len(lines) == 1 + 500 * 101


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"command": "entropy", "problem": "riskmin",
                               "mc": {"n_paths": 100, "seed": 1, "dt": 0.01}}))
    _, out, _ = invoke("--config", str(cfg), "--seed", "5", "--b", "0")
    payload = json.loads(out)
    assert payload["seed"] == 5 and payload["config"]["mc"]["n_paths"] == 100


def test_verify_riskmin(tmp_path):
    code, out, _ = invoke("verify", "--problem", small_problem(tmp_path), "--n-paths", "200",
                          "--out", str(tmp_path / "v"), "--format", "csv")
    assert code == 0 and "verdict: PASS" in out
    payload = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert payload["result"]["field"] == "closed-form"
    assert (tmp_path / "v" / "verify.csv").exists()


def test_numerical_failure_exit_code(tmp_path):
    doc = benchmark_document("riskmin", grid={"n_x": 41, "n_steps": 60})
    doc["model"] = {"family": "polynomial", "x0": 0.0, "g": {"y": 1e9}, "h": {"1": 1.0}}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, _, err = invoke("solve", "--problem", str(path))
    assert code == 2 and "numerical failure" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fbsde_hjb", "entropy", "--b", "0",
                           "--n-paths", "50"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["verdict"] == "PASS"
