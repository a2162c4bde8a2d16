import csv
import json
import subprocess
import sys

import pytest

from hklab import __version__
from hklab.cli import config_hash, dumps, main
from hklab.flow import CSV_COLUMNS


def run_cli(tmp_path, sub, config, *extra, name="out"):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / name
    code = main([sub, "--config", str(cfg), "--out", str(out), *extra])
    report = out / "report.json"
    return code, (json.loads(report.read_text()) if report.exists() else None), out


def test_report_header(tmp_path):
    config = {"model": {"kind": "circle", "n": 2, "c": 1}}
    code, rep, _ = run_cli(tmp_path, "poincare", config)
    assert code == 0
    assert rep["tool"] == "hklab" and rep["version"] == __version__
    assert rep["config_hash"] == config_hash(config)
    assert rep["epsilon"] == 1 and rep["seed"] == 0
    assert rep["passed"] and rep["failures"] == []


def test_poincare_circle(tmp_path):
    code, rep, _ = run_cli(tmp_path, "poincare", {"model": {"kind": "circle", "n": 2, "c": 1}})
    assert rep["coefficients"] == [1, 1]
    assert rep["verdict"] == "pass" and rep["palindromic"]


def test_poincare_cap_override(tmp_path):
    code, rep, _ = run_cli(tmp_path, "poincare", {"model": {"kind": "circle", "n": 3, "c": 1}}, "--cap", "10")
    assert code == 0 and rep["coefficients"] == [1, 1, 1]


def test_poincare_assembly_violation(tmp_path):
    config = {"assembly": {"base": "circle", "strata": [{"index": 2, "series": {"kind": "torus", "rank": 2}}]}, "cap": 6}
    code, rep, _ = run_cli(tmp_path, "poincare", config)
    assert code == 1 and rep["verdict"] == "fail"


def test_frame_check_zero_constants(tmp_path):
    code, rep, _ = run_cli(tmp_path, "frame-check", {"model": {"kind": "circle", "n": 1}})
    assert code == 0
    assert rep["verdict"] == "general" and rep["constraints"] == 0


def test_frame_check_identity_fails_for_real_constant(tmp_path):
    model = {"kind": "circle", "n": 1, "c1": 0.5}
    code, rep, _ = run_cli(tmp_path, "frame-check", {"model": model}, name="a")
    assert code == 1 and rep["verdict"] == "not-general"
    code, rep, _ = run_cli(tmp_path, "frame-check", {"model": model, "frame": "sample-general"}, name="b")
    assert code == 0 and rep["verdict"] == "general"


def test_flow_with_traces(tmp_path):
    config = {"model": {"kind": "adhm", "n": 1, "k": 1}, "sampler": {"count": 3}, "traces": True}
    code, rep, out = run_cli(tmp_path, "flow", config)
    assert code == 0 and rep["count"] == 3
    for k in range(3):
        rows = list(csv.reader(open(out / f"trace_{k}.csv")))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert rows[-1][-1] == rep["traces"][k]["status"]


def test_lyapunov_small(tmp_path):
    code, rep, _ = run_cli(tmp_path, "lyapunov", {"model": {"kind": "circle", "n": 1, "c": 1}, "sampler": {"count": 10}})
    assert code == 0 and rep["certificates_passed"] == 10


def test_critical_circle_origin(tmp_path):
    code, rep, _ = run_cli(tmp_path, "critical", {"model": {"kind": "circle", "n": 1, "c": 1}, "sampler": {"count": 2}})
    assert code == 0
    assert any(p["inertia"] == [2, 0, 2] for p in rep["points"])


def test_semistable_expectation(tmp_path):
    config = {"model": {"kind": "circle", "n": 1, "c1": 0.5}, "frame": "sample-general", "sampler": {"count": 4}, "expect": "semistable"}
    code, rep, _ = run_cli(tmp_path, "semistable", config)
    assert code == 0


def test_determinism_and_jobs(tmp_path):
    config = {"model": {"kind": "circle", "n": 2, "c": 1}, "sampler": {"count": 4}, "seed": 17}
    run_cli(tmp_path, "flow", config, name="a")
    run_cli(tmp_path, "flow", config, name="b")
    run_cli(tmp_path, "flow", config, "--jobs", "2", name="c")
    texts = [(tmp_path / n / "report.json").read_bytes() for n in "abc"]
    assert texts[0] == texts[1] == texts[2]


def test_seed_override_changes_starts(tmp_path):
    config = {"model": {"kind": "circle", "n": 1, "c": 1}, "sampler": {"count": 2}}
    _, a, _ = run_cli(tmp_path, "flow", config, "--seed", "1", name="a")
    _, b, _ = run_cli(tmp_path, "flow", config, "--seed", "2", name="b")
    assert a["seed"] == 1 and b["seed"] == 2
    assert a["traces"] != b["traces"]


@pytest.mark.parametrize(
    "config,extra",
    [
        ({"model": {"kind": "nope"}}, ()),
        ({"model": {"kind": "circle", "n": 1}, "flow": {"bogus": 1}}, ()),
        ({"model": {"kind": "circle", "n": 1}}, ("--seed", "-3")),
        ({"model": {"kind": "circle", "n": 1}}, ("--seed", str(2**64))),
        ({"model": {"kind": "circle", "n": 1}, "expect": "maybe"}, ()),
    ],
)
def test_config_errors_exit_2(tmp_path, config, extra):
    sub = "frame-check" if "expect" in config else "flow"
    code, rep, _ = run_cli(tmp_path, sub, config, *extra)
    assert code == 2 and rep is None


def test_missing_config_file(tmp_path):
    assert main(["flow", "--config", str(tmp_path / "absent.json")]) == 2


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"kind": "circle", "n": 1, "c": 1}}))
    r = subprocess.run([sys.executable, "-m", "hklab.cli", "poincare", "--config", str(cfg), "--out", str(tmp_path)], capture_output=True)
    assert r.returncode == 0
    assert json.loads((tmp_path / "report.json").read_text())["coefficients"] == [1]


def test_dumps_is_valid_json_with_exact_floats():
    obj = {"a": 0.1, "b": [1.0, float("nan")], "c": {"d": True, "e": None}}
    back = json.loads(dumps(obj))
    assert back["a"] == 0.1 and back["b"][0] == 1.0
    # strict JSON has no NaN literal
    assert back["b"][1] == "NaN"
