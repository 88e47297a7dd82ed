import csv
import json
import re
import subprocess
import sys

import pytest

from moddev.cli import run

EXP = """
[F]
kind = exponential
rate = 1
[G]
kind = exponential
rate = 1
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text("\n".join(line.strip() for line in text.splitlines()) + "\n")
    return str(p)


def test_rate_sigma2_km(tmp_path, capsys):
    cfg = _write(tmp_path, EXP + "[model]\ntau = 1\n[rate]\nnames = sigma2_km, km_sup\nx = 0.5\n")
    assert run(["rate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "rate.json").read_text())
    by_name = {r["name"]: r for r in doc["rates"]}
    assert by_name["sigma2_km"]["value"] == pytest.approx(0.432332, abs=1e-6)
    assert doc["config"]["model"]["tau"] == "1"
    printed = json.loads(capsys.readouterr().out)
    assert printed[0]["name"] == "sigma2_km"


def test_rate_infinite_written_as_string(tmp_path):
    cfg = _write(tmp_path, EXP + "[model]\ntau = 1\n[rate]\nnames = gaussian_finite\ntimes = 0\nphi = 1\n")
    assert run(["rate", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "rate.json").read_text())
    assert doc["rates"][0]["value"] == "inf"


def test_missing_seed_exit_2(tmp_path):
    cfg = _write(tmp_path, """
        [run]
        n_grid = 10, 20, 40
        r = 1
        [model]
        statistic = mean
        [F]
        kind = normal
mean = 0
sd = 1
        [scaling]
        kind = sqrt-log
        """)
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_unknown_key_exit_2(tmp_path):
    cfg = _write(tmp_path, "[run]\nbogus = 1\n")
    assert run(["rate", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_bad_model_exit_2(tmp_path):
    cfg = _write(tmp_path, "[F]\nkind = exponential\nrate = -1\n[rate]\nnames = mean\nx = 1\n")
    assert run(["rate", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_validate_scaling(tmp_path):
    cfg = _write(tmp_path, "[scaling]\nkind = sqrt-log\n[validate]\nn_min = 10\nn_max = 10000\n")
    assert run(["validate-scaling", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "scaling.json").read_text())["valid"] is True


def test_validate_scaling_invalid_is_data(tmp_path):
    cfg = _write(tmp_path, "[scaling]\nkind = user-table\ntable = 1, 3, 2\n[validate]\nn_min = 1\nn_max = 3\n")
    assert run(["validate-scaling", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "scaling.json").read_text())
    assert doc["valid"] is False and 2 in doc["decreasing_at"]


def test_project(tmp_path):
    cfg = _write(tmp_path, """
        [F]
        kind = uniform
        low = 0
        high = 1
        [G]
        kind = uniform
        low = 0
        high = 1
        [project]
        problem = wilcoxon
        n = 500
        y = 0, 1, 2
        refine = 100, 200
        """)
    assert run(["project", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "project.csv", newline="")))
    assert [float(r["y"]) for r in rows] == [0.0, 1.0, 2.0]
    assert float(rows[1]["value"]) == pytest.approx(6.0, abs=0.01)
    ref = list(csv.DictReader(open(tmp_path / "refinement.csv", newline="")))
    assert float(ref[1]["error"]) < float(ref[0]["error"])


SIM = """
[run]
seed = 11
n_grid = 20, 50, 100
r = 0.5
replications = 4000
[model]
statistic = mean
[F]
kind = normal
mean = 0
sd = 1
[scaling]
kind = sqrt-log
"""


def test_simulate_outputs_deterministic(tmp_path):
    cfg = _write(tmp_path, SIM)
    for w, d in ((1, "a"), (4, "b")):
        assert run(["simulate", "--config", cfg, "--out", str(tmp_path / d), "--workers", str(w)]) == 0
    a = (tmp_path / "a" / "decay.csv").read_bytes()
    assert a == (tmp_path / "b" / "decay.csv").read_bytes()
    assert a.splitlines()[0] == b"n,a2,R,hits,phat,lo,hi,used"
    summary = json.loads((tmp_path / "a" / "decay.json").read_text())
    assert summary["theory"] == pytest.approx(0.125)
    # timestamps live only in the run.log sidecar
    stamp = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:")
    assert stamp.search((tmp_path / "a" / "run.log").read_text())
    assert not stamp.search((tmp_path / "a" / "decay.json").read_text())


def test_simulate_seed_override(tmp_path):
    cfg = _write(tmp_path, SIM)
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "12"])
    assert (tmp_path / "a" / "decay.csv").read_bytes() != (tmp_path / "b" / "decay.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "decay.json").read_text())["config"]["run"]["seed"] == "12"


def test_simulate_strict(tmp_path):
    cfg = _write(tmp_path, SIM.replace("r = 0.5", "r = 40"))
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path), "--strict"]) == 3


def test_test_decision(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("time,delta\n0.5,1\n")
    cfg = _write(tmp_path, f"""
        [model]
        tau = 1
        [F0]
        kind = uniform
        low = 0
        high = 1
        [test]
        c = 0.1
        data = {data}
        [scaling]
        kind = power
        gamma = 0.25
        """)
    assert run(["test", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "test.json").read_text())
    assert doc["T"] == pytest.approx(0.5) and doc["reject"] is True


def test_test_simulation(tmp_path):
    cfg = _write(tmp_path, EXP.replace("[F]", "[F0]") + """
        [F1]
        kind = exponential
        rate = 2
        [model]
        tau = 1
        [test]
        c = 0.5
        [scaling]
        kind = sqrt-log
        [run]
        seed = 3
        n_grid = 50, 100, 200
        replications = 1000
        """)
    assert run(["test", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "exponents.csv", newline="")))
    assert len(rows) == 3
    doc = json.loads((tmp_path / "test.json").read_text())
    assert doc["type1_theory"] == pytest.approx(0.25 / (2 * 0.432332), rel=1e-5)


@pytest.mark.parametrize("estimator,expect", [("ecdf", None), ("kaplan-meier", None), ("nelson-aalen", None),
                                              ("quantile", 2.0), ("l-statistic", 2.5), ("m-estimate", 2.5)])
def test_estimate(tmp_path, estimator, expect):
    data = tmp_path / "x.csv"
    if estimator in ("kaplan-meier", "nelson-aalen"):
        data.write_text("1,1\n2,0\n3,1\n")
    else:
        data.write_text("x\n1\n2\n3\n4\n")
    extra = "p = 0.5\n" if estimator == "quantile" else ""
    cfg = _write(tmp_path, f"[estimate]\nestimator = {estimator}\ndata = {data}\n{extra}"
                           "[psi]\nkind = location\nradius = 10\n")
    assert run(["estimate", "--config", cfg, "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "estimate.json").read_text())
    if expect is None:
        assert (tmp_path / "estimate.csv").exists()
    else:
        assert doc["value"] == pytest.approx(expect, abs=1e-9)


def test_estimate_copula(tmp_path):
    data = tmp_path / "p.csv"
    data.write_text("0.2,5\n")
    cfg = _write(tmp_path, f"[estimate]\nestimator = copula\ndata = {data}\npoints = 1:1; 0.5:0.5\n")
    assert run(["estimate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "estimate.json").read_text())["value"] == [1.0, 1.0]


def test_console_script_entry(tmp_path):
    cfg = _write(tmp_path, "[scaling]\nkind = power\ngamma = 0.25\n[validate]\nn_min = 1\nn_max = 100\n")
    proc = subprocess.run([sys.executable, "-m", "moddev.cli", "validate-scaling", "--config", cfg,
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["valid"] is True


def test_no_subcommand():
    assert run([]) == 2
