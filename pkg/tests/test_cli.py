import csv
import io
import json
import math

import pytest

from dissipative_phi4 import cli
from dissipative_phi4.errors import NonConvergence


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def table(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(body))


def header(text):
    return [ln for ln in text.splitlines() if ln.startswith("#")]


@pytest.fixture(scope="module")
def verify_default():
    return run(["verify"])


def test_verify_default_passes(verify_default):
    code, out, err = verify_default
    assert code == 0, err
    doc = json.loads(out)
    assert doc["result"]["pass"] and doc["schema_version"] == cli.SCHEMA_VERSION
    assert len(doc["result"]["dense"]) == 2 and doc["result"]["symbolic"]
    assert doc["warnings"] == []


def test_verify_warns_on_low_beta_omega():
    code, out, err = run(["verify", "--beta", "1.0", "--mass", "1.0"])
    assert "warning" in err and "beta*omega_min" in err
    assert json.loads(out)["warnings"]
    # exit status follows the suite itself; truncation at beta*omega ~ 1.3 fails it
    assert code in (0, 1)


def test_malformed_config_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("d = 2\nbeta = -1\n")
    code, out, err = run(["vertex", "--config", str(bad)])
    assert code == 2 and out == ""
    assert json.loads(err)["error"]["field"] == "beta"
    bad.write_text("d: 2\n")
    code, _, err = run(["vertex", "--config", str(bad)])
    assert code == 2 and "line 1" in json.loads(err)["error"]["field"]
    bad.write_text("temperature = 3\n")
    code, _, err = run(["vertex", "--config", str(bad)])
    assert code == 2 and json.loads(err)["error"]["field"] == "temperature"
    code, _, err = run(["vertex", "--config", str(tmp_path / "missing.cfg")])
    assert code == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# vertex setup\nparams.d = 1.5\nlambda = 0.2\ngamma = 1e-6\n")
    code, out, _ = run(["vertex", "--config", str(cfg), "--lambda", "0.3"])
    doc = json.loads(out)
    assert code == 0
    assert doc["config"]["d"] == 1.5 and doc["config"]["lambda"] == 0.3
    assert doc["result"]["contributions"]["first-order"] == -0.3


def test_fixed_point_rows():
    code, out, _ = run(["fixed-point", "--config", "/dev/null"] + [])
    assert code == 0
    rows = {float(r["d"]): r for r in table(out)}
    assert float(rows[1.0]["lambda_star_closed"]) == pytest.approx(32 / 3, rel=1e-14)
    assert float(rows[2.0]["lambda_star_closed"]) == pytest.approx(32 * math.sqrt(2) / 3, rel=1e-14)
    for d, r in rows.items():
        assert float(r["lambda_star_fitted"]) == pytest.approx(float(r["lambda_star_closed"]), rel=1e-5)
        assert float(r["alpha_fitted"]) == pytest.approx(3 - d, abs=1e-5)


def test_fixed_point_sweep_bounds(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("d_min = 0.5\nd_max = 3.5\n")
    code, _, err = run(["fixed-point", "--config", str(cfg)])
    assert code == 2 and json.loads(err)["error"]["field"] == "d_min"


def test_propagator_free_columns_exact():
    code, out, _ = run(["propagator", "--lambda", "0", "--gamma", "0.01", "--d", "2"])
    assert code == 0
    for r in table(out):
        w2, k2 = float(r["omega2"]), float(r["k2"])
        C = complex(float(r["re_C"]), float(r["im_C"]))
        assert C == 1j / (w2 - (math.sqrt(k2 + 1.0)) ** 2)
    code, out, _ = run(["propagator", "--format", "json"])
    summary = json.loads(out)["result"]["summary"]
    assert set(summary) >= {"z", "Z", "Y", "Y_prime"}


def test_vertex_breakdown():
    code, out, _ = run(["vertex"])
    res = json.loads(out)["result"]
    assert set(res["contributions"]) == {"first-order", "diagram-a", "diagram-b", "friction-correction"}
    assert res["ImGamma_over_F"] == pytest.approx(sum(res["contributions"].values()), rel=1e-14)


def test_integrals_named_values():
    code, out, _ = run(["integrals", "--d", "2"])
    vals = json.loads(out)["result"]["integrals"]
    assert vals["I1_prime"]["closed_form"] == pytest.approx(1 / (4 * math.pi), rel=1e-15)
    assert vals["I1_prime"]["quadrature"] == pytest.approx(1 / (4 * math.pi), rel=1e-8)
    assert vals["I2"]["closed_form"] == "pole"
    code, out, _ = run(["integrals", "--d", "1", "--format", "csv"])
    rows = {r["name"]: r for r in table(out)}
    assert float(rows["friction_integral"]["quadrature"]) == pytest.approx(0.25, rel=1e-8)


@pytest.mark.parametrize("source", ["fitted", "closed"])
def test_rg_flow_invariant_column(tmp_path, source):
    cfg = tmp_path / "f.cfg"
    cfg.write_text(f"rg_source = {source}\nell_max = 10\n")
    code, out, _ = run(["rg-flow", "--config", str(cfg)])
    assert code == 0
    inv = [float(r["invariant"]) for r in table(out)]
    assert max(inv) - min(inv) < 1e-10 * abs(inv[0])


def test_outputs_are_byte_identical_and_carry_provenance(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        code, out, _ = run(["rg-flow", "--seed", "3", "--out", str(path)])
        assert code == 0 and out == ""
    assert a.read_bytes() == b.read_bytes()
    lines = header(a.read_text())
    assert "# schema_version=1" in lines and "# config.seed=3" in lines
    assert any(ln.startswith("# config.lambda0=") for ln in lines)


def test_computation_error_exit_1(monkeypatch):
    def boom(cfg):
        raise NonConvergence("forced")
    monkeypatch.setitem(cli.HANDLERS, "vertex", boom)
    code, out, err = run(["vertex"])
    assert code == 1 and json.loads(err)["error"]["error"] == "non_convergence"


def test_bad_flag_exit_2():
    code, _, _ = run(["nosuchcommand"])
    assert code == 2
