import csv
import io
import json
import subprocess
import sys

import pytest

from suskit.cli import SCAN_COLUMNS, VERIFY_COLUMNS, main, parse_grid, parse_mesh

ENVELOPE_KEYS = {"command", "inputs", "outputs", "diagnostics", "versions", "seed"}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def envelope(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    env = json.loads(out)
    assert set(env) == ENVELOPE_KEYS
    assert env["command"] == argv[0] or argv[0] == "--config"
    assert "runtime_s" in env["diagnostics"]
    return env


def test_chi_single_atom(capsys):
    env = envelope(capsys, "chi", "--kernel", "constant:0.5", "--space", "atom")
    assert env["outputs"]["value"] == pytest.approx(2.0, rel=1e-12)
    assert env["outputs"]["status"] == "converged"


def test_chi_supercritical_reports_null(capsys):
    env = envelope(capsys, "chi", "--kernel", "constant:2", "--space", "atom")
    assert env["outputs"]["value"] is None and env["outputs"]["status"] == "diverged"


@pytest.mark.parametrize("argv,field", [
    (["chi", "--kernel", "bogus:1"], "--kernel"),
    (["chi", "--kernel", "constant:1", "--mesh", "uniform:-3"], "--mesh"),
    (["chi", "--kernel", "constant:1", "--lambda", "-1"], "--lambda"),
    (["scan", "--lambda-grid", "1:0"], "--lambda-grid"),
    (["verify", "--family", "nope"], "--family"),
])
def test_invalid_input_exit_code(capsys, argv, field):
    code, out, err = run(capsys, *argv)
    assert code == 2
    assert field in err and out == ""


def test_norm_and_chihat(capsys):
    env = envelope(capsys, "norm", "--kernel", "constant:1", "--space", "atom")
    assert env["outputs"]["norm"] == pytest.approx(1.0)
    env = envelope(capsys, "chihat", "--kernel", "constant:1", "--space", "atom", "--lambda", "2")
    assert env["outputs"]["rho_total"] == pytest.approx(0.796812130020020, rel=1e-12)
    assert env["outputs"]["chi_hat"] == pytest.approx(0.342283635723168, rel=1e-10)
    assert env["outputs"]["chi"] is None


def test_rhok_csv(capsys, tmp_path):
    path = tmp_path / "rhok.csv"
    envelope(capsys, "rhok", "--kernel", "constant:1", "--space", "atom", "--lambda", "0.5",
             "--kmax", "5", "--out", str(path))
    rows = list(csv.DictReader(path.open()))
    assert [int(r["k"]) for r in rows] == [1, 2, 3, 4, 5]
    assert float(rows[0]["rho_k_total"]) == pytest.approx(0.6065306597, rel=1e-9)


def test_sample_csv_to_stdout(capsys):
    code, out, err = run(capsys, "sample", "--kernel", "constant:1", "--space", "atom", "--n", "50",
                         "--lambda", "3", "--seed", "4", "--out", "-")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["u", "v"]
    pairs = [(int(u), int(v)) for u, v in rows[1:]]
    assert all(1 <= u < v <= 50 for u, v in pairs)
    env = json.loads(err)
    assert env["outputs"]["edges"] == len(pairs)


def test_sample_reproducible(capsys):
    a = envelope(capsys, "sample", "--kernel", "chkns", "--mesh", "uniform:100", "--seed", "3")
    b = envelope(capsys, "sample", "--kernel", "chkns", "--mesh", "uniform:100", "--seed", "3")
    assert a["outputs"]["edges"] == b["outputs"]["edges"] and a["seed"] == 3


def test_scan_columns(capsys, tmp_path):
    path = tmp_path / "scan.csv"
    envelope(capsys, "scan", "--kernel", "constant:1", "--space", "atom", "--n", "500",
             "--lambda-grid", "0.5,2", "--reps", "3", "--out", str(path))
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == SCAN_COLUMNS and len(rows) == 2


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nkernel = constant:0.5\nspace = atom\nlambda = 1\n")
    env = envelope(capsys, "--config", str(cfg), "chi")
    assert env["outputs"]["value"] == pytest.approx(2.0)
    # command line wins over the file
    env = envelope(capsys, "--config", str(cfg), "chi", "--lambda", "0.5")
    assert env["outputs"]["value"] == pytest.approx(4 / 3)
    cfg.write_text("nonsense = 1\n")
    assert run(capsys, "--config", str(cfg), "chi")[0] == 2


def test_json_file_output(capsys, tmp_path):
    path = tmp_path / "env.json"
    code, out, _ = run(capsys, "--json", str(path), "norm", "--kernel", "constant:2", "--space", "atom")
    assert code == 0 and out == ""
    assert set(json.loads(path.read_text())) == ENVELOPE_KEYS


@pytest.mark.parametrize("family", ["er", "rank1", "dubins"])
def test_verify_families(capsys, tmp_path, family):
    path = tmp_path / "v.csv"
    grid = "0.1,0.2" if family == "dubins" else "0.2,2"
    envelope(capsys, "verify", "--family", family, "--lambda-grid", grid, "--out", str(path))
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == VERIFY_COLUMNS
    assert all(r["pass"] == "True" for r in rows), rows


def test_mc_bp(capsys):
    env = envelope(capsys, "mc-bp", "--kernel", "constant:1", "--space", "atom", "--lambda", "0.5",
                   "--runs", "20000", "--seed", "1")
    o = env["outputs"]
    assert abs(o["mean_capped"] - 2.0) < 4 * o["std_errors"]["mean_capped"]


def test_threshold_max_kernel(capsys):
    env = envelope(capsys, "threshold", "--kernel", "max:phi=1-x", "--mesh", "uniform:400")
    o = env["outputs"]
    assert o["lambda_c_norm"] == pytest.approx(2.4674011, rel=1e-3)
    assert o["lambda_c_solvability"] == pytest.approx(o["lambda_c_norm"], rel=1e-3)


def test_chkns_command(capsys):
    env = envelope(capsys, "chkns", "--lambda", "0.5", "--K", "2000")
    assert env["outputs"]["rho_ode"] == pytest.approx(0.0827667876, abs=1e-8)


def test_parse_helpers():
    assert parse_mesh("uniform:10").size == 10
    assert parse_mesh("finite:1,3").total_mass == pytest.approx(4.0)
    assert list(parse_grid("0:1:3")) == [0.0, 0.5, 1.0]
    assert list(parse_grid("0.5,2")) == [0.5, 2.0]
    with pytest.raises(ValueError):
        parse_grid("1:a:3")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "suskit", "chi", "--kernel", "constant:0.5",
                          "--space", "atom"], capture_output=True, text=True, timeout=60)
    assert res.returncode == 0
    assert json.loads(res.stdout)["outputs"]["value"] == pytest.approx(2.0)
