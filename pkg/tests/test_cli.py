import json

import pytest

from fiberdis import acceptance
from fiberdis.cli import main


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as e:
        code = e.code
    out, err = capsys.readouterr()
    return code, out, err


def test_disintegrate_digit(capsys):
    code, out, _ = run(["disintegrate", "--system", "doubling-digit", "--observable", "z^2", "--tol", "1e-6",
                        "--grid", "8"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "x,vbar,error_bound"
    assert len(lines) == 9
    for line in lines[1:]:
        _, vbar, err = map(float, line.split(","))
        assert abs(vbar - 0.125) <= 1e-6 and 0 < err <= 1e-6


def test_eta_cos(capsys):
    code, out, _ = run(["eta", "--system", "doubling-cos", "--observable", "z", "--tol", "1e-4"], capsys)
    assert code == 0
    res = json.loads(out)
    lo, hi = res["bracket"]
    assert hi - lo <= 1e-4 and lo <= 0.0 <= hi
    assert abs(res["value"]) < 1e-4


def test_outputs_and_sidecar(tmp_path, capsys):
    out = tmp_path / "q.csv"
    code, text, _ = run(["suspend", "--system", "doubling-digit", "--observable", "u*z", "--tol", "1e-4",
                         "--grid", "4", "--out", str(out)], capsys)
    assert code == 0 and text == ""
    assert out.read_text().splitlines()[0] == "x,u,vbar,error_bound"
    side = json.loads((tmp_path / "q.json").read_text())
    assert side["roof"] == "1 + x"


def test_density_json(capsys):
    code, out, _ = run(["density", "--system", "gauss-affine", "--format", "json", "--grid", "4"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["kind"] == "analytic" and len(res["rows"]) == 4


def test_output_is_byte_stable(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p, threads in zip(paths, ("1", "4")):
        code, _, _ = run(["disintegrate", "--system", "doubling-cos", "--observable", "z^2", "--tol", "1e-4",
                          "--grid", "16", "--threads", threads, "--out", str(p)], capsys)
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_regularity_dk(capsys):
    code, out, _ = run(["regularity", "--suite", "dk", "--system", "doubling-cos", "--observable", "z"], capsys)
    assert code == 0
    assert json.loads(out)["verdict"] == "PASS"


def test_c1_on_piecewise_is_computation_error(capsys):
    code, _, err = run(["regularity", "--suite", "c1", "--system", "doubling-digit", "--n-list", "1-2"], capsys)
    assert code == 1
    payload = json.loads(err)
    assert "insufficient smoothness" in payload["message"] and payload["exit"] == 1


@pytest.mark.parametrize("argv", [
    ["eta", "--system", "nope"],
    ["eta", "--observable", "1 + * 2"],
    ["eta", "--tol", "-1"],
    ["frobnicate"],
    ["eta", "--n-list", "x"],
])
def test_config_errors_exit_2(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert json.loads(err)["exit"] == 2


def test_config_file_and_override(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text('[system]\nname = doubling-digit\n[observable]\nv = "z^2"\n[params]\ntol = 1e-3\ngrid = 4\n')
    code, out, _ = run(["disintegrate", "--config", str(ini), "--grid", "2"], capsys)
    assert code == 0
    assert len(out.splitlines()) == 3


def test_verify_exit_codes(monkeypatch, capsys):
    ok = [acceptance.CriterionResult(1, "a", True, {}, 0.0)]
    bad = ok + [acceptance.CriterionResult(2, "b", False, {}, 0.0)]
    monkeypatch.setattr(acceptance, "verify", lambda seed, out, progress: (ok, True))
    code, out, _ = run(["verify", "--system", "doubling-cos"], capsys)
    assert code == 0 and "PASS: 1/1 criteria passed" in out
    monkeypatch.setattr(acceptance, "verify", lambda seed, out, progress: (bad, False))
    code, out, _ = run(["verify"], capsys)
    assert code == 3 and "FAIL: 1/2" in out
