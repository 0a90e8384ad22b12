import os

import numpy as np
import pytest

from fiberdis import config as cf
from fiberdis import report as rp


def test_same_report_twice_is_byte_identical(tmp_path):
    report = {"b": [1.0, np.float64(1 / 3)], "a": {"y": np.int64(2), "x": True}, "c": None}
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    rp.emit_report(report, "json", a)
    rp.emit_report(dict(reversed(list(report.items()))), "json", b)
    assert a.read_bytes() == b.read_bytes()
    text = a.read_bytes()
    assert b"\r" not in text
    assert text.index(b'"a"') < text.index(b'"b"') < text.index(b'"c"')
    assert b"0.33333333333333331" in text


def test_float_formatting():
    assert rp.to_json([2.0, 0.1, 1e-20]).split() == ["[", "2.0,", "0.10000000000000001,", "9.9999999999999995e-21", "]"]


def test_nan_refused(tmp_path):
    path = tmp_path / "r.json"
    with pytest.raises(rp.ReportError, match="non-finite value in report"):
        rp.emit_report({"v": float("nan")}, "json", path)
    assert not path.exists()
    with pytest.raises(rp.ReportError, match="non-finite"):
        rp.to_csv([{"x": np.inf}])


def test_csv_header_and_quoting():
    text = rp.to_csv([{"x": 0.25, "vbar": 0.125, "error_bound": 1e-6}], ["x", "vbar", "error_bound"])
    assert text.splitlines()[0] == "x,vbar,error_bound"
    assert rp.to_csv([{"a": 'p,"q"'}]).splitlines()[1] == '"p,""q"""'


def test_write_atomic_leaves_no_temp(tmp_path):
    path = tmp_path / "out.csv"
    path.write_text("old")
    rp.write_atomic(path, "new\n")
    assert path.read_text() == "new\n"
    assert os.listdir(tmp_path) == ["out.csv"]


def test_write_failure_names_path(tmp_path):
    bad = tmp_path / "missing" / "out.json"
    with pytest.raises(rp.ReportError, match="cannot write .*missing"):
        rp.write_atomic(bad, "x")


def test_parse_int_list():
    assert cf.parse_int_list("1-4, 8") == (1, 2, 3, 4, 8)
    assert cf.parse_int_list([2, 10]) == (2, 10)
    with pytest.raises(cf.ConfigError):
        cf.parse_int_list("")


def test_parse_list_keeps_quoted_commas():
    assert cf.parse_list('"max(x, z)", "z/3"') == ["max(x, z)", "z/3"]


INI = """
[system]
name = doubling-digit
z0 = 0.5

[observable]
v = "z^2"   ; inline comment

[params]
tol = 1e-5
n_list = 1-3, 6
seed = 7

[output]
format = json
"""


def test_load_config():
    cfg = cf.load_config(text=INI).validate()
    assert (cfg.system, cfg.z0, cfg.observable, cfg.tol) == ("doubling-digit", 0.5, "z^2", 1e-5)
    assert cfg.n_list == (1, 2, 3, 6) and cfg.seed == 7 and cfg.format == "json"
    assert cfg.build_system(spot_checks=100).fiber.base_point == 0.5


def test_unknown_key_and_bad_value():
    with pytest.raises(cf.ConfigError, match=r"unknown config key \[params\] colour"):
        cf.load_config(text="[params]\ncolour = red\n")
    with pytest.raises(cf.ConfigError, match="bad value"):
        cf.load_config(text="[params]\ntol = tiny\n")


@pytest.mark.parametrize("bad", [dict(tol=0.0), dict(alpha=1.5), dict(system="nope"), dict(grid=0),
                                 dict(metric="symbolic", theta=1.0)])
def test_validation(bad):
    with pytest.raises(cf.ConfigError):
        cf.merge(cf.RunConfig(), **bad).validate()


def test_merge_ignores_none():
    cfg = cf.merge(cf.RunConfig(tol=1e-3), tol=None, seed=4)
    assert cfg.tol == 1e-3 and cfg.seed == 4


CUSTOM = """
[system]
name = custom

[custom]
endpoints = 0, 0.5, 1
forward = "2*x", "2*x - 1"
inverse = "x/2", "(x + 1)/2"
fiber = "(z + cos(2*pi*x))/3"
contraction_rate = 1.0986122886681098
expansion_rate = 0.6931471805599453
density = "1"
"""


def test_custom_system_matches_catalog():
    from fiberdis.base_dynamics import invariant_density
    from fiberdis.catalog import get_system
    from fiberdis.disintegration import apply_Mn

    skew = cf.load_config(text=CUSTOM).validate().build_system(spot_checks=1000)
    ref = get_system("doubling-cos")
    a = apply_Mn(skew, invariant_density(skew.base), "z^2", 6).values
    b = apply_Mn(ref, invariant_density(ref.base), "z^2", 6).values
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_custom_system_invariance_refused():
    text = CUSTOM.replace('fiber = "(z + cos(2*pi*x))/3"', 'fiber = "2*z"')
    with pytest.raises(cf.ConfigError, match="leaves N"):
        cf.load_config(text=text).build_system(spot_checks=1000)


def test_custom_system_missing_key():
    text = CUSTOM.replace("contraction_rate = 1.0986122886681098\n", "")
    with pytest.raises(cf.ConfigError, match="missing key 'contraction_rate'"):
        cf.load_config(text=text).build_system()
