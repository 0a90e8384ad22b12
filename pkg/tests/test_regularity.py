import math

import numpy as np
import pytest

from fiberdis import regularity as rg
from fiberdis.base_dynamics import BaseMetric, InsufficientSmoothnessError, word_tree
from fiberdis.eta_measure import observable


def test_seminorm_examples():
    assert rg.holder_seminorm(3.0, 1.0, pair_samples=1000) == 0.0
    assert rg.holder_seminorm("x", 1.0, pair_samples=1000) == pytest.approx(1.0, abs=1e-12)
    assert rg.holder_seminorm("sqrt(x)", 0.5, pair_samples=1000) >= 1 - 1e-3


def test_seminorm_symbolic_needs_base():
    with pytest.raises(ValueError, match="base map"):
        rg.holder_seminorm("x", 1.0, metric=BaseMetric("symbolic", 0.5))


def test_seminorm_monotone_in_count():
    f = lambda x: np.sin(40 * x) * x**0.3
    vals = [rg.holder_seminorm(f, 0.7, pair_samples=c, seed=4) for c in (10, 100, 1000, 4000, 20000)]
    assert vals == sorted(vals)


def test_uniformly_bounded():
    assert rg.uniformly_bounded(range(4), [1, 1, 2, 1.5])
    assert not rg.uniformly_bounded(range(4), [1, 1, 2.5, 1])
    assert rg.uniformly_bounded(range(4), [0, 0, 0, 0])


def test_holder_suite_cos(cos, phi_doubling):
    rep = rg.holder_suite(cos, phi_doubling, "z", 1.0, range(1, 9), pair_samples=1000)
    assert rep.verdict == "PASS"
    for row in rep.tables:
        assert row["branch_lipschitz"] <= 2 * math.pi / 5 + 1e-6
    d = rep.to_dict()
    assert d["suite"] == "holder" and d["metadata"]["seed"] == 0


def test_holder_suite_digit_all_zero(digit, phi_doubling):
    rep = rg.holder_suite(digit, phi_doubling, "z", 1.0, range(1, 7), pair_samples=1000)
    for row in rep.tables:
        assert row["seminorm_Mn"] <= 1e-15 and row["sup_Mn"] <= 1e-15


def test_holder_suite_base_observable(cos, phi_doubling):
    rep = rg.holder_suite(cos, phi_doubling, "sin(2*pi*x)", 1.0, range(1, 5), pair_samples=2000)
    for row in rep.tables:
        assert row["ratio"] <= 1.0 + 1e-12


def test_holder_suite_refuses_infinite_norm(cos, phi_doubling):
    with pytest.raises(rg.NotHolderAdmissible, match="not Hölder-admissible"):
        rg.holder_suite(cos, phi_doubling, "z", 1.0, [1], norm=math.inf)


def test_DMn_examples(cos, pure, phi_doubling):
    assert abs(rg.analytic_DMn(cos, phi_doubling, "z", 1, 0.37)) < 1e-14
    assert rg.analytic_DMn(pure, phi_doubling, "z*sin(2*pi*x)", 5, 0.25, z0=0.0) == 0.0
    a = rg.analytic_DMn(cos, phi_doubling, "z*x", 3, 0.3)
    d1, _, _ = rg.fd_check(cos, phi_doubling, "z*x", 3, 0.3)
    # M_n(z x) is zero up to rounding here, so the relative check uses the suite's floor
    assert rg.relative_error(a, d1[0], 1e-6) <= 1e-5
    a = rg.analytic_DMn(cos, phi_doubling, "z*x + z^2", 3, 0.3)
    d1, _, _ = rg.fd_check(cos, phi_doubling, "z*x + z^2", 3, 0.3)
    assert abs(a) > 1e-3
    assert abs(a - d1[0]) <= 1e-5 * abs(a)


def test_DMn_gauss_against_fd(gauss, phi_gauss):
    x = np.array([0.21, 0.55, 0.83])
    trunc = rg.sample_truncation(gauss)
    # same truncated alphabet on both sides: compare directly to difference quotients of apply_Mn
    from fiberdis.disintegration import apply_Mn

    a = rg.analytic_DMn(gauss, phi_gauss, "z^2 + x*z", 1, x)
    h = 1e-5
    mp = apply_Mn(gauss, phi_gauss, "z^2 + x*z", 1, x + h, truncation=trunc).values
    mm = apply_Mn(gauss, phi_gauss, "z^2 + x*z", 1, x - h, truncation=trunc).values
    np.testing.assert_allclose(a, (mp - mm) / (2 * h), rtol=1e-5)


def test_DMn_refused_for_digit(digit, phi_doubling):
    with pytest.raises(InsufficientSmoothnessError, match="insufficient smoothness"):
        rg.analytic_DMn(digit, phi_doubling, "z", 2, 0.3)
    with pytest.raises(InsufficientSmoothnessError):
        rg.c1_suite(digit, phi_doubling, "z", [1, 2], 8)


def test_c1_suite_cos(cos, phi_doubling):
    rep = rg.c1_suite(cos, phi_doubling, "z", range(1, 7), sample_count=16)
    assert rep.verdict == "PASS"
    for row in rep.tables[:-1]:
        assert row["sum_abs_DJ"] == 0.0
        assert row["fd_rel_err"] <= 1e-5
    for r in rep.tables[-1]["du_decay"]:
        assert r["max_DuGm_Dh"] <= 2 * math.pi / 5 * 2.0 ** -(r["n"] - r["m"]) * (1 + 1e-6)


def test_dk_terms_sum_to_derivative_of_K(cos):
    """J1 + J2' + J2'' - J3 equals the x-derivative of K_{n,m}(l x)."""
    v = observable("z^2 + z*sin(2*pi*x)", cos)
    x = np.array([0.31, 0.64])
    h = 1e-6
    n, m = 3, 2
    t0 = word_tree(cos.base, n + m, x)
    tp = word_tree(cos.base, n + m, x + h)
    tm = word_tree(cos.base, n + m, x - h)
    for i in range(t0.n_chunks):
        j1, j2a, j2b, j3, _ = rg.dk_terms(cos, v, t0.chunk(i), m, n, 0.0)
        dk = j1 + j2a + j2b - j3
        kp = rg.k_value(cos, v, tp.chunk(i), m, n, 0.0)
        km = rg.k_value(cos, v, tm.chunk(i), m, n, 0.0)
        np.testing.assert_allclose(dk, (kp - km) / (2 * h), atol=1e-8)


def test_dk_suite_cos(cos, phi_doubling):
    rep = rg.dK_decay_suite(cos, phi_doubling, "z", sample_count=8)
    assert rep.verdict == "PASS"
    assert set(rep.items.values()) == {"PASS"}
    rows = {(r["n"], r["m"]): r for r in rep.tables}
    for m in (1, 5):
        assert rows[10, m]["max_DK"] < 0.05 * rows[2, m]["max_DK"]


def test_dk_base_observable_vanishes(cos, phi_doubling):
    rep = rg.dK_decay_suite(cos, phi_doubling, "sin(2*pi*x)", sample_count=4)
    for row in rep.tables:
        assert row["max_DK"] == 0.0 and row["J3"] == 0.0


def test_dk_pure_has_no_J3(pure, phi_doubling):
    rep = rg.dK_decay_suite(pure, phi_doubling, "z*cos(2*pi*x)", n_list=(2, 6), sample_count=4)
    for row in rep.tables:
        assert row["J3"] == 0.0
