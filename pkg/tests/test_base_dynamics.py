import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from fiberdis import base_dynamics as bd
from fiberdis.parallel import neumaier_sum, pairwise_sum, threads


def test_doubling_words_depth_two():
    words = bd.branch_words(bd.DoublingMap(), 2)
    assert [list(w.word) for w in words] == [[0, 0], [0, 1], [1, 0], [1, 1]]


def test_doubling_words_depth_twenty():
    assert len(bd.branch_words(bd.DoublingMap(), 20)) == 2**20


def test_enumeration_budget_names_cap():
    with pytest.raises(bd.EnumerationBudgetError, match="enumeration budget exceeded.*1000"):
        bd.branch_words(bd.DoublingMap(), 10, cap=1000)


def test_budget_from_environment(monkeypatch):
    monkeypatch.setenv("FIBERDIS_BUDGET", "64")
    with pytest.raises(bd.EnumerationBudgetError):
        bd.branch_words(bd.DoublingMap(), 7)


def test_gauss_depth_one_truncation():
    words = bd.branch_words(bd.GaussMap(), 1, tail_tol=2e-2)
    letters = [w.word[0] for w in words]
    assert letters == list(range(1, 51))
    assert words.tail_bound <= 1 / 50
    # oracle: the omitted mass sum_{k>50} sup|h_k'| = sum 1/k^2 really is below the bound
    omitted = math.fsum(1.0 / k**2 for k in range(51, 2_000_000)) + 1 / 2_000_000
    assert omitted <= words.tail_bound


def test_truncation_bound_covers_deeper_words():
    g = bd.GaussMap()
    for n in (1, 2):
        k = bd.choose_truncation(g, n, 1e-2)
        assert bd.truncation_bound(g, k, n) < 1e-2


def test_inverse_eval_doubling():
    d = bd.DoublingMap()
    assert tuple(bd.inverse_eval(d, [0], 0.5)) == (0.25, 0.5, 0.5, 0.0)
    v = bd.inverse_eval(d, [0, 1], 0.0, boundary_margin=0.0)
    assert tuple(v) == (0.25, 0.25, 0.25, 0.0)


def test_inverse_eval_boundary_point():
    with pytest.raises(bd.BoundaryPointError, match="boundary"):
        bd.inverse_eval(bd.DoublingMap(), [0], 0.0)
    with pytest.raises(bd.BoundaryPointError):
        bd.inverse_eval(bd.DoublingMap(), [0], 1.5, boundary_margin=0.0)


@pytest.mark.parametrize("k,x", [(1, 0.3), (4, 0.8), (17, 0.05)])
def test_inverse_eval_gauss(k, x):
    hx, dh, jac, djac = bd.inverse_eval(bd.GaussMap(), [k], x)
    assert hx == pytest.approx(1 / (k + x), rel=1e-15)
    assert dh == pytest.approx(-1 / (k + x) ** 2, rel=1e-15)
    assert jac == pytest.approx(1 / (k + x) ** 2, rel=1e-15)
    assert djac == pytest.approx(-2 / (k + x) ** 3, rel=1e-14)


def test_djac_refused_on_rough_map():
    consts = bd.MapConstants(math.log(2), 1.0, 0.0, 1.0)
    m = bd.ExpressionMap("rough", [0, 0.5, 1], ["2*x", "2*x - 1"], ["sqrt(x^2)/2", "(x + 1)/2"], consts)
    with pytest.raises(bd.InsufficientSmoothnessError, match="insufficient smoothness"):
        bd.inverse_eval(m, [0], 0.4)
    hx, dh, jac, _ = bd.inverse_eval(m, [0], 0.4, with_djac=False)
    assert hx == pytest.approx(0.2)


def test_expression_map_matches_doubling():
    consts = bd.MapConstants(math.log(2), 1.0, 0.0, 1.0, 0.0)
    m = bd.ExpressionMap("dbl", [0, 0.5, 1], ["2*x", "2*x - 1"], ["x/2", "(x + 1)/2"], consts)
    x = bd.uniform_grid(16)
    for word in ([0, 1, 1], [1, 0, 1]):
        a = bd.inverse_eval(m, word, x)
        b = bd.inverse_eval(bd.DoublingMap(), word, x)
        for p, q in zip(a, b):
            np.testing.assert_allclose(p, q, atol=1e-15)


def test_word_tree_matches_single_words():
    g = bd.GaussMap()
    x = np.array([0.2, 0.7])
    tree = bd.word_tree(g, 2, x, truncation=6, second=True, max_elements=16)
    got = []
    assert tree.n_chunks > 1
    for ch in (tree.chunk(i) for i in range(tree.n_chunks)):
        for i, w in enumerate(ch.words()):
            got.append((tuple(w), ch.point(0)[i], ch.deriv(0)[i], ch.djac[i]))
    assert len(got) == 36
    for w, hx, dh, dj in got:
        ref = bd.inverse_eval(g, list(w), x)
        np.testing.assert_allclose(hx, ref.hx, rtol=1e-14)
        np.testing.assert_allclose(dh, ref.dh, rtol=1e-14)
        np.testing.assert_allclose(dj, ref.djac, rtol=1e-12)


def test_doubling_density_analytic():
    phi = bd.invariant_density(bd.DoublingMap())
    assert phi.floor == 1.0
    assert np.all(phi(bd.uniform_grid(10)) == 1.0)


def test_gauss_density_analytic():
    phi = bd.invariant_density(bd.GaussMap())
    assert float(phi(np.array([0.0]))[0]) == pytest.approx(1 / math.log(2), rel=1e-12)
    assert phi.residual < 1e-10
    assert phi.normalization_error < 1e-12


def test_gauss_fixed_point_independent_oracle():
    """Direct fixed-point check with many explicit letters and no tail model."""
    x = np.linspace(0.05, 0.95, 7)
    k = np.arange(1, 200_001)[:, None]
    phi = lambda y: 1 / ((1 + y) * math.log(2))
    lhs = (phi(1 / (k + x)) / (k + x) ** 2).sum(axis=0)
    tail = 1 / (math.log(2) * 200_000.5)  # integral of the terms past K, to leading order
    np.testing.assert_allclose(lhs + tail, phi(x), atol=1e-9)


def test_doubling_density_iteration():
    phi = bd.invariant_density(bd.DoublingMap(), "operator-iteration", resolution=1024, tol=1e-10)
    assert np.max(np.abs(phi.values - 1)) < 1e-12
    assert phi.derivative_kind == "finite-difference"


def test_density_not_converged_carries_residual():
    with pytest.raises(bd.DensityNotConverged) as info:
        bd.invariant_density(bd.GaussMap(), "operator-iteration", resolution=64, tol=1e-30, max_iter=3)
    assert info.value.residual > 0


def test_expansion_report_doubling():
    rep = bd.expansion_report(bd.DoublingMap(), 12)
    assert rep["verdict"] == "PASS"
    for r in rep["rows"]:
        assert r["max_abs_Dh"] == 2.0 ** -r["n"]
        assert r["sup_sum_abs_DJ"] == 0.0
        assert r["distortion"] == 0.0


def test_expansion_report_gauss():
    rep = bd.expansion_report(bd.GaussMap(), 3)
    assert rep["verdict"] == "PASS"
    assert rep["fitted"]["lambda"] > 0


def test_expansion_report_names_violation():
    d = bd.DoublingMap()
    d.constants = replace(d.constants, expansion_rate=1.0)
    rep = bd.expansion_report(d, 3)
    assert rep["verdict"] == "FAIL"
    assert any("C_lambda*exp(-lambda*n)" in v for v in rep["violations"])


def test_exact_forward_branch():
    d = bd.DoublingMap()
    x = Fraction(3, 10)
    assert d.forward_branch(d.letter_of(x), x) == Fraction(3, 5)


def test_symbolic_metric():
    m = bd.BaseMetric("symbolic", 0.5)
    d = bd.DoublingMap()
    # 0.1 and 0.3 share the first branch, then 0.2 and 0.6 split
    assert float(m.distance(d, 0.1, 0.3)) == 0.25 ** 0.5
    assert float(m.distance(d, 0.1, 0.9)) == 1.0


def test_fit_decay_recovers_rate():
    ns = np.arange(1, 10)
    fit = bd.fit_decay(ns, 3.0 * np.exp(-0.7 * ns))
    assert fit["lambda"] == pytest.approx(0.7, rel=1e-12)
    assert fit["C"] == pytest.approx(3.0, rel=1e-12)


def test_reductions_are_thread_independent():
    rng = np.random.default_rng(0)
    parts = [rng.standard_normal(1000) * 10.0**k for k in range(-8, 8)]
    with threads(1):
        a = neumaier_sum([pairwise_sum(p) for p in parts])
    with threads(8):
        b = neumaier_sum([pairwise_sum(p) for p in parts])
    assert a == b
    x = bd.uniform_grid(33)
    tree_sum = lambda: bd.sum_over_words(bd.word_tree(bd.DoublingMap(), 12, x), lambda c: c.point(0) ** 2)
    with threads(1):
        s1 = tree_sum()
    with threads(8):
        s8 = tree_sum()
    assert np.array_equal(s1, s8)
