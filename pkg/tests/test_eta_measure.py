import math

import numpy as np
import pytest

from fiberdis import eta_measure as em


def test_sandwich_digit_depth_zero_and_one(digit, phi_doubling):
    s0 = em.sandwich_bounds(digit, phi_doubling, "z", 0)
    assert s0.lower == pytest.approx(-1, abs=1e-12) and s0.upper == pytest.approx(1, abs=1e-12)
    s1 = em.sandwich_bounds(digit, phi_doubling, "z", 1)
    assert s1.lower == pytest.approx(-1 / 3, abs=1e-12)
    assert s1.upper == pytest.approx(1 / 3, abs=1e-12)


def test_sandwich_cos_width(cos, phi_doubling):
    s = em.sandwich_bounds(cos, phi_doubling, "z", 6)
    assert s.lower <= s.upper
    assert s.width <= 2 * 3.0**-6 + s.quad_err


def test_sandwich_monotone_and_nested(digit, phi_doubling):
    ests = [em.sandwich_bounds(digit, phi_doubling, "z^2", n, quad_res=2048) for n in range(6)]
    for a, b in zip(ests, ests[1:]):
        assert b.upper <= a.upper + a.quad_err + b.quad_err
        assert b.lower >= a.lower - a.quad_err - b.quad_err


def test_eta_cos_is_zero(cos, phi_doubling):
    res = em.eta_value(cos, phi_doubling, "z", 1e-4)
    lo, hi = res.bracket
    assert lo - res.error <= 0.0 <= hi + res.error
    assert abs(res.value) < 1e-4


def test_eta_digit_second_moment(digit, phi_doubling):
    # oracle: z = sum_k 3^-k sigma_k with iid signs, so E z^2 = sum_k 9^-k
    oracle = math.fsum(9.0**-k for k in range(1, 60))
    res = em.eta_value(digit, phi_doubling, "z^2", 1e-5)
    lo, hi = res.bracket
    assert lo - res.error <= oracle <= hi + res.error


def test_eta_of_base_observable_is_nu(gauss, phi_gauss):
    s = em.sandwich_bounds(gauss, phi_gauss, "x", 1)
    assert s.lower == s.upper
    assert s.upper == pytest.approx(1 / math.log(2) - 1, abs=s.quad_err + s.trunc_err + 1e-12)


def test_linearity_within_brackets(digit, phi_doubling):
    a = em.eta_value(digit, phi_doubling, "z^2", 1e-4)
    b = em.eta_value(digit, phi_doubling, "z*x", 1e-4)
    c = em.eta_value(digit, phi_doubling, "2*z^2 - 3*z*x", 1e-4)
    allow = sum(r.bracket[1] - r.bracket[0] + r.error for r in (a, b)) * 3 + c.bracket[1] - c.bracket[0] + c.error
    assert abs(c.value - 2 * a.value + 3 * b.value) <= allow


def test_invariance(digit, phi_doubling):
    res, allow = em.invariance_residual(digit, phi_doubling, "z^2", 1e-4)
    assert res <= allow
    res, _ = em.invariance_residual(digit, phi_doubling, "1", 1e-4)
    assert res == 0.0


def test_sandwich_not_converged_carries_trace(cos, phi_doubling):
    with pytest.raises(em.SandwichNotConverged, match="sandwich not converged") as info:
        em.eta_value(cos, phi_doubling, "z", 1e-12, n_cap=2)
    assert len(info.value.trace) == 3


def test_birkhoff_cos(cos):
    dev = em.birkhoff_fiber_independence(cos, "z", 0.3141, [(-1, 1), (-1, 0), (0.5, 1)], 1000)
    bound = em.birkhoff_bound(cos, "z", 1000, 2.0)
    assert dev <= bound * (1 + 1e-12)
    assert bound <= 3e-3


def test_birkhoff_pure_and_digit(pure, digit):
    assert em.birkhoff_fiber_independence(pure, "sin(2*pi*x)", 0.3, [(-1, 1)], 100) == 0.0
    dev = em.birkhoff_fiber_independence(digit, "z^2", 0.3, [(-1, 1), (0, 1)], 10_000)
    assert dev <= em.birkhoff_bound(digit, "z^2", 10_000, 2.0) * (1 + 1e-12)
    assert dev < 1e-3


def test_observable_rejects_u(cos):
    with pytest.raises(em.ObservableError, match="only use x and z"):
        em.observable("u*z", cos)


def test_observable_constants(cos):
    v = em.observable("z*cos(2*pi*x)", cos)
    assert v.sup_norm == pytest.approx(1.0)
    assert v.lip_z == pytest.approx(1.0)
    assert v.lip_x == pytest.approx(2 * math.pi, rel=1e-3)
    assert v.smooth and not v.z_free


def test_compose_with_skew(cos):
    v = em.compose_with_skew(em.observable("z", cos), cos)
    x = np.array([0.3, 0.7])
    np.testing.assert_allclose(v(x, 0.5), (0.5 + np.cos(2 * math.pi * x)) / 3, atol=1e-15)
