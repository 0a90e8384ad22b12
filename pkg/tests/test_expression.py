import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberdis import expression as ex


def test_power_node():
    e = ex.parse_expr("z^2")
    assert e == ex.Pow(ex.Var("z"), 2)


def test_product_with_call():
    e = ex.parse_expr("z*cos(2*pi*x)")
    assert isinstance(e, ex.BinOp) and e.op == "*"
    assert e.left == ex.Var("z")
    assert isinstance(e.right, ex.Call) and e.right.func == "cos"


def test_syntax_error_position():
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse_expr("1 + * 2")
    assert info.value.position == 5
    assert "syntax error at position 5" in str(info.value)
    assert info.value.expected


@pytest.mark.parametrize("text", ["foo(x)", "y + 1", "sin(x, z)", "min(x)", "x^0.5", "(x + 1"])
def test_rejected_inputs(text):
    with pytest.raises(ex.ExprError):
        ex.parse_expr(text)


def test_precedence_and_associativity():
    assert ex.eval_expr(ex.parse_expr("2^3^2")) == 512.0
    assert ex.eval_expr(ex.parse_expr("-2^2")) == -4.0
    assert ex.eval_expr(ex.parse_expr("8 - 3 - 2")) == 3.0
    assert ex.eval_expr(ex.parse_expr("8 / 4 / 2")) == 1.0
    assert ex.eval_expr(ex.parse_expr("1 + 2 * 3")) == 7.0


def test_eval_examples():
    assert ex.eval_expr(ex.parse_expr("1")) == 1.0
    assert abs(ex.eval_expr(ex.parse_expr("z*cos(2*pi*x)"), x=0.25, z=0.5)) < 1e-16
    assert ex.eval_expr(ex.parse_expr("(z+cos(2*pi*x))/3"), x=0.0, z=0.0) == pytest.approx(1 / 3, abs=1e-16)


def test_domain_and_binding_errors():
    with pytest.raises(ex.ExprDomainError, match="log"):
        ex.eval_expr(ex.parse_expr("log(x - 1)"), x=0.5)
    with pytest.raises(ex.UnboundVariableError):
        ex.eval_expr(ex.parse_expr("z + x"), x=0.5)


def test_gradient_examples():
    _, gz, _ = ex.grad_expr(ex.parse_expr("z^2"), z=0.3)
    assert gz == pytest.approx(0.6, rel=1e-15)
    gx, gz, gu = ex.grad_expr(ex.parse_expr("z*cos(2*pi*x)"), x=0.25, z=0.5)
    assert gx == pytest.approx(-math.pi, rel=1e-14)
    assert gu == 0.0


def test_abs_at_kink_is_non_differentiable():
    with pytest.raises(ex.NonDifferentiableError, match="non-differentiable"):
        ex.grad_expr(ex.parse_expr("abs(z)"), z=0.0)
    assert not ex.is_smooth(ex.parse_expr("abs(z)"))
    assert ex.is_smooth(ex.parse_expr("exp(z)*sin(x)"))


def test_second_derivative():
    val, d1, d2 = ex.second_derivative_x(ex.parse_expr("1/(3 + x)"), np.array([0.5]))
    assert val[0] == pytest.approx(1 / 3.5)
    assert d1[0] == pytest.approx(-1 / 3.5**2)
    assert d2[0] == pytest.approx(2 / 3.5**3)


def test_substitute():
    e = ex.substitute(ex.parse_expr("u*z + x*u"), "u", 0.5)
    assert ex.free_variables(e) == {"x", "z"}
    assert ex.eval_expr(e, x=2.0, z=4.0) == 3.0


# -- property tests -----------------------------------------------------------

_leaf = st.one_of(
    st.sampled_from(["x", "z", "u", "pi"]),
    st.integers(0, 9).map(str),
    st.floats(0.01, 5, allow_nan=False).map(lambda f: repr(round(f, 3))),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*", "/"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(children, st.integers(0, 4)).map(lambda t: f"({t[0]})^{t[1]}"),
        children.map(lambda c: f"-{c}"),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "log", "abs", "sqrt"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        st.tuples(st.sampled_from(["min", "max"]), children, children).map(lambda t: f"{t[0]}({t[1]}, {t[2]})"),
    )


expressions = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(expressions)
def test_round_trip(text):
    e = ex.parse_expr(text)
    assert ex.parse_expr(ex.to_text(e)) == e


@settings(max_examples=100, deadline=None)
@given(expressions, st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_evaluation_is_deterministic(text, x, z, u):
    e = ex.parse_expr(text)

    def run():
        try:
            return np.asarray(ex.evaluate(e, x=x, z=z, u=u))
        except ex.ExprDomainError as err:
            return str(err)

    a, b = run(), run()
    if isinstance(a, str):
        assert a == b
    else:
        assert np.array_equal(a, b, equal_nan=True)


def _smooth_expr(rng, depth):
    if depth == 0 or rng.random() < 0.2:
        return str(rng.choice(["x", "z", "u", repr(round(float(rng.uniform(-2, 2)), 3))]))
    k = rng.integers(0, 6)
    a, b = _smooth_expr(rng, depth - 1), _smooth_expr(rng, depth - 1)
    return [f"({a} + {b})", f"({a} * {b})", f"sin({a})", f"cos({a} - {b})", f"exp({a}/3)", f"({a})^{int(rng.integers(2, 4))}"][k]


def test_gradient_matches_richardson():
    """10^3 (expression, point) pairs against fourth-order Richardson differences."""
    rng = np.random.default_rng(3)
    h = 1e-3
    checked = 0
    for _ in range(100):
        e = ex.parse_expr(_smooth_expr(rng, 3))
        p = rng.uniform(-1, 1, (3, 10))
        grads = ex.grad_expr(e, *p)
        for i in range(3):
            def f(t):
                q = p.copy()
                q[i] += t
                return np.broadcast_to(np.asarray(ex.evaluate(e, *q), float), (10,))

            d1 = (f(h) - f(-h)) / (2 * h)
            d2 = (f(2 * h) - f(-2 * h)) / (4 * h)
            rich = (4 * d1 - d2) / 3
            g = np.broadcast_to(grads[i], rich.shape)
            scale = np.maximum(np.abs(g), 1e-2 * (1 + np.abs(f(0.0))))
            assert np.all(np.abs(g - rich) <= 1e-7 * scale)
        checked += 10
    assert checked == 1000
