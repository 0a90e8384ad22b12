"""Arithmetic expression language over the variables ``x``, ``z`` and ``u``.

Expressions are parsed into an immutable tree, evaluated on floats or numpy
arrays, and differentiated in forward mode with dual numbers.  Dual numbers
nest, so second derivatives come from evaluating on a dual of duals.

Grammar (EBNF)::

    expr   = term , { ("+" | "-") , term } ;
    term   = unary , { ("*" | "/") , unary } ;
    unary  = "-" , unary | power ;
    power  = atom , [ "^" , unary ] ;          (* right associative *)
    atom   = number | "pi" | var | func , "(" , args , ")" | "(" , expr , ")" ;
    var    = "x" | "z" | "u" ;
    func   = "sin" | "cos" | "exp" | "log" | "abs" | "sqrt" | "min" | "max" ;
    args   = expr , { "," , expr } ;

Exponents must be constant integers; use ``exp(a*log(b))`` for real powers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("x", "z", "u")
FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "abs": 1, "sqrt": 1, "min": 2, "max": 2}
NON_SMOOTH = frozenset({"abs", "sqrt", "min", "max"})


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message, position, expected=()):
        self.position = position
        self.expected = tuple(sorted(expected))
        detail = f"syntax error at position {position}: {message}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


class ExprDomainError(ExprError):
    def __init__(self, message, node):
        self.node = node
        super().__init__(f"{message} in '{to_text(node)}'")


class NonDifferentiableError(ExprError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"non-differentiable: '{to_text(node)}' at the evaluation point")


class UnboundVariableError(ExprError):
    pass


# ---------------------------------------------------------------------------
# dual numbers
# ---------------------------------------------------------------------------


class Dual:
    """``a + b*eps`` with ``eps**2 = 0``.  Components may themselves be duals."""

    __slots__ = ("a", "b")

    def __init__(self, a, b):
        self.a = a
        self.b = b

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a + o.a, self.b + o.b)
        return Dual(self.a + o, self.b)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a - o.a, self.b - o.b)
        return Dual(self.a - o, self.b)

    def __rsub__(self, o):
        return Dual(o - self.a, -self.b)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a * o.a, self.a * o.b + self.b * o.a)
        return Dual(self.a * o, self.b * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a / o.a, (self.b * o.a - self.a * o.b) / (o.a * o.a))
        return Dual(self.a / o, self.b / o)

    def __rtruediv__(self, o):
        return Dual(o / self.a, -o * self.b / (self.a * self.a))

    def ipow(self, n: int):
        if n == 0:
            return Dual(_ones_like(self.a), _zeros_like(self.b))
        return Dual(_ipow(self.a, n), n * _ipow(self.a, n - 1) * self.b)


def _base(v):
    while isinstance(v, Dual):
        v = v.a
    return v


def _ones_like(v):
    if isinstance(v, Dual):
        return Dual(_ones_like(v.a), _zeros_like(v.b))
    return np.ones_like(v) if isinstance(v, np.ndarray) else 1.0


def _zeros_like(v):
    if isinstance(v, Dual):
        return Dual(_zeros_like(v.a), _zeros_like(v.b))
    return np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0


def _ipow(v, n):
    if isinstance(v, Dual):
        return v.ipow(n)
    return np.power(v, n) if isinstance(v, np.ndarray) else float(v) ** n


def _sin(v):
    if isinstance(v, Dual):
        return Dual(_sin(v.a), _cos(v.a) * v.b)
    return np.sin(v)


def _cos(v):
    if isinstance(v, Dual):
        return Dual(_cos(v.a), -_sin(v.a) * v.b)
    return np.cos(v)


def _exp(v):
    if isinstance(v, Dual):
        e = _exp(v.a)
        return Dual(e, e * v.b)
    return np.exp(v)


def _log(v):
    if isinstance(v, Dual):
        return Dual(_log(v.a), v.b / v.a)
    return np.log(v)


def _sqrt(v):
    if isinstance(v, Dual):
        r = _sqrt(v.a)
        return Dual(r, v.b / (2.0 * r))
    return np.sqrt(v)


def _sign(v):
    return np.sign(_base(v))


def _abs(v):
    if isinstance(v, Dual):
        s = _sign(v.a)
        return Dual(_abs(v.a), s * v.b)
    return np.abs(v)


def _select(mask, p, q):
    if isinstance(p, Dual) or isinstance(q, Dual):
        p = p if isinstance(p, Dual) else Dual(p, _zeros_like(_base(p)))
        q = q if isinstance(q, Dual) else Dual(q, _zeros_like(_base(q)))
        return Dual(_select(mask, p.a, q.a), _select(mask, p.b, q.b))
    return np.where(mask, p, q)


# ---------------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Pi, Var, Neg, BinOp, Pow, Call]
NODE_TYPES = (Num, Pi, Var, Neg, BinOp, Pow, Call)


def free_variables(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, (Num, Pi)):
        return frozenset()
    if isinstance(e, Neg):
        return free_variables(e.arg)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Pow):
        return free_variables(e.base)
    return frozenset().union(*(free_variables(a) for a in e.args))


def is_smooth(e: Expr) -> bool:
    """False when the tree contains abs, sqrt, min or max anywhere."""
    if isinstance(e, (Num, Pi, Var)):
        return True
    if isinstance(e, Neg):
        return is_smooth(e.arg)
    if isinstance(e, BinOp):
        return is_smooth(e.left) and is_smooth(e.right)
    if isinstance(e, Pow):
        return is_smooth(e.base)
    return e.func not in NON_SMOOTH and all(is_smooth(a) for a in e.args)


def substitute(e: Expr, name: str, value: float) -> Expr:
    """Replace every occurrence of variable ``name`` by the literal ``value``."""
    if isinstance(e, Var):
        return Num(float(value)) if e.name == name else e
    if isinstance(e, (Num, Pi)):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, name, value))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, name, value), substitute(e.right, name, value))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, name, value), e.exponent)
    return Call(e.func, tuple(substitute(a, name, value) for a in e.args))


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_]\w*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    pos: int  # 1-based


def _tokenize(text: str) -> list:
    toks = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(text, i)
        if m is None or m.end() == i:
            raise ExprSyntaxError(f"unexpected character {text[i]!r}", i + 1)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), start + 1))
        i = m.end()
    toks.append(_Tok("end", "", len(text) + 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def fail(self, expected):
        t = self.tok
        what = "end of input" if t.kind == "end" else f"token {t.text!r}"
        raise ExprSyntaxError(f"unexpected {what}", t.pos, expected)

    def take(self, text):
        if self.tok.text == text and self.tok.kind == "op":
            self.i += 1
            return True
        return False

    def parse(self):
        e = self.expr()
        if self.tok.kind != "end":
            self.fail({"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self):
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        if self.take("-"):
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            pos = self.tok.pos
            self.i += 1
            expo = self.unary()
            if free_variables(expo):
                raise ExprSyntaxError("exponent must be a constant integer", pos)
            val = float(evaluate(expo))
            if not math.isfinite(val) or val != round(val):
                raise ExprSyntaxError("exponent must be a constant integer", pos)
            return Pow(base, int(round(val)))
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "id":
            self.i += 1
            if t.text == "pi":
                return Pi()
            if t.text in VARIABLES:
                return Var(t.text)
            if t.text in FUNCTIONS:
                if not self.take("("):
                    self.fail({"("})
                args = [self.expr()]
                while self.take(","):
                    args.append(self.expr())
                if not self.take(")"):
                    self.fail({",", ")"})
                if len(args) != FUNCTIONS[t.text]:
                    raise ExprSyntaxError(
                        f"arity mismatch: {t.text} takes {FUNCTIONS[t.text]} argument(s), got {len(args)}",
                        t.pos,
                    )
                return Call(t.text, tuple(args))
            raise ExprSyntaxError(f"unknown identifier {t.text!r}", t.pos)
        if self.take("("):
            e = self.expr()
            if not self.take(")"):
                self.fail({")"})
            return e
        self.fail({"number", "identifier", "(", "-"})


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises
    ------
    ExprSyntaxError
        With a 1-based ``position`` and the set of ``expected`` tokens.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e):
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def _num_text(v):
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_text(e: Expr) -> str:
    if isinstance(e, Num):
        return _num_text(e.value)
    if isinstance(e, Pi):
        return "pi"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        return "-" + (inner if _prec(e.arg) >= 3 else f"({inner})")
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_text(e.left)
        right = to_text(e.right)
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Pow):
        base = to_text(e.base)
        if _prec(e.base) < 5:
            base = f"({base})"
        expo = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        return f"{base}^{expo}"
    return f"{e.func}({', '.join(to_text(a) for a in e.args)})"


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _ev(e, env, tangent):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Pi):
        return math.pi
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariableError(f"unbound variable '{e.name}'") from None
    if isinstance(e, Neg):
        return -_ev(e.arg, env, tangent)
    if isinstance(e, BinOp):
        a = _ev(e.left, env, tangent)
        b = _ev(e.right, env, tangent)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if np.any(_base(b) == 0):
            raise ExprDomainError("division by zero", e)
        return a / b
    if isinstance(e, Pow):
        a = _ev(e.base, env, tangent)
        if e.exponent < 0 and np.any(_base(a) == 0):
            raise ExprDomainError("zero raised to a negative power", e)
        if isinstance(a, Dual):
            return a.ipow(e.exponent)
        return _ipow(a, e.exponent)
    args = [_ev(a, env, tangent) for a in e.args]
    f = e.func
    if f == "sin":
        return _sin(args[0])
    if f == "cos":
        return _cos(args[0])
    if f == "exp":
        return _exp(args[0])
    if f == "log":
        if np.any(_base(args[0]) <= 0):
            raise ExprDomainError("log of non-positive value", e)
        return _log(args[0])
    if f == "sqrt":
        base = _base(args[0])
        if np.any(base < 0):
            raise ExprDomainError("sqrt of negative value", e)
        if tangent and np.any(base == 0):
            raise NonDifferentiableError(e)
        return _sqrt(args[0])
    if f == "abs":
        if tangent and np.any(_base(args[0]) == 0):
            raise NonDifferentiableError(e)
        return _abs(args[0])
    a, b = args
    ba, bb = _base(a), _base(b)
    if tangent and np.any(ba == bb):
        raise NonDifferentiableError(e)
    mask = ba <= bb if f == "min" else ba >= bb
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return np.minimum(a, b) if f == "min" else np.maximum(a, b)
    return _select(mask, a, b)


def evaluate(e: Expr, x=None, z=None, u=None):
    """Evaluate ``e`` at the given bindings (floats or broadcastable arrays)."""
    env = {k: v for k, v in (("x", x), ("z", z), ("u", u)) if v is not None}
    with np.errstate(all="ignore"):
        out = _ev(e, env, tangent=False)
    if np.isscalar(out) or getattr(out, "ndim", 1) == 0:
        return float(out)
    return out


def eval_expr(e: Expr, x=None, z=None, u=None):
    """Evaluate and refuse non-finite results."""
    out = evaluate(e, x, z, u)
    if not np.all(np.isfinite(out)):
        raise ExprDomainError("non-finite result", e)
    return out


def eval_dual(e: Expr, env: dict):
    """Evaluate with arbitrary (possibly dual) bindings; used for nested derivatives."""
    with np.errstate(all="ignore"):
        return _ev(e, env, tangent=True)


def grad_expr(e: Expr, x=0.0, z=0.0, u=0.0):
    """Exact partial derivatives ``(d/dx, d/dz, d/du)`` by forward mode."""
    point = {"x": x, "z": z, "u": u}
    shape = np.broadcast(*[np.asarray(v) for v in point.values()]).shape
    fv = free_variables(e)
    out = []
    for name in VARIABLES:
        if name not in fv:
            out.append(np.zeros(shape) if shape else 0.0)
            continue
        env = {
            k: Dual(v, _ones_like(v) if k == name else _zeros_like(v)) for k, v in point.items()
        }
        r = eval_dual(e, env)
        d = r.b if isinstance(r, Dual) else _zeros_like(r)
        d = np.broadcast_to(d, shape).copy() if shape else float(d)
        out.append(d)
    return tuple(out)


def second_derivative_x(e: Expr, x):
    """Value, first and second derivative in ``x`` of a univariate expression."""
    one = _ones_like(x)
    zero = _zeros_like(x)
    arg = Dual(Dual(x, one), Dual(one, zero))
    r = eval_dual(e, {"x": arg})
    if not isinstance(r, Dual):
        c = np.broadcast_to(r, np.shape(x)).astype(float)
        return c, np.zeros_like(c), np.zeros_like(c)
    val = r.a.a if isinstance(r.a, Dual) else r.a
    d1 = r.a.b if isinstance(r.a, Dual) else r.b.a if isinstance(r.b, Dual) else r.b
    d2 = r.b.b if isinstance(r.b, Dual) else 0.0
    shape = np.shape(x)
    return tuple(np.broadcast_to(np.asarray(v, float), shape).copy() for v in (val, d1, d2))
