"""The invariant measure ``eta`` as the common limit of monotone sandwich bounds.

For an observable ``v`` on ``Delta x N`` put ``v_n(x) = v(F^n x, G_n(x, z))``
and let ``v_n^+`` (``v_n^-``) be the integral against ``nu`` of its supremum
(infimum) over ``z``.  The upper sequence decreases, the lower increases, and
both converge to ``eta(v)``.

The integrals are computed after the change of variables ``x = h y`` on each
cylinder,

    v_n^+ = int_0^1 sum_{h in H_n} phi(h y) J_h(y) sup_z v(y, G_n(h y, z)) dy,

which never evaluates the (discontinuous) forward map.  The supremum over
``z`` uses the values on a uniform z-grid and the Lipschitz bound
``L = Lip_z(v) C exp(-lambda_s n)`` of ``z -> v(y, G_n(hy, z))``: on a cell of
width ``delta`` with end values ``f_i, f_{i+1}`` the function cannot exceed
``(f_i + f_{i+1} + L delta)/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from . import expression as ex
from .base_dynamics import InvariantDensity, alphabet, sum_over_words, uniform_grid, word_tree
from .parallel import pairwise_sum
from .skew_product import SkewProduct, base_orbit, iterate_chunk
from .transfer import PANEL, composite_nodes

EPS = np.finfo(float).eps


class ObservableError(ValueError):
    pass


class SandwichNotConverged(RuntimeError):
    def __init__(self, trace, bracket):
        self.trace = trace
        self.bracket = bracket
        super().__init__(
            f"sandwich not converged by n = {trace[-1].n}: bracket [{bracket[0]:.6g}, {bracket[1]:.6g}]"
        )


@dataclass(frozen=True)
class FiberObservable:
    """An observable ``v(x, z)`` with the data the estimators rely on.

    ``lip_z`` must bound ``|v(x, z) - v(x, z')| / |z - z'|``; when it is
    sampled rather than declared, ``lip_z_source`` says so.
    """

    func: Callable
    text: str = "<callable>"
    expr: Optional[object] = None
    sup_norm: float = 1.0
    lip_z: float = 1.0
    lip_x: float = 0.0
    lip_z_source: str = "declared"
    gradient: Optional[Callable] = None
    z_free: bool = False
    z_interval: tuple = (-1.0, 1.0)

    def __call__(self, x, z):
        return self.func(x, z)

    @property
    def smooth(self):
        return self.gradient is not None

    def holder_norm(self, alpha=1.0):
        """``|v|_inf + |v|_alpha`` with the seminorm for the max-metric on base times fiber (sampled)."""
        if alpha == 1.0:
            return self.sup_norm + max(self.lip_x, self.lip_z)
        return self.sup_norm + self._sampled_seminorm(alpha)

    def _sampled_seminorm(self, alpha, count=4000, seed=7):
        rng = np.random.default_rng(seed)
        x = rng.uniform(1e-6, 1 - 1e-6, (2, count))
        z = rng.uniform(*self.z_interval, (2, count))
        for k in range(1, 12):
            x[1, k * 300 : (k + 1) * 300] = np.clip(x[0, k * 300 : (k + 1) * 300] + 2.0**-k * 1e-1, 0, 1 - 1e-9)
        d = np.maximum(np.abs(x[0] - x[1]), np.abs(z[0] - z[1]))
        keep = d > 0
        dv = np.abs(self(x[0], z[0]) - self(x[1], z[1]))
        return float(np.max(dv[keep] / d[keep] ** alpha))


def _vec(e):
    def f(x, z):
        x, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(z, float))
        return np.broadcast_to(ex.eval_expr(e, x=x, z=z), x.shape)

    return f


def _grad(e):
    def g(x, z):
        x, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(z, float))
        gx, gz, _ = ex.grad_expr(e, x=x, z=z)
        return np.broadcast_to(gx, x.shape), np.broadcast_to(gz, x.shape)

    return g


def observable(spec, skew: SkewProduct, lip_z=None, samples=(257, 65), validate=True) -> FiberObservable:
    """Build a :class:`FiberObservable` from expression text (in ``x`` and ``z``).

    Sup-norm and Lipschitz constants are sampled on a grid of the base times
    the fiber unless given; for gradients are checked against central
    differences at 100 random points.
    """
    if isinstance(spec, FiberObservable):
        return spec
    text = spec if isinstance(spec, str) else ex.to_text(spec)
    e = ex.parse_expr(spec) if isinstance(spec, str) else spec
    extra = ex.free_variables(e) - {"x", "z"}
    if extra:
        raise ObservableError(f"fiber observable may only use x and z, got {sorted(extra)}")
    f = _vec(e)
    lo, hi = skew.fiber.z_min, skew.fiber.z_max
    xs = uniform_grid(samples[0])
    xs = np.concatenate([[1e-9], xs, [1 - 1e-9]])
    zs = np.linspace(lo, hi, samples[1])
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    vals = f(X, Z)
    smooth = ex.is_smooth(e)
    grad = _grad(e) if smooth else None
    sup = _refine_sup(f, vals, X, Z, (lo, hi))
    if smooth:
        gx, gz = grad(X, Z)
        sampled_lz = float(np.max(np.abs(gz)))
        lx = float(np.max(np.abs(gx)))
    else:
        sampled_lz = float(np.max(np.abs(np.diff(vals, axis=1)) / np.diff(zs)))
        lx = float(np.max(np.abs(np.diff(vals, axis=0)) / np.diff(xs)[:, None]))
    obs = FiberObservable(
        func=f,
        text=text,
        expr=e,
        sup_norm=sup,
        lip_z=sampled_lz if lip_z is None else float(lip_z),
        lip_x=lx,
        lip_z_source="sampled" if lip_z is None else "declared",
        gradient=grad,
        z_free="z" not in ex.free_variables(e),
        z_interval=(lo, hi),
    )
    if validate and smooth:
        _validate_gradient(obs, lo, hi)
    return obs


def _refine_sup(f, vals, X, Z, z_interval):
    """Grid maximum of ``|v|`` polished by a bounded local search from the grid argmax.

    A grid maximum alone sits below the true supremum; the local search
    closes most of that gap for smooth observables and never lowers it.
    """
    a = np.abs(vals)
    best = float(np.max(a))
    i, j = np.unravel_index(int(np.argmax(a)), a.shape)
    sign = 1.0 if vals[i, j] >= 0 else -1.0

    def neg(p):
        return -sign * float(f(np.array(p[0]), np.array(p[1])))

    try:
        res = optimize.minimize(neg, [X[i, j], Z[i, j]], method="L-BFGS-B",
                                bounds=[(0.0, 1.0), z_interval], options={"ftol": 1e-15, "gtol": 1e-12})
    except (ArithmeticError, ValueError, ex.ExprError):
        return best
    if res.success and np.isfinite(res.fun):
        best = max(best, -float(res.fun))
    return best


def _validate_gradient(obs, lo, hi, count=100, seed=11, h=1e-6):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.01, 0.99, count)
    z = rng.uniform(lo + 0.01 * (hi - lo), hi - 0.01 * (hi - lo), count)
    gx, gz = obs.gradient(x, z)
    fx = (obs(x + h, z) - obs(x - h, z)) / (2 * h)
    fz = (obs(x, z + h) - obs(x, z - h)) / (2 * h)
    scale = max(1.0, float(np.max(np.abs(obs(x, z)))))
    for a, b in ((gx, fx), (gz, fz)):
        if np.any(np.abs(a - b) > 1e-6 * np.maximum(np.abs(a), scale)):
            raise ObservableError("gradient disagrees with finite differences")


def compose_with_skew(v: FiberObservable, skew: SkewProduct) -> FiberObservable:
    """``v o F^``, i.e. ``(x, z) -> v(F x, G(x, z))``."""
    base, fib = skew.base, skew.fiber

    def f(x, z):
        x, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(z, float))
        fx, letter = base.forward(x)
        g = fib.value(x, z, skew.letter_index(letter) if fib.piecewise else 0)
        return v(fx, g)

    return FiberObservable(
        func=f,
        text=f"({v.text}) o F^",
        sup_norm=v.sup_norm,
        lip_z=v.lip_z * fib.contraction_bound(1),
        lip_x=math.inf,
        lip_z_source=v.lip_z_source,
        z_free=v.z_free,
        z_interval=v.z_interval,
    )


# ---------------------------------------------------------------------------
# sandwich bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SandwichEstimate:
    n: int
    lower: float
    upper: float
    quad_err: float
    trunc_err: float
    excluded_nodes: int = 0
    nodes: int = 0

    @property
    def width(self):
        return self.upper - self.lower

    def row(self):
        return {
            "n": self.n,
            "lower": self.lower,
            "upper": self.upper,
            "width": self.width,
            "quad_err": self.quad_err,
            "trunc_err": self.trunc_err,
        }


def fiber_extrema(values, lip, delta):
    """Lipschitz upper/lower envelope over the last axis (z-grid with spacing ``delta``)."""
    if values.shape[-1] == 1:
        return values[..., 0], values[..., 0]
    s = values[..., 1:] + values[..., :-1]
    slack = lip * delta
    up = np.maximum(np.max(s + slack, axis=-1) * 0.5, np.max(values, axis=-1))
    lo = np.minimum(np.min(s - slack, axis=-1) * 0.5, np.min(values, axis=-1))
    return up, lo


def _sandwich_integral(skew, density, v, n, zgrid, panels, tail_tol, truncation):
    y, w = composite_nodes(0.0, 1.0, panels)
    Z = zgrid.size
    delta = float(zgrid[1] - zgrid[0]) if Z > 1 else 0.0
    if n == 0:
        vals = v(y[:, None], zgrid[None, :])
        up, lo = fiber_extrema(vals, v.lip_z, delta)
        phi = density(y)
        return float(pairwise_sum(w * phi * up)), float(pairwise_sum(w * phi * lo)), 0.0
    lip = v.lip_z * skew.fiber.contraction_bound(n)
    yy = np.repeat(y, Z)
    zz = np.tile(zgrid, y.size)
    tree = word_tree(skew.base, n, yy, tail_tol=tail_tol, truncation=truncation)

    def per_chunk(ch):
        zn, _, _ = iterate_chunk(skew, ch, zz)
        vals = v(np.broadcast_to(yy, zn.shape), zn).reshape(ch.size, y.size, Z)
        up, lo = fiber_extrema(vals, lip, delta)
        wt = (np.abs(ch.deriv(0)) * density(ch.point(0)))[:, ::Z]
        return np.stack([wt * up, wt * lo], axis=1)

    s = sum_over_words(tree, per_chunk)
    return float(pairwise_sum(w * s[0])), float(pairwise_sum(w * s[1])), tree.tail_bound


def sandwich_bounds(skew: SkewProduct, density: InvariantDensity, v, n: int, z_grid: int = 33,
                    quad_res: int = 8192, tail_tol: float = 1e-3, truncation=None) -> SandwichEstimate:
    """Upper and lower sandwich integrals ``v_n^+`` and ``v_n^-``.

    The y-quadrature uses ``ceil(quad_res / |H_n|)`` Gauss-Legendre nodes
    (at least one 16-point panel) and is repeated with twice as many; the
    difference plus a round-off allowance is ``quad_err``.  For countable
    maps the omitted words contribute at most
    ``|v|_inf sup(phi) * tail`` (``trunc_err``).
    """
    if n < 0:
        raise ValueError("depth must be non-negative")
    v = observable(v, skew)
    zgrid = np.linspace(skew.fiber.z_min, skew.fiber.z_max, z_grid)
    if v.z_free:
        zgrid = zgrid[:1]
    if n == 0:
        words = 1
    else:
        letters, _ = alphabet(skew.base, n, tail_tol, truncation)
        words = len(letters) ** n
    panels = max(1, math.ceil(quad_res / words / PANEL))
    u1, l1, tail = _sandwich_integral(skew, density, v, n, zgrid, panels, tail_tol, truncation)
    u2, l2, _ = _sandwich_integral(skew, density, v, n, zgrid, 2 * panels, tail_tol, truncation)
    roundoff = 64 * EPS * v.sup_norm * max(1.0, density.sup)
    quad_err = max(abs(u2 - u1), abs(l2 - l1)) + roundoff
    trunc = v.sup_norm * density.sup * tail
    return SandwichEstimate(n, l2, u2, quad_err, trunc, 0, y_nodes(panels) * 2)


def y_nodes(panels):
    return panels * PANEL


@dataclass(frozen=True)
class EtaResult:
    value: float
    bracket: tuple
    trace: list = field(default_factory=list)
    error: float = 0.0

    def __iter__(self):
        return iter((self.value, self.bracket, self.trace))


def eta_value(skew: SkewProduct, density: InvariantDensity, v, tol: float = 1e-4, n_cap: int = 25,
              z_grid: int = 33, quad_res: int = 8192, tail_tol: float = 1e-3, n_start: int = 0) -> EtaResult:
    """``eta(v)`` by raising ``n`` until the nested bracket plus error terms is below ``tol``.

    Brackets are intersected across depths (each is a valid enclosure up
    to its quadrature and truncation terms); the midpoint is returned.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    v = observable(v, skew)
    trace = []
    lo, hi = -math.inf, math.inf
    err = 0.0
    for n in range(n_start, n_cap + 1):
        est = sandwich_bounds(skew, density, v, n, z_grid, quad_res, tail_tol)
        trace.append(est)
        lo = max(lo, est.lower)
        hi = min(hi, est.upper)
        err = max(err, est.quad_err + est.trunc_err)
        if hi < lo:  # disjoint only through quadrature noise
            lo, hi = min(lo, hi), max(lo, hi)
        if (hi - lo) + est.quad_err + est.trunc_err < tol:
            return EtaResult(0.5 * (lo + hi), (lo, hi), trace, est.quad_err + est.trunc_err)
    raise SandwichNotConverged(trace, (lo, hi))


def invariance_residual(skew: SkewProduct, density: InvariantDensity, v, tol: float = 1e-4, **kw):
    """``|eta(v o F^) - eta(v)|`` together with the sum of both bracket widths and errors."""
    v = observable(v, skew)
    a = eta_value(skew, density, v, tol, **kw)
    b = eta_value(skew, density, compose_with_skew(v, skew), tol, **kw)
    allowance = (a.bracket[1] - a.bracket[0]) + (b.bracket[1] - b.bracket[0]) + a.error + b.error
    return abs(a.value - b.value), allowance


# ---------------------------------------------------------------------------
# Birkhoff averages
# ---------------------------------------------------------------------------


def birkhoff_fiber_independence(skew: SkewProduct, v, x: float, z_pairs, n: int, exact=None) -> float:
    """``max |S_n(x, z) - S_n(x, z')|`` over the pairs, ``S_n = (1/n) sum_{j<n} v o F^^j``.

    For the doubling map the base orbit defaults to exact rational
    arithmetic, since floating point collapses it to 0 after 53 steps.
    """
    v = observable(v, skew)
    pairs = np.asarray(z_pairs, float).reshape(-1, 2)
    if exact is None:
        exact = skew.base.name == "doubling"
    pts, letters, _ = base_orbit(skew.base, x, n, exact=exact)
    z = pairs.T.copy()
    acc = np.zeros_like(z)
    fib = skew.fiber
    for y, li in zip(pts, skew.letter_index(letters)):
        yf = float(y)
        acc += v(np.full(z.shape, yf), z)
        z = np.asarray(fib.value(yf, z, int(li)))
    s = acc / n
    return float(np.max(np.abs(s[0] - s[1])))


def birkhoff_bound(skew: SkewProduct, v, n: int, dz: float) -> float:
    """``Lip_z(v) C (1/n) sum_{j<n} exp(-lambda_s j) |z - z'|``."""
    v = observable(v, skew)
    fib = skew.fiber
    geo = sum(fib.contraction_bound(j) if j else 1.0 for j in range(n))
    return v.lip_z * geo * dz / n
