"""Koopman operator ``U w = w o F`` and the transfer operator ``L`` dual to it in ``L^2(nu)``.

``L`` is evaluated by direct inverse-branch summation at the query points,

    (L^n w)(x) = phi(x)^-1 sum_{h in H_n} J_h(x) phi(h x) w(h x),

with no matrix discretisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import expression as ex
from .base_dynamics import (
    BoundaryPointError,
    ExpandingMap,
    InvariantDensity,
    alphabet,
    sum_over_words,
    uniform_grid,
    word_tree,
)
from .parallel import pairwise_sum


@dataclass(frozen=True)
class GridFunction:
    """Samples of a function on a boundary-avoiding grid, optionally backed by a callable."""

    grid: np.ndarray
    values: np.ndarray
    func: Optional[Callable] = None
    error: float = 0.0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.grid, float)
        v = np.asarray(self.values, float)
        if g.shape != v.shape:
            raise ValueError("grid and values differ in shape")
        if np.any((g <= 0) | (g >= 1)):
            raise ValueError("grid must lie strictly inside (0, 1)")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def __call__(self, x):
        if self.func is not None:
            return self.func(x)
        return np.interp(x, self.grid, self.values)

    @property
    def sup(self):
        return float(np.max(np.abs(self.values)))


def as_function(w) -> Callable:
    """Turn an expression, its text, a constant, a grid function or a callable into ``x -> w(x)``."""
    if isinstance(w, str):
        w = ex.parse_expr(w)
    if isinstance(w, GridFunction):
        return w
    if isinstance(w, ex.NODE_TYPES):
        e = w
        return lambda x: np.broadcast_to(ex.eval_expr(e, x=np.asarray(x, float)), np.shape(x)).astype(float)
    if isinstance(w, (int, float)):
        c = float(w)
        return lambda x: np.full(np.shape(x), c)
    if callable(w):
        return w
    raise TypeError(f"cannot interpret {w!r} as a function on the base")


def sup_estimate(f, points=4096):
    x = uniform_grid(points)
    return float(np.max(np.abs(f(x))))


def apply_koopman(base: ExpandingMap, w, grid=None, jitter=1e-7) -> GridFunction:
    """``(U w)(x) = w(F x)`` on the grid.

    Grid points whose image is undefined (partition endpoints) are moved by
    ``jitter`` and the count is recorded in ``notes``.
    """
    f = as_function(w)
    grid = uniform_grid(1024) if grid is None else np.asarray(grid, float)
    pts = grid.copy()
    moved = 0
    for i in range(pts.size):
        for k in range(8):
            try:
                base.letter_of(np.asarray(pts[i]))
                break
            except BoundaryPointError:
                pts[i] = grid[i] + (k + 1) * jitter * (1 if grid[i] < 0.5 else -1)
                moved += k == 0
        else:
            raise BoundaryPointError(f"cannot jitter grid point {grid[i]!r} off the partition")
    fx, _ = base.forward(pts)
    values = f(fx)

    def backing(x):
        y, _ = base.forward(np.asarray(x, float))
        return f(y)

    return GridFunction(pts, values, func=backing, notes={"jittered": int(moved)})


def transfer_truncation_error(base, density, sup_w, tail):
    """Omitted mass bound ``|w|_inf * tail * sup(phi) / inf(phi)``."""
    if tail == 0:
        return 0.0
    return sup_w * tail * density.sup / density.floor


def apply_transfer(base: ExpandingMap, density: InvariantDensity, w, n: int, tail_tol=None, grid=None,
                   truncation=None, method="words") -> GridFunction:
    """``L^n w`` on the grid, by depth-``n`` words or by ``n`` depth-one steps."""
    if n < 1:
        raise ValueError("depth must be at least 1")
    f = as_function(w)
    grid = uniform_grid(1024) if grid is None else np.asarray(grid, float)
    if method == "iterate":
        g = f
        err = 0.0
        sup_w = sup_estimate(f)
        for _ in range(n):
            g, tail = _transfer_once(base, density, g, tail_tol, truncation)
            err += transfer_truncation_error(base, density, sup_w, tail)
        return GridFunction(grid, g(grid), func=g, error=err, notes={"method": "iterate"})
    if method != "words":
        raise ValueError(f"unknown method {method!r}")
    tree = word_tree(base, n, grid, tail_tol=tail_tol, truncation=truncation)
    total = sum_over_words(tree, lambda c: np.abs(c.deriv(0)) * density(c.point(0)) * f(c.point(0)))
    values = total / density(grid)
    err = transfer_truncation_error(base, density, sup_estimate(f), tree.tail_bound)

    def backing(x, f=f):
        return apply_transfer(base, density, f, n, tail_tol, np.atleast_1d(x), truncation).values

    return GridFunction(grid, values, func=backing, error=err,
                        notes={"method": "words", "words": len(tree), "truncation_tail": tree.tail_bound})


def _transfer_once(base, density, f, tail_tol, truncation):
    letters, tail = alphabet(base, 1, tail_tol, truncation)

    def g(x):
        x = np.asarray(x, float)
        shape = x.shape
        x = x.ravel()
        hy, d1, _ = base.inverse(letters[:, None], x[None, :])
        s = pairwise_sum(np.abs(d1) * density(hy) * f(hy), axis=0)
        return (s / density(x)).reshape(shape)

    return g, tail


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

PANEL = 16


@lru_cache(maxsize=None)
def _legendre(m):
    x, w = special.roots_legendre(m)
    return x, w


def composite_nodes(a, b, panels, order=PANEL):
    """Composite Gauss-Legendre nodes and weights on ``[a, b]``."""
    t, w = _legendre(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def nu_integral(density, f, quad_res=4096):
    x, w = composite_nodes(0.0, 1.0, max(1, quad_res // PANEL))
    return float(pairwise_sum(w * f(x) * density(x)))


def _cylinder_integral(base, density, wf, vf, n, quad_res, letters):
    """``sum_h int over h(Delta) of w(F^n x) v(x) phi(x) dx`` by quadrature in x.

    Each cylinder is integrated separately; ``F^n`` is applied along the
    known itinerary with the forward branch formulas.
    """
    b = len(letters)
    idx = np.arange(b**n)
    words = np.stack([letters[(idx // b ** (n - 1 - j)) % b] for j in range(n)], axis=1)
    panels = max(1, quad_res // PANEL // len(words))
    t, w = composite_nodes(0.0, 1.0, panels)
    ends = np.broadcast_to(np.array([[0.0, 1.0]]), (len(words), 2))
    for j in range(n - 1, -1, -1):
        ends = base.inverse(words[:, j : j + 1], ends)[0]
    a = ends.min(axis=1, keepdims=True)
    width = np.abs(ends[:, 1:] - ends[:, :1])
    x = a + width * t[None, :]
    wts = width * w[None, :]
    y = x
    for j in range(n):
        y = base.forward_branch(words[:, j : j + 1], y)
    y = np.clip(y, 0.0, 1.0)
    return float(pairwise_sum(pairwise_sum(wts * wf(y) * vf(x) * density(x), axis=1)))


DUALITY_WORDS = 4096


def duality_residual(base: ExpandingMap, density: InvariantDensity, w, v, n: int = 1, quad_res: int = 4096,
                     tail_tol=None, truncation=None) -> float:
    """``| int (U^n w) v dnu - int w (L^n v) dnu |``.

    The left side is integrated cylinder by cylinder in the original
    coordinate and the right side on ``[0, 1]`` after inverse-branch
    summation; for countable maps both use the same truncated alphabet.
    """
    wf, vf = as_function(w), as_function(v)
    if base.countable and truncation is None and tail_tol is None:
        truncation = max(2, int(round(DUALITY_WORDS ** (1.0 / n))))
    letters, _ = alphabet(base, n, tail_tol, truncation)
    lhs = _cylinder_integral(base, density, wf, vf, n, quad_res, letters)
    x, wts = composite_nodes(0.0, 1.0, max(1, quad_res // PANEL))
    rhs_vals = apply_transfer(base, density, vf, n, truncation=int(letters.max()) if base.countable else None,
                              grid=x).values
    rhs = float(pairwise_sum(wts * wf(x) * rhs_vals * density(x)))
    return abs(lhs - rhs)
