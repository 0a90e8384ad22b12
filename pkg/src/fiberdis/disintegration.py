"""Fiber measures ``eta_x`` and the quotient observable ``vbar(x) = eta_x(v)``.

``M_n v = L^n v_n`` with ``v_n(y) = v(F^n y, G_n(y, z0))`` reads, at a base
point ``x``,

    (M_n v)(x) = phi(x)^-1 sum_{h in H_n} J_h(x) phi(h x) v(x, G_n(h x, z0)),

and converges uniformly to ``vbar`` as ``n`` grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .base_dynamics import InvariantDensity, alphabet, sum_over_words, uniform_grid, word_tree
from .eta_measure import eta_value, observable
from .parallel import ordered_map, pairwise_sum
from .skew_product import SkewProduct, iterate_chunk
from .transfer import GridFunction, composite_nodes, transfer_truncation_error

NUMERIC_SLACK = 1e-12
MC_CHUNK = 1 << 16


class QuotientNotConverged(RuntimeError):
    def __init__(self, trace):
        self.trace = trace
        last = trace.rows[-1] if trace.rows else None
        super().__init__(f"quotient not converged by n = {last['n'] if last else '?'}")


@dataclass(frozen=True)
class ConvergenceTrace:
    rows: tuple = ()

    def as_list(self):
        return [dict(r) for r in self.rows]


@dataclass(frozen=True)
class QuotientObservable:
    grid: np.ndarray
    values: np.ndarray
    error: np.ndarray
    n: int
    base_point: float
    trace: ConvergenceTrace = field(default_factory=ConvergenceTrace)

    def rows(self):
        return [{"x": float(x), "vbar": float(v), "error_bound": float(e)}
                for x, v, e in zip(self.grid, self.values, self.error)]


def apriori_bound(skew: SkewProduct, v, n: int) -> float:
    """``Lip_z(v) C exp(-lambda_s n) diam N``."""
    return v.lip_z * skew.fiber.contraction_bound(n) * skew.fiber.diameter


def apply_Mn(skew: SkewProduct, density: InvariantDensity, v, n: int, x_grid=None, tail_tol: float = 1e-3,
             z0: Optional[float] = None, truncation=None) -> GridFunction:
    """``M_n v`` on the grid with the countable-truncation error in ``error``."""
    if n < 1:
        raise ValueError("depth must be at least 1")
    v = observable(v, skew)
    grid = uniform_grid(64) if x_grid is None else np.asarray(x_grid, float)
    z0 = skew.fiber.base_point if z0 is None else float(z0)
    tree = word_tree(skew.base, n, grid, tail_tol=tail_tol, truncation=truncation)

    def per_chunk(ch):
        zn, _, _ = iterate_chunk(skew, ch, z0)
        wt = np.abs(ch.deriv(0)) * density(ch.point(0))
        return wt * v(np.broadcast_to(grid, zn.shape), zn)

    total = sum_over_words(tree, per_chunk)
    values = total / density(grid)
    err = transfer_truncation_error(skew.base, density, v.sup_norm, tree.tail_bound)
    return GridFunction(grid, values, error=err, notes={"n": n, "z0": z0, "words": len(tree)})


def quotient_observable(skew: SkewProduct, density: InvariantDensity, v, tol: float = 1e-6, k_gap: int = 5,
                        n_cap: int = 30, x_grid=None, z0=None, tail_tol: float = 1e-3):
    """Least ``n`` with ``max(|M_n v - M_{n+k} v|_inf, a-priori(n)) < tol``; returns ``M_{n+k} v``.

    Depths whose a-priori bound already exceeds ``tol`` cannot satisfy the
    rule and are skipped.  A ``z``-free observable is returned as is at
    ``n = 1`` with error 0.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    v = observable(v, skew)
    grid = uniform_grid(64) if x_grid is None else np.asarray(x_grid, float)
    base_point = skew.fiber.base_point if z0 is None else float(z0)
    if v.z_free:
        # every eta_x is a probability measure on its fiber
        values = np.asarray(v(grid, np.full(grid.shape, base_point)), float)
        trace = ConvergenceTrace(({"n": 1, "measured_diff": 0.0, "apriori_bound": 0.0},))
        return QuotientObservable(grid, values, np.zeros(grid.shape), 1, base_point, trace)
    cache = {}

    def M(n):
        if n not in cache:
            cache[n] = apply_Mn(skew, density, v, n, grid, tail_tol, z0)
        return cache[n]

    rows = []
    n = 1
    while n <= n_cap and apriori_bound(skew, v, n) >= tol:
        n += 1
    while n <= n_cap:
        a, b = M(n), M(n + k_gap)
        measured = float(np.max(np.abs(a.values - b.values)))
        prior = apriori_bound(skew, v, n)
        rows.append({"n": n, "measured_diff": measured, "apriori_bound": prior})
        if max(measured, prior) < tol:
            final = n + k_gap
            err = apriori_bound(skew, v, final) + b.error
            trace = ConvergenceTrace(tuple(rows))
            return QuotientObservable(grid, b.values, np.full(grid.shape, err), final, base_point, trace)
        n += 1
    raise QuotientNotConverged(ConvergenceTrace(tuple(rows)))


def disintegration_residual(skew: SkewProduct, density: InvariantDensity, v, tol: float = 1e-6,
                            panels: int = 4, **eta_kw):
    """``|int vbar dnu - eta(v)|`` and the allowance it must stay below.

    ``int vbar dnu`` uses composite Gauss-Legendre on ``panels`` panels;
    its error estimate compares against half as many panels.
    """
    v = observable(v, skew)
    x1, w1 = composite_nodes(0.0, 1.0, panels)
    x2, w2 = composite_nodes(0.0, 1.0, max(1, panels // 2))
    q = quotient_observable(skew, density, v, tol, x_grid=np.concatenate([x1, x2]))
    vals1, vals2 = q.values[: x1.size], q.values[x1.size :]
    i1 = float(pairwise_sum(w1 * vals1 * density(x1)))
    i2 = float(pairwise_sum(w2 * vals2 * density(x2)))
    eta = eta_value(skew, density, v, tol, **eta_kw)
    quad = abs(i1 - i2) + 64 * np.finfo(float).eps * v.sup_norm
    allowance = float(q.error[0]) + (eta.bracket[1] - eta.bracket[0]) + eta.error + quad
    return abs(i1 - eta.value), allowance


def base_point_shift(skew: SkewProduct, density: InvariantDensity, v, n: int, z0a: float, z0b: float, x_grid=None):
    """``sup |M_n v(z0a) - M_n v(z0b)|`` and the bound ``Lip_z(v) C exp(-lambda_s n) |z0a - z0b|``."""
    v = observable(v, skew)
    a = apply_Mn(skew, density, v, n, x_grid, z0=z0a)
    b = apply_Mn(skew, density, v, n, x_grid, z0=z0b)
    bound = v.lip_z * skew.fiber.contraction_bound(n) * abs(z0a - z0b)
    return float(np.max(np.abs(a.values - b.values))), bound


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------


def _mc_chunk(skew, density, v, x, n, count, seed, index, letters, z0):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))
    base = skew.base
    y = np.full(count, float(x))
    pts = [None] * n
    word = np.empty((count, n), dtype=np.int64)
    for j in range(n - 1, -1, -1):
        hy, d1, _ = base.inverse(letters[:, None], y[None, :])
        p = np.abs(d1) * density(hy)
        cdf = np.cumsum(p, axis=0)
        u = rng.random(count) * cdf[-1]
        k = np.minimum((cdf < u[None, :]).sum(axis=0), len(letters) - 1)
        word[:, j] = k
        y = hy[k, np.arange(count)]
        pts[j] = y
    z = np.full(count, z0)
    fib = skew.fiber
    for j in range(n):
        li = skew.letter_index(letters[word[:, j]]) if fib.piecewise else 0
        z = np.asarray(fib.value(pts[j], z, li))
    return v(np.full(count, float(x)), z)


def backward_sampling_oracle(skew: SkewProduct, density: InvariantDensity, v, x: float, n: int,
                             samples: int = 10**6, seed: int = 0, z0=None, tail_tol: float = 1e-3):
    """Monte-Carlo estimate of ``(M_n v)(x)`` and its standard error.

    Letters are drawn from the innermost outward with probability
    ``phi(h_k y) J_k(y) / phi(y)``, which is exactly the weight of the word
    in ``M_n``.  Each block of samples draws from its own counter-based
    Philox stream keyed by ``(seed, block)``, so the result does not depend
    on the worker count.
    """
    v = observable(v, skew)
    z0 = skew.fiber.base_point if z0 is None else float(z0)
    letters, _ = alphabet(skew.base, 1, tail_tol)
    blocks = [(i, min(MC_CHUNK, samples - i * MC_CHUNK)) for i in range(math.ceil(samples / MC_CHUNK))]
    parts = ordered_map(lambda b: _mc_chunk(skew, density, v, x, n, b[1], seed, b[0], letters, z0), blocks)
    vals = np.concatenate(parts)
    if vals.min() == vals.max():
        return float(vals[0]), 0.0
    mean = float(pairwise_sum(vals)) / vals.size
    var = float(pairwise_sum((vals - mean) ** 2)) / (vals.size - 1)
    return mean, math.sqrt(var / vals.size)
