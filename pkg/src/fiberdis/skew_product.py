"""Skew products ``F^(x, z) = (F x, G(x, z))`` over an expanding base.

The fiber map may be one expression in ``(x, z)`` or one expression per base
branch (a fiber that jumps across the partition, smooth on each branch).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import expression as ex
from .base_dynamics import (
    BOUNDARY_MARGIN,
    BaseMetric,
    BoundaryPointError,
    ExpandingMap,
    InsufficientSmoothnessError,
    BranchWord,
    choose_truncation,
    fit_decay,
    word_tree,
)

SLACK = 1e-6


class OrbitDiscontinuityError(ValueError):
    def __init__(self, step, x):
        self.step = step
        self.x = x
        super().__init__(f"orbit hits discontinuity at step {step} (x = {float(x)!r})")


@dataclass(frozen=True)
class FiberMap:
    """Fiber dynamics on ``N = [z_min, z_max]``.

    ``exprs`` holds one formula (used on every branch) or one per branch.
    ``contraction_rate`` and ``contraction_const`` bound
    ``|D_s G_n| <= C exp(-rate n)``; ``n0`` iterates are non-expanding in z.
    """

    interval: tuple
    exprs: tuple
    contraction_rate: float
    contraction_const: float = 1.0
    n0: int = 1
    base_point: Optional[float] = None

    def __post_init__(self):
        lo, hi = self.interval
        if not hi > lo:
            raise ValueError("fiber interval must have z_max > z_min")
        parsed = tuple(ex.parse_expr(e) if isinstance(e, str) else e for e in self.exprs)
        for e in parsed:
            extra = ex.free_variables(e) - {"x", "z"}
            if extra:
                raise ValueError(f"fiber map may only use x and z, got {sorted(extra)}")
        object.__setattr__(self, "exprs", parsed)
        z0 = 0.5 * (lo + hi) if self.base_point is None else float(self.base_point)
        if not lo <= z0 <= hi:
            raise ValueError("base point must lie in the fiber interval")
        object.__setattr__(self, "base_point", z0)

    @property
    def z_min(self):
        return float(self.interval[0])

    @property
    def z_max(self):
        return float(self.interval[1])

    @property
    def diameter(self):
        return self.z_max - self.z_min

    @property
    def piecewise(self) -> bool:
        return len(self.exprs) > 1 and len(set(self.exprs)) > 1

    @property
    def smooth(self) -> bool:
        return not self.piecewise and all(ex.is_smooth(e) for e in self.exprs)

    def contraction_bound(self, n):
        return self.contraction_const * math.exp(-self.contraction_rate * n)

    def _expr_for(self, letter_index):
        return self.exprs[0] if len(self.exprs) == 1 else self.exprs[int(letter_index)]

    def _apply(self, fn, x, z, letter_index):
        """Evaluate ``fn(expr, x, z)`` choosing the branch formula row by row."""
        if len(self.exprs) == 1 or np.ndim(letter_index) == 0:
            return fn(self._expr_for(0 if len(self.exprs) == 1 else letter_index), x, z)
        x, z = np.broadcast_arrays(x, z)
        li = np.asarray(letter_index)
        if li.ndim == 1 and x.ndim == 2 and li.shape[0] == x.shape[0]:
            parts = None
            for i in np.unique(li):
                rows = li == i
                vals = fn(self.exprs[int(i)], x[rows], z[rows])
                vals = vals if isinstance(vals, tuple) else (vals,)
                if parts is None:
                    parts = [np.empty(x.shape) for _ in vals]
                for p, v in zip(parts, vals):
                    p[rows] = v
            return parts[0] if len(parts) == 1 else tuple(parts)
        li = np.broadcast_to(np.reshape(letter_index, np.shape(letter_index) + (1,) * (x.ndim - np.ndim(letter_index))), x.shape)
        parts = None
        for i in np.unique(li):
            m = li == i
            vals = fn(self.exprs[int(i)], x[m], z[m])
            vals = vals if isinstance(vals, tuple) else (vals,)
            if parts is None:
                parts = [np.empty(x.shape) for _ in vals]
            for p, v in zip(parts, vals):
                p[m] = v
        return parts[0] if len(parts) == 1 else tuple(parts)

    def value(self, x, z, letter_index=0):
        return self._apply(lambda e, a, b: _bcast(ex.evaluate(e, x=a, z=b), a, b), x, z, letter_index)

    def partials(self, x, z, letter_index=0):
        """``(G, D_u G, D_s G)``."""

        def f(e, a, b):
            g = _bcast(ex.evaluate(e, x=a, z=b), a, b)
            gx, gz, _ = ex.grad_expr(e, x=a, z=b)
            return g, _bcast(gx, a, b), _bcast(gz, a, b)

        return self._apply(f, x, z, letter_index)

    def contraction_partial(self, x, z, letter_index=0):
        def f(e, a, b):
            return _bcast(ex.grad_expr(e, x=a, z=b)[1], a, b)

        return self._apply(f, x, z, letter_index)


def _bcast(v, a, b):
    shape = np.broadcast(np.asarray(a), np.asarray(b)).shape
    if not shape:
        return float(v)
    return np.broadcast_to(np.asarray(v, float), shape)


@dataclass(frozen=True)
class SkewProduct:
    base: ExpandingMap
    fiber: FiberMap
    metric: BaseMetric = field(default_factory=BaseMetric)
    name: str = "custom"
    declared: dict = field(default_factory=dict)

    @property
    def smooth(self) -> bool:
        return self.fiber.smooth and self.base.smoothness == "C2"

    def letter_index(self, letters):
        """Position of branch labels in the alphabet (labels are 1-based for countable maps)."""
        if self.base.countable:
            return np.asarray(letters) - 1
        return np.asarray(letters)


@dataclass(frozen=True)
class FiberPoint:
    x: float
    z: float

    def check(self, fiber: FiberMap, tol=1e-12):
        if not fiber.z_min - tol <= float(self.z) <= fiber.z_max + tol:
            raise ValueError(f"fiber coordinate {self.z} outside N = {fiber.interval}")
        return self


def check_fiber_invariance(skew: SkewProduct, samples=10_000, seed=0, tol=1e-12):
    """Spot-check ``G(x, N) within N``; returns the worst excursion."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(BOUNDARY_MARGIN, 1 - BOUNDARY_MARGIN, samples)
    z = np.concatenate([[skew.fiber.z_min, skew.fiber.z_max], rng.uniform(skew.fiber.z_min, skew.fiber.z_max, samples - 2)])
    try:
        letters = skew.base.letter_of(x)
    except BoundaryPointError:
        x = np.clip(x, 1e-6, 1 - 1e-6)
        letters = skew.base.letter_of(x, margin=0)
    g = skew.fiber.value(x, z, skew.letter_index(letters))
    excess = max(float(np.max(g - skew.fiber.z_max)), float(np.max(skew.fiber.z_min - g)), 0.0)
    if excess > tol:
        raise ValueError(f"fiber map leaves N: excursion {excess:.3e}")
    return excess


# ---------------------------------------------------------------------------
# forward orbits
# ---------------------------------------------------------------------------


def base_orbit(base: ExpandingMap, x, n, margin=BOUNDARY_MARGIN, exact=False):
    """Points ``x, Fx, ..., F^{n-1}x`` with their branch letters, and ``F^n x``.

    ``exact=True`` runs the orbit in rational arithmetic from the decimal
    representation of ``x`` (no loss of bits under ``2x mod 1``).
    """
    pts, letters = [], []
    y = Fraction(repr(float(x))) if exact else float(x)
    for j in range(n):
        try:
            if exact:
                letter = base.letter_of(y)
            else:
                letter = int(base.letter_of(np.asarray(y), margin))
        except BoundaryPointError:
            raise OrbitDiscontinuityError(j, y) from None
        pts.append(y)
        letters.append(letter)
        y = base.forward_branch(letter, y)
        if not exact:
            y = float(y)
    return pts, letters, y


def forward_iterate(skew: SkewProduct, p: FiberPoint, n: int, margin=BOUNDARY_MARGIN, exact=False) -> FiberPoint:
    """``F^^n(x, z) = (F^n x, G_n(x, z))``."""
    p.check(skew.fiber)
    pts, letters, xn = base_orbit(skew.base, p.x, n, margin, exact)
    z = float(p.z)
    idx = skew.letter_index(letters)
    for y, i in zip(pts, idx):
        z = skew.fiber.value(float(y), z, int(i))
    return FiberPoint(float(xn), z).check(skew.fiber)


def fiber_orbit(skew: SkewProduct, x, z, n, margin=BOUNDARY_MARGIN, exact=False):
    """Fiber values ``z_0, ..., z_n`` along the forward orbit of ``(x, z)``; also returns base points."""
    pts, letters, xn = base_orbit(skew.base, x, n, margin, exact)
    zs = [np.asarray(z, float)]
    idx = skew.letter_index(letters)
    for y, i in zip(pts, idx):
        zs.append(np.asarray(skew.fiber.value(float(y), zs[-1], int(i))))
    return [float(y) for y in pts] + [float(xn)], zs


# ---------------------------------------------------------------------------
# fiber iterates over inverse branches
# ---------------------------------------------------------------------------


def fiber_over_branch(skew: SkewProduct, word, x, z, with_derivatives=True, margin=BOUNDARY_MARGIN):
    """``(G_n(hx, z), D_uG_n(hx, z) Dh(x), D_sG_n(hx, z))`` for ``h`` given by ``word``.

    Along the orbit ``p_j = F^j(hx)`` with ``q_j = dp_j/dx`` the recursion is
    ``z_{j+1} = G(p_j, z_j)``, ``a_{j+1} = D_uG q_j + D_sG a_j``,
    ``s_{j+1} = D_sG s_j``.
    """
    if with_derivatives and not skew.smooth:
        raise InsufficientSmoothnessError("insufficient smoothness: derivative products need smooth G and a C^2 base")
    w = word.word if isinstance(word, BranchWord) else tuple(word)
    x = np.asarray(x, float)
    if margin > 0 and np.any((x < margin) | (x > 1 - margin)):
        raise BoundaryPointError("boundary point")
    # points p_{n}, ..., p_0 built from the inside out
    pts = [x]
    ders = [np.ones_like(x)]
    for letter in reversed(w):
        hy, d1, _ = skew.base.inverse(letter, pts[-1])
        pts.append(hy)
        ders.append(d1 * ders[-1])
    pts.reverse()
    ders.reverse()
    idx = skew.letter_index(np.array(w)) if w else []
    zj = np.broadcast_to(np.asarray(z, float), x.shape).astype(float)
    a = np.zeros_like(zj)
    s = np.ones_like(zj)
    for j, i in enumerate(idx):
        if with_derivatives:
            g, gu, gs = skew.fiber.partials(pts[j], zj, int(i))
            a = gu * ders[j] + gs * a
            s = gs * s
            zj = g
        else:
            zj = np.asarray(skew.fiber.value(pts[j], zj, int(i)), float)
    out = (zj, a, s) if with_derivatives else (zj, None, None)
    return tuple(float(v) if v is not None and np.ndim(v) == 0 else v for v in out)


def iterate_chunk(skew: SkewProduct, chunk, z, start=0, stop=None, derivs=False, record=False):
    """Fiber recursion over every word of a ``WordChunk`` between orbit indices.

    Starts from ``z`` at the points ``p_start`` and returns ``(z, a, s)`` at
    ``p_stop``; ``a`` accumulates ``d/dx`` through the inverse branch.  With
    ``record`` the per-step ``(z_j, a_j)`` are returned as lists too.
    """
    stop = chunk.n if stop is None else stop
    shape = (chunk.size, chunk.tree.x.size)
    zj = np.array(np.broadcast_to(z, shape), dtype=float)
    a = np.zeros(shape) if derivs else None
    s = np.ones(shape) if derivs else None
    hist = [(zj, a)] if record else None
    fib = skew.fiber
    for j in range(start, stop):
        li = skew.letter_index(chunk.letter(j)) if fib.piecewise else 0
        pj = chunk.point(j)
        if derivs:
            g, gu, gs = fib.partials(pj, zj, li)
            a = gu * chunk.deriv(j) + gs * a
            s = gs * s
            zj = np.asarray(g)
        else:
            zj = np.asarray(fib.value(pj, zj, li))
        if record:
            hist.append((zj, a))
    if record:
        return zj, a, s, hist
    return zj, a, s


# ---------------------------------------------------------------------------
# contraction diagnostics
# ---------------------------------------------------------------------------


def pair_points(count, seed=0, margin=BOUNDARY_MARGIN):
    """Sorted sample points and index pairs: all neighbours plus a random matching."""
    rng = np.random.default_rng(seed)
    half = max(count // 2, 1)
    x = np.sort(rng.uniform(1e-3, 1 - 1e-3, half + 1))
    x = np.clip(x, margin, 1 - margin)
    i1 = np.arange(half)
    perm = rng.permutation(half + 1)
    a, b = perm[: (half + 1) // 2 * 2 : 2], perm[1 : (half + 1) // 2 * 2 : 2]
    left = np.concatenate([i1, a])
    right = np.concatenate([i1 + 1, b])
    keep = x[left] != x[right]
    return x, left[keep][:count], right[keep][:count]


def sample_truncation(skew: SkewProduct):
    """Alphabet cut-off for sampled suprema over countably many words.

    Omitted words only lower an empirical supremum, so one depth-one
    truncation serves every depth.
    """
    if not skew.base.countable:
        return None
    return choose_truncation(skew.base, 1, skew.declared.get("tail_tol", 2e-2))


def branch_lipschitz_constant(skew: SkewProduct, n, pair_samples=10_000, seed=0, z_values=None):
    """``max_h max_pairs |G_n(hx, z) - G_n(hx', z)| / d(x, x')`` over the same word ``h``."""
    x, left, right = pair_points(pair_samples, seed)
    d = skew.metric.distance(skew.base, x[left], x[right])
    zs = [skew.fiber.z_min, skew.fiber.base_point, skew.fiber.z_max] if z_values is None else list(z_values)
    tree = word_tree(skew.base, n, x, truncation=sample_truncation(skew))

    def per_chunk(ch):
        best = 0.0
        for z in zs:
            zn, _, _ = iterate_chunk(skew, ch, z)
            best = max(best, float(np.max(np.abs(zn[:, left] - zn[:, right]) / d)))
        return best

    return max(tree.map(per_chunk))


def contraction_report(skew: SkewProduct, n_max: int, pair_samples: int = 1000, seed: int = 0,
                       x_samples: int = 64, z_grid: int = 33) -> dict:
    """Fiber-contraction diagnostics up to ``n_max`` iterates."""
    rng = np.random.default_rng(seed)
    fib = skew.fiber
    xs = rng.uniform(1e-3, 1 - 1e-3, x_samples)
    zgrid = np.linspace(fib.z_min, fib.z_max, z_grid)
    diam = np.zeros(n_max)
    dsg = np.zeros(n_max)
    star = 0.0
    skipped = 0
    for x in xs:
        try:
            pts, letters, _ = base_orbit(skew.base, x, n_max)
        except OrbitDiscontinuityError:
            skipped += 1
            continue
        zj = zgrid.copy()
        s = np.ones_like(zj)
        for j, (y, li) in enumerate(zip(pts, skew.letter_index(letters))):
            g, _, gs = _partials_any(fib, y, zj, int(li))
            s = s * gs
            zj = np.asarray(g)
            diam[j] = max(diam[j], float(zj.max() - zj.min()))
            dsg[j] = max(dsg[j], float(np.max(np.abs(s))))
            if j + 1 == fib.n0:
                dz = np.abs(zgrid[:, None] - zgrid[None, :])
                dg = np.abs(zj[:, None] - zj[None, :])
                off = dz > 0
                star = max(star, float(np.max(dg[off] / dz[off])))
    ns = np.arange(1, n_max + 1)
    fit = fit_decay(ns, diam)
    items = {}
    items["star"] = {"n0": fib.n0, "max_ratio": star, "verdict": "PASS" if star <= 1 + SLACK else "FAIL"}
    bounds = np.array([fib.contraction_bound(n) for n in ns])
    ok = bool(np.all(dsg <= bounds * (1 + SLACK)))
    items["contraction"] = {"sup_DsG": dsg.tolist(), "bound": bounds.tolist(), "verdict": "PASS" if ok else "FAIL"}
    lip = [branch_lipschitz_constant(skew, int(n), pair_samples, seed) for n in ns]
    declared = skew.declared.get("branch_lipschitz")
    if declared is not None:
        lip_ok = max(lip) <= declared * (1 + SLACK)
    else:
        lip_ok = bool(np.all(np.isfinite(lip)))
    items["branch_lipschitz"] = {
        "per_n": lip,
        "max": max(lip),
        "declared": declared,
        "pairs": "same inverse branch for both points",
        "verdict": "PASS" if lip_ok else "FAIL",
    }
    items["diameter"] = {
        "per_n": diam.tolist(),
        "fitted": fit,
        "verdict": "PASS" if fit is None or fit["lambda"] > 0 or diam.max() == 0 else "FAIL",
    }
    verdict = "PASS" if all(v["verdict"] == "PASS" for v in items.values()) else "FAIL"
    return {"system": skew.name, "n_max": n_max, "orbits_skipped": skipped, "items": items, "verdict": verdict}


def _partials_any(fib: FiberMap, y, z, li):
    """Partials even for non-smooth formulas (evaluated where they are differentiable)."""
    try:
        return fib.partials(y, z, li)
    except ex.NonDifferentiableError:
        g = fib.value(y, z, li)
        return g, np.zeros_like(np.asarray(g)), np.zeros_like(np.asarray(g))
