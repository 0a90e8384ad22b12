"""Uniformly expanding full-branch maps of the unit interval.

A map is described by its inverse branches ``h_i`` (each a diffeomorphism of
``(0, 1)`` onto the branch interval ``U_i``) together with the forward map on
each branch.  Depth-``n`` inverse branches are indexed by words
``w = (w_0, ..., w_{n-1})`` with

    h_w = h_{w_0} o h_{w_1} o ... o h_{w_{n-1}},

so ``w`` is the itinerary of ``h_w(x)``: ``F^j(h_w x)`` lies in ``U_{w_j}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import expression as ex
from .parallel import enumeration_budget, neumaier_sum, ordered_map, pairwise_sum

BOUNDARY_MARGIN = 1e-9
CHUNK_ELEMENTS = 1 << 20
EM_TRUNCATION = 200  # explicit letters before the Euler-Maclaurin tail


class BoundaryPointError(ValueError):
    """A point lies outside the open domain or too close to a partition endpoint."""


class InsufficientSmoothnessError(ValueError):
    pass


class EnumerationBudgetError(RuntimeError):
    def __init__(self, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(f"enumeration budget exceeded: {count} words requested, cap is {cap}")


class DensityNotConverged(RuntimeError):
    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"density not converged after {iterations} iterations (last residual {residual:.3e})"
        )


@dataclass(frozen=True)
class MapConstants:
    """Declared expansion and distortion constants.

    ``certified`` is True when the values were derived by hand for the map;
    False when they were fitted or supplied without proof.
    """

    expansion_rate: float  # lambda
    expansion_const: float  # C_lambda
    distortion: float  # C_J
    jacobian_norm_sum: float  # C_J'
    jacobian_derivative_sum: Optional[float] = None  # C_d, C^2 maps only
    alpha: float = 1.0
    certified: bool = True


class ExpandingMap:
    """Base class.  Subclasses implement the per-letter branch formulas."""

    name = "map"
    branch_count: Optional[int] = None  # None means countably many branches
    smoothness = "C2"

    def __init__(self, constants: MapConstants):
        self.constants = constants

    # -- per-letter formulas -------------------------------------------------
    def letters(self, truncation: Optional[int] = None) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, letter, y):
        """Return ``(h(y), h'(y), h''(y))`` for the branch(es) ``letter``."""
        raise NotImplementedError

    def forward_branch(self, letter, x):
        raise NotImplementedError

    def branch_interval(self, letter) -> tuple:
        raise NotImplementedError

    def letter_of(self, x, margin=BOUNDARY_MARGIN):
        """Branch label of each point; raises on partition endpoints."""
        raise NotImplementedError

    # -- countable maps ------------------------------------------------------
    @property
    def countable(self) -> bool:
        return self.branch_count is None

    def letter_sup_jacobian(self, letters) -> np.ndarray:
        raise NotImplementedError

    def letter_tail_bound(self, k_max: int) -> float:
        """Certified bound on the sum of sup-Jacobians of letters after ``k_max``."""
        raise NotImplementedError

    # -- derived -------------------------------------------------------------
    def forward(self, x, margin=BOUNDARY_MARGIN):
        letter = self.letter_of(x, margin)
        return self.forward_branch(letter, x), letter

    def analytic_density(self):
        return None

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _as_array(x):
    return np.asarray(x, dtype=float)


class DoublingMap(ExpandingMap):
    """``F(x) = 2x mod 1`` with inverse branches ``(y + i)/2``."""

    name = "doubling"
    branch_count = 2

    def __init__(self, constants: Optional[MapConstants] = None):
        super().__init__(
            constants
            or MapConstants(
                expansion_rate=math.log(2.0),
                expansion_const=1.0,
                distortion=0.0,
                jacobian_norm_sum=1.0,
                jacobian_derivative_sum=0.0,
            )
        )

    def letters(self, truncation=None):
        return np.arange(2)

    def inverse(self, letter, y):
        y = _as_array(y)
        hy = (y + letter) * 0.5
        d = np.full(np.broadcast(y, letter).shape, 0.5)
        return hy, d, np.zeros_like(d)

    def forward_branch(self, letter, x):
        if isinstance(x, Fraction):
            return 2 * x - int(letter)
        return 2.0 * _as_array(x) - letter

    def branch_interval(self, letter):
        return (letter / 2.0, (letter + 1) / 2.0)

    def letter_of(self, x, margin=BOUNDARY_MARGIN):
        if isinstance(x, Fraction):
            if x < 0 or x > 1 or x == Fraction(1, 2):
                raise BoundaryPointError(f"point {x} is on the partition boundary")
            return 0 if x < Fraction(1, 2) else 1
        x = _as_array(x)
        if np.any((x < 0) | (x > 1) | (np.abs(x - 0.5) < margin)):
            raise BoundaryPointError("point within boundary margin of a partition endpoint")
        return (x > 0.5).astype(int)

    def letter_sup_jacobian(self, letters):
        return np.full(np.shape(letters), 0.5)

    def analytic_density(self):
        return InvariantDensity.constant(1.0)


class GaussMap(ExpandingMap):
    """``F(x) = 1/x mod 1`` with inverse branches ``1/(k + y)``, ``k >= 1``."""

    name = "gauss"
    branch_count = None

    def __init__(self, constants: Optional[MapConstants] = None):
        golden = (1.0 + math.sqrt(5.0)) / 2.0
        # sup|Dh| over depth n is 1/F_{n+1}^2 <= golden^2 * golden^(-2n);
        # |d log J_h| <= 2 and sum_h J_h <= sup(phi)/inf(phi) = 2.
        super().__init__(
            constants
            or MapConstants(
                expansion_rate=2.0 * math.log(golden),
                expansion_const=golden**2,
                distortion=2.0,
                jacobian_norm_sum=24.0,
                jacobian_derivative_sum=4.0,
            )
        )

    def letters(self, truncation=None):
        if truncation is None:
            raise ValueError("countable map needs a truncation level")
        return np.arange(1, truncation + 1)

    def inverse(self, letter, y):
        s = _as_array(y) + letter
        return 1.0 / s, -1.0 / (s * s), 2.0 / (s * s * s)

    def forward_branch(self, letter, x):
        if isinstance(x, Fraction):
            return 1 / x - int(letter)
        return 1.0 / _as_array(x) - letter

    def branch_interval(self, letter):
        return (1.0 / (letter + 1), 1.0 / letter)

    def letter_of(self, x, margin=BOUNDARY_MARGIN):
        if isinstance(x, Fraction):
            if x <= 0 or x > 1:
                raise BoundaryPointError(f"point {x} is outside the Gauss map domain")
            k = math.floor(1 / x)
            if Fraction(1, k) == x and k > 1:
                raise BoundaryPointError(f"point {x} is on the partition boundary")
            return k
        x = _as_array(x)
        if np.any((x <= margin) | (x > 1)):
            raise BoundaryPointError("point within boundary margin of the Gauss map domain edge")
        k = np.floor(1.0 / x)
        lo = 1.0 / (k + 1.0)
        hi = 1.0 / k
        near = ((x - lo) < margin) | (((hi - x) < margin) & (k > 1))
        if np.any(near):
            raise BoundaryPointError("point within boundary margin of a partition endpoint")
        return k.astype(int)

    def letter_sup_jacobian(self, letters):
        k = _as_array(letters)
        return 1.0 / (k * k)

    def letter_tail_bound(self, k_max):
        # 1/k^2 < integral of 1/t^2 over [k - 1/2, k + 1/2] by convexity
        return 1.0 / (k_max + 0.5)

    def analytic_density(self):
        ln2 = math.log(2.0)
        return InvariantDensity(
            kind="analytic",
            func=lambda x: 1.0 / ((1.0 + _as_array(x)) * ln2),
            deriv=lambda x: -1.0 / ((1.0 + _as_array(x)) ** 2 * ln2),
            floor=1.0 / (2.0 * ln2),
            sup=1.0 / ln2,
            derivative_kind="analytic",
        )


class ExpressionMap(ExpandingMap):
    """Finite full-branch map given by per-branch expressions in ``x``.

    ``endpoints`` are the partition points ``0 = a_0 < a_1 < ... < a_b = 1``;
    branch ``i`` lives on ``(a_i, a_{i+1})``.  ``inverse[i]`` maps ``(0, 1)``
    onto it and ``forward[i]`` is its inverse.
    """

    def __init__(self, name, endpoints, forward, inverse, constants, density=None):
        super().__init__(constants)
        self.name = name
        self.endpoints = tuple(float(a) for a in endpoints)
        self.forward_exprs = tuple(ex.parse_expr(f) if isinstance(f, str) else f for f in forward)
        self.inverse_exprs = tuple(ex.parse_expr(f) if isinstance(f, str) else f for f in inverse)
        self.branch_count = len(self.endpoints) - 1
        if len(self.forward_exprs) != self.branch_count or len(self.inverse_exprs) != self.branch_count:
            raise ValueError("need one forward and one inverse formula per branch")
        if any(b <= a for a, b in zip(self.endpoints, self.endpoints[1:])):
            raise ValueError("branch endpoints must be increasing")
        if self.endpoints[0] != 0.0 or self.endpoints[-1] != 1.0:
            raise ValueError("branch endpoints must start at 0 and end at 1")
        smooth = all(ex.is_smooth(e) for e in self.inverse_exprs)
        self.smoothness = "C2" if smooth else "C1+a"
        self._density_expr = ex.parse_expr(density) if isinstance(density, str) else density

    def letters(self, truncation=None):
        return np.arange(self.branch_count)

    def inverse(self, letter, y):
        y = _as_array(y)
        letter = np.broadcast_to(np.asarray(letter), np.broadcast(y, letter).shape)
        yb = np.broadcast_to(y, letter.shape)
        out = [np.empty(letter.shape) for _ in range(3)]
        for i in np.unique(letter):
            m = letter == i
            vals = ex.second_derivative_x(self.inverse_exprs[int(i)], yb[m])
            for o, v in zip(out, vals):
                o[m] = v
        return tuple(out)

    def forward_branch(self, letter, x):
        if np.ndim(letter) == 0:
            return ex.evaluate(self.forward_exprs[int(letter)], x=_as_array(x))
        x = _as_array(x)
        out = np.empty(np.shape(x))
        for i in np.unique(letter):
            m = letter == i
            out[m] = ex.evaluate(self.forward_exprs[int(i)], x=x[m])
        return out

    def branch_interval(self, letter):
        return (self.endpoints[letter], self.endpoints[letter + 1])

    def letter_of(self, x, margin=BOUNDARY_MARGIN):
        x = _as_array(float(x) if isinstance(x, Fraction) else x)
        if np.any((x < 0) | (x > 1)):
            raise BoundaryPointError("point outside [0, 1]")
        interior = np.asarray(self.endpoints[1:-1])
        if interior.size and np.any(np.abs(x[..., None] - interior).min(axis=-1) < margin):
            raise BoundaryPointError("point within boundary margin of a partition endpoint")
        return np.clip(np.searchsorted(interior, x), 0, self.branch_count - 1)

    def letter_sup_jacobian(self, letters):
        grid = uniform_grid(257)
        return np.array([np.abs(self.inverse(int(i), grid)[1]).max() for i in np.atleast_1d(letters)])

    def analytic_density(self):
        if self._density_expr is None:
            return None
        e = self._density_expr
        grid = uniform_grid(4096)
        def full(v, x):
            return np.broadcast_to(np.asarray(v, float), np.shape(x)).copy()

        vals = full(ex.eval_expr(e, x=grid), grid)
        return InvariantDensity(
            kind="analytic",
            func=lambda x: full(ex.eval_expr(e, x=_as_array(x)), x),
            deriv=lambda x: full(ex.grad_expr(e, x=_as_array(x))[0], x),
            floor=float(vals.min()),
            sup=float(vals.max()),
            derivative_kind="analytic",
        )


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def uniform_grid(count: int, margin: float = BOUNDARY_MARGIN) -> np.ndarray:
    """Cell midpoints of a uniform partition of [0, 1] into ``count`` cells."""
    g = (np.arange(count) + 0.5) / count
    return np.clip(g, margin, 1.0 - margin)


# ---------------------------------------------------------------------------
# words
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BranchWord:
    """A depth-``n`` inverse branch ``h_{w_0} o ... o h_{w_{n-1}}``."""

    word: tuple

    def __len__(self):
        return len(self.word)

    def __add__(self, other):
        return BranchWord(self.word + tuple(other.word))


def _digits(index, base, n):
    out = np.empty(index.shape + (n,), dtype=np.int64)
    rest = index.copy()
    for j in range(n - 1, -1, -1):
        out[..., j] = rest % base
        rest //= base
    return out


class BranchWords(Sequence):
    """All inverse branches of depth ``n`` over the (possibly truncated) alphabet."""

    def __init__(self, base: ExpandingMap, depth: int, letters: np.ndarray, tail_bound: float = 0.0):
        self.base = base
        self.depth = depth
        self.alphabet = np.asarray(letters)
        self.truncation = None if base.branch_count is not None else int(self.alphabet.max())
        self.tail_bound = tail_bound

    def __len__(self):
        return len(self.alphabet) ** self.depth

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        d = _digits(np.array(i), len(self.alphabet), self.depth)
        return BranchWord(tuple(int(a) for a in self.alphabet[d]))

    @property
    def array(self) -> np.ndarray:
        idx = np.arange(len(self), dtype=np.int64)
        return self.alphabet[_digits(idx, len(self.alphabet), self.depth)]


def truncation_bound(base: ExpandingMap, k_max: int, depth: int) -> float:
    """Certified omitted sup-Jacobian mass of depth-``depth`` words with a letter above ``k_max``.

    With per-letter masses ``m_k = sup J_{h_k}`` the depth-n total is at most
    ``(S_K + T_K)^n - S_K^n`` where ``S_K`` sums the kept letters and ``T_K``
    bounds the rest.
    """
    head = float(math.fsum(base.letter_sup_jacobian(base.letters(k_max))))
    tail = base.letter_tail_bound(k_max)
    return (head + tail) ** depth - head**depth


def choose_truncation(base: ExpandingMap, depth: int, tail_tol: float, k_limit: int = 10**7) -> int:
    if tail_tol is None or tail_tol <= 0:
        raise ValueError("countable-branch maps need tail_tol > 0")
    lo, hi = 1, 1
    while truncation_bound(base, hi, depth) >= tail_tol:
        lo, hi = hi, hi * 2
        if hi > k_limit:
            raise EnumerationBudgetError(hi, k_limit)
    while lo < hi:
        mid = (lo + hi) // 2
        if truncation_bound(base, mid, depth) < tail_tol:
            hi = mid
        else:
            lo = mid + 1
    return hi


def alphabet(base: ExpandingMap, depth: int, tail_tol=None, truncation=None):
    """Letters to enumerate at this depth and the certified omitted mass."""
    if not base.countable:
        return base.letters(), 0.0
    k = truncation if truncation is not None else choose_truncation(base, depth, tail_tol)
    return base.letters(k), truncation_bound(base, k, depth)


def branch_words(base: ExpandingMap, n: int, tail_tol: Optional[float] = None, truncation=None,
                 cap: Optional[int] = None) -> BranchWords:
    """Enumerate the depth-``n`` inverse branches.

    For countable maps the alphabet is ``1..K`` with ``K`` the least level
    whose certified omitted Jacobian mass is below ``tail_tol``.
    """
    if n < 1:
        raise ValueError("depth must be at least 1")
    letters, tail = alphabet(base, n, tail_tol, truncation)
    cap = enumeration_budget() if cap is None else cap
    count = len(letters) ** n
    if count > cap:
        raise EnumerationBudgetError(count, cap)
    return BranchWords(base, n, letters, tail)


class InverseValue(tuple):
    __slots__ = ()

    def __new__(cls, hx, dh, jac, djac):
        return super().__new__(cls, (hx, dh, jac, djac))

    hx = property(lambda self: self[0])
    dh = property(lambda self: self[1])
    jac = property(lambda self: self[2])
    djac = property(lambda self: self[3])


def check_interior(x, margin=BOUNDARY_MARGIN):
    x = _as_array(x)
    if np.any((x < margin) | (x > 1.0 - margin)) or np.any(~np.isfinite(x)):
        raise BoundaryPointError("boundary point: evaluation needs x in (0, 1) away from the margin")
    return x


def inverse_eval(base: ExpandingMap, word, x, *, with_djac: bool = True,
                 boundary_margin: float = BOUNDARY_MARGIN) -> InverseValue:
    """Evaluate ``h_w`` at ``x`` with ``Dh``, ``J_h = |Dh|`` and ``DJ_h``.

    ``boundary_margin=0`` admits the closed interval, where each inverse
    branch extends continuously.
    """
    if with_djac and base.smoothness != "C2":
        raise InsufficientSmoothnessError("insufficient smoothness: DJ_h needs a C^2 map")
    w = word.word if isinstance(word, BranchWord) else tuple(word)
    x = _as_array(x)
    if boundary_margin > 0:
        check_interior(x, boundary_margin)
    elif np.any((x < 0) | (x > 1)):
        raise BoundaryPointError("boundary point: x outside [0, 1]")
    y = x
    d1 = np.ones_like(x)
    d2 = np.zeros_like(x)
    for letter in reversed(w):
        hy, a1, a2 = base.inverse(letter, y)
        d2 = a2 * d1 * d1 + a1 * d2
        d1 = a1 * d1
        y = hy
    y, d1, d2 = (float(v) if np.ndim(v) == 0 else v for v in (y, d1, d2))
    djac = np.sign(d1) * d2 if with_djac else None
    if djac is not None and np.ndim(djac) == 0:
        djac = float(djac)
    return InverseValue(y, d1, abs(d1) if np.ndim(d1) == 0 else np.abs(d1), djac)


# ---------------------------------------------------------------------------
# vectorised evaluation of all words at once
# ---------------------------------------------------------------------------


class WordChunk:
    """A block of depth-``n`` words sharing a prefix, evaluated at points ``x``.

    ``point(j)`` is ``F^j(h_w x) = h_{w_j} o ... o h_{w_{n-1}}(x)`` with shape
    ``(size, len(x))``; ``deriv(j)`` is its derivative in ``x``.  ``point(0)``
    is ``h_w x`` and ``point(n)`` is ``x`` itself.
    """

    def __init__(self, tree, prefix_index):
        self.tree = tree
        self.n = tree.n
        self.size = tree.chunk_size
        self.start = prefix_index * self.size
        p = tree.prefix_len
        b = tree.b
        self.prefix = _digits(np.array(prefix_index), b, p) if p else np.zeros(0, dtype=np.int64)
        self._pts = {}
        self._der = {}
        self._d2 = {}
        r = tree.suffix_len
        y, d1, d2 = tree.levels[r]
        for j in range(p - 1, -1, -1):
            letter = tree.alphabet[self.prefix[j]]
            hy, a1, a2 = tree.base.inverse(letter, y)
            if tree.second:
                d2 = a2 * d1 * d1 + a1 * d2
            d1 = a1 * d1
            y = hy
            self._pts[j], self._der[j] = y, d1
            if tree.second:
                self._d2[j] = d2

    def _level(self, j, which):
        k = self.n - j
        arr = self.tree.levels[k][which]
        reps = self.size // arr.shape[0]
        return np.tile(arr, (reps, 1)) if reps > 1 else arr

    def point(self, j):
        if j in self._pts:
            return self._pts[j]
        return self._level(j, 0)

    def deriv(self, j):
        if j in self._der:
            return self._der[j]
        return self._level(j, 1)

    def second(self, j=0):
        if not self.tree.second:
            raise InsufficientSmoothnessError("second derivatives were not requested")
        if j in self._d2:
            return self._d2[j]
        return self._level(j, 2)

    def letter_index(self, j):
        p = self.tree.prefix_len
        if j < p:
            return np.full(self.size, self.prefix[j])
        b = self.tree.b
        return (np.arange(self.size) // b ** (self.n - 1 - j)) % b

    def letter(self, j):
        return self.tree.alphabet[self.letter_index(j)]

    def words(self):
        return np.stack([self.letter(j) for j in range(self.n)], axis=1)

    @property
    def jac(self):
        return np.abs(self.deriv(0))

    @property
    def djac(self):
        return np.sign(self.deriv(0)) * self.second(0)


class WordTree:
    """Shared suffix levels for all depth-``n`` words over ``alphabet`` at ``x``."""

    def __init__(self, base, n, x, alphabet, second=False, max_elements=CHUNK_ELEMENTS):
        self.base = base
        self.n = int(n)
        self.x = np.atleast_1d(_as_array(x))
        self.alphabet = np.asarray(alphabet)
        self.b = len(self.alphabet)
        self.second = second and base.smoothness == "C2"
        if second and not self.second:
            raise InsufficientSmoothnessError("insufficient smoothness: second derivatives need a C^2 map")
        X = self.x.size
        r = 0
        while r < self.n and self.b ** (r + 1) * X <= max_elements:
            r += 1
        self.suffix_len = r
        self.prefix_len = self.n - r
        self.chunk_size = self.b**r
        self.n_chunks = self.b**self.prefix_len
        y = self.x[None, :]
        d1 = np.ones_like(y)
        d2 = np.zeros_like(y)
        self.levels = [(y, d1, d2)]
        lt = self.alphabet[:, None, None]
        for _ in range(r):
            hy, a1, a2 = base.inverse(lt, y[None])
            if self.second:
                d2n = a2 * d1[None] ** 2 + a1 * d2[None]
            else:
                d2n = np.zeros_like(hy)
            d1 = (a1 * d1[None]).reshape(-1, X)
            d2 = d2n.reshape(-1, X)
            y = hy.reshape(-1, X)
            self.levels.append((y, d1, d2))

    def __len__(self):
        return self.b**self.n

    def chunk(self, i) -> WordChunk:
        return WordChunk(self, i)

    def map(self, fn):
        """``[fn(chunk) for chunk in chunks]`` on the worker pool, in chunk order."""
        return ordered_map(lambda i: fn(self.chunk(i)), range(self.n_chunks))


def word_tree(base, n, x, tail_tol=None, truncation=None, second=False, cap=None,
              max_elements=CHUNK_ELEMENTS):
    letters, tail = alphabet(base, n, tail_tol, truncation)
    cap = enumeration_budget() if cap is None else cap
    if len(letters) ** n > cap:
        raise EnumerationBudgetError(len(letters) ** n, cap)
    tree = WordTree(base, n, x, letters, second=second, max_elements=max_elements)
    tree.tail_bound = tail
    return tree


def sum_over_words(tree: WordTree, fn):
    """Compensated sum over all words of ``fn(chunk)`` (each ``(size, ...)``)."""
    parts = tree.map(lambda c: pairwise_sum(fn(c), axis=0))
    return neumaier_sum(parts)


def max_over_words(tree: WordTree, fn):
    parts = tree.map(lambda c: np.max(fn(c), axis=0))
    return np.maximum.reduce(parts)


# ---------------------------------------------------------------------------
# invariant density
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvariantDensity:
    """Density of the absolutely continuous invariant measure."""

    kind: str
    func: Callable
    deriv: Callable
    floor: float
    sup: float
    derivative_kind: str
    grid: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    residual: float = 0.0
    normalization_error: float = 0.0
    iterations: int = 0
    notes: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.func(x)

    def derivative(self, x):
        return self.deriv(x)

    @classmethod
    def constant(cls, c=1.0):
        return cls(
            kind="analytic",
            func=lambda x: np.full(np.shape(x), c) if np.ndim(x) else c,
            deriv=lambda x: np.zeros(np.shape(x)) if np.ndim(x) else 0.0,
            floor=c,
            sup=c,
            derivative_kind="analytic",
        )

    @classmethod
    def from_table(cls, grid, values, **kw):
        grid = np.asarray(grid, float)
        values = np.asarray(values, float)
        slope = np.diff(values) / np.diff(grid)

        def f(x):
            x = _as_array(x)
            i = np.clip(np.searchsorted(grid, x) - 1, 0, grid.size - 2)
            return values[i] + slope[i] * (x - grid[i])

        def df(x):
            x = _as_array(x)
            i = np.clip(np.searchsorted(grid, x) - 1, 0, grid.size - 2)
            return slope[i]

        ends = f(np.array([0.0, 1.0]))
        return cls(
            kind="table",
            func=f,
            deriv=df,
            floor=float(min(values.min(), ends.min())),
            sup=float(max(values.max(), ends.max())),
            derivative_kind="finite-difference",
            grid=grid,
            values=values,
            **kw,
        )


def _lebesgue_transfer(base, phi, x, letters):
    hy, d1, _ = base.inverse(letters[:, None], x[None, :])
    return neumaier_sum([pairwise_sum(np.abs(d1) * phi(hy), axis=0)])


def lebesgue_transfer(base: ExpandingMap, phi, x, tail_tol=1e-6, tail="truncate", truncation=None):
    """``sum_h J_h(x) phi(h x)`` over depth-one branches.

    ``tail="integral"`` adds an Euler-Maclaurin estimate of the omitted
    letters of a countable map (uncertified, used for residual checks).
    """
    x = np.atleast_1d(_as_array(x))
    letters, bound = alphabet(base, 1, tail_tol, truncation)
    out = _lebesgue_transfer(base, phi, x, letters)
    if base.countable and tail == "integral":
        out = out + continuous_tail(base, lambda hy, jac: jac * phi(hy), x, int(letters.max()))
    return out


def continuous_tail(base, term, x, k_max, nodes=24):
    """Estimate ``sum_{k > k_max} term(h_k x, J_k x)`` for letters varying smoothly in ``k``.

    Midpoint Euler-Maclaurin: the sum equals the integral over
    ``[k_max + 1/2, inf)`` plus ``f'(k_max + 1/2)/24`` up to higher order
    terms.  The integral is taken in ``s = 1/t`` by Gauss-Legendre.
    """
    x = np.atleast_1d(_as_array(x))
    a = k_max + 0.5
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes)
    s = (gl_x + 1.0) * 0.5 / a  # nodes in (0, 1/a)
    w = gl_w * 0.5 / a
    t = 1.0 / s
    hy, d1, _ = base.inverse(t[:, None], x[None, :])
    vals = term(hy, np.abs(d1)) * (t * t)[:, None]
    integral = pairwise_sum(w[:, None] * vals, axis=0)
    eps = 1e-3 * a
    hp, dp, _ = base.inverse(np.array([[a + eps], [a - eps]]), x[None, :])
    fp = term(hp, np.abs(dp))
    deriv = (fp[0] - fp[1]) / (2 * eps)
    return integral + deriv / 24.0


def invariant_density(base: ExpandingMap, method="analytic", resolution=1024, tol=1e-10,
                      max_iter=1000, tail_tol=1e-6) -> InvariantDensity:
    """Invariant density by closed form or by iterating the Lebesgue transfer operator.

    The returned density satisfies normalization within ``tol`` and a
    fixed-point residual ``sup |sum_h J_h phi(h x) - phi(x)| < tol`` on the
    midpoint grid; otherwise ``DensityNotConverged`` is raised.
    """
    grid = uniform_grid(resolution)
    if method == "analytic":
        phi = base.analytic_density()
        if phi is None:
            raise ValueError(f"no analytic density known for {base.name}")
        lhs = lebesgue_transfer(base, phi, grid, tail="integral", truncation=EM_TRUNCATION)
        residual = float(np.max(np.abs(lhs - phi(grid))))
        gl_x, gl_w = np.polynomial.legendre.leggauss(64)
        norm_err = abs(float(np.dot(gl_w, phi((gl_x + 1.0) * 0.5))) * 0.5 - 1.0)
        if residual >= tol:
            raise DensityNotConverged(residual, 0)
        return replace(phi, residual=residual, normalization_error=norm_err)
    if method != "operator-iteration":
        raise ValueError(f"unknown density method {method!r}")
    letters, bound = alphabet(base, 1, tail_tol)
    values = np.ones(resolution)
    residual = np.inf
    for it in range(1, max_iter + 1):
        phi = InvariantDensity.from_table(grid, values)
        new = _lebesgue_transfer(base, phi, grid, letters)
        new = new / (pairwise_sum(new) / resolution)
        residual = float(np.max(np.abs(new - values)))
        values = new
        if residual < tol:
            break
    else:
        raise DensityNotConverged(residual, max_iter)
    norm_err = abs(float(pairwise_sum(values)) / resolution - 1.0)
    return InvariantDensity.from_table(
        grid, values, residual=residual, normalization_error=norm_err, iterations=it,
        notes={"truncation_tail": bound},
    )


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseMetric:
    """Euclidean distance or the symbolic metric ``theta ** s(x, x')``.

    ``s`` is the first iterate at which the orbits visit different branches.
    """

    kind: str = "euclidean"
    theta: float = 0.5
    max_depth: int = 48
    comparability: Optional[float] = None  # declared C_1 with |x - x'| <= C_1 d(x, x')

    def __post_init__(self):
        if self.kind not in ("euclidean", "symbolic"):
            raise ValueError(f"unknown metric {self.kind!r}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")

    def distance(self, base: ExpandingMap, x, y):
        x = _as_array(x)
        y = _as_array(y)
        if self.kind == "euclidean":
            return np.abs(x - y)
        return self.theta ** separation_time(base, x, y, self.max_depth)


def _nearest_letter(base, x):
    try:
        return base.letter_of(x, margin=0.0)
    except BoundaryPointError:
        return base.letter_of(np.clip(x, 1e-15, 1 - 1e-15), margin=0.0)


def separation_time(base, x, y, max_depth=48):
    x = np.array(x, dtype=float, copy=True)
    y = np.array(y, dtype=float, copy=True)
    s = np.full(x.shape, max_depth)
    alive = np.ones(x.shape, bool)
    for j in range(max_depth):
        lx = _nearest_letter(base, np.clip(x, 1e-300, 1.0))
        ly = _nearest_letter(base, np.clip(y, 1e-300, 1.0))
        split = alive & (lx != ly)
        s[split] = j
        alive &= ~split
        if not alive.any():
            break
        x = np.clip(base.forward_branch(lx, x), 0.0, 1.0)
        y = np.clip(base.forward_branch(ly, y), 0.0, 1.0)
    return s


def comparability_constants(base, metric: BaseMetric, x, y):
    """Empirical ``max |x-x'|/d(x,x')`` and the reverse ratio ``max d/|x-x'|``."""
    d = metric.distance(base, x, y)
    e = np.abs(_as_array(x) - _as_array(y))
    return float(np.max(e / d)), float(np.max(d / e))


# ---------------------------------------------------------------------------
# expansion report
# ---------------------------------------------------------------------------


def fit_decay(ns, values):
    """Least-squares fit ``values ~ C exp(-lambda n)``; returns (C, lambda, ci95)."""
    ns = np.asarray(ns, float)
    v = np.asarray(values, float)
    keep = v > 0
    if keep.sum() < 2:
        return None
    ns, lv = ns[keep], np.log(v[keep])
    if keep.sum() == 2 or np.ptp(lv) == 0:
        slope = (lv[-1] - lv[0]) / (ns[-1] - ns[0])
        return {"C": float(math.exp(lv[0] - slope * ns[0])), "lambda": float(-slope), "ci": 0.0}
    fit = stats.linregress(ns, lv)
    tq = stats.t.ppf(0.975, len(ns) - 2)
    return {"C": float(math.exp(fit.intercept)), "lambda": float(-fit.slope), "ci": float(tq * fit.stderr)}


SLACK = 1e-6


def expansion_report(base: ExpandingMap, n_max: int, sample_count: int = 64, tail_tol: float = 2e-2,
                     seed: int = 0) -> dict:
    """Measure the expansion and distortion constants of ``base`` up to depth ``n_max``.

    Every measured quantity is an empirical lower bound on a supremum and is
    compared against the declared constant; the verdict is PASS iff none
    exceeds its declared bound.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    c = base.constants
    rng = np.random.default_rng(seed)
    x = np.sort(np.concatenate([uniform_grid(sample_count), rng.uniform(1e-6, 1 - 1e-6, sample_count)]))
    x = np.concatenate([[2 * BOUNDARY_MARGIN], x, [1 - 2 * BOUNDARY_MARGIN]])
    smooth = base.smoothness == "C2"
    rows = []
    violations = []
    a = c.alpha
    k_fixed = choose_truncation(base, 1, tail_tol) if base.countable else None
    for n in range(1, n_max + 1):
        tree = word_tree(base, n, x, truncation=k_fixed, second=smooth)

        def per_chunk(ch):
            dh = np.abs(ch.deriv(0))
            logj = np.log(dh)
            dx = np.diff(x)
            dist = np.max(np.abs(np.diff(logj, axis=1)) / dx**a)
            jnorm = dh.max(axis=1) + np.max(np.abs(np.diff(dh, axis=1)) / dx**a, axis=1)
            out = {"dh": float(dh.max()), "dist": float(dist), "jnorm": float(pairwise_sum(jnorm))}
            if smooth:
                out["dj"] = pairwise_sum(np.abs(ch.djac), axis=0)
            return out

        parts = tree.map(per_chunk)
        row = {
            "n": n,
            "words": len(tree),
            "max_abs_Dh": max(p["dh"] for p in parts),
            "bound_Dh": c.expansion_const * math.exp(-c.expansion_rate * n),
            "distortion": max(p["dist"] for p in parts),
            "sum_jacobian_norm": float(math.fsum(p["jnorm"] for p in parts)),
            "truncation_tail": tree.tail_bound,
        }
        if smooth:
            row["sup_sum_abs_DJ"] = float(np.max(neumaier_sum([p["dj"] for p in parts])))
        rows.append(row)
        if row["max_abs_Dh"] > row["bound_Dh"] * (1 + SLACK):
            violations.append(f"sup|Dh| <= C_lambda*exp(-lambda*n) violated at n={n}")
        if row["distortion"] > c.distortion * (1 + SLACK) + 1e-12:
            violations.append(f"|log J_h(x)-log J_h(x')|/|x-x'|^alpha <= C_J violated at n={n}")
        if row["sum_jacobian_norm"] > c.jacobian_norm_sum * (1 + SLACK):
            violations.append(f"sum_h ||J_h||_alpha <= C_J' violated at n={n}")
        if smooth and c.jacobian_derivative_sum is not None:
            if row["sup_sum_abs_DJ"] > c.jacobian_derivative_sum * (1 + SLACK) + 1e-12:
                violations.append(f"sum_h |DJ_h| <= C_d violated at n={n}")
    fit = fit_decay([r["n"] for r in rows], [r["max_abs_Dh"] for r in rows])
    if fit is not None and not fit["lambda"] > 0:
        violations.append("fitted expansion exponent is not positive")
    return {
        "map": base.name,
        "declared": {
            "lambda": c.expansion_rate,
            "C_lambda": c.expansion_const,
            "C_J": c.distortion,
            "C_J_prime": c.jacobian_norm_sum,
            "C_d": c.jacobian_derivative_sum,
            "alpha": c.alpha,
            "certified": c.certified,
        },
        "empirical_flag": "measured values are sampled lower bounds of suprema",
        "rows": rows,
        "fitted": fit,
        "violations": violations,
        "verdict": "PASS" if not violations else "FAIL",
    }
