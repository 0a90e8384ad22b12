"""Suspended observables ``v(x, z, u)`` over a roof ``R(x)`` and their quotients.

For each height ``u`` the slice ``v^u(x, z) = v(x, z, u)`` is an ordinary fiber
observable, and ``vbar(x, u) = lim M_n v^u (x)``.  Because ``M_n`` only reads
``v`` at ``(x, G_n(hx, z0), u)`` the result does not depend on how ``v^u`` is
extended off the domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import expression as ex
from .base_dynamics import uniform_grid
from .disintegration import quotient_observable
from .eta_measure import FiberObservable, observable
from .regularity import NotHolderAdmissible, RegularityReport, holder_suite, uniformly_bounded
from .skew_product import SkewProduct

U_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


class SuspensionDomainError(ValueError):
    pass


@dataclass(frozen=True)
class RoofFunction:
    """A positive roof depending on the base coordinate only."""

    func: Callable
    text: str
    inf: float
    sup: float
    lip: float

    def __call__(self, x):
        return self.func(x)

    @property
    def margin(self):
        return 1e-6 * self.inf


def roof(spec, inf: Optional[float] = None, samples: int = 4097) -> RoofFunction:
    """Parse a roof from an expression in ``x``; ``inf`` is sampled unless declared."""
    e = ex.parse_expr(spec) if isinstance(spec, str) else spec
    if ex.free_variables(e) - {"x"}:
        raise ValueError("roof must depend on x only (constant along stable leaves)")
    text = ex.to_text(e)

    def f(x):
        x = np.asarray(x, float)
        return np.broadcast_to(ex.eval_expr(e, x=x), x.shape).astype(float)

    xs = np.linspace(0.0, 1.0, samples)
    vals = f(xs)
    lo = float(vals.min())
    if inf is not None:
        if lo < inf:
            raise ValueError(f"roof dips to {lo!r} below declared inf {inf!r}")
        lo = float(inf)
    if not lo > 0:
        raise ValueError("roof must be bounded below by a positive constant")
    lip = float(np.max(np.abs(np.diff(vals)) / np.diff(xs)))
    return RoofFunction(f, text, lo, float(vals.max()), lip)


@dataclass(frozen=True)
class SuspendedObservable:
    """``v(x, z, u)`` on ``0 <= u <= R(x)``, from an expression or a callable."""

    func: Callable
    text: str = "<callable>"
    expr: Optional[object] = None
    lip_z: Optional[float] = None

    def __call__(self, x, z, u):
        return self.func(x, z, u)

    def frozen(self, u: float, skew: SkewProduct) -> FiberObservable:
        """The slice ``v^u`` as a fiber observable."""
        if self.expr is not None:
            return observable(ex.substitute(self.expr, "u", u), skew, lip_z=self.lip_z)
        lo, hi = skew.fiber.z_min, skew.fiber.z_max
        xs = np.concatenate([[1e-9], uniform_grid(257), [1 - 1e-9]])
        zs = np.linspace(lo, hi, 65)
        X, Z = np.meshgrid(xs, zs, indexing="ij")
        vals = np.asarray(self.func(X, Z, u), float)

        def f(x, z, u=u):
            x, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(z, float))
            return np.broadcast_to(self.func(x, z, u), x.shape)

        lz = float(np.max(np.abs(np.diff(vals, axis=1)) / np.diff(zs))) if self.lip_z is None else self.lip_z
        return FiberObservable(
            func=f,
            text=f"{self.text} at u={u!r}",
            sup_norm=float(np.max(np.abs(vals))),
            lip_z=lz,
            lip_x=float(np.max(np.abs(np.diff(vals, axis=0)) / np.diff(xs)[:, None])),
            lip_z_source="sampled" if self.lip_z is None else "declared",
            z_free=bool(np.all(np.ptp(vals, axis=1) == 0)),
            z_interval=(lo, hi),
        )


def suspended_observable(spec, lip_z=None) -> SuspendedObservable:
    if isinstance(spec, SuspendedObservable):
        return spec
    if callable(spec) and not isinstance(spec, ex.NODE_TYPES):
        return SuspendedObservable(spec, lip_z=lip_z)
    e = ex.parse_expr(spec) if isinstance(spec, str) else spec
    extra = ex.free_variables(e) - {"x", "z", "u"}
    if extra:
        raise ValueError(f"unknown variables {sorted(extra)}")

    def f(x, z, u):
        x, z, u = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, z, u)))
        return np.broadcast_to(ex.eval_expr(e, x=x, z=z, u=u), x.shape)

    return SuspendedObservable(f, ex.to_text(e), e, lip_z)


@dataclass(frozen=True)
class SuspensionQuotient:
    x: np.ndarray
    u: np.ndarray
    values: np.ndarray
    error: np.ndarray
    depth: tuple

    def rows(self):
        out = []
        for i, x in enumerate(self.x):
            for j, u in enumerate(self.u):
                out.append({"x": float(x), "u": float(u), "vbar": float(self.values[i, j]),
                            "error_bound": float(self.error[i, j])})
        return out


def u_levels(R: RoofFunction, fractions=U_FRACTIONS):
    """Heights shared by every column: fractions of ``inf R - margin``."""
    return np.asarray(fractions, float) * (R.inf - R.margin)


def check_domain(R: RoofFunction, x, u):
    x = np.asarray(x, float)
    top = R(x) - R.margin
    for level in np.atleast_1d(u):
        bad = (level < 0) | (level > top)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise SuspensionDomainError(f"outside suspension domain: u = {float(level)!r} at x = {float(x[i])!r}")


def suspension_quotient(skew: SkewProduct, density, R, v, u_grid=None, tol: float = 1e-6, x_grid=None,
                        z0=None) -> SuspensionQuotient:
    """``vbar(x, u)`` by the frozen-``u`` quotient at each height.

    Heights with a ``z``-independent slice return the slice itself, since
    every ``eta_x`` is a probability measure.
    """
    R = roof(R) if not isinstance(R, RoofFunction) else R
    v = suspended_observable(v)
    grid = uniform_grid(64) if x_grid is None else np.asarray(x_grid, float)
    us = u_levels(R) if u_grid is None else np.asarray(u_grid, float)
    check_domain(R, grid, us)
    vals = np.empty((grid.size, us.size))
    err = np.empty_like(vals)
    depth = []
    for j, u in enumerate(us):
        vu = v.frozen(float(u), skew)
        if vu.z_free:
            vals[:, j] = vu(grid, np.zeros_like(grid))
            err[:, j] = 0.0
            depth.append(0)
            continue
        q = quotient_observable(skew, density, vu, tol, x_grid=grid, z0=z0)
        vals[:, j] = q.values
        err[:, j] = q.error
        depth.append(q.n)
    return SuspensionQuotient(grid, us, vals, err, tuple(depth))


def suspension_holder_suite(skew: SkewProduct, density, R, v, alpha: float = 1.0, n_list=range(1, 11),
                            pair_samples: int = 1000, seed: int = 0, fractions=U_FRACTIONS) -> RegularityReport:
    """Same-``u`` Hölder suite at several heights.

    Ratios are normalised by the suspended norm, the largest slice norm.
    """
    R = roof(R) if not isinstance(R, RoofFunction) else R
    v = suspended_observable(v)
    us = u_levels(R, fractions)
    slices = [v.frozen(float(u), skew) for u in us]
    norms = [s.holder_norm(alpha) for s in slices]
    if not all(np.isfinite(norms)):
        raise NotHolderAdmissible()
    norm = max(norms)
    rows = []
    verdicts = {}
    for u, s in zip(us, slices):
        rep = holder_suite(skew, density, s, alpha, n_list, pair_samples, seed, norm=norm)
        for r in rep.tables:
            rows.append(dict(r, u=float(u)))
        verdicts[f"u={float(u):.6g}"] = rep.verdict
    ns = list(n_list)
    per_n = [max(r["ratio"] for r in rows if r["n"] == n) for n in ns]
    verdicts["uniform_in_u"] = "PASS" if uniformly_bounded(ns, per_n) else "FAIL"
    return RegularityReport(
        suite="suspension-holder",
        system=skew.name,
        observable=v.text,
        params={"alpha": alpha, "n_list": ns, "pair_samples": pair_samples, "u_levels": [float(u) for u in us],
                "roof": R.text},
        tables=rows,
        fitted={},
        declared={"suspended_norm": norm, "roof_inf": R.inf, "roof_lip": R.lip},
        verdict="PASS" if all(x == "PASS" for x in verdicts.values()) else "FAIL",
        items=verdicts,
        metadata={"seed": seed, "margin": R.margin},
    )
