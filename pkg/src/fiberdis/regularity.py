"""Quantitative checks of the Hölder and C^1 regularity of ``vbar``.

Every measured supremum is an empirical lower bound.  Verdicts compare
them against declared upper bounds (safe direction), or, where no constant
is available in closed form, test uniform boundedness across ``n``: the
maximum over the second half of ``n_list`` may not exceed twice the maximum
over the first half.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .base_dynamics import (
    BOUNDARY_MARGIN,
    BaseMetric,
    InsufficientSmoothnessError,
    fit_decay,
    neumaier_sum,
    pairwise_sum,
    word_tree,
)
from .disintegration import apply_Mn
from .eta_measure import observable
from .parallel import ordered_map
from .skew_product import SkewProduct, iterate_chunk, sample_truncation
from .transfer import as_function

SLACK = 1e-6
FD_STEP = 1e-5
WORD_BUDGET = 1 << 16


class NotHolderAdmissible(ValueError):
    def __init__(self):
        super().__init__("observable not Hölder-admissible: its declared norm is not finite")


@dataclass(frozen=True)
class RegularityReport:
    suite: str
    system: str
    observable: str
    params: dict
    tables: list
    fitted: dict
    declared: dict
    verdict: str
    items: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def uniformly_bounded(ns, values):
    """``max over the second half of ns <= 2 * max over the first half``."""
    ns = list(ns)
    values = np.asarray(values, float)
    half = len(ns) // 2
    if half == 0:
        return bool(np.all(np.isfinite(values)))
    first = float(np.max(values[:half]))
    second = float(np.max(values[half:]))
    return bool(np.isfinite(second) and second <= 2.0 * first + 1e-300) or second == 0.0


# ---------------------------------------------------------------------------
# Hölder seminorm
# ---------------------------------------------------------------------------


def pair_stream(count, seed=0, margin=BOUNDARY_MARGIN, scales=30):
    """Deterministic stream of point pairs in the open unit interval.

    Structured dyadic pairs come first (anchored at both boundary margins
    and at four interior points), then random pairs with dyadic and uniform
    separations.  Longer streams extend shorter ones, so the seminorm
    estimate is monotone in ``count``.
    """
    lo, hi = margin, 1.0 - margin
    struct = []
    for k in range(1, scales + 1):
        d = 2.0**-k
        struct.append((lo, lo + d))
        struct.append((hi - d, hi))
        for a in (0.1875, 0.4375, 0.6875, 0.9375):
            struct.append((a - d / 2 if a - d / 2 > lo else a, min(a + d / 2, hi)))
    struct = np.array(struct)
    if count <= len(struct):
        return struct[:count, 0], struct[:count, 1]
    m = count - len(struct)
    r = np.random.default_rng(seed).random((m, 3))
    x = lo + (hi - lo) * r[:, 0]
    sep = np.where(r[:, 2] < 0.5, 2.0 ** -(1 + 29 * r[:, 1]), r[:, 1])
    y = x + sep
    y = np.where(y < hi, y, x - sep)
    y = np.clip(y, lo, hi)
    x = np.concatenate([struct[:, 0], x])
    y = np.concatenate([struct[:, 1], y])
    return x, y


def _quotients(fx, fy, d, alpha):
    keep = d > 0
    return np.abs(fx - fy)[..., keep] / d[keep] ** alpha


def holder_seminorm(f, alpha: float = 1.0, metric: Optional[BaseMetric] = None, pair_samples: int = 1000,
                    seed: int = 0, base=None) -> float:
    """Lower bound ``max |f(x) - f(x')| / d(x, x')^alpha`` over sampled pairs."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    metric = metric or BaseMetric()
    if metric.kind == "symbolic" and base is None:
        raise ValueError("the symbolic metric needs the base map")
    x, y = pair_stream(pair_samples, seed)
    if hasattr(f, "grid") and getattr(f, "func", None) is None:
        g = f.grid
        xi = np.clip(np.searchsorted(g, x), 0, g.size - 1)
        yi = np.clip(np.searchsorted(g, y), 0, g.size - 1)
        x, y = g[xi], g[yi]
    fn = as_function(f)
    vals = np.asarray(fn(np.concatenate([x, y])), float)
    d = metric.distance(base, x, y)
    q = _quotients(vals[: x.size], vals[x.size :], d, alpha)
    return float(q.max()) if q.size else 0.0


def holder_suite(skew: SkewProduct, density, v, alpha: float = 1.0, n_list=range(1, 11),
                 pair_samples: int = 1000, seed: int = 0, norm: Optional[float] = None) -> RegularityReport:
    """Per-``n`` same-branch fiber Lipschitz constant, branch-wise seminorms and the ``M_n v`` norm ratio.

    ``norm`` overrides the observable's own ``B_alpha`` norm in the ratio.
    """
    v = observable(v, skew)
    vnorm = v.holder_norm(alpha) if norm is None else float(norm)
    if not np.isfinite(vnorm):
        raise NotHolderAdmissible()
    metric = skew.metric
    x, y = pair_stream(pair_samples, seed)
    pts = np.concatenate([x, y])
    P = x.size
    d = metric.distance(skew.base, x, y)
    keep = d > 0
    da = d[keep] ** alpha
    z0 = skew.fiber.base_point
    zs = [skew.fiber.z_min, z0, skew.fiber.z_max]
    trunc = sample_truncation(skew)
    rows = []
    for n in n_list:
        tree = word_tree(skew.base, n, pts, truncation=trunc)

        def per_chunk(ch):
            out = {"lip": 0.0}
            for z in zs:
                zn, _, _ = iterate_chunk(skew, ch, z)
                hx_diff = np.abs(zn[:, :P] - zn[:, P:])[:, keep] / d[keep]
                out["lip"] = max(out["lip"], float(hx_diff.max()) if hx_diff.size else 0.0)
                if z == z0:
                    bn = v(np.broadcast_to(pts, zn.shape), zn)
            phih = density(ch.point(0))
            branch = phih * bn
            q = np.abs(branch[:, :P] - branch[:, P:])[:, keep] / da
            out["branch_seminorm"] = float(q.max()) if q.size else 0.0
            out["msum"] = pairwise_sum(np.abs(ch.deriv(0)) * phih * bn, axis=0)
            return out

        parts = tree.map(per_chunk)
        mn = neumaier_sum([p["msum"] for p in parts]) / density(pts)
        semi = _quotients(mn[:P], mn[P:], d, alpha)
        semi = float(semi.max()) if semi.size else 0.0
        sup = float(np.max(np.abs(mn)))
        rows.append({
            "n": int(n),
            "branch_lipschitz": max(p["lip"] for p in parts),
            "max_branch_seminorm": max(p["branch_seminorm"] for p in parts),
            "seminorm_Mn": semi,
            "sup_Mn": sup,
            "ratio": (sup + semi) / vnorm if vnorm > 0 else 0.0,
        })
    ns = [r["n"] for r in rows]
    ratios = [r["ratio"] for r in rows]
    bounded = uniformly_bounded(ns, ratios)
    declared = {"branch_lipschitz": skew.declared.get("branch_lipschitz"), "observable_norm": vnorm}
    lip_ok = declared["branch_lipschitz"] is None or max(r["branch_lipschitz"] for r in rows) <= declared["branch_lipschitz"] * (1 + SLACK)
    items = {
        "ratio_uniformly_bounded": "PASS" if bounded else "FAIL",
        "branch_lipschitz_declared_bound": "PASS" if lip_ok else "FAIL",
    }
    return RegularityReport(
        suite="holder",
        system=skew.name,
        observable=v.text,
        params={"alpha": alpha, "n_list": ns, "pair_samples": pair_samples, "metric": metric.kind},
        tables=rows,
        fitted={},
        declared=declared,
        verdict="PASS" if bounded and lip_ok else "FAIL",
        items=items,
        metadata={"seed": seed, "pairs": int(keep.sum()), "excluded_pairs": int((~keep).sum()),
                  "margin": BOUNDARY_MARGIN,
                  "pairing": "both points share the inverse branch; fiber values are continuous along it"},
    )


# ---------------------------------------------------------------------------
# C^1: analytic derivative of M_n v
# ---------------------------------------------------------------------------


def _require_smooth(skew, v):
    if not skew.smooth:
        raise InsufficientSmoothnessError(f"insufficient smoothness: {skew.name} is not C^2 base with C^1 fiber")
    if not v.smooth:
        raise InsufficientSmoothnessError("insufficient smoothness: observable has no gradient")


def _dmn_parts(skew, density, v, n, x, z0):
    tree = word_tree(skew.base, n, x, second=True, truncation=sample_truncation(skew))
    phix = density(x)
    dphix = density.derivative(x)

    def per_chunk(ch):
        hx = ch.point(0)
        dh = ch.deriv(0)
        jac = np.abs(dh)
        djac = np.sign(dh) * ch.second(0)
        phih = density(hx)
        rho = phih * jac / phix
        drho = (density.derivative(hx) * dh * jac + phih * djac) / phix - phih * jac * dphix / phix**2
        zn, a, _ = iterate_chunk(skew, ch, z0, derivs=True)
        xb = np.broadcast_to(x, zn.shape)
        b = v(xb, zn)
        du, ds = v.gradient(xb, zn)
        db = du + ds * a
        return np.stack([drho * b + rho * db, rho * b], axis=1)

    parts = tree.map(lambda c: pairwise_sum(per_chunk(c), axis=0))
    s = neumaier_sum(parts)
    return s[0], s[1]


def analytic_DMn(skew: SkewProduct, density, v, n: int, x, z0=None):
    """Exact ``D(M_n v)(x)`` by the product rule over branch weights and ``B_n``.

    ``D rho_h = [Dphi(hx) Dh J_h + phi(hx) DJ_h]/phi(x) - phi(hx) J_h Dphi(x)/phi(x)^2``
    and ``DB_n = D_u v + D_s v * D_uG_n(hx, z0) Dh(x)``.
    """
    v = observable(v, skew)
    _require_smooth(skew, v)
    z0 = skew.fiber.base_point if z0 is None else float(z0)
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, float))
    d, _ = _dmn_parts(skew, density, v, n, xa, z0)
    return float(d[0]) if scalar else d


def fd_check(skew, density, v, n, x, step=FD_STEP):
    """Central differences at ``step`` and ``2 step`` plus the Richardson combination."""
    xa = np.atleast_1d(np.asarray(x, float))
    pts = np.concatenate([xa + step, xa - step, xa + 2 * step, xa - 2 * step])
    m = apply_Mn(skew, density, v, n, pts).values.reshape(4, -1)
    d1 = (m[0] - m[1]) / (2 * step)
    d2 = (m[2] - m[3]) / (4 * step)
    return d1, d2, (4 * d1 - d2) / 3


def relative_error(a, b, floor):
    return np.abs(a - b) / np.maximum(np.abs(a), floor)


def c1_suite(skew: SkewProduct, density, v, n_list=range(1, 13), sample_count: int = 100, seed: int = 0,
             z_grid: int = 9) -> RegularityReport:
    """FD agreement, the D_uG decay and z-Lipschitz constants, the DJ sum and the C^1 ratio per ``n``."""
    v = observable(v, skew)
    _require_smooth(skew, v)
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.01, 0.99, sample_count))
    zgrid = np.linspace(skew.fiber.z_min, skew.fiber.z_max, z_grid)
    z0 = skew.fiber.base_point
    lam = skew.declared.get("du_decay_rate", skew.base.constants.expansion_rate)
    # denominators of the C^1 ratio: sup over the fiber of |v| and |Dv|
    X, Z = np.meshgrid(x, np.linspace(skew.fiber.z_min, skew.fiber.z_max, 33), indexing="ij")
    gx, gz = v.gradient(X, Z)
    denom = np.max(np.abs(v(X, Z)), axis=1) + np.max(np.hypot(gx, gz), axis=1)
    floor = 1e-6 * float(v.sup_norm + np.max(np.hypot(gx, gz)))
    rows = []
    du_table = []
    for n in n_list:
        analytic, _ = _dmn_parts(skew, density, v, n, x, z0)
        fd1, fd2, rich = fd_check(skew, density, v, n, x)
        rel = float(np.max(relative_error(analytic, fd1, floor)))
        rich_rel = float(np.max(relative_error(analytic, rich, floor)))
        # D_uG decay, its z-Lipschitz quotient and sum |DJ_h| over the word tree at x times z-grid
        xx = np.repeat(x, z_grid)
        zz = np.tile(zgrid, x.size)
        tree = word_tree(skew.base, n, xx, second=True, truncation=sample_truncation(skew))

        def per_chunk(ch):
            _, _, _, hist = iterate_chunk(skew, ch, zz, derivs=True, record=True)
            a_m = np.array([float(np.max(np.abs(h[1]))) for h in hist[1:]])
            an = hist[-1][1].reshape(ch.size, x.size, z_grid)
            dz = zgrid[1:] - zgrid[:-1]
            qb = float(np.max(np.abs(np.diff(an, axis=2)) / dz)) if z_grid > 1 else 0.0
            dj = pairwise_sum(np.abs(np.sign(ch.deriv(0)) * ch.second(0))[:, ::z_grid], axis=0)
            return a_m, qb, dj

        parts = tree.map(per_chunk)
        a_m = np.max(np.stack([p[0] for p in parts]), axis=0)
        qb = max(p[1] for p in parts)
        dj = float(np.max(neumaier_sum([p[2] for p in parts])))
        ms = np.arange(1, n + 1)
        scaled = a_m / np.exp(-lam * (n - ms))
        for m, val in zip(ms, a_m):
            du_table.append({"n": int(n), "m": int(m), "max_DuGm_Dh": float(val), "scaled": float(val / math.exp(-lam * (n - m)))})
        rows.append({
            "n": int(n),
            "fd_rel_err": rel,
            "richardson_rel_err": rich_rel,
            "gradient_flag": bool(rich_rel > 1e-4),
            "du_decay_C": float(scaled.max()),
            "du_z_quotient": qb,
            "du_z_C": qb / math.exp(-lam * n),
            "sum_abs_DJ": dj,
            "ratio": float(np.max(np.abs(analytic) / denom)),
        })
    ns = [r["n"] for r in rows]
    du_c = max(r["du_decay_C"] for r in rows)
    declared = {
        "du_decay_C": skew.declared.get("du_decay_C"),
        "lambda": lam,
        "C_d": skew.base.constants.jacobian_derivative_sum,
    }
    items = {}
    items["fd_agreement"] = "PASS" if max(r["fd_rel_err"] for r in rows) <= 1e-5 else "FAIL"
    if declared["du_decay_C"] is not None:
        items["du_decay"] = "PASS" if du_c <= declared["du_decay_C"] * (1 + SLACK) + 1e-15 else "FAIL"
    else:
        items["du_decay"] = "PASS" if uniformly_bounded(ns, [r["du_decay_C"] for r in rows]) else "FAIL"
    items["du_z_lipschitz"] = "PASS" if uniformly_bounded(ns, [r["du_z_C"] for r in rows]) else "FAIL"
    cd = declared["C_d"]
    items["sum_DJ"] = "PASS" if cd is None or max(r["sum_abs_DJ"] for r in rows) <= cd * (1 + SLACK) + 1e-15 else "FAIL"
    items["ratio_uniformly_bounded"] = "PASS" if uniformly_bounded(ns, [r["ratio"] for r in rows]) else "FAIL"
    fit = fit_decay([t["n"] - t["m"] for t in du_table], [t["max_DuGm_Dh"] for t in du_table])
    return RegularityReport(
        suite="c1",
        system=skew.name,
        observable=v.text,
        params={"n_list": ns, "sample_count": sample_count, "z_grid": z_grid, "fd_step": FD_STEP},
        tables=rows + [{"du_decay": du_table}],
        fitted={"du_decay": fit, "du_decay_C": du_c},
        declared=declared,
        verdict="PASS" if all(s == "PASS" for s in items.values()) else "FAIL",
        items=items,
        metadata={"seed": seed},
    )


# ---------------------------------------------------------------------------
# decay of DK_{n,m}
# ---------------------------------------------------------------------------


def dk_terms(skew, v, chunk, m, n, z0):
    """``J1, J2', J2'', J3`` for all words ``l`` of the chunk (depth ``n + m``), ``h = l[m:]``."""
    x = chunk.tree.x
    zm, am, _ = iterate_chunk(skew, chunk, z0, start=0, stop=m, derivs=True)
    g0, a0, _ = iterate_chunk(skew, chunk, z0, start=m, stop=m + n, derivs=True)
    gz, az, sz = iterate_chunk(skew, chunk, zm, start=m, stop=m + n, derivs=True)
    xb = np.broadcast_to(x, g0.shape)
    du0, ds0 = v.gradient(xb, g0)
    duz, dsz = v.gradient(xb, gz)
    j1 = du0 - duz
    j2a = (ds0 - dsz) * a0
    j2b = dsz * (a0 - az)
    j3 = dsz * sz * am
    return j1, j2a, j2b, j3, a0 - az


def k_value(skew, v, chunk, m, n, z0):
    """``K_{n,m}(l x) = v(x, G_n(hx, z0)) - v(x, G_{n+m}(l x, z0))``."""
    x = chunk.tree.x
    g0, _, _ = iterate_chunk(skew, chunk, z0, start=m, stop=m + n)
    gl, _, _ = iterate_chunk(skew, chunk, z0, start=0, stop=m + n)
    xb = np.broadcast_to(x, g0.shape)
    return v(xb, g0) - v(xb, gl)


def _chunk_subset(tree, budget, seed):
    if len(tree) <= budget:
        return list(range(tree.n_chunks)), False
    keep = max(1, budget // tree.chunk_size)
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, tree.n_chunks, keep + 1).astype(int)
    return [int(rng.integers(a, b)) for a, b in zip(edges[:-1], edges[1:]) if b > a], True


def dK_decay_suite(skew: SkewProduct, density, v, n_list=(2, 10), m_list=(1, 5), sample_count: int = 32,
                   seed: int = 0, word_budget: int = WORD_BUDGET) -> RegularityReport:
    """Max of ``|DK_{n,m}(l x) Dl(x)|`` and of each term, per ``(n, m)``.

    Above ``word_budget`` words a stratified subsample of word prefixes is
    used (one random block per stratum, seeded).
    """
    v = observable(v, skew)
    _require_smooth(skew, v)
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.01, 0.99, sample_count))
    z0 = skew.fiber.base_point
    vc1 = v.sup_norm + float(np.max(np.hypot(*v.gradient(*np.meshgrid(x, np.linspace(skew.fiber.z_min, skew.fiber.z_max, 33))))))
    rows = []
    for m in m_list:
        for n in n_list:
            tree = word_tree(skew.base, n + m, x, truncation=sample_truncation(skew),
                             max_elements=min(1 << 20, max(x.size, word_budget * x.size // 4)))
            idx, sub = _chunk_subset(tree, word_budget, seed + 1000 * m + n)

            def per_chunk(i):
                j1, j2a, j2b, j3, da = dk_terms(skew, v, tree.chunk(i), m, n, z0)
                total = j1 + j2a + j2b - j3
                return [float(np.max(np.abs(t))) for t in (total, j1, j2a, j2b, j3, da)]

            res = np.max(np.array(ordered_map(per_chunk, idx)), axis=0)
            rows.append({
                "n": int(n), "m": int(m), "max_DK": res[0], "J1": res[1], "J2_prime": res[2],
                "J2_double_prime": res[3], "J3": res[4], "max_DuG_difference": res[5],
                "words_used": len(idx) * tree.chunk_size, "words_total": len(tree), "subsampled": sub,
            })
    verdicts = {}
    for m in m_list:
        sel = [r for r in rows if r["m"] == m]
        lo = min(sel, key=lambda r: r["n"])
        hi = max(sel, key=lambda r: r["n"])
        ok = hi["max_DK"] < 0.05 * lo["max_DK"] or (hi["max_DK"] == 0.0 and lo["max_DK"] == 0.0)
        verdicts[f"m={m}"] = "PASS" if ok else "FAIL"
    chain = all(r["J2_double_prime"] <= vc1 * r["max_DuG_difference"] * (1 + SLACK) + 1e-300 for r in rows)
    verdicts["J2_double_prime_chain"] = "PASS" if chain else "FAIL"
    return RegularityReport(
        suite="dk",
        system=skew.name,
        observable=v.text,
        params={"n_list": list(n_list), "m_list": list(m_list), "sample_count": sample_count, "word_budget": word_budget},
        tables=rows,
        fitted={},
        declared={"v_C1_norm": vc1},
        verdict="PASS" if all(s == "PASS" for s in verdicts.values()) else "FAIL",
        items=verdicts,
        metadata={"seed": seed},
    )
