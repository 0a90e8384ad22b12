"""The acceptance suite run by ``fiberdis verify``.

Each criterion returns a pass flag and a detail dictionary, which is written
as a JSON artifact.  Artifacts contain no timings or thread counts, so equal
seeds give equal bytes.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import expression as ex
from .base_dynamics import invariant_density
from .catalog import TWO_PI_OVER_5, get_system
from .disintegration import apply_Mn, backward_sampling_oracle, disintegration_residual
from .eta_measure import eta_value
from .parallel import threads
from .regularity import analytic_DMn, c1_suite, dK_decay_suite, fd_check, holder_suite, relative_error
from .report import emit_report
from .skew_product import branch_lipschitz_constant
from .suspension import suspension_quotient
from .transfer import apply_transfer, sup_estimate


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:2d}: {self.name}"


@lru_cache(maxsize=None)
def _system(name):
    return get_system(name)


@lru_cache(maxsize=None)
def _density(base_name):
    sk = {"doubling": "doubling-pure", "gauss": "gauss-affine"}[base_name]
    return invariant_density(_system(sk).base)


def _phi(skew):
    return _density(skew.base.name)


@lru_cache(maxsize=None)
def _c1(system, v):
    sk = _system(system)
    return c1_suite(sk, _phi(sk), v, range(1, 13), sample_count=32)


@lru_cache(maxsize=None)
def _holder(system, v):
    sk = _system(system)
    return holder_suite(sk, _phi(sk), v, 1.0, range(1, 13), pair_samples=1000)


def random_expression(rng, depth=3) -> str:
    """A random smooth expression in ``x`` that is finite on ``[0, 1]``."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.6:
            return "x"
        return repr(round(float(rng.uniform(-2, 2)), 3))
    kind = rng.integers(0, 6)
    a = random_expression(rng, depth - 1)
    if kind == 0:
        return f"({a} + {random_expression(rng, depth - 1)})"
    if kind == 1:
        return f"({a} - {random_expression(rng, depth - 1)})"
    if kind == 2:
        return f"({a} * {random_expression(rng, depth - 1)})"
    if kind == 3:
        return f"{['sin', 'cos'][rng.integers(0, 2)]}({int(rng.integers(1, 4))}*pi*{a})"
    if kind == 4:
        return f"exp({a}/4)"
    return f"({a})^{int(rng.integers(2, 4))}"


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def c01_digit_oracle(seed):
    sk = _system("doubling-digit")
    phi = _phi(sk)
    exact = (1 - 9.0**-10) / 8
    m = apply_Mn(sk, phi, "z^2", 10)
    dev = float(np.max(np.abs(m.values - exact)))
    eta = eta_value(sk, phi, "z^2", tol=1e-4, n_cap=12)
    lo, hi = eta.bracket
    ok = dev <= 1e-12 and lo <= 0.125 <= hi and hi - lo < 1e-4
    return ok, {"max_dev_Mn10": dev, "oracle": exact, "bracket": [lo, hi], "n": eta.trace[-1].n}


def c02_cancellation(seed):
    sk = _system("doubling-cos")
    phi = _phi(sk)
    m1 = float(np.max(np.abs(apply_Mn(sk, phi, "z", 1).values)))
    eta = eta_value(sk, phi, "z", tol=1e-4)
    rows = []
    ok = m1 < 1e-14
    for est in eta.trace:
        bound = 2 * 3.0**-est.n + est.quad_err
        good = est.lower <= 0 <= est.upper or min(abs(est.lower), abs(est.upper)) <= est.quad_err
        good = good and est.width <= bound
        ok = ok and good
        rows.append(dict(est.row(), bound=bound, ok=good))
    return ok, {"max_abs_M1": m1, "trace": rows}


def c03_operator_identities(seed):
    rng = np.random.default_rng(seed)
    exprs = [random_expression(rng) for _ in range(20)]
    detail = {"expressions": exprs, "doubling": [], "gauss": []}
    ok = True
    grid = np.linspace(0.01, 0.99, 99)
    for name, tol, trunc in (("doubling", 1e-10, None), ("gauss", 2e-3, 1000)):
        sk = _system("doubling-pure" if name == "doubling" else "gauss-affine")
        base, phi = sk.base, _phi(sk)
        for text in exprs:
            e = ex.parse_expr(text)
            w = lambda x, e=e: np.broadcast_to(ex.eval_expr(e, x=np.asarray(x, float)), np.shape(x)).astype(float)
            uw = lambda y, w=w: w(base.forward(np.asarray(y, float), 0.0)[0])
            sup = sup_estimate(w)
            lu = apply_transfer(base, phi, uw, 1, grid=grid, truncation=trunc).values
            res = float(np.max(np.abs(lu - w(grid)))) / max(sup, 1e-300)
            lw = float(np.max(np.abs(apply_transfer(base, phi, w, 1, grid=grid, truncation=trunc).values)))
            good = res <= tol and lw <= sup * (1 + 1e-9)
            ok = ok and good
            detail[name].append({"expr": text, "LU_residual": res, "sup_Lv": lw, "sup_v": sup, "ok": good})
    ones = []
    for n in range(1, 13):
        for s in ("doubling-cos", "doubling-digit"):
            sk = _system(s)
            dev = float(np.max(np.abs(apply_Mn(sk, _phi(sk), "1", n).values - 1)))
            ones.append({"system": s, "n": n, "max_dev": dev})
            ok = ok and dev <= 1e-12
    detail["Mn_one"] = ones
    return ok, detail


def c04_disintegration(seed):
    rows = []
    ok = True
    for s in ("doubling-cos", "doubling-digit"):
        sk = _system(s)
        for v in ("z", "z^2", "z*cos(2*pi*x)", "sin(2*pi*x) + x^2"):
            res, allow = disintegration_residual(sk, _phi(sk), v, tol=1e-4)
            rows.append({"system": s, "observable": v, "residual": res, "allowance": allow})
            ok = ok and res <= allow
    return ok, {"rows": rows}


MC_TRIPLES = (
    ("doubling-digit", "z^2", 0.3),
    ("doubling-digit", "z", 0.7),
    ("doubling-digit", "exp(z)", 0.123),
    ("doubling-digit", "z^3 + x", 0.9),
    ("doubling-cos", "z", 0.3),
    ("doubling-cos", "z^2", 0.55),
    ("doubling-cos", "z*cos(2*pi*x)", 0.2),
    ("doubling-cos", "sin(3*z)*x", 0.81),
    ("doubling-pure", "z^2 + x", 0.4),
    ("doubling-pure", "cos(z)", 0.05),
)


def c05_monte_carlo(seed):
    rows = []
    ok = True
    for s, v, x in MC_TRIPLES:
        sk = _system(s)
        phi = _phi(sk)
        exact = float(apply_Mn(sk, phi, v, 8, [x]).values[0])
        mean, se = backward_sampling_oracle(sk, phi, v, x, 8, 10**6, seed)
        good = abs(mean - exact) <= 4 * se if se > 0 else abs(mean - exact) <= 1e-12
        ok = ok and good
        rows.append({"system": s, "observable": v, "x": x, "Mn": exact, "mc_mean": mean, "mc_stderr": se, "ok": good})
    return ok, {"rows": rows, "samples": 10**6, "n": 8}


def c06_branch_lipschitz(seed):
    sk = _system("doubling-cos")
    per_n = [branch_lipschitz_constant(sk, n, 10**4, seed) for n in range(1, 13)]
    bound = TWO_PI_OVER_5 * (1 + 1e-6)
    return max(per_n) <= bound, {"per_n": per_n, "bound": bound}


def c07_du_decay(seed):
    rep = _c1("doubling-cos", "z")
    table = rep.tables[-1]["du_decay"]
    worst = 0.0
    for t in table:
        worst = max(worst, t["max_DuGm_Dh"] / (TWO_PI_OVER_5 * 2.0 ** -(t["n"] - t["m"])))
    return worst <= 1 + 1e-6, {"max_ratio_to_bound": worst, "table": table}


def c08_fd_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.01, 0.99, 100)
    rows = []
    ok = True
    for s in ("doubling-cos", "doubling-pure"):
        sk = _system(s)
        phi = _phi(sk)
        for v in ("z", "z*x", "z*sin(2*pi*x)"):
            for n in range(1, 9):
                a = analytic_DMn(sk, phi, v, n, x)
                fd, _, _ = fd_check(sk, phi, v, n, x)
                rel = float(np.max(relative_error(a, fd, 1e-6)))
                rows.append({"system": s, "observable": v, "n": n, "max_rel_err": rel})
                ok = ok and rel <= 1e-5
    return ok, {"rows": rows, "floor": 1e-6}


def _trend(values):
    return max(values[6:12]) <= 2 * max(values[:6]) or max(values[6:12]) == 0.0


def c09_uniform_bounds(seed):
    rows = []
    ok = True
    for s, v in (("doubling-cos", "z"), ("doubling-pure", "z*x + sin(2*pi*x)")):
        for suite, rep in (("c1", _c1(s, v)), ("holder", _holder(s, v))):
            ratios = [r["ratio"] for r in rep.tables if "ratio" in r]
            good = _trend(ratios)
            ok = ok and good
            rows.append({"system": s, "observable": v, "suite": suite, "ratios": ratios, "ok": good})
    return ok, {"rows": rows}


def c10_dk_decay(seed):
    sk = _system("doubling-cos")
    rep = dK_decay_suite(sk, _phi(sk), "z", (2, 10), (1, 5), seed=seed)
    ok = all(rep.items[f"m={m}"] == "PASS" for m in (1, 5))
    return ok, {"rows": rep.tables, "items": rep.items}


def c11_suspension(seed):
    sk = _system("doubling-digit")
    phi = _phi(sk)
    q = suspension_quotient(sk, phi, "1 + x", "u*z", tol=1e-4)
    zero = float(np.max(np.abs(q.values)))
    w = suspension_quotient(sk, phi, "1 + x", "x*u + sin(u)", tol=1e-4)
    X, U = np.meshgrid(w.x, w.u, indexing="ij")
    wdev = float(np.max(np.abs(w.values - (X * U + np.sin(U)))))
    e1 = lambda x, z, u: u * z * z
    e2 = lambda x, z, u: np.where(u <= 1 + x, u * z * z, 7.0 + np.sin(u))
    levels = [0.5]
    a = suspension_quotient(sk, phi, "1 + x", e1, levels, tol=1e-4)
    b = suspension_quotient(sk, phi, "1 + x", e2, levels, tol=1e-4)
    ext = float(np.max(np.abs(a.values - b.values)))
    ok = zero <= 1e-12 and wdev == 0.0 and ext <= 1e-14
    return ok, {"u_z_max_abs": zero, "w_max_dev": wdev, "extension_diff": ext}


CRITERIA = (
    (1, "digit-series oracle", c01_digit_oracle),
    (2, "cancellation identities", c02_cancellation),
    (3, "operator identities", c03_operator_identities),
    (4, "disintegration identity", c04_disintegration),
    (5, "Monte-Carlo cross-check", c05_monte_carlo),
    (6, "same-branch fiber Lipschitz constant", c06_branch_lipschitz),
    (7, "D_uG decay constant", c07_du_decay),
    (8, "C1 derivative oracle", c08_fd_oracle),
    (9, "uniform boundedness of ratio tables", c09_uniform_bounds),
    (10, "DK decay", c10_dk_decay),
    (11, "suspension slices", c11_suspension),
)

# criteria re-run for the determinism check; the rest share the same code paths
DETERMINISM_SUBSET = (1, 2, 3, 4, 5, 8, 10, 11)


def artifact_name(number):
    return f"criterion_{number:02d}.json"


def run_criteria(numbers=None, seed=0, out_dir=None, progress=None):
    results = []
    for number, name, fn in CRITERIA:
        if numbers is not None and number not in numbers:
            continue
        t = time.perf_counter()
        try:
            passed, detail = fn(seed)
        except Exception as e:  # a crashing criterion is a failing criterion
            passed, detail = False, {"error": f"{type(e).__name__}: {e}"}
        r = CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t)
        if out_dir is not None:
            emit_report({"criterion": number, "name": name, "passed": r.passed, "detail": detail}, "json",
                        os.path.join(out_dir, artifact_name(number)))
        if progress:
            progress(r)
        results.append(r)
    return results


def _digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _clear_caches():
    for f in (_system, _density, _c1, _holder):
        f.cache_clear()


def determinism_check(out_dir, seed=0, subset=DETERMINISM_SUBSET):
    """Re-run ``subset`` with one and with eight workers and compare artifact bytes."""
    digests = {n: _digest(os.path.join(out_dir, artifact_name(n))) for n in subset}
    rows = []
    ok = True
    for workers in (1, 8):
        with tempfile.TemporaryDirectory() as tmp, threads(workers):
            _clear_caches()
            run_criteria(subset, seed, tmp)
            for n in subset:
                same = _digest(os.path.join(tmp, artifact_name(n))) == digests[n]
                ok = ok and same
                rows.append({"criterion": n, "threads": workers, "identical": same})
    return CriterionResult(12, "determinism", ok, {"rows": rows, "sha256": {str(k): v for k, v in digests.items()}})


def verify(seed=0, out_dir=None, determinism=True, progress=None):
    """Run every criterion; returns the results and the overall verdict."""
    own = out_dir is None
    tmp = tempfile.TemporaryDirectory() if own else None
    out = tmp.name if own else out_dir
    os.makedirs(out, exist_ok=True)
    try:
        results = run_criteria(None, seed, out, progress)
        if determinism:
            t = time.perf_counter()
            r = determinism_check(out, seed)
            r = CriterionResult(r.number, r.name, r.passed, r.detail, time.perf_counter() - t)
            emit_report({"criterion": 12, "name": r.name, "passed": r.passed, "detail": r.detail}, "json",
                        os.path.join(out, artifact_name(12)))
            if progress:
                progress(r)
            results.append(r)
        summary = {"seed": seed, "criteria": [{"criterion": r.number, "name": r.name, "passed": r.passed} for r in results],
                   "passed": all(r.passed for r in results)}
        emit_report(summary, "json", os.path.join(out, "summary.json"))
    finally:
        if own:
            tmp.cleanup()
    return results, all(r.passed for r in results)
