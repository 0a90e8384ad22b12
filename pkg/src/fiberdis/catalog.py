"""Built-in example systems with hand-derived constants.

==================  ===============  ======================  ==========  =========
name                base             fiber map G(x, z)       N           lambda_s
==================  ===============  ======================  ==========  =========
``doubling-pure``   2x mod 1         z/3                     [-1, 1]     log 3
``doubling-cos``    2x mod 1         (z + cos 2 pi x)/3      [-1, 1]     log 3
``doubling-digit``  2x mod 1         (z + s)/3, s = -1, +1   [-1, 1]     log 3
``gauss-affine``    1/x mod 1        (z + 1/(1+x))/2         [0, 1]      log 2
==================  ===============  ======================  ==========  =========

Certified constants:

* Doubling: ``Dh = 2^-n`` so ``lambda = log 2``, ``C_lambda = 1`` and the
  Jacobians are constant (``C_J = 0``, ``C_d = 0``, ``sum_h J_h = 1``).
* Gauss: ``|Dh_w| = 1/q_n(x)^2`` is largest for the all-ones word, where it is
  ``1/F_{n+1}^2 <= g^2 g^(-2n)`` with ``g`` the golden ratio.  Each step has
  ``|d log |h_k'|| = 2/(k+y) <= 2`` and the chain contracts, giving ``C_J = 2``
  (Lipschitz); ``sum_h |DJ_h| <= 2 sum_h J_h <= 4``; ``C_J' = 24`` bounds
  ``sum_h (sup J_h + Lip J_h)``.
* ``doubling-cos``: ``|D_u G| <= 2 pi/3`` gives
  ``|D_u G_m(hx, z) Dh(x)| <= (2 pi/5) 2^-(n-m)`` by a geometric series, and the
  same constant bounds the x-Lipschitz constant of ``G_n(h ., z)``.
* All fibers are affine in ``z`` so ``D_s G_n`` is exactly ``rate^-n``.
"""

from __future__ import annotations

import math

from .base_dynamics import BaseMetric, DoublingMap, GaussMap
from .skew_product import FiberMap, SkewProduct

TWO_PI_OVER_5 = 2.0 * math.pi / 5.0


def _doubling(name, exprs, declared, metric=None):
    fiber = FiberMap(interval=(-1.0, 1.0), exprs=exprs, contraction_rate=math.log(3.0), contraction_const=1.0, n0=1)
    return SkewProduct(DoublingMap(), fiber, metric or BaseMetric(), name, declared)


def doubling_pure(metric=None):
    return _doubling("doubling-pure", ("z/3",), {"branch_lipschitz": 0.0, "du_decay_C": 0.0, "du_decay_rate": math.log(2.0)}, metric)


def doubling_cos(metric=None):
    return _doubling(
        "doubling-cos",
        ("(z + cos(2*pi*x))/3",),
        {"branch_lipschitz": TWO_PI_OVER_5, "du_decay_C": TWO_PI_OVER_5, "du_decay_rate": math.log(2.0)},
        metric,
    )


def doubling_digit(metric=None):
    return _doubling("doubling-digit", ("(z - 1)/3", "(z + 1)/3"), {"branch_lipschitz": 0.0}, metric)


def gauss_affine(metric=None):
    fiber = FiberMap(interval=(0.0, 1.0), exprs=("(z + 1/(1+x))/2",), contraction_rate=math.log(2.0), contraction_const=1.0, n0=1)
    return SkewProduct(GaussMap(), fiber, metric or BaseMetric(), "gauss-affine", {"tail_tol": 2e-2})


SYSTEMS = {
    "doubling-pure": doubling_pure,
    "doubling-cos": doubling_cos,
    "doubling-digit": doubling_digit,
    "gauss-affine": gauss_affine,
}


def get_system(name, metric=None) -> SkewProduct:
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {', '.join(sorted(SYSTEMS))}") from None
    return factory(metric)
