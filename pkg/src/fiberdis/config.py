"""Run configuration: an INI file with sections, overridden by command-line flags.

Schema (all keys optional; expressions are quoted strings)::

    [system]
    name = doubling-cos          ; a catalog name, or "custom"
    z0 = 0

    [custom]                     ; only read when name = custom
    endpoints = 0, 0.5, 1
    forward = "2*x", "2*x - 1"
    inverse = "x/2", "(x + 1)/2"
    fiber = "(z + cos(2*pi*x))/3"   ; one formula, or one per branch
    z_min = -1
    z_max = 1
    contraction_rate = 1.0986122886681098
    contraction_const = 1
    expansion_rate = 0.6931471805599453
    expansion_const = 1
    distortion = 0
    jacobian_norm_sum = 1
    jacobian_derivative_sum = 0
    density = "1"                ; optional closed form

    [observable]
    v = "z^2"
    roof = "1 + x"

    [metric]
    kind = euclidean             ; or symbolic
    theta = 0.5

    [params]
    tol = 1e-6
    alpha = 1
    depth = 10
    n_list = 1-12                ; ranges and/or comma lists
    m_list = 1, 5
    grid = 64
    z_grid = 33
    seed = 0
    threads = 1
    pair_samples = 1000
    sample_count = 100
    suite = holder               ; holder | c1 | dk

    [output]
    out = result.csv
    format = csv                 ; csv | json
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .base_dynamics import BaseMetric, ExpressionMap, MapConstants
from .catalog import SYSTEMS, get_system
from .skew_product import FiberMap, SkewProduct, check_fiber_invariance


class ConfigError(ValueError):
    pass


def parse_list(text: str) -> list:
    """Split a comma list, honouring double quotes around items."""
    return [item.strip() for item in next(csv.reader([text], skipinitialspace=True)) if item.strip()]


def parse_int_list(text) -> tuple:
    """``"1-6, 8, 10"`` -> ``(1, 2, 3, 4, 5, 6, 8, 10)``."""
    if isinstance(text, (list, tuple)):
        return tuple(int(t) for t in text)
    out = []
    for part in parse_list(str(text)):
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError(f"empty integer list {text!r}")
    return tuple(out)


def _unquote(s):
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


@dataclass(frozen=True)
class RunConfig:
    system: str = "doubling-cos"
    custom: Optional[dict] = None
    z0: Optional[float] = None
    observable: str = "z"
    roof: str = "1 + x"
    metric: str = "euclidean"
    theta: float = 0.5
    tol: float = 1e-6
    alpha: float = 1.0
    depth: int = 10
    n_list: tuple = tuple(range(1, 13))
    m_list: tuple = (1, 5)
    grid: int = 64
    z_grid: int = 33
    seed: int = 0
    threads: int = 1
    pair_samples: int = 1000
    sample_count: int = 100
    suite: str = "holder"
    out: Optional[str] = None
    format: str = "csv"
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.tol <= 0 or not math.isfinite(self.tol):
            raise ConfigError("tol must be positive and finite")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.metric not in ("euclidean", "symbolic"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.metric == "symbolic" and not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1)")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.suite not in ("holder", "c1", "dk"):
            raise ConfigError(f"unknown suite {self.suite!r}")
        for name in ("depth", "grid", "z_grid", "threads", "pair_samples", "sample_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if min(self.n_list) < 1 or min(self.m_list) < 1:
            raise ConfigError("n_list and m_list entries must be positive")
        if self.system != "custom" and self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {', '.join(sorted(SYSTEMS))} or custom")
        return self

    def base_metric(self) -> BaseMetric:
        return BaseMetric(self.metric, self.theta)

    def build_system(self, spot_checks: int = 10**4) -> SkewProduct:
        """The skew product, with fiber invariance spot-checked before use."""
        if self.system == "custom":
            skew = _custom_system(self.custom or {}, self.base_metric())
        else:
            skew = get_system(self.system, self.base_metric())
        if self.z0 is not None:
            skew = replace(skew, fiber=replace(skew.fiber, base_point=float(self.z0)))
        try:
            check_fiber_invariance(skew, spot_checks)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return skew


def _custom_system(c: dict, metric) -> SkewProduct:
    try:
        endpoints = [float(t) for t in parse_list(c["endpoints"])]
        forward = parse_list(c["forward"])
        inverse = parse_list(c["inverse"])
        fiber = tuple(parse_list(c["fiber"]))
        consts = MapConstants(
            expansion_rate=float(c["expansion_rate"]),
            expansion_const=float(c.get("expansion_const", 1)),
            distortion=float(c.get("distortion", 0)),
            jacobian_norm_sum=float(c.get("jacobian_norm_sum", 1)),
            jacobian_derivative_sum=float(c.get("jacobian_derivative_sum", 0)),
            certified=False,
        )
        base = ExpressionMap("custom", endpoints, forward, inverse, consts, _unquote(c["density"]) if "density" in c else None)
        fmap = FiberMap(
            interval=(float(c.get("z_min", -1)), float(c.get("z_max", 1))),
            exprs=fiber,
            contraction_rate=float(c["contraction_rate"]),
            contraction_const=float(c.get("contraction_const", 1)),
        )
    except KeyError as e:
        raise ConfigError(f"custom system is missing key {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(f"custom system: {e}") from None
    return SkewProduct(base, fmap, metric, "custom", {})


_KEYS = {
    ("system", "name"): ("system", str),
    ("system", "z0"): ("z0", float),
    ("observable", "v"): ("observable", _unquote),
    ("observable", "roof"): ("roof", _unquote),
    ("metric", "kind"): ("metric", str),
    ("metric", "theta"): ("theta", float),
    ("params", "tol"): ("tol", float),
    ("params", "alpha"): ("alpha", float),
    ("params", "depth"): ("depth", int),
    ("params", "n_list"): ("n_list", parse_int_list),
    ("params", "m_list"): ("m_list", parse_int_list),
    ("params", "grid"): ("grid", int),
    ("params", "z_grid"): ("z_grid", int),
    ("params", "seed"): ("seed", int),
    ("params", "threads"): ("threads", int),
    ("params", "pair_samples"): ("pair_samples", int),
    ("params", "sample_count"): ("sample_count", int),
    ("params", "suite"): ("suite", str),
    ("output", "out"): ("out", str),
    ("output", "format"): ("format", str),
}


def load_config(path=None, text=None) -> RunConfig:
    """Read an INI file (or string) into a :class:`RunConfig`; unknown keys are errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    values = {}
    custom = None
    for section in cp.sections():
        if section == "custom":
            custom = {k: _unquote(v) if k == "density" else v for k, v in cp.items(section)}
            continue
        for key, raw in cp.items(section):
            if (section, key) not in _KEYS:
                raise ConfigError(f"unknown config key [{section}] {key}")
            name, conv = _KEYS[(section, key)]
            try:
                values[name] = conv(raw)
            except ValueError:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None
    if custom is not None:
        values["custom"] = custom
    return RunConfig(**values)


def merge(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply non-``None`` overrides (from command-line flags)."""
    names = {f.name for f in fields(RunConfig)}
    kw = {k: v for k, v in overrides.items() if v is not None and k in names}
    return replace(cfg, **kw)
