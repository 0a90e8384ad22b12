"""Command-line entry point.

Exit codes: 0 success, 1 computation error, 2 configuration error, 3 a
failing ``verify``.  Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .base_dynamics import DensityNotConverged, invariant_density, uniform_grid
from .config import ConfigError, RunConfig, load_config, merge, parse_int_list
from .expression import ExprError
from .parallel import set_threads
from .report import ReportError, emit_report

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(EXIT_CONFIG, "usage", message)


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": code}, sort_keys=True) + "\n")
    raise SystemExit(code)


def _common(p):
    p.add_argument("--config", help="INI file; flags override its values")
    p.add_argument("--system", help="catalog system name or 'custom'")
    p.add_argument("--observable", help="observable expression in x, z (and u for suspend)")
    p.add_argument("--roof", help="roof expression in x (suspend)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--metric", choices=("euclidean", "symbolic"))
    p.add_argument("--theta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--depth", type=int)
    p.add_argument("--n-list", dest="n_list", type=parse_int_list, help="e.g. 1-12 or 2,10")
    p.add_argument("--m-list", dest="m_list", type=parse_int_list)
    p.add_argument("--grid", type=int, help="number of base grid points")
    p.add_argument("--z-grid", dest="z_grid", type=int)
    p.add_argument("--z0", type=float, help="fiber base point")
    p.add_argument("--pair-samples", dest="pair_samples", type=int)
    p.add_argument("--sample-count", dest="sample_count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output path (directory for verify)")
    p.add_argument("--format", choices=("csv", "json"))


def build_parser():
    parser = _Parser(prog="fiberdis", description="Disintegration of SRB measures for skew products.")
    parser.add_argument("--version", action="version", version=f"fiberdis {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("density", help="invariant density of the base map")
    _common(p)
    p.add_argument("--method", choices=("analytic", "operator-iteration"))
    _common(sub.add_parser("eta", help="eta(v) by sandwich bounds"))
    _common(sub.add_parser("disintegrate", help="quotient observable vbar on a grid"))
    p = sub.add_parser("regularity", help="Hölder / C1 / dK suites")
    _common(p)
    p.add_argument("--suite", choices=("holder", "c1", "dk"))
    _common(sub.add_parser("suspend", help="suspended quotient vbar(x, u)"))
    _common(sub.add_parser("verify", help="run the acceptance suite"))
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {k: v for k, v in vars(args).items() if k not in ("config", "command", "method")}
    return merge(cfg, **over).validate()


def _write(cfg, text_csv=None, rows=None, columns=None, summary=None):
    """CSV rows go to ``--out`` (or stdout); the JSON summary goes beside it."""
    if cfg.format == "json":
        payload = dict(summary or {})
        if rows is not None:
            payload["rows"] = rows
        text = emit_report(payload, "json", cfg.out)
    else:
        text = emit_report(rows, "csv", cfg.out, columns)
        if summary is not None and cfg.out:
            emit_report(summary, "json", os.path.splitext(cfg.out)[0] + ".json")
    if not cfg.out:
        sys.stdout.write(text)


def _density(skew, method=None):
    if method is None:
        method = "analytic" if skew.base.analytic_density() is not None else "operator-iteration"
    return invariant_density(skew.base, method)


def cmd_density(cfg, args):
    skew = cfg.build_system()
    phi = _density(skew, args.method)
    x = uniform_grid(cfg.grid)
    rows = [{"x": a, "phi": b, "dphi": c} for a, b, c in zip(x, phi(x), phi.derivative(x))]
    summary = {"system": skew.name, "kind": phi.kind, "derivative_kind": phi.derivative_kind,
               "residual": phi.residual, "normalization_error": phi.normalization_error,
               "iterations": phi.iterations, "floor": phi.floor, "sup": phi.sup}
    _write(cfg, rows=rows, columns=["x", "phi", "dphi"], summary=summary)
    return EXIT_OK


def cmd_eta(cfg, args):
    from .eta_measure import eta_value

    skew = cfg.build_system()
    res = eta_value(skew, _density(skew), cfg.observable, cfg.tol, z_grid=cfg.z_grid)
    rows = [e.row() for e in res.trace]
    summary = {"system": skew.name, "observable": cfg.observable, "value": res.value,
               "bracket": list(res.bracket), "error": res.error, "n": res.trace[-1].n, "tol": cfg.tol}
    if cfg.format == "csv" and not cfg.out:
        sys.stdout.write(emit_report(summary, "json"))
        return EXIT_OK
    _write(cfg, rows=rows, columns=["n", "lower", "upper", "width", "quad_err", "trunc_err"], summary=summary)
    return EXIT_OK


def cmd_disintegrate(cfg, args):
    from .disintegration import quotient_observable

    skew = cfg.build_system()
    q = quotient_observable(skew, _density(skew), cfg.observable, cfg.tol, x_grid=uniform_grid(cfg.grid))
    summary = {"system": skew.name, "observable": cfg.observable, "n": q.n, "base_point": q.base_point,
               "tol": cfg.tol, "trace": q.trace.as_list()}
    _write(cfg, rows=q.rows(), columns=["x", "vbar", "error_bound"], summary=summary)
    return EXIT_OK


def cmd_regularity(cfg, args):
    from . import regularity as rg

    skew = cfg.build_system()
    phi = _density(skew)
    suite = args.suite or cfg.suite
    if suite == "holder":
        rep = rg.holder_suite(skew, phi, cfg.observable, cfg.alpha, cfg.n_list, cfg.pair_samples, cfg.seed)
    elif suite == "c1":
        rep = rg.c1_suite(skew, phi, cfg.observable, cfg.n_list, cfg.sample_count, cfg.seed)
    else:
        n_list = cfg.n_list if args.n_list else (2, 10)
        rep = rg.dK_decay_suite(skew, phi, cfg.observable, n_list, cfg.m_list, seed=cfg.seed)
    text = emit_report(rep, "json", cfg.out)
    if not cfg.out:
        sys.stdout.write(text)
    return EXIT_OK if rep.verdict == "PASS" else EXIT_VERIFY


def cmd_suspend(cfg, args):
    from .suspension import suspension_quotient

    skew = cfg.build_system()
    q = suspension_quotient(skew, _density(skew), cfg.roof, cfg.observable, tol=cfg.tol,
                            x_grid=uniform_grid(cfg.grid))
    summary = {"system": skew.name, "observable": cfg.observable, "roof": cfg.roof, "depth": list(q.depth)}
    _write(cfg, rows=q.rows(), columns=["x", "u", "vbar", "error_bound"], summary=summary)
    return EXIT_OK


def cmd_verify(cfg, args):
    from .acceptance import verify

    def show(r):
        print(r.line(), flush=True)

    results, ok = verify(cfg.seed, cfg.out, progress=show)
    passed = sum(r.passed for r in results)
    print(f"{'PASS' if ok else 'FAIL'}: {passed}/{len(results)} criteria passed (system flag: {cfg.system})")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {
    "density": cmd_density,
    "eta": cmd_eta,
    "disintegrate": cmd_disintegrate,
    "regularity": cmd_regularity,
    "suspend": cmd_suspend,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        set_threads(cfg.threads)
        code = COMMANDS[args.command](cfg, args)
    except SystemExit:
        raise
    except (ConfigError, ExprError, KeyError) as e:
        _fail(EXIT_CONFIG, type(e).__name__, str(e).strip("'\""))
    except (ReportError, DensityNotConverged, ArithmeticError, ValueError, RuntimeError, OSError) as e:
        _fail(EXIT_COMPUTE, type(e).__name__, str(e))
    return code


if __name__ == "__main__":
    sys.exit(main())
