"""Command-line interface: ``peace <subcommand> [options]``.

Exit codes: 0 success, 1 usage error or unknown example, 2 validation
failure (model file or property suite), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .continuous import PeaceResult, peace, signed_peace
from .estimation import EstimationError
from .expr import ExpressionError
from .model import ModelError, StructuralModel, load_model, validate_model
from .quadrature import IntegrationError, QuadratureSpec, TruncationPolicy, expect_over_z

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_NUMERIC = 3

DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def parse_degrees(text: str) -> list[float]:
    """``start:stop:step`` inclusive of stop; a step beyond the range gives one row."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"degree range must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"degree range must be numeric, got {text!r}") from None
    if not step > 0:
        raise UsageError("degree step must be positive")
    if start > stop:
        raise UsageError("degree range start must not exceed stop")
    if start < 0:
        raise UsageError("degrees must be non-negative")
    count = int(math.floor((stop - start) / step * (1 + 1e-12) + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(count)]


def degree_arg(text: str) -> float:
    try:
        d = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"degree must be a number, got {text!r}") from None
    if not d >= 0:
        raise argparse.ArgumentTypeError(f"degree must be non-negative, got {text!r}")
    return d


def _columns(text: str | None) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()] if text else []


def _spec(args) -> QuadratureSpec:
    return QuadratureSpec(points=args.quad_points, panels=args.quad_panels, budget=args.quad_budget)


def _policy(args) -> TruncationPolicy:
    return TruncationPolicy(eps=args.trunc_eps)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("PEACE_SEED")
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"PEACE_SEED must be an integer, got {env!r}") from None


def _emit(args, text: str) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])
    return buf.getvalue()


def _load_valid(args) -> StructuralModel:
    if not args.model:
        raise UsageError("--model is required")
    model = load_model(args.model)
    report = validate_model(model, seed=_seed(args), spec=_spec(args), policy=_policy(args))
    if not report.ok:
        raise ModelError("model failed validation\n" + report.to_text())
    return model


def _method(args, model: StructuralModel) -> str:
    method = args.method or ("discrete" if model.is_discrete else "continuous")
    if method == "discrete" and not model.is_discrete:
        raise UsageError("--method discrete needs a discrete model")
    if method == "continuous" and model.is_discrete:
        raise UsageError("--method continuous needs a continuous model")
    return method


def _oracle_peace(model: StructuralModel, d: float, args) -> PeaceResult:
    seed = _seed(args)
    if model.is_discrete:
        from .discrete import phi_oracle_discrete

        out = phi_oracle_discrete(model, d, budget=args.budget, seed=seed)
        return PeaceResult(out.value, d, "phi-oracle", 0.0, [], {"closed_form": out.closed_form})
    from .oracle import variational_oracle

    def inner(z):
        r = variational_oracle(model, z, d, args.budget, args.knots, seed, _policy(args), _spec(args))
        return r.value, 0.0

    e = expect_over_z(inner, model.z_dist, _spec(args), policy=_policy(args))
    k = model.norm_factor(d)
    return PeaceResult(k * e.value, d, "variational-oracle", k * e.error, [b.to_json() for b in model.x_domain], {"normalizer": k})


def _compute_one(model: StructuralModel, d: float, args) -> PeaceResult:
    method = _method(args, model)
    if method == "oracle":
        return _oracle_peace(model, d, args)
    return peace(model, d, _spec(args), _policy(args))


def _record(res: PeaceResult) -> dict:
    rec = res.to_json()
    if "normalizer" in res.details:
        rec["normalizer"] = res.details["normalizer"]
    return rec


# ---------------------------------------------------------------- commands


def cmd_compute(args) -> int:
    model = _load_valid(args)
    res = _compute_one(model, args.degree, args)
    if args.format == "csv":
        _emit(args, _csv(["d", "value", "err"], [(res.degree, res.value, res.err_estimate)]))
    else:
        _emit(args, _json(_record(res)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    degrees = parse_degrees(args.degrees)
    model = _load_valid(args)
    results = [_compute_one(model, d, args) for d in degrees]
    if args.format == "json":
        _emit(args, _json([_record(r) for r in results]))
    else:
        _emit(args, _csv(["d", "value", "err"], [(r.degree, r.value, r.err_estimate) for r in results]))
    return EXIT_OK


def cmd_signed(args) -> int:
    model = _load_valid(args)
    if model.is_discrete:
        raise UsageError("signed effects are computed for continuous one-dimensional models")
    signs = ["+", "-"] if args.sign == "both" else [args.sign]
    results = [signed_peace(model, args.degree, s, _spec(args), _policy(args)) for s in signs]
    if args.format == "csv":
        rows = [(s, r.degree, r.value, r.err_estimate) for s, r in zip(signs, results)]
        _emit(args, _csv(["sign", "d", "value", "err"], rows))
    else:
        _emit(args, _json([_record(r) for r in results] if len(results) > 1 else _record(results[0])))
    return EXIT_OK


def cmd_tv(args) -> int:
    from .discrete import flux_tv, tv_ani, tv_classic

    model = _load_valid(args)
    if not model.is_discrete:
        raise UsageError("tv needs a discrete model")
    grid = model.discrete
    rows = []
    for z in grid.z_points:
        row = {"z": z.tolist(), "flux_tv": flux_tv(grid, z)}
        if grid.ndim == 2:
            row["tv_classic"] = tv_classic(grid, z)
            row["tv_ani"] = tv_ani(grid, z)
        rows.append(row)
    _emit(args, _json(rows if len(rows) > 1 else rows[0]))
    return EXIT_OK


def cmd_from_data(args) -> int:
    from .estimation import SampleTable, sweep_from_data

    if not args.data:
        raise UsageError("--data is required")
    x, z, y = _columns(args.x), _columns(args.z), args.y
    if not x or not y:
        raise UsageError("--x and --y are required")
    degrees = parse_degrees(args.degrees) if args.degrees else [args.degree]
    data = SampleTable.from_csv(args.data, x, z, y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        results = sweep_from_data(data, degrees, seed=_seed(args), z_samples=args.z_samples)
    fmt = args.format or ("csv" if args.degrees else "json")
    if fmt == "csv":
        _emit(args, _csv(["d", "value", "stderr"], [(r.degree, r.value, r.details["stderr"]) for r in results]))
    else:
        recs = []
        for r in results:
            rec = _record(r)
            rec["stderr"] = r.details["stderr"]
            rec["mean_gradient"] = r.details["mean_gradient"]
            rec["assumptions"] = r.details["assumptions"]
            recs.append(rec)
        _emit(args, _json(recs if len(recs) > 1 else recs[0]))
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.model:
        model = load_model(args.model)
        report = validate_model(model, seed=_seed(args), spec=_spec(args), policy=_policy(args))
        _emit(args, _json(report.to_dict()) if args.format == "json" else report.to_text())
        return EXIT_OK if report.ok else EXIT_INVALID

    from .properties import format_report, run_suites

    names = _columns(args.suites) or None
    if args.inject_fault:
        from .discrete import inject_dif_sign_fault

        with inject_dif_sign_fault():
            results = run_suites(_seed(args), args.count, names)
    else:
        results = run_suites(_seed(args), args.count, names)
    if args.format == "json":
        _emit(args, _json([r.to_dict() for r in results]))
    else:
        _emit(args, format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def cmd_example(args) -> int:
    from .examples import EXAMPLES, run_example

    if args.name not in EXAMPLES:
        sys.stderr.write(f"unknown example {args.name!r}; choose from {', '.join(EXAMPLES)}\n")
        return EXIT_USAGE
    report = run_example(args.name)
    _emit(args, _json(report.to_dict()) if args.format == "json" else report.to_text())
    return EXIT_OK if report.passed else EXIT_NUMERIC


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, fmt_default: str = "json") -> None:
    p.add_argument("--out", help="write output to this file instead of stdout")
    p.add_argument("--format", choices=["json", "csv"], default=fmt_default)
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default: $PEACE_SEED or {DEFAULT_SEED})")
    p.add_argument("--quad.points", dest="quad_points", type=int, default=16, help="Gauss points per panel")
    p.add_argument("--quad.panels", dest="quad_panels", type=int, default=8, help="panels per axis")
    p.add_argument("--quad.budget", dest="quad_budget", type=int, default=10**7, help="maximum quadrature nodes per box")
    p.add_argument("--trunc.eps", dest="trunc_eps", type=float, default=1e-10, help="tail mass left outside truncated domains")


def _model_opts(p: argparse.ArgumentParser, degree: bool = True) -> None:
    p.add_argument("--model", help="model JSON file")
    if degree:
        p.add_argument("--degree", type=degree_arg, default=1.0, help="degree d >= 0")
    p.add_argument("--method", choices=["continuous", "discrete", "oracle"], default=None)
    p.add_argument("--budget", type=int, default=500, help="oracle sweeps (continuous) or random fields (discrete)")
    p.add_argument("--knots", type=int, default=9, help="oracle knots per axis")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="peace", description="Degree-d probabilistic variational causal effects.")
    parser.add_argument("--version", action="version", version=f"peace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compute", help="effect of one degree for a model file")
    _model_opts(p)
    _common(p)
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("sweep", help="effects over a degree range, CSV d,value,err")
    _model_opts(p, degree=False)
    p.add_argument("--degrees", required=True, help="start:stop:step, stop inclusive")
    _common(p, "csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("signed", help="positive and negative parts for one-dimensional X")
    p.add_argument("--model", help="model JSON file")
    p.add_argument("--degree", type=degree_arg, default=1.0)
    p.add_argument("--sign", choices=["+", "-", "both"], default="both")
    _common(p)
    p.set_defaults(func=cmd_signed)

    p = sub.add_parser("tv", help="discrete total variations of a grid model")
    p.add_argument("--model", help="discrete model JSON file")
    _common(p)
    p.set_defaults(func=cmd_tv)

    p = sub.add_parser("from-data", help="effect estimated from a CSV sample")
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--x", help="comma-separated cause columns")
    p.add_argument("--z", help="comma-separated conditioning columns")
    p.add_argument("--y", help="outcome column")
    p.add_argument("--degree", type=degree_arg, default=0.0)
    p.add_argument("--degrees", help="start:stop:step; gives CSV d,value,stderr")
    p.add_argument("--z-samples", dest="z_samples", type=int, default=64, help="Z rows averaged over")
    _common(p)
    p.set_defaults(format=None)
    p.set_defaults(func=cmd_from_data)

    p = sub.add_parser("validate", help="validate a model file, or run the property suites")
    p.add_argument("--model", help="model JSON file; omit to run the property suites")
    p.add_argument("--count", type=int, default=10, help="generated cases per suite")
    p.add_argument("--suites", help="comma-separated suite names (default: all)")
    p.add_argument("--inject-fault", dest="inject_fault", action="store_true", help=argparse.SUPPRESS)
    _common(p, "json")
    p.set_defaults(format=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("example", help="run a built-in closed-form example")
    p.add_argument("name", help="uniform, newton, joint, linear-product or dis-con")
    _common(p)
    p.set_defaults(format=None)
    p.set_defaults(func=cmd_example)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        sys.stderr.write(f"peace: {err}\n")
        return EXIT_USAGE
    except (ModelError, ExpressionError, EstimationError, FileNotFoundError) as err:
        sys.stderr.write(f"peace: {err}\n")
        return EXIT_INVALID
    except (IntegrationError, ArithmeticError, np.linalg.LinAlgError) as err:
        sys.stderr.write(f"peace: numeric failure: {err}\n")
        return EXIT_NUMERIC
    except ValueError as err:
        sys.stderr.write(f"peace: {err}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
