"""Command line entry point: ``lossgrad {run,sweep-lr,sweep-c,quad-demo}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .errors import DegenerateError, ValidationError
from .quadratic import worst_case_point


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _print_json(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_run(args) -> int:
    summary = harness.run_experiment(harness.ExperimentConfig.load(args.config))
    _print_json(summary.to_dict())
    return 0


def _sweep(args, fn, values) -> int:
    base = harness.ExperimentConfig.load(args.config)
    result = fn(base, values, max_workers=args.workers)
    _print_json(result.to_dict())
    return 0


def cmd_sweep_lr(args) -> int:
    return _sweep(args, harness.sweep_initial_lr, args.inits)


def cmd_sweep_c(args) -> int:
    return _sweep(args, harness.sweep_c, args.cs)


def cmd_quad_demo(args) -> int:
    if args.x0 == "worst":
        x0 = worst_case_point(args.l1, args.l2)
    else:
        x0 = _floats(args.x0)
    report, rows = harness.quad_demo(args.l1, args.l2, x0, args.n)
    print("k,measured_ratio,bound_ratio,holds")
    for r in rows:
        print(f"{r['k']},{r['measured_ratio']:.17g},{r['bound_ratio']:.17g},{str(r['holds']).lower()}")
    print(f"# a_x={report.a_x:.17g} proportional={str(report.proportional).lower()}", file=sys.stderr)
    return 0 if all(r["holds"] for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lossgrad", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-lr", help="LOSSGRAD over several initial step sizes")
    p.add_argument("--config", required=True)
    p.add_argument("--inits", type=_floats, default=list(harness.DEFAULT_LR_INITS))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_lr)

    p = sub.add_parser("sweep-c", help="LOSSGRAD over several adjustment factors")
    p.add_argument("--config", required=True)
    p.add_argument("--cs", type=_floats, default=list(harness.DEFAULT_C_GRID))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep_c)

    p = sub.add_parser("quad-demo", help="exact line search contraction on a 2-D quadratic")
    p.add_argument("--l1", type=float, required=True)
    p.add_argument("--l2", type=float, required=True)
    p.add_argument("--x0", required=True, help='"x1,x2" or "worst"')
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_quad_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValidationError, DegenerateError, OSError) as err:
        print(f"lossgrad: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
