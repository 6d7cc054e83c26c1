"""``exprb-bench`` command line.

Examples
--------
::

    exprb-bench convergence --problem ex3 --schemes exprb42,exprb42n,gauss42 --out ex3.csv
    exprb-bench build-reference --problem ex4
    exprb-bench sweep --problem ex4 --schemes exprb42 --tol 1e-4,3.16e-5,1e-5 --jobs 2
    exprb-bench trace --problem ex4 --schemes exprb42 --out trace.csv
    exprb-bench order-check
    exprb-bench phi-selftest
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import bench
from .reference import CACHE_ENV, MissingReferenceError, build_reference, canonical_name
from .stepcontrol import IntegrationError


def _csv_list(conv):
    def parse(text):
        try:
            return tuple(conv(x) for x in text.split(",") if x.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _add_common(p, problem=True):
    if problem:
        p.add_argument("--problem", required=True, help="two_body|van_der_pol|parabolic_1d|adr_2d or ex1..ex4")
    p.add_argument("--schemes", type=_csv_list(str), default=None,
                   help="comma separated, e.g. exprb42,exprb42n,gauss42")
    p.add_argument("--N", type=_csv_list(int), default=None, help="comma separated step counts")
    p.add_argument("--tol", type=_csv_list(float), default=None, help="comma separated tolerances")
    p.add_argument("--out", default=None, help="CSV output path; a JSON manifest is written beside it")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
    p.add_argument("--cache-dir", default=None, help=f"reference cache (default ${CACHE_ENV} or ~/.cache/exprb)")


def build_parser():
    parser = argparse.ArgumentParser(prog="exprb-bench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("convergence", help="fixed-step errors and observed orders"))
    _add_common(sub.add_parser("sweep", help="adaptive runs over a tolerance list"))
    tr = sub.add_parser("trace", help="accepted step sizes of an adaptive run near a target error")
    _add_common(tr)
    tr.add_argument("--target", type=float, default=1e-3)
    _add_common(sub.add_parser("order-check", help="order conditions, linear exactness, Gauss stability"),
                problem=False)
    _add_common(sub.add_parser("phi-selftest", help="phi functions against quadrature"), problem=False)
    br = sub.add_parser("build-reference", help="compute and cache a reference solution")
    _add_common(br)
    return parser


def _print_rows(rows, out=None):
    out = out or sys.stdout
    if not rows:
        print("(no rows)", file=out)
        return
    names = [f.name for f in dataclasses.fields(rows[0])]
    cells = [[_fmt(getattr(r, n)) for n in names] for r in rows]
    widths = [max(len(n), *(len(c[i]) for c in cells)) for i, n in enumerate(names)]
    print("  ".join(n.ljust(w) for n, w in zip(names, widths)), file=out)
    for c in cells:
        print("  ".join(x.ljust(w) for x, w in zip(c, widths)), file=out)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}" if abs(v) >= 1e-3 or v == 0 else f"{v:.3e}"
    return str(v)


def _emit(spec, rows, extra=None):
    _print_rows(rows)
    if spec.out:
        path = bench.write_csv(rows, spec.out)
        bench.write_manifest(spec, path, extra)
        print(f"wrote {path}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    mode = {"convergence": "fixed-convergence", "sweep": "adaptive-sweep", "trace": "stepsize-trace",
            "order-check": "order-check", "phi-selftest": "phi-selftest",
            "build-reference": "fixed-convergence"}[args.command]
    kw = dict(mode=mode, N=args.N, tol=args.tol, out=args.out, jobs=args.jobs, cache_dir=args.cache_dir)
    if args.schemes:
        kw["schemes"] = args.schemes
    try:
        spec = bench.ExperimentSpec(getattr(args, "problem", None) or "-", **kw)
        if args.command == "build-reference":
            scheme = args.schemes[0] if args.schemes else None
            N = args.N[-1] if args.N else None
            path = build_reference(canonical_name(args.problem), scheme, N, args.cache_dir)
            print(f"reference stored in {path}")
            return 0
        if args.command == "convergence":
            _emit(spec, bench.run_convergence(spec))
        elif args.command == "sweep":
            _emit(spec, bench.run_adaptive_sweep(spec))
        elif args.command == "trace":
            tol, err, rows = bench.run_trace(spec, target=args.target)
            print(f"tol = {tol:.3e}  achieved error = {err:.3e}  accepted steps = {len(rows)}")
            _emit(spec, rows, {"tol": tol, "achieved_error": err, "accepted_steps": len(rows)})
        else:
            rows = bench.order_selftest() if args.command == "order-check" else bench.phi_selftest()
            _emit(spec, rows)
            return 0 if all(r.passed for r in rows) else 1
    except (MissingReferenceError, IntegrationError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
