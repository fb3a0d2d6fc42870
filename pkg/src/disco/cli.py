"""Command-line front end: ``disco lint|compile|solve|bench``.

Exit codes: 0 success; 1 unreadable document, unknown atom or bad usage;
2 problem is not DCP; 3 infeasible or unbounded; 4 iteration limit;
5 cones the embedded solver cannot handle (export them with ``compile``).
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import bench
from .conic import lower_problem
from .dcp import DCPError, check_problem
from .expr import DisciplineError
from .serialize import DocumentError, conic_to_json, dumps, load_problem
from .solver import SolveSettings, SolveStatus, solve_compiled

EXIT_OK, EXIT_PARSE, EXIT_NOT_DCP, EXIT_INFEASIBLE, EXIT_ITERS, EXIT_UNSUPPORTED = range(6)

_STATUS_EXIT = {
    SolveStatus.OPTIMAL: EXIT_OK,
    SolveStatus.INFEASIBLE: EXIT_INFEASIBLE,
    SolveStatus.UNBOUNDED: EXIT_INFEASIBLE,
    SolveStatus.ITER_LIMIT: EXIT_ITERS,
    SolveStatus.UNSUPPORTED_CONE: EXIT_UNSUPPORTED,
    SolveStatus.NUMERICAL_ERROR: EXIT_PARSE,
}


def _load(path, err):
    """The parsed problem, or None after reporting why it could not be read."""
    try:
        return load_problem(path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=err)
    except (DocumentError, DisciplineError) as exc:
        print(f"error: {exc}", file=err)
    return None


def _report_not_dcp(failures, err) -> None:
    print("NOT DCP", file=err)
    for d in failures:
        print(f"  {d}", file=err)


def cmd_lint(path, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    p = _load(path, err)
    if p is None:
        return EXIT_PARSE
    report = check_problem(p)
    if report.objective is not None:
        print(f"objective: {report.objective.verdict.value}", file=out)
    for i, (ok, diag) in enumerate(report.constraints):
        mark = "ok" if ok else "not DCP"
        print(f"constraint {i}: {diag.message} [{mark}]", file=out)
    if not report.ok:
        _report_not_dcp(report.failures, out)
        return EXIT_NOT_DCP
    if report.objective is not None:
        print(f"DCP: {p.sense.value} {report.objective.verdict.value}", file=out)
    else:
        print("DCP: satisfy", file=out)
    return EXIT_OK


def cmd_compile(path, out_path=None, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    p = _load(path, err)
    if p is None:
        return EXIT_PARSE
    try:
        cp = lower_problem(p)
    except DCPError as exc:
        _report_not_dcp(exc.diagnostics, err)
        return EXIT_NOT_DCP
    text = dumps(conic_to_json(cp))
    if out_path is None or out_path == "-":
        out.write(text)
    else:
        with open(out_path, "w") as f:
            f.write(text)
    return EXIT_OK


def _fmt(value) -> str:
    arr = np.asarray(value)
    if arr.size == 1:
        return f"{float(arr.ravel()[0]):.8g}"
    return np.array2string(np.squeeze(arr, axis=1) if arr.shape[1] == 1 else arr,
                           precision=8, max_line_width=100)


def cmd_solve(path, settings: SolveSettings | None = None, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    p = _load(path, err)
    if p is None:
        return EXIT_PARSE
    try:
        cp = lower_problem(p)
    except DCPError as exc:
        _report_not_dcp(exc.diagnostics, err)
        return EXIT_NOT_DCP
    sol = solve_compiled(p, cp, settings)
    print(f"status: {sol.status.value}", file=out)
    if sol.status is SolveStatus.UNSUPPORTED_CONE:
        print(sol.message, file=err)
        return EXIT_UNSUPPORTED
    print(f"optval: {p.optval:.10g}", file=out)
    print(f"iterations: {sol.iterations}", file=out)
    for var in cp.variables.values():
        if var.value is not None:
            print(f"{var.name} = {_fmt(var.value)}", file=out)
    for i, con in enumerate(p.constraints):
        if con.dual_value is not None:
            print(f"dual {i} = {_fmt(con.dual_value)}", file=out)
    return _STATUS_EXIT[sol.status]


def cmd_bench(tests, n=None, repeat=3, out=None, err=None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    rows = []
    try:
        for test in tests:
            size = n if n is not None else (100 if test in ("sum", "index") else 50)
            rows += bench.run(test, size, repeat)
    except (bench.BenchmarkError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_PARSE
    bench.write_csv(rows, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disco", description="Disciplined convex programming from JSON documents.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lint", help="check the DCP rules")
    p.add_argument("path")

    p = sub.add_parser("compile", help="emit the conic form as JSON")
    p.add_argument("path")
    p.add_argument("-o", "--output", default=None, help="output file (default stdout)")

    p = sub.add_parser("solve", help="solve with the embedded conic solver")
    p.add_argument("path")
    defaults = SolveSettings()
    p.add_argument("--abstol", type=float, default=defaults.abstol)
    p.add_argument("--reltol", type=float, default=defaults.reltol)
    p.add_argument("--feastol", type=float, default=defaults.feastol)
    p.add_argument("--max-iters", type=int, default=defaults.max_iters)

    p = sub.add_parser("bench", help="run the speed tests and print CSV")
    p.add_argument("--test", action="append", choices=bench.TESTS,
                   help="test to run; repeatable (default: all four)")
    p.add_argument("--n", type=int, default=None,
                   help="problem size (default 100 for sum/index, 50 otherwise)")
    p.add_argument("--repeat", type=int, default=3)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "lint":
        return cmd_lint(args.path)
    if args.command == "compile":
        return cmd_compile(args.path, args.output)
    if args.command == "solve":
        try:
            settings = SolveSettings(abstol=args.abstol, reltol=args.reltol,
                                     feastol=args.feastol, max_iters=args.max_iters)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        return cmd_solve(args.path, settings)
    return cmd_bench(args.test or list(bench.TESTS), args.n, args.repeat)


if __name__ == "__main__":
    sys.exit(main())
