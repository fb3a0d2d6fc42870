"""The four speed tests: summation, indexing, transpose and matrix constraint.

Parse time covers building the expression, the DCP check and lowering;
solve time is the embedded solver alone.  Every row is checked against the
problem's analytic optimum before it is reported.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from . import functions as fn
from .conic import lower_problem
from .expr import Variable, minimize
from .solver import SolveSettings, SolveStatus, solve_compiled

TESTS = ("sum", "index", "transpose", "matrix")
MAX_N = {"sum": 100_000, "index": 20_000, "transpose": 300, "matrix": 300}
CSV_COLUMNS = ("test", "n", "repeat_index", "parse_seconds", "solve_seconds", "optval", "status")


class BenchmarkError(AssertionError):
    pass


@dataclass
class BenchRow:
    test: str
    n: int
    repeat_index: int
    parse_seconds: float
    solve_seconds: float
    optval: float
    status: str
    expected: float

    def as_csv(self) -> list:
        return [self.test, self.n, self.repeat_index, f"{self.parse_seconds:.6f}",
                f"{self.solve_seconds:.6f}", repr(self.optval), self.status]


def data(test: str, n: int, seed: int = 0):
    """Random data for a test; fixed by ``seed`` so repeats see the same problem."""
    rng = np.random.default_rng(seed)
    if test in ("transpose", "matrix"):
        return rng.standard_normal((n, n)), rng.standard_normal((n, n))
    return None, None


def build(test: str, n: int, A=None, B=None):
    """The problem and its analytic optimal value."""
    if test == "sum":
        x = Variable(name="x")
        e = 0
        for _ in range(n):
            e = e + x
        return minimize(fn.norm_2(e - 1), [x >= 0]), 0.0
    if test == "index":
        x = Variable(n, name="x")
        e = 0
        for i in range(n):
            e = e + x[i]
        return minimize(fn.norm_2(e - 1), [x >= 0]), 0.0
    if test == "transpose":
        X = Variable(n, n, name="X")
        # every entry but X[0, 0] can match A' exactly
        return minimize(fn.norm_fro(X.T - A), [X[0, 0] == 1]), abs(1 - A[0, 0])
    if test == "matrix":
        X = Variable(n, n, name="X")
        return minimize(fn.norm_fro(X - A), [X == B]), float(np.linalg.norm(B - A))
    raise ValueError(f"unknown test {test!r}; pick one of {', '.join(TESTS)}")


def run(test: str, n: int, repeat: int = 1, *, seed: int = 0, tol: float = 1e-4,
        settings: SolveSettings | None = None) -> list[BenchRow]:
    if test not in TESTS:
        raise ValueError(f"unknown test {test!r}; pick one of {', '.join(TESTS)}")
    if not 1 <= n <= MAX_N[test]:
        raise ValueError(f"n for {test!r} must lie in 1..{MAX_N[test]}")
    A, B = data(test, n, seed)
    rows = []
    for r in range(repeat):
        t0 = time.perf_counter()
        p, expected = build(test, n, A, B)
        cp = lower_problem(p)
        t1 = time.perf_counter()
        sol = solve_compiled(p, cp, settings)
        t2 = time.perf_counter()
        row = BenchRow(test, n, r, t1 - t0, t2 - t1, float(p.optval), sol.status.value,
                       expected)
        if sol.status is not SolveStatus.OPTIMAL or abs(row.optval - expected) > tol:
            raise BenchmarkError(
                f"{test} n={n}: got {row.optval} ({row.status}), expected {expected}")
        rows.append(row)
    return rows


def write_csv(rows: list[BenchRow], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(row.as_csv())
