"""User-facing atom constructors (``disco.abs(x)``, ``disco.norm(x, 2)``, ...)."""

from __future__ import annotations

import numpy as np

from .expr import Constant, Expression, apply_atom, to_expr

__all__ = [
    "abs", "diag", "exp", "geo_mean", "hcat", "inv_pos", "log", "logsumexp", "max",
    "min", "neg", "norm", "norm_1", "norm_2", "norm_fro", "norm_inf", "nuclearnorm",
    "operatornorm", "pos", "quad_over_lin", "sqrt", "square", "sum", "sum_squares",
    "transpose", "vcat", "vec",
]


def _expand_scalar(value, like: Expression) -> Expression:
    e = to_expr(value)
    if e.shape.is_scalar and not like.shape.is_scalar and isinstance(e, Constant):
        return Constant(np.full((like.shape.rows, like.shape.cols), e.data[0, 0]))
    return e


def _binary(tag, x, y):
    x, y = to_expr(x), to_expr(y)
    x, y = _expand_scalar(x, y), _expand_scalar(y, x)
    return apply_atom(tag, [x, y])


def abs(x):
    return apply_atom("abs", [x])


def max(x, y=None):
    """Largest entry of ``x``, or the elementwise maximum of ``x`` and ``y``."""
    if y is None:
        return apply_atom("max", [x])
    return _binary("maximum", x, y)


def min(x, y=None):
    if y is None:
        return apply_atom("min", [x])
    return _binary("minimum", x, y)


def pos(x):
    return apply_atom("pos", [x])


def neg(x):
    return apply_atom("neg", [x])


def sum(x):
    return apply_atom("sum", [x])


def vec(x):
    return apply_atom("vec", [x])


def diag(x):
    return apply_atom("diag", [x])


def transpose(x):
    return apply_atom("transpose", [x])


def hcat(*xs):
    return apply_atom("hcat", list(xs))


def vcat(*xs):
    return apply_atom("vcat", list(xs))


def norm_1(x):
    return apply_atom("norm_1", [x])


def norm_2(x):
    return apply_atom("norm_2", [x])


def norm_inf(x):
    return apply_atom("norm_inf", [x])


def norm_fro(x):
    return apply_atom("norm_fro", [x])


def norm(x, p=2):
    """Vector norm for ``p`` in {1, 2, inf, "fro"}; ``p=2`` on a matrix is Frobenius."""
    x = to_expr(x)
    if p == 1:
        return norm_1(x)
    if p == np.inf or p == "inf":
        return norm_inf(x)
    if p == "fro" or (p == 2 and not x.shape.is_vector):
        return norm_fro(x)
    if p == 2:
        return norm_2(x)
    raise ValueError(f"unsupported norm order {p!r}")


def square(x):
    return apply_atom("square", [x])


def sqrt(x):
    return apply_atom("sqrt", [x])


def geo_mean(x, y):
    return _binary("geo_mean", x, y)


def quad_over_lin(x, y):
    return apply_atom("quad_over_lin", [x, y])


def inv_pos(x):
    return apply_atom("inv_pos", [x])


def sum_squares(x):
    return apply_atom("sum_squares", [x])


def exp(x):
    return apply_atom("exp", [x])


def log(x):
    return apply_atom("log", [x])


def logsumexp(x):
    return apply_atom("logsumexp", [x])


def operatornorm(x):
    return apply_atom("operatornorm", [x])


def nuclearnorm(x):
    return apply_atom("nuclearnorm", [x])

