"""The atom catalog.

Each atom is described by an :class:`AtomDescriptor` bundling its shape rule
and the per-atom methods used elsewhere: sign, evaluate, curvature,
monotonicity and a conic-form template.  Templates are attached by
:mod:`disco.conic` when it is imported.

Curvature and monotonicity rules only look at local information about the
children (sign, shape and whether the child is constant).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.special

from .expr import (
    SCALAR,
    DisciplineError,
    DomainError,
    Monotonicity,
    Shape,
    ShapeError,
    Sign,
    Vexity,
)

ND = Monotonicity.NONDECREASING
NI = Monotonicity.NONINCREASING
NM = Monotonicity.NOT_MONOTONIC


class UnknownAtomError(DisciplineError, KeyError):
    def __init__(self, tag):
        self.tag = tag
        super().__init__(f"unknown atom {tag!r}; known atoms: {', '.join(known_tags())}")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class ArgInfo:
    """What a local rule may know about one child."""

    sign: Sign
    shape: Shape | None = None
    constant: bool = False


@dataclass
class AtomDescriptor:
    tag: str
    arity: tuple[int, int | None]
    shape_rule: Callable[[list[Shape], tuple], Shape]
    sign_rule: Callable[[list[Sign], tuple], Sign]
    curvature_rule: Callable[[list[ArgInfo], tuple], Vexity]
    monotonicity_rule: Callable[[list[ArgInfo], tuple], list[Monotonicity]]
    evaluate: Callable[[list[np.ndarray], tuple], np.ndarray]
    template: Callable | None = None
    # composite atoms lower through the expression returned by ``expand``
    expand: Callable | None = None
    elementwise: bool = False
    cones: frozenset = field(default_factory=frozenset)
    description: str = ""

    def check_arity(self, n: int) -> None:
        lo, hi = self.arity
        if n < lo or (hi is not None and n > hi):
            want = str(lo) if lo == hi else f"{lo}..{hi if hi is not None else 'n'}"
            raise DisciplineError(f"atom {self.tag!r} takes {want} arguments, got {n}")

    @property
    def is_composite(self) -> bool:
        return self.expand is not None


_REGISTRY: dict[str, AtomDescriptor] = {}
_frozen = False


def register_atom(desc: AtomDescriptor, *, replace: bool = False) -> AtomDescriptor:
    """Add an atom to the catalog.

    Registration must happen before the first :class:`~disco.expr.Problem` is
    constructed; afterwards the catalog is read-only.
    """
    if _frozen:
        raise RuntimeError(
            f"cannot register atom {desc.tag!r}: atoms must be registered before "
            "any problem is constructed")
    if desc.tag in _REGISTRY and not replace:
        raise ValueError(f"atom {desc.tag!r} is already registered")
    _REGISTRY[desc.tag] = desc
    return desc


def freeze_registry() -> None:
    global _frozen
    _frozen = True


def lookup(tag: str) -> AtomDescriptor:
    try:
        return _REGISTRY[tag]
    except KeyError:
        raise UnknownAtomError(tag) from None


def known_tags() -> list[str]:
    return sorted(_REGISTRY)


def catalog() -> list[AtomDescriptor]:
    return [_REGISTRY[t] for t in sorted(_REGISTRY)]


def _infos(signs, shapes=None, constant=None) -> list[ArgInfo]:
    out = []
    for i, s in enumerate(signs):
        if isinstance(s, ArgInfo):
            out.append(s)
            continue
        shape = shapes[i] if shapes is not None else None
        const = bool(constant[i]) if constant is not None else False
        out.append(ArgInfo(Sign(s), shape, const))
    return out


def curvature(tag: str, child_signs: Sequence, params: tuple = ()) -> Vexity:
    """Intrinsic curvature of atom ``tag`` given its children's signs."""
    return lookup(tag).curvature_rule(_infos(child_signs), params)


def monotonicity(tag: str, child_signs: Sequence, params: tuple = ()) -> list[Monotonicity]:
    return list(lookup(tag).monotonicity_rule(_infos(child_signs), params))


def sign(tag: str, child_signs: Sequence[Sign], params: tuple = ()) -> Sign:
    return lookup(tag).sign_rule([Sign(s) for s in child_signs], params)


# ---------------------------------------------------------------------------
# rule helpers
# ---------------------------------------------------------------------------


def signed(s: Sign) -> Monotonicity:
    """Monotonicity of a function like |x| that is even about zero."""
    if s.is_nonneg:
        return ND
    if s is Sign.NEGATIVE:
        return NI
    return NM


def _const(v):
    return lambda *_: v


def _each(m):
    return lambda args, params: [m] * len(args)


def _same_shape(shapes, params):
    return shapes[0]


def _same_sign(signs, params):
    return signs[0]


def _positive(signs, params):
    return Sign.POSITIVE


def _nosign(signs, params):
    return Sign.NOSIGN


def _sum_signs(signs, params):
    out = Sign.ZERO
    for s in signs:
        out = out + s
    return out


def _scalar_shape(shapes, params):
    return SCALAR


def _equal_shapes(shapes, params):
    first = shapes[0]
    for s in shapes[1:]:
        if s != first:
            raise ShapeError(f"elementwise atom needs equal shapes, got {first} and {s}")
    return first


def _vector_shape(shapes, params):
    if not shapes[0].is_vector:
        raise ShapeError(f"expected a vector, got {shapes[0]}")
    return SCALAR


def _square_matrix(shapes, params):
    s = shapes[0]
    if s.rows != s.cols:
        raise ShapeError(f"expected a square matrix, got {s}")
    return Shape(s.rows, 1)


def _check_domain(cond: bool, msg: str) -> None:
    if not cond:
        raise DomainError(msg)


def _param(params, name):
    return dict(params)[name]


# ---------------------------------------------------------------------------
# affine atoms
# ---------------------------------------------------------------------------


def _plus_shape(shapes, params):
    out = SCALAR
    for s in shapes:
        if s.is_scalar:
            continue
        if out.is_scalar:
            out = s
        elif s != out:
            raise ShapeError(f"cannot add {out} and {s}")
    return out


def _plus_eval(vals, params):
    out = vals[0]
    for v in vals[1:]:
        out = out + v
    return out


def _mul_shape(shapes, params):
    a, b = shapes
    if a.is_scalar:
        return b
    if b.is_scalar:
        return a
    if a.cols != b.rows:
        raise ShapeError(f"cannot multiply {a} by {b}")
    return Shape(a.rows, b.cols)


def _mul_sign(signs, params):
    return signs[0] * signs[1]


def _mul_curvature(args, params):
    if args[0].constant or args[1].constant:
        return Vexity.AFFINE
    return Vexity.NOT_DCP


def _mul_monotonicity(args, params):
    out = []
    for i in range(2):
        other = args[1 - i]
        if other.constant:
            out.append(signed_scale(other.sign))
        else:
            out.append(NM)
    return out


def signed_scale(s: Sign) -> Monotonicity:
    """Monotonicity of ``c * x`` in ``x`` for a constant ``c`` of sign ``s``."""
    if s.is_nonneg:
        return ND
    if s is Sign.NEGATIVE:
        return NI
    return NM


def _mul_eval(vals, params):
    a, b = vals
    if a.shape == (1, 1) or b.shape == (1, 1):
        return a * b
    return a @ b


def _getindex_shape(shapes, params):
    rows, cols = _param(params, "rows"), _param(params, "cols")
    s = shapes[0]
    if not rows or not cols:
        raise ShapeError("empty index")
    if max(rows) >= s.rows or min(rows) < 0 or max(cols) >= s.cols or min(cols) < 0:
        raise ShapeError(f"index out of range for {s}")
    return Shape(len(rows), len(cols))


def _getindex_eval(vals, params):
    return vals[0][np.ix_(_param(params, "rows"), _param(params, "cols"))]


def _hcat_shape(shapes, params):
    if len({s.rows for s in shapes}) != 1:
        raise ShapeError("hcat needs equal row counts")
    return Shape(shapes[0].rows, sum(s.cols for s in shapes))


def _vcat_shape(shapes, params):
    if len({s.cols for s in shapes}) != 1:
        raise ShapeError("vcat needs equal column counts")
    return Shape(sum(s.rows for s in shapes), shapes[0].cols)


def _diag_eval(vals, params):
    return np.diag(vals[0]).reshape(-1, 1)


# ---------------------------------------------------------------------------
# nonlinear atoms
# ---------------------------------------------------------------------------


def _abs_mono(args, params):
    return [signed(args[0].sign)]


def _maximum_sign(signs, params):
    a, b = signs
    if a.is_nonneg and b.is_nonneg and Sign.ZERO not in (a, b):
        return Sign.POSITIVE
    if a is Sign.ZERO and b is Sign.ZERO:
        return Sign.ZERO
    if a.is_nonpos and b.is_nonpos:
        # max(<=0, <=0) <= 0, and with a zero operand it is exactly 0
        return Sign.ZERO if Sign.ZERO in (a, b) else Sign.NEGATIVE
    if a.is_nonneg or b.is_nonneg:
        return Sign.POSITIVE
    return Sign.NOSIGN


def _minimum_sign(signs, params):
    return -_maximum_sign([-s for s in signs], params)


def _sqrt_eval(vals, params):
    x = vals[0]
    _check_domain(bool(np.all(x >= 0)), "sqrt of a negative value")
    return np.sqrt(x)


def _log_eval(vals, params):
    x = vals[0]
    _check_domain(bool(np.all(x > 0)), "log of a nonpositive value")
    return np.log(x)


def _inv_pos_eval(vals, params):
    x = vals[0]
    _check_domain(bool(np.all(x > 0)), "inv_pos of a nonpositive value")
    return 1.0 / x


def _geo_mean_eval(vals, params):
    x, y = vals
    _check_domain(bool(np.all(x >= 0) and np.all(y >= 0)), "geo_mean of a negative value")
    return np.sqrt(x * y)


def _qol_shape(shapes, params):
    if not shapes[1].is_scalar:
        raise ShapeError(f"quad_over_lin needs a scalar denominator, got {shapes[1]}")
    return SCALAR


def _qol_mono(args, params):
    return [signed(args[0].sign), NI]


def _qol_eval(vals, params):
    x, y = vals
    y = float(y[0, 0])
    _check_domain(y > 0, "quad_over_lin needs a positive denominator")
    return np.array([[float(np.sum(x * x)) / y]])


def _norm_eval(ord_):
    def ev(vals, params):
        return np.array([[np.linalg.norm(vals[0].ravel(), ord_)]])
    return ev


def _singular_values(x):
    return np.linalg.svd(x, compute_uv=False)


def _signed_first(args, params):
    return [signed(args[0].sign)]


def _add(tag, arity, shape_rule, sign_rule, vex, mono, ev, **kw):
    curvature_rule = vex if callable(vex) else _const(vex)
    if isinstance(mono, Monotonicity):
        mono = _each(mono)
    return register_atom(AtomDescriptor(tag, arity, shape_rule, sign_rule, curvature_rule,
                                        mono, ev, **kw))


AFF, CVX, CCV = Vexity.AFFINE, Vexity.CONVEX, Vexity.CONCAVE
ONE, TWO, ANY = (1, 1), (2, 2), (1, None)

# slicing and shaping
_add("+", (2, None), _plus_shape, _sum_signs, AFF, ND, _plus_eval,
     description="sum of expressions; scalars broadcast")
_add("-", ONE, _same_shape, lambda s, p: -s[0], AFF, NI, lambda v, p: -v[0],
     elementwise=True, description="negation")
_add("*", TWO, _mul_shape, _mul_sign, _mul_curvature, _mul_monotonicity, _mul_eval,
     description="product where one factor is constant (scalar scaling or matrix product)")
_add("getindex", ONE, _getindex_shape, _same_sign, AFF, ND, _getindex_eval,
     description="x[rows, cols]")
_add("hcat", ANY, _hcat_shape, _sum_signs, AFF, ND, lambda v, p: np.hstack(v))
_add("vcat", ANY, _vcat_shape, _sum_signs, AFF, ND, lambda v, p: np.vstack(v))
_add("diag", ONE, _square_matrix, _same_sign, AFF, ND, _diag_eval,
     description="diagonal of a square matrix as a column")
_add("transpose", ONE, lambda s, p: Shape(s[0].cols, s[0].rows), _same_sign, AFF, ND,
     lambda v, p: v[0].T)
_add("vec", ONE, lambda s, p: Shape(s[0].size, 1), _same_sign, AFF, ND,
     lambda v, p: v[0].reshape(-1, 1, order="F"), description="column-major vectorization")
_add("sum", ONE, _scalar_shape, _same_sign, AFF, ND, lambda v, p: np.sum(v[0]))

# positive orthant atoms
_add("abs", ONE, _same_shape, _positive, CVX, _abs_mono, lambda v, p: np.abs(v[0]),
     elementwise=True, cones=frozenset({"NonNeg"}))
_add("max", ONE, _scalar_shape, _same_sign, CVX, ND, lambda v, p: np.max(v[0]),
     cones=frozenset({"NonNeg"}), description="largest entry")
_add("min", ONE, _scalar_shape, _same_sign, CCV, ND, lambda v, p: np.min(v[0]),
     cones=frozenset({"NonNeg"}), description="smallest entry")
_add("maximum", TWO, _equal_shapes, _maximum_sign, CVX, ND,
     lambda v, p: np.maximum(v[0], v[1]), elementwise=True, cones=frozenset({"NonNeg"}),
     description="elementwise max(x, y)")
_add("minimum", TWO, _equal_shapes, _minimum_sign, CCV, ND,
     lambda v, p: np.minimum(v[0], v[1]), elementwise=True, cones=frozenset({"NonNeg"}),
     description="elementwise min(x, y)")
_add("norm_inf", ONE, _scalar_shape, _positive, CVX, _signed_first, _norm_eval(np.inf),
     cones=frozenset({"NonNeg"}))

# second-order cone atoms
_add("norm_2", ONE, _vector_shape, _positive, CVX, _signed_first, _norm_eval(2),
     cones=frozenset({"SecondOrder"}))
_add("square", ONE, _same_shape, _positive, CVX, _abs_mono, lambda v, p: v[0] ** 2,
     elementwise=True, cones=frozenset({"SecondOrder"}))
_add("sqrt", ONE, _same_shape, _positive, CCV, ND, _sqrt_eval, elementwise=True,
     cones=frozenset({"SecondOrder"}))
_add("geo_mean", TWO, _equal_shapes, _positive, CCV, ND, _geo_mean_eval, elementwise=True,
     cones=frozenset({"SecondOrder"}), description="elementwise sqrt(x*y)")
_add("quad_over_lin", TWO, _qol_shape, _positive, CVX, _qol_mono, _qol_eval,
     cones=frozenset({"SecondOrder", "NonNeg"}), description="sum(x**2) / y")
_add("inv_pos", ONE, _same_shape, _positive, CVX, NI, _inv_pos_eval, elementwise=True,
     cones=frozenset({"SecondOrder"}))

# exponential cone atoms
_add("exp", ONE, _same_shape, _positive, CVX, ND, lambda v, p: np.exp(v[0]),
     elementwise=True, cones=frozenset({"Exponential"}))
_add("log", ONE, _same_shape, _nosign, CCV, ND, _log_eval, elementwise=True,
     cones=frozenset({"Exponential"}))
_add("logsumexp", ONE, _scalar_shape, _nosign, CVX, ND,
     lambda v, p: scipy.special.logsumexp(v[0]), cones=frozenset({"Exponential", "NonNeg"}))

# semidefinite cone atoms; monotonicity is deliberately not claimed
_add("operatornorm", ONE, _scalar_shape, _positive, CVX, NM,
     lambda v, p: np.max(_singular_values(v[0])), cones=frozenset({"PSD"}))
_add("nuclearnorm", ONE, _scalar_shape, _positive, CVX, NM,
     lambda v, p: np.sum(_singular_values(v[0])), cones=frozenset({"PSD", "Zero"}))


# ---------------------------------------------------------------------------
# composite atoms: their own sign/curvature/monotonicity, lowered via expand()
# ---------------------------------------------------------------------------


def _expand_pos(children, params):
    from .expr import Constant, apply_atom

    x = children[0]
    return apply_atom("maximum", [x, Constant(np.zeros((x.shape.rows, x.shape.cols)))])


def _expand_neg(children, params):
    from .expr import apply_atom

    return apply_atom("pos", [apply_atom("-", [children[0]])])


def _expand_norm_1(children, params):
    from .expr import apply_atom

    return apply_atom("sum", [apply_atom("abs", [children[0]])])


def _expand_norm_fro(children, params):
    from .expr import apply_atom

    return apply_atom("norm_2", [apply_atom("vec", [children[0]])])


def _expand_sum_squares(children, params):
    from .expr import Constant, apply_atom

    return apply_atom("quad_over_lin", [children[0], Constant(1.0)])


_add("pos", ONE, _same_shape, _positive, CVX, ND, lambda v, p: np.maximum(v[0], 0.0),
     elementwise=True, expand=_expand_pos, description="max(x, 0)")
_add("neg", ONE, _same_shape, _positive, CVX, NI, lambda v, p: np.maximum(-v[0], 0.0),
     elementwise=True, expand=_expand_neg, description="max(-x, 0)")
_add("norm_1", ONE, _scalar_shape, _positive, CVX, _signed_first, _norm_eval(1),
     expand=_expand_norm_1)
_add("norm_fro", ONE, _scalar_shape, _positive, CVX, _signed_first,
     lambda v, p: np.array([[np.linalg.norm(v[0])]]), expand=_expand_norm_fro)
_add("sum_squares", ONE, _scalar_shape, _positive, CVX, _signed_first,
     lambda v, p: np.sum(v[0] ** 2), expand=_expand_sum_squares)
