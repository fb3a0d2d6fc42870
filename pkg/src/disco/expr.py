"""Expression trees: variables, constants and atom applications.

Expressions are immutable once built.  Every node carries a 64-bit structural
``uid`` so that two separately constructed copies of the same expression are
recognised as one, which is what lets evaluation, curvature analysis and
lowering memoize per subexpression.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import struct
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class DisciplineError(Exception):
    """Base class for modeling errors raised by this package."""


class ShapeError(DisciplineError, ValueError):
    pass


class EvaluationError(DisciplineError, ValueError):
    pass


class DomainError(EvaluationError):
    """An atom was evaluated outside of its domain (e.g. ``log`` of 0)."""


# ---------------------------------------------------------------------------
# Small algebras
# ---------------------------------------------------------------------------


class Sign(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NOSIGN = "nosign"
    ZERO = "zero"

    def __add__(self, other: Sign) -> Sign:
        if self is Sign.ZERO:
            return other
        if other is Sign.ZERO:
            return self
        if self is other:
            return self
        return Sign.NOSIGN

    def __mul__(self, other: Sign) -> Sign:
        if self is Sign.ZERO or other is Sign.ZERO:
            return Sign.ZERO
        if self is Sign.NOSIGN or other is Sign.NOSIGN:
            return Sign.NOSIGN
        return Sign.POSITIVE if self is other else Sign.NEGATIVE

    def __neg__(self) -> Sign:
        if self is Sign.POSITIVE:
            return Sign.NEGATIVE
        if self is Sign.NEGATIVE:
            return Sign.POSITIVE
        return self

    @property
    def is_nonneg(self) -> bool:
        return self in (Sign.POSITIVE, Sign.ZERO)

    @property
    def is_nonpos(self) -> bool:
        return self in (Sign.NEGATIVE, Sign.ZERO)

    @classmethod
    def of_values(cls, value: np.ndarray) -> Sign:
        if not np.any(value):
            return cls.ZERO
        if np.all(value >= 0):
            return cls.POSITIVE
        if np.all(value <= 0):
            return cls.NEGATIVE
        return cls.NOSIGN


class Vexity(enum.Enum):
    CONSTANT = "constant"
    AFFINE = "affine"
    CONVEX = "convex"
    CONCAVE = "concave"
    NOT_DCP = "not DCP"

    def __add__(self, other: Vexity) -> Vexity:
        if Vexity.NOT_DCP in (self, other):
            return Vexity.NOT_DCP
        if self is Vexity.CONSTANT:
            return other
        if other is Vexity.CONSTANT:
            return self
        if self is Vexity.AFFINE:
            return other
        if other is Vexity.AFFINE:
            return self
        return self if self is other else Vexity.NOT_DCP

    def __neg__(self) -> Vexity:
        if self is Vexity.CONVEX:
            return Vexity.CONCAVE
        if self is Vexity.CONCAVE:
            return Vexity.CONVEX
        return self

    @property
    def is_affine(self) -> bool:
        return self in (Vexity.CONSTANT, Vexity.AFFINE)

    @property
    def is_convex(self) -> bool:
        return self in (Vexity.CONSTANT, Vexity.AFFINE, Vexity.CONVEX)

    @property
    def is_concave(self) -> bool:
        return self in (Vexity.CONSTANT, Vexity.AFFINE, Vexity.CONCAVE)

    @property
    def is_dcp(self) -> bool:
        return self is not Vexity.NOT_DCP


class Monotonicity(enum.Enum):
    NONDECREASING = "nondecreasing"
    NONINCREASING = "nonincreasing"
    NOT_MONOTONIC = "not monotonic"

    def __mul__(self, vex: Vexity) -> Vexity:
        if not isinstance(vex, Vexity):
            return NotImplemented
        if self is Monotonicity.NONDECREASING:
            return vex
        if self is Monotonicity.NONINCREASING:
            return -vex
        return vex if vex.is_affine else Vexity.NOT_DCP


@dataclass(frozen=True)
class Shape:
    rows: int
    cols: int

    def __post_init__(self):
        for n in (self.rows, self.cols):
            if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
                raise ShapeError(f"invalid dimensions {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def is_scalar(self) -> bool:
        return self.rows == 1 and self.cols == 1

    @property
    def is_vector(self) -> bool:
        return self.rows == 1 or self.cols == 1

    def __iter__(self):
        return iter((self.rows, self.cols))

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


SCALAR = Shape(1, 1)


def as_shape(shape) -> Shape:
    if isinstance(shape, Shape):
        return shape
    if isinstance(shape, (int, np.integer)):
        return Shape(int(shape), 1)
    rows, cols = shape
    return Shape(int(rows), int(cols))


def as_matrix(value) -> np.ndarray:
    """Coerce a number, 1-D or 2-D array-like to a 2-D float matrix.

    1-D input becomes a column vector.
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return arr


# ---------------------------------------------------------------------------
# Hashing
# ---------------------------------------------------------------------------


def _digest(*parts: bytes) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(struct.pack("<I", len(p)))
        h.update(p)
    return int.from_bytes(h.digest(), "little")


def _pack_uids(uids: Iterable[int]) -> bytes:
    return b"".join(u.to_bytes(8, "little") for u in uids)


_var_ids = itertools.count(1)
_var_lock = threading.Lock()


def _next_var_id() -> int:
    with _var_lock:
        return next(_var_ids)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


class Expression:
    """Base class of all expression nodes."""

    __slots__ = ("uid", "shape", "sign", "is_constant", "__weakref__")
    # make numpy defer to our reflected operators
    __array_ufunc__ = None
    children: tuple[Expression, ...] = ()

    def __hash__(self) -> int:
        return self.uid

    @property
    def size(self) -> int:
        return self.shape.size

    @property
    def value(self) -> np.ndarray | None:
        try:
            return evaluate(self)
        except EvaluationError:
            return None

    def variables(self) -> list[Variable]:
        """Variables reachable from this node, in first-visit order."""
        seen: dict[int, Variable] = {}
        for node in postorder(self):
            if isinstance(node, Variable):
                seen.setdefault(node.id, node)
        return list(seen.values())

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return apply_atom("+", [self, to_expr(other)])

    def __radd__(self, other):
        return apply_atom("+", [to_expr(other), self])

    def __neg__(self):
        return apply_atom("-", [self])

    def __sub__(self, other):
        return self + (-to_expr(other))

    def __rsub__(self, other):
        return to_expr(other) + (-self)

    def __mul__(self, other):
        return apply_atom("*", [self, to_expr(other)])

    def __rmul__(self, other):
        return apply_atom("*", [to_expr(other), self])

    __matmul__ = __mul__
    __rmatmul__ = __rmul__

    def __truediv__(self, other):
        other = to_expr(other)
        if not isinstance(other, Constant) or not other.shape.is_scalar:
            raise DisciplineError("can only divide by a scalar constant")
        if other.sign is Sign.ZERO:
            raise ZeroDivisionError("division by a zero constant")
        return apply_atom("*", [Constant(1.0 / other.data), self])

    def __getitem__(self, key):
        rows, cols = _index_lists(self.shape, key)
        return apply_atom("getindex", [self], params=(("rows", rows), ("cols", cols)))

    @property
    def T(self):
        return apply_atom("transpose", [self])

    # constraints -------------------------------------------------------------

    def __le__(self, other):
        return Constraint("<=", self, to_expr(other))

    def __ge__(self, other):
        return Constraint(">=", self, to_expr(other))

    # strict and non-strict inequalities are the same constraint
    __lt__ = __le__
    __gt__ = __ge__

    def __eq__(self, other):
        return Constraint("==", self, to_expr(other))

    def __ne__(self, other):
        raise DisciplineError("'!=' constraints are not convex")


@dataclass(frozen=True)
class VariableAttributes:
    sign: Sign = Sign.NOSIGN
    semidefinite: bool = False
    symmetric: bool = False

    def __post_init__(self):
        if self.sign is Sign.ZERO:
            raise DisciplineError("a variable cannot be declared identically zero")
        if self.semidefinite and not self.symmetric:
            object.__setattr__(self, "symmetric", True)


class Variable(Expression):
    __slots__ = ("id", "name", "attributes", "_value")

    def __init__(self, rows=1, cols=1, *, sign: Sign | str = Sign.NOSIGN,
                 semidefinite: bool = False, symmetric: bool = False,
                 name: str | None = None):
        if isinstance(rows, (tuple, list, Shape)):
            shape = as_shape(rows)
        else:
            shape = Shape(rows, cols)
        attrs = VariableAttributes(Sign(sign), semidefinite, symmetric)
        if attrs.symmetric and shape.rows != shape.cols:
            raise DisciplineError(
                f"symmetric/semidefinite variables must be square, got {shape}")
        self.id = _next_var_id()
        self.name = name if name is not None else f"x{self.id}"
        self.attributes = attrs
        self.shape = shape
        self.sign = attrs.sign
        self.is_constant = False
        self.uid = _digest(b"var", str(self.id).encode())
        self._value = None

    @property
    def value(self) -> np.ndarray | None:
        return self._value

    @value.setter
    def value(self, val):
        if val is None:
            self._value = None
            return
        arr = as_matrix(val)
        if arr.shape != (self.shape.rows, self.shape.cols):
            if arr.size == self.shape.size and self.shape.is_vector:
                arr = arr.reshape(self.shape.rows, self.shape.cols)
            else:
                raise ShapeError(
                    f"value of shape {arr.shape} does not fit variable {self.name} ({self.shape})")
        self._value = arr

    def __repr__(self) -> str:
        return f"Variable({self.name}, {self.shape})"


class Constant(Expression):
    """A numeric matrix, copied at construction so the node stays immutable."""

    __slots__ = ("data",)

    def __init__(self, value):
        arr = np.array(as_matrix(value), dtype=float)
        if not np.all(np.isfinite(arr)):
            raise DisciplineError("constants must be finite")
        arr.setflags(write=False)
        self.data = arr
        self.shape = Shape(*arr.shape)
        self.sign = Sign.of_values(arr)
        self.is_constant = True
        self.uid = _digest(b"const", struct.pack("<II", *arr.shape),
                           np.ascontiguousarray(arr, dtype="<f8").tobytes(order="F"))

    @property
    def value(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        if self.shape.is_scalar:
            return f"Constant({self.data[0, 0]:g})"
        return f"Constant({self.shape})"


class AtomApp(Expression):
    """An atom applied to an ordered tuple of child expressions.

    ``params`` holds non-expression arguments (index lists for ``getindex``) as
    a tuple of ``(name, tuple)`` pairs so it can take part in the uid.
    """

    __slots__ = ("tag", "children", "params")

    def __init__(self, tag: str, children: Sequence[Expression], params: tuple = ()):
        from .atoms import lookup

        desc = lookup(tag)
        children = tuple(children)
        for ch in children:
            if not isinstance(ch, Expression):
                raise TypeError(f"atom {tag!r} got a non-expression child {ch!r}")
        desc.check_arity(len(children))
        self.tag = tag
        self.children = children
        self.params = params
        self.shape = desc.shape_rule([c.shape for c in children], params)
        self.sign = desc.sign_rule([c.sign for c in children], params)
        self.is_constant = all(c.is_constant for c in children)
        self.uid = _digest(b"atom", tag.encode(), repr(params).encode(),
                           _pack_uids(c.uid for c in children))

    def __repr__(self) -> str:
        return f"{self.tag}({', '.join(map(repr, self.children))})"


def to_expr(value) -> Expression:
    if isinstance(value, Expression):
        return value
    return Constant(value)


def apply_atom(tag: str, children: Sequence, params: tuple = ()) -> AtomApp:
    """Build an atom application, wrapping numeric children as constants."""
    return AtomApp(tag, [to_expr(c) for c in children], params)


def make_variable(shape=(1, 1), attrs: VariableAttributes | None = None,
                  name: str | None = None) -> Variable:
    attrs = attrs or VariableAttributes()
    return Variable(as_shape(shape), sign=attrs.sign, semidefinite=attrs.semidefinite,
                    symmetric=attrs.symmetric, name=name)


def make_constant(value) -> Constant:
    return Constant(value)


def _normalize_axis(key, n: int) -> tuple[int, ...]:
    if isinstance(key, slice):
        return tuple(range(n)[key])
    if isinstance(key, (int, np.integer)):
        idx = [int(key)]
    else:
        idx = [int(k) for k in np.asarray(key).ravel()]
    out = []
    for i in idx:
        if not -n <= i < n:
            raise IndexError(f"index {i} out of range for dimension {n}")
        out.append(i % n)
    return tuple(out)


def _index_lists(shape: Shape, key) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if isinstance(key, tuple):
        if len(key) != 2:
            raise IndexError("expressions take at most two indices")
        rows, cols = _normalize_axis(key[0], shape.rows), _normalize_axis(key[1], shape.cols)
    elif shape.cols == 1:
        rows, cols = _normalize_axis(key, shape.rows), (0,)
    elif shape.rows == 1:
        rows, cols = (0,), _normalize_axis(key, shape.cols)
    else:
        raise IndexError(f"a {shape} matrix needs a (row, col) index")
    if not rows or not cols:
        raise IndexError("empty selection")
    return rows, cols


# ---------------------------------------------------------------------------
# Traversal and evaluation
# ---------------------------------------------------------------------------


def postorder(root: Expression, unique: bool = True,
              prune: Callable[[Expression], bool] | None = None):
    """Yield nodes children-first without recursion.

    With ``unique`` each uid is yielded once (the DAG view); otherwise every
    occurrence is yielded (the tree view).  Children of nodes for which
    ``prune`` is true are not visited.
    """
    seen: set[int] = set()
    stack: list[tuple[Expression, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if unique and not expanded and node.uid in seen:
            continue
        if expanded or not node.children or (prune is not None and prune(node)):
            if unique:
                if node.uid in seen:
                    continue
                seen.add(node.uid)
            yield node
            continue
        stack.append((node, True))
        for ch in reversed(node.children):
            stack.append((ch, False))


def fold(root: Expression, visit: Callable[[Expression, list], object],
         memo: bool = True, prune: Callable[[Expression], bool] | None = None,
         cache: dict | None = None):
    """Bottom-up fold of ``visit(node, child_results)`` over an expression.

    ``memo`` shares results between nodes with equal uid; ``cache`` lets a
    caller carry memoized results across several roots.
    """
    if cache is None:
        cache = {}
    results: list = []
    stack: list[tuple[Expression, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if memo and node.uid in cache:
            results.append(cache[node.uid])
            continue
        if expanded:
            k = len(node.children)
            args = results[len(results) - k:]
            del results[len(results) - k:]
        elif not node.children or (prune is not None and prune(node)):
            args = []
        else:
            stack.append((node, True))
            for ch in reversed(node.children):
                stack.append((ch, False))
            continue
        val = visit(node, args)
        if memo:
            cache[node.uid] = val
        results.append(val)
    return results[0]


def evaluate(e: Expression, memo: bool = True) -> np.ndarray:
    """Numeric value of ``e``; every variable leaf must have a value."""
    from .atoms import lookup

    def visit(node, args):
        if isinstance(node, Variable):
            if node.value is None:
                raise EvaluationError(
                    f"variable {node.name} (id {node.id}) has no value")
            return node.value
        if isinstance(node, AtomApp):
            out = lookup(node.tag).evaluate(args, node.params)
            return np.asarray(out, dtype=float).reshape(node.shape.rows, node.shape.cols,
                                                       order="F")
        return node.value

    return fold(e, visit, memo=memo)


def sign_of(e: Expression) -> Sign:
    return e.sign


# ---------------------------------------------------------------------------
# Constraints and problems
# ---------------------------------------------------------------------------


def broadcast_shape(a: Shape, b: Shape) -> Shape:
    if a == b or b.is_scalar:
        return a
    if a.is_scalar:
        return b
    raise ShapeError(f"incompatible shapes {a} and {b}")


class Constraint:
    KINDS = ("<=", ">=", "==")

    def __init__(self, kind: str, lhs: Expression, rhs: Expression):
        if kind not in self.KINDS:
            raise ValueError(f"unknown constraint kind {kind!r}")
        self.kind = kind
        self.lhs = lhs
        self.rhs = rhs
        self.shape = broadcast_shape(lhs.shape, rhs.shape)
        self.dual_value: np.ndarray | None = None

    def __bool__(self):
        raise TypeError("a constraint has no truth value; did you mean to compare uids?")

    def violation(self) -> float:
        """Largest violation of the constraint at the current variable values."""
        diff = np.asarray(evaluate(self.lhs)) - np.asarray(evaluate(self.rhs))
        if self.kind == "<=":
            return float(np.max(np.maximum(diff, 0.0)))
        if self.kind == ">=":
            return float(np.max(np.maximum(-diff, 0.0)))
        return float(np.max(np.abs(diff)))

    def __repr__(self) -> str:
        return f"Constraint({self.lhs!r} {self.kind} {self.rhs!r})"


class Sense(enum.Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"
    SATISFY = "satisfy"


class Problem:
    def __init__(self, sense: Sense | str, objective=None,
                 constraints: Iterable[Constraint] | Constraint = ()):
        from .atoms import freeze_registry

        sense = Sense(sense)
        if isinstance(constraints, Constraint):
            constraints = [constraints]
        constraints = list(constraints)
        for c in constraints:
            if not isinstance(c, Constraint):
                raise TypeError(f"expected a Constraint, got {type(c).__name__}")
        if sense is Sense.SATISFY:
            if objective is not None:
                raise DisciplineError("the satisfy sense does not take an objective")
        else:
            if objective is None:
                raise DisciplineError(f"{sense.value} needs an objective")
            objective = to_expr(objective)
            if not objective.shape.is_scalar:
                raise ShapeError(f"objective must be scalar, got {objective.shape}")
        freeze_registry()
        self.sense = sense
        self.objective = objective
        self.constraints = constraints
        self.optval: float | None = None
        self.status = None

    def variables(self) -> list[Variable]:
        """Distinct variables of the problem, ordered by creation."""
        found: dict[int, Variable] = {}
        roots = [self.objective] if self.objective is not None else []
        for c in self.constraints:
            roots += [c.lhs, c.rhs]
        for r in roots:
            for v in r.variables():
                found.setdefault(v.id, v)
        return [found[k] for k in sorted(found)]

    def solve(self, settings=None, **kwargs):
        from .solver import solve

        return solve(self, settings, **kwargs)

    def __repr__(self) -> str:
        return (f"Problem({self.sense.value}, {self.objective!r}, "
                f"{len(self.constraints)} constraints)")


def minimize(objective, constraints=()) -> Problem:
    return Problem(Sense.MINIMIZE, objective, constraints)


def maximize(objective, constraints=()) -> Problem:
    return Problem(Sense.MAXIMIZE, objective, constraints)


def satisfy(constraints=()) -> Problem:
    return Problem(Sense.SATISFY, None, constraints)
