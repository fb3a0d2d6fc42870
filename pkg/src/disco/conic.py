"""Lowering DCP problems to standard conic form.

Each atom has a conic-form template: given affine maps for its arguments it
introduces auxiliary variables and conic constraints and returns an affine
map whose optimal value equals the atom applied to the arguments.  Lowering
an expression applies the templates bottom up, memoized by uid, and
collects every constraint produced along the way.

The assembled problem is

    minimize    c' x + objective_offset
    subject to  b - A x in K

with ``K`` a product of cones listed in row order Zero, Free, NonNeg,
SecondOrder, Exponential, PSD.  Second-order blocks are laid out ``(t, x)``
with ``||x|| <= t``; exponential triples ``(x, y, z)`` with
``y exp(x / y) <= z``; PSD blocks are full column-major ``n*n`` matrices.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from . import atoms
from .dcp import DCPError, diagnose, problem_is_dcp
from .expr import (
    SCALAR,
    AtomApp,
    DisciplineError,
    EvaluationError,
    Expression,
    Problem,
    Sense,
    Shape,
    Sign,
    Variable,
    broadcast_shape,
    evaluate,
    fold,
)


class ConeKind(str, enum.Enum):
    ZERO = "Zero"
    FREE = "Free"
    NONNEG = "NonNeg"
    SOC = "SecondOrder"
    EXP = "Exponential"
    PSD = "PSD"


ROW_ORDER = (ConeKind.ZERO, ConeKind.FREE, ConeKind.NONNEG, ConeKind.SOC, ConeKind.EXP,
             ConeKind.PSD)


@dataclass(frozen=True)
class Cone:
    kind: ConeKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ConeKind(self.kind))
        if self.dim < 1:
            raise ValueError("cone dimension must be positive")
        if self.kind is ConeKind.EXP and self.dim != 3:
            raise ValueError("exponential cones are 3-dimensional")
        if self.kind is ConeKind.PSD and round(self.dim ** 0.5) ** 2 != self.dim:
            raise ValueError("PSD cone dimension must be a square")
        if self.kind is ConeKind.SOC and self.dim < 1:
            raise ValueError("second-order cone needs at least the t entry")

    def contains(self, v, tol: float = 1e-9) -> bool:
        v = np.asarray(v, dtype=float).ravel()
        if v.size != self.dim:
            raise ValueError(f"expected {self.dim} entries, got {v.size}")
        kind = self.kind
        if kind is ConeKind.ZERO:
            return bool(np.all(np.abs(v) <= tol))
        if kind is ConeKind.FREE:
            return True
        if kind is ConeKind.NONNEG:
            return bool(np.all(v >= -tol))
        if kind is ConeKind.SOC:
            return bool(np.linalg.norm(v[1:]) <= v[0] + tol)
        if kind is ConeKind.EXP:
            x, y, z = v
            if y > tol:
                return bool(y * np.exp(x / y) <= z + tol)
            return abs(y) <= tol and x <= tol and z >= -tol
        n = round(self.dim ** 0.5)
        m = v.reshape(n, n, order="F")
        if np.max(np.abs(m - m.T), initial=0.0) > tol:
            return False
        return bool(np.linalg.eigvalsh((m + m.T) / 2).min() >= -tol)


class TemplateError(DisciplineError):
    pass


# ---------------------------------------------------------------------------
# Affine maps
# ---------------------------------------------------------------------------

VarKey = Hashable


def _csr(m) -> sp.csr_matrix:
    return sp.csr_matrix(m)


def _selection(indices, n: int) -> sp.csr_matrix:
    indices = np.asarray(indices, dtype=np.int64)
    k = indices.size
    return sp.csr_matrix((np.ones(k), (np.arange(k), indices)), shape=(k, n))


class AffineMap:
    """``vec(e) = sum_j T_j vec(x_j) + offset`` with sparse ``T_j``.

    Vectorization is column-major throughout.
    """

    __slots__ = ("terms", "offset", "shape")

    def __init__(self, terms: Mapping[VarKey, sp.csr_matrix], offset, shape: Shape):
        self.terms = dict(terms)
        self.offset = np.asarray(offset, dtype=float).ravel()
        self.shape = shape
        if self.offset.size != shape.size:
            raise ValueError("offset does not match shape")

    @classmethod
    def constant(cls, value) -> AffineMap:
        value = np.asarray(value, dtype=float)
        if value.ndim < 2:
            value = value.reshape(-1, 1)
        return cls({}, value.ravel(order="F"), Shape(*value.shape))

    @classmethod
    def variable(cls, key: VarKey, shape: Shape) -> AffineMap:
        return cls({key: sp.identity(shape.size, format="csr")}, np.zeros(shape.size), shape)

    @property
    def size(self) -> int:
        return self.shape.size

    @property
    def is_constant(self) -> bool:
        return not self.terms

    def constant_value(self) -> np.ndarray:
        if not self.is_constant:
            raise TemplateError("expected a constant argument")
        return self.offset.reshape(self.shape.rows, self.shape.cols, order="F")

    def __add__(self, other: AffineMap) -> AffineMap:
        if other.size != self.size:
            raise ValueError(f"cannot add maps of sizes {self.size} and {other.size}")
        terms = dict(self.terms)
        for k, t in other.terms.items():
            terms[k] = terms[k] + t if k in terms else t
        return AffineMap(terms, self.offset + other.offset, self.shape)

    def __neg__(self) -> AffineMap:
        return AffineMap({k: -t for k, t in self.terms.items()}, -self.offset, self.shape)

    def __sub__(self, other: AffineMap) -> AffineMap:
        return self + (-other)

    def scaled(self, c: float) -> AffineMap:
        return AffineMap({k: t * c for k, t in self.terms.items()}, self.offset * c, self.shape)

    def plus_constant(self, c) -> AffineMap:
        return AffineMap(self.terms, self.offset + c, self.shape)

    def apply(self, mat, shape: Shape) -> AffineMap:
        """Left-multiply by the linear operator ``mat`` acting on ``vec``."""
        mat = _csr(mat)
        return AffineMap({k: _csr(mat @ t) for k, t in self.terms.items()},
                         mat @ self.offset, shape)

    def reshape(self, shape: Shape) -> AffineMap:
        if shape.size != self.size:
            raise ValueError("reshape must preserve size")
        return AffineMap(self.terms, self.offset, shape)

    def broadcast(self, shape: Shape) -> AffineMap:
        if self.shape == shape:
            return self
        if self.size != 1:
            raise ValueError(f"cannot broadcast {self.shape} to {shape}")
        return self.apply(np.ones((shape.size, 1)), shape)

    def select(self, indices, shape: Shape | None = None) -> AffineMap:
        indices = np.asarray(indices, dtype=np.int64)
        return self.apply(_selection(indices, self.size), shape or Shape(indices.size, 1))

    def vec(self) -> AffineMap:
        return self.reshape(Shape(self.size, 1))

    @staticmethod
    def stack(maps: Iterable[AffineMap]) -> AffineMap:
        """Vertical concatenation of the vectorized maps."""
        maps = list(maps)
        keys: dict[VarKey, int] = {}
        for m in maps:
            for k, t in m.terms.items():
                keys.setdefault(k, t.shape[1])
        terms = {}
        for k, ncols in keys.items():
            blocks = [m.terms.get(k) if k in m.terms else sp.csr_matrix((m.size, ncols))
                      for m in maps]
            terms[k] = sp.vstack(blocks, format="csr")
        offset = np.concatenate([m.offset for m in maps])
        return AffineMap(terms, offset, Shape(offset.size, 1))

    @staticmethod
    def interleave(maps: list[AffineMap]) -> AffineMap:
        """Stack ``k`` equal-size maps entry by entry: (a0, b0, .., a1, b1, ..)."""
        k, n = len(maps), maps[0].size
        stacked = AffineMap.stack(maps)
        order = (np.arange(k)[None, :] * n + np.arange(n)[:, None]).ravel()
        return stacked.select(order)

    def evaluate(self, values: Mapping[VarKey, np.ndarray]) -> np.ndarray:
        out = self.offset.copy()
        for k, t in self.terms.items():
            out += t @ np.asarray(values[k], dtype=float).ravel(order="F")
        return out

    def evaluate_columns(self, x: np.ndarray, var_index: Mapping[VarKey, tuple[int, int]]):
        out = self.offset.copy()
        for k, t in self.terms.items():
            start, length = var_index[k]
            out += t @ x[start:start + length]
        return out

    def digest(self) -> bytes:
        h = hashlib.blake2b(digest_size=16)
        h.update(repr(self.shape).encode())
        h.update(self.offset.tobytes())
        for k in sorted(self.terms, key=repr):
            t = self.terms[k].tocsr()
            t.sort_indices()
            h.update(repr(k).encode())
            for part in (t.data, t.indices, t.indptr):
                h.update(np.ascontiguousarray(part).tobytes())
        return h.digest()

    def __repr__(self) -> str:
        return f"AffineMap({self.shape}, vars={list(self.terms)})"


class MapLeaf(Expression):
    """An already-lowered argument standing in for a child expression.

    Used to push composite atoms' expansions through the lowering machinery
    when their arguments are only known as affine maps.
    """

    __slots__ = ("map",)

    def __init__(self, amap: AffineMap):
        self.map = amap
        self.shape = amap.shape
        self.sign = Sign.NOSIGN
        self.is_constant = amap.is_constant
        self.uid = int.from_bytes(amap.digest()[:8], "little")

    @property
    def value(self):
        if self.map.is_constant:
            return self.map.constant_value()
        raise EvaluationError("a lowered argument has no numeric value")


# ---------------------------------------------------------------------------
# Lowering context
# ---------------------------------------------------------------------------


@dataclass
class ConicConstraint:
    """``map`` (vectorized) lies in the product of ``cones``."""

    map: AffineMap
    kind: ConeKind
    dims: tuple[int, ...]
    origin: int | None = None

    @property
    def cones(self) -> list[Cone]:
        return [Cone(self.kind, d) for d in self.dims]


@dataclass
class TemplateRecord:
    """One nonlinear template instantiation, kept for graph-tightness checks."""

    tag: str
    params: tuple
    inputs: list[AffineMap]
    output: AffineMap
    uid: int


class Lowering:
    def __init__(self, memoize: bool = True):
        self.memoize = memoize
        self.cache: dict[int, AffineMap] = {}
        self.constraints: list[ConicConstraint] = []
        self.aux: dict[VarKey, Shape] = {}
        self.user_vars: dict[int, Variable] = {}
        self.records: list[TemplateRecord] = []
        self.instantiations: dict[str, int] = {}
        self._serial = 0
        self._owner: tuple[int, str, int] = (0, "", 0)
        self._slot = 0

    # used by templates ---------------------------------------------------------

    def new_var(self, shape: Shape) -> AffineMap:
        uid, tag, serial = self._owner
        key = ("aux", uid, tag, serial, self._slot)
        self._slot += 1
        self.aux[key] = shape
        return AffineMap.variable(key, shape)

    def add(self, amap: AffineMap, kind: ConeKind, block: int | None = None,
            origin: int | None = None) -> ConicConstraint:
        kind = ConeKind(kind)
        n = amap.size
        if kind in (ConeKind.ZERO, ConeKind.FREE, ConeKind.NONNEG):
            dims = (n,)
        else:
            block = block or n
            if n % block:
                raise TemplateError(f"{n} rows do not split into {kind.value} blocks of {block}")
            dims = (block,) * (n // block)
        cc = ConicConstraint(amap.vec(), kind, dims, origin)
        self.constraints.append(cc)
        return cc

    # the recursion ---------------------------------------------------------------

    def _visit(self, node: Expression, args: list[AffineMap]) -> AffineMap:
        if isinstance(node, MapLeaf):
            return node.map
        if isinstance(node, Variable):
            self.user_vars.setdefault(node.id, node)
            return AffineMap.variable(node.id, node.shape)
        if node.is_constant:
            return AffineMap.constant(evaluate(node))
        if not isinstance(node, AtomApp):
            raise TemplateError(f"cannot lower {node!r}")
        return self.instantiate(node.tag, args, node.params, node.uid)

    def lower(self, e: Expression) -> AffineMap:
        cache = self.cache if self.memoize else {}
        return fold(e, self._visit, memo=self.memoize, prune=lambda n: n.is_constant,
                    cache=cache)

    def instantiate(self, tag: str, args: list[AffineMap], params: tuple = (),
                    uid: int = 0) -> AffineMap:
        desc = atoms.lookup(tag)
        if desc.template is None:
            raise TemplateError(f"atom {tag!r} has no conic-form template")
        saved = self._owner, self._slot
        self._owner = (uid, tag, self._serial)
        self._serial += 1
        self._slot = 0
        try:
            out = desc.template(self, args, params)
        finally:
            self._owner, self._slot = saved
        self.instantiations[tag] = self.instantiations.get(tag, 0) + 1
        if desc.cones and not desc.is_composite:
            self.records.append(TemplateRecord(tag, params, list(args), out, uid))
        return out


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


def template_for(*tags):
    def deco(fn):
        for t in tags:
            atoms.lookup(t).template = fn
        return fn
    return deco


@template_for("+")
def _t_plus(ctx, args, params):
    shape = SCALAR
    for a in args:
        shape = broadcast_shape(shape, a.shape) if not a.shape.is_scalar else shape
    out = args[0].broadcast(shape)
    for a in args[1:]:
        out = out + a.broadcast(shape)
    return out


@template_for("-")
def _t_negate(ctx, args, params):
    return -args[0]


@template_for("*")
def _t_mul(ctx, args, params):
    a, b = args
    if a.is_constant:
        c, x, left = a.constant_value(), b, True
    elif b.is_constant:
        c, x, left = b.constant_value(), a, False
    else:
        raise TemplateError("cannot lower a product of two non-constant expressions")
    if c.shape == (1, 1):
        return x.scaled(float(c[0, 0]))
    if x.shape.is_scalar:
        return x.apply(c.reshape(-1, 1, order="F"), Shape(*c.shape))
    rows, cols = x.shape
    if left:
        op = sp.kron(sp.identity(cols), _csr(c), format="csr")
        return x.apply(op, Shape(c.shape[0], cols))
    op = sp.kron(_csr(c.T), sp.identity(rows), format="csr")
    return x.apply(op, Shape(rows, c.shape[1]))


@template_for("getindex")
def _t_getindex(ctx, args, params):
    x = args[0]
    p = dict(params)
    rows, cols = np.asarray(p["rows"]), np.asarray(p["cols"])
    idx = (rows[:, None] + cols[None, :] * x.shape.rows).ravel(order="F")
    return x.select(idx, Shape(rows.size, cols.size))


@template_for("hcat")
def _t_hcat(ctx, args, params):
    return AffineMap.stack(args).reshape(
        Shape(args[0].shape.rows, sum(a.shape.cols for a in args)))


@template_for("vcat")
def _t_vcat(ctx, args, params):
    cols = args[0].shape.cols
    total_rows = sum(a.shape.rows for a in args)
    order = np.empty(total_rows * cols, dtype=np.int64)
    base, row0 = 0, 0
    for a in args:
        r = a.shape.rows
        for j in range(cols):
            order[j * total_rows + row0:j * total_rows + row0 + r] = base + j * r + np.arange(r)
        base += a.size
        row0 += r
    return AffineMap.stack(args).select(order, Shape(total_rows, cols))


@template_for("diag")
def _t_diag(ctx, args, params):
    n = args[0].shape.rows
    return args[0].select(np.arange(n) * (n + 1), Shape(n, 1))


@template_for("transpose")
def _t_transpose(ctx, args, params):
    x = args[0]
    r, c = x.shape
    # output (i, j) of the c x r result reads input (j, i)
    i, j = np.meshgrid(np.arange(c), np.arange(r), indexing="ij")
    idx = (j + i * r).ravel(order="F")
    return x.select(idx, Shape(c, r))


@template_for("vec")
def _t_vec(ctx, args, params):
    return args[0].vec()


@template_for("sum")
def _t_sum(ctx, args, params):
    return args[0].apply(np.ones((1, args[0].size)), SCALAR)


@template_for("abs")
def _t_abs(ctx, args, params):
    x = args[0]
    t = ctx.new_var(x.shape)
    ctx.add(t - x, ConeKind.NONNEG)
    ctx.add(t + x, ConeKind.NONNEG)
    return t


@template_for("max")
def _t_max(ctx, args, params):
    x = args[0]
    t = ctx.new_var(SCALAR)
    ctx.add(t.broadcast(x.shape) - x, ConeKind.NONNEG)
    return t


@template_for("min")
def _t_min(ctx, args, params):
    x = args[0]
    t = ctx.new_var(SCALAR)
    ctx.add(x - t.broadcast(x.shape), ConeKind.NONNEG)
    return t


@template_for("maximum")
def _t_maximum(ctx, args, params):
    x, y = args
    t = ctx.new_var(x.shape)
    ctx.add(t - x, ConeKind.NONNEG)
    ctx.add(t - y, ConeKind.NONNEG)
    return t


@template_for("minimum")
def _t_minimum(ctx, args, params):
    x, y = args
    t = ctx.new_var(x.shape)
    ctx.add(x - t, ConeKind.NONNEG)
    ctx.add(y - t, ConeKind.NONNEG)
    return t


@template_for("norm_inf")
def _t_norm_inf(ctx, args, params):
    x = args[0]
    t = ctx.new_var(SCALAR).broadcast(x.shape)
    ctx.add(t - x, ConeKind.NONNEG)
    ctx.add(t + x, ConeKind.NONNEG)
    return t.select([0], SCALAR)


@template_for("norm_2")
def _t_norm_2(ctx, args, params):
    x = args[0]
    t = ctx.new_var(SCALAR)
    ctx.add(AffineMap.stack([t, x.vec()]), ConeKind.SOC)
    return t


def _soc3(ctx, a: AffineMap, b: AffineMap, c: AffineMap) -> None:
    """Elementwise ``(a_i, b_i, c_i)`` in SOC(3), i.e. ``b_i^2 + c_i^2 <= a_i^2``, a_i >= 0."""
    ctx.add(AffineMap.interleave([a.vec(), b.vec(), c.vec()]), ConeKind.SOC, block=3)


@template_for("square")
def _t_square(ctx, args, params):
    # x^2 <= t  <=>  ||(2x, t - 1)|| <= t + 1
    x = args[0]
    t = ctx.new_var(x.shape)
    _soc3(ctx, t.plus_constant(1.0), x.scaled(2.0), t.plus_constant(-1.0))
    return t


@template_for("sqrt")
def _t_sqrt(ctx, args, params):
    # t^2 <= x  <=>  ||(2t, x - 1)|| <= x + 1
    x = args[0]
    t = ctx.new_var(x.shape)
    _soc3(ctx, x.plus_constant(1.0), t.scaled(2.0), x.plus_constant(-1.0))
    return t


@template_for("geo_mean")
def _t_geo_mean(ctx, args, params):
    # t^2 <= x y with x, y >= 0  <=>  ||(2t, x - y)|| <= x + y
    x, y = args
    t = ctx.new_var(x.shape)
    _soc3(ctx, x + y, t.scaled(2.0), x - y)
    return t


@template_for("inv_pos")
def _t_inv_pos(ctx, args, params):
    # x t >= 1 with x, t >= 0  <=>  ||(2, x - t)|| <= x + t
    x = args[0]
    t = ctx.new_var(x.shape)
    two = AffineMap.constant(np.full((x.shape.rows, x.shape.cols), 2.0))
    _soc3(ctx, x + t, two, x - t)
    return t


@template_for("quad_over_lin")
def _t_quad_over_lin(ctx, args, params):
    # x'x <= t y with y >= 0  <=>  ||(2x, t - y)|| <= t + y
    x, y = args
    t = ctx.new_var(SCALAR)
    ctx.add(AffineMap.stack([t + y, x.vec().scaled(2.0), t - y]), ConeKind.SOC)
    ctx.add(y, ConeKind.NONNEG)
    return t


def _exp_triples(ctx, x: AffineMap, y: AffineMap, z: AffineMap) -> None:
    ctx.add(AffineMap.interleave([x.vec(), y.vec(), z.vec()]), ConeKind.EXP, block=3)


def _ones_like(m: AffineMap) -> AffineMap:
    return AffineMap.constant(np.ones((m.shape.rows, m.shape.cols)))


@template_for("exp")
def _t_exp(ctx, args, params):
    x = args[0]
    z = ctx.new_var(x.shape)
    _exp_triples(ctx, x, _ones_like(x), z)
    return z


@template_for("log")
def _t_log(ctx, args, params):
    x = args[0]
    t = ctx.new_var(x.shape)
    _exp_triples(ctx, t, _ones_like(x), x)
    return t


@template_for("logsumexp")
def _t_logsumexp(ctx, args, params):
    # sum_i exp(x_i - t) <= 1
    x = args[0]
    t = ctx.new_var(SCALAR)
    u = ctx.new_var(x.shape)
    _exp_triples(ctx, x - t.broadcast(x.shape), _ones_like(x), u)
    ctx.add(AffineMap.constant(1.0) - u.apply(np.ones((1, u.size)), SCALAR), ConeKind.NONNEG)
    return t


def _block_matrix(n_top: int, n_bottom: int, x: AffineMap) -> tuple[np.ndarray, np.ndarray]:
    """Positions of ``X`` and ``X'`` inside vec([[*, X], [X', *]])."""
    m, n = x.shape
    size = n_top + n_bottom
    i, j = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    i, j = i.ravel(order="F"), j.ravel(order="F")
    upper = i + (n_top + j) * size
    lower = (n_top + j) + i * size
    return upper, lower


def _scatter(positions: np.ndarray, total: int, src_size: int) -> sp.csr_matrix:
    src = np.arange(positions.size) % src_size
    return sp.csr_matrix((np.ones(positions.size), (positions, src)), shape=(total, src_size))


def _symmetry_rows(ctx, u: AffineMap) -> None:
    n = u.shape.rows
    if n < 2:
        return
    i, j = np.triu_indices(n, 1)
    ctx.add(u.select(i + j * n) - u.select(j + i * n), ConeKind.ZERO)


@template_for("operatornorm")
def _t_operatornorm(ctx, args, params):
    # sigma_max(X) <= t  <=>  [[t I, X], [X', t I]] is PSD
    x = args[0]
    m, n = x.shape
    size = m + n
    t = ctx.new_var(SCALAR)
    upper, lower = _block_matrix(m, n, x)
    xpart = x.vec().apply(_scatter(np.concatenate([upper, lower]), size * size, x.size),
                          Shape(size * size, 1))
    diag = np.arange(size) * (size + 1)
    tpart = t.apply(_scatter(diag, size * size, 1), Shape(size * size, 1))
    ctx.add(xpart + tpart, ConeKind.PSD, block=size * size)
    return t


@template_for("nuclearnorm")
def _t_nuclearnorm(ctx, args, params):
    # ||X||_* <= t  <=>  exists U, V: [[U, X], [X', V]] PSD, (tr U + tr V) / 2 <= t
    x = args[0]
    m, n = x.shape
    size = m + n
    u = ctx.new_var(Shape(m, m))
    v = ctx.new_var(Shape(n, n))
    upper, lower = _block_matrix(m, n, x)
    total = size * size
    xpart = x.vec().apply(_scatter(np.concatenate([upper, lower]), total, x.size),
                          Shape(total, 1))
    ui, uj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    upos = (ui + uj * size).ravel(order="F")
    vi, vj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    vpos = ((m + vi) + (m + vj) * size).ravel(order="F")
    block = (xpart + u.vec().apply(_scatter(upos, total, m * m), Shape(total, 1))
             + v.vec().apply(_scatter(vpos, total, n * n), Shape(total, 1)))
    ctx.add(block, ConeKind.PSD, block=total)
    _symmetry_rows(ctx, u)
    _symmetry_rows(ctx, v)
    tr_u = u.select(np.arange(m) * (m + 1)).apply(np.full((1, m), 0.5), SCALAR)
    tr_v = v.select(np.arange(n) * (n + 1)).apply(np.full((1, n), 0.5), SCALAR)
    return tr_u + tr_v


def _composite_template(tag):
    def tmpl(ctx, args, params):
        desc = atoms.lookup(tag)
        expansion = desc.expand([MapLeaf(a) for a in args], params)
        return ctx.lower(expansion)
    return tmpl


for _desc in atoms.catalog():
    if _desc.is_composite and _desc.template is None:
        _desc.template = _composite_template(_desc.tag)


def template(tag: str, child_objs: list[AffineMap], params: tuple = ()):
    """Apply one atom's template to affine arguments.

    Returns the objective map and the list of conic constraints it created.
    """
    ctx = Lowering()
    out = ctx.instantiate(tag, list(child_objs), params)
    return out, ctx.constraints


def conic_form(e: Expression, memo: Lowering | None = None):
    """Objective map and constraints whose optimum reproduces ``e``.

    Passing a :class:`Lowering` as ``memo`` shares memoized results (and the
    constraint list) between several expressions.
    """
    diag = diagnose(e)
    if not diag.verdict.is_dcp:
        raise DCPError([diag])
    ctx = memo if memo is not None else Lowering()
    return ctx.lower(e), ctx.constraints


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


@dataclass
class ConicProblem:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list[Cone]
    var_index: dict[VarKey, tuple[int, int]]
    objective_offset: float = 0.0
    sense_flip: bool = False
    variables: dict[int, Variable] = field(default_factory=dict)
    var_shapes: dict[VarKey, Shape] = field(default_factory=dict)
    # user constraint index -> (first row, row count) of its own relation
    constraint_rows: dict[int, tuple[int, int]] = field(default_factory=dict)
    constraint_shapes: dict[int, Shape] = field(default_factory=dict)
    records: list[TemplateRecord] = field(default_factory=list)
    instantiations: dict[str, int] = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def aux_keys(self) -> list[VarKey]:
        return [k for k in self.var_index if not isinstance(k, int)]

    def objective_value(self, x: np.ndarray) -> float:
        """Objective of the original problem (sense restored) at columns ``x``."""
        val = float(self.c @ x) + self.objective_offset
        return -val if self.sense_flip else val


def _attribute_constraints(ctx: Lowering, var: Variable) -> None:
    attrs = var.attributes
    x = AffineMap.variable(var.id, var.shape)
    if attrs.sign is Sign.POSITIVE:
        ctx.add(x, ConeKind.NONNEG)
    elif attrs.sign is Sign.NEGATIVE:
        ctx.add(-x, ConeKind.NONNEG)
    if attrs.semidefinite:
        ctx.add(x.vec(), ConeKind.PSD, block=var.shape.size)
    if attrs.symmetric:
        _symmetry_rows(ctx, x)


def lower_problem(p: Problem, memoize: bool = True) -> ConicProblem:
    ok, diags = problem_is_dcp(p)
    if not ok:
        raise DCPError(diags)
    ctx = Lowering(memoize)
    flip = p.sense is Sense.MAXIMIZE
    if p.objective is not None:
        obj = ctx.lower(p.objective)
    else:
        obj = AffineMap.constant(0.0)
    if flip:
        obj = -obj
    shapes = {}
    for i, con in enumerate(p.constraints):
        lhs = ctx.lower(con.lhs).broadcast(con.shape)
        rhs = ctx.lower(con.rhs).broadcast(con.shape)
        shapes[i] = con.shape
        if con.kind == "<=":
            ctx.add(rhs - lhs, ConeKind.NONNEG, origin=i)
        elif con.kind == ">=":
            ctx.add(lhs - rhs, ConeKind.NONNEG, origin=i)
        else:
            ctx.add(rhs - lhs, ConeKind.ZERO, origin=i)
    for var in p.variables():
        ctx.user_vars.setdefault(var.id, var)
    for vid in sorted(ctx.user_vars):
        _attribute_constraints(ctx, ctx.user_vars[vid])
    return _assemble(ctx, obj, flip, shapes)


def _assemble(ctx: Lowering, obj: AffineMap, flip: bool, shapes) -> ConicProblem:
    var_index: dict[VarKey, tuple[int, int]] = {}
    var_shapes: dict[VarKey, Shape] = {}
    col = 0
    for vid in sorted(ctx.user_vars):
        shape = ctx.user_vars[vid].shape
        var_index[vid] = (col, shape.size)
        var_shapes[vid] = shape
        col += shape.size
    for key, shape in ctx.aux.items():
        var_index[key] = (col, shape.size)
        var_shapes[key] = shape
        col += shape.size
    n = col

    ordered = [cc for kind in ROW_ORDER for cc in ctx.constraints if cc.kind is kind]
    rows_i, cols_j, vals = [], [], []
    b_parts = []
    cones: list[Cone] = []
    constraint_rows = {}
    row = 0
    for cc in ordered:
        m = cc.map
        for key, t in m.terms.items():
            coo = t.tocoo()
            start = var_index[key][0]
            rows_i.append(coo.row + row)
            cols_j.append(coo.col + start)
            vals.append(-coo.data)
        b_parts.append(m.offset)
        if cc.origin is not None:
            constraint_rows[cc.origin] = (row, m.size)
        if cones and cc.kind in (ConeKind.ZERO, ConeKind.FREE, ConeKind.NONNEG) \
                and cones[-1].kind is cc.kind:
            cones[-1] = Cone(cc.kind, cones[-1].dim + m.size)
        elif cc.kind in (ConeKind.ZERO, ConeKind.FREE, ConeKind.NONNEG):
            cones.append(Cone(cc.kind, m.size))
        else:
            cones.extend(cc.cones)
        row += m.size
    if rows_i:
        data = np.concatenate(vals)
        A = sp.coo_matrix((data, (np.concatenate(rows_i), np.concatenate(cols_j))),
                          shape=(row, n)).tocsr()
    else:
        A = sp.csr_matrix((row, n))
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)

    c = np.zeros(n)
    for key, t in obj.terms.items():
        start, length = var_index[key]
        c[start:start + length] += np.asarray(t.todense()).ravel()
    return ConicProblem(
        c=c, A=A, b=b, cones=cones, var_index=var_index,
        objective_offset=float(obj.offset[0]), sense_flip=flip,
        variables=dict(sorted(ctx.user_vars.items())), var_shapes=var_shapes,
        constraint_rows=constraint_rows, constraint_shapes=shapes,
        records=ctx.records, instantiations=dict(ctx.instantiations))


def required_cones(cp: ConicProblem) -> set[ConeKind]:
    return {cone.kind for cone in cp.cones}


def record_gaps(cp: ConicProblem, x: np.ndarray) -> list[tuple[TemplateRecord, float]]:
    """For each nonlinear template, the largest |aux - atom(args)| at columns ``x``.

    Zero means the auxiliary variable sits on the graph of its atom.
    """
    out = []
    for rec in cp.records:
        desc = atoms.lookup(rec.tag)
        vals = [a.evaluate_columns(x, cp.var_index).reshape(a.shape.rows, a.shape.cols,
                                                            order="F") for a in rec.inputs]
        expected = np.asarray(desc.evaluate(vals, rec.params), dtype=float).ravel(order="F")
        got = rec.output.evaluate_columns(x, cp.var_index)
        out.append((rec, float(np.max(np.abs(got - expected)))))
    return out
