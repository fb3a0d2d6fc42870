"""JSON documents for problems and their conic forms.

A problem document is an object with keys ``sense``, ``variables``,
``objective`` and ``constraints``.  Expressions are prefix-notation nodes::

    {"atom": "norm_inf", "args": [{"var": "x"}]}
    {"atom": "getindex", "args": [{"var": "x"}], "params": {"rows": [0], "cols": [0]}}
    {"const": [[1, 2], [3, 4]]}

A constant is a number (scalar), a flat list (column vector) or a list of
rows.  Indices in ``getindex`` params are zero-based.  For convenience
``"max"``/``"min"`` with two arguments mean the elementwise forms and ``"-"``
with two arguments means subtraction.
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

from .conic import ConicProblem
from .expr import (
    AtomApp,
    Constant,
    Constraint,
    Expression,
    Problem,
    Sense,
    Variable,
    apply_atom,
)
from .functions import max as _max
from .functions import min as _min


class DocumentError(ValueError):
    pass


CONVENTION = "b-Ax-in-K"


def dumps(doc: dict) -> str:
    """Canonical JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Problem documents
# ---------------------------------------------------------------------------


def _const_to_json(value: np.ndarray):
    value = np.asarray(value, dtype=float)
    if value.shape == (1, 1):
        return float(value[0, 0])
    if value.shape[1] == 1:
        return [float(v) for v in value[:, 0]]
    return [[float(v) for v in row] for row in value]


def _const_from_json(raw) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"bad constant {raw!r}") from exc
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        if arr.size == 0:
            raise DocumentError("empty constant")
        return arr.reshape(-1, 1)
    if arr.ndim == 2 and arr.size:
        return arr
    raise DocumentError(f"constants must be scalars, vectors or matrices, got {raw!r}")


def _params_to_json(params: tuple) -> dict:
    out = {}
    for k, v in params:
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _params_from_json(raw: dict) -> tuple:
    if not isinstance(raw, dict):
        raise DocumentError("params must be an object")
    return tuple((k, tuple(v) if isinstance(v, list) else v) for k, v in sorted(raw.items()))


def parse_expression(node, variables: dict[str, Variable]) -> Expression:
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return Constant(float(node))
    if not isinstance(node, dict):
        raise DocumentError(f"expected an expression node, got {node!r}")
    if "var" in node:
        name = node["var"]
        if name not in variables:
            raise DocumentError(f"undeclared variable {name!r}")
        return variables[name]
    if "const" in node:
        return Constant(_const_from_json(node["const"]))
    if "atom" not in node:
        raise DocumentError(f"node needs one of 'atom', 'var' or 'const': {node!r}")
    tag = node["atom"]
    args = node.get("args", [])
    if not isinstance(args, list):
        raise DocumentError(f"args of {tag!r} must be a list")
    children = [parse_expression(a, variables) for a in args]
    params = _params_from_json(node.get("params", {}))
    if tag in ("max", "min") and len(children) == 2:
        return (_max if tag == "max" else _min)(*children)
    if tag == "-" and len(children) == 2:
        return children[0] - children[1]
    return apply_atom(tag, children, params)


def expression_to_json(e: Expression) -> Any:
    if isinstance(e, Variable):
        return {"var": e.name}
    if isinstance(e, Constant):
        return {"const": _const_to_json(e.data)}
    if isinstance(e, AtomApp):
        node = {"atom": e.tag, "args": [expression_to_json(c) for c in e.children]}
        if e.params:
            node["params"] = _params_to_json(e.params)
        return node
    raise DocumentError(f"cannot serialize {e!r}")


def _variable_from_json(raw: dict) -> Variable:
    try:
        name = raw["name"]
    except (KeyError, TypeError):
        raise DocumentError(f"variable entry needs a name: {raw!r}") from None
    attrs = raw.get("attributes", {}) or {}
    try:
        return Variable(int(raw.get("rows", 1)), int(raw.get("cols", 1)),
                        sign=attrs.get("sign", "nosign"),
                        semidefinite=bool(attrs.get("semidefinite", False)),
                        symmetric=bool(attrs.get("symmetric", False)), name=name)
    except ValueError as exc:
        raise DocumentError(f"variable {name!r}: {exc}") from exc


def _variable_to_json(v: Variable) -> dict:
    a = v.attributes
    return {"name": v.name, "rows": v.shape.rows, "cols": v.shape.cols,
            "attributes": {"sign": a.sign.value, "semidefinite": a.semidefinite,
                           "symmetric": a.symmetric}}


def parse_problem(doc: dict) -> Problem:
    if not isinstance(doc, dict):
        raise DocumentError("a problem document must be a JSON object")
    try:
        sense = Sense(doc.get("sense", "minimize"))
    except ValueError:
        raise DocumentError(f"unknown sense {doc.get('sense')!r}") from None
    variables: dict[str, Variable] = {}
    for raw in doc.get("variables", []):
        v = _variable_from_json(raw)
        if v.name in variables:
            raise DocumentError(f"variable {v.name!r} declared twice")
        variables[v.name] = v
    objective = None
    if doc.get("objective") is not None:
        objective = parse_expression(doc["objective"], variables)
    constraints = []
    for raw in doc.get("constraints", []):
        if not isinstance(raw, dict) or raw.get("op") not in Constraint.KINDS:
            raise DocumentError(f"bad constraint {raw!r}")
        lhs = parse_expression(raw.get("lhs"), variables)
        rhs = parse_expression(raw.get("rhs"), variables)
        constraints.append(Constraint(raw["op"], lhs, rhs))
    p = Problem(sense, objective, constraints)
    # keep declared-but-unused variables visible to callers
    p.declared = variables
    return p


def problem_to_json(p: Problem) -> dict:
    declared = getattr(p, "declared", None)
    variables = list(declared.values()) if declared else p.variables()
    names = [v.name for v in variables]
    if len(set(names)) != len(names):
        raise DocumentError("variable names must be unique to serialize a problem")
    doc = {
        "sense": p.sense.value,
        "variables": [_variable_to_json(v) for v in variables],
        "constraints": [{"op": c.kind, "lhs": expression_to_json(c.lhs),
                         "rhs": expression_to_json(c.rhs)} for c in p.constraints],
    }
    if p.objective is not None:
        doc["objective"] = expression_to_json(p.objective)
    return doc


def load_problem(path) -> Problem:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise DocumentError(f"{path}: malformed JSON: {exc}") from exc
    return parse_problem(doc)


# ---------------------------------------------------------------------------
# Conic documents
# ---------------------------------------------------------------------------


def conic_to_json(cp: ConicProblem) -> dict:
    A = cp.A.tocsr()
    A.sort_indices()
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    triplets = [[int(i), int(j), float(v)] for i, j, v in zip(rows, A.indices, A.data)]
    var_index = {}
    aux = 0
    for key, (start, length) in cp.var_index.items():
        if isinstance(key, int):
            name = cp.variables[key].name
        else:
            name = f"_aux{aux}"
            aux += 1
        var_index[name] = [start, length]
    return {
        "convention": CONVENTION,
        "n_vars": cp.n_vars,
        "objective_offset": float(cp.objective_offset),
        "sense_flip": bool(cp.sense_flip),
        "c": [float(v) for v in cp.c],
        "b": [float(v) for v in cp.b],
        "A": {"rows": int(A.shape[0]), "cols": int(A.shape[1]), "triplets": triplets},
        "cones": [{"kind": cone.kind.value, "dim": cone.dim} for cone in cp.cones],
        "var_index": var_index,
        "constraint_rows": {str(i): [s, n] for i, (s, n) in sorted(cp.constraint_rows.items())},
    }
