"""Disciplined convex programming checks.

The curvature of an expression is the atom's own curvature plus the sum of its
monotonicity-weighted child curvatures, using the ``Vexity`` and
``Monotonicity`` arithmetic from :mod:`disco.expr`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .atoms import ArgInfo, lookup
from .expr import (
    AtomApp,
    Constraint,
    DisciplineError,
    Expression,
    Problem,
    Sense,
    Vexity,
    fold,
)


@dataclass(frozen=True)
class OffendingNode:
    uid: int
    tag: str
    child_vexities: tuple[Vexity, ...]
    # child indices leading from the analysed root to the node
    path: tuple[int, ...] = ()


@dataclass
class DcpDiagnostic:
    verdict: Vexity
    offending_node: OffendingNode | None = None
    where: str = ""
    message: str = ""

    def __str__(self) -> str:
        head = f"{self.where}: " if self.where else ""
        return head + self.message


class DCPError(DisciplineError):
    def __init__(self, diagnostics: list[DcpDiagnostic]):
        self.diagnostics = diagnostics
        lines = "\n".join(f"  {d}" for d in diagnostics)
        super().__init__(f"problem is not DCP:\n{lines}")


def _arg_infos(node: AtomApp) -> list[ArgInfo]:
    return [ArgInfo(c.sign, c.shape, c.is_constant) for c in node.children]


def node_vexity(node: Expression, child_vexities: list[Vexity]) -> Vexity:
    """Curvature of one node given the curvatures of its children."""
    if node.is_constant:
        return Vexity.CONSTANT
    if not isinstance(node, AtomApp):
        # variables and lowered placeholders are affine leaves
        return Vexity.AFFINE
    desc = lookup(node.tag)
    infos = _arg_infos(node)
    monotonicities = desc.monotonicity_rule(infos, node.params)
    vex = desc.curvature_rule(infos, node.params)
    for mono, child in zip(monotonicities, child_vexities):
        vex += mono * child
    return vex


def vexity(e: Expression, memo: bool = True, cache: dict | None = None) -> Vexity:
    return fold(e, node_vexity, memo=memo, cache=cache)


def _vexities(e: Expression) -> dict[int, Vexity]:
    cache: dict[int, Vexity] = {}
    fold(e, node_vexity, cache=cache)
    return cache


def diagnose(e: Expression, where: str = "") -> DcpDiagnostic:
    """Curvature of ``e`` and, if it is not DCP, the node that broke the rule.

    The reported node is the shallowest atom whose children are all DCP but
    whose composition is not.
    """
    vex = _vexities(e)
    verdict = vex[e.uid]
    if verdict.is_dcp:
        return DcpDiagnostic(verdict, where=where, message=f"{verdict.value}")
    queue = deque([(e, ())])
    seen = set()
    while queue:
        node, path = queue.popleft()
        if node.uid in seen:
            continue
        seen.add(node.uid)
        child_vex = tuple(vex[c.uid] for c in node.children)
        if isinstance(node, AtomApp) and vex[node.uid] is Vexity.NOT_DCP and all(
                v.is_dcp for v in child_vex):
            desc = lookup(node.tag)
            monos = desc.monotonicity_rule(_arg_infos(node), node.params)
            parts = ", ".join(
                f"arg {i}: {v.value} ({m.value})" for i, (v, m) in enumerate(zip(child_vex, monos)))
            own = desc.curvature_rule(_arg_infos(node), node.params)
            msg = (f"not DCP: atom {node.tag!r} ({own.value}) at path {list(path)} "
                   f"cannot compose {parts}")
            return DcpDiagnostic(verdict, OffendingNode(node.uid, node.tag, child_vex, path),
                                 where, msg)
        for i, c in enumerate(node.children):
            queue.append((c, path + (i,)))
    return DcpDiagnostic(verdict, where=where, message="not DCP")


def constraint_is_dcp(c: Constraint, where: str = "constraint") -> tuple[bool, DcpDiagnostic]:
    lhs, rhs = diagnose(c.lhs, f"{where} lhs"), diagnose(c.rhs, f"{where} rhs")
    for side in (lhs, rhs):
        if not side.verdict.is_dcp:
            return False, side
    lv, rv = lhs.verdict, rhs.verdict
    if c.kind == "<=":
        ok = lv.is_convex and rv.is_concave
        rule = "'<=' needs a convex left side and a concave right side"
    elif c.kind == ">=":
        ok = lv.is_concave and rv.is_convex
        rule = "'>=' needs a concave left side and a convex right side"
    else:
        ok = lv.is_affine and rv.is_affine
        rule = "'==' needs affine expressions on both sides"
    # curvature of the constraint function g in g(x) <= 0 form
    verdict = rv + (-lv) if c.kind == ">=" else lv + (-rv)
    if ok:
        return True, DcpDiagnostic(verdict, where=where,
                                   message=f"{lv.value} {c.kind} {rv.value}")
    return False, DcpDiagnostic(Vexity.NOT_DCP, where=where,
                                message=f"{lv.value} {c.kind} {rv.value}: {rule}")


@dataclass
class ProblemReport:
    ok: bool
    objective: DcpDiagnostic | None
    constraints: list[tuple[bool, DcpDiagnostic]] = field(default_factory=list)
    failures: list[DcpDiagnostic] = field(default_factory=list)


def check_problem(p: Problem) -> ProblemReport:
    failures: list[DcpDiagnostic] = []
    obj = None
    if p.objective is not None:
        obj = diagnose(p.objective, "objective")
        if not obj.verdict.is_dcp:
            failures.append(obj)
        elif p.sense is Sense.MINIMIZE and not obj.verdict.is_convex:
            failures.append(DcpDiagnostic(
                Vexity.NOT_DCP, where="objective",
                message=f"minimize needs a convex objective, got {obj.verdict.value}"))
        elif p.sense is Sense.MAXIMIZE and not obj.verdict.is_concave:
            failures.append(DcpDiagnostic(
                Vexity.NOT_DCP, where="objective",
                message=f"maximize needs a concave objective, got {obj.verdict.value}"))
    cons = []
    for i, c in enumerate(p.constraints):
        ok, diag = constraint_is_dcp(c, f"constraint {i}")
        cons.append((ok, diag))
        if not ok:
            failures.append(diag)
    # variable attribute constraints are conic-affine, hence always DCP
    return ProblemReport(not failures, obj, cons, failures)


def problem_is_dcp(p: Problem) -> tuple[bool, list[DcpDiagnostic]]:
    report = check_problem(p)
    return report.ok, report.failures


def is_dcp(e: Expression) -> bool:
    return vexity(e).is_dcp


__all__ = [
    "DCPError", "DcpDiagnostic", "OffendingNode", "ProblemReport", "check_problem",
    "constraint_is_dcp", "diagnose", "is_dcp", "node_vexity", "problem_is_dcp", "vexity",
]
