"""Disciplined convex programming: model, verify, lower to conic form, solve."""

from . import atoms
from .atoms import AtomDescriptor, UnknownAtomError, register_atom
from .dcp import DCPError, diagnose, is_dcp, problem_is_dcp, vexity
from .expr import (
    Constant,
    Constraint,
    DisciplineError,
    DomainError,
    EvaluationError,
    Expression,
    Monotonicity,
    Problem,
    Sense,
    Shape,
    ShapeError,
    Sign,
    Variable,
    Vexity,
    maximize,
    minimize,
    satisfy,
)
from .functions import *  # noqa: F401,F403
from .functions import __all__ as _function_names
from .conic import Cone, ConeKind, ConicProblem, conic_form, lower_problem, required_cones
from .solver import Solution, SolveSettings, SolveStatus, UnsupportedConeError, project, solve

__all__ = [
    "AtomDescriptor", "Cone", "ConeKind", "ConicProblem", "Constant", "Constraint",
    "DCPError", "DisciplineError", "DomainError", "EvaluationError", "Expression",
    "Monotonicity", "Problem", "Sense", "Shape", "ShapeError", "Sign", "Solution",
    "SolveSettings", "SolveStatus", "UnknownAtomError", "UnsupportedConeError", "Variable",
    "Vexity", "atoms", "conic_form", "diagnose", "is_dcp", "lower_problem", "maximize",
    "minimize", "problem_is_dcp", "project", "register_atom", "required_cones", "satisfy",
    "solve", "vexity", *_function_names,
]
