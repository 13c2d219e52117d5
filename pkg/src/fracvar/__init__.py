"""Fractional variational calculus with the combined Caputo operator."""

from .expr import LagrangianExpr, parse_expression, parse_lagrangian
from .fracops import FracOrders, Grid, Trajectory, make_grid
from .problem import (
    BoundarySpec,
    ConstraintKind,
    ConstraintSpec,
    Fixed,
    Free,
    MultiplierSet,
    ProblemSpec,
    UpperBounded,
)
from .solver import SolveOptions, SolveResult, solve, solve_basic, solve_isoperimetric
from .specfun import DomainError, gamma_fn, mittag_leffler

__version__ = "0.1.0"

__all__ = [
    "LagrangianExpr",
    "parse_expression",
    "parse_lagrangian",
    "FracOrders",
    "Grid",
    "Trajectory",
    "make_grid",
    "BoundarySpec",
    "ConstraintKind",
    "ConstraintSpec",
    "Fixed",
    "Free",
    "MultiplierSet",
    "ProblemSpec",
    "UpperBounded",
    "SolveOptions",
    "SolveResult",
    "solve",
    "solve_basic",
    "solve_isoperimetric",
    "DomainError",
    "gamma_fn",
    "mittag_leffler",
]
