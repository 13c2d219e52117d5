"""Problem description: boundary data, constraints and the problem record."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .expr import LagrangianExpr
from .fracops import FracOrders, Grid, make_grid

__all__ = [
    "Fixed",
    "Free",
    "UpperBounded",
    "BoundarySpec",
    "ConstraintKind",
    "ConstraintSpec",
    "ProblemSpec",
    "MultiplierSet",
]


@dataclass(frozen=True)
class Fixed:
    value: float


@dataclass(frozen=True)
class Free:
    pass


@dataclass(frozen=True)
class UpperBounded:
    value: float


EndCondition = Union[Fixed, Free, UpperBounded]


@dataclass(frozen=True)
class BoundarySpec:
    """Per component ``(left, right)`` end conditions.

    The left end is ``Fixed`` or ``Free``; the right end may also be
    ``UpperBounded``. Each component needs at least one non-free end.
    """

    conditions: tuple

    def __post_init__(self):
        conds = tuple(tuple(c) for c in self.conditions)
        for i, (left, right) in enumerate(conds):
            if not isinstance(left, (Fixed, Free)):
                raise ValueError(f"component {i + 1}: left end must be fixed or free")
            if not isinstance(right, (Fixed, Free, UpperBounded)):
                raise ValueError(f"component {i + 1}: bad right end condition {right!r}")
            if isinstance(left, Free) and isinstance(right, Free):
                raise ValueError(f"component {i + 1}: both ends free")
        object.__setattr__(self, "conditions", conds)

    @classmethod
    def fixed(cls, left: Sequence[float], right: Sequence[float]) -> "BoundarySpec":
        return cls(tuple((Fixed(float(a)), Fixed(float(b))) for a, b in zip(left, right)))

    @property
    def n_components(self) -> int:
        return len(self.conditions)

    def left(self, i: int) -> EndCondition:
        return self.conditions[i][0]

    def right(self, i: int) -> EndCondition:
        return self.conditions[i][1]


class ConstraintKind(enum.Enum):
    ISO_EQ = "iso_eq"
    ISO_INEQ = "iso_ineq"
    PW_EQ = "pw_eq"
    PW_INEQ = "pw_ineq"

    @property
    def isoperimetric(self) -> bool:
        return self in (ConstraintKind.ISO_EQ, ConstraintKind.ISO_INEQ)

    @property
    def inequality(self) -> bool:
        return self in (ConstraintKind.ISO_INEQ, ConstraintKind.PW_INEQ)


@dataclass(frozen=True)
class ConstraintSpec:
    """``int G = target`` / ``int G <= target`` or pointwise ``G = 0`` / ``G <= 0``."""

    kind: ConstraintKind
    integrand: LagrangianExpr
    target: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ConstraintKind(self.kind))
        if not np.isfinite(self.target):
            raise ValueError("constraint target must be finite")


@dataclass(frozen=True)
class ProblemSpec:
    a: float
    b: float
    orders: FracOrders
    objectives: tuple
    boundary: BoundarySpec
    constraints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.objectives:
            raise ValueError("need at least one objective")
        if not self.b > self.a:
            raise ValueError("need b > a")
        N = self.orders.n_components
        if self.boundary.n_components != N:
            raise ValueError("boundary spec / orders component mismatch")
        for e in list(self.objectives) + [c.integrand for c in self.constraints]:
            if e.n_components != N:
                raise ValueError(f"expression {e.source!r} has {e.n_components} components, need {N}")
        pw = [c for c in self.constraints if not c.kind.isoperimetric]
        if pw and len(pw) >= N:
            raise ValueError("pointwise constraints require r < N")
        if pw and len(pw) != len(self.constraints):
            raise ValueError("cannot mix pointwise and isoperimetric constraints")

    @property
    def n_components(self) -> int:
        return self.orders.n_components

    @property
    def n_objectives(self) -> int:
        return len(self.objectives)

    @property
    def isoperimetric(self) -> bool:
        return bool(self.constraints) and self.constraints[0].kind.isoperimetric

    @property
    def pointwise(self) -> bool:
        return bool(self.constraints) and not self.constraints[0].kind.isoperimetric

    def grid(self, n: int) -> Grid:
        return make_grid(self.a, self.b, n)

    def with_objectives(self, objectives) -> "ProblemSpec":
        return ProblemSpec(self.a, self.b, self.orders, tuple(objectives), self.boundary, self.constraints)

    def with_constraints(self, constraints) -> "ProblemSpec":
        return ProblemSpec(self.a, self.b, self.orders, self.objectives, self.boundary, tuple(constraints))


@dataclass(frozen=True)
class MultiplierSet:
    """Multipliers for a constraint list.

    ``values`` holds either ``r`` constants (isoperimetric) or an ``r x (n+1)``
    array of node values (pointwise). ``slacks`` (same shape) is only
    meaningful for inequality constraints.
    """

    values: np.ndarray
    slacks: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "values", np.atleast_1d(np.asarray(self.values, dtype=float)))
        if self.slacks is not None:
            s = np.asarray(self.slacks, dtype=float)
            if s.shape != self.values.shape:
                raise ValueError("slacks must match multiplier shape")
            object.__setattr__(self, "slacks", s)

    @property
    def pointwise(self) -> bool:
        return self.values.ndim == 2

    def __len__(self) -> int:
        return self.values.shape[0]
