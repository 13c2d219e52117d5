"""Weighted-sum sweeps, nondominated filtering and epsilon-constraint checks."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import LagrangianExpr, linear_combination
from .fracops import Grid, Trajectory
from .problem import ConstraintKind, ConstraintSpec, ProblemSpec
from .solver import SolveOptions, SolveResult, solve
from .variational import functional_value

__all__ = [
    "WeightVector",
    "ParetoPoint",
    "EpsilonReport",
    "weighted_objective",
    "weight_grid",
    "objective_vector",
    "pareto_sweep",
    "dominance_filter",
    "epsilon_constraint_check",
]


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative weights normalized to sum to one."""

    w: tuple

    def __init__(self, w: Sequence[float]):
        arr = np.asarray(w, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("empty weight vector")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError(f"weights must be finite and nonnegative, got {list(arr)}")
        total = arr.sum()
        if not total > 0:
            raise ValueError("weights must not all vanish")
        if abs(total - 1.0) > 1e-12:
            arr = arr / total
        object.__setattr__(self, "w", tuple(float(v) for v in arr))

    def __len__(self) -> int:
        return len(self.w)

    def __iter__(self):
        return iter(self.w)

    def __getitem__(self, i):
        return self.w[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.w)

    @property
    def positive(self) -> bool:
        return all(v > 0 for v in self.w)


@dataclass
class ParetoPoint:
    weight: WeightVector
    objectives: np.ndarray
    result: SolveResult = field(repr=False)

    @property
    def converged(self) -> bool:
        return self.result.converged


@dataclass
class EpsilonReport:
    improved: bool
    improvement: float
    converged: bool
    objective_index: int
    trajectory: Trajectory | None = field(default=None, repr=False)
    message: str = ""


def weighted_objective(problem: ProblemSpec, w) -> LagrangianExpr:
    """``sum_i w_i L^i`` as a single expression."""
    w = w if isinstance(w, WeightVector) else WeightVector(w)
    d = problem.n_objectives
    if d < 2:
        raise ValueError("weighted objective needs at least two objectives")
    if len(w) != d:
        raise ValueError(f"weight vector has length {len(w)}, problem has {d} objectives")
    return linear_combination(list(w), list(problem.objectives))


def weight_grid(d: int, m: int) -> list[WeightVector]:
    """Uniform weights ``k/m``.

    For ``d == 2`` this is ``(k/m, 1 - k/m)`` for ``k = 0..m``; for larger
    ``d`` every lattice point of the unit simplex, in lexicographic order.
    """
    if d < 2 or m < 1:
        raise ValueError("need d >= 2 and m >= 1")
    if d == 2:
        return [WeightVector((k / m, 1.0 - k / m)) for k in range(m + 1)]
    out = []
    for ks in itertools.product(range(m + 1), repeat=d - 1):
        s = sum(ks)
        if s <= m:
            out.append(WeightVector([k / m for k in ks] + [(m - s) / m]))
    return out


def objective_vector(problem: ProblemSpec, traj: Trajectory) -> np.ndarray:
    return np.array([functional_value(e, traj, problem.orders) for e in problem.objectives])


def pareto_sweep(problem: ProblemSpec, weights: Sequence, grid: Grid, opts: SolveOptions | None = None,
                 *, workers: int = 1) -> list[ParetoPoint]:
    """One scalarized solve per weight vector, in the order given.

    Solves are independent; with ``workers > 1`` they run on a thread pool
    and are merged back in weight order.
    """
    if problem.n_objectives < 2:
        raise ValueError("pareto_sweep needs a multiobjective problem")
    weights = [w if isinstance(w, WeightVector) else WeightVector(w) for w in weights]
    if not weights:
        raise ValueError("empty weight list")

    def run(w: WeightVector) -> ParetoPoint:
        res = solve(problem, grid, opts, objective=weighted_objective(problem, w))
        return ParetoPoint(w, objective_vector(problem, res.trajectory), res)

    if workers > 1 and len(weights) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, weights))
    return [run(w) for w in weights]


def _objectives_of(p) -> np.ndarray:
    return np.asarray(p.objectives if hasattr(p, "objectives") else p, dtype=float)


def dominance_filter(points: Sequence, tol: float = 1e-8) -> list:
    """Drop every point dominated by another, keeping the input order.

    ``z`` dominates ``y`` when ``J(z) <= J(y) + tol`` componentwise and
    ``J(z) < J(y) - tol`` in at least one component. Accepts
    :class:`ParetoPoint` objects or raw objective vectors.
    """
    points = list(points)
    if not points:
        return []
    F = np.array([_objectives_of(p) for p in points])
    if F.ndim != 2:
        raise ValueError("points must share the number of objectives")
    keep = []
    for k in range(len(points)):
        weak = np.all(F <= F[k] + tol, axis=1)
        strict = np.any(F < F[k] - tol, axis=1)
        if not np.any(weak & strict):
            keep.append(points[k])
    return keep


def epsilon_constraint_check(problem: ProblemSpec, candidate: ParetoPoint, i: int, grid: Grid,
                             opts: SolveOptions | None = None) -> EpsilonReport:
    """Try to lower ``J^i`` while keeping every other ``J^j <= J^j(candidate)``.

    The inner solve is an inequality-constrained isoperimetric problem
    started from the candidate. Because the augmented Lagrangian meets the
    bounds only to ``constraint_tol``, the result is pulled back along the
    segment from the candidate until the bounds hold exactly; only then is
    the improvement measured.
    """
    opts = opts or SolveOptions()
    d = problem.n_objectives
    if d < 2:
        raise ValueError("epsilon-constraint check needs a multiobjective problem")
    if not 0 <= i < d:
        raise ValueError(f"objective index {i} out of range")
    cand = candidate.result.trajectory
    if cand.grid != grid:
        raise ValueError("candidate was not solved on this grid")
    J0 = objective_vector(problem, cand)
    others = [j for j in range(d) if j != i]
    extra = [ConstraintSpec(ConstraintKind.ISO_INEQ, problem.objectives[j], float(J0[j])) for j in others]
    sub = problem.with_constraints(tuple(problem.constraints) + tuple(extra))
    # a weighted-sum candidate satisfies grad J^i + sum_j (w_j/w_i) grad J^j = 0
    lam0 = [0.0] * len(problem.constraints)
    w = candidate.weight
    lam0 += [w[j] / w[i] if w[i] > 0 else 0.0 for j in others]
    res = solve(sub, grid, opts, objective=i, initial=cand, multipliers0=lam0)

    Y0, Y1 = cand.values, res.trajectory.values

    def at(t):
        return Trajectory(grid, Y0 + t * (Y1 - Y0))

    def feasible(t):
        J = objective_vector(problem, at(t))
        return all(J[j] <= J0[j] for j in others)

    if feasible(1.0):
        t = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        t = lo
    traj = at(t)
    Ji = objective_vector(problem, traj)[i]
    improvement = float(J0[i] - Ji)
    improved = bool(Ji < J0[i] - 10 * opts.constraint_tol)
    return EpsilonReport(improved, improvement, res.converged, i, traj,
                         f"{res.message}; restored step t={t:.6g}")
