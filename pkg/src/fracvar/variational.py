"""First-order conditions evaluated as residuals on a grid.

Conventions for multipliers follow the two constructions used for
isoperimetric problems:

* equality constraints ``int G_j = l_j`` use ``F = L - sum_j lam_j G_j``;
* inequality constraints ``int G_j <= l_j`` use
  ``F = L + sum_j lam_j (G_j - l_j/(b-a) + phi_j^2)`` with ``lam_j >= 0``;
* pointwise constraints use ``F = L + sum_j lam_j(x) G_j`` (plus ``phi_j^2``
  inside the bracket for the inequality kind).

Residual matrices have one row per node; rows ``0`` and ``n`` are boundary
rows where the dual operator is singular and are excluded by
:func:`interior`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import LagrangianExpr, linear_combination
from .fracops import (
    FracOrders,
    Grid,
    Trajectory,
    combined_operators,
    dual_operators,
    rl_integral_matrix,
    trapezoid_weights,
)
from .problem import (
    ConstraintKind,
    Free,
    MultiplierSet,
    ProblemSpec,
    UpperBounded,
)

__all__ = [
    "evaluation_points",
    "functional_value",
    "euler_lagrange_residual",
    "interior",
    "TransversalityReport",
    "transversality_residual",
    "augment_isoperimetric",
    "isoperimetric_lagrangian",
    "pointwise_system_residual",
    "ConvexityReport",
    "convexity_certificate",
    "isoperimetric_regularity",
    "multiplier_convention",
]


def _check_traj(problem: ProblemSpec, traj: Trajectory) -> Grid:
    grid = traj.grid
    if traj.n_components != problem.n_components:
        raise ValueError(
            f"trajectory has {traj.n_components} components, problem needs {problem.n_components}"
        )
    if not (np.isclose(grid.a, problem.a) and np.isclose(grid.b, problem.b)):
        raise ValueError("trajectory grid does not span the problem interval")
    return grid


def derivative_samples(grid: Grid, orders: FracOrders, Y: np.ndarray) -> np.ndarray:
    """Combined fractional derivative of every column of ``Y``."""
    ops = combined_operators(grid, orders)
    return np.column_stack([ops[i].weights @ Y[:, i] for i in range(Y.shape[1])])


def evaluation_points(grid: Grid, Y: np.ndarray, V: np.ndarray, params: Sequence = ()) -> list:
    """Slot arguments ``(x, y1..yN, v1..vN, p1..pr)`` as node arrays."""
    x = grid.nodes
    m = grid.n + 1
    args = [x] + [Y[:, i] for i in range(Y.shape[1])] + [V[:, i] for i in range(V.shape[1])]
    args += [np.broadcast_to(np.asarray(p, dtype=float), (m,)) for p in params]
    return args


def functional_value(expr: LagrangianExpr, traj: Trajectory, orders: FracOrders, params=()) -> float:
    """Trapezoid value of ``int L[y](x) dx`` along a trajectory."""
    Y = traj.values
    V = derivative_samples(traj.grid, orders, Y)
    vals = expr.eval(evaluation_points(traj.grid, Y, V, params))
    return float(trapezoid_weights(traj.grid) @ vals)


def _slot_partials(expr: LagrangianExpr, args) -> tuple[np.ndarray, np.ndarray]:
    N = expr.n_components
    wrt = [expr.y_slot(i) for i in range(N)] + [expr.v_slot(i) for i in range(N)]
    P = expr.partials(args, wrt=wrt)
    return P[:N].T, P[N:].T


def _dual_apply(grid: Grid, orders: FracOrders, dV: np.ndarray, adjoint: str) -> np.ndarray:
    if adjoint == "continuous":
        ops = dual_operators(grid, orders)
        return np.column_stack([ops[i].weights @ dV[:, i] for i in range(dV.shape[1])])
    if adjoint == "discrete":
        # quadrature-weighted transpose of the combined Caputo matrix
        q = trapezoid_weights(grid)
        ops = combined_operators(grid, orders)
        return np.column_stack([(ops[i].weights.T @ (q * dV[:, i])) / q for i in range(dV.shape[1])])
    raise ValueError(f"adjoint must be 'continuous' or 'discrete', got {adjoint!r}")


def _residual(expr, grid, orders, Y, params, adjoint, extra=()):
    V = derivative_samples(grid, orders, Y)
    args = evaluation_points(grid, Y, V, params)
    dY, dV = _slot_partials(expr, args)
    for coef, g in extra:
        gy, gv = _slot_partials(g, args[: 1 + 2 * g.n_components])
        dY = dY + np.asarray(coef)[:, None] * gy
        dV = dV + np.asarray(coef)[:, None] * gv
    return dY + _dual_apply(grid, orders, dV, adjoint)


def euler_lagrange_residual(
    problem: ProblemSpec,
    objective_index: int,
    traj: Trajectory,
    *,
    expr: LagrangianExpr | None = None,
    adjoint: str = "continuous",
) -> np.ndarray:
    """Node-wise ``dL/dy_i + D^{beta,alpha}_{1-gamma} dL/dv_i``, shape ``(n+1, N)``.

    ``expr`` overrides the objective (e.g. an augmented integrand).
    ``adjoint="discrete"`` swaps the dual RL operator for the
    quadrature-weighted transpose of the Caputo matrix; interior rows then
    vanish exactly at a stationary point of the discrete objective.
    """
    grid = _check_traj(problem, traj)
    if expr is None:
        if not 0 <= objective_index < problem.n_objectives:
            raise IndexError(f"objective index {objective_index} out of range")
        expr = problem.objectives[objective_index]
    return _residual(expr, grid, problem.orders, traj.values, (), adjoint)


def interior(residual: np.ndarray, grid: Grid | None = None, margin: float = 0.0) -> np.ndarray:
    """Rows away from the ends.

    Without a grid this drops rows ``0`` and ``n``. With a grid and
    ``margin > 0`` it keeps nodes in ``[a + margin*(b-a), b - margin*(b-a)]``;
    the dual operator has ``(x-a)^(-beta)`` / ``(b-x)^(-alpha)`` kernels, so
    rows next to the ends grow under refinement and are not a useful measure.
    """
    if grid is None or margin <= 0:
        return residual[1:-1]
    if not 0 <= margin < 0.5:
        raise ValueError("margin must lie in [0, 0.5)")
    x = grid.nodes
    lo = grid.a + margin * (grid.b - grid.a)
    hi = grid.b - margin * (grid.b - grid.a)
    keep = (x >= lo - 1e-12) & (x <= hi + 1e-12)
    keep[0] = keep[-1] = False
    return residual[keep]


@dataclass(frozen=True)
class TransversalityReport:
    residual: float
    complementarity: float
    feasibility: float
    raw_node_value: float


def transversality_residual(
    problem: ProblemSpec,
    objective_index: int,
    traj: Trajectory,
    component: int,
    *,
    expr: LagrangianExpr | None = None,
) -> TransversalityReport:
    """Natural boundary term at ``x = b`` for a free or bounded right end.

    The term ``gamma I_right^{1-alpha} p - (1-gamma) I_left^{1-beta} p`` with
    ``p = dL/dv_l`` is formed at every node and extrapolated linearly to
    ``x = b`` from nodes ``n-2`` and ``n-1``; the raw node value at ``b`` is
    reported alongside. Component index is 0-based.
    """
    grid = _check_traj(problem, traj)
    right = problem.boundary.right(component)
    if not isinstance(right, (Free, UpperBounded)):
        raise ValueError(f"component {component + 1} has a fixed right end")
    if expr is None:
        expr = problem.objectives[objective_index]
    Y = traj.values
    V = derivative_samples(grid, problem.orders, Y)
    _, dV = _slot_partials(expr, evaluation_points(grid, Y, V))
    p = dV[:, component]
    alpha, beta, gamma = problem.orders.component(component)
    term = np.zeros(grid.n + 1)
    if gamma != 0.0:
        term += gamma * (rl_integral_matrix(grid, 1.0 - alpha, "right").weights @ p)
    if gamma != 1.0:
        term -= (1.0 - gamma) * (rl_integral_matrix(grid, 1.0 - beta, "left").weights @ p)
    residual = float(2.0 * term[-2] - term[-3])
    if isinstance(right, UpperBounded):
        gap = float(Y[-1, component] - right.value)
        complementarity = gap * residual
        feasibility = max(0.0, gap)
    else:
        complementarity = 0.0
        feasibility = 0.0
    return TransversalityReport(residual, complementarity, feasibility, float(term[-1]))


def multiplier_convention(kind: ConstraintKind) -> str:
    if kind is ConstraintKind.ISO_EQ:
        return "F = L - lam*G"
    if kind is ConstraintKind.ISO_INEQ:
        return "F = L + lam*(G - l/(b-a) + phi^2), lam >= 0"
    if kind is ConstraintKind.PW_EQ:
        return "F = L + lam(x)*G"
    return "F = L + lam(x)*(G + phi^2)"


def augment_isoperimetric(
    problem: ProblemSpec, objective_index: int, multipliers: Sequence[float]
) -> LagrangianExpr:
    """Augmented integrand for equality isoperimetric constraints.

    Returns ``L - sum_j lam_j G_j`` with the multipliers bound as constants.
    """
    if problem.pointwise:
        raise ValueError("augment_isoperimetric needs isoperimetric constraints only")
    lam = [float(v) for v in multipliers]
    if len(lam) != len(problem.constraints):
        raise ValueError(f"need {len(problem.constraints)} multipliers, got {len(lam)}")
    exprs = [problem.objectives[objective_index]] + [c.integrand for c in problem.constraints]
    return linear_combination([1.0] + [-v for v in lam], exprs)


def isoperimetric_lagrangian(
    problem: ProblemSpec, objective_index: int, multipliers: Sequence[float]
) -> LagrangianExpr:
    """Augmented integrand honouring each constraint's own convention.

    Equality constraints enter with ``-lam_j``, inequality constraints with
    ``+lam_j`` (the constant ``-l_j/(b-a) + phi_j^2`` does not affect any
    partial derivative and is dropped).
    """
    lam = [float(v) for v in multipliers]
    if len(lam) != len(problem.constraints):
        raise ValueError(f"need {len(problem.constraints)} multipliers, got {len(lam)}")
    coeffs = [1.0]
    for c, v in zip(problem.constraints, lam):
        if not c.kind.isoperimetric:
            raise ValueError("pointwise constraint present")
        coeffs.append(v if c.kind is ConstraintKind.ISO_INEQ else -v)
    exprs = [problem.objectives[objective_index]] + [c.integrand for c in problem.constraints]
    return linear_combination(coeffs, exprs)


def pointwise_system_residual(
    problem: ProblemSpec,
    traj: Trajectory,
    multipliers: MultiplierSet,
    objective_index: int = 0,
    *,
    adjoint: str = "continuous",
):
    """Residuals of the multiplier system for pointwise constraints.

    Returns ``(el_residual, constraint_residual, complementarity)`` with
    shapes ``(n+1, N)``, ``(r, n+1)`` and ``(r, n+1)``.
    """
    grid = _check_traj(problem, traj)
    if not problem.pointwise:
        raise ValueError("pointwise_system_residual needs pointwise constraints only")
    r = len(problem.constraints)
    if r >= problem.n_components:
        raise ValueError("pointwise constraints require r < N")
    m = grid.n + 1
    lam = np.asarray(multipliers.values, dtype=float)
    if lam.ndim == 1:
        lam = np.repeat(lam[:, None], m, axis=1)
    if lam.shape != (r, m):
        raise ValueError(f"multipliers must have shape ({r}, {m})")
    phi = multipliers.slacks
    if phi is not None:
        phi = np.asarray(phi, dtype=float)
        if phi.ndim == 1:
            phi = np.repeat(phi[:, None], m, axis=1)
    Y = traj.values
    V = derivative_samples(grid, problem.orders, Y)
    args = evaluation_points(grid, Y, V)
    cons = np.zeros((r, m))
    comp = np.zeros((r, m))
    for j, c in enumerate(problem.constraints):
        cons[j] = c.integrand.eval(args)
        if c.kind is ConstraintKind.PW_INEQ:
            if phi is None:
                raise ValueError("inequality constraints need slack functions")
            cons[j] += phi[j] ** 2
            comp[j] = lam[j] * phi[j]
    extra = [(lam[j], c.integrand) for j, c in enumerate(problem.constraints)]
    el = _residual(problem.objectives[objective_index], grid, problem.orders, Y, (), adjoint, extra)
    return el, cons, comp


@dataclass(frozen=True)
class ConvexityReport:
    violations: int
    worst_gap: float
    samples: int


def convexity_certificate(
    expr: LagrangianExpr,
    box: Sequence[tuple[float, float]],
    samples: int,
    *,
    x_range: tuple[float, float] = (0.0, 1.0),
    params: Sequence[float] = (),
    seed: int = 0,
    slack: float = 1e-9,
) -> ConvexityReport:
    """Sampled check of joint convexity in ``(y, v)``.

    ``box`` gives ``(lo, hi)`` for ``y1..yN, v1..vN``. For random pairs
    ``P, P + d`` in the box with a shared ``x`` it tests
    ``f(P + d) - f(P) >= grad_{y,v} f(P) . d - slack``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    N = expr.n_components
    box = np.asarray(box, dtype=float)
    if box.shape != (2 * N, 2):
        raise ValueError(f"box must have {2 * N} (lo, hi) rows")
    rng = np.random.default_rng(seed)
    lo, hi = box[:, 0], box[:, 1]
    P = lo[:, None] + (hi - lo)[:, None] * rng.random((2 * N, samples))
    Q = lo[:, None] + (hi - lo)[:, None] * rng.random((2 * N, samples))
    x = x_range[0] + (x_range[1] - x_range[0]) * rng.random(samples)
    pars = [np.full(samples, float(p)) for p in params]
    args_p = [x] + list(P) + pars
    args_q = [x] + list(Q) + pars
    grad = expr.partials(args_p, wrt=range(1, 1 + 2 * N))
    gap = expr.eval(args_q) - expr.eval(args_p) - np.sum(grad * (Q - P), axis=0)
    return ConvexityReport(int(np.sum(gap < -slack)), float(np.min(gap)), samples)


def isoperimetric_regularity(problem: ProblemSpec, traj: Trajectory, free_mask: np.ndarray | None = None):
    """Rank of ``A_kl = dG^k(y; h^l)`` over coordinate-bump variations.

    ``h^l`` ranges over unit bumps at free nodes (interior nodes by default).
    Returns ``(rank, singular_values)``; rank counts singular values above
    ``1e-8`` times the largest.
    """
    grid = _check_traj(problem, traj)
    if free_mask is None:
        free_mask = np.zeros(traj.values.shape, dtype=bool)
        free_mask[1:-1] = True
    Y = traj.values
    V = derivative_samples(grid, problem.orders, Y)
    args = evaluation_points(grid, Y, V)
    q = trapezoid_weights(grid)
    ops = combined_operators(grid, problem.orders)
    rows = []
    for c in problem.constraints:
        dY, dV = _slot_partials(c.integrand, args)
        G = np.column_stack(
            [q * dY[:, i] + ops[i].weights.T @ (q * dV[:, i]) for i in range(Y.shape[1])]
        )
        rows.append(G[free_mask])
    if not rows:
        return 0, np.zeros(0)
    s = np.linalg.svd(np.array(rows), compute_uv=False)
    rank = int(np.sum(s > 1e-8 * s.max())) if s.size and s.max() > 0 else 0
    return rank, s

