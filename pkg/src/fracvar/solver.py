"""Direct (discretize-then-optimize) solution of fractional variational problems.

The trajectory is represented by its node values; the functional is the
trapezoid rule applied to ``L(x_k, y_k, (C y)_k)`` with ``C`` the combined
Caputo matrix. Its gradient follows from the chain rule,

    dJ/dy_i = q * dL/dy_i + C_i^T (q * dL/dv_i),

which is the discrete counterpart of integrating by parts. Minimization uses
a limited-memory quasi-Newton method preconditioned with
``C^T diag(q) C + diag(q)`` and an Armijo backtracking line search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .expr import ExprError, LagrangianExpr
from .fracops import Grid, Trajectory, combined_operators, trapezoid_weights
from .problem import ConstraintKind, Fixed, Free, ProblemSpec, UpperBounded
from .variational import evaluation_points

__all__ = [
    "SolveOptions",
    "SolveResult",
    "DiscreteObjective",
    "discretize_objective",
    "initial_trajectory",
    "minimize_lbfgs",
    "solve_basic",
    "solve_isoperimetric",
    "solve",
]

logger = logging.getLogger(__name__)

# accepted steps may raise the merit by at most this much (relative), i.e. rounding
ROUNDING_SLACK = 8 * np.finfo(float).eps


@dataclass(frozen=True)
class SolveOptions:
    grad_tol: float = 1e-8
    max_iters: int = 5000
    al_penalty_init: float = 10.0
    al_penalty_growth: float = 4.0
    al_outer_iters: int = 20
    constraint_tol: float = 1e-8
    fd_fallback: bool = False
    memory: int = 20

    def __post_init__(self):
        for name in ("grad_tol", "max_iters", "al_penalty_init", "al_outer_iters", "constraint_tol", "memory"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.al_penalty_growth > 1:
            raise ValueError("al_penalty_growth must exceed 1")


@dataclass
class SolveResult:
    trajectory: Trajectory
    multipliers: np.ndarray
    objective: float
    constraint_violation: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str = ""
    history: list = field(default_factory=list, repr=False)


class _Discretization:
    """Grid, quadrature weights and combined Caputo matrices for one problem."""

    def __init__(self, problem: ProblemSpec, grid: Grid):
        if not (np.isclose(grid.a, problem.a) and np.isclose(grid.b, problem.b)):
            raise ValueError("grid does not match the problem interval")
        self.problem = problem
        self.grid = grid
        self.q = trapezoid_weights(grid)
        self.mats = [op.weights for op in combined_operators(grid, problem.orders)]
        self.N = problem.n_components

    def derivatives(self, Y: np.ndarray) -> np.ndarray:
        return np.column_stack([self.mats[i] @ Y[:, i] for i in range(self.N)])

    def integrate(self, expr: LagrangianExpr, Y, V, params=(), fd_fallback=False):
        """Value and full ``(n+1, N)`` gradient of ``int expr``."""
        if expr.n_components != self.N:
            raise ValueError(f"expression {expr.source!r} does not have {self.N} components")
        args = evaluation_points(self.grid, Y, V, params)
        vals = expr.eval(args)
        N = self.N
        wrt = [expr.y_slot(i) for i in range(N)] + [expr.v_slot(i) for i in range(N)]
        try:
            P = expr.partials(args, wrt=wrt)
        except ExprError:
            if not fd_fallback:
                raise
            P = _fd_partials(expr, args, wrt)
        grad = np.empty_like(Y)
        for i in range(N):
            grad[:, i] = self.q * P[i] + self.mats[i].T @ (self.q * P[N + i])
        return float(self.q @ vals), grad


def _fd_partials(expr: LagrangianExpr, args, wrt, rel=1e-6):
    """Central differences of the integrand in the given slots."""
    out = []
    for k in wrt:
        base = np.asarray(args[k], dtype=float)
        h = rel * np.maximum(1.0, np.abs(base))
        hi, lo = list(args), list(args)
        hi[k], lo[k] = base + h, base - h
        out.append((expr.eval(hi) - expr.eval(lo)) / (2 * h))
    return np.array(out)


def initial_trajectory(problem: ProblemSpec, grid: Grid) -> np.ndarray:
    """Straight line through the boundary data, per component."""
    x = grid.nodes
    Y = np.empty((grid.n + 1, problem.n_components))
    for i in range(problem.n_components):
        left, right = problem.boundary.left(i), problem.boundary.right(i)
        ya = left.value if isinstance(left, Fixed) else None
        yb = right.value if isinstance(right, (Fixed, UpperBounded)) else None
        if ya is None:
            ya = yb
        if yb is None:
            yb = ya
        Y[:, i] = ya + (yb - ya) * (x - grid.a) / (grid.b - grid.a)
    return Y


class DiscreteObjective:
    """Discrete functional over the free node values.

    ``integrand`` defaults to the problem objective with the given index.
    """

    def __init__(self, problem: ProblemSpec, objective_index: int, grid: Grid,
                 integrand: LagrangianExpr | None = None, disc: _Discretization | None = None,
                 fd_fallback: bool = False):
        self.problem = problem
        self.fd_fallback = fd_fallback
        self.disc = disc or _Discretization(problem, grid)
        self.grid = grid
        self.expr = integrand if integrand is not None else problem.objectives[objective_index]
        self.base = initial_trajectory(problem, grid)
        self.free = np.zeros(self.base.shape, dtype=bool)
        self.free[1:-1] = True
        for i in range(problem.n_components):
            if isinstance(problem.boundary.left(i), Free):
                self.free[0, i] = True
            if isinstance(problem.boundary.right(i), (Free, UpperBounded)):
                self.free[-1, i] = True

    @property
    def size(self) -> int:
        return int(self.free.sum())

    def full(self, z: np.ndarray, base: np.ndarray | None = None) -> np.ndarray:
        # column-major packing keeps each component's nodes contiguous
        Y = (self.base if base is None else base).copy()
        Y.T[self.free.T] = z
        return Y

    def pack(self, Y: np.ndarray) -> np.ndarray:
        return np.asarray(Y).T[self.free.T].copy()

    def value_and_grad_full(self, Y: np.ndarray):
        V = self.disc.derivatives(Y)
        return self.disc.integrate(self.expr, Y, V, fd_fallback=self.fd_fallback)

    def value(self, z: np.ndarray) -> float:
        return self.value_and_grad_full(self.full(z))[0]

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.pack(self.value_and_grad_full(self.full(z))[1])

    def value_and_grad(self, z: np.ndarray):
        f, G = self.value_and_grad_full(self.full(z))
        return f, self.pack(G)


def discretize_objective(problem: ProblemSpec, objective_index: int, grid: Grid) -> DiscreteObjective:
    return DiscreteObjective(problem, objective_index, grid)


# {{{ optimizer

@dataclass
class _OptResult:
    z: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    converged: bool
    message: str
    history: list


def minimize_lbfgs(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    z0: np.ndarray,
    *,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    grad_tol: float = 1e-8,
    max_iters: int = 5000,
    memory: int = 20,
    max_backtracks: int = 30,
    stall_iters: int = 100,
) -> _OptResult:
    """Preconditioned L-BFGS with Armijo backtracking.

    Stops when ``max|grad| <= grad_tol``, or reports a stall when the
    gradient norm has not dropped by 10% over ``stall_iters`` iterations. ``precond(g)`` applies an
    approximate inverse Hessian; the scalar scaling of the initial inverse
    Hessian is refreshed from the latest curvature pair.
    """
    z = np.array(z0, dtype=float)
    f, g = fun(z)
    history = [f]
    if precond is None:
        precond = lambda v: v  # noqa: E731
    S: list[np.ndarray] = []
    Yv: list[np.ndarray] = []
    rho: list[float] = []
    scale = 1.0
    best, since_best = np.inf, 0
    for it in range(max_iters):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= grad_tol:
            return _OptResult(z, f, g, it, True, "gradient tolerance reached", history)
        # at the rounding floor the gradient stops shrinking; give up rather than spin
        if gnorm < 0.9 * best:
            best, since_best = gnorm, 0
        else:
            since_best += 1
            if since_best >= stall_iters:
                return _OptResult(z, f, g, it, False, "stalled", history)
        # two-loop recursion
        qv = g.copy()
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Yv), reversed(rho)):
            a = r * (s @ qv)
            alphas.append(a)
            qv -= a * y
        d = scale * precond(qv)
        for (s, y, r), a in zip(zip(S, Yv, rho), reversed(alphas)):
            b = r * (y @ d)
            d += (a - b) * s
        d = -d
        slope = float(g @ d)
        if not slope < 0:
            # lost descent: restart from the preconditioned gradient
            S.clear(), Yv.clear(), rho.clear()
            d = -precond(g)
            slope = float(g @ d)
            if not slope < 0:
                return _OptResult(z, f, g, it, False, "no descent direction", history)
        # weak Wolfe bracketing: the curvature condition keeps s.y > 0, so the
        # quasi-Newton memory keeps learning along curved valleys
        t, lo, hi = 1.0, 0.0, np.inf
        lo_point = None
        accepted = False
        for _ in range(max_backtracks):
            z_new = z + t * d
            f_new, g_new = fun(z_new)
            if not (np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope):
                # rounding floor: value unchanged to machine precision but a smaller gradient
                if (np.isfinite(f_new) and f_new - f <= ROUNDING_SLACK * max(1.0, abs(f))
                        and np.max(np.abs(g_new)) < gnorm):
                    accepted = True
                    break
                hi = t
            elif float(g_new @ d) < 0.9 * slope:
                lo, lo_point = t, (z_new, f_new, g_new)
            else:
                accepted = True
                break
            t = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lo
        if not accepted:
            if lo_point is None:
                return _OptResult(z, f, g, it, False, "line search failed", history)
            # Armijo holds at lo; take it even though curvature is not yet met
            z_new, f_new, g_new = lo_point
        s = z_new - z
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.sqrt(float(s @ s) * float(y @ y)):
            S.append(s)
            Yv.append(y)
            rho.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Yv.pop(0), rho.pop(0)
            Hy = precond(y)
            scale = sy / float(y @ Hy)
        z, f, g = z_new, f_new, g_new
        history.append(f)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return _OptResult(z, f, g, max_iters, gnorm <= grad_tol, "iteration limit", history)


def _preconditioner(obj: DiscreteObjective):
    """Cholesky solve with ``C^T Q C + Q`` restricted to the free nodes."""
    disc = obj.disc
    blocks = []
    for i in range(disc.N):
        idx = np.flatnonzero(obj.free[:, i])
        C = disc.mats[i][:, idx]
        P = C.T @ (disc.q[:, None] * C)
        P[np.diag_indices_from(P)] += disc.q[idx]
        blocks.append((idx.size, cho_factor(P, lower=True)))

    def solve(v):
        out = np.empty_like(v)
        start = 0
        for size, factor in blocks:
            out[start:start + size] = cho_solve(factor, v[start:start + size])
            start += size
        return out

    return solve

# }}}


def _ub_entries(obj: DiscreteObjective):
    problem = obj.problem
    return [(i, problem.boundary.right(i).value) for i in range(problem.n_components)
            if isinstance(problem.boundary.right(i), UpperBounded)]


def _minimize_with_bounds(obj: DiscreteObjective, merit, Y0: np.ndarray, opts: SolveOptions):
    """Minimize ``merit(Y) -> (value, full gradient)`` over free nodes.

    Upper-bounded right ends are handled by an active set: a violated bound
    is fixed at its value, an active bound is released when the gradient
    points into the feasible side.
    """
    ub = _ub_entries(obj)
    active: set[int] = set()
    Y = Y0.copy()
    for i, val in ub:
        Y[-1, i] = min(Y[-1, i], val)
    total_iters = 0
    history: list = []
    base_free = obj.free.copy()
    precond_cache: dict = {}
    for _ in range(2 * len(ub) + 2):
        obj.free = base_free.copy()
        for i in active:
            obj.free[-1, i] = False
        key = tuple(sorted(active))
        if key not in precond_cache:
            precond_cache[key] = _preconditioner(obj)
        base = Y.copy()

        def fun(z):
            f, G = merit(obj.full(z, base))
            return f, obj.pack(G)

        res = minimize_lbfgs(fun, obj.pack(Y), precond=precond_cache[key], grad_tol=opts.grad_tol,
                             max_iters=max(1, opts.max_iters - total_iters), memory=opts.memory)
        total_iters += res.iterations
        history.extend(res.history)
        Y = obj.full(res.z, base)
        changed = False
        _, G = merit(Y)
        for i, val in ub:
            if i in active:
                if G[-1, i] > 0:
                    active.discard(i)
                    changed = True
            elif Y[-1, i] > val:
                Y[-1, i] = val
                active.add(i)
                changed = True
        if not changed:
            break
    obj.free = base_free
    f, G = merit(Y)
    g = obj.pack(G)
    # an active bound only blocks increases of y(b)
    for i, _val in ub:
        if i in active and G[-1, i] < 0:
            g[int(base_free[:, :i + 1].sum()) - 1] = 0.0
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return Y, f, gnorm, total_iters, gnorm <= opts.grad_tol, res.message, history


def _check_initial(obj: DiscreteObjective, initial) -> np.ndarray:
    if initial is None:
        return obj.base.copy()
    Y = np.asarray(initial.values if isinstance(initial, Trajectory) else initial, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape != obj.base.shape:
        raise ValueError(f"initial trajectory has shape {Y.shape}, expected {obj.base.shape}")
    # boundary data always comes from the problem
    return np.where(obj.free, Y, obj.base)


def _objective_expr(problem: ProblemSpec, objective) -> LagrangianExpr:
    if isinstance(objective, LagrangianExpr):
        return objective
    return problem.objectives[int(objective)]


def solve_basic(problem: ProblemSpec, grid: Grid, opts: SolveOptions | None = None, *,
                objective=0, initial=None) -> SolveResult:
    """Minimize one objective (index or expression) without integral constraints."""
    opts = opts or SolveOptions()
    if problem.constraints:
        raise ValueError("solve_basic does not accept constraints; use solve_isoperimetric")
    obj = DiscreteObjective(problem, 0, grid, integrand=_objective_expr(problem, objective),
                            fd_fallback=opts.fd_fallback)
    Y0 = _check_initial(obj, initial)
    Y, f, gnorm, iters, conv, msg, hist = _minimize_with_bounds(obj, obj.value_and_grad_full, Y0, opts)
    logger.debug("solve_basic: f=%.6g |g|=%.3g iters=%d %s", f, gnorm, iters, msg)
    return SolveResult(Trajectory(grid, Y), np.zeros(0), f, 0.0, gnorm, iters, conv, msg, hist)


def _constraint_values(obj: DiscreteObjective, Y, constraints, V=None):
    if V is None:
        V = obj.disc.derivatives(Y)
    out = [obj.disc.integrate(c.integrand, Y, V, fd_fallback=obj.fd_fallback) for c in constraints]
    return np.array([v for v, _ in out]), [g for _, g in out]


def _violation(constraints, c: np.ndarray) -> float:
    viol = [abs(cj) if k.kind is ConstraintKind.ISO_EQ else max(cj, 0.0) for k, cj in zip(constraints, c)]
    return float(max(viol, default=0.0))


def solve_isoperimetric(problem: ProblemSpec, grid: Grid, opts: SolveOptions | None = None, *,
                        objective=0, initial=None, multipliers0=None) -> SolveResult:
    """Augmented-Lagrangian solve for integral equality / inequality constraints.

    Returned multipliers follow the conventions of the residual checks:
    ``L - lam*G`` for equalities and ``L + lam*G`` with ``lam >= 0`` for
    inequalities.
    """
    opts = opts or SolveOptions()
    cons = problem.constraints
    if not cons or problem.pointwise:
        raise ValueError("solve_isoperimetric needs isoperimetric constraints")
    obj = DiscreteObjective(problem, 0, grid, integrand=_objective_expr(problem, objective),
                            fd_fallback=opts.fd_fallback)
    targets = np.array([c.target for c in cons])
    eq = np.array([c.kind is ConstraintKind.ISO_EQ for c in cons])
    lam = np.zeros(len(cons)) if multipliers0 is None else np.array(multipliers0, dtype=float)
    if lam.shape != (len(cons),):
        raise ValueError(f"need {len(cons)} initial multipliers")
    lam[~eq] = np.maximum(lam[~eq], 0.0)
    rho = opts.al_penalty_init
    Y = _check_initial(obj, initial)
    history: list = []
    iters = 0
    viol_prev = np.inf
    conv = False
    msg = "outer iteration limit"
    gnorm = np.inf
    stalls = 0

    for outer in range(opts.al_outer_iters):
        lam_k, rho_k = lam.copy(), rho

        def merit(Yc):
            V = obj.disc.derivatives(Yc)
            f, G = obj.disc.integrate(obj.expr, Yc, V, fd_fallback=obj.fd_fallback)
            vals, grads = _constraint_values(obj, Yc, cons, V)
            c = vals - targets
            for j in range(len(cons)):
                if eq[j]:
                    f += -lam_k[j] * c[j] + 0.5 * rho_k * c[j] ** 2
                    G = G + (rho_k * c[j] - lam_k[j]) * grads[j]
                else:
                    t = max(0.0, lam_k[j] + rho_k * c[j])
                    f += (t * t - lam_k[j] ** 2) / (2 * rho_k)
                    G = G + t * grads[j]
            return f, G

        budget = replace(opts, max_iters=max(1, opts.max_iters - iters))
        Y, _, gnorm, it, inner_conv, inner_msg, hist = _minimize_with_bounds(obj, merit, Y, budget)
        iters += it
        history.extend(hist)
        vals, _ = _constraint_values(obj, Y, cons)
        c = vals - targets
        lam = np.where(eq, lam - rho * c, np.maximum(0.0, lam + rho * c))
        viol = _violation(cons, c)
        logger.debug("AL outer %d: viol=%.3g rho=%g lam=%s |g|=%.3g", outer, viol, rho, lam, gnorm)
        # the merit gradient equals the Lagrangian gradient at the updated multipliers
        if viol <= opts.constraint_tol and inner_conv:
            conv = True
            msg = "converged"
            break
        if iters >= opts.max_iters:
            msg = "iteration limit"
            break
        stalls = 0 if inner_conv else stalls + 1
        if stalls >= 2:
            msg = f"inner solve failed twice ({inner_msg})"
            break
        if viol > 0.25 * viol_prev:
            rho *= opts.al_penalty_growth
        viol_prev = viol

    f = obj.value_and_grad_full(Y)[0]
    vals, _ = _constraint_values(obj, Y, cons)
    viol = _violation(cons, vals - targets)
    return SolveResult(Trajectory(grid, Y), lam, f, viol, gnorm, iters, conv, msg, history)


def solve(problem: ProblemSpec, grid: Grid, opts: SolveOptions | None = None, **kw) -> SolveResult:
    """Dispatch to :func:`solve_basic` or :func:`solve_isoperimetric`."""
    if problem.pointwise:
        raise ValueError("pointwise-constrained problems are not solved, only verified")
    if problem.constraints:
        return solve_isoperimetric(problem, grid, opts, **kw)
    kw.pop("multipliers0", None)
    return solve_basic(problem, grid, opts, **kw)
