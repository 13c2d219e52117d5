"""Command-line front end: ``fracvar deriv|solve|pareto|verify``.

Exit codes: 0 success, 2 usage or file-format error, 3 math domain error,
4 non-convergence (or a failed residual check in ``verify``).
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import fracops
from .expr import ExprError, parse_expression
from .fracops import Trajectory, make_grid
from .pareto import (
    WeightVector,
    dominance_filter,
    epsilon_constraint_check,
    pareto_sweep,
    weight_grid,
    weighted_objective,
)
from .problem import ConstraintKind, Fixed, Free, MultiplierSet, UpperBounded
from .problemfile import ProblemFileError, parse_problem_file, split_top
from .solver import SolveOptions, solve
from .specfun import DomainError
from .variational import (
    convexity_certificate,
    derivative_samples,
    euler_lagrange_residual,
    evaluation_points,
    functional_value,
    interior,
    isoperimetric_lagrangian,
    multiplier_convention,
    pointwise_system_residual,
    transversality_residual,
)

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_NOCONV = 0, 2, 3, 4


class UsageError(Exception):
    pass


# {{{ csv / report helpers

def fmt(v) -> str:
    return format(float(v), ".17g")


def write_csv(path, header, columns):
    """Write equal-length columns with 17 significant digits and ``\\n`` endings."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in zip(*cols):
        buf.write(",".join(fmt(v) for v in row) + "\n")
    text = buf.getvalue()
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def read_csv(path):
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    if len(lines) < 2:
        raise UsageError(f"{path}: no data rows")
    header = [h.strip() for h in lines[0].split(",")]
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    except ValueError as exc:
        raise UsageError(f"{path}: bad number ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise UsageError(f"{path}: rows do not match the header")
    return {h: data[:, k] for k, h in enumerate(header)}


class Report:
    def __init__(self):
        self.lines = []

    def add(self, key, value):
        if isinstance(value, (bool, np.bool_)):
            text = "true" if value else "false"
        elif isinstance(value, (int, np.integer)):
            text = str(int(value))
        elif isinstance(value, (float, np.floating)):
            text = fmt(value)
        elif isinstance(value, (list, tuple, np.ndarray)):
            text = ",".join(fmt(v) for v in np.ravel(value))
        else:
            text = str(value)
        self.lines.append(f"{key} = {text}")

    def emit(self, path=None, stream=None):
        text = "\n".join(self.lines) + "\n"
        (stream or sys.stdout).write(text)
        if path:
            with open(path, "w", newline="\n") as fh:
                fh.write(text)


def parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in split_top(text)]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None

# }}}


# {{{ deriv

_OPS = ("caputo_l", "caputo_r", "rl_l", "rl_r", "rli_l", "rli_r", "combined")


def _deriv_matrix(op, grid, alpha, beta, gamma):
    side = "left" if op.endswith("_l") else "right"
    if op.startswith("caputo"):
        return fracops.caputo_matrix(grid, alpha, side)
    if op.startswith("rli"):
        return fracops.rl_integral_matrix(grid, alpha, side)
    if op.startswith("rl"):
        return fracops.rl_derivative_matrix(grid, alpha, side)
    return fracops.combined_caputo(grid, alpha, beta, gamma)


def cmd_deriv(args) -> int:
    grid = make_grid(args.a, args.b, args.n)
    expr = parse_expression(args.expr, ("x",))
    beta = args.alpha if args.beta is None else args.beta
    op = _deriv_matrix(args.op, grid, args.alpha, beta, args.gamma)
    x = grid.nodes
    f = np.broadcast_to(expr.eval([x]), x.shape).astype(float)
    if not np.all(np.isfinite(f)):
        raise DomainError(f"{args.expr!r} is not finite on [{args.a}, {args.b}]")
    write_csv(args.out, ["x", "f", "Df"], [x, f, op @ f])
    return EXIT_OK

# }}}


# {{{ shared problem plumbing

def _load(path):
    return parse_problem_file(path)


def _opts(pf, args) -> SolveOptions:
    r = pf.run
    return SolveOptions(grad_tol=r.grad_tol, max_iters=r.max_iters, constraint_tol=r.constraint_tol)


def _grid(pf, args):
    n = getattr(args, "n", None)
    n = pf.run.n if n is None else n
    return pf.problem.grid(n)


def _select_objective(pf, args):
    """Objective chosen by --objective / --weights / [run] weights; returns (label, expr-or-index)."""
    problem = pf.problem
    d = problem.n_objectives
    if getattr(args, "objective", None) is not None and getattr(args, "weights", None) is not None:
        raise UsageError("use either --objective or --weights, not both")
    if getattr(args, "objective", None) is not None:
        k = args.objective
        if not 1 <= k <= d:
            raise UsageError(f"--objective must lie in 1..{d}")
        return f"objective {k}", k - 1, problem.objectives[k - 1]
    w = None
    if getattr(args, "weights", None) is not None:
        w = parse_floats(args.weights, "--weights")
    elif pf.run.weights is not None:
        w = list(pf.run.weights)
    if w is not None:
        if len(w) != d:
            raise UsageError(f"need {d} weights, got {len(w)}")
        if d == 1:
            return "objective 1", 0, problem.objectives[0]
        try:
            wv = WeightVector(w)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        expr = weighted_objective(problem, wv)
        return "weights " + ",".join(fmt(v) for v in wv), expr, expr
    if d == 1:
        return "objective 1", 0, problem.objectives[0]
    raise UsageError(f"problem has {d} objectives: pass --objective k or --weights w1,..,w{d}")


def _residual_report(rep: Report, pf, traj, expr, lam, margin, *, discrete=True):
    """Append first-order residuals.

    Returns the gated quantities and the integrand whose stationarity was
    checked (augmented for isoperimetric problems).
    """
    problem = pf.problem
    grid = traj.grid
    gated = {}
    # integrand whose stationarity is checked (augmented when isoperimetric)
    F = isoperimetric_lagrangian(problem.with_objectives([expr]), 0, lam) if problem.isoperimetric else expr
    if problem.pointwise:
        el, cons, comp = pointwise_system_residual(problem.with_objectives([expr]), traj, lam, 0)
        eld = None
    else:
        el = euler_lagrange_residual(problem, 0, traj, expr=F)
        eld = euler_lagrange_residual(problem, 0, traj, expr=F, adjoint="discrete") if discrete else None
    el_max = float(np.max(np.abs(interior(el, grid, margin))))
    rep.add("el_residual_max", el_max)
    gated["el_residual_max"] = el_max
    if eld is not None:
        rep.add("el_residual_discrete_max", float(np.max(np.abs(interior(eld)))))

    if problem.isoperimetric:
        for j, c in enumerate(problem.constraints):
            g = functional_value(c.integrand, traj, problem.orders)
            r = g - c.target
            rep.add(f"constraint{j + 1}_convention", multiplier_convention(c.kind))
            rep.add(f"constraint{j + 1}_value", g)
            rep.add(f"constraint{j + 1}_residual", r)
            if c.kind is ConstraintKind.ISO_EQ:
                gated[f"constraint{j + 1}_residual"] = abs(r)
            else:
                gated[f"constraint{j + 1}_violation"] = max(r, 0.0)
                gated[f"constraint{j + 1}_complementarity"] = abs(lam[j] * r)
                gated[f"constraint{j + 1}_sign"] = max(-lam[j], 0.0)
                rep.add(f"constraint{j + 1}_complementarity", lam[j] * r)
    elif problem.pointwise:
        for j, c in enumerate(problem.constraints):
            rmax = float(np.max(np.abs(cons[j])))
            cmax = float(np.max(np.abs(comp[j])))
            rep.add(f"constraint{j + 1}_convention", multiplier_convention(c.kind))
            rep.add(f"constraint{j + 1}_residual_max", rmax)
            rep.add(f"constraint{j + 1}_complementarity_max", cmax)
            gated[f"constraint{j + 1}_residual_max"] = rmax
            gated[f"constraint{j + 1}_complementarity_max"] = cmax
            if c.kind is ConstraintKind.PW_INEQ:
                neg = float(max(0.0, -np.min(lam.values[j])))
                gated[f"constraint{j + 1}_sign"] = neg

    for i in range(problem.n_components):
        right = problem.boundary.right(i)
        if isinstance(right, (Free, UpperBounded)):
            t = transversality_residual(problem, 0, traj, i, expr=F)
            rep.add(f"transversality{i + 1}", t.residual)
            if isinstance(right, Free):
                gated[f"transversality{i + 1}"] = abs(t.residual)
            else:
                rep.add(f"transversality{i + 1}_complementarity", t.complementarity)
                gated[f"transversality{i + 1}_sign"] = max(t.residual, 0.0)
                gated[f"transversality{i + 1}_feasibility"] = t.feasibility
                gated[f"transversality{i + 1}_complementarity"] = abs(t.complementarity)
    return gated, F

# }}}


# {{{ solve

def cmd_solve(args) -> int:
    pf = _load(args.problem)
    problem = pf.problem
    if problem.pointwise:
        raise UsageError("pointwise-constrained problems can be verified but not solved")
    label, objective, expr = _select_objective(pf, args)
    grid = _grid(pf, args)
    res = solve(problem, grid, _opts(pf, args), objective=objective)
    traj = res.trajectory
    Y = traj.values
    V = derivative_samples(grid, problem.orders, Y)
    N = problem.n_components
    header = ["x"] + [f"y{i + 1}" for i in range(N)] + [f"v{i + 1}" for i in range(N)]
    out = args.out or pf.run.out
    write_csv(out, header, [grid.nodes] + [Y[:, i] for i in range(N)] + [V[:, i] for i in range(N)])

    rep = Report()
    rep.add("problem", args.problem)
    rep.add("selection", label)
    rep.add("n", grid.n)
    rep.add("converged", res.converged)
    rep.add("message", res.message)
    rep.add("iterations", res.iterations)
    rep.add("objective", res.objective)
    for k, e in enumerate(problem.objectives):
        rep.add(f"J{k + 1}", functional_value(e, traj, problem.orders))
    rep.add("grad_norm", res.grad_norm)
    rep.add("multipliers", res.multipliers if res.multipliers.size else "none")
    rep.add("constraint_violation", res.constraint_violation)
    _residual_report(rep, pf, traj, expr, list(res.multipliers), pf.run.interior_margin)
    rep.emit(args.report, sys.stderr if out in (None, "-") else sys.stdout)
    return EXIT_OK if res.converged else EXIT_NOCONV

# }}}


# {{{ pareto

def cmd_pareto(args) -> int:
    pf = _load(args.problem)
    problem = pf.problem
    d = problem.n_objectives
    if d < 2:
        raise UsageError("pareto needs a problem with at least two objectives")
    if problem.pointwise:
        raise UsageError("pointwise-constrained problems can be verified but not solved")
    M = pf.run.weights_count if args.weights_count is None else args.weights_count
    if M < 1:
        raise UsageError("--weights-count must be >= 1")
    if M == 1:
        weights = [WeightVector([1.0] + [0.0] * (d - 1))]
    else:
        weights = weight_grid(d, M - 1)
    grid = _grid(pf, args)
    opts = _opts(pf, args)
    points = pareto_sweep(problem, weights, grid, opts, workers=args.workers)

    header = [f"w{i + 1}" for i in range(d)] + [f"J{i + 1}" for i in range(d)] + ["converged"]
    cols = [[p.weight[i] for p in points] for i in range(d)]
    cols += [[p.objectives[i] for p in points] for i in range(d)]
    cols.append([1.0 if p.converged else 0.0 for p in points])
    if args.check:
        kept = {id(p) for p in dominance_filter(points)}
        ec = []
        for p in points:
            reports = [epsilon_constraint_check(problem, p, i, grid, opts) for i in range(d)]
            ec.append(0.0 if any(r.improved for r in reports) else 1.0)
        header += ["nondominated", "ec_pass"]
        cols.append([1.0 if id(p) in kept else 0.0 for p in points])
        cols.append(ec)
    out = args.out or pf.run.out
    write_csv(out, header, cols)

    traj_dir = args.traj_dir
    if traj_dir is None and out not in (None, "-"):
        traj_dir = str(Path(out).with_suffix("")) + "_traj"
    if traj_dir:
        N = problem.n_components
        for k, p in enumerate(points):
            Y = p.result.trajectory.values
            write_csv(Path(traj_dir) / f"point_{k:03d}.csv", ["x"] + [f"y{i + 1}" for i in range(N)],
                      [grid.nodes] + [Y[:, i] for i in range(N)])
    n_conv = sum(p.converged for p in points)
    print(f"points = {len(points)}\nconverged = {n_conv}", file=sys.stderr if out in (None, "-") else sys.stdout)
    return EXIT_OK if n_conv == len(points) else EXIT_NOCONV

# }}}


# {{{ verify

def cmd_verify(args) -> int:
    pf = _load(args.problem)
    problem = pf.problem
    cols = read_csv(args.trajectory)
    N = problem.n_components
    names = [f"y{i + 1}" for i in range(N)]
    if "x" not in cols or any(nm not in cols for nm in names):
        raise UsageError(f"trajectory needs columns x,{','.join(names)}")
    x = cols["x"]
    n = x.size - 1
    if n < fracops.MIN_INTERVALS:
        raise UsageError("trajectory has too few nodes")
    grid = problem.grid(n)
    if np.max(np.abs(x - grid.nodes)) > 1e-12 * (problem.b - problem.a):
        raise UsageError("trajectory x column is not the uniform grid on the problem interval")
    traj = Trajectory(grid, np.column_stack([cols[nm] for nm in names]))
    label, _, expr = _select_objective(pf, args)

    r = len(problem.constraints)
    lam = None
    if args.lam is not None:
        lam = parse_floats(args.lam, "--lambda")
        if len(lam) != r:
            raise UsageError(f"--lambda needs {r} values, got {len(lam)}")
    if problem.isoperimetric:
        if lam is None:
            raise UsageError("isoperimetric problem: --lambda is required")
        mult = lam
    elif problem.pointwise:
        lam_cols = [f"lambda{j + 1}" for j in range(r)]
        if all(c in cols for c in lam_cols):
            values = np.array([cols[c] for c in lam_cols])
        elif lam is not None:
            values = np.repeat(np.array(lam)[:, None], n + 1, axis=1)
        else:
            raise UsageError("pointwise constraints need --lambda or lambda columns")
        phi_cols = [f"phi{j + 1}" for j in range(r)]
        slacks = None
        if any(c.kind is ConstraintKind.PW_INEQ for c in problem.constraints):
            if all(c in cols for c in phi_cols):
                slacks = np.array([cols[c] for c in phi_cols])
            else:
                # slack implied by the constraint itself: phi^2 = max(0, -G)
                V = derivative_samples(grid, problem.orders, traj.values)
                ev = evaluation_points(grid, traj.values, V)
                slacks = np.array([np.sqrt(np.maximum(0.0, -np.broadcast_to(c.integrand.eval(ev), x.shape)))
                                   for c in problem.constraints])
        mult = MultiplierSet(values, slacks)
    else:
        if lam is not None and r == 0 and len(lam):
            raise UsageError("problem has no constraints; --lambda not accepted")
        mult = []

    rep = Report()
    rep.add("problem", args.problem)
    rep.add("selection", label)
    rep.add("n", n)
    for k, e in enumerate(problem.objectives):
        rep.add(f"J{k + 1}", functional_value(e, traj, problem.orders))
    bmis = 0.0
    for i in range(N):
        left, right = problem.boundary.left(i), problem.boundary.right(i)
        if isinstance(left, Fixed):
            bmis = max(bmis, abs(traj.values[0, i] - left.value))
        if isinstance(right, Fixed):
            bmis = max(bmis, abs(traj.values[-1, i] - right.value))
    rep.add("boundary_mismatch", bmis)
    gated, F = _residual_report(rep, pf, traj, expr, mult, pf.run.interior_margin)

    if args.convexity_samples > 0:
        Y = traj.values
        V = derivative_samples(grid, problem.orders, Y)
        box = [(float(c.min()) - 1.0, float(c.max()) + 1.0) for c in list(Y.T) + list(V.T)]
        # informational: joint convexity of the checked integrand is sufficient, not necessary
        cert = convexity_certificate(F, box, args.convexity_samples, x_range=(problem.a, problem.b))
        rep.add("convexity_violations", cert.violations)
        rep.add("convexity_worst_gap", cert.worst_gap)

    tol = pf.run.residual_tol
    failed = sorted(k for k, v in gated.items() if not v <= tol)
    rep.add("residual_tol", tol)
    rep.add("failed", ",".join(failed) if failed else "none")
    rep.add("pass", not failed)
    rep.emit(args.report)
    return EXIT_OK if not failed else EXIT_NOCONV

# }}}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fracvar", description="Fractional variational problems with the combined Caputo operator.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("deriv", help="apply a fractional operator to f(x) on a grid")
    d.add_argument("--expr", required=True, help="f as an expression in x")
    d.add_argument("--op", required=True, choices=_OPS)
    d.add_argument("--alpha", type=float, required=True, help="order (left order for 'combined')")
    d.add_argument("--beta", type=float, help="right order for 'combined' (default: alpha)")
    d.add_argument("--gamma", type=float, default=1.0)
    d.add_argument("--a", type=float, default=0.0)
    d.add_argument("--b", type=float, default=1.0)
    d.add_argument("--n", type=int, default=256)
    d.add_argument("--out", help="output CSV (default: stdout)")
    d.set_defaults(func=cmd_deriv)

    s = sub.add_parser("solve", help="solve a problem file")
    s.add_argument("problem")
    s.add_argument("--objective", type=int, help="1-based objective index")
    s.add_argument("--weights", help="scalarization weights w1,..,wd")
    s.add_argument("--n", type=int, help="override [run] n")
    s.add_argument("--out", help="trajectory CSV (default: [run] out, else stdout)")
    s.add_argument("--report", help="also write the report to this file")
    s.set_defaults(func=cmd_solve)

    q = sub.add_parser("pareto", help="weighted-sum sweep")
    q.add_argument("problem")
    q.add_argument("--weights-count", type=int, help="number of weights (default: [run] weights_count)")
    q.add_argument("--check", action="store_true", help="dominance filter and epsilon-constraint checks")
    q.add_argument("--n", type=int, help="override [run] n")
    q.add_argument("--out", help="summary CSV (default: [run] out, else stdout)")
    q.add_argument("--traj-dir", help="directory for per-weight trajectory CSVs")
    q.add_argument("--workers", type=int, default=1, help="parallel solves")
    q.set_defaults(func=cmd_pareto)

    v = sub.add_parser("verify", help="check first-order conditions on a trajectory CSV")
    v.add_argument("problem")
    v.add_argument("--trajectory", required=True)
    v.add_argument("--lambda", dest="lam", help="multipliers l1,..,lr")
    v.add_argument("--objective", type=int)
    v.add_argument("--weights")
    v.add_argument("--convexity-samples", type=int, default=2000)
    v.add_argument("--report", help="also write the report to this file")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ProblemFileError, ExprError) as exc:
        print(f"fracvar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"fracvar: domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"fracvar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
