"""Line-oriented problem files.

::

    # comments start with '#'
    [interval]
    a = 0
    b = 1

    [orders]
    alpha = 0.5          # scalar, or one comma-separated entry per component
    beta = 0.5
    gamma = 1

    [objective.1]
    lagrangian = 0.5*(v1 - exp(x))^2

    [boundary]
    left = fixed:0       # fixed:<v> | free
    right = fixed:exp(1) - 1   # fixed:<v> | free | ub:<v>

    [constraint.1]
    kind = iso_eq        # iso_eq | iso_ineq | pw_eq | pw_ineq
    integrand = v1^2
    target = 1.5         # constant expression, or  integral: <expression in x>

    [run]
    n = 512

Numeric values in ``[interval]``, ``[boundary]`` and ``target`` may be
constant expressions (``exp(1) - 1``, ``mlf(0.5, 1)``). ``integral:`` targets
are integrated with the trapezoid rule on the run grid.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import ExprError, parse_expression, parse_lagrangian
from .fracops import FracOrders, MIN_INTERVALS, make_grid, trapezoid_quadrature
from .problem import (
    BoundarySpec,
    ConstraintKind,
    ConstraintSpec,
    Fixed,
    Free,
    ProblemSpec,
    UpperBounded,
)
from .specfun import DomainError

__all__ = ["ProblemFileError", "RunConfig", "ProblemFile", "parse_problem_file", "parse_problem_text"]


class ProblemFileError(ValueError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<problem>"):
        self.line = line
        self.msg = msg
        loc = f"{source}:{line}" if line is not None else source
        super().__init__(f"{loc}: {msg}")


@dataclass(frozen=True)
class RunConfig:
    n: int = 256
    weights: tuple | None = None
    weights_count: int = 11
    grad_tol: float = 1e-8
    constraint_tol: float = 1e-8
    residual_tol: float = 1e-1
    interior_margin: float = 0.1
    max_iters: int = 5000
    out: str | None = None


@dataclass(frozen=True)
class ProblemFile:
    problem: ProblemSpec
    run: RunConfig
    path: str = "<problem>"
    sources: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.problem.grid(self.run.n)


_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)(?:\.(\d+))?\s*\]$")
_KEYVAL = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")

_KEYS = {
    "interval": {"a", "b"},
    "orders": {"alpha", "beta", "gamma"},
    "objective": {"lagrangian"},
    "boundary": {"left", "right"},
    "constraint": {"kind", "integrand", "target"},
    "run": {"n", "weights", "weights_count", "grad_tol", "constraint_tol", "residual_tol",
            "interior_margin", "max_iters", "out"},
}
_INDEXED = {"objective", "constraint"}


def split_top(text: str) -> list[str]:
    """Split on commas that are not inside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur).strip())
    return parts


def _read_sections(text: str, source: str) -> dict:
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            name, idx = m.group(1).lower(), m.group(2)
            if name not in _KEYS:
                raise ProblemFileError(f"unknown section [{m.group(0)[1:-1].strip()}]", lineno, source)
            if (name in _INDEXED) != (idx is not None):
                form = f"[{name}.<k>]" if name in _INDEXED else f"[{name}]"
                raise ProblemFileError(f"section must be written {form}", lineno, source)
            key = (name, int(idx) if idx is not None else None)
            if key in sections:
                raise ProblemFileError(f"duplicate section {line}", lineno, source)
            sections[key] = {"_line": lineno}
            current = key
            continue
        m = _KEYVAL.match(line)
        if not m:
            raise ProblemFileError(f"expected 'key = value' or a [section] header, got {line!r}", lineno, source)
        if current is None:
            raise ProblemFileError("key outside of any section", lineno, source)
        k, v = m.group(1).lower(), m.group(2).strip()
        if k not in _KEYS[current[0]]:
            raise ProblemFileError(f"unknown key {k!r} in [{current[0]}]", lineno, source)
        if k in sections[current]:
            raise ProblemFileError(f"duplicate key {k!r}", lineno, source)
        if not v:
            raise ProblemFileError(f"empty value for {k!r}", lineno, source)
        sections[current][k] = (v, lineno)
    return sections


def _const(text: str, line: int, source: str, what: str) -> float:
    try:
        val = float(parse_expression(text, ()).eval([]))
    except (ExprError, DomainError) as exc:
        raise ProblemFileError(f"{what}: {exc}", line, source) from None
    if not np.isfinite(val):
        raise ProblemFileError(f"{what} is not finite", line, source)
    return val


def _number(text: str, line: int, source: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ProblemFileError(f"{what}: expected a number, got {text!r}", line, source) from None


def _require(sec: dict, key: str, name: str, source: str):
    if key not in sec:
        raise ProblemFileError(f"[{name}] is missing {key!r}", sec["_line"], source)
    return sec[key]


def _end(text: str, line: int, source: str, side: str):
    t = text.strip()
    low = t.lower()
    if low == "free":
        return Free()
    if ":" in t:
        tag, val = t.split(":", 1)
        tag = tag.strip().lower()
        if tag == "fixed":
            return Fixed(_const(val, line, source, f"{side} value"))
        if tag == "ub" and side == "right":
            return UpperBounded(_const(val, line, source, f"{side} bound"))
    allowed = "fixed:<v> | free" + (" | ub:<v>" if side == "right" else "")
    raise ProblemFileError(f"bad {side} end condition {t!r} (expected {allowed})", line, source)


def _run_config(sec: dict | None, source: str) -> RunConfig:
    if sec is None:
        return RunConfig()
    kw = {}
    for key, (val, line) in ((k, v) for k, v in sec.items() if k != "_line"):
        if key in ("n", "max_iters", "weights_count"):
            try:
                kw[key] = int(val)
            except ValueError:
                raise ProblemFileError(f"{key} must be an integer, got {val!r}", line, source) from None
            lo = MIN_INTERVALS if key == "n" else 1
            if kw[key] < lo:
                raise ProblemFileError(f"{key} must be >= {lo}", line, source)
        elif key == "weights":
            w = tuple(_number(p, line, source, "weight") for p in split_top(val))
            if any(x < 0 for x in w) or not sum(w) > 0:
                raise ProblemFileError("weights must be nonnegative and not all zero", line, source)
            kw[key] = w
        elif key == "out":
            kw[key] = val
        else:
            x = _number(val, line, source, key)
            if key == "interior_margin":
                if not 0 <= x < 0.5:
                    raise ProblemFileError("interior_margin must lie in [0, 0.5)", line, source)
            elif not x > 0:
                raise ProblemFileError(f"{key} must be positive", line, source)
            kw[key] = x
    return RunConfig(**kw)


def parse_problem_text(text: str, source: str = "<problem>") -> ProblemFile:
    secs = _read_sections(text, source)
    for required in ("interval", "orders", "boundary"):
        if (required, None) not in secs:
            raise ProblemFileError(f"missing section [{required}]", None, source)
    obj_idx = sorted(k[1] for k in secs if k[0] == "objective")
    if not obj_idx:
        raise ProblemFileError("missing section [objective.1]", None, source)
    if obj_idx != list(range(1, len(obj_idx) + 1)):
        raise ProblemFileError(f"objective sections must be numbered 1..d, got {obj_idx}", None, source)
    con_idx = sorted(k[1] for k in secs if k[0] == "constraint")
    if con_idx != list(range(1, len(con_idx) + 1)):
        raise ProblemFileError(f"constraint sections must be numbered 1..r, got {con_idx}", None, source)

    iv = secs[("interval", None)]
    a_txt, a_line = _require(iv, "a", "interval", source)
    b_txt, b_line = _require(iv, "b", "interval", source)
    a = _const(a_txt, a_line, source, "a")
    b = _const(b_txt, b_line, source, "b")
    if not b > a:
        raise ProblemFileError(f"need b > a, got a={a}, b={b}", b_line, source)

    od = secs[("orders", None)]
    lists = {}
    for key in ("alpha", "beta", "gamma"):
        txt, line = _require(od, key, "orders", source)
        vals = [_number(p, line, source, key) for p in split_top(txt)]
        for v in vals:
            if key == "gamma" and not 0.0 <= v <= 1.0:
                raise ProblemFileError(f"gamma must lie in [0, 1], got {v}", line, source)
            if key != "gamma" and not 0.0 < v < 1.0:
                raise ProblemFileError(f"{key} must lie in (0, 1), got {v}", line, source)
        lists[key] = (vals, line)

    bd = secs[("boundary", None)]
    l_txt, l_line = _require(bd, "left", "boundary", source)
    r_txt, r_line = _require(bd, "right", "boundary", source)
    lefts = [_end(p, l_line, source, "left") for p in split_top(l_txt)]
    rights = [_end(p, r_line, source, "right") for p in split_top(r_txt)]

    lengths = [len(v) for v, _ in lists.values()] + [len(lefts), len(rights)]
    N = max(lengths)
    for (key, (vals, line)) in list(lists.items()) + [("left", (lefts, l_line)), ("right", (rights, r_line))]:
        if len(vals) not in (1, N):
            raise ProblemFileError(f"{key} has {len(vals)} entries, expected 1 or {N}", line, source)

    def spread(vals):
        return vals * N if len(vals) == 1 else vals

    orders = FracOrders(*(spread(lists[k][0]) for k in ("alpha", "beta", "gamma")))
    try:
        boundary = BoundarySpec(tuple(zip(spread(lefts), spread(rights))))
    except ValueError as exc:
        raise ProblemFileError(str(exc), l_line, source) from None

    run = _run_config(secs.get(("run", None)), source)
    grid = make_grid(a, b, run.n)

    def lagr(txt, line, what):
        try:
            return parse_lagrangian(txt, N)
        except ExprError as exc:
            raise ProblemFileError(f"{what}: {exc}", line, source) from None

    sources = {}
    objectives = []
    for k in obj_idx:
        sec = secs[("objective", k)]
        txt, line = _require(sec, "lagrangian", f"objective.{k}", source)
        objectives.append(lagr(txt, line, f"objective {k}"))
        sources[f"objective.{k}"] = txt

    constraints = []
    for j in con_idx:
        sec = secs[("constraint", j)]
        name = f"constraint.{j}"
        kind_txt, kind_line = _require(sec, "kind", name, source)
        try:
            kind = ConstraintKind(kind_txt.strip().lower())
        except ValueError:
            raise ProblemFileError(
                f"constraint kind must be iso_eq, iso_ineq, pw_eq or pw_ineq, got {kind_txt!r}", kind_line, source
            ) from None
        txt, line = _require(sec, "integrand", name, source)
        integrand = lagr(txt, line, f"constraint {j}")
        target = 0.0
        if "target" in sec:
            t_txt, t_line = sec["target"]
            if not kind.isoperimetric:
                raise ProblemFileError("pointwise constraints take no target", t_line, source)
            if t_txt.lower().startswith("integral:"):
                body = t_txt.split(":", 1)[1]
                try:
                    vals = parse_expression(body, ("x",)).eval([grid.nodes])
                except (ExprError, DomainError) as exc:
                    raise ProblemFileError(f"target: {exc}", t_line, source) from None
                target = trapezoid_quadrature(grid, np.broadcast_to(vals, grid.nodes.shape))
            else:
                target = _const(t_txt, t_line, source, "target")
        elif kind.isoperimetric:
            raise ProblemFileError(f"[{name}] is missing 'target'", sec["_line"], source)
        constraints.append(ConstraintSpec(kind, integrand, target))
        sources[name] = txt

    try:
        problem = ProblemSpec(a, b, orders, tuple(objectives), boundary, tuple(constraints))
    except ValueError as exc:
        raise ProblemFileError(str(exc), None, source) from None
    if run.weights is not None and len(run.weights) != len(objectives):
        raise ProblemFileError(
            f"[run] weights has {len(run.weights)} entries, problem has {len(objectives)} objectives",
            secs[("run", None)]["weights"][1], source,
        )
    return ProblemFile(problem, run, source, sources)


def parse_problem_file(path) -> ProblemFile:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ProblemFileError(f"cannot read problem file: {exc.strerror}", None, str(path)) from None
    return parse_problem_text(text, str(path))
