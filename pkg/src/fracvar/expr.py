"""Integrand expressions: parsing, evaluation and exact first partials.

An integrand is written over named slots

    x            the independent variable
    y1 .. yN     trajectory components
    v1 .. vN     combined fractional derivative of each component
    p1 .. pr     multiplier / parameter slots

and evaluated with one value (or one array of node values) per slot, in
that order. Grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := primary ("^" unary)?          # right-associative
    primary := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Functions: ``sin cos exp ln sqrt abs gamma`` (one argument) and
``mlf(alpha, z)``, the Mittag-Leffler function. ``pi`` is a constant.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .specfun import DomainError, digamma_fn, gamma_fn, mittag_leffler, mittag_leffler_deriv

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "ArityError",
    "DomainError",
    "Expr",
    "LagrangianExpr",
    "parse_expression",
    "parse_lagrangian",
    "linear_combination",
]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier {name!r} at position {position}")
        self.name = name
        self.position = position


class ArityError(ExprError):
    pass


# {{{ tree

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "ln": 1,
    "sqrt": 1,
    "abs": 1,
    "gamma": 1,
    "mlf": 2,
}


def _to_str(node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{_to_str(node.arg)})"
    if isinstance(node, BinOp):
        return f"({_to_str(node.left)} {node.op} {_to_str(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_to_str(a) for a in node.args)})"
    raise TypeError(node)


def _has_var(node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, Neg):
        return _has_var(node.arg)
    if isinstance(node, BinOp):
        return _has_var(node.left) or _has_var(node.right)
    return any(_has_var(a) for a in node.args)

# }}}


# {{{ parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            # point at the first non-blank character
            bad = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {src[bad]!r}", bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, slots: dict[str, int]):
        self.tokens = _tokenize(src)
        self.i = 0
        self.slots = slots

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise UnknownIdentifierError(text, pos)
                self.take()
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[text]:
                    raise ArityError(
                        f"{text}() takes {FUNCTIONS[text]} argument(s), "
                        f"got {len(args)} at position {pos}"
                    )
                return Call(text, tuple(args))
            if text == "pi":
                return Num(math.pi)
            if text in self.slots:
                return Var(self.slots[text], text)
            raise UnknownIdentifierError(text, pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {found}", pos)

# }}}


# {{{ evaluation

def _pow_domain_check(a, b):
    a_arr = np.asarray(a)
    b_arr = np.asarray(b)
    bad = (a_arr < 0) & (b_arr != np.round(b_arr))
    if np.any(bad):
        raise DomainError("non-integer power of a negative base")


def _eval(node, args):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return args[node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, args)
    if isinstance(node, BinOp):
        a = _eval(node.left, args)
        b = _eval(node.right, args)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return np.divide(a, b)
        _pow_domain_check(a, b)
        return np.power(a, b)
    return _call(node, [_eval(a, args) for a in node.args])


def _call(node, vals):
    name = node.name
    a = vals[0]
    if name == "sin":
        return np.sin(a)
    if name == "cos":
        return np.cos(a)
    if name == "exp":
        return np.exp(a)
    if name == "ln":
        if np.any(np.asarray(a) <= 0):
            raise DomainError("ln of a non-positive argument")
        return np.log(a)
    if name == "sqrt":
        if np.any(np.asarray(a) < 0):
            raise DomainError("sqrt of a negative argument")
        return np.sqrt(a)
    if name == "abs":
        return np.abs(a)
    if name == "gamma":
        return gamma_fn(a)
    if name == "mlf":
        return mittag_leffler(_constant_order(a), vals[1])
    raise AssertionError(name)


def _constant_order(a) -> float:
    arr = np.asarray(a, dtype=float)
    if arr.ndim and np.ptp(arr) != 0:
        raise DomainError("mlf order must be a constant")
    return float(arr.flat[0])


def _add_grads(ga: dict, gb: dict, sign: float = 1.0) -> dict:
    out = dict(ga)
    for k, v in gb.items():
        out[k] = out[k] + sign * v if k in out else sign * v
    return out


def _scale(g: dict, factor) -> dict:
    return {k: v * factor for k, v in g.items()}


def _diff(node, args, wrt):
    """Forward mode: returns (value, {slot: d value / d slot})."""
    if isinstance(node, Num):
        return node.value, {}
    if isinstance(node, Var):
        return args[node.index], ({node.index: 1.0} if node.index in wrt else {})
    if isinstance(node, Neg):
        v, g = _diff(node.arg, args, wrt)
        return -v, _scale(g, -1.0)
    if isinstance(node, BinOp):
        a, ga = _diff(node.left, args, wrt)
        b, gb = _diff(node.right, args, wrt)
        op = node.op
        if op == "+":
            return a + b, _add_grads(ga, gb)
        if op == "-":
            return a - b, _add_grads(ga, gb, -1.0)
        if op == "*":
            return a * b, _add_grads(_scale(ga, b), _scale(gb, a))
        if op == "/":
            val = np.divide(a, b)
            return val, _add_grads(_scale(ga, np.divide(1.0, b)), _scale(gb, -np.divide(val, b)))
        _pow_domain_check(a, b)
        val = np.power(a, b)
        out = _scale(ga, b * np.power(a, b - 1.0)) if ga else {}
        if gb:
            if np.any(np.asarray(a) <= 0):
                raise DomainError("variable exponent requires a positive base")
            out = _add_grads(out, _scale(gb, val * np.log(a)))
        return val, out
    name = node.name
    if name == "mlf":
        order, g_order = _diff(node.args[0], args, wrt)
        if g_order:
            raise ExprError("mlf cannot be differentiated with respect to its order")
        z, gz = _diff(node.args[1], args, wrt)
        alpha = _constant_order(order)
        return mittag_leffler(alpha, z), _scale(gz, mittag_leffler_deriv(alpha, z)) if gz else {}
    a, ga = _diff(node.args[0], args, wrt)
    val = _call(node, [a])
    if not ga:
        return val, {}
    if name == "sin":
        d = np.cos(a)
    elif name == "cos":
        d = -np.sin(a)
    elif name == "exp":
        d = val
    elif name == "ln":
        d = np.divide(1.0, a)
    elif name == "sqrt":
        d = np.divide(0.5, val)
    elif name == "abs":
        d = np.sign(a)
    elif name == "gamma":
        d = val * digamma_fn(a)
    else:  # pragma: no cover
        raise AssertionError(name)
    return val, _scale(ga, d)

# }}}


class Expr:
    """Immutable parsed expression over a fixed, ordered tuple of slot names."""

    def __init__(self, ast, slot_names: Sequence[str], source: str = ""):
        self._ast = ast
        self._slots = tuple(slot_names)
        self._source = source or _to_str(ast)

    @property
    def ast(self):
        return self._ast

    @property
    def slot_names(self) -> tuple[str, ...]:
        return self._slots

    @property
    def arity(self) -> int:
        return len(self._slots)

    @property
    def source(self) -> str:
        return self._source

    def __str__(self) -> str:
        return _to_str(self._ast)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._source!r})"

    def depends_on(self, slot: int) -> bool:
        def walk(node):
            if isinstance(node, Var):
                return node.index == slot
            if isinstance(node, Num):
                return False
            if isinstance(node, Neg):
                return walk(node.arg)
            if isinstance(node, BinOp):
                return walk(node.left) or walk(node.right)
            return any(walk(a) for a in node.args)

        return walk(self._ast)

    def _check_args(self, args):
        if len(args) != self.arity:
            raise ArityError(f"expected {self.arity} arguments {self._slots}, got {len(args)}")

    def eval(self, args):
        """Evaluate at ``args`` (one scalar or node array per slot)."""
        args = list(args)
        self._check_args(args)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _eval(self._ast, args)
        shape = np.broadcast_shapes(*(np.shape(a) for a in args)) if args else ()
        if shape == ():
            return float(out)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def partials(self, args, wrt: Iterable[int] | None = None) -> np.ndarray:
        """Exact partial derivatives with respect to the slots in ``wrt``.

        ``wrt`` defaults to every slot. The result has one row per requested
        slot; rows are arrays when ``args`` carries node arrays.
        """
        args = list(args)
        self._check_args(args)
        slots = list(range(self.arity)) if wrt is None else list(wrt)
        with np.errstate(divide="ignore", invalid="ignore"):
            _, grads = _diff(self._ast, args, set(slots))
        shape = np.broadcast_shapes(*(np.shape(a) for a in args)) if args else ()
        out = np.zeros((len(slots),) + shape)
        for row, s in enumerate(slots):
            if s in grads:
                out[row] = grads[s]
        return out


class LagrangianExpr(Expr):
    """Integrand ``L(x, y1..yN, v1..vN, p1..pr)``."""

    def __init__(self, ast, n_components: int, n_params: int = 0, source: str = ""):
        if n_components < 1 or n_params < 0:
            raise ValueError("need n_components >= 1 and n_params >= 0")
        super().__init__(ast, lagrangian_slots(n_components, n_params), source)
        self.n_components = n_components
        self.n_params = n_params

    def y_slot(self, i: int) -> int:
        return 1 + i

    def v_slot(self, i: int) -> int:
        return 1 + self.n_components + i

    def p_slot(self, j: int) -> int:
        return 1 + 2 * self.n_components + j

    def bind_params(self, values: Sequence[float]) -> "LagrangianExpr":
        """Replace every ``p_j`` by the constant ``values[j]``; result has no parameters."""
        if len(values) != self.n_params:
            raise ArityError(f"expected {self.n_params} parameter values, got {len(values)}")
        N = self.n_components

        def sub(node):
            if isinstance(node, Var):
                if node.index > 2 * N:
                    return Num(float(values[node.index - 1 - 2 * N]))
                return node
            if isinstance(node, Num):
                return node
            if isinstance(node, Neg):
                return Neg(sub(node.arg))
            if isinstance(node, BinOp):
                return BinOp(node.op, sub(node.left), sub(node.right))
            return Call(node.name, tuple(sub(a) for a in node.args))

        return LagrangianExpr(sub(self.ast), N, 0)


def lagrangian_slots(n_components: int, n_params: int = 0) -> tuple[str, ...]:
    return (
        ("x",)
        + tuple(f"y{i + 1}" for i in range(n_components))
        + tuple(f"v{i + 1}" for i in range(n_components))
        + tuple(f"p{j + 1}" for j in range(n_params))
    )


def parse_expression(src: str, slot_names: Sequence[str]) -> Expr:
    if not src or not src.strip():
        raise ExprSyntaxError("empty expression", 0)
    slots = {name: i for i, name in enumerate(slot_names)}
    return Expr(_Parser(src, slots).parse(), slot_names, src)


def parse_lagrangian(src: str, n_components: int, n_params: int = 0) -> LagrangianExpr:
    """Parse an integrand over ``x, y1..yN, v1..vN, p1..pr``.

    >>> parse_lagrangian("v1^2", 1).arity
    3
    """
    if not src or not src.strip():
        raise ExprSyntaxError("empty expression", 0)
    slots = {name: i for i, name in enumerate(lagrangian_slots(n_components, n_params))}
    return LagrangianExpr(_Parser(src, slots).parse(), n_components, n_params, src)


def linear_combination(coeffs: Sequence[float], exprs: Sequence[LagrangianExpr]) -> LagrangianExpr:
    """Expression tree for ``sum_i coeffs[i] * exprs[i]`` (shared slot layout)."""
    if not exprs or len(coeffs) != len(exprs):
        raise ArityError("coefficient / expression count mismatch")
    N, r = exprs[0].n_components, exprs[0].n_params
    if any(e.n_components != N or e.n_params != r for e in exprs):
        raise ArityError("expressions must share the same slot layout")
    node = None
    for c, e in zip(coeffs, exprs):
        if c == 0.0:
            continue
        term = e.ast if c == 1.0 else BinOp("*", Num(float(c)), e.ast)
        node = term if node is None else BinOp("+", node, term)
    if node is None:
        node = Num(0.0)
    return LagrangianExpr(node, N, r)
