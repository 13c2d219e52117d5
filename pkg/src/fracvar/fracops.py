"""Discrete fractional operators on uniform grids.

Every operator is assembled as a dense ``(n+1) x (n+1)`` matrix acting on
node samples. Left-sided operators are lower triangular, right-sided ones
upper triangular; the right-sided matrix is always the left-sided matrix of
the reflected grid with both indices reversed, ``R = J L J``.

* RL integral: product trapezoidal rule (exact for piecewise-linear f).
* Caputo derivative: L1 scheme (exact kernel integral of the interpolant's
  first differences), order ``2 - alpha`` for smooth f.
* RL derivative: first differences (central inside, one-sided at the ends)
  applied after the RL integral of order ``1 - alpha``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .specfun import gamma_fn

__all__ = [
    "Grid",
    "FracOrders",
    "Kind",
    "OperatorMatrix",
    "Trajectory",
    "make_grid",
    "rl_integral_matrix",
    "caputo_matrix",
    "rl_derivative_matrix",
    "combined_caputo",
    "dual_combined_rl",
    "apply",
    "trapezoid_weights",
    "trapezoid_quadrature",
    "norm_1inf",
    "check_integration_by_parts",
]

MIN_INTERVALS = 8


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    n: int

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def nodes(self) -> np.ndarray:
        x = self.a + self.h * np.arange(self.n + 1)
        x[-1] = self.b
        return x

    def __len__(self) -> int:
        return self.n + 1


def make_grid(a: float, b: float, n: int) -> Grid:
    """Uniform partition of ``[a, b]`` into ``n >= 8`` intervals."""
    a, b = float(a), float(b)
    if not b > a:
        raise ValueError(f"need b > a, got a={a}, b={b}")
    if int(n) != n or n < MIN_INTERVALS:
        raise ValueError(f"need an integer n >= {MIN_INTERVALS}, got {n}")
    return Grid(a, b, int(n))


@dataclass(frozen=True)
class FracOrders:
    """Per-component orders of the combined operator."""

    alpha: tuple
    beta: tuple
    gamma: tuple

    def __post_init__(self):
        alpha = tuple(float(v) for v in np.atleast_1d(self.alpha))
        beta = tuple(float(v) for v in np.atleast_1d(self.beta))
        gamma = tuple(float(v) for v in np.atleast_1d(self.gamma))
        if not len(alpha) == len(beta) == len(gamma):
            raise ValueError("alpha, beta, gamma must have one entry per component")
        for name, vals in (("alpha", alpha), ("beta", beta)):
            if any(not 0.0 < v < 1.0 for v in vals):
                raise ValueError(f"{name} must lie in (0, 1), got {vals}")
        if any(not np.isfinite(g) for g in gamma):
            raise ValueError(f"gamma must be finite, got {gamma}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", tuple(min(1.0, max(0.0, g)) for g in gamma))

    @classmethod
    def uniform(cls, n_components: int, alpha: float, beta: float, gamma: float) -> "FracOrders":
        return cls((alpha,) * n_components, (beta,) * n_components, (gamma,) * n_components)

    @property
    def n_components(self) -> int:
        return len(self.alpha)

    def component(self, i: int) -> tuple[float, float, float]:
        return self.alpha[i], self.beta[i], self.gamma[i]


class Kind(enum.Enum):
    LEFT_RLI = "LeftRLI"
    RIGHT_RLI = "RightRLI"
    LEFT_RLD = "LeftRLD"
    RIGHT_RLD = "RightRLD"
    LEFT_CAPUTO = "LeftCaputo"
    RIGHT_CAPUTO = "RightCaputo"
    COMBINED_CAPUTO = "CombinedCaputo"
    DUAL_COMBINED_RL = "DualCombinedRL"


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    kind: Kind
    params: dict
    weights: np.ndarray = field(repr=False)
    grid: Grid

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __matmul__(self, samples):
        return apply(self, samples)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node values of an ``N``-component curve, shape ``(n+1, N)``."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n + 1:
            raise ValueError(f"expected {self.grid.n + 1} rows, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_components(self) -> int:
        return self.values.shape[1]


def _reflect(w: np.ndarray) -> np.ndarray:
    return w[::-1, ::-1].copy()


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not 0.0 < mu <= 1.0:
        raise ValueError(f"integral order must lie in (0, 1], got {mu}")
    return mu


def _check_order(alpha: float, name: str = "alpha") -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {alpha}")
    return alpha


def _side(side: str) -> str:
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return side


def _left_rli_weights(n: int, h: float, mu: float) -> np.ndarray:
    # w[k, j] for 0 <= j <= k, see module docstring
    k = np.arange(n + 1, dtype=float)
    p = mu + 1.0
    W = np.zeros((n + 1, n + 1))
    # d = k - j; interior weights (d+1)^p - 2 d^p + (d-1)^p for 1 <= d <= k-1
    d = np.arange(n + 1, dtype=float)
    inner = np.zeros(n + 1)
    inner[1:] = (d[1:] + 1) ** p - 2 * d[1:] ** p + (d[1:] - 1) ** p
    rows, cols = np.tril_indices(n + 1)
    dd = rows - cols
    W[rows, cols] = inner[dd]
    W[np.arange(n + 1), np.arange(n + 1)] = 1.0
    first = (k[1:] - 1) ** p - (k[1:] - 1 - mu) * k[1:] ** mu
    W[1:, 0] = first
    W[0, 0] = 0.0
    return W * h**mu / gamma_fn(mu + 2.0)


def rl_integral_matrix(grid: Grid, mu: float, side: str = "left") -> OperatorMatrix:
    """Riemann-Liouville fractional integral of order ``mu`` in (0, 1]."""
    mu = _check_mu(mu)
    side = _side(side)
    W = _left_rli_weights(grid.n, grid.h, mu)
    if side == "right":
        W = _reflect(W)
    kind = Kind.LEFT_RLI if side == "left" else Kind.RIGHT_RLI
    return OperatorMatrix(kind, {"mu": mu}, W, grid)


def _left_caputo_weights(n: int, h: float, alpha: float) -> np.ndarray:
    m = np.arange(n + 1, dtype=float)
    b = (m + 1) ** (1 - alpha) - m ** (1 - alpha)
    # row k: sum_{j<k} b[k-j-1] (f[j+1] - f[j])
    B = np.zeros((n + 1, n + 1))
    rows, cols = np.tril_indices(n + 1, -1)
    B[rows, cols] = b[rows - cols - 1]
    W = np.zeros((n + 1, n + 1))
    W[:, 1:] += B[:, :-1]
    W[:, :-1] -= B[:, :-1]
    return W * h ** (-alpha) / gamma_fn(2.0 - alpha)


def caputo_matrix(grid: Grid, alpha: float, side: str = "left") -> OperatorMatrix:
    """Caputo derivative of order ``alpha`` in (0, 1) by the L1 scheme."""
    alpha = _check_order(alpha)
    side = _side(side)
    W = _left_caputo_weights(grid.n, grid.h, alpha)
    if side == "right":
        W = _reflect(W)
    kind = Kind.LEFT_CAPUTO if side == "left" else Kind.RIGHT_CAPUTO
    return OperatorMatrix(kind, {"alpha": alpha}, W, grid)


def _difference_matrix(n: int, h: float) -> np.ndarray:
    D = np.zeros((n + 1, n + 1))
    i = np.arange(1, n)
    D[i, i + 1] = 0.5 / h
    D[i, i - 1] = -0.5 / h
    D[0, 0], D[0, 1] = -1.0 / h, 1.0 / h
    D[n, n - 1], D[n, n] = -1.0 / h, 1.0 / h
    return D


def rl_derivative_matrix(grid: Grid, alpha: float, side: str = "left") -> OperatorMatrix:
    """Riemann-Liouville derivative: ``d/dx`` after the integral of order ``1 - alpha``.

    The right-sided operator carries the ``-d/dx`` sign through the reflection.
    """
    alpha = _check_order(alpha)
    side = _side(side)
    W = _difference_matrix(grid.n, grid.h) @ _left_rli_weights(grid.n, grid.h, 1.0 - alpha)
    if side == "right":
        W = _reflect(W)
    kind = Kind.LEFT_RLD if side == "left" else Kind.RIGHT_RLD
    return OperatorMatrix(kind, {"alpha": alpha}, W, grid)


def combined_caputo(grid: Grid, alpha: float, beta: float, gamma: float) -> OperatorMatrix:
    """``gamma * leftCaputo(alpha) + (1 - gamma) * rightCaputo(beta)``."""
    alpha = _check_order(alpha)
    beta = _check_order(beta, "beta")
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    W = np.zeros((grid.n + 1, grid.n + 1))
    if gamma != 0.0:
        W += gamma * caputo_matrix(grid, alpha, "left").weights
    if gamma != 1.0:
        W += (1.0 - gamma) * caputo_matrix(grid, beta, "right").weights
    return OperatorMatrix(
        Kind.COMBINED_CAPUTO, {"alpha": alpha, "beta": beta, "gamma": gamma}, W, grid
    )


def dual_combined_rl(grid: Grid, alpha: float, beta: float, gamma: float) -> OperatorMatrix:
    """``(1 - gamma) * leftRLD(beta) + gamma * rightRLD(alpha)``.

    This is the operator that lands on ``dL/dv`` after integrating the
    combined Caputo operator by parts.
    """
    alpha = _check_order(alpha)
    beta = _check_order(beta, "beta")
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    W = np.zeros((grid.n + 1, grid.n + 1))
    if gamma != 1.0:
        W += (1.0 - gamma) * rl_derivative_matrix(grid, beta, "left").weights
    if gamma != 0.0:
        W += gamma * rl_derivative_matrix(grid, alpha, "right").weights
    return OperatorMatrix(
        Kind.DUAL_COMBINED_RL, {"alpha": alpha, "beta": beta, "gamma": gamma}, W, grid
    )


def apply(op: OperatorMatrix, samples) -> np.ndarray:
    f = np.asarray(samples, dtype=float)
    if f.shape[0] != op.grid.n + 1:
        raise ValueError(f"expected {op.grid.n + 1} samples, got {f.shape[0]}")
    return op.weights @ f


def trapezoid_weights(grid: Grid) -> np.ndarray:
    q = np.full(grid.n + 1, grid.h)
    q[0] = q[-1] = 0.5 * grid.h
    return q


def trapezoid_quadrature(grid: Grid, samples) -> float:
    f = np.asarray(samples, dtype=float)
    if f.shape[0] != grid.n + 1:
        raise ValueError(f"expected {grid.n + 1} samples, got {f.shape[0]}")
    return float(trapezoid_weights(grid) @ f)


@functools.lru_cache(maxsize=32)
def _component_operators(grid: Grid, orders: FracOrders, builder) -> tuple:
    cache: dict[tuple, OperatorMatrix] = {}
    ops = []
    for i in range(orders.n_components):
        key = orders.component(i)
        if key not in cache:
            cache[key] = builder(grid, *key)
        ops.append(cache[key])
    return tuple(ops)


def combined_operators(grid: Grid, orders: FracOrders) -> list[OperatorMatrix]:
    """One combined Caputo matrix per component (shared when orders repeat).

    Matrices are read-only and cached per ``(grid, orders)``.
    """
    return list(_component_operators(grid, orders, combined_caputo))


def dual_operators(grid: Grid, orders: FracOrders) -> list[OperatorMatrix]:
    return list(_component_operators(grid, orders, dual_combined_rl))


def norm_1inf(traj: Trajectory, orders: FracOrders) -> float:
    """``max |y(x)| + max |D y(x)|`` with Euclidean norms on R^N."""
    Y = traj.values
    if Y.shape[1] != orders.n_components:
        raise ValueError("trajectory / orders component mismatch")
    ops = combined_operators(traj.grid, orders)
    V = np.column_stack([ops[i].weights @ Y[:, i] for i in range(Y.shape[1])])
    return float(np.max(np.linalg.norm(Y, axis=1)) + np.max(np.linalg.norm(V, axis=1)))


def check_integration_by_parts(
    f: Sequence[float],
    g: Sequence[float],
    alpha: float,
    beta: float,
    gamma: float,
    grid: Grid,
) -> float:
    """Discrete residual of the by-parts rule for the combined operator.

    Returns ``|int g C f - boundary - int f D g|`` where ``C`` is the combined
    Caputo operator, ``D`` its dual RL operator and the boundary terms are

        gamma [f I_right^{1-alpha} g]_a^b - (1 - gamma) [f I_left^{1-beta} g]_a^b.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    C = combined_caputo(grid, alpha, beta, gamma)
    D = dual_combined_rl(grid, alpha, beta, gamma)
    lhs = trapezoid_quadrature(grid, g * apply(C, f))
    rhs = trapezoid_quadrature(grid, f * apply(D, g))
    right_int = apply(rl_integral_matrix(grid, 1.0 - alpha, "right"), g)
    left_int = apply(rl_integral_matrix(grid, 1.0 - beta, "left"), g)
    boundary = gamma * (f[-1] * right_int[-1] - f[0] * right_int[0]) - (1.0 - gamma) * (
        f[-1] * left_int[-1] - f[0] * left_int[0]
    )
    return abs(lhs - boundary - rhs)
