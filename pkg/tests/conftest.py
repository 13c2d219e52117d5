import numpy as np
import pytest

from fracvar import BoundarySpec, FracOrders, ProblemSpec, parse_lagrangian
from fracvar.problem import Fixed, Free, UpperBounded


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_problem(objectives, alpha=0.5, gamma=1.0, boundary=None, constraints=(), N=1, beta=None, a=0.0, b=1.0):
    """Small helper: uniform orders, fixed 0 -> 1 ends by default."""
    beta = alpha if beta is None else beta
    orders = FracOrders.uniform(N, alpha, beta, gamma)
    if boundary is None:
        boundary = BoundarySpec.fixed([0.0] * N, [1.0] * N)
    exprs = [parse_lagrangian(s, N) if isinstance(s, str) else s for s in objectives]
    return ProblemSpec(a, b, orders, exprs, boundary, constraints)


def random_problem(rng):
    """Random orders, polynomial-plus-transcendental integrand and end conditions."""
    N = int(rng.integers(1, 3))
    orders = FracOrders(rng.uniform(0.1, 0.9, N), rng.uniform(0.1, 0.9, N), rng.uniform(0, 1, N))
    terms = []
    for i in range(1, N + 1):
        c = rng.uniform(-1, 1, 4)
        terms.append(f"{1 + abs(c[0]):.6f}*v{i}^2 + {c[1]:.6f}*y{i}*v{i} + {c[2]:.6f}*y{i}^3 + {c[3]:.6f}*sin(x*v{i})")
    if N == 2:
        terms.append("0.3*y1*v2")
    L = parse_lagrangian(" + ".join(terms), N)
    conds = []
    for _ in range(N):
        right = [Fixed(float(rng.normal())), Free(), UpperBounded(float(rng.normal()))][int(rng.integers(3))]
        conds.append((Fixed(float(rng.normal())), right))
    return ProblemSpec(0.0, float(rng.uniform(0.5, 2)), orders, [L], BoundarySpec(tuple(conds)))


def fd_gradient(fun, z, h=1e-6):
    g = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        g[k] = (fun(z + e) - fun(z - e)) / (2 * h)
    return g
