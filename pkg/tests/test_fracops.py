import math

import numpy as np
import pytest
from scipy import integrate

from fracvar.fracops import (
    FracOrders,
    Kind,
    Trajectory,
    apply,
    caputo_matrix,
    check_integration_by_parts,
    combined_caputo,
    dual_combined_rl,
    make_grid,
    norm_1inf,
    rl_derivative_matrix,
    rl_integral_matrix,
    trapezoid_quadrature,
)
from fracvar.specfun import mittag_leffler


def left_rli_oracle(f, a, x, mu):
    """Left RL integral by adaptive quadrature with the algebraic weight."""
    if x == a:
        return 0.0
    val, _ = integrate.quad(f, a, x, weight="alg", wvar=(0.0, mu - 1.0), epsabs=1e-13, epsrel=1e-13)
    return val / math.gamma(mu)


def right_rli_oracle(f, x, b, mu):
    if x == b:
        return 0.0
    val, _ = integrate.quad(f, x, b, weight="alg", wvar=(mu - 1.0, 0.0), epsabs=1e-13, epsrel=1e-13)
    return val / math.gamma(mu)


ALL_KINDS = [
    lambda g: rl_integral_matrix(g, 0.3, "left"),
    lambda g: rl_integral_matrix(g, 0.3, "right"),
    lambda g: caputo_matrix(g, 0.6, "left"),
    lambda g: caputo_matrix(g, 0.6, "right"),
    lambda g: rl_derivative_matrix(g, 0.6, "left"),
    lambda g: rl_derivative_matrix(g, 0.6, "right"),
]


def test_make_grid():
    g = make_grid(0, 1, 10)
    np.testing.assert_allclose(g.nodes, np.linspace(0, 1, 11), atol=1e-15)
    assert g.nodes[0] == 0 and g.nodes[-1] == 1
    assert make_grid(-1, 1, 8).h == 0.25
    with pytest.raises(ValueError):
        make_grid(0, 1, 7)
    with pytest.raises(ValueError):
        make_grid(1, 1, 10)


def test_orders_validation():
    with pytest.raises(ValueError):
        FracOrders((1.0,), (0.5,), (0.5,))
    with pytest.raises(ValueError):
        FracOrders((0.5,), (0.0,), (0.5,))
    assert FracOrders((0.5,), (0.5,), (1.3,)).gamma == (1.0,)


def test_rli_of_one_against_quadrature():
    g = make_grid(0, 1, 64)
    left = apply(rl_integral_matrix(g, 0.5, "left"), np.ones(65))
    right = apply(rl_integral_matrix(g, 0.5, "right"), np.ones(65))
    ref = left_rli_oracle(lambda t: 1.0, 0, 1, 0.5)
    assert ref == pytest.approx(1.1283792, abs=1e-7)
    assert left[-1] == pytest.approx(ref, rel=1e-12)
    assert right[0] == pytest.approx(right_rli_oracle(lambda t: 1.0, 0, 1, 0.5), rel=1e-12)


def test_rli_exact_for_piecewise_linear():
    g = make_grid(0, 1, 16)
    x = g.nodes
    f = 1 + 2 * x
    out = apply(rl_integral_matrix(g, 0.4, "left"), f)
    ref = [left_rli_oracle(lambda t: 1 + 2 * t, 0, xk, 0.4) for xk in x]
    np.testing.assert_allclose(out, ref, rtol=1e-11, atol=1e-13)


def test_rli_order_one_is_cumulative_trapezoid():
    g = make_grid(0, 2, 40)
    f = np.sin(3 * g.nodes)
    out = apply(rl_integral_matrix(g, 1.0, "left"), f)
    ref = integrate.cumulative_trapezoid(f, g.nodes, initial=0.0)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_rli_order_out_of_range():
    g = make_grid(0, 1, 8)
    for mu in (0.0, 1.5, -0.2):
        with pytest.raises(ValueError):
            rl_integral_matrix(g, mu)
    with pytest.raises(ValueError):
        caputo_matrix(g, 1.0)
    with pytest.raises(ValueError):
        rl_derivative_matrix(g, 0.0)


@pytest.mark.parametrize("make", ALL_KINDS)
def test_triangularity(make):
    op = make(make_grid(0, 1, 12))
    W = op.weights
    # the central difference inside the RL derivative reaches one node across
    band = 1 if op.kind in (Kind.LEFT_RLD, Kind.RIGHT_RLD) else 0
    if op.kind.value.startswith("Left"):
        assert np.all(np.triu(W, 1 + band) == 0)
    else:
        assert np.all(np.tril(W, -1 - band) == 0)


def test_caputo_annihilates_constants():
    g = make_grid(0, 1, 50)
    for side in ("left", "right"):
        W = caputo_matrix(g, 0.37, side).weights
        assert np.max(np.abs(W.sum(axis=1))) <= 1e-14
    assert np.max(np.abs(apply(caputo_matrix(g, 0.7), np.full(51, 3.5)))) <= 1e-13
    assert np.all(caputo_matrix(g, 0.7, "left").weights[0] == 0)
    assert np.all(caputo_matrix(g, 0.7, "right").weights[-1] == 0)


def test_caputo_of_identity_against_quadrature():
    g = make_grid(0, 1, 32)
    out = apply(caputo_matrix(g, 0.5), g.nodes)
    ref = left_rli_oracle(lambda t: 1.0, 0, 1, 0.5)
    assert out[-1] == pytest.approx(ref, rel=1e-12)
    assert out[-1] == pytest.approx(1.1283792, abs=1e-7)


def test_caputo_square_convergence_order():
    errs = []
    for n in (256, 1024):
        g = make_grid(0, 1, n)
        x = g.nodes
        ref = 2 * x ** 1.5 / math.gamma(2.5)
        errs.append(np.max(np.abs(apply(caputo_matrix(g, 0.5), x ** 2) - ref)))
    assert errs[1] <= 1e-3
    assert math.log(errs[0] / errs[1], 4) >= 1.4


def test_caputo_square_reference_matches_quadrature():
    # the analytic reference used above, checked against the defining integral
    for x in (0.25, 0.8):
        ref = left_rli_oracle(lambda t: 2 * t, 0, x, 0.5)
        assert ref == pytest.approx(2 * x ** 1.5 / math.gamma(2.5), rel=1e-11)


def test_right_caputo_is_reflected_left():
    g = make_grid(0, 1, 64)
    x = g.nodes
    f = np.exp(x)
    right = apply(caputo_matrix(g, 0.4, "right"), f)
    left_of_reflection = apply(caputo_matrix(g, 0.4, "left"), np.exp(1 - x))[::-1]
    # the minus sign of the right operator cancels the one from reflecting d/dx
    np.testing.assert_allclose(right, left_of_reflection, atol=1e-13)


def test_mittag_leffler_fixed_point_interior():
    errs = []
    for n in (512, 2048):
        g = make_grid(0, 1, n)
        x = g.nodes
        y = mittag_leffler(0.5, x ** 0.5)
        mask = (x >= 0.1) & (x <= 0.9)
        errs.append(np.max(np.abs(apply(caputo_matrix(g, 0.5), y) - y)[mask]))
    assert errs[1] < errs[0]
    assert errs[1] <= 2e-2


def test_caputo_near_one_approaches_first_derivative():
    g = make_grid(0, 1, 2048)
    x = g.nodes
    out = apply(caputo_matrix(g, 0.99), np.sin(x))
    # next to x=0 the exact order-0.99 derivative is ~x^0.01 cos(x), 7% off at x=h
    mask = (x >= 0.1) & (x <= 0.9)
    assert np.max(np.abs(out - np.cos(x))[mask]) <= 5e-2


def test_rld_of_constant_against_quadrature():
    g = make_grid(0, 1, 256)
    c = 2.5
    out = apply(rl_derivative_matrix(g, 0.5, "left"), np.full(257, c))
    ref = c / math.gamma(0.5)
    assert ref == pytest.approx(c * 0.5641896, rel=1e-7)
    # one-sided difference at the end node; first-order accurate
    assert out[-1] == pytest.approx(ref, rel=5e-3)
    assert out[128] == pytest.approx(c * 0.5 ** -0.5 / math.gamma(0.5), rel=1e-4)


def test_rld_near_one_approaches_first_derivative():
    g = make_grid(0, 1, 1024)
    x = g.nodes
    # f(0) = 0, otherwise the RL derivative carries f(0) x^-alpha / Gamma(1-alpha)
    out = apply(rl_derivative_matrix(g, 0.99, "left"), np.sin(2 * x))
    mask = (x >= 0.1) & (x <= 0.9)
    assert np.max(np.abs(out - 2 * np.cos(2 * x))[mask]) <= 5e-2


def test_right_rld_kernel_function_is_annihilated():
    # (1 - x)^(alpha - 1) lies in the kernel of the right RL derivative
    alpha = 0.5
    errs = []
    for n in (256, 1024):
        g = make_grid(0, 1, n)
        x = g.nodes
        f = np.empty_like(x)
        f[:-1] = (1 - x[:-1]) ** (alpha - 1)
        f[-1] = (0.5 * g.h) ** (alpha - 1)
        mask = (x >= 0.1) & (x <= 0.9)
        errs.append(np.max(np.abs(apply(rl_derivative_matrix(g, alpha, "right"), f))[mask]))
    assert errs[1] < errs[0]
    assert math.log(errs[0] / errs[1], 4) >= 0.4


def test_combined_limits_and_convexity(rng):
    g = make_grid(0, 1, 40)
    left = caputo_matrix(g, 0.3, "left").weights
    right = caputo_matrix(g, 0.7, "right").weights
    np.testing.assert_array_equal(combined_caputo(g, 0.3, 0.7, 1.0).weights, left)
    np.testing.assert_array_equal(combined_caputo(g, 0.3, 0.7, 0.0).weights, right)
    f = rng.normal(size=41)
    for gam in (0.2, 0.5, 0.9):
        out = apply(combined_caputo(g, 0.3, 0.7, gam), f)
        np.testing.assert_allclose(out, gam * left @ f + (1 - gam) * right @ f, atol=1e-14)
    assert combined_caputo(g, 0.3, 0.7, 0.5).kind is Kind.COMBINED_CAPUTO


def test_combined_linearity(rng):
    g = make_grid(0, 1, 30)
    M = combined_caputo(g, 0.4, 0.6, 0.3)
    f, h = rng.normal(size=(2, 31))
    np.testing.assert_allclose(apply(M, 2 * f - 3 * h), 2 * apply(M, f) - 3 * apply(M, h), atol=1e-13)
    np.testing.assert_allclose(apply(M, f) + apply(M, h), apply(M, f + h), atol=1e-13)


def test_dual_limits():
    g = make_grid(0, 1, 40)
    np.testing.assert_array_equal(dual_combined_rl(g, 0.3, 0.7, 1.0).weights,
                                  rl_derivative_matrix(g, 0.3, "right").weights)
    np.testing.assert_array_equal(dual_combined_rl(g, 0.3, 0.7, 0.0).weights,
                                  rl_derivative_matrix(g, 0.7, "left").weights)


def test_dual_symmetric_on_even_function():
    g = make_grid(0, 1, 512)
    x = g.nodes
    f = np.cos(2 * (x - 0.5))
    out = apply(dual_combined_rl(g, 0.5, 0.5, 0.5), f)
    explicit = 0.5 * apply(rl_derivative_matrix(g, 0.5, "left"), f) + 0.5 * apply(
        rl_derivative_matrix(g, 0.5, "right"), f)
    np.testing.assert_allclose(out, explicit, atol=1e-12)
    # both one-sided operators map to each other under x -> 1 - x, so an even
    # input gives an even output
    assert np.max(np.abs(out - out[::-1])) <= 1e-3


def test_apply_checks_length():
    g = make_grid(0, 1, 10)
    M = caputo_matrix(g, 0.5)
    with pytest.raises(ValueError):
        apply(M, np.ones(10))
    assert np.all(apply(M, np.zeros(11)) == 0)
    assert np.array_equal(M @ np.ones(11), apply(M, np.ones(11)))


def test_matrices_are_read_only():
    M = caputo_matrix(make_grid(0, 1, 10), 0.5)
    with pytest.raises(ValueError):
        M.weights[0, 0] = 1.0


def test_trapezoid():
    g = make_grid(0, 1, 10)
    assert trapezoid_quadrature(g, np.ones(11)) == pytest.approx(1.0, abs=1e-15)
    assert trapezoid_quadrature(g, g.nodes) == pytest.approx(0.5, abs=1e-15)
    g = make_grid(0, 1, 1000)
    assert abs(trapezoid_quadrature(g, g.nodes ** 2) - 1 / 3) <= 1e-6
    with pytest.raises(ValueError):
        trapezoid_quadrature(g, np.ones(5))


def test_norm_1inf():
    g = make_grid(0, 1, 20)
    orders = FracOrders.uniform(2, 0.5, 0.5, 0.4)
    assert norm_1inf(Trajectory(g, np.zeros((21, 2))), orders) == 0
    const = Trajectory(g, np.tile([3.0, -4.0], (21, 1)))
    assert norm_1inf(const, orders) == pytest.approx(5.0, abs=1e-13)
    x = g.nodes
    Y = np.column_stack([x, x ** 2])
    base = norm_1inf(Trajectory(g, Y), orders)
    assert norm_1inf(Trajectory(g, -2.5 * Y), orders) == pytest.approx(2.5 * base, rel=1e-14)


def test_integration_by_parts_zero_and_convergence():
    g = make_grid(0, 1, 64)
    z = np.zeros(65)
    assert check_integration_by_parts(z, z, 0.4, 0.6, 0.3, g) == 0.0
    res = []
    for n in (512, 2048):
        g = make_grid(0, 1, n)
        x = g.nodes
        res.append(check_integration_by_parts(x * (1 - x), np.cos(x), 0.4, 0.6, 0.3, g))
    assert res[1] <= 1e-3
    assert math.log(res[0] / res[1], 4) >= 1.0


def test_integration_by_parts_left_sided_with_boundary_term():
    # gamma = 1 and f(b) != 0: the right RL integral boundary term is active
    res = []
    for n in (256, 1024):
        g = make_grid(0, 1, n)
        x = g.nodes
        res.append(check_integration_by_parts(x ** 2, 1 + x, 0.5, 0.5, 1.0, g))
    assert res[1] < res[0]
    assert res[1] <= 5e-3
