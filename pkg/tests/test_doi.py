import numpy as np
import pytest
import scipy.linalg as la
from numpy.testing import assert_allclose

from static.util import ArgumentError, DomainError
from function.operator_core import make_pair, resolvent_i, random_dissipative
from function.funcalc import battery, pole, resolvent_power, apply
from function.harness import gen_pair
from function.doi import (
    Kernel, kernel_eval, doi_eigen, doi_quadrature, difference_formula_residual, derivative_formula,
    finite_difference_derivative, convergence_order, doi_trace_identity, relative_lipschitz_ratio,
    trace_class_corollary, LipschitzTracker,
)

BATTERY = [f for kind in ("resolvent_powers", "lower_poles", "disk_polys", "mixed") for f in battery(kind)]


# ---------- kernel ----------
def test_kernel_forms():
    f = pole(-1j)
    z, w = np.array([1j, 2.0]), np.array([0.5, 3j])
    dd = f.divided_diff(z, w)
    assert_allclose(Kernel.dd(f).values(z, w), dd)
    assert_allclose(Kernel.dd_flat(f).values(z, w), dd * (w + 1j))
    assert_allclose(Kernel.res_dd(f).values(z, w), (z + 1j) * (w + 1j) * dd)
    assert Kernel.dd_flat(f).kernel_id == "dd_flat(pole(0-1j))"


def test_kernel_validation():
    with pytest.raises(ArgumentError):
        Kernel("spline", pole(-1j))
    with pytest.raises(ArgumentError):
        Kernel("custom")
    with pytest.raises(ArgumentError):
        Kernel("dd")
    with pytest.raises(DomainError):
        kernel_eval(Kernel.dd(pole(-1j)), np.array([-1j]), np.array([0.0]))


# ---------- 求值器 ----------
def test_constant_kernel_returns_middle_operator(pair4):
    Q = pair4.C.entries
    assert_allclose(doi_eigen(Kernel.constant(1.0), pair4.M, Q, pair4.L).entries, Q, atol=1e-10)


def test_separable_kernel_factorizes(pair4):
    ker = Kernel.custom(lambda z, w: 1.0 / ((z + 1j) * (w + 1j)), "sep")
    Q = pair4.K.entries
    expected = resolvent_i(pair4.M) @ Q @ resolvent_i(pair4.L)
    assert_allclose(doi_eigen(ker, pair4.M, Q, pair4.L).entries, expected, atol=1e-10)


def test_second_resolvent_identity(pair4):
    doi = doi_eigen(Kernel.dd_flat(pole(-1j)), pair4.M, pair4.C, pair4.L).entries
    assert_allclose(doi, resolvent_i(pair4.M) - resolvent_i(pair4.L), atol=1e-10)


@pytest.mark.slow
def test_quadrature_evaluator_agrees_with_eigen_path(strict_pair):
    ker = Kernel.dd_flat(pole(-2j))
    eigen = doi_eigen(ker, strict_pair.M, strict_pair.C, strict_pair.L).entries
    quad = doi_quadrature(ker, strict_pair.M, strict_pair.C, strict_pair.L, tol=1e-7).entries
    assert la.norm(eigen - quad, 2) <= 1e-6


# ---------- 差分與導數公式 ----------
@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("dim", [2, 4, 8])
def test_difference_formula(seed, dim):
    pair = gen_pair(seed, dim, 0.25)
    for f in BATTERY:
        assert difference_formula_residual(f, pair) <= 1e-8, f.function_id


def test_difference_formula_for_zero_perturbation():
    L = random_dissipative(0, 3, 0.3)
    pair = make_pair(L, np.zeros((3, 3)))
    assert difference_formula_residual(pole(-1j), pair) == 0.0
    assert relative_lipschitz_ratio(pole(-1j), pair) == 0.0


@pytest.mark.parametrize("f", BATTERY[:6], ids=lambda f: f.function_id)
def test_derivative_matches_central_difference(strict_pair, f):
    Q = derivative_formula(strict_pair, 0.5, f).Q.entries
    fd = finite_difference_derivative(strict_pair, 0.5, f, 1e-4).entries
    assert la.norm(fd - Q, 2) <= 1e-5 * max(1.0, la.norm(Q, 2))


def test_derivative_at_zero_for_resolvent(strict_pair):
    # d/dt (L+tK+iI)^{-1} = −R K R
    R = resolvent_i(strict_pair.L)
    Q = derivative_formula(strict_pair, 0.0, pole(-1j)).Q.entries
    assert_allclose(Q, -R @ strict_pair.K.entries @ R, atol=1e-10)


def test_finite_difference_needs_positive_step(strict_pair):
    with pytest.raises(ArgumentError):
        finite_difference_derivative(strict_pair, 0.5, pole(-1j), 0.0)


@pytest.mark.parametrize("f", [pole(-1j), resolvent_power(2)], ids=lambda f: f.function_id)
def test_central_difference_is_second_order(strict_pair, f):
    assert convergence_order(strict_pair, 0.5, f).order >= 1.9


def test_convergence_order_is_inconclusive_at_rounding_floor():
    pair = make_pair(random_dissipative(4, 3, 0.3), np.zeros((3, 3)))
    order = convergence_order(pair, 0.5, pole(-1j))
    assert order.inconclusive and np.isnan(order.order)
    assert max(order.errors) == 0.0


def test_trace_identity(strict_pair):
    for f in battery("resolvent_powers", 2):
        lhs, rhs = doi_trace_identity(f, strict_pair.L, strict_pair.C)
        assert abs(lhs - rhs) <= 1e-6


# ---------- Lipschitz ----------
def test_relative_lipschitz_ratio_is_bounded(pair4):
    for f in BATTERY:
        ratio = relative_lipschitz_ratio(f, pair4)
        assert np.isfinite(ratio) and ratio >= 0


def test_trace_class_corollary_reports_both_sides(pair4):
    f = pole(-1j)
    lhs, rhs = trace_class_corollary(f, pair4, 1.0)
    delta = apply(f, pair4.M).entries - apply(f, pair4.L).entries
    assert_allclose(lhs, np.sum(la.svdvals(delta)))
    assert rhs > 0


def test_lipschitz_tracker_stability():
    tracker = LipschitzTracker()
    for value in (0.5, 0.9, 0.8, 0.92):
        tracker.update("res^1", value)
    tracker.update("b^1", 0.1)
    tracker.update("b^1", 0.5)
    report = tracker.report()
    assert list(report) == ["b^1", "res^1"]
    assert report["res^1"]["k_f"] == 0.92 and report["res^1"]["stable"]
    assert not report["b^1"]["stable"]
    assert tracker.k("missing") == 0.0
