import numpy as np
import pytest
import scipy.linalg as la
from numpy.testing import assert_allclose

from static.util import (
    SingularPartError, QuadratureError, ContractionError, ArgumentError,
)
from function.operator_core import cayley, random_dissipative
from function.funcalc import pole, blaschke, apply
from function.semispectral import (
    density_stack, poisson_density, build_grid, grid_for, interval_grid, integrate, semi_spectral,
    integrate_functional, defect_operators, finite_dilation, unitarity_residual, dilation_exactness,
    polynomial_compression_residual, resolvent_tail_bound, resolvent_dilation_check, cross_validate,
)

DEPTHS = (1, 4, 16)


def _contraction(seed: int, dim: int, norm: float = 0.95) -> np.ndarray:
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return norm * G / la.norm(G, 2)


# ---------- 網格與積分 ----------
def test_grid_covers_whole_line():
    grid = build_grid([0.0, 2.0], [0.1, 1.0])
    assert grid.breakpoints[0] == -np.pi / 2 and grid.breakpoints[-1] == np.pi / 2
    assert list(grid.breakpoints) == sorted(grid.breakpoints)
    assert grid.panels[0][0] == -np.inf and grid.panels[-1][1] == np.inf
    assert grid.refined().size == 2 * grid.size


def test_integrate_lorentzian_exactly():
    value, _ = integrate(lambda x: 1.0 / (1.0 + x * x), build_grid())
    assert_allclose(value, np.pi, rtol=1e-12)


def test_integrate_reports_nonconvergence():
    def noise(x):
        return np.random.default_rng(len(x)).standard_normal(len(x))

    with pytest.raises(QuadratureError) as excinfo:
        integrate(noise, build_grid(tol=1e-10))
    assert excinfo.value.diagnostics["history"]


def test_interval_grid_requires_order():
    with pytest.raises(ArgumentError):
        interval_grid(1.0, 0.0)


# ---------- 密度 ----------
def test_poisson_density_of_scalar():
    assert_allclose(poisson_density([[1j]], 0.0), [[1 / np.pi]])
    assert_allclose(density_stack([[1j]], [0.0, 1.0])[:, 0, 0], [1 / np.pi, 1 / (2 * np.pi)])


def test_density_needs_spectral_gap():
    with pytest.raises(SingularPartError):
        poisson_density([[1.0]], 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_density_is_positive_with_unit_mass(seed):
    L = random_dissipative(seed, 3, 0.2)
    mass_residual, psd_min = semi_spectral(L).check()
    assert mass_residual <= 1e-7
    assert psd_min >= -1e-10


@pytest.mark.parametrize("f", [pole(-1j), pole(1 - 2j), blaschke()], ids=lambda f: f.function_id)
def test_integrated_functional_matches_calculus(f):
    L = random_dissipative(4, 2, 0.3)
    value = integrate_functional(f, L, grid_for(L))
    assert_allclose(value.entries, apply(f, L).entries, atol=1e-7)


# ---------- 有限伸張 ----------
def test_defect_operators_intertwine():
    T = _contraction(0, 4)
    D_T, D_T_star = defect_operators(T)
    assert_allclose(T.conj().T @ D_T_star, D_T @ T.conj().T, atol=1e-12)
    assert_allclose(D_T @ D_T, np.eye(4) - T.conj().T @ T, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("N", DEPTHS)
def test_dilation_is_unitary_and_exact(seed, N):
    dilation = finite_dilation(_contraction(seed, 3), N)
    assert dilation.U.dim == 3 * (N + 2)
    assert unitarity_residual(dilation) <= 1e-10
    assert dilation_exactness(dilation) <= 1e-10


def test_dilation_of_cayley_transform():
    T = cayley(random_dissipative(1, 3, 0.1))
    dilation = finite_dilation(T, 4)
    assert unitarity_residual(dilation) <= 1e-10
    coeffs = [1.0, -0.5j, 0.25, 2.0]
    assert polynomial_compression_residual(dilation, coeffs) <= 1e-10


def test_dilation_rejects_bad_input():
    with pytest.raises(ContractionError):
        finite_dilation(2 * np.eye(2), 3)
    with pytest.raises(ArgumentError):
        finite_dilation(0.5 * np.eye(2), 0)
    dilation = finite_dilation(0.5 * np.eye(2), 1)
    with pytest.raises(ArgumentError):
        polynomial_compression_residual(dilation, [1.0, 1.0, 1.0, 1.0])


# ---------- resolvent 伸張 ----------
def test_tail_bound_shrinks_with_depth():
    bounds = [resolvent_tail_bound(1 - 1j, N) for N in DEPTHS]
    assert bounds[0] > bounds[1] > bounds[2] > 0
    assert resolvent_tail_bound(-1j, 3) == 0.0


def test_tail_bound_starts_after_exact_powers():
    # N+2 個區塊：n ≤ N+1 的冪次都精確，尾巴從 |q|^{N+1} 開始
    lam = 1 - 1j
    a, q = 1j - lam, (lam + 1j) / (lam - 1j)
    expected = 2 * abs(1 - q) * abs(q) ** 5 / (abs(a) * (1 - abs(q)))
    assert resolvent_tail_bound(lam, 4) == pytest.approx(expected, rel=1e-12)
    assert resolvent_tail_bound(lam, 5) == pytest.approx(abs(q) * resolvent_tail_bound(lam, 4), rel=1e-12)


@pytest.mark.parametrize("lam", [-1j, -2j, 1 - 1j])
def test_resolvent_dilation_within_tail_bound(lam):
    L = random_dissipative(2, 3, 0.2)
    for N in DEPTHS:
        result = resolvent_dilation_check(L, N, lam)
        assert result.residual <= result.bound + 1e-10


def test_resolvent_dilation_is_exact_at_minus_i():
    result = resolvent_dilation_check(random_dissipative(3, 2, 0.2), 1, -1j)
    assert result.residual <= 1e-10


def test_resolvent_dilation_needs_lower_half_plane():
    with pytest.raises(ArgumentError):
        resolvent_dilation_check(random_dissipative(0, 2, 0.2), 2, 1j)


def test_cross_validation_of_scalar_matches_poisson_mass():
    # (−1, 1) 在 i 的 Poisson 質量是 1/2
    result = cross_validate(np.array([[1j]]), 64, [(-1.0, 1.0)])
    assert result.deviation <= 1e-3


def test_cross_validation_within_bound():
    L = np.array([[0.3 + 1j]])
    result = cross_validate(L, 8, [(-1.0, 1.0), (0.0, 2.0), (-np.inf, np.inf)])
    assert len(result.per_interval) == 3
    assert result.deviation <= result.bound
