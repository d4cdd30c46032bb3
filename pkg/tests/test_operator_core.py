import numpy as np
import pytest
import scipy.linalg as la
from numpy.testing import assert_allclose

from static.models import OperatorMatrix, DissipativePair
from static.util import (
    ArgumentError, DimensionError, NonInvertibleError, OutOfScopeError, SingularityError,
    NonDissipativeError, PathDegeneracyError,
)
from function.operator_core import (
    is_dissipative, random_dissipative, schatten_norm, cayley, inverse_cayley, relative_operator,
    domination_constants, transferred_constants, check_domination, path_relative, path_family,
    maximality_margin, make_pair, propagation_residual, lower_resolvent_margin,
    shifted_resolvent_norm, shifted_inverse,
)


# ---------- 基本量 ----------
def test_is_dissipative_examples():
    assert is_dissipative(np.diag([1j, 2j]))
    assert not is_dissipative([[-1j]])
    # Im 部分的特徵值是 ±1/2
    assert not is_dissipative([[0.0, 1.0], [0.0, 0.0]])
    H = random_dissipative(0, 3, 0.5).real_part
    assert is_dissipative(H, 0.0)


def test_random_dissipative_is_seeded():
    a = random_dissipative(7, 4, 0.1)
    b = random_dissipative(7, 4, 0.1)
    assert np.array_equal(a.entries, b.entries)
    assert la.eigvalsh(a.imag_part)[0] >= 0.1 - 1e-12


@pytest.mark.parametrize("dim, gap", [(0, 0.1), (2, 0.0), (2, -1.0)])
def test_random_dissipative_rejects_bad_arguments(dim, gap):
    with pytest.raises(ArgumentError):
        random_dissipative(0, dim, gap)


def test_schatten_norms_of_diagonal():
    X = np.diag([3.0, -4.0])
    assert_allclose(schatten_norm(X, 1), 7.0)
    assert_allclose(schatten_norm(X, 2), 5.0)
    assert_allclose(schatten_norm(X, np.inf), 4.0)
    with pytest.raises(ArgumentError):
        schatten_norm(X, 3)


def test_operator_matrix_requires_square():
    with pytest.raises(DimensionError):
        OperatorMatrix(np.zeros((2, 3)))


# ---------- Cayley ----------
def test_cayley_of_scalars():
    assert_allclose(cayley([[1j]]).entries, [[0.0]], atol=1e-15)
    assert_allclose(cayley(np.zeros((2, 2))).entries, -np.eye(2), atol=1e-15)
    assert_allclose(cayley([[2j]]).entries, [[1 / 3]], atol=1e-15)
    assert_allclose(inverse_cayley([[0.0]]).entries, [[1j]], atol=1e-15)
    assert_allclose(inverse_cayley([[-1.0]]).entries, [[0.0]], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("dim", [1, 3, 6])
def test_cayley_roundtrip_and_contraction(seed, dim):
    L = random_dissipative(seed, dim, 0.2)
    T = cayley(L)
    assert T.norm <= 1 + 1e-12
    assert_allclose(inverse_cayley(T).entries, L.entries, atol=1e-9)


def test_inverse_cayley_rejects_eigenvalue_one():
    with pytest.raises(NonInvertibleError):
        inverse_cayley(np.eye(2))


def test_shifted_inverse_detects_singularity():
    with pytest.raises(SingularityError):
        shifted_inverse(OperatorMatrix([[0.0]]), 0.0)


# ---------- 相對擾動與 domination ----------
def test_relative_operator_dimension_mismatch():
    with pytest.raises(DimensionError):
        relative_operator(np.eye(2) * 1j, np.zeros((3, 3)))


def test_domination_constant_of_zero_perturbation():
    L = random_dissipative(0, 3, 0.5)
    assert domination_constants(L, np.zeros((3, 3)), 0.4) == 0.0


def test_domination_constant_of_scalar_pair():
    # |v| ≤ c|v| + 0.5|iv| 需要 c ≥ 0.5
    c = domination_constants([[1j]], [[1.0]], 0.5)
    assert c >= 0.5
    assert check_domination([[1j]], [[1.0]], c, 0.5, n_vectors=10_000).passed


def test_domination_constant_when_perturbation_equals_base():
    L = random_dissipative(3, 4, 0.3)
    c = domination_constants(L, L, 0.9)
    result = check_domination(L, L, c, 0.9, seed=3, n_vectors=10_000)
    assert result.passed, result.max_violation


@pytest.mark.parametrize("d", [0.0, 1.0, 1.5])
def test_domination_constant_requires_d_in_unit_interval(d):
    with pytest.raises(ArgumentError):
        domination_constants(np.eye(2) * 1j, np.eye(2), d)


@pytest.mark.parametrize("seed", range(4))
def test_pair_constants_dominate(seed):
    L = random_dissipative(seed, 4, 0.3)
    K = random_dissipative(seed + 100, 4, 0.1)
    pair = make_pair(L, K, d=0.4)
    assert pair.C.norm <= pair.c + pair.d + 1e-12
    result = check_domination(pair.L, pair.K, pair.c, pair.d, seed=seed, n_vectors=2000)
    assert result.passed


def test_make_pair_rejects_non_dissipative_sum():
    L = np.diag([1j, 1j])
    with pytest.raises(NonDissipativeError):
        make_pair(L, np.diag([-2j, 0]))


def test_transferred_constants():
    assert transferred_constants(1.0, 0.5, 1.0) == (2.0, 1.0)
    assert transferred_constants(1.0, 0.5, 0.0) == (1.0, 0.5)
    with pytest.raises(ArgumentError):
        transferred_constants(1.0, 0.5, 1.5)


def test_domination_transfers_along_path(strict_pair):
    for t in (0.25, 0.5, 1.0):
        c_t, d_t = transferred_constants(strict_pair.c, strict_pair.d, t)
        result = check_domination(strict_pair.L_t(t), strict_pair.K, c_t, d_t, seed=1, n_vectors=2000)
        assert result.max_violation <= 1e-9


def test_path_relative_matches_direct_inverse(strict_pair):
    assert_allclose(path_relative(strict_pair, 0.0).entries, strict_pair.C.entries, atol=1e-14)
    direct = strict_pair.K.entries @ la.inv(strict_pair.L_t(0.7).entries + 1j * np.eye(2))
    assert_allclose(path_relative(strict_pair, 0.7).entries, direct, atol=1e-10)


def test_path_relative_detects_degenerate_path():
    # C = −1 讓 I + C 奇異；make_pair 不會給出這種 M，直接組
    L, K = OperatorMatrix([[1j]]), OperatorMatrix([[-2j]])
    pair = DissipativePair(L=L, K=K, M=L + K, C=OperatorMatrix([[-1.0]]), c=1.0, d=0.5)
    assert_allclose(path_relative(pair, 0.5).entries, [[-2.0]], atol=1e-15)
    with pytest.raises(PathDegeneracyError):
        path_relative(pair, 1.0)


def test_path_family_checks_every_node(strict_pair):
    family = path_family(strict_pair, [0.0, 0.5, 1.0])
    assert len(family.operators()) == 3
    with pytest.raises(ArgumentError):
        path_family(strict_pair, [0.5, 0.2])


# ---------- maximality ----------
def test_maximality_margin_values():
    assert_allclose(maximality_margin(1.0, 0.25), 2.0)
    assert maximality_margin(0.0, 0.3) == 1.0
    assert maximality_margin(2.0, 0.0) == 1.0


def test_maximality_margin_scope():
    with pytest.raises(OutOfScopeError):
        maximality_margin(1.0, 0.5)
    with pytest.raises(ArgumentError):
        maximality_margin(1.0, -0.1)


def test_maximality_norm_below_one(pair4):
    kappa = maximality_margin(pair4.c, pair4.d)
    norm = la.norm(pair4.K.entries @ la.inv(pair4.L.shifted(1j * kappa).entries), 2)
    assert norm < 1.0


# ---------- 其他 ----------
def test_propagation_identity(pair4):
    residual, trace_norm = propagation_residual(pair4)
    assert residual <= 1e-10 * max(1.0, pair4.C.norm)
    assert trace_norm > 0


def test_elementary_resolvent_inequalities(rng):
    L = random_dissipative(3, 5, 0.0 + 1e-3)
    V = rng.standard_normal((5, 500)) + 1j * rng.standard_normal((5, 500))
    assert lower_resolvent_margin(L, V) >= -1e-9
    for kappa in (0.5, 1.0, 4.0):
        assert kappa * shifted_resolvent_norm(L, kappa) <= 1 + 1e-10
    with pytest.raises(ArgumentError):
        shifted_resolvent_norm(L, 0.0)
