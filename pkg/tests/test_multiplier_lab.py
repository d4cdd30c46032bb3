import numpy as np
import pytest
import scipy.linalg as la
from numpy.testing import assert_allclose

from static.models import MultiplierBracket
from function.doi import Kernel
from function.funcalc import battery, pole, constant
from function.multiplier_lab import (
    grid_kernel, probe_grid, multiplier_action_norm, schur_upper, schur_lower, schur_bracket,
    ProbeResult, rola_probe, reslip_probe, transplant_sample, resolvent_limit_constant,
)


def _bracket(upper: float, lower: float = 0.0, n: int = 4) -> MultiplierBracket:
    xs = np.arange(n, dtype=float)
    return MultiplierBracket("k", xs, xs, lower, upper, np.eye(n), np.eye(n), np.eye(n))


# ---------- 網格 ----------
def test_probe_grid_is_symmetric():
    xs = probe_grid(8)
    assert_allclose(xs, -xs[::-1], atol=1e-12)
    assert np.all(np.diff(xs) > 0)
    assert_allclose(probe_grid(4, scale=2.0), 2.0 * probe_grid(4))


def test_grid_kernel_shape():
    xs = probe_grid(5)
    M = grid_kernel(Kernel.dd(pole(-1j)), xs, xs[:3])
    assert M.shape == (5, 3)
    assert_allclose(M[1, 2], pole(-1j).divided_diff(xs[1], xs[2]))


# ---------- oracle 矩陣 ----------
def test_zero_matrix_has_zero_norm():
    upper, *_ = schur_upper(np.zeros((3, 3)))
    lower, _ = schur_lower(np.zeros((3, 3)))
    assert upper == 0.0 and lower == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_rank_one_bracket(seed, small_settings):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    psi = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    expected = np.max(np.abs(phi)) * np.max(np.abs(psi))
    bracket = schur_bracket(np.outer(phi, psi), small_settings)
    assert bracket.lower <= bracket.upper
    assert abs(bracket.upper - expected) <= 0.05 * expected
    assert abs(bracket.lower - expected) <= 0.05 * expected


@pytest.mark.parametrize("seed", range(3))
def test_psd_bracket(seed, small_settings):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    G = H @ H.conj().T
    expected = np.max(np.real(np.diag(G)))
    bracket = schur_bracket(G, small_settings)
    assert abs(bracket.upper - expected) <= 0.05 * expected
    assert abs(bracket.lower - expected) <= 0.05 * expected


@pytest.mark.parametrize("seed", range(4))
def test_certificates_of_generic_bracket(seed, small_settings):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    bracket = schur_bracket(M, small_settings, seed=seed)
    A, B, X = bracket.factor_A, bracket.factor_B, bracket.contraction
    assert bracket.lower <= bracket.upper
    assert la.norm(A @ B - M, 2) <= 1e-8 * np.max(np.abs(M))
    rows = np.max(np.linalg.norm(A, axis=1))
    cols = np.max(np.linalg.norm(B, axis=0))
    assert rows * cols <= bracket.upper + 1e-9
    assert la.norm(X, 2) <= 1 + 1e-9
    assert bracket.lower <= multiplier_action_norm(M, X) + 1e-9


def test_brackets_of_equivalent_matrices_overlap(small_settings):
    rng = np.random.default_rng(11)
    W = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    perm_r, perm_c = rng.permutation(5), rng.permutation(5)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, (2, 5)))
    moved = phases[0][:, None] * W[perm_r][:, perm_c] * phases[1][None, :]
    a, b = schur_bracket(W, small_settings), schur_bracket(moved, small_settings)
    assert a.lower <= b.upper + 1e-9 and b.lower <= a.upper + 1e-9


# ---------- 探測 ----------
def test_rola_probe_of_resolvent(small_settings):
    probe = rola_probe(pole(-1j), [8, 16, 32], small_settings)
    assert probe.kernel_form == "dd_flat"
    for bracket in probe.brackets:
        assert bracket.lower <= bracket.upper
        assert abs(bracket.upper - 1.0) <= 0.05
        assert abs(bracket.lower - 1.0) <= 0.05
    assert probe.trend == "bounded"


@pytest.mark.slow
def test_rola_probe_of_resolvent_on_fine_grid(small_settings):
    probe = rola_probe(pole(-1j), [64, 256], small_settings)
    for bracket in probe.brackets:
        assert bracket.lower <= bracket.upper
        assert 0.95 <= bracket.lower and bracket.upper <= 1.05


def test_reslip_probe_carries_transplant_samples(small_settings, strict_pair):
    f = battery("disk_polys", disk_degree=1)[0]
    probe = reslip_probe(f, [8, 16], small_settings, pairs=[strict_pair])
    assert probe.kernel_form == "res_dd"
    assert len(probe.brackets) == 2 and len(probe.transplant) == 1
    payload = probe.to_dict()
    assert payload["brackets"][0]["grid_size"] == 8
    assert payload["trend"] in ("bounded", "growing", "inconclusive")


def test_probe_trend_classification():
    assert ProbeResult("f", "dd_flat", [_bracket(1.0), _bracket(1.01)], 0j).trend == "bounded"
    assert ProbeResult("f", "dd_flat", [_bracket(1.0), _bracket(2.0)], 0j).trend == "growing"
    assert ProbeResult("f", "dd_flat", [_bracket(0.0), _bracket(2.0)], 0j).trend == "inconclusive"


@pytest.mark.parametrize("f", battery("resolvent_powers", 2) + battery("disk_polys", disk_degree=1),
                         ids=lambda f: f.function_id)
def test_transplant_identity(strict_pair, f):
    sample = transplant_sample(f, strict_pair)
    assert sample.numerator_gap <= 1e-9
    assert_allclose(sample.ratio_resolvent, 2 * sample.ratio_disk, rtol=1e-7)


def test_resolvent_limit_constant():
    assert resolvent_limit_constant(pole(-1j)) == 0
    assert resolvent_limit_constant(constant(2) + pole(-2j)) == 2
