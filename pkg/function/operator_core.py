from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from static.models import OperatorMatrix, DissipativePair, PathFamily
from static.util import (
    ArgumentError, DimensionError, SingularityError, NonInvertibleError,
    NonDissipativeError, PathDegeneracyError, OutOfScopeError, InvariantViolation,
)
from static.logger import logging

logger = logging.getLogger(__file__)

SINGULAR_TOL = 1e-12
CAYLEY_EIG_TOL = 1e-10
DOMINATION_ACCEPT = 1e-9


# ─────────────────────────────────────────────────────────────
# 基本量
# ─────────────────────────────────────────────────────────────
def _dissipativity_tol(X: OperatorMatrix, tol: float | None) -> float:
    return 1e-12 * X.norm if tol is None else tol


def is_dissipative(X, tol: float | None = None) -> bool:
    """λ_min(Im X) ≥ −tol；tol 預設 1e-12·‖X‖"""
    X = OperatorMatrix.of(X)
    lam_min = la.eigvalsh(X.imag_part)[0]
    return bool(lam_min >= -_dissipativity_tol(X, tol))


def require_dissipative(X: OperatorMatrix, name: str, tol: float | None = None):
    if not is_dissipative(X, tol):
        lam_min = la.eigvalsh(X.imag_part)[0]
        raise NonDissipativeError(f"{name} 不是 dissipative：λ_min(Im {name}) = {lam_min:.3e}")


def random_dissipative(seed: int, dim: int, gap: float) -> OperatorMatrix:
    """A + iP，A 隨機 Hermitian，P ⪰ gap·I"""
    if dim < 1:
        raise ArgumentError(f"dim 必須 >= 1，收到 {dim}")
    if not gap > 0:
        raise ArgumentError(f"gap 必須為正，收到 {gap}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    H = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    A = (G + G.conj().T) / (2 * np.sqrt(dim))
    P = H @ H.conj().T / (2 * dim) + gap * np.eye(dim)
    return OperatorMatrix(A + 1j * P)


def random_hermitian(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * (G + G.conj().T) / (2 * np.sqrt(dim))


def random_psd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    H = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * H @ H.conj().T / (2 * dim)


def schatten_norm(X, p) -> float:
    """p ∈ {1, 2, inf}：trace norm / Frobenius / operator norm"""
    s = la.svdvals(np.asarray(OperatorMatrix.of(X).entries))
    if p == 1:
        return float(np.sum(s))
    if p == 2:
        return float(np.sqrt(np.sum(s * s)))
    if p in (np.inf, "inf", float("inf")):
        return float(s[0])
    raise ArgumentError(f"不支援的 Schatten 指數 p={p}")


def _check_same_dim(*ops: OperatorMatrix):
    dims = {op.dim for op in ops}
    if len(dims) != 1:
        raise DimensionError(f"維度不一致：{sorted(dims)}")


def shifted_inverse(X: OperatorMatrix, shift: complex) -> np.ndarray:
    """(X + shift·I)^{-1}；數值奇異時丟 SingularityError"""
    Y = X.entries + shift * np.eye(X.dim)
    s_min = la.svdvals(Y)[-1]
    if s_min <= SINGULAR_TOL * max(1.0, X.norm):
        raise SingularityError(f"X + ({shift})I 數值奇異，σ_min = {s_min:.3e}")
    return la.solve(Y, np.eye(X.dim, dtype=complex))


def resolvent_i(L: OperatorMatrix) -> np.ndarray:
    """(L + iI)^{-1}"""
    return shifted_inverse(L, 1j)


# ─────────────────────────────────────────────────────────────
# Cayley transform
# ─────────────────────────────────────────────────────────────
def cayley(L) -> OperatorMatrix:
    """T = (L − iI)(L + iI)^{-1} = I − 2i(L + iI)^{-1}"""
    L = OperatorMatrix.of(L)
    R = resolvent_i(L)
    return OperatorMatrix(np.eye(L.dim) - 2j * R)


def inverse_cayley(T) -> OperatorMatrix:
    """L = i(I + T)(I − T)^{-1}；1 ∈ σ(T) 時丟 NonInvertibleError"""
    T = OperatorMatrix.of(T)
    I = np.eye(T.dim)
    dist = float(np.min(np.abs(la.eigvals(T.entries) - 1.0)))
    if dist <= CAYLEY_EIG_TOL:
        raise NonInvertibleError(f"1 是 T 的特徵值（距離 {dist:.3e}）")
    # (I+T)(I−T)^{-1} = (I−T)^{-1}(I+T)，兩者可交換
    X = la.solve((I - T.entries).T, (I + T.entries).T).T
    return OperatorMatrix(1j * X)


# ─────────────────────────────────────────────────────────────
# 相對擾動
# ─────────────────────────────────────────────────────────────
def relative_operator(L, K) -> OperatorMatrix:
    """C = K(L + iI)^{-1}"""
    L, K = OperatorMatrix.of(L), OperatorMatrix.of(K)
    _check_same_dim(L, K)
    return OperatorMatrix(K.entries @ resolvent_i(L))


def domination_constants(L, K, d: float) -> float:
    """
    回傳 c 使得 ‖Kv‖ ≤ c‖v‖ + d‖Lv‖。
    把 C = K(L+iI)^{-1} 用 SVD 拆成有限秩 T 與 ‖R‖ < d/2 的小量 R，
    K = T(L+iI) + R(L+iI) ⇒ c = ‖T(L+iI)‖ + ‖R‖。
    """
    if not 0 < d < 1:
        raise ArgumentError(f"d 必須在 (0,1)，收到 {d}")
    L, K = OperatorMatrix.of(L), OperatorMatrix.of(K)
    C = relative_operator(L, K).entries
    U, s, Vh = la.svd(C)
    rank = int(np.sum(s >= d / 2))
    T = (U[:, :rank] * s[:rank]) @ Vh[:rank]
    # ‖R‖ = ‖C − T‖ 是第一個被截掉的奇異值
    c = la.norm(T @ L.shifted(1j).entries, 2) + (s[rank] if rank < len(s) else 0.0)
    logger.debug("domination_constants rank=%d c=%.6g", rank, c)
    return float(c)


def transferred_constants(c: float, d: float, t: float) -> tuple[float, float]:
    """L + tK 的 domination 常數 (c/(1−dt), d/(1−dt))"""
    if not 0 <= t <= 1:
        raise ArgumentError(f"t 必須在 [0,1]，收到 {t}")
    if d * t >= 1:
        raise OutOfScopeError(f"d·t = {d * t} >= 1")
    return c / (1 - d * t), d / (1 - d * t)


@dataclass(frozen=True)
class DominationCheck:
    max_violation: float
    n_vectors: int
    n_starts: int

    @property
    def passed(self) -> bool:
        return self.max_violation <= DOMINATION_ACCEPT


def check_domination(L, K, c: float, d: float, seed: int = 0,
                     n_vectors: int = 10_000, n_starts: int = 16, iters: int = 200) -> DominationCheck:
    """
    以抽樣單位向量 + projected gradient ascent 找 ‖Kv‖ − c‖v‖ − d‖Lv‖ 的最大值。
    只能否證，不能證明。
    """
    L, K = OperatorMatrix.of(L), OperatorMatrix.of(K)
    _check_same_dim(L, K)
    rng = np.random.default_rng(seed)
    n = L.dim
    Le, Ke = L.entries, K.entries

    def violation(V):
        return np.linalg.norm(Ke @ V, axis=0) - c - d * np.linalg.norm(Le @ V, axis=0)

    V = rng.standard_normal((n, n_vectors)) + 1j * rng.standard_normal((n, n_vectors))
    V /= np.linalg.norm(V, axis=0)
    worst = float(np.max(violation(V)))

    KK, LL = Ke.conj().T @ Ke, Le.conj().T @ Le
    step = 1.0 / (la.norm(KK, 2) + d * la.norm(LL, 2) + 1.0)
    for start in range(n_starts):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= la.norm(v)
        for _ in range(iters):
            kv, lv = la.norm(Ke @ v), la.norm(Le @ v)
            worst = max(worst, float(kv - c - d * lv))
            grad = np.zeros(n, dtype=complex)
            if kv > 0:
                grad += KK @ v / kv
            if lv > 0:
                grad -= d * (LL @ v) / lv
            v_next = v + step * grad
            v_next /= la.norm(v_next)
            if la.norm(v_next - v) < 1e-14:
                break
            v = v_next
        worst = max(worst, float(violation(v[:, None])[0]))
    return DominationCheck(max_violation=worst, n_vectors=n_vectors, n_starts=n_starts)


def path_relative(pair: DissipativePair, t: float) -> OperatorMatrix:
    """K(L_t + iI)^{-1} = C(I + tC)^{-1}"""
    if not 0 <= t <= 1:
        raise ArgumentError(f"t 必須在 [0,1]，收到 {t}")
    C = pair.C.entries
    Y = np.eye(pair.dim) + t * C
    s_min = la.svdvals(Y)[-1]
    if s_min <= SINGULAR_TOL:
        raise PathDegeneracyError(f"I + tC 在 t={t} 奇異，σ_min = {s_min:.3e}")
    # C(I+tC)^{-1}：解 X(I+tC) = C
    return OperatorMatrix(la.solve(Y.T, C.T).T)


def path_family(pair: DissipativePair, t_grid, tol: float | None = None) -> PathFamily:
    family = PathFamily(pair, tuple(t_grid))
    for t, L_t in zip(family.t_grid, family.operators()):
        require_dissipative(L_t, f"L_{t:g}", tol)
    return family


def maximality_margin(c: float, d: float) -> float:
    """κ = 2·(2cd/(1−2d))，滿足 (2 + c/κ)·d < 1；c·d = 0 時回傳 1"""
    if d < 0 or c < 0:
        raise ArgumentError(f"c, d 不可為負：c={c}, d={d}")
    if d >= 0.5:
        raise OutOfScopeError(f"d = {d} >= 1/2，超出 maximality 引理的適用範圍")
    if c * d == 0:
        return 1.0
    return 4 * c * d / (1 - 2 * d)


# ─────────────────────────────────────────────────────────────
# 建立與驗證擾動對
# ─────────────────────────────────────────────────────────────
def make_pair(L, K, d: float = 0.4, tol: float | None = None, kind: str = "custom",
              seed: int | None = None) -> DissipativePair:
    L, K = OperatorMatrix.of(L), OperatorMatrix.of(K)
    _check_same_dim(L, K)
    M = L + K
    require_dissipative(L, "L", tol)
    require_dissipative(M, "M", tol)
    C = relative_operator(L, K)
    c = domination_constants(L, K, d)
    if C.norm > c + d + 1e-12 * max(1.0, c):
        raise InvariantViolation(f"‖C‖ = {C.norm:.6g} > c + d = {c + d:.6g}")
    return DissipativePair(L=L, K=K, M=M, C=C, c=c, d=d, kind=kind, seed=seed)


def propagation_residual(pair: DissipativePair) -> tuple[float, float]:
    """
    K(M+iI)^{-1} − K(L+iI)^{-1} = −K(M+iI)^{-1}K(L+iI)^{-1}
    回傳 (identity 殘差, ‖K(M+iI)^{-1}‖_S1)
    """
    C_M = pair.K.entries @ resolvent_i(pair.M)
    C = pair.C.entries
    residual = float(la.norm(C_M - C + C_M @ C, 2))
    return residual, schatten_norm(C_M, 1)


def lower_resolvent_margin(L, vectors: np.ndarray) -> float:
    """min_v ‖(L+iI)v‖² − ‖Lv‖² − ‖v‖²（dissipative 時 = 2 Im(Lv,v) ≥ 0）"""
    L = OperatorMatrix.of(L)
    V = np.asarray(vectors, dtype=complex).reshape(L.dim, -1)
    LV = L.entries @ V
    lhs = np.linalg.norm(LV + 1j * V, axis=0) ** 2
    rhs = np.linalg.norm(LV, axis=0) ** 2 + np.linalg.norm(V, axis=0) ** 2
    return float(np.min(lhs - rhs))


def shifted_resolvent_norm(L, kappa: float) -> float:
    """‖(L + iκI)^{-1}‖，dissipative 時 ≤ 1/κ"""
    if not kappa > 0:
        raise ArgumentError(f"κ 必須為正，收到 {kappa}")
    return float(la.norm(shifted_inverse(OperatorMatrix.of(L), 1j * kappa), 2))
