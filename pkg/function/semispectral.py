from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from static.models import OperatorMatrix, QuadratureGrid, FiniteDilation
from static.util import (
    SingularPartError, QuadratureError, ContractionError, DilationDegeneracyError,
    EndpointCollisionError, ArgumentError, InvariantViolation,
)
from static.logger import logging
from function.operator_core import cayley
from function.funcalc import AnalyticFunction, omega

logger = logging.getLogger(__file__)

EPS_SPEC = 1e-3
DEFAULT_TOL = 1e-8
UNIFORM_PANELS = 24
NODES_PER_PANEL = 16
MAX_DOUBLINGS = 5
REFINE_OFFSETS = (-8.0, -3.0, -1.0, -0.3, 0.0, 0.3, 1.0, 3.0, 8.0)
CHUNK = 2048
DEFLATION_TOL = 1e-10
COLLISION_TOL = 1e-8


# ─────────────────────────────────────────────────────────────
# 密度
# ─────────────────────────────────────────────────────────────
def require_strict(L: OperatorMatrix, eps: float = EPS_SPEC):
    gap = float(np.min(L.spectral.eigenvalues.imag))
    if gap < eps:
        raise SingularPartError(f"特徵值距實軸 {gap:.3e} < ε_spec = {eps:.1e}，密度表示不成立")


def density_stack(L, xs) -> np.ndarray:
    """ρ_L(x) = (1/π) R* Im L R，R = (L − x)^{-1}；回傳 shape (len(xs), n, n)"""
    L = OperatorMatrix.of(L)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    n = L.dim
    im_part = L.imag_part
    out = np.empty((len(xs), n, n), dtype=complex)
    eye = np.eye(n)
    for start in range(0, len(xs), CHUNK):
        x = xs[start:start + CHUNK]
        R = np.linalg.inv(L.entries[None, :, :] - x[:, None, None] * eye[None, :, :])
        out[start:start + CHUNK] = np.conj(np.swapaxes(R, 1, 2)) @ im_part @ R / np.pi
    return out


def poisson_density(L, x: float, eps: float = EPS_SPEC) -> np.ndarray:
    L = OperatorMatrix.of(L)
    require_strict(L, eps)
    rho = density_stack(L, [x])[0]
    return (rho + rho.conj().T) / 2


# ─────────────────────────────────────────────────────────────
# 網格
# ─────────────────────────────────────────────────────────────
def build_grid(centers=(), widths=(), tol: float = DEFAULT_TOL, lo: float = -np.pi / 2,
               hi: float = np.pi / 2, n_uniform: int = UNIFORM_PANELS,
               nodes_per_panel: int = NODES_PER_PANEL) -> QuadratureGrid:
    """θ ∈ [lo, hi] 的均勻面板，再在每個 center 附近依寬度加上斷點"""
    theta = list(np.linspace(lo, hi, n_uniform + 1))
    for c, w in zip(centers, widths):
        w = max(float(w), EPS_SPEC)
        theta.extend(np.arctan(c + k * w) for k in REFINE_OFFSETS)
    theta = np.unique(np.clip(np.asarray(theta, dtype=float), lo, hi))
    keep = np.concatenate([[True], np.diff(theta) > 1e-12])
    theta = theta[keep]
    return QuadratureGrid(tuple(float(t) for t in theta), nodes_per_panel, tol, tuple(float(c) for c in centers))


def _spectral_marks(operators) -> tuple[list[float], list[float]]:
    centers, widths = [], []
    for op in operators:
        lam = OperatorMatrix.of(op).spectral.eigenvalues
        centers.extend(lam.real.tolist())
        widths.extend(np.maximum(lam.imag, EPS_SPEC).tolist())
    return centers, widths


def grid_for(*operators, tol: float = DEFAULT_TOL, nodes_per_panel: int = NODES_PER_PANEL) -> QuadratureGrid:
    centers, widths = _spectral_marks(operators)
    return build_grid(centers, widths, tol, nodes_per_panel=nodes_per_panel)


def interval_grid(a: float, b: float, *operators, tol: float = DEFAULT_TOL,
                  nodes_per_panel: int = NODES_PER_PANEL) -> QuadratureGrid:
    """只覆蓋 (a, b) 的網格；a, b 可以是 ±inf"""
    if not a < b:
        raise ArgumentError(f"需要 a < b，收到 ({a}, {b})")
    centers, widths = _spectral_marks(operators)
    return build_grid(centers, widths, tol, lo=float(np.arctan(a)), hi=float(np.arctan(b)),
                      nodes_per_panel=nodes_per_panel)


def integrate(integrand, grid: QuadratureGrid, max_doublings: int = MAX_DOUBLINGS):
    """
    ∫ integrand(x) dx；integrand 接受節點陣列，回傳第一軸對應節點的陣列。
    節點數加倍直到前後兩次的最大絕對差 ≤ grid.tol。
    回傳 (值, 收斂時使用的網格)
    """
    def total(g: QuadratureGrid):
        x, w = g.rule
        values = np.asarray(integrand(x))
        return np.tensordot(w, values, axes=(0, 0))

    current = total(grid)
    history = []
    for _ in range(max_doublings):
        finer = grid.refined()
        refined = total(finer)
        diff = float(np.max(np.abs(refined - current))) if np.size(refined) else 0.0
        history.append((finer.nodes_per_panel, diff))
        if diff <= grid.tol:
            return refined, finer
        grid, current = finer, refined
    raise QuadratureError(
        f"數值積分在 {max_doublings} 次加倍後仍未收斂（最後差值 {history[-1][1]:.3e} > {grid.tol:.1e}）",
        diagnostics={"history": history, "panels": len(grid.breakpoints) - 1},
    )


@dataclass(frozen=True)
class SemiSpectralDensity:
    L: OperatorMatrix
    grid: QuadratureGrid

    def density(self, x):
        return density_stack(self.L, x)

    def mass(self) -> np.ndarray:
        value, _ = integrate(self.density, self.grid)
        return value

    def check(self) -> tuple[float, float]:
        """回傳 (‖∫ρ − I‖, 節點上最小特徵值)"""
        x, _ = self.grid.rule
        rho = self.density(x)
        herm = (rho + np.conj(np.swapaxes(rho, 1, 2))) / 2
        psd_min = float(np.min(np.linalg.eigvalsh(herm)))
        mass_residual = float(la.norm(self.mass() - np.eye(self.L.dim), 2))
        return mass_residual, psd_min


def semi_spectral(L, tol: float = DEFAULT_TOL, eps: float = EPS_SPEC) -> SemiSpectralDensity:
    L = OperatorMatrix.of(L)
    require_strict(L, eps)
    grid = grid_for(L, tol=tol)
    _, grid = integrate(lambda x: density_stack(L, x), grid)
    return SemiSpectralDensity(L, grid)


def integrate_functional(f: AnalyticFunction, L, grid: QuadratureGrid | None = None,
                         tol: float = DEFAULT_TOL) -> OperatorMatrix:
    """∫ f(x) ρ_L(x) dx"""
    L = OperatorMatrix.of(L)
    require_strict(L)
    grid = grid_for(L, tol=tol) if grid is None else grid

    def integrand(x):
        return f.value(x.astype(complex))[:, None, None] * density_stack(L, x)

    value, _ = integrate(integrand, grid)
    return OperatorMatrix(value)


# ─────────────────────────────────────────────────────────────
# 有限伸張
# ─────────────────────────────────────────────────────────────
def defect_operators(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    D_T = (I − T*T)^{1/2}, D_{T*} = (I − TT*)^{1/2}，由同一組 SVD 得到，
    因此 T* D_{T*} = D_T T* 在捨入誤差內成立
    """
    P, s, Wh = la.svd(T)
    d = np.sqrt(np.clip(1.0 - s * s, 0.0, None))
    D_T = (Wh.conj().T * d) @ Wh
    D_T_star = (P * d) @ P.conj().T
    return D_T, D_T_star


def finite_dilation(T, N: int) -> FiniteDilation:
    """
    N+2 個區塊的 Egerváry 伸張：
      第 0 列 [T, 0, …, 0, D_{T*}]
      第 1 列 [D_T, 0, …, 0, −T*]
      其餘列把區塊往下平移
    對 n ≤ N+1 有 P Uⁿ|H = Tⁿ
    """
    T = OperatorMatrix.of(T)
    if N < 1:
        raise ArgumentError(f"N 必須 >= 1，收到 {N}")
    if T.norm > 1 + 1e-10:
        raise ContractionError(f"‖T‖ = {T.norm:.12g} > 1")
    n, m = T.dim, N + 2
    D_T, D_T_star = defect_operators(T.entries)
    U = np.zeros((m * n, m * n), dtype=complex)

    def block(i, j, value):
        U[i * n:(i + 1) * n, j * n:(j + 1) * n] = value

    block(0, 0, T.entries)
    block(0, m - 1, D_T_star)
    block(1, 0, D_T)
    block(1, m - 1, -T.entries.conj().T)
    for i in range(2, m):
        block(i, i - 1, np.eye(n))
    return FiniteDilation(T=T, N=N, U=OperatorMatrix(U))


def unitarity_residual(dilation: FiniteDilation) -> float:
    U = dilation.U.entries
    return float(la.norm(U.conj().T @ U - np.eye(U.shape[0]), 2))


def dilation_exactness(dilation: FiniteDilation) -> float:
    """max_{n ≤ N} ‖Tⁿ − P Uⁿ|H‖"""
    n = dilation.T.dim
    U = dilation.U.entries
    T = dilation.T.entries
    Y = np.zeros((U.shape[0], n), dtype=complex)
    Y[:n] = np.eye(n)
    T_pow = np.eye(n, dtype=complex)
    worst = 0.0
    for _ in range(dilation.N):
        Y = U @ Y
        T_pow = T @ T_pow
        worst = max(worst, float(la.norm(T_pow - Y[:n], 2)))
    return worst


def polynomial_compression_residual(dilation: FiniteDilation, coeffs) -> float:
    """‖P p(U)|H − p(T)‖，deg p ≤ N 時為捨入誤差"""
    coeffs = [complex(a) for a in coeffs]
    if len(coeffs) - 1 > dilation.N + 1:
        raise ArgumentError(f"多項式次數 {len(coeffs) - 1} 超過伸張深度 {dilation.N}")
    n = dilation.T.dim
    U, T = dilation.U.entries, dilation.T.entries
    E = np.zeros((U.shape[0], n), dtype=complex)
    E[:n] = np.eye(n)
    pU = np.zeros_like(E)
    pT = np.zeros((n, n), dtype=complex)
    for a in reversed(coeffs):
        pU = U @ pU + a * E
        pT = T @ pT + a * np.eye(n)
    return float(la.norm(pU[:n] - pT, 2))


@dataclass(frozen=True)
class UnitarySpectrum:
    """U = Z diag(e) Z*，扣掉 1 附近被 deflate 的特徵向量"""
    points: np.ndarray      # A = ω(U) 的實特徵值
    vectors_H: np.ndarray   # Z 在 H 上的列（dim × k）
    deflated: int


def unitary_spectrum(dilation: FiniteDilation) -> UnitarySpectrum:
    S, Z = la.schur(dilation.U.entries, output="complex")
    e = np.diag(S)
    dist = np.abs(e - 1.0)
    deflate = dist <= DEFLATION_TOL
    ambiguous = (dist > DEFLATION_TOL) & (dist <= 1e-8)
    if np.any(ambiguous):
        raise DilationDegeneracyError(f"U 有特徵值距 1 為 {dist[ambiguous].min():.3e}，無法可靠地 deflate")
    keep = ~deflate
    points = omega(e[keep]).real
    n = dilation.T.dim
    if np.any(deflate):
        logger.debug("deflate %d 個接近 1 的特徵值", int(np.sum(deflate)))
    return UnitarySpectrum(points=points, vectors_H=Z[:n, keep], deflated=int(np.sum(deflate)))


@dataclass(frozen=True)
class ResolventDilationCheck:
    residual: float
    bound: float
    N: int
    deflated: int


def resolvent_tail_bound(lam: complex, N: int) -> float:
    """
    g(ζ) = (ω(ζ) − λ)^{-1} = (1 − ζ)/(a(1 − qζ))，a = i − λ，q = (λ+i)/(λ−i)
    c_0 = 1/a，c_n = (qⁿ − qⁿ⁻¹)/a；N+2 個區塊下 P Uⁿ|H = Tⁿ 對 n ≤ N+1 成立，
    尾巴從 n = N+2 起算：≤ 2|1−q||q|^{N+1} / (|a|(1−|q|))
    """
    a = 1j - lam
    q = (lam + 1j) / (lam - 1j)
    return float(2 * abs(1 - q) * abs(q) ** (N + 1) / (abs(a) * (1 - abs(q))))


def resolvent_dilation_check(L, N: int, lam: complex) -> ResolventDilationCheck:
    """‖(L−λI)^{-1} − P(A−λI)^{-1}|H‖ 與其尾巴上界，A = ω(U)"""
    L = OperatorMatrix.of(L)
    lam = complex(lam)
    if not lam.imag < 0:
        raise ArgumentError(f"需要 Im λ < 0，收到 {lam}")
    dilation = finite_dilation(cayley(L), N)
    spectrum = unitary_spectrum(dilation)
    Z = spectrum.vectors_H
    compressed = (Z * (1.0 / (spectrum.points - lam))[None, :]) @ Z.conj().T
    direct = la.solve(L.entries - lam * np.eye(L.dim), np.eye(L.dim, dtype=complex))
    residual = float(la.norm(direct - compressed, 2))
    bound = resolvent_tail_bound(lam, N)
    if residual > bound + 1e-10:
        raise InvariantViolation(f"resolvent 伸張殘差 {residual:.3e} 超過上界 {bound:.3e}（N={N}, λ={lam}）")
    return ResolventDilationCheck(residual=residual, bound=bound, N=N, deflated=spectrum.deflated)


@dataclass(frozen=True)
class CrossValidation:
    deviation: float
    bound: float
    per_interval: tuple[float, ...]


def cross_validate(L, N: int, intervals, tol: float = DEFAULT_TOL) -> CrossValidation:
    """
    max_Δ ‖∫_Δ ρ_L − P E_A(Δ)|H‖；上界 D_max/(N+1) + 10·tol，
    D_max = ‖I − T*T‖/(1 − ‖T‖)²
    """
    L = OperatorMatrix.of(L)
    require_strict(L)
    T = cayley(L)
    dilation = finite_dilation(T, N)
    spectrum = unitary_spectrum(dilation)
    per_interval = []
    for a, b in intervals:
        for end in (a, b):
            if np.isfinite(end) and np.any(np.abs(spectrum.points - end) <= COLLISION_TOL):
                raise EndpointCollisionError(f"區間端點 {end} 與 A 的特徵值重疊，請移動端點")
        inside = (spectrum.points > a) & (spectrum.points < b)
        Z = spectrum.vectors_H[:, inside]
        projected = Z @ Z.conj().T
        measured, _ = integrate(lambda x: density_stack(L, x), interval_grid(a, b, L, tol=tol))
        per_interval.append(float(la.norm(measured - projected, 2)))
    t_norm = T.norm
    defect = float(la.norm(np.eye(L.dim) - T.entries.conj().T @ T.entries, 2))
    bound = defect / (1 - t_norm) ** 2 / (N + 1) + 10 * tol if t_norm < 1 else float("inf")
    return CrossValidation(deviation=max(per_interval, default=0.0), bound=bound,
                           per_interval=tuple(per_interval))
