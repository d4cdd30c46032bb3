from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la

from static.models import OperatorMatrix, DissipativePair, QuadratureGrid
from static.util import ArgumentError, DomainError, QuadratureError
from static.logger import logging
from function.funcalc import AnalyticFunction, apply, spectral_path
from function.operator_core import path_relative, schatten_norm
from function.semispectral import density_stack, grid_for, integrate, require_strict

logger = logging.getLogger(__file__)

KERNEL_FORMS = ("dd", "dd_flat", "res_dd", "custom")
ROW_CHUNK = 256


# ─────────────────────────────────────────────────────────────
# Kernel
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Kernel:
    """
    Φ(z, w)：z 對應左邊的運算子（M），w 對應右邊（L）
      dd      𝔇f(z,w)
      dd_flat 𝔇f(z,w)·(w+i)
      res_dd  (z+i)(w+i)·𝔇f(z,w)
      custom  任意向量化的 Φ
    """
    form: str
    f: AnalyticFunction | None = None
    func: Callable | None = field(default=None, compare=False)
    kernel_id: str = ""

    def __post_init__(self):
        if self.form not in KERNEL_FORMS:
            raise ArgumentError(f"未知的 kernel 形式：{self.form}")
        if self.form == "custom" and self.func is None:
            raise ArgumentError("custom kernel 需要 func")
        if self.form != "custom" and self.f is None:
            raise ArgumentError(f"{self.form} kernel 需要 f")
        if not self.kernel_id:
            label = self.f.function_id if self.f is not None else "custom"
            object.__setattr__(self, "kernel_id", f"{self.form}({label})")

    @classmethod
    def dd(cls, f: AnalyticFunction) -> "Kernel":
        return cls("dd", f)

    @classmethod
    def dd_flat(cls, f: AnalyticFunction) -> "Kernel":
        return cls("dd_flat", f)

    @classmethod
    def res_dd(cls, f: AnalyticFunction) -> "Kernel":
        return cls("res_dd", f)

    @classmethod
    def custom(cls, func: Callable, kernel_id: str = "custom") -> "Kernel":
        return cls("custom", func=func, kernel_id=kernel_id)

    @classmethod
    def constant(cls, value: complex = 1.0) -> "Kernel":
        c = complex(value)
        return cls.custom(lambda z, w: np.full(np.broadcast_shapes(np.shape(z), np.shape(w)), c),
                          kernel_id=f"const({c.real:g}{c.imag:+g}j)")

    def values(self, z, w):
        """不檢查定義域的內部版本"""
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        if self.form == "custom":
            return np.asarray(self.func(z, w), dtype=complex)
        dd = self.f.dd(z, w)
        if self.form == "dd":
            return dd
        if self.form == "dd_flat":
            return dd * (w + 1j)
        return (z + 1j) * (w + 1j) * dd


def kernel_eval(ker: Kernel, z, w):
    if np.any(np.imag(z) < 0) or np.any(np.imag(w) < 0):
        raise DomainError("kernel 只在閉上半平面的點對上有定義")
    return ker.values(z, w)


# ─────────────────────────────────────────────────────────────
# 兩個 DOI 求值器
# ─────────────────────────────────────────────────────────────
def doi_eigen(ker: Kernel, M, Q, L) -> OperatorMatrix:
    """S_M (Φ(μ_j, λ_k) ∘ S_M^{-1} Q S_L) S_L^{-1}"""
    M, Q, L = OperatorMatrix.of(M), OperatorMatrix.of(Q), OperatorMatrix.of(L)
    mu, S_M, S_M_inv = spectral_path(M)
    lam, S_L, S_L_inv = spectral_path(L)
    G = ker.values(mu[:, None], lam[None, :])
    inner = S_M_inv @ Q.entries @ S_L
    return OperatorMatrix(S_M @ (G * inner) @ S_L_inv)


def doi_quadrature(ker: Kernel, M, Q, L, grid: QuadratureGrid | None = None,
                   tol: float = 1e-7, max_doublings: int = 2) -> OperatorMatrix:
    """
    ∬ Φ(x,y) ρ_M(x) Q ρ_L(y) dx dy，兩個方向用同一張張量網格；
    節點數加倍直到差值 ≤ tol
    """
    M, Q, L = OperatorMatrix.of(M), OperatorMatrix.of(Q), OperatorMatrix.of(L)
    require_strict(M)
    require_strict(L)
    grid = grid_for(M, L, tol=tol, nodes_per_panel=8) if grid is None else grid

    def total(g: QuadratureGrid):
        x, w = g.rule
        xc = x.astype(complex)
        rho_M = density_stack(M, x)
        rho_L = density_stack(L, x)
        out = np.zeros((M.dim, L.dim), dtype=complex)
        for start in range(0, len(x), ROW_CHUNK):
            rows = slice(start, start + ROW_CHUNK)
            phi = ker.values(xc[rows, None], xc[None, :])
            # B_j = Σ_k w_k Φ(x_j, y_k) ρ_L(y_k)
            B = np.einsum("jk,kab->jab", phi * w[None, :], rho_L)
            left = np.einsum("j,jab,bc->jac", w[rows], rho_M[rows], Q.entries)
            out += np.einsum("jab,jbc->ac", left, B)
        return out

    current = total(grid)
    history = []
    for _ in range(max_doublings):
        grid = grid.refined()
        refined = total(grid)
        diff = float(np.max(np.abs(refined - current)))
        history.append((grid.nodes_per_panel, diff))
        if diff <= tol:
            return OperatorMatrix(refined)
        current = refined
    raise QuadratureError(f"DOI 張量積分未收斂（最後差值 {history[-1][1]:.3e}）",
                          diagnostics={"history": history})


# ─────────────────────────────────────────────────────────────
# 差分公式與導數公式
# ─────────────────────────────────────────────────────────────
def difference_formula_residual(f: AnalyticFunction, pair: DissipativePair) -> float:
    """‖f(M) − f(L) − DOI(𝔇♭f; M, C, L)‖ / max(1, ‖f(M) − f(L)‖)"""
    delta = apply(f, pair.M).entries - apply(f, pair.L).entries
    doi = doi_eigen(Kernel.dd_flat(f), pair.M, pair.C, pair.L).entries
    return float(la.norm(delta - doi, 2) / max(1.0, la.norm(delta, 2)))


@dataclass(frozen=True)
class DerivativeResult:
    Q: OperatorMatrix
    trace_norm: float
    t: float


def derivative_formula(pair: DissipativePair, t: float, f: AnalyticFunction) -> DerivativeResult:
    """Q_t = DOI(𝔇♭f; L_t, K(L_t+iI)^{-1}, L_t) = d/dt f(L_t)"""
    L_t = pair.L_t(t)
    Q = doi_eigen(Kernel.dd_flat(f), L_t, path_relative(pair, t), L_t)
    return DerivativeResult(Q=Q, trace_norm=schatten_norm(Q, 1), t=t)


def finite_difference_derivative(pair: DissipativePair, t: float, f: AnalyticFunction,
                                 h: float = 1e-4) -> OperatorMatrix:
    """(f(L_{t+h}) − f(L_{t−h})) / 2h"""
    if not h > 0:
        raise ArgumentError(f"h 必須為正，收到 {h}")
    plus = apply(f, pair.L_t(t + h)).entries
    minus = apply(f, pair.L_t(t - h)).entries
    return OperatorMatrix((plus - minus) / (2 * h))


@dataclass(frozen=True)
class ConvergenceOrder:
    hs: tuple[float, ...]
    errors: tuple[float, ...]
    order: float
    # 可用的點不到兩個時為 True，order 為 nan
    inconclusive: bool = False


def convergence_order(pair: DissipativePair, t: float, f: AnalyticFunction, hs=None) -> ConvergenceOrder:
    """中央差分誤差對 h 的 log-log 斜率；低於捨入底線的點不納入擬合"""
    hs = tuple(1e-2 * 2.0 ** -k for k in range(7)) if hs is None else tuple(hs)
    Q = derivative_formula(pair, t, f).Q.entries
    scale = max(1.0, float(la.norm(apply(f, pair.L_t(t)).entries, 2)))
    errors = tuple(float(la.norm(finite_difference_derivative(pair, t, f, h).entries - Q, 2)) for h in hs)
    usable = [(h, e) for h, e in zip(hs, errors) if e > 1e4 * np.finfo(float).eps * scale / h]
    if len(usable) < 2:
        # 誤差已經在捨入底線，二階項看不到
        return ConvergenceOrder(hs, errors, float("nan"), inconclusive=True)
    log_h = np.log([h for h, _ in usable])
    log_e = np.log([e for _, e in usable])
    slope = float(np.polyfit(log_h, log_e, 1)[0])
    return ConvergenceOrder(hs, errors, slope)


def doi_trace_identity(f: AnalyticFunction, L, R, grid: QuadratureGrid | None = None,
                       tol: float = 1e-8) -> tuple[complex, complex]:
    """
    lhs = trace DOI(𝔇♭f; L, R, L)
    rhs = ∫ f′(x)(x+i)·trace(ρ_L(x) R) dx
    """
    L, R = OperatorMatrix.of(L), OperatorMatrix.of(R)
    lhs = complex(np.trace(doi_eigen(Kernel.dd_flat(f), L, R, L).entries))
    require_strict(L)
    grid = grid_for(L, tol=tol) if grid is None else grid

    def integrand(x):
        xc = x.astype(complex)
        weight = f.deriv(xc) * (xc + 1j)
        return weight * np.einsum("kab,ba->k", density_stack(L, x), R.entries)

    rhs, _ = integrate(integrand, grid)
    return lhs, complex(rhs)


# ─────────────────────────────────────────────────────────────
# 相對 Lipschitz 常數
# ─────────────────────────────────────────────────────────────
def relative_lipschitz_ratio(f: AnalyticFunction, pair: DissipativePair) -> float:
    """‖f(M) − f(L)‖ / ‖C‖"""
    c_norm = pair.C.norm
    if c_norm == 0:
        return 0.0
    delta = apply(f, pair.M).entries - apply(f, pair.L).entries
    return float(la.norm(delta, 2) / c_norm)


def trace_class_corollary(f: AnalyticFunction, pair: DissipativePair, multiplier_upper: float) -> tuple[float, float]:
    """(‖f(M) − f(L)‖_S1, multiplier 上界 · ‖C‖_S1)，只回報"""
    delta = apply(f, pair.M) - apply(f, pair.L)
    return schatten_norm(delta, 1), float(multiplier_upper) * schatten_norm(pair.C, 1)


class LipschitzTracker:
    """每個函數的 running max k_f；比較前一半與全部樣本看是否穩定"""

    def __init__(self, stable_ratio: float = 1.1):
        self.stable_ratio = stable_ratio
        self._ratios: dict[str, list[float]] = {}

    def update(self, function_id: str, ratio: float):
        self._ratios.setdefault(function_id, []).append(float(ratio))

    def k(self, function_id: str) -> float:
        return max(self._ratios.get(function_id, [0.0]))

    def report(self) -> dict[str, dict]:
        out = {}
        for fid in sorted(self._ratios):
            values = self._ratios[fid]
            half = values[: max(1, len(values) // 2)]
            k_half, k_all = max(half), max(values)
            out[fid] = {
                "k_f": k_all,
                "k_f_half": k_half,
                "samples": len(values),
                "stable": k_all <= self.stable_ratio * k_half if k_half > 0 else k_all == 0,
            }
        return out
