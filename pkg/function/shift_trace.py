from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from numpy.polynomial.legendre import leggauss

from static.models import OperatorMatrix, DissipativePair, QuadratureGrid, SpectralShiftResult
from static.util import QuadratureError, InvariantViolation, DomainError
from static.logger import logging
from function.funcalc import AnalyticFunction, Pole, apply
from function.operator_core import path_relative, resolvent_i, schatten_norm
from function.semispectral import (
    density_stack, grid_for, build_grid, integrate, require_strict, DEFAULT_TOL,
)
from function.doi import derivative_formula

logger = logging.getLogger(__file__)

DEFAULT_T_NODES = 32
MAX_T_NODES = 128
ORACLE_PROBES = (-1j, 1 - 1j, -1 - 2j)


def gauss_rule_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """[0,1] 上的 n 點 Gauss–Legendre"""
    t, w = leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


# ─────────────────────────────────────────────────────────────
# ν_t 與 ν 的密度
# ─────────────────────────────────────────────────────────────
def nu_t_density(pair: DissipativePair, t: float, s):
    """trace(ρ_{L_t}(s)·K(L_t+iI)^{-1})"""
    L_t = pair.L_t(t)
    require_strict(L_t)
    C_t = path_relative(pair, t).entries
    values = np.einsum("kab,ba->k", density_stack(L_t, s), C_t)
    return values if np.ndim(s) else complex(values[0])


class _PathSampler:
    """在 t 節點上快取 (L_t, C_t)，向量化計算 ∫₀¹ ν_t 密度 dt"""

    def __init__(self, pair: DissipativePair, n_nodes: int):
        self.ts, self.ws = gauss_rule_01(n_nodes)
        self.n_nodes = n_nodes
        self.path = []
        for t in self.ts:
            L_t = pair.L_t(float(t))
            require_strict(L_t)
            self.path.append((L_t, path_relative(pair, float(t)).entries))

    def density(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros(len(s), dtype=complex)
        for (L_t, C_t), w in zip(self.path, self.ws):
            out += w * np.einsum("kab,ba->k", density_stack(L_t, s), C_t)
        return out

    def mass(self) -> complex:
        return complex(sum(w * np.trace(C_t) for (_, C_t), w in zip(self.path, self.ws)))


def xi_from_nu(pair: DissipativePair, grid: QuadratureGrid | None = None, t_nodes: int = DEFAULT_T_NODES,
               tol: float = DEFAULT_TOL) -> SpectralShiftResult:
    """
    ξ(s) = (s+i)·∫₀¹ ν_t 密度(s) dt。
    s 方向以 ∫ν 收斂做節點加倍；t 方向與半數節點的規則比較，不夠就加倍。
    """
    if grid is None:
        grid = grid_for(pair.L, pair.L_t(0.5), pair.M, tol=tol)

    while True:
        sampler = _PathSampler(pair, t_nodes)
        total, grid = integrate(sampler.density, grid)
        x, w = grid.rule
        nu = sampler.density(x)
        coarse = _PathSampler(pair, max(t_nodes // 2, 2)).density(x)
        t_error = float(np.sum(w * np.abs(nu - coarse)))
        if t_error <= tol or t_nodes >= MAX_T_NODES:
            break
        logger.info("t 方向規則不足（差值 %.3e），節點數 %d → %d", t_error, t_nodes, 2 * t_nodes)
        t_nodes *= 2
    if t_error > 10 * tol:
        raise QuadratureError(f"t 方向積分未收斂（差值 {t_error:.3e}）",
                              diagnostics={"t_nodes": t_nodes, "t_error": t_error})

    mass_gap = abs(complex(total) - sampler.mass())
    if mass_gap > 10 * tol * max(1.0, abs(sampler.mass())):
        logger.warning("∫ν 與 ∫₀¹ trace C_t dt 相差 %.3e", mass_gap)

    xi = (x + 1j) * nu
    weight = float(np.sum(w * np.abs(xi) / (1 + np.abs(x))))
    finer = grid.refined()
    x_f, w_f = finer.rule
    xi_f = (x_f + 1j) * sampler.density(x_f)
    weight_refined = float(np.sum(w_f * np.abs(xi_f) / (1 + np.abs(x_f))))

    return SpectralShiftResult(
        s_grid=x, weights=w, xi=xi, weight_integral=weight, weight_integral_refined=weight_refined,
        mass=complex(total), t_nodes=t_nodes, grid=grid, seed=pair.seed,
    )


def xi_tail_fit(ssr: SpectralShiftResult, start: float = 100.0) -> tuple[float, float]:
    """
    |ξ(s)| ≤ C/|s|：C 取 start ≤ |s| < 10·start 上的 max|sξ|，
    回傳 (C, |s| ≥ 10·start 上 max|sξ| / C)
    """
    s = np.abs(ssr.s_grid)
    products = np.abs(ssr.s_grid * ssr.xi)
    band = (s >= start) & (s < 10 * start)
    far = s >= 10 * start
    C = float(np.max(products[band])) if np.any(band) else 0.0
    if C == 0 or not np.any(far):
        return C, 0.0
    return C, float(np.max(products[far]) / C)


def weight_integral_stability(pair: DissipativePair, grid: QuadratureGrid | None = None,
                              t_nodes: int = DEFAULT_T_NODES, tol: float = DEFAULT_TOL) -> float:
    """∫|ξ|/(1+|s|) 在節點加倍下的相對變化"""
    return xi_from_nu(pair, grid, t_nodes, tol).weight_stability


# ─────────────────────────────────────────────────────────────
# Trace formula
# ─────────────────────────────────────────────────────────────
def trace_difference(f: AnalyticFunction, pair: DissipativePair) -> complex:
    return complex(np.trace(apply(f, pair.M).entries - apply(f, pair.L).entries))


def xi_pairing(f: AnalyticFunction, ssr: SpectralShiftResult, xi=None) -> complex:
    """∫ f′(s) ξ(s) ds，用 ssr 的節點"""
    xi = ssr.xi if xi is None else xi
    return complex(np.sum(ssr.weights * f.deriv(ssr.s_grid.astype(complex)) * xi))


def trace_formula_residual(pair: DissipativePair, f: AnalyticFunction, ssr: SpectralShiftResult) -> float:
    """|trace(f(M) − f(L)) − ∫ f′ξ|，同時寫進 ssr.residuals"""
    residual = abs(trace_difference(f, pair) - xi_pairing(f, ssr))
    ssr.residuals[f.function_id] = float(residual)
    return float(residual)


def q_trace_integral(pair: DissipativePair, f: AnalyticFunction, t_nodes: int = DEFAULT_T_NODES) -> complex:
    """∫₀¹ trace Q_t dt，不經過 ξ 的第二條路"""
    ts, ws = gauss_rule_01(t_nodes)
    return complex(sum(w * np.trace(derivative_formula(pair, float(t), f).Q.entries) for t, w in zip(ts, ws)))


# ─────────────────────────────────────────────────────────────
# 純量 oracle
# ─────────────────────────────────────────────────────────────
def scalar_xi_oracle(lam: complex, mu: complex, s):
    """(1/π)(arg(λ − s) − arg(μ − s))，λ, μ ∈ ℂ₊"""
    lam, mu = complex(lam), complex(mu)
    if lam.imag <= 0 or mu.imag <= 0:
        raise DomainError("純量 oracle 需要 Im λ > 0 且 Im μ > 0")
    s = np.asarray(s, dtype=float)
    return (np.angle(lam - s) - np.angle(mu - s)) / np.pi


def validate_scalar_oracle(lam: complex, mu: complex, f: AnalyticFunction, grid: QuadratureGrid | None = None,
                           tol: float = DEFAULT_TOL) -> float:
    """|∫ f′ ξ_oracle − (f(μ) − f(λ))|"""
    lam, mu = complex(lam), complex(mu)
    if grid is None:
        grid = build_grid([lam.real, mu.real], [lam.imag, mu.imag], tol)

    def integrand(x):
        return f.deriv(x.astype(complex)) * scalar_xi_oracle(lam, mu, x)

    value, _ = integrate(integrand, grid)
    expected = complex(f.evaluate(mu)) - complex(f.evaluate(lam))
    return float(abs(complex(value) - expected))


@dataclass(frozen=True)
class OracleComparison:
    pairing_gap: float
    pointwise_max: float
    probes: tuple[complex, ...]


def compare_with_scalar_oracle(ssr: SpectralShiftResult, lam: complex, mu: complex,
                               probes=ORACLE_PROBES, window: float = 50.0) -> OracleComparison:
    """
    ξ 不唯一：只比較對 f_p = (z−p)^{-1} 的配對 ∫ f_p′(ξ − ξ_oracle)；
    [−window, window] 上的逐點差只當診斷值
    """
    oracle = scalar_xi_oracle(lam, mu, ssr.s_grid)
    gap = max(abs(xi_pairing(Pole(complex(p)), ssr, ssr.xi - oracle)) for p in probes)
    inside = np.abs(ssr.s_grid) <= window
    pointwise = float(np.max(np.abs(ssr.xi[inside] - oracle[inside]))) if np.any(inside) else 0.0
    return OracleComparison(pairing_gap=float(gap), pointwise_max=pointwise, probes=tuple(complex(p) for p in probes))


# ─────────────────────────────────────────────────────────────
# 其他檢查
# ─────────────────────────────────────────────────────────────
def resolvent_difference_check(pair: DissipativePair) -> tuple[float, float]:
    """(‖(M+iI)^{-1} − (L+iI)^{-1}‖_S1, ‖(M+iI)^{-1}‖·‖C‖_S1)"""
    R_M = resolvent_i(pair.M)
    diff = R_M - resolvent_i(pair.L)
    norm = schatten_norm(diff, 1)
    bound = float(la.norm(R_M, 2)) * schatten_norm(pair.C, 1)
    if norm > bound + 1e-10:
        raise InvariantViolation(f"resolvent 差的 trace norm {norm:.6g} 超過 {bound:.6g}")
    return norm, bound


@dataclass(frozen=True)
class PathModulus:
    violations: int
    max_ratio: float
    sup_trace_norm: float
    sup_norm: float

    def omega(self, delta: float) -> float:
        return delta * self.sup_trace_norm * self.sup_norm


def path_modulus_check(pair: DissipativePair, ts) -> PathModulus:
    """‖C_{t1} − C_{t2}‖_S1 ≤ ω(|t1 − t2|)，ω(δ) = δ·sup‖C_t‖_S1·sup‖C_t‖"""
    ts = [float(t) for t in ts]
    Cs = [path_relative(pair, t).entries for t in ts]
    sup_s1 = max(schatten_norm(C, 1) for C in Cs)
    sup_op = max(float(la.norm(C, 2)) for C in Cs)
    modulus = PathModulus(0, 0.0, sup_s1, sup_op)
    violations, max_ratio = 0, 0.0
    for i in range(len(ts)):
        for j in range(i + 1, len(ts)):
            lhs = schatten_norm(Cs[i] - Cs[j], 1)
            rhs = modulus.omega(abs(ts[i] - ts[j]))
            if rhs > 0:
                max_ratio = max(max_ratio, lhs / rhs)
            if lhs > rhs * (1 + 1e-9) + 1e-12:
                violations += 1
    return PathModulus(violations, max_ratio, sup_s1, sup_op)


def measure_pairing_identity(L, R, h: AnalyticFunction, grid: QuadratureGrid | None = None,
                             tol: float = DEFAULT_TOL) -> tuple[complex, complex]:
    """∫ h dμ = trace(h(L)R)，μ(Δ) = trace(ℰ_L(Δ)R)"""
    L, R = OperatorMatrix.of(L), OperatorMatrix.of(R)
    require_strict(L)
    grid = grid_for(L, tol=tol) if grid is None else grid

    def integrand(x):
        return h.value(x.astype(complex)) * np.einsum("kab,ba->k", density_stack(L, x), R.entries)

    lhs, _ = integrate(integrand, grid)
    rhs = complex(np.trace(apply(h, L).entries @ R.entries))
    return complex(lhs), rhs
