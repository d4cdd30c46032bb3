import shlex
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import orjson
import scipy.linalg as la
import yaml
from pydantic import ValidationError
from tqdm import tqdm

from static.payload import (
    SuiteConfig, CheckRecord, SuiteSummary, WorstCase, Report, MultiplierSettings,
    SUITE_NAMES, PAIR_KINDS,
)
from static.models import OperatorMatrix, DissipativePair
from static.util import (
    handle_check_exception, measure_time, ConfigError, GenerationError, ArgumentError,
    EndpointCollisionError, OutOfScopeError,
)
from static.logger import logging
from function.operator_core import (
    random_hermitian, random_psd, schatten_norm, resolvent_i, cayley, inverse_cayley,
    transferred_constants, check_domination, path_relative, maximality_margin, make_pair,
    propagation_residual, lower_resolvent_margin, shifted_resolvent_norm,
)
from function.funcalc import (
    AnalyticFunction, battery, apply, apply_unbounded_form, transplant_to_disk, certify_rola, pole,
)
from function.semispectral import (
    semi_spectral, integrate_functional, finite_dilation, unitarity_residual, dilation_exactness,
    polynomial_compression_residual, resolvent_dilation_check, cross_validate, integrate, grid_for, EPS_SPEC,
)
from function.doi import (
    Kernel, doi_eigen, doi_quadrature, difference_formula_residual, derivative_formula,
    finite_difference_derivative, convergence_order, doi_trace_identity, relative_lipschitz_ratio,
    trace_class_corollary, LipschitzTracker, ConvergenceOrder,
)
from function.shift_trace import (
    xi_from_nu, trace_formula_residual, q_trace_integral, trace_difference, resolvent_difference_check,
    path_modulus_check, measure_pairing_identity, validate_scalar_oracle, compare_with_scalar_oracle,
    scalar_xi_oracle, xi_tail_fit, nu_t_density,
)
from function.multiplier_lab import (
    schur_bracket, rola_probe, reslip_probe, transplant_sample, resolvent_limit_constant,
)

logger = logging.getLogger(__file__)

CONDITION_LIMIT = 1e6
STRICT_GAP = 10 * EPS_SPEC
MAX_ATTEMPTS = 100
# maximality_margin 的 κ 讓 ‖K(L+iκ)^{-1}‖ ≤ c/κ + d < 1 只在 d 大於此值時保證
MAXIMALITY_GUARANTEED_D = (6 - np.sqrt(20)) / 8
TRANSFER_TS = (0.25, 0.5, 1.0)
ORDER_MAX_DIM = 6
ORDER_MIN = 1.9
# repro 指令自己帶的 key，不再用 --set 重播
REPRO_KEYS = ("seed", "dims", "n_instances", "suites", "workers", "out")
WEIGHT_STABILITY = 1e-3
BRACKET_REL = 0.05


# ─────────────────────────────────────────────────────────────
# 產生 instance
# ─────────────────────────────────────────────────────────────
def gen_pair(seed: int, dim: int, gap: float, kind: str = "generic", s1_norm: float = 1.0,
             d: float = 0.4, max_attempts: int = MAX_ATTEMPTS) -> DissipativePair:
    """
    generic                 L 嚴格 dissipative，K = H + iP dissipative
    trace_class_structured  同上但把 K 縮放到 ‖C‖_S1 = s1_norm
    selfadjoint_base        L Hermitian，K = H + i(P + gap·I)
    條件數過大或離實軸太近的樣本丟掉重抽
    """
    if kind not in PAIR_KINDS:
        raise ArgumentError(f"未知的 pair 種類：{kind}")
    if dim < 1:
        raise ArgumentError(f"dim 必須 >= 1，收到 {dim}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, dim, PAIR_KINDS.index(kind)]))
    eye = np.eye(dim)

    for attempt in range(max_attempts):
        H = random_hermitian(rng, dim, 0.5)
        P = random_psd(rng, dim, 0.5)
        if kind == "selfadjoint_base":
            L = random_hermitian(rng, dim)
            K = H + 1j * (P + gap * eye)
        else:
            L = random_hermitian(rng, dim) + 1j * (random_psd(rng, dim) + gap * eye)
            K = H + 1j * P
            if kind == "trace_class_structured":
                C0 = K @ resolvent_i(OperatorMatrix(L))
                K = K * (s1_norm / schatten_norm(C0, 1))

        L_op, M_op = OperatorMatrix(L), OperatorMatrix(L + K)
        if L_op.spectral.condition > CONDITION_LIMIT or M_op.spectral.condition > CONDITION_LIMIT:
            continue
        strict_ops = (M_op,) if kind == "selfadjoint_base" else (L_op, M_op)
        if any(np.min(op.spectral.eigenvalues.imag) < STRICT_GAP for op in strict_ops):
            continue
        if attempt:
            logger.debug("gen_pair(seed=%d, dim=%d, %s) 第 %d 次才成功", seed, dim, kind, attempt + 1)
        return make_pair(L_op, OperatorMatrix(K), d=d, tol=0.0 if kind == "selfadjoint_base" else None,
                         kind=kind, seed=seed)

    raise GenerationError(f"gen_pair(seed={seed}, dim={dim}, kind={kind}) 抽樣 {max_attempts} 次都被拒絕")


def battery_items(config: SuiteConfig) -> list[tuple[str, AnalyticFunction]]:
    spec = config.battery
    return [(kind, f) for kind in spec.kinds
            for f in battery(kind, spec.count, spec.poles, spec.disk_degree, spec.pole_gap)]


@dataclass(frozen=True)
class InstanceContext:
    suite: str
    seed: int
    dim: int
    config: SuiteConfig
    first: bool = False

    @property
    def repro(self) -> str:
        """重跑這個 instance 的指令；非預設設定全部以 --set 帶上"""
        parts = [f"python app.py verify --suite {self.suite} --seed {self.seed} --dims {self.dim} --n-instances 1"]
        for key, value in config_overrides(self.config).items():
            parts.append("--set " + shlex.quote(f"{key}={orjson.dumps(value).decode()}"))
        return " ".join(parts)

    @property
    def tol(self):
        return self.config.tolerances

    def pair(self, kind: str | None = None) -> DissipativePair:
        cfg = self.config
        return gen_pair(self.seed, self.dim, cfg.gap, kind or cfg.pair_kind, cfg.s1_norm, cfg.d)

    def strict_pair(self) -> DissipativePair:
        """密度路徑需要嚴格 dissipative 的 L；selfadjoint_base 換成 generic"""
        kind = "generic" if self.config.pair_kind == "selfadjoint_base" else self.config.pair_kind
        return self.pair(kind)

    def record(self, check: str, residual: float, tolerance: float, function_id: str = "-",
               hard: bool = True, passed: bool | None = None, detail: str = "") -> CheckRecord:
        residual = float(residual)
        if passed is None:
            passed = bool(np.isfinite(residual) and residual <= tolerance)
        return CheckRecord(
            suite=self.suite, check=check, seed=self.seed, dim=self.dim, function_id=function_id,
            residual=residual, tolerance=float(tolerance), passed=bool(passed), hard=hard, detail=detail,
        )


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(la.norm(a - b, 2) / max(1.0, la.norm(b, 2)))


def _unit_vectors(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    V = rng.standard_normal((dim, count)) + 1j * rng.standard_normal((dim, count))
    return V / np.linalg.norm(V, axis=0)


# ─────────────────────────────────────────────────────────────
# core
# ─────────────────────────────────────────────────────────────
@handle_check_exception
def check_cayley(ctx: InstanceContext) -> list[CheckRecord]:
    L = ctx.pair().L
    T = cayley(L)
    return [
        ctx.record("cayley_contraction", max(0.0, T.norm - 1.0), 1e-10),
        ctx.record("cayley_roundtrip", _rel(inverse_cayley(T).entries, L.entries), 1e-9),
    ]


@handle_check_exception
def check_resolvent_bounds(ctx: InstanceContext) -> list[CheckRecord]:
    pair = ctx.pair()
    rng = np.random.default_rng([ctx.seed, ctx.dim, 1])
    V = _unit_vectors(rng, ctx.dim, ctx.config.domination_vectors)
    records = [ctx.record("lower_resolvent", max(0.0, -lower_resolvent_margin(pair.L, V)), 1e-9)]
    for kappa in (0.5, 1.0, 2.0):
        excess = kappa * shifted_resolvent_norm(pair.L, kappa) - 1.0
        records.append(ctx.record("shifted_resolvent", max(0.0, excess), 1e-10, function_id=f"kappa={kappa:g}"))
    return records


@handle_check_exception
def check_domination_bounds(ctx: InstanceContext) -> list[CheckRecord]:
    pair = ctx.pair()
    n = ctx.config.domination_vectors
    result = check_domination(pair.L, pair.K, pair.c, pair.d, seed=ctx.seed, n_vectors=n)
    records = [ctx.record("domination", max(0.0, result.max_violation), 1e-9, detail=f"c={pair.c:.6g}")]
    for t in TRANSFER_TS:
        c_t, d_t = transferred_constants(pair.c, pair.d, t)
        moved = check_domination(pair.L_t(t), pair.K, c_t, d_t, seed=ctx.seed + 1, n_vectors=n)
        records.append(ctx.record("domination_transfer", max(0.0, moved.max_violation), 1e-9, function_id=f"t={t:g}"))

    direct = pair.K.entries @ resolvent_i(pair.L_t(0.5))
    records.append(ctx.record("path_relative", _rel(path_relative(pair, 0.5).entries, direct), 1e-10))
    residual, trace_norm = propagation_residual(pair)
    records.append(ctx.record("propagation", residual / max(1.0, pair.C.norm), 1e-10,
                              detail=f"‖K(M+iI)^-1‖_S1={trace_norm:.6g}"))
    return records


@handle_check_exception
def check_maximality(ctx: InstanceContext) -> list[CheckRecord]:
    pair = ctx.pair()
    try:
        kappa = maximality_margin(pair.c, pair.d)
    except OutOfScopeError as e:
        return [ctx.record("maximality", 0.0, 1.0, hard=False, passed=True, detail=str(e))]
    norm = float(la.norm(pair.K.entries @ la.inv(pair.L.shifted(1j * kappa).entries), 2))
    hard = pair.d > MAXIMALITY_GUARANTEED_D
    return [ctx.record("maximality", norm, 1.0, hard=hard, passed=norm < 1.0, detail=f"kappa={kappa:.6g}")]


# ─────────────────────────────────────────────────────────────
# funcalc
# ─────────────────────────────────────────────────────────────
@handle_check_exception
def check_calculus(ctx: InstanceContext) -> list[CheckRecord]:
    pair = ctx.pair()
    L = pair.L
    T = cayley(L)
    records = []
    items = battery_items(ctx.config)
    for kind, f in items:
        fid = f.function_id
        fL = apply(f, L).entries
        records.append(ctx.record("unbounded_form", _rel(apply_unbounded_form(f, L).entries, fL), 1e-9, fid))
        records.append(ctx.record("cayley_calculus", _rel(transplant_to_disk(f).apply(T).entries, fL), 1e-9, fid))
        sample = transplant_sample(f, pair)
        records.append(ctx.record("transplant_identity", sample.numerator_gap, 1e-9, fid))
        if ctx.first:
            cert = certify_rola(f, kind)
            records.append(ctx.record("rola_certificate", cert.sup_derivative, 1e8, fid, passed=cert.passed,
                                      detail=f"decays={cert.decays}"))

    for (_, f), (_, g) in zip(items, items[1:]):
        lhs = apply(f * g, L).entries
        rhs = apply(f, L).entries @ apply(g, L).entries
        records.append(ctx.record("multiplicativity", _rel(lhs, rhs), 1e-9, f"{f.function_id}*{g.function_id}"))

    spec = ctx.config.battery
    for p in spec.poles:
        p = complex(*p)
        direct = la.inv(L.entries - p * np.eye(L.dim))
        records.append(ctx.record("resolvent_identity", _rel(apply(pole(p, spec.pole_gap), L).entries, direct),
                                  1e-10, f"pole({p.real:g}{p.imag:+g}j)"))
    return records


@handle_check_exception
def check_divided_differences(ctx: InstanceContext) -> list[CheckRecord]:
    rng = np.random.default_rng([ctx.seed, ctx.dim, 2])
    z = rng.normal(0, 3, 1000) + 1j * rng.uniform(0, 2, 1000)
    w = z + (0.1 + rng.uniform(0, 2, 1000)) * np.exp(1j * rng.uniform(0, np.pi, 1000))
    records = []
    for _, f in battery_items(ctx.config):
        direct = (f.value(z) - f.value(w)) / (z - w)
        err = np.abs(f.dd(z, w) - direct) / np.maximum(1.0, np.abs(direct))
        records.append(ctx.record("divided_difference", float(np.max(err)), 1e-12, f.function_id))
    return records


# ─────────────────────────────────────────────────────────────
# semispectral
# ─────────────────────────────────────────────────────────────
def _quadrature_sized(ctx: InstanceContext) -> bool:
    return ctx.dim <= ctx.config.max_dim_quadrature


@handle_check_exception
def check_density(ctx: InstanceContext) -> list[CheckRecord]:
    if not _quadrature_sized(ctx):
        return []
    tol = ctx.tol.quadrature
    L = ctx.strict_pair().L
    density = semi_spectral(L, tol)
    mass_residual, psd_min = density.check()
    records = [
        ctx.record("density_mass", mass_residual, 10 * tol),
        ctx.record("density_psd", max(0.0, -psd_min), 1e-10),
    ]
    for _, f in battery_items(ctx.config):
        value = integrate_functional(f, L, density.grid).entries
        records.append(ctx.record("integrate_functional", float(la.norm(value - apply(f, L).entries, 2)),
                                  10 * tol, f.function_id))
    return records


@handle_check_exception
def check_dilation(ctx: InstanceContext) -> list[CheckRecord]:
    rng = np.random.default_rng([ctx.seed, ctx.dim, 3])
    G = rng.standard_normal((ctx.dim, ctx.dim)) + 1j * rng.standard_normal((ctx.dim, ctx.dim))
    contractions = {"random": 0.95 * G / la.norm(G, 2), "cayley": cayley(ctx.pair().L).entries}
    records = []
    for label, T in contractions.items():
        for N in ctx.config.dilation_depths:
            dilation = finite_dilation(T, N)
            fid = f"{label},N={N}"
            records.append(ctx.record("unitarity", unitarity_residual(dilation), 1e-10, fid))
            records.append(ctx.record("power_dilation", dilation_exactness(dilation), 1e-10, fid))
            coeffs = rng.standard_normal(N + 1) + 1j * rng.standard_normal(N + 1)
            residual = polynomial_compression_residual(dilation, coeffs) / np.sum(np.abs(coeffs))
            records.append(ctx.record("polynomial_compression", residual, 1e-10, fid))
    return records


@handle_check_exception
def check_resolvent_dilation(ctx: InstanceContext) -> list[CheckRecord]:
    L = ctx.strict_pair().L
    records = []
    for N in ctx.config.dilation_depths:
        for lam in (-1j, -2j, 1 - 1j):
            result = resolvent_dilation_check(L, N, lam)
            records.append(ctx.record("resolvent_dilation", result.residual, result.bound + 1e-10,
                                      f"N={N},lam={lam.real:g}{lam.imag:+g}j", detail=f"deflated={result.deflated}"))
    return records


@handle_check_exception
def check_cross_validation(ctx: InstanceContext) -> list[CheckRecord]:
    if not _quadrature_sized(ctx):
        return []
    L = ctx.strict_pair().L
    intervals = [(-1.0, 1.0), (0.0, 2.0), (-np.inf, np.inf)]
    N = max(ctx.config.dilation_depths)
    try:
        result = cross_validate(L, N, intervals, ctx.tol.quadrature)
    except EndpointCollisionError:
        # 端點剛好碰到 A 的特徵值：整組平移再試一次
        intervals = [(a + 1e-3, b + 1e-3) for a, b in intervals]
        result = cross_validate(L, N, intervals, ctx.tol.quadrature)
    return [ctx.record("cross_validate", result.deviation, result.bound, f"N={N}")]


# ─────────────────────────────────────────────────────────────
# doi
# ─────────────────────────────────────────────────────────────
@handle_check_exception
def check_difference_formula(ctx: InstanceContext) -> list[CheckRecord]:
    pair = ctx.pair()
    records = []
    for _, f in battery_items(ctx.config):
        records.append(ctx.record("difference_formula", difference_formula_residual(f, pair),
                                  ctx.tol.residual, f.function_id))
        records.append(ctx.record("relative_lipschitz", relative_lipschitz_ratio(f, pair), np.inf,
                                  f.function_id, hard=False))

    second = doi_eigen(Kernel.dd_flat(pole(-1j)), pair.M, pair.C, pair.L).entries
    direct = resolvent_i(pair.M) - resolvent_i(pair.L)
    records.append(ctx.record("second_resolvent", _rel(second, direct), 1e-10, "res^1"))
    return records


def order_record(ctx: InstanceContext, function_id: str, order: ConvergenceOrder) -> CheckRecord:
    """收斂階數；誤差全在捨入底線時只記一筆不計入失敗的 soft 紀錄"""
    if order.inconclusive:
        floor = max(order.errors) if order.errors else 0.0
        return ctx.record("derivative_order", 0.0, ORDER_MIN, function_id, hard=False, passed=False,
                          detail=f"inconclusive: 差分誤差 ≤ {floor:.3e} 已在捨入底線，無法擬合階數")
    return ctx.record("derivative_order", order.order, ORDER_MIN, function_id, passed=order.order >= ORDER_MIN)


@handle_check_exception
def check_derivative_formula(ctx: InstanceContext) -> list[CheckRecord]:
    pair = ctx.pair()
    h = ctx.tol.fd_step
    t = 0.5
    records = []
    for _, f in battery_items(ctx.config):
        Q = derivative_formula(pair, t, f)
        fd = finite_difference_derivative(pair, t, f, h).entries
        records.append(ctx.record("derivative_fd", _rel(fd, Q.Q.entries), ctx.tol.fd_agreement, f.function_id,
                                  detail=f"‖Q_t‖_S1={Q.trace_norm:.6g}"))
        if ctx.dim <= ORDER_MAX_DIM:
            records.append(order_record(ctx, f.function_id, convergence_order(pair, t, f)))
    return records


@handle_check_exception
def check_doi_evaluators(ctx: InstanceContext) -> list[CheckRecord]:
    if not _quadrature_sized(ctx):
        return []
    pair = ctx.strict_pair()
    tol = ctx.tol.doi_quadrature
    f = pole(-2j)
    ker = Kernel.dd_flat(f)
    eigen = doi_eigen(ker, pair.M, pair.C, pair.L).entries
    quad = doi_quadrature(ker, pair.M, pair.C, pair.L, tol=tol / 10).entries
    records = [ctx.record("doi_evaluators", float(la.norm(eigen - quad, 2)), tol, ker.kernel_id)]
    for _, g in battery_items(ctx.config):
        lhs, rhs = doi_trace_identity(g, pair.L, pair.C, tol=ctx.tol.quadrature)
        records.append(ctx.record("doi_trace_identity", abs(lhs - rhs), ctx.tol.trace, g.function_id))
    return records


# ─────────────────────────────────────────────────────────────
# shift
# ─────────────────────────────────────────────────────────────
@handle_check_exception
def check_trace_formula(ctx: InstanceContext) -> list[CheckRecord]:
    if ctx.dim > ctx.config.max_dim_shift:
        return []
    pair = ctx.strict_pair()
    tol = ctx.tol
    ssr = xi_from_nu(pair, t_nodes=ctx.config.t_nodes, tol=tol.quadrature)
    records = [
        ctx.record("weight_integral", ssr.weight_stability, WEIGHT_STABILITY,
                   passed=bool(np.isfinite(ssr.weight_integral) and ssr.weight_stability <= WEIGHT_STABILITY),
                   detail=f"weight={ssr.weight_integral:.6g}"),
    ]
    C_fit, tail_ratio = xi_tail_fit(ssr)
    records.append(ctx.record("xi_tail", tail_ratio, 1.5, hard=False, detail=f"C={C_fit:.6g}"))
    for _, f in battery_items(ctx.config):
        fid = f.function_id
        records.append(ctx.record("trace_formula", trace_formula_residual(pair, f, ssr), tol.trace, fid))
        q_gap = abs(q_trace_integral(pair, f, ctx.config.t_nodes) - trace_difference(f, pair))
        records.append(ctx.record("q_route", q_gap, tol.q_route, fid))
    return records


@handle_check_exception
def check_shift_identities(ctx: InstanceContext) -> list[CheckRecord]:
    pair = ctx.strict_pair()
    norm, bound = resolvent_difference_check(pair)
    records = [ctx.record("resolvent_difference", max(0.0, norm - bound), 1e-10)]
    modulus = path_modulus_check(pair, np.linspace(0.0, 1.0, 9))
    records.append(ctx.record("path_modulus", modulus.violations, 0, detail=f"max_ratio={modulus.max_ratio:.4g}"))
    if _quadrature_sized(ctx):
        t = 0.5
        grid = grid_for(pair.L_t(t), tol=ctx.tol.quadrature)
        mass, _ = integrate(lambda s: nu_t_density(pair, t, s), grid)
        expected = np.trace(path_relative(pair, t).entries)
        records.append(ctx.record("nu_t_mass", abs(mass - expected), 10 * ctx.tol.quadrature))
        f = battery_items(ctx.config)[0][1]
        lhs, rhs = measure_pairing_identity(pair.L, pair.C, f, tol=ctx.tol.quadrature)
        records.append(ctx.record("measure_pairing", abs(lhs - rhs), 10 * ctx.tol.quadrature, f.function_id))
    return records


@handle_check_exception
def check_scalar_oracle(ctx: InstanceContext) -> list[CheckRecord]:
    if not ctx.first:
        return []
    rng = np.random.default_rng([ctx.seed, 4])
    lam = complex(rng.uniform(-1, 1), rng.uniform(0.5, 1.5))
    mu = lam + complex(rng.uniform(-1, 1), rng.uniform(0.0, 1.0))
    f = pole(-1j)
    records = [ctx.record("oracle_validation", validate_scalar_oracle(lam, mu, f, tol=1e-9), 1e-8, f.function_id)]
    pair = scalar_pair(lam, mu, ctx.config.d)
    ssr = xi_from_nu(pair, t_nodes=ctx.config.t_nodes, tol=ctx.tol.quadrature)
    comparison = compare_with_scalar_oracle(ssr, lam, mu)
    records.append(ctx.record("oracle_pairing", comparison.pairing_gap, ctx.tol.trace))
    records.append(ctx.record("oracle_pointwise", comparison.pointwise_max, ctx.tol.trace, hard=False))
    return records


# ─────────────────────────────────────────────────────────────
# multiplier
# ─────────────────────────────────────────────────────────────
def _bracket_records(ctx: InstanceContext, check: str, bracket, expected: float | None = None) -> list[CheckRecord]:
    fid = f"{bracket.kernel_id},n={len(bracket.xs)}"
    records = [ctx.record(f"{check}_order", max(0.0, bracket.lower - bracket.upper), 1e-9, fid)]
    if expected is not None:
        gap = max(abs(bracket.lower - expected), abs(bracket.upper - expected)) / max(expected, 1e-300)
        records.append(ctx.record(check, gap, BRACKET_REL, fid))
    return records


def _bracket_certificates(ctx: InstanceContext, M: np.ndarray, bracket, label: str) -> list[CheckRecord]:
    A, B, X = bracket.factor_A, bracket.factor_B, bracket.contraction
    factor_gap = float(la.norm(A @ B - M, 2)) / max(1.0, float(np.max(np.abs(M))))
    rows = float(np.max(np.linalg.norm(A, axis=1)))
    cols = float(np.max(np.linalg.norm(B, axis=0)))
    witnessed = float(la.norm(M * X, 2))
    return [
        ctx.record("upper_certificate", max(factor_gap, rows * cols - bracket.upper - 1e-9), 1e-8, label),
        ctx.record("lower_certificate", max(0.0, bracket.lower - witnessed - 1e-9, float(la.norm(X, 2)) - 1 - 1e-9),
                   0.0, label),
    ]


@handle_check_exception
def check_multiplier_oracles(ctx: InstanceContext) -> list[CheckRecord]:
    if not ctx.first:
        return []
    settings = ctx.config.multiplier
    rng = np.random.default_rng([ctx.seed, 5])
    records = []

    phi = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    psi = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    M = np.outer(phi, psi)
    bracket = schur_bracket(M, settings, "rank_one", seed=ctx.seed)
    records += _bracket_records(ctx, "rank_one", bracket, float(np.max(np.abs(phi)) * np.max(np.abs(psi))))
    records += _bracket_certificates(ctx, M, bracket, "rank_one")

    H = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    G = H @ H.conj().T
    bracket = schur_bracket(G, settings, "psd", seed=ctx.seed)
    records += _bracket_records(ctx, "psd", bracket, float(np.max(np.real(np.diag(G)))))

    W = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    base = schur_bracket(W, settings, "generic", seed=ctx.seed)
    perm_r, perm_c = rng.permutation(5), rng.permutation(5)
    phases_r = np.exp(1j * rng.uniform(0, 2 * np.pi, 5))
    phases_c = np.exp(1j * rng.uniform(0, 2 * np.pi, 5))
    moved = phases_r[:, None] * W[perm_r][:, perm_c] * phases_c[None, :]
    other = schur_bracket(moved, settings, "generic_moved", seed=ctx.seed)
    # 兩個括號都包含同一個真值，所以一定重疊
    overlap = max(0.0, base.lower - other.upper, other.lower - base.upper)
    records.append(ctx.record("invariance", overlap, 1e-9))
    return records


@handle_check_exception
def check_multiplier_probes(ctx: InstanceContext) -> list[CheckRecord]:
    settings = ctx.config.multiplier
    pair = ctx.pair()
    records = []
    if ctx.first:
        probe = rola_probe(pole(-1j), settings.grid_sizes, settings, seed=ctx.seed)
        for bracket in probe.brackets:
            records += _bracket_records(ctx, "rola_resolvent", bracket, 1.0)

    for _, f in battery_items(ctx.config):
        fid = f.function_id
        sample = transplant_sample(f, pair)
        records.append(ctx.record("transplant_identity", sample.numerator_gap, 1e-9, fid))
        if sample.ratio_disk > 0:
            records.append(ctx.record("transplant_ratio", abs(sample.ratio_resolvent - 2 * sample.ratio_disk)
                                      / max(1.0, sample.ratio_resolvent), 1e-9, fid))
        if not ctx.first:
            continue
        limit = resolvent_limit_constant(f)
        for probe, check in ((rola_probe(f, settings.grid_sizes, settings, ctx.seed), "rola_probe"),
                             (reslip_probe(f, settings.grid_sizes, settings, seed=ctx.seed), "reslip_probe")):
            for bracket in probe.brackets:
                records += _bracket_records(ctx, check, bracket)
            records.append(ctx.record(f"{check}_trend", probe.brackets[-1].upper, np.inf, fid, hard=False,
                                      detail=f"trend={probe.trend} limit={limit.real:.6g}{limit.imag:+.6g}j"))
            if check == "rola_probe":
                lhs, rhs = trace_class_corollary(f, pair, probe.brackets[-1].upper)
                records.append(ctx.record("trace_class_corollary", lhs, rhs + 1e-9, fid, hard=False,
                                          detail="finite" if np.isfinite(rhs) else "infinite"))
    return records


SUITES = {
    "core": (check_cayley, check_resolvent_bounds, check_domination_bounds, check_maximality),
    "funcalc": (check_calculus, check_divided_differences),
    "semispectral": (check_density, check_dilation, check_resolvent_dilation, check_cross_validation),
    "doi": (check_difference_formula, check_derivative_formula, check_doi_evaluators),
    "shift": (check_trace_formula, check_shift_identities, check_scalar_oracle),
    "multiplier": (check_multiplier_oracles, check_multiplier_probes),
}


# ─────────────────────────────────────────────────────────────
# 執行
# ─────────────────────────────────────────────────────────────
def _run_instance(task) -> list[CheckRecord]:
    suite, seed, dim, config, first = task
    ctx = InstanceContext(suite, seed, dim, config, first)
    records = []
    for check in SUITES[suite]:
        for record in check(ctx):
            if not record.passed:
                record.repro = ctx.repro
            records.append(record)
    return records


def _tasks(suite: str, config: SuiteConfig):
    for i in range(config.n_instances):
        for j, dim in enumerate(config.dims):
            yield suite, config.seed + i, dim, config, i == 0 and j == 0


@measure_time
def run_single_suite(suite: str, config: SuiteConfig, timing: dict | None = None) -> list[CheckRecord]:
    tasks = list(_tasks(suite, config))
    progress = dict(desc=suite, total=len(tasks), leave=False, disable=len(tasks) < 2)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(tqdm(pool.map(_run_instance, tasks), **progress))
    else:
        chunks = [_run_instance(task) for task in tqdm(tasks, **progress)]
    records = [record for chunk in chunks for record in chunk]
    return sorted(records, key=lambda r: (r.seed, r.dim, r.function_id))


def summarize(records: list[CheckRecord]) -> SuiteSummary:
    summary = SuiteSummary(records=records)
    for record in records:
        if not record.hard:
            summary.reported += 1
        elif record.passed:
            summary.passed += 1
        else:
            summary.failed += 1
    return summary


def worst_cases(suites: dict[str, SuiteSummary]) -> list[WorstCase]:
    worst: dict[tuple[str, str], CheckRecord] = {}
    for suite, summary in suites.items():
        for record in summary.records:
            if not record.hard:
                continue
            key = (suite, record.check)
            current = worst.get(key)
            if current is None or _badness(record) > _badness(current):
                worst[key] = record
    return [
        WorstCase(suite=r.suite, check=r.check, residual=r.residual, tolerance=r.tolerance,
                  seed=r.seed, dim=r.dim, function_id=r.function_id)
        for _, r in sorted(worst.items())
    ]


def _badness(record: CheckRecord) -> float:
    if record.tolerance > 0 and np.isfinite(record.tolerance):
        return record.residual / record.tolerance
    return record.residual


def lipschitz_report(suites: dict[str, SuiteSummary]) -> dict[str, dict]:
    tracker = LipschitzTracker()
    summary = suites.get("doi")
    if summary is None:
        return {}
    for record in summary.records:
        if record.check == "relative_lipschitz" and np.isfinite(record.residual):
            tracker.update(record.function_id, record.residual)
    return tracker.report()


def build_report(config: SuiteConfig, suites: dict[str, SuiteSummary], timing: dict | None = None) -> Report:
    failures = [r for summary in suites.values() for r in summary.records if r.hard and not r.passed]
    return Report(
        config=config.model_dump(mode="json"),
        suites=suites,
        worst=worst_cases(suites),
        failures=failures,
        lipschitz=lipschitz_report(suites),
        timing=dict(timing or {}),
    )


def run_suite(config: SuiteConfig, timing: dict | None = None) -> Report:
    timing = {} if timing is None else timing
    suites = {}
    for suite in SUITE_NAMES:
        if suite not in config.suites:
            continue
        logger.info("開始 suite %s：seeds %d..%d, dims %s", suite, config.seed,
                    config.seed + config.n_instances - 1, config.dims)
        suites[suite] = summarize(run_single_suite(suite, config, timing=timing))
        logger.info("suite %s 完成：%d 通過、%d 失敗、%d 只回報", suite,
                    suites[suite].passed, suites[suite].failed, suites[suite].reported)
    return build_report(config, suites, timing)


def merge_reports(reports: list[Report]) -> Report:
    """把多份 report 的 suite 紀錄串起來，重新計算 worst / failures"""
    if not reports:
        return Report()
    suites: dict[str, list[CheckRecord]] = {}
    timing: dict[str, float] = {}
    for index, report in enumerate(reports):
        for name, summary in report.suites.items():
            suites.setdefault(name, []).extend(summary.records)
        for key, value in report.timing.items():
            timing[f"{index}.{key}"] = value
    summaries = {
        name: summarize(sorted(records, key=lambda r: (r.seed, r.dim, r.function_id)))
        for name, records in suites.items()
    }
    failures = [r for summary in summaries.values() for r in summary.records if r.hard and not r.passed]
    return Report(
        version=reports[0].version,
        config={"merged": [report.config for report in reports]},
        suites=summaries,
        worst=worst_cases(summaries),
        failures=failures,
        lipschitz=lipschitz_report(summaries),
        timing=timing,
    )


# ─────────────────────────────────────────────────────────────
# 其他子命令
# ─────────────────────────────────────────────────────────────
def scalar_pair(lam: complex, mu: complex, d: float = 0.4) -> DissipativePair:
    return make_pair([[complex(lam)]], [[complex(mu) - complex(lam)]], d=d)


def xi_command(pair: DissipativePair, functions: list[AnalyticFunction], tol: float = 1e-8,
               t_nodes: int = 32, oracle: tuple[complex, complex] | None = None) -> dict:
    """跑 ξ pipeline；回傳 ssr 與摘要，寫檔交給 export"""
    ssr = xi_from_nu(pair, t_nodes=t_nodes, tol=tol)
    for f in functions:
        trace_formula_residual(pair, f, ssr)
    summary = {**ssr.to_dict(), "max_trace_residual": max(ssr.residuals.values(), default=0.0)}
    result = {"ssr": ssr, "summary": summary}
    if oracle is not None:
        lam, mu = oracle
        comparison = compare_with_scalar_oracle(ssr, lam, mu)
        summary["oracle"] = {"pairing_gap": comparison.pairing_gap, "pointwise_max": comparison.pointwise_max}
        result["oracle_xi"] = scalar_xi_oracle(lam, mu, ssr.s_grid).astype(complex)
    return result


def dilate_command(seed: int, dim: int, depths, gap: float = 0.25) -> dict:
    L = gen_pair(seed, dim, gap).L
    T = cayley(L)
    rows = []
    for N in depths:
        dilation = finite_dilation(T, N)
        check = resolvent_dilation_check(L, N, -1j)
        rows.append({
            "N": N,
            "dilation_dim": dilation.U.dim,
            "unitarity": unitarity_residual(dilation),
            "power_exactness": dilation_exactness(dilation),
            "resolvent_residual": check.residual,
            "resolvent_bound": check.bound,
            "deflated": check.deflated,
        })
    return {"seed": seed, "dim": dim, "T_norm": T.norm, "depths": rows}


def probe_multiplier_command(config: SuiteConfig, grid_sizes=None, kernel: str = "dd_flat") -> list[dict]:
    settings: MultiplierSettings = config.multiplier
    grid_sizes = settings.grid_sizes if grid_sizes is None else grid_sizes
    probe = rola_probe if kernel == "dd_flat" else reslip_probe
    results = []
    for _, f in tqdm(battery_items(config), desc="probe", leave=False):
        results.append(probe(f, grid_sizes, settings, seed=config.seed).to_dict())
    return results


# ─────────────────────────────────────────────────────────────
# 設定
# ─────────────────────────────────────────────────────────────
def _set_path(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"設定 {dotted}：{key} 不是 mapping")
    node[keys[-1]] = value


def parse_set_options(items) -> dict:
    """
    --set key.path=value 轉成覆寫 dict；值先當 JSON 解析，不行再當 YAML
    （gap=0.3、dims=[2,4]、pair_kind=generic 都可以）
    """
    overrides = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key or not raw:
            raise ConfigError(f"--set 需要 key.path=value 形式，收到 {item!r}")
        try:
            overrides[key] = orjson.loads(raw)
        except orjson.JSONDecodeError:
            try:
                overrides[key] = yaml.safe_load(raw)
            except yaml.YAMLError as e:
                raise ConfigError(f"--set {key} 的值無法解析：{raw!r}") from e
    return overrides


def _flatten(data: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{prefix}{key}."))
        else:
            flat[f"{prefix}{key}"] = value
    return flat


def config_overrides(config: SuiteConfig) -> dict:
    """與預設值不同的設定（a.b 形式），不含 repro 指令本身已帶的 key"""
    current = _flatten(config.model_dump(mode="json"))
    default = _flatten(SuiteConfig().model_dump(mode="json"))
    return {key: value for key, value in current.items()
            if key not in REPRO_KEYS and default.get(key) != value}


def _yaml_line(text: str, loc) -> str:
    """pydantic 錯誤的 loc 對回 YAML 節點的起始行；找不到就回空字串"""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return ""
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            node = next((value for key, value in node.value if key.value == str(part)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
        else:
            node = None
        if node is None:
            return ""
    return f"（第 {node.start_mark.line + 1} 行）"


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> SuiteConfig:
    """讀 YAML，套用 CLI 覆寫（key 可用 a.b 表示巢狀），再交給 pydantic 驗證"""
    data, text = {}, None
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"讀不到設定檔 {path}：{e}") from e
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f"第 {mark.line + 1} 行第 {mark.column + 1} 欄" if mark is not None else "未知位置"
            raise ConfigError(f"設定檔 {path} YAML 語法錯誤（{where}）：{getattr(e, 'problem', e)}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"設定檔 {path} 的最上層必須是 mapping")

    overridden = []
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_path(data, key, value)
            overridden.append(key)

    try:
        return SuiteConfig.model_validate(data)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            dotted = ".".join(str(part) for part in err["loc"])
            from_cli = any(dotted == key or dotted.startswith(f"{key}.") for key in overridden)
            where = "" if text is None or from_cli else _yaml_line(text, err["loc"])
            problems.append(f"{dotted}: {err['msg']}{where}")
        raise ConfigError(f"設定驗證失敗：{'; '.join(problems)}") from e
