from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from static.models import MultiplierBracket, DissipativePair
from static.payload import MultiplierSettings
from static.logger import logging
from function.funcalc import AnalyticFunction, apply, transplant_to_disk
from function.operator_core import cayley, resolvent_i
from function.doi import Kernel, kernel_eval

logger = logging.getLogger(__file__)

WEIGHT_FLOOR = 1e-14
FACTOR_TOL = 1e-8
CONVERGED_GAP = 1e-3
BOUNDED_GROWTH = 1.05


def grid_kernel(ker: Kernel, xs, ys) -> np.ndarray:
    """(ker(x_j, y_k))_{jk}"""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return np.asarray(kernel_eval(ker, xs[:, None].astype(complex), ys[None, :].astype(complex)), dtype=complex)


def probe_grid(n: int, scale: float = 1.0) -> np.ndarray:
    """x_k = scale·tan(−π/2 + π(k+½)/n)，對 0 對稱"""
    k = np.arange(n)
    return scale * np.tan(-np.pi / 2 + np.pi * (k + 0.5) / n)


def multiplier_action_norm(M: np.ndarray, X: np.ndarray) -> float:
    """‖M ∘ X‖"""
    return float(la.norm(M * X, 2))


# ─────────────────────────────────────────────────────────────
# 上界：對偶權重 (p, q) 的交替重新加權
# ─────────────────────────────────────────────────────────────
def _factor(M: np.ndarray, p: np.ndarray, q: np.ndarray):
    """
    N = D_p^{1/2} M D_q^{1/2} = UΣW*
    A = D_p^{-1/2}UΣ^{1/2}, B = Σ^{1/2}W*D_q^{-1/2}，A·B = M
    X = conj(U)Wᵀ，‖M∘X‖ ≥ ‖N‖_S1
    """
    sp, sq = np.sqrt(p), np.sqrt(q)
    N = sp[:, None] * M * sq[None, :]
    U, sigma, Wh = la.svd(N, full_matrices=False)
    root = np.sqrt(sigma)
    A = (U * root[None, :]) / sp[:, None]
    B = (root[:, None] * Wh) / sq[None, :]
    X = np.conj(U) @ np.conj(Wh)
    return A, B, X, float(sigma.sum())


def _row_norms(A: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(A) ** 2, axis=1))


def _col_norms(B: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(B) ** 2, axis=0))


def _normalize(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, WEIGHT_FLOOR)
    return v / v.sum()


def schur_upper(M, iters: int = 500, restarts: int = 32, stall: float = 1e-6, seed: int = 0):
    """
    min max-row(A)·max-col(B) over M = AB。
    回傳 (upper, A, B, X, converged)；X 是同一路徑上的對偶見證，順便給下界用
    """
    M = np.asarray(M, dtype=complex)
    n, m = M.shape
    if not np.any(M):
        return 0.0, np.zeros((n, 1), dtype=complex), np.zeros((1, m), dtype=complex), np.zeros((n, m)), True

    scale = max(1.0, float(np.max(np.abs(M))))
    rng = np.random.default_rng(seed)
    best_upper, best_A, best_B = np.inf, None, None
    best_dual, best_X = 0.0, None

    for restart in range(restarts):
        if restart == 0:
            p, q = np.full(n, 1.0 / n), np.full(m, 1.0 / m)
        else:
            p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
        p, q = _normalize(p), _normalize(q)
        local, checkpoint = np.inf, np.inf
        for it in range(iters):
            A, B, X, dual = _factor(M, p, q)
            rows, cols = _row_norms(A), _col_norms(B)
            upper = float(rows.max() * cols.max())
            local = min(local, upper)
            if upper < best_upper and la.norm(A @ B - M, 2) <= FACTOR_TOL * scale:
                best_upper, best_A, best_B = upper, A, B
            if dual > best_dual:
                best_dual, best_X = dual, X
            if best_upper - best_dual <= stall * best_upper:
                break
            if it % 10 == 9:
                # 每 10 步看一次這個 restart 是否還在下降
                if checkpoint - local <= stall * local:
                    break
                checkpoint = local
            p, q = _normalize(p * rows ** 2), _normalize(q * cols ** 2)
        if best_upper - best_dual <= stall * best_upper:
            break

    if best_A is None:
        # 所有候選都沒通過 A·B = M 的驗證：退回平凡分解 M = M·I
        best_A, best_B = M.copy(), np.eye(m, dtype=complex)
        best_upper = float(_row_norms(M).max())
    converged = best_upper - best_dual <= CONVERGED_GAP * best_upper
    if not converged:
        logger.info("schur_upper 未收斂：upper %.6g，對偶值 %.6g", best_upper, best_dual)
    return best_upper, best_A, best_B, best_X, converged


# ─────────────────────────────────────────────────────────────
# 下界：收縮見證
# ─────────────────────────────────────────────────────────────
def _contraction_from_weights(M: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    G = np.conj(a)[:, None] * M * b[None, :]
    U, _, Wh = la.svd(G, full_matrices=False)
    return np.conj(U) @ np.conj(Wh)


def _witnesses(M: np.ndarray):
    n, m = M.shape
    yield np.eye(n, m, dtype=complex)
    j, k = np.unravel_index(np.argmax(np.abs(M)), M.shape)
    E = np.zeros((n, m), dtype=complex)
    E[j, k] = 1.0
    yield E


def schur_lower(M, trials: int = 8, seed: int = 0, iters: int = 100, start: np.ndarray | None = None):
    """sup ‖M∘X‖ over ‖X‖ ≤ 1 的下界；回傳 (lower, X)"""
    M = np.asarray(M, dtype=complex)
    n, m = M.shape
    if not np.any(M):
        return 0.0, np.zeros((n, m), dtype=complex)

    candidates = list(_witnesses(M))
    if start is not None:
        candidates.append(np.asarray(start, dtype=complex))
    best, best_X = -1.0, None
    for X in candidates:
        value = multiplier_action_norm(M, X)
        if value > best:
            best, best_X = value, X

    rng = np.random.default_rng(seed)
    for trial in range(trials):
        if trial == 0:
            a, b = np.full(n, n ** -0.5), np.full(m, m ** -0.5)
        else:
            a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            b = rng.standard_normal(m) + 1j * rng.standard_normal(m)
            a, b = a / la.norm(a), b / la.norm(b)
        last = -1.0
        for _ in range(iters):
            X = _contraction_from_weights(M, a, b)
            action = M * X
            value = float(la.norm(action, 2))
            if value > best:
                best, best_X = value, X
            if value - last <= 1e-12 * max(1.0, value):
                break
            last = value
            U, _, Wh = la.svd(action)
            a, b = U[:, 0], np.conj(Wh[0])
    return best, best_X


def schur_bracket(M, settings: MultiplierSettings | None = None, kernel_id: str = "matrix",
                  xs=None, ys=None, seed: int = 0) -> MultiplierBracket:
    settings = settings or MultiplierSettings()
    M = np.asarray(M, dtype=complex)
    upper, A, B, X_dual, converged = schur_upper(M, settings.iters, settings.restarts, settings.stall, seed)
    lower, X = schur_lower(M, settings.trials, seed, start=X_dual)
    xs = np.arange(M.shape[0], dtype=float) if xs is None else np.asarray(xs, dtype=float)
    ys = np.arange(M.shape[1], dtype=float) if ys is None else np.asarray(ys, dtype=float)
    return MultiplierBracket(
        kernel_id=kernel_id, xs=xs, ys=ys, lower=lower, upper=max(upper, lower),
        factor_A=A, factor_B=B, contraction=X, converged=converged,
    )


# ─────────────────────────────────────────────────────────────
# 對電池函數的探測
# ─────────────────────────────────────────────────────────────
@dataclass
class ProbeResult:
    function_id: str
    kernel_form: str
    brackets: list[MultiplierBracket]
    limit_constant: complex
    transplant: list["TransplantSample"] = field(default_factory=list)

    @property
    def trend(self) -> str:
        """最後兩個網格的 upper 比值；有界只是證據，不是證明"""
        uppers = [b.upper for b in self.brackets]
        if len(uppers) < 2 or uppers[-2] == 0:
            return "bounded" if not uppers or uppers[-1] == 0 else "inconclusive"
        return "bounded" if uppers[-1] <= BOUNDED_GROWTH * uppers[-2] else "growing"

    def to_dict(self):
        return {
            "function_id": self.function_id,
            "kernel": self.kernel_form,
            "limit_at_infinity": [self.limit_constant.real, self.limit_constant.imag],
            "trend": self.trend,
            "brackets": [{**b.to_dict(), "trend": self.trend} for b in self.brackets],
            "transplant": [s.to_dict() for s in self.transplant],
        }


def _probe(ker: Kernel, f: AnalyticFunction, grid_sizes, settings: MultiplierSettings, seed: int) -> ProbeResult:
    brackets = []
    for n in grid_sizes:
        xs = probe_grid(int(n))
        brackets.append(schur_bracket(grid_kernel(ker, xs, xs), settings, ker.kernel_id, xs, xs, seed))
        logger.debug("%s n=%d: [%.6g, %.6g]", ker.kernel_id, n, brackets[-1].lower, brackets[-1].upper)
    return ProbeResult(f.function_id, ker.form, brackets, resolvent_limit_constant(f))


def rola_probe(f: AnalyticFunction, grid_sizes=None, settings: MultiplierSettings | None = None,
               seed: int = 0) -> ProbeResult:
    """𝔇♭f 在巢狀網格上的 multiplier 括號"""
    settings = settings or MultiplierSettings()
    grid_sizes = settings.grid_sizes if grid_sizes is None else grid_sizes
    return _probe(Kernel.dd_flat(f), f, grid_sizes, settings, seed)


@dataclass(frozen=True)
class TransplantSample:
    numerator_gap: float
    ratio_resolvent: float
    ratio_disk: float

    def to_dict(self):
        return {"numerator_gap": self.numerator_gap, "ratio_resolvent": self.ratio_resolvent,
                "ratio_disk": self.ratio_disk}


def transplant_sample(f: AnalyticFunction, pair: DissipativePair) -> TransplantSample:
    """
    ‖f(M) − f(L)‖ 與 ‖φ(V) − φ(U)‖ 應相等；V − U = −2i(R_M − R_L)，
    所以 resolvent 那邊的比值是圓盤那邊的兩倍
    """
    phi = transplant_to_disk(f)
    U, V = cayley(pair.L), cayley(pair.M)
    op_gap = float(la.norm(apply(f, pair.M).entries - apply(f, pair.L).entries, 2))
    disk_gap = float(la.norm(phi.apply(V).entries - phi.apply(U).entries, 2))
    res_gap = float(la.norm(resolvent_i(pair.M) - resolvent_i(pair.L), 2))
    cay_gap = float(la.norm(V.entries - U.entries, 2))
    return TransplantSample(
        numerator_gap=abs(op_gap - disk_gap),
        ratio_resolvent=op_gap / res_gap if res_gap > 0 else 0.0,
        ratio_disk=disk_gap / cay_gap if cay_gap > 0 else 0.0,
    )


def reslip_probe(f: AnalyticFunction, grid_sizes=None, settings: MultiplierSettings | None = None,
                 pairs=(), seed: int = 0) -> ProbeResult:
    """(z+i)(w+i)𝔇f 的 multiplier 括號，加上對抽樣 pair 的 Cayley 移植比值"""
    settings = settings or MultiplierSettings()
    grid_sizes = settings.grid_sizes if grid_sizes is None else grid_sizes
    result = _probe(Kernel.res_dd(f), f, grid_sizes, settings, seed)
    result.transplant = [transplant_sample(f, pair) for pair in pairs]
    return result


def resolvent_limit_constant(f: AnalyticFunction) -> complex:
    """lim_{|z|→∞} f(z)，只回報"""
    return complex(f.limit_at_infinity())
