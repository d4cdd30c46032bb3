from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la
from numpy.polynomial.legendre import leggauss

from static.logger import get_logger
from static.util import DimensionError, ArgumentError

logger = get_logger(__file__)


# ─────────────────────────────────────────────────────────────
# 矩陣與譜資料
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class SpectralData:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    inverse: np.ndarray
    condition: float
    residual: float

    def to_dict(self):
        return {
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
            "condition": float(self.condition),
            "residual": float(self.residual),
        }


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """
    稠密複數方陣；L, M, K, C, T, U, V, Q 都用它表示。
    建立後不可變，譜分解在第一次使用時才計算並快取。
    """
    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=complex)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise DimensionError(f"需要非空方陣，收到 shape={arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @classmethod
    def of(cls, value) -> "OperatorMatrix":
        return value if isinstance(value, cls) else cls(value)

    @classmethod
    def identity(cls, dim: int) -> "OperatorMatrix":
        return cls(np.eye(dim, dtype=complex))

    @classmethod
    def zeros(cls, dim: int) -> "OperatorMatrix":
        return cls(np.zeros((dim, dim), dtype=complex))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def H(self) -> "OperatorMatrix":
        return OperatorMatrix(self.entries.conj().T)

    @property
    def imag_part(self) -> np.ndarray:
        """Im X = (X − X*)/(2i)，Hermitian"""
        X = self.entries
        return (X - X.conj().T) / 2j

    @property
    def real_part(self) -> np.ndarray:
        X = self.entries
        return (X + X.conj().T) / 2

    @cached_property
    def norm(self) -> float:
        return float(la.norm(self.entries, 2))

    @cached_property
    def spectral(self) -> SpectralData:
        X = self.entries
        w, V = la.eig(X)
        try:
            V_inv = la.inv(V)
            condition = float(np.linalg.cond(V))
        except la.LinAlgError:
            V_inv = np.full_like(V, np.nan)
            condition = float("inf")
        scale = max(self.norm, 1.0) * max(float(la.norm(V, 2)), 1.0)
        residual = float(la.norm(X @ V - V * w[None, :], 2)) / scale
        return SpectralData(eigenvalues=w, vectors=V, inverse=V_inv, condition=condition, residual=residual)

    def shifted(self, value: complex) -> "OperatorMatrix":
        """X + value·I"""
        return OperatorMatrix(self.entries + value * np.eye(self.dim))

    def __add__(self, other):
        return OperatorMatrix(self.entries + OperatorMatrix.of(other).entries)

    def __sub__(self, other):
        return OperatorMatrix(self.entries - OperatorMatrix.of(other).entries)

    def __matmul__(self, other):
        return OperatorMatrix(self.entries @ OperatorMatrix.of(other).entries)

    def __mul__(self, scalar: complex):
        return OperatorMatrix(self.entries * scalar)

    __rmul__ = __mul__

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def to_dict(self):
        return {
            "dim": self.dim,
            "re": self.entries.real.tolist(),
            "im": self.entries.imag.tolist(),
        }


# ─────────────────────────────────────────────────────────────
# 擾動對與路徑
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class DissipativePair:
    L: OperatorMatrix
    K: OperatorMatrix
    M: OperatorMatrix
    C: OperatorMatrix
    c: float
    d: float
    kind: str = "custom"
    seed: int | None = None

    @property
    def dim(self) -> int:
        return self.L.dim

    def L_t(self, t: float) -> OperatorMatrix:
        return OperatorMatrix(self.L.entries + t * self.K.entries)

    def to_dict(self):
        return {
            "kind": self.kind,
            "seed": self.seed,
            "dim": self.dim,
            "c": self.c,
            "d": self.d,
            "L": self.L.to_dict(),
            "K": self.K.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class PathFamily:
    pair: DissipativePair
    t_grid: tuple[float, ...]

    def __post_init__(self):
        ts = tuple(float(t) for t in self.t_grid)
        if any(t < 0 or t > 1 for t in ts) or list(ts) != sorted(ts):
            raise ArgumentError("t_grid 必須是 [0,1] 內的遞增序列")
        object.__setattr__(self, "t_grid", ts)

    def operators(self) -> list[OperatorMatrix]:
        return [self.pair.L_t(t) for t in self.t_grid]


# ─────────────────────────────────────────────────────────────
# 數值積分網格
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class QuadratureGrid:
    """
    x = tan θ 換元後的複合 Gauss–Legendre 規則。
    breakpoints 是 θ 座標，頭尾可以是 ±π/2（也就是 ±∞）。
    """
    breakpoints: tuple[float, ...]
    nodes_per_panel: int = 16
    tol: float = 1e-8
    centers: tuple[float, ...] = ()

    @property
    def panels(self) -> list[tuple[float, float]]:
        """x 座標下的面板端點"""
        th = self.breakpoints
        return [(_tan(a), _tan(b)) for a, b in zip(th[:-1], th[1:])]

    @cached_property
    def rule(self) -> tuple[np.ndarray, np.ndarray]:
        t, w = leggauss(self.nodes_per_panel)
        th = np.asarray(self.breakpoints)
        lo, hi = th[:-1, None], th[1:, None]
        theta = (0.5 * (hi - lo) * t[None, :] + 0.5 * (hi + lo)).ravel()
        w_theta = (0.5 * (hi - lo) * w[None, :]).ravel()
        x = np.tan(theta)
        return x, w_theta * (1.0 + x * x)

    @property
    def size(self) -> int:
        return (len(self.breakpoints) - 1) * self.nodes_per_panel

    def refined(self) -> "QuadratureGrid":
        return QuadratureGrid(self.breakpoints, 2 * self.nodes_per_panel, self.tol, self.centers)

    def to_dict(self):
        return {
            "panels": len(self.breakpoints) - 1,
            "nodes_per_panel": self.nodes_per_panel,
            "nodes": self.size,
            "tol": self.tol,
            "centers": list(self.centers),
        }


def _tan(theta: float) -> float:
    if theta <= -np.pi / 2:
        return float("-inf")
    if theta >= np.pi / 2:
        return float("inf")
    return float(np.tan(theta))


# ─────────────────────────────────────────────────────────────
# 伸張、乘子、譜位移結果
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class FiniteDilation:
    T: OperatorMatrix
    N: int
    U: OperatorMatrix

    @property
    def embedding(self) -> slice:
        return slice(0, self.T.dim)

    def compress(self, X: np.ndarray) -> np.ndarray:
        """P X|H"""
        h = self.embedding
        return np.asarray(X)[h, h]

    def to_dict(self):
        return {"dim": self.T.dim, "N": self.N, "size": self.U.dim}


@dataclass(frozen=True, eq=False)
class MultiplierBracket:
    kernel_id: str
    xs: np.ndarray
    ys: np.ndarray
    lower: float
    upper: float
    factor_A: np.ndarray
    factor_B: np.ndarray
    contraction: np.ndarray
    converged: bool = False

    def to_dict(self):
        return {
            "function_id": self.kernel_id,
            "grid_size": int(len(self.xs)),
            "lower": self.lower,
            "upper": self.upper,
            "converged": self.converged,
        }


@dataclass
class SpectralShiftResult:
    s_grid: np.ndarray
    weights: np.ndarray
    xi: np.ndarray
    weight_integral: float
    weight_integral_refined: float
    mass: complex
    t_nodes: int
    grid: QuadratureGrid
    residuals: dict[str, float] = field(default_factory=dict)
    seed: int | None = None

    @property
    def weight_stability(self) -> float:
        base = max(abs(self.weight_integral_refined), 1e-300)
        if self.weight_integral == 0 and self.weight_integral_refined == 0:
            return 0.0
        return abs(self.weight_integral - self.weight_integral_refined) / base

    def to_dict(self):
        return {
            "weight_integral": self.weight_integral,
            "weight_stability": self.weight_stability,
            "residuals": dict(sorted(self.residuals.items())),
            "grid_meta": {**self.grid.to_dict(), "t_nodes": self.t_nodes},
            "mass": [float(np.real(self.mass)), float(np.imag(self.mass))],
            "seed": self.seed,
        }
