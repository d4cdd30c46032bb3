from dataclasses import dataclass, field, replace

import numpy as np

from static.models import OperatorMatrix
from static.util import (
    DomainError, PoleError, ConditioningError, NonDissipativeError, ArgumentError,
)
from static.logger import logging

logger = logging.getLogger(__file__)

DEFAULT_POLE_GAP = 0.5
CONDITION_GATE = 1e8
PROJECTION_TOL = 1e-10


def _check_domain(*points):
    for z in points:
        if np.any(np.imag(z) < 0):
            raise DomainError("只能在閉上半平面 Im z ≥ 0 求值")


def _fmt(z: complex) -> str:
    z = complex(z)
    # 去掉 -0
    z = complex(z.real + 0.0, z.imag + 0.0)
    return f"{z.real:g}{z.imag:+g}j"


# ─────────────────────────────────────────────────────────────
# 運算式樹
# 每個節點都給出 value / deriv / dd 的封閉式；dd 在對角線上自動等於導數，
# 不做任何差商相減。
# ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class AnalyticFunction:
    tag: str = field(default="", kw_only=True, compare=False)

    def value(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def dd(self, z, w):
        raise NotImplementedError

    def limit_at_infinity(self) -> complex:
        raise NotImplementedError

    def poles(self) -> tuple[complex, ...]:
        return ()

    def describe(self) -> str:
        raise NotImplementedError

    @property
    def function_id(self) -> str:
        return self.tag or self.describe()

    # 公開介面：都先檢查定義域
    def evaluate(self, z):
        _check_domain(z)
        return self.value(np.asarray(z, dtype=complex))

    def derivative(self, z):
        _check_domain(z)
        return self.deriv(np.asarray(z, dtype=complex))

    def divided_diff(self, z, w):
        _check_domain(z, w)
        return self.dd(np.asarray(z, dtype=complex), np.asarray(w, dtype=complex))

    def named(self, tag: str) -> "AnalyticFunction":
        return replace(self, tag=tag)

    def __add__(self, other):
        return Sum((self, as_function(other)))

    __radd__ = __add__

    def __mul__(self, other):
        return Product(self, as_function(other))

    def __rmul__(self, other):
        return Product(as_function(other), self)


@dataclass(frozen=True)
class Const(AnalyticFunction):
    c: complex = 0j

    def value(self, z):
        return np.full(np.shape(z), complex(self.c))

    def deriv(self, z):
        return np.zeros(np.shape(z), dtype=complex)

    def dd(self, z, w):
        return np.zeros(np.broadcast_shapes(np.shape(z), np.shape(w)), dtype=complex)

    def limit_at_infinity(self):
        return complex(self.c)

    def describe(self):
        return _fmt(self.c)


@dataclass(frozen=True)
class Pole(AnalyticFunction):
    """(z − p)^{-1}，Im p ≤ −gap"""
    p: complex = -1j
    gap: float = DEFAULT_POLE_GAP

    def __post_init__(self):
        if complex(self.p).imag > -self.gap:
            raise PoleError(f"極點 {self.p} 不在 Im p ≤ −{self.gap} 的區域")

    def value(self, z):
        return 1.0 / (z - self.p)

    def deriv(self, z):
        return -1.0 / (z - self.p) ** 2

    def dd(self, z, w):
        return -1.0 / ((z - self.p) * (w - self.p))

    def limit_at_infinity(self):
        return 0j

    def poles(self):
        return (complex(self.p),)

    def describe(self):
        return f"pole({_fmt(self.p)})"


@dataclass(frozen=True)
class Sum(AnalyticFunction):
    terms: tuple[AnalyticFunction, ...] = ()

    def value(self, z):
        return sum((f.value(z) for f in self.terms), np.zeros(np.shape(z), dtype=complex))

    def deriv(self, z):
        return sum((f.deriv(z) for f in self.terms), np.zeros(np.shape(z), dtype=complex))

    def dd(self, z, w):
        shape = np.broadcast_shapes(np.shape(z), np.shape(w))
        return sum((f.dd(z, w) for f in self.terms), np.zeros(shape, dtype=complex))

    def limit_at_infinity(self):
        return sum(f.limit_at_infinity() for f in self.terms)

    def poles(self):
        return tuple(p for f in self.terms for p in f.poles())

    def describe(self):
        return "(" + " + ".join(f.function_id for f in self.terms) + ")"


@dataclass(frozen=True)
class Product(AnalyticFunction):
    left: AnalyticFunction = field(default_factory=Const)
    right: AnalyticFunction = field(default_factory=Const)

    def value(self, z):
        return self.left.value(z) * self.right.value(z)

    def deriv(self, z):
        return self.left.deriv(z) * self.right.value(z) + self.left.value(z) * self.right.deriv(z)

    def dd(self, z, w):
        # 𝔇(fg)(z,w) = f(z)·𝔇g(z,w) + 𝔇f(z,w)·g(w)
        return self.left.value(z) * self.right.dd(z, w) + self.left.dd(z, w) * self.right.value(w)

    def limit_at_infinity(self):
        return self.left.limit_at_infinity() * self.right.limit_at_infinity()

    def poles(self):
        return self.left.poles() + self.right.poles()

    def describe(self):
        return f"{self.left.function_id}*{self.right.function_id}"


def _blaschke(z):
    return (z - 1j) / (z + 1j)


@dataclass(frozen=True)
class DiskPoly(AnalyticFunction):
    """P(b(z))，b(z) = (z−i)/(z+i)，coeffs 由低次到高次"""
    coeffs: tuple[complex, ...] = (0j, 1 + 0j)

    def _poly(self, u):
        out = np.zeros(np.shape(u), dtype=complex)
        for a in reversed(self.coeffs):
            out = out * u + a
        return out

    def _poly_deriv(self, u):
        out = np.zeros(np.shape(u), dtype=complex)
        for k in range(len(self.coeffs) - 1, 0, -1):
            out = out * u + k * self.coeffs[k]
        return out

    def _poly_dd(self, u, v):
        # 𝔇P(u,v) = Σ_k a_k Σ_{j<k} u^j v^{k−1−j}，沒有相減
        shape = np.broadcast_shapes(np.shape(u), np.shape(v))
        out = np.zeros(shape, dtype=complex)
        h = np.zeros(shape, dtype=complex)  # h_k = Σ_{j<k} u^j v^{k−1−j}
        u_pow = np.ones(np.shape(u), dtype=complex)
        for k in range(1, len(self.coeffs)):
            h = h * v + u_pow
            u_pow = u_pow * u
            out = out + self.coeffs[k] * h
        return out

    def value(self, z):
        return self._poly(_blaschke(z))

    def deriv(self, z):
        return self._poly_deriv(_blaschke(z)) * 2j / (z + 1j) ** 2

    def dd(self, z, w):
        return self._poly_dd(_blaschke(z), _blaschke(w)) * 2j / ((z + 1j) * (w + 1j))

    def limit_at_infinity(self):
        return complex(sum(self.coeffs))

    def describe(self):
        return "disk[" + ",".join(_fmt(a) for a in self.coeffs) + "]"


def as_function(value) -> AnalyticFunction:
    if isinstance(value, AnalyticFunction):
        return value
    return Const(complex(value))


def constant(c: complex) -> AnalyticFunction:
    return Const(complex(c))


def pole(p: complex, gap: float = DEFAULT_POLE_GAP) -> AnalyticFunction:
    return Pole(complex(p), gap)


def resolvent_power(n: int, p: complex = -1j) -> AnalyticFunction:
    """(z − p)^{-n}"""
    if n < 1:
        raise ArgumentError("n 必須 >= 1")
    f: AnalyticFunction = Pole(complex(p))
    for _ in range(n - 1):
        f = Product(f, Pole(complex(p)))
    return f


def blaschke() -> AnalyticFunction:
    """b(z) = (z − i)/(z + i)"""
    return DiskPoly((0j, 1 + 0j))


# ─────────────────────────────────────────────────────────────
# 模組層級的操作
# ─────────────────────────────────────────────────────────────
def evaluate(f: AnalyticFunction, z):
    return f.evaluate(z)


def divided_diff(f: AnalyticFunction, z, w):
    return f.divided_diff(z, w)


def shrink_by_pole(f: AnalyticFunction) -> AnalyticFunction:
    """f_i = f·(z + i)^{-1}"""
    return Product(f, Pole(-1j))


def spectral_path(X: OperatorMatrix, tol: float | None = None):
    """
    eigen-path 的共同前處理：條件數閘門、非 dissipative 偵測、
    把 (−tol, 0) 的微小負虛部投影到實軸。
    回傳 (投影後特徵值, V, V^{-1})
    """
    spec = X.spectral
    if not spec.condition <= CONDITION_GATE:
        raise ConditioningError(f"特徵向量條件數 {spec.condition:.3e} 超過 {CONDITION_GATE:.0e}")
    tol = PROJECTION_TOL * max(1.0, X.norm) if tol is None else tol
    lam = spec.eigenvalues
    if np.any(lam.imag < -tol):
        raise NonDissipativeError(f"特徵值虛部 {lam.imag.min():.3e} < −{tol:.1e}")
    lam = lam.real + 1j * np.maximum(lam.imag, 0.0)
    return lam, spec.vectors, spec.inverse


def apply(f: AnalyticFunction, L) -> OperatorMatrix:
    """f(L) = V·diag(f(λ_j))·V^{-1}"""
    L = OperatorMatrix.of(L)
    lam, V, V_inv = spectral_path(L)
    return OperatorMatrix((V * f.value(lam)[None, :]) @ V_inv)


def apply_unbounded_form(f: AnalyticFunction, L) -> OperatorMatrix:
    """(L + iI)·f_i(L)"""
    L = OperatorMatrix.of(L)
    return L.shifted(1j) @ apply(shrink_by_pole(f), L)


# ─────────────────────────────────────────────────────────────
# 單位圓盤上的移植
# ─────────────────────────────────────────────────────────────
def omega(zeta):
    """ω(ζ) = i(1+ζ)/(1−ζ)，b 的反函數"""
    return 1j * (1 + zeta) / (1 - zeta)


@dataclass(frozen=True)
class DiskFunction:
    """φ = f∘ω，定義在閉單位圓盤扣掉 1"""
    f: AnalyticFunction
    pole_tol: float = 1e-14

    @property
    def function_id(self) -> str:
        return f"disk({self.f.function_id})"

    def evaluate(self, zeta):
        zeta = np.asarray(zeta, dtype=complex)
        if np.any(np.abs(zeta - 1) <= self.pole_tol):
            raise PoleError("φ 在 ζ = 1 沒有定義")
        if np.any(np.abs(zeta) > 1 + PROJECTION_TOL):
            raise DomainError("φ 只能在閉單位圓盤上求值")
        z = omega(zeta)
        return self.f.value(z.real + 1j * np.maximum(z.imag, 0.0))

    def apply(self, T) -> OperatorMatrix:
        """φ(T) = V·diag(φ(ζ_j))·V^{-1}"""
        T = OperatorMatrix.of(T)
        spec = T.spectral
        if not spec.condition <= CONDITION_GATE:
            raise ConditioningError(f"特徵向量條件數 {spec.condition:.3e} 超過 {CONDITION_GATE:.0e}")
        zeta = spec.eigenvalues
        radius = np.abs(zeta)
        if np.any(radius > 1 + PROJECTION_TOL * max(1.0, T.norm)):
            raise NonDissipativeError(f"T 的譜半徑 {radius.max():.12g} > 1")
        zeta = np.where(radius > 1, zeta / np.maximum(radius, 1e-300), zeta)
        values = self.evaluate(zeta)
        return OperatorMatrix((spec.vectors * values[None, :]) @ spec.inverse)


def transplant_to_disk(f: AnalyticFunction) -> DiskFunction:
    return DiskFunction(f)


# ─────────────────────────────────────────────────────────────
# 測試函數庫
# ─────────────────────────────────────────────────────────────
def battery(kind: str, count: int = 3, poles=None, disk_degree: int = 2,
            pole_gap: float = DEFAULT_POLE_GAP) -> list[AnalyticFunction]:
    """
    確定性的函數列表；(z+i)f 都是有界有理函數。
    kind ∈ {resolvent_powers, lower_poles, disk_polys, mixed}
    """
    if poles is None:
        poles = [(0.0, -2.0), (1.0, -1.0), (-1.0, -0.5)]
    ps = [_as_complex(p) for p in poles]

    if kind == "resolvent_powers":
        return [resolvent_power(k).named(f"res^{k}") for k in range(1, count + 1)]

    if kind == "lower_poles":
        return [Pole(p, pole_gap).named(f"pole({_fmt(p)})") for p in ps]

    if kind == "disk_polys":
        members = [DiskPoly(tuple([0j] * k + [1 + 0j])).named(f"b^{k}") for k in range(1, disk_degree + 1)]
        mean = tuple([1.0 / (disk_degree + 1) + 0j] * (disk_degree + 1))
        members.append(DiskPoly(mean).named(f"mean_b^{disk_degree}"))
        return members

    if kind == "mixed":
        p1, p2 = (ps + [-2j, -1j])[:2]
        return [
            Product(Pole(-1j), blaschke()).named("res*b"),
            Sum((Const(1 + 0j), Pole(-2j))).named("1+pole(-2j)"),
            Sum((Product(Pole(p1, pole_gap), Pole(p2, pole_gap)), 0.5 * blaschke())).named("pole*pole+b/2"),
        ]

    raise ArgumentError(f"未知的 battery 種類：{kind}")


def _as_complex(p) -> complex:
    """設定檔裡的極點寫成 [re, im]"""
    if isinstance(p, (int, float, complex, np.number)):
        return complex(p)
    re, im = p
    return complex(re, im)


@dataclass(frozen=True)
class RolaCertificate:
    function_id: str
    sup_value: float
    sup_derivative: float
    tail_constant: float
    decays: bool
    passed: bool


def certify_rola(f: AnalyticFunction, kind: str | None = None, n_samples: int = 1000,
                 derivative_bound: float = 1e8) -> RolaCertificate:
    """
    抽樣檢查 g(x) = (x+i)f(x) 在 ℝ 上導數有界；
    resolvent_powers / lower_poles 另外要求 |x f(x)| 在尾端不增長。
    只是證據，不是證明。
    """
    theta = -np.pi / 2 + np.pi * (np.arange(n_samples) + 0.5) / n_samples
    x = np.tan(theta).astype(complex)
    fx = f.value(x)
    g = (x + 1j) * fx
    dg = fx + (x + 1j) * f.deriv(x)
    sup_value = float(np.max(np.abs(g)))
    sup_derivative = float(np.max(np.abs(dg)))

    ax = np.abs(x.real)
    xf = np.abs(x * fx)
    far = ax >= 0.5 * ax.max()
    mid = (ax >= 100) & ~far
    tail_constant = float(np.max(xf[ax >= 100])) if np.any(ax >= 100) else 0.0
    # O(1/|x|) 衰減 ⇔ |x f(x)| 在最遠端不比中段大
    decays = bool(np.max(xf[far]) <= 1.5 * np.max(xf[mid]) + 1e-12) if np.any(mid) else True

    passed = bool(np.all(np.isfinite(dg)) and sup_derivative <= derivative_bound)
    if kind in ("resolvent_powers", "lower_poles"):
        passed = passed and decays
    return RolaCertificate(f.function_id, sup_value, sup_derivative, tail_constant, decays, passed)
