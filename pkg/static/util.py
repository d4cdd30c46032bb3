import time
import functools
from functools import wraps

import numpy as np

from static.payload import CheckRecord
from static.logger import logging

logger = logging.getLogger(__file__)


# ─────────────────────────────────────────────────────────────
# 例外
# ─────────────────────────────────────────────────────────────
class LabError(Exception):
    """實驗室所有錯誤的共同父類別"""


class DimensionError(LabError):
    pass


class ArgumentError(LabError):
    pass


class SingularityError(LabError):
    pass


class NonInvertibleError(LabError):
    pass


class ConditioningError(LabError):
    pass


class NonDissipativeError(LabError):
    pass


class DomainError(LabError):
    pass


class PoleError(LabError):
    pass


class SingularPartError(LabError):
    """譜太靠近實軸，密度表示不成立"""


class QuadratureError(LabError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContractionError(LabError):
    pass


class DilationDegeneracyError(LabError):
    pass


class PathDegeneracyError(LabError):
    pass


class OutOfScopeError(LabError):
    pass


class EndpointCollisionError(LabError):
    pass


class GenerationError(LabError):
    pass


class InvariantViolation(LabError):
    pass


class ConfigError(LabError):
    pass


# ─────────────────────────────────────────────────────────────
# 裝飾器
# ─────────────────────────────────────────────────────────────
def handle_check_exception(func):
    """
    包住單一檢查；任何例外都轉成失敗的 CheckRecord，不讓整個 suite 中斷。
    第一個參數必須是帶有 suite / seed / dim 的 instance context。
    """
    @wraps(func)
    def wrapper(ctx, *args, **kwargs):
        try:
            return func(ctx, *args, **kwargs)
        except LabError as lab_error:
            error_class = lab_error.__class__.__name__
            logger.error(f"{func.__name__} Error: [{error_class}] detail: {lab_error}")
            return [_failed_record(ctx, func.__name__, f"{error_class}: {lab_error}")]
        except Exception as e:
            error_message = f"{e.__class__.__name__}: {e}"
            logger.exception("An error occurred in %s: %s", func.__name__, error_message)
            return [_failed_record(ctx, func.__name__, error_message)]

    return wrapper


def _failed_record(ctx, check, detail):
    return CheckRecord(
        suite=ctx.suite,
        check=check.removeprefix("check_"),
        seed=ctx.seed,
        dim=ctx.dim,
        function_id="-",
        residual=float("inf"),
        tolerance=0.0,
        passed=False,
        hard=True,
        detail=detail,
    )


def measure_time(func):
    """
    量測函式執行時間並
    1. 以 logger.info() 紀錄
    2. 若呼叫時帶 timing=dict，把秒數寫進去（report 的 timing 子樹）
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed = round(time.perf_counter() - start, 6)
        key = func.__name__
        if args and isinstance(args[0], str):
            key = f"{key}.{args[0]}"
        logger.info("%s 花了 %.6f s", key, elapsed)

        timing = kwargs.get("timing")
        if isinstance(timing, dict):
            timing[key] = elapsed
        return result

    return wrapper


# ─────────────────────────────────────────────────────────────
# 矩陣文字格式（hex float，跨實作重播用）
# ─────────────────────────────────────────────────────────────
def matrix_to_hex_text(name: str, matrix) -> str:
    """每列為 re im re im ...，全部用 float.hex() 保留完整精度"""
    arr = np.atleast_2d(np.asarray(matrix, dtype=complex))
    rows, cols = arr.shape
    lines = [f"# {name} {rows} {cols}"]
    for row in arr:
        lines.append(" ".join(f"{float(v.real).hex()} {float(v.imag).hex()}" for v in row))
    return "\n".join(lines) + "\n"


def hex_text_to_matrices(text: str) -> dict[str, np.ndarray]:
    """matrix_to_hex_text 的反函式；一個檔案可含多個矩陣"""
    result = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    idx = 0
    while idx < len(lines):
        header = lines[idx].split()
        if header[0] != "#" or len(header) != 4:
            raise ValueError(f"矩陣標頭格式錯誤：{lines[idx]!r}")
        name, rows, cols = header[1], int(header[2]), int(header[3])
        arr = np.empty((rows, cols), dtype=complex)
        for r in range(rows):
            parts = lines[idx + 1 + r].split()
            if len(parts) != 2 * cols:
                raise ValueError(f"{name} 第 {r} 列欄位數不符")
            values = [float.fromhex(p) for p in parts]
            arr[r] = np.array(values[0::2]) + 1j * np.array(values[1::2])
        result[name] = arr
        idx += 1 + rows
    return result
