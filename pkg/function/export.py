from pathlib import Path

import numpy as np
import orjson
import pandas as pd

from static.payload import Report, SuiteConfig
from static.models import SpectralShiftResult, OperatorMatrix
from static.util import matrix_to_hex_text, hex_text_to_matrices
from static.logger import logging
from function.semispectral import density_stack
from function.harness import gen_pair

logger = logging.getLogger(__file__)

FLOAT_FORMAT = "%.17g"
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


# ---------- 共用：路徑與 JSON ----------
def _ensure_parent(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _json_default(value):
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"無法序列化 {type(value).__name__}")


def to_json_bytes(payload) -> bytes:
    return orjson.dumps(payload, default=_json_default, option=JSON_OPTIONS)


def write_json(payload, path) -> Path:
    path = _ensure_parent(path)
    path.write_bytes(to_json_bytes(payload))
    return path


def write_report(report: Report, path) -> Path:
    """report.json；timing 子樹以外的內容只由設定決定"""
    path = write_json(report.model_dump(mode="json"), path)
    logger.info("report 寫入 %s", path)
    return path


def read_report(path) -> Report:
    return Report.model_validate(orjson.loads(Path(path).read_bytes()))


# ---------- CSV ----------
def _write_frame(df: pd.DataFrame, path) -> Path:
    path = _ensure_parent(path)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def xi_frame(s, xi) -> pd.DataFrame:
    df = pd.DataFrame({"s": np.asarray(s, dtype=float),
                       "re_xi": np.real(xi).astype(float),
                       "im_xi": np.imag(xi).astype(float)})
    return df.sort_values("s", kind="mergesort").reset_index(drop=True)


def write_xi_csv(ssr: SpectralShiftResult, path) -> Path:
    """欄位 s, re_xi, im_xi，依 s 排序"""
    return _write_frame(xi_frame(ssr.s_grid, ssr.xi), path)


def write_oracle_csv(s, values, path) -> Path:
    return _write_frame(xi_frame(s, values), path)


def write_density_csv(L, xs, path) -> Path:
    """每列：x，接著 ρ_L(x) 的 row-major 元素，re/im 交錯"""
    L = OperatorMatrix.of(L)
    xs = np.asarray(xs, dtype=float)
    rho = density_stack(L, xs).reshape(len(xs), -1)
    columns = {"x": xs}
    for k in range(rho.shape[1]):
        i, j = divmod(k, L.dim)
        columns[f"re_{i}_{j}"] = rho[:, k].real
        columns[f"im_{i}_{j}"] = rho[:, k].imag
    return _write_frame(pd.DataFrame(columns), path)


def records_frame(report: Report) -> pd.DataFrame:
    """所有 suite 的 CheckRecord 攤平成一張表"""
    rows = [record.model_dump() for summary in report.suites.values() for record in summary.records]
    columns = list(rows[0].keys()) if rows else ["suite", "check", "seed", "dim", "function_id", "residual"]
    return pd.DataFrame(rows, columns=columns)


def write_residual_table(report: Report, path) -> Path:
    return _write_frame(records_frame(report), path)


# ---------- 失敗重播檔 ----------
def failure_filename(record) -> str:
    fid = "".join(ch if ch.isalnum() or ch in "-_.=" else "_" for ch in record.function_id)
    return f"{record.suite}_{record.check}_s{record.seed}_d{record.dim}_{fid}.txt"


def write_failures(report: Report, config: SuiteConfig, out_dir) -> list[Path]:
    """
    每個失敗寫一個 failures/*.txt：標頭是重現指令，接著 L、K 的 hex float 文字。
    矩陣由 gen_pair 依 (seed, dim) 重新產生
    """
    out_dir = Path(out_dir) / "failures"
    written = []
    for record in report.failures:
        lines = [f"# repro: {record.repro}", f"# detail: {' '.join(record.detail.split())}"]
        try:
            pair = gen_pair(record.seed, record.dim, config.gap, config.pair_kind, config.s1_norm, config.d)
            lines.append(matrix_to_hex_text("L", pair.L.entries).rstrip("\n"))
            lines.append(matrix_to_hex_text("K", pair.K.entries).rstrip("\n"))
        except Exception as e:
            error_class = e.__class__.__name__
            logger.error(f"write_failures Error: [{error_class}] detail: {e}")
        path = _ensure_parent(out_dir / failure_filename(record))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def load_matrix_dump(path) -> dict[str, np.ndarray]:
    """讀回 failures/*.txt；開頭的註解行略過"""
    text = Path(path).read_text(encoding="utf-8")
    body = []
    for line in text.splitlines():
        if line.startswith(("# repro:", "# detail:")):
            continue
        body.append(line)
    return hex_text_to_matrices("\n".join(body))
