#app.py
from pathlib import Path
from typing import List, Optional

import numpy as np
import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

# static.models 匯入時就會建 logger，LAB_LOG_DIR / LAB_LOG_LEVEL 必須先進環境
load_dotenv(override=True)

from static.payload import cli  # noqa: E402
from static.util import LabError, ConfigError  # noqa: E402
from static.logger import logging  # noqa: E402
from function.operator_core import make_pair  # noqa: E402
from function.harness import (  # noqa: E402
    load_config, parse_set_options, run_suite, merge_reports, gen_pair, scalar_pair, battery_items,
    xi_command, dilate_command, probe_multiplier_command,
)
from function.export import (  # noqa: E402
    write_report, read_report, write_failures, write_residual_table,
    write_xi_csv, write_oracle_csv, write_json, write_density_csv,
)

logger = logging.getLogger(__file__)
console = Console()

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SET_HELP = "key.path=value 覆寫任一設定，可重複，例如 --set d=0.3 --set tolerances.trace=1e-7"


# ─────────────────────────────────────────────────────────────
# 共用
# ─────────────────────────────────────────────────────────────
def _int_list(text: Optional[str], name: str) -> Optional[list[int]]:
    """'2,4,8' → [2, 4, 8]"""
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"--{name} 必須是逗號分隔的整數，收到 {text!r}") from e


def _name_list(text: Optional[str]) -> Optional[list[str]]:
    if text is None:
        return None
    return [part.strip() for part in text.split(",") if part.strip()]


def _complex(text: Optional[str], name: str) -> Optional[complex]:
    if text is None:
        return None
    try:
        return complex(text.replace(" ", ""))
    except ValueError as e:
        raise typer.BadParameter(f"--{name} 需要像 0+1j 的複數，收到 {text!r}") from e


def _overrides(sets: Optional[List[str]], flags: dict) -> dict:
    """--set 先套，專用旗標後套；同一個 key 以旗標為準"""
    return {**parse_set_options(sets), **{key: value for key, value in flags.items() if value is not None}}


def _fail(context: str, error: Exception) -> typer.Exit:
    error_class = error.__class__.__name__
    logger.error(f"{context} Error: [{error_class}] detail: {error}")
    console.print(f"[red]{context} 失敗：[{error_class}] {error}[/red]")
    return typer.Exit(EXIT_CONFIG if isinstance(error, ConfigError) else EXIT_FAIL)


def _summary_table(report) -> Table:
    table = Table(title="suite 結果")
    for column in ("suite", "passed", "failed", "reported"):
        table.add_column(column, justify="right" if column != "suite" else "left")
    for name, summary in report.suites.items():
        style = "red" if summary.failed else "green"
        table.add_row(name, str(summary.passed), f"[{style}]{summary.failed}[/{style}]", str(summary.reported))
    return table


# ─────────────────────────────────────────────────────────────
# verify
# ─────────────────────────────────────────────────────────────
@cli.command()
def verify(
    config: Optional[Path] = typer.Option(None, "--config", help="YAML 設定檔"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    dims: Optional[str] = typer.Option(None, "--dims", help="逗號分隔，例如 2,4,8"),
    suite: Optional[str] = typer.Option(None, "--suite", help="逗號分隔的 suite 名稱"),
    n_instances: Optional[int] = typer.Option(None, "--n-instances"),
    workers: Optional[int] = typer.Option(None, "--workers", envvar="LAB_WORKERS"),
    out: Optional[Path] = typer.Option(None, "--out", envvar="LAB_OUT_DIR"),
    tol_quad: Optional[float] = typer.Option(None, "--tol-quad"),
    tol_res: Optional[float] = typer.Option(None, "--tol-res"),
    gap: Optional[float] = typer.Option(None, "--gap"),
    pair_kind: Optional[str] = typer.Option(None, "--pair-kind"),
    sets: Optional[List[str]] = typer.Option(None, "--set", help=SET_HELP),
):
    """跑選定的 suite，寫 report.json 與 failures/*.txt；有 hard 失敗時 exit 1"""
    try:
        cfg = load_config(config, _overrides(sets, {
            "seed": seed,
            "dims": _int_list(dims, "dims"),
            "suites": _name_list(suite),
            "n_instances": n_instances,
            "workers": workers,
            "out": None if out is None else str(out),
            "tolerances.quadrature": tol_quad,
            "tolerances.residual": tol_res,
            "gap": gap,
            "pair_kind": pair_kind,
        }))
    except ConfigError as e:
        raise _fail("Verify", e)

    timing = {}
    report = run_suite(cfg, timing=timing)
    out_dir = Path(cfg.out)
    write_report(report, out_dir / "report.json")
    write_residual_table(report, out_dir / "residuals.csv")
    written = write_failures(report, cfg, out_dir)

    console.print(_summary_table(report))
    for record in report.failures[:10]:
        console.print(f"[red]FAIL[/red] {record.suite}/{record.check} {record.function_id} "
                      f"residual={record.residual:.3e} > {record.tolerance:.1e}\n  {record.repro}")
    if written:
        console.print(f"{len(written)} 個失敗矩陣寫在 {out_dir / 'failures'}")
    raise typer.Exit(EXIT_OK if report.ok else EXIT_FAIL)


# ─────────────────────────────────────────────────────────────
# xi
# ─────────────────────────────────────────────────────────────
@cli.command()
def xi(
    config: Optional[Path] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    dim: int = typer.Option(2, "--dim"),
    kind: Optional[str] = typer.Option(None, "--pair-kind"),
    lam: Optional[str] = typer.Option(None, "--lam", help="1×1 的 L，例如 0+1j"),
    mu: Optional[str] = typer.Option(None, "--mu", help="1×1 的 M，例如 1+1j"),
    zero_k: bool = typer.Option(False, "--zero-k", help="把 K 換成 0"),
    t_nodes: Optional[int] = typer.Option(None, "--t-nodes"),
    tol_quad: Optional[float] = typer.Option(None, "--tol-quad"),
    out: Optional[Path] = typer.Option(None, "--out", envvar="LAB_OUT_DIR"),
    sets: Optional[List[str]] = typer.Option(None, "--set", help=SET_HELP),
):
    """ξ pipeline：寫 xi.csv、xi.json，給 --lam/--mu 時另寫 xi_oracle.csv"""
    try:
        cfg = load_config(config, _overrides(sets, {
            "seed": seed, "pair_kind": kind, "t_nodes": t_nodes,
            "tolerances.quadrature": tol_quad, "out": None if out is None else str(out),
        }))
    except ConfigError as e:
        raise _fail("Xi", e)

    lam_value, mu_value = _complex(lam, "lam"), _complex(mu, "mu")
    if (lam_value is None) != (mu_value is None):
        raise typer.BadParameter("--lam 與 --mu 必須一起給")

    try:
        if lam_value is not None:
            pair = scalar_pair(lam_value, mu_value, cfg.d)
            oracle = (lam_value, mu_value)
        else:
            pair = gen_pair(cfg.seed, dim, cfg.gap, cfg.pair_kind, cfg.s1_norm, cfg.d)
            oracle = None
        if zero_k:
            pair = make_pair(pair.L, 0 * pair.K.entries, d=cfg.d, kind=pair.kind, seed=pair.seed)
        functions = [f for _, f in battery_items(cfg)]
        result = xi_command(pair, functions, cfg.tolerances.quadrature, cfg.t_nodes, oracle)
    except LabError as e:
        raise _fail("Xi", e)

    out_dir = Path(cfg.out)
    write_xi_csv(result["ssr"], out_dir / "xi.csv")
    write_json(result["summary"], out_dir / "xi.json")
    if "oracle_xi" in result:
        write_oracle_csv(result["ssr"].s_grid, result["oracle_xi"], out_dir / "xi_oracle.csv")

    summary = result["summary"]
    console.print(f"weight integral      {summary['weight_integral']:.10g}")
    console.print(f"max trace residual   {summary['max_trace_residual']:.3e}")
    if "oracle" in summary:
        console.print(f"oracle pairing gap   {summary['oracle']['pairing_gap']:.3e}")


# ─────────────────────────────────────────────────────────────
# probe-multiplier
# ─────────────────────────────────────────────────────────────
@cli.command("probe-multiplier")
def probe_multiplier(
    config: Optional[Path] = typer.Option(None, "--config"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    grid_sizes: Optional[str] = typer.Option(None, "--grid-sizes", help="逗號分隔，例如 8,16,32"),
    kernel: str = typer.Option("dd_flat", "--kernel", help="dd_flat 或 res_dd"),
    out: Optional[Path] = typer.Option(None, "--out", envvar="LAB_OUT_DIR"),
    sets: Optional[List[str]] = typer.Option(None, "--set", help=SET_HELP),
):
    """對 battery 每個函數在巢狀網格上算 multiplier 括號"""
    if kernel not in ("dd_flat", "res_dd"):
        raise typer.BadParameter(f"--kernel 只接受 dd_flat / res_dd，收到 {kernel}")
    try:
        cfg = load_config(config, _overrides(sets, {
            "seed": seed, "multiplier.grid_sizes": _int_list(grid_sizes, "grid-sizes"),
            "out": None if out is None else str(out),
        }))
    except ConfigError as e:
        raise _fail("Probe Multiplier", e)

    try:
        results = probe_multiplier_command(cfg, kernel=kernel)
    except LabError as e:
        raise _fail("Probe Multiplier", e)
    write_json(results, Path(cfg.out) / "multiplier.json")

    table = Table(title=f"multiplier 括號（{kernel}）")
    for column in ("function", "n", "lower", "upper", "trend"):
        table.add_column(column)
    for result in results:
        for bracket in result["brackets"]:
            table.add_row(result["function_id"], str(bracket["grid_size"]), f"{bracket['lower']:.6g}",
                          f"{bracket['upper']:.6g}", bracket["trend"])
    console.print(table)


# ─────────────────────────────────────────────────────────────
# dilate
# ─────────────────────────────────────────────────────────────
@cli.command()
def dilate(
    seed: int = typer.Option(0, "--seed"),
    dim: int = typer.Option(2, "--dim"),
    depths: str = typer.Option("1,4,16", "--depths"),
    gap: float = typer.Option(0.25, "--gap"),
    out: Path = typer.Option(Path("out"), "--out", envvar="LAB_OUT_DIR"),
    density_points: int = typer.Option(201, "--density-points", help="density.csv 的點數，0 表示不寫"),
    density_range: float = typer.Option(10.0, "--density-range", help="density.csv 取 x ∈ [-r, r]"),
):
    """對 cayley(L) 建有限伸張，回報 unitarity、冪次與 resolvent 殘差，另寫 L 的密度 ρ_L(x)"""
    if density_points < 0 or density_range <= 0:
        raise _fail("Dilate", ConfigError(
            f"--density-points 需 >= 0、--density-range 需 > 0，收到 {density_points}, {density_range}"))
    try:
        result = dilate_command(seed, dim, _int_list(depths, "depths"), gap)
        write_json(result, out / "dilate.json")
        if density_points:
            xs = np.linspace(-density_range, density_range, density_points)
            write_density_csv(gen_pair(seed, dim, gap).L, xs, out / "density.csv")
    except LabError as e:
        raise _fail("Dilate", e)

    table = Table(title=f"dilation seed={seed} dim={dim}  ‖T‖={result['T_norm']:.6g}")
    for column in ("N", "size", "unitarity", "powers", "resolvent", "bound"):
        table.add_column(column, justify="right")
    for row in result["depths"]:
        table.add_row(str(row["N"]), str(row["dilation_dim"]), f"{row['unitarity']:.2e}",
                      f"{row['power_exactness']:.2e}", f"{row['resolvent_residual']:.2e}",
                      f"{row['resolvent_bound']:.2e}")
    console.print(table)


# ─────────────────────────────────────────────────────────────
# report-merge
# ─────────────────────────────────────────────────────────────
@cli.command("report-merge")
def report_merge(
    reports: List[Path] = typer.Argument(..., help="要合併的 report.json"),
    out: Path = typer.Option(Path("out"), "--out", envvar="LAB_OUT_DIR"),
):
    """合併多份 report，重算 worst 與 failures"""
    try:
        merged = merge_reports([read_report(path) for path in reports])
    except (OSError, ValueError) as e:
        raise _fail("Report Merge", ConfigError(str(e)))
    write_report(merged, out / "report.json")
    console.print(_summary_table(merged))
    raise typer.Exit(EXIT_OK if merged.ok else EXIT_FAIL)


if __name__ == "__main__":
    cli()
