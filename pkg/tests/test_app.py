import ast
import shlex
from pathlib import Path

import orjson
import pandas as pd
import pytest
from typer.testing import CliRunner

from app import cli
from static.payload import Report, CheckRecord, SuiteConfig
from function.export import write_report, read_report
from function.harness import summarize, run_suite, InstanceContext, check_cayley

runner = CliRunner()


def test_verify_without_suites(tmp_path):
    result = runner.invoke(cli, ["verify", "--suite", "", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    report = read_report(tmp_path / "report.json")
    assert report.suites == {} and report.ok
    assert (tmp_path / "residuals.csv").exists()


def test_verify_rejects_bad_tolerance(tmp_path):
    result = runner.invoke(cli, ["verify", "--tol-quad=-1", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert not (tmp_path / "report.json").exists()


def test_verify_rejects_bad_dims(tmp_path):
    result = runner.invoke(cli, ["verify", "--dims", "2,x", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_verify_core_suite(tmp_path):
    result = runner.invoke(cli, ["verify", "--suite", "core", "--dims", "2", "--n-instances", "1",
                                 "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    df = pd.read_csv(tmp_path / "residuals.csv")
    assert set(df["suite"]) == {"core"}
    assert not (tmp_path / "failures").exists()


def test_dilate_writes_json(tmp_path):
    result = runner.invoke(cli, ["dilate", "--depths", "1,4", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    payload = orjson.loads((tmp_path / "dilate.json").read_bytes())
    assert [row["N"] for row in payload["depths"]] == [1, 4]


def test_xi_with_scalar_oracle(tmp_path):
    result = runner.invoke(cli, ["xi", "--lam", "0+1j", "--mu", "1+1j", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    xi = pd.read_csv(tmp_path / "xi.csv")
    oracle = pd.read_csv(tmp_path / "xi_oracle.csv")
    assert list(xi.columns) == ["s", "re_xi", "im_xi"]
    assert len(xi) == len(oracle)
    summary = orjson.loads((tmp_path / "xi.json").read_bytes())
    assert summary["oracle"]["pairing_gap"] <= 1e-6


def test_xi_needs_both_endpoints(tmp_path):
    result = runner.invoke(cli, ["xi", "--lam", "0+1j", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_report_merge(tmp_path):
    passing = CheckRecord(suite="core", check="x", seed=0, dim=2, residual=0.0, tolerance=1.0, passed=True)
    failing = passing.model_copy(update={"seed": 1, "residual": 2.0, "passed": False})
    first = write_report(Report(suites={"core": summarize([passing])}), tmp_path / "a.json")
    second = write_report(Report(suites={"core": summarize([failing])}, failures=[failing]), tmp_path / "b.json")

    result = runner.invoke(cli, ["report-merge", str(first), str(second), "--out", str(tmp_path / "merged")])
    assert result.exit_code == 1
    merged = read_report(tmp_path / "merged" / "report.json")
    assert merged.suites["core"].passed == 1 and merged.suites["core"].failed == 1


def test_report_merge_missing_file(tmp_path):
    result = runner.invoke(cli, ["report-merge", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_verify_accepts_set_overrides(tmp_path):
    result = runner.invoke(cli, ["verify", "--suite", "", "--set", "d=0.3", "--set", "tolerances.trace=1e-7",
                                 "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output


@pytest.mark.parametrize("item", ["tolerances.trace=-1", "d", "no_such_key=1"])
def test_verify_rejects_bad_set_overrides(tmp_path, item):
    result = runner.invoke(cli, ["verify", "--suite", "", "--set", item, "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert not (tmp_path / "report.json").exists()


def test_repro_command_replays_instance(tmp_path):
    cfg = SuiteConfig(gap=0.4, d=0.3, tolerances={"residual": 1e-9}, battery={"count": 2},
                      domination_vectors=2000)
    ctx = InstanceContext("core", 5, 2, cfg)
    args = shlex.split(ctx.repro)[2:] + ["--out", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code in (0, 1), result.output

    replayed = read_report(tmp_path / "report.json").suites["core"].records
    direct = run_suite(cfg.model_copy(update={"suites": ["core"], "seed": 5, "dims": [2], "n_instances": 1}))
    assert [(r.check, r.function_id, r.residual) for r in replayed] == \
        [(r.check, r.function_id, r.residual) for r in direct.suites["core"].records]
    (roundtrip,) = [r for r in check_cayley(ctx) if r.check == "cayley_roundtrip"]
    assert roundtrip.residual in [r.residual for r in replayed if r.check == "cayley_roundtrip"]


def test_dilate_writes_density_csv(tmp_path):
    result = runner.invoke(cli, ["dilate", "--depths", "1", "--density-points", "5", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    density = pd.read_csv(tmp_path / "density.csv")
    assert len(density) == 5 and density.columns[0] == "x"
    assert len(density.columns) == 1 + 2 * 2 * 2
    # 對角元素是正的實數
    assert (density["re_0_0"] > 0).all()


def test_dilate_can_skip_density(tmp_path):
    result = runner.invoke(cli, ["dilate", "--depths", "1", "--density-points", "0", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert not (tmp_path / "density.csv").exists()


def test_dotenv_is_loaded_before_project_modules():
    tree = ast.parse((Path(__file__).resolve().parent.parent / "app.py").read_text(encoding="utf-8"))
    body = list(tree.body)
    load_at = next(i for i, node in enumerate(body)
                   if isinstance(node, ast.Expr) and isinstance(node.value, ast.Call)
                   and getattr(node.value.func, "id", None) == "load_dotenv")
    first_project_import = next(i for i, node in enumerate(body)
                                if isinstance(node, ast.ImportFrom)
                                and node.module.split(".")[0] in ("static", "function"))
    assert load_at < first_project_import
