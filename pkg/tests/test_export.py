import numpy as np
import pandas as pd
import pytest

from static.payload import SuiteConfig, CheckRecord, Report
from static.models import SpectralShiftResult
from function.semispectral import build_grid
from function.harness import gen_pair, summarize
from function.export import (
    write_xi_csv, write_report, read_report, write_residual_table, write_failures, load_matrix_dump,
    failure_filename, write_density_csv, to_json_bytes,
)


def _failing_record(**kwargs) -> CheckRecord:
    values = dict(suite="doi", check="difference_formula", seed=3, dim=2, function_id="pole(1-1j)",
                  residual=float("inf"), tolerance=1e-8, passed=False, repro="python app.py verify ...",
                  detail="QuadratureError: 沒有收斂\n第二行")
    values.update(kwargs)
    return CheckRecord(**values)


def _ssr() -> SpectralShiftResult:
    s = np.array([2.0, -1.0, 0.5])
    return SpectralShiftResult(s_grid=s, weights=np.ones(3), xi=np.array([0.1 + 0.2j, -0.3, 1e-20j]),
                               weight_integral=0.0, weight_integral_refined=0.0, mass=0j, t_nodes=32,
                               grid=build_grid())


def test_xi_csv_is_sorted_and_reproducible(tmp_path):
    first = write_xi_csv(_ssr(), tmp_path / "a" / "xi.csv")
    second = write_xi_csv(_ssr(), tmp_path / "b" / "xi.csv")
    df = pd.read_csv(first)
    assert list(df.columns) == ["s", "re_xi", "im_xi"]
    assert list(df["s"]) == [-1.0, 0.5, 2.0]
    assert df["re_xi"].iloc[2] == pytest.approx(0.1)
    assert first.read_bytes() == second.read_bytes()


def test_report_round_trip_restores_infinity(tmp_path):
    record = _failing_record()
    report = Report(suites={"doi": summarize([record])}, failures=[record])
    path = write_report(report, tmp_path / "report.json")
    loaded = read_report(path)
    assert loaded.failures[0].residual == float("inf")
    assert loaded.suites["doi"].failed == 1 and not loaded.ok
    assert b"Infinity" not in path.read_bytes()


def test_json_bytes_are_key_sorted():
    assert to_json_bytes({"b": 1, "a": complex(1, 2)}) == b'{\n  "a": [\n    1.0,\n    2.0\n  ],\n  "b": 1\n}'


def test_residual_table_columns(tmp_path):
    report = Report(suites={"doi": summarize([_failing_record(), _failing_record(seed=4, passed=True)])})
    df = pd.read_csv(write_residual_table(report, tmp_path / "residuals.csv"))
    assert len(df) == 2
    assert {"suite", "check", "seed", "dim", "function_id", "residual", "tolerance", "passed"} <= set(df.columns)
    empty = pd.read_csv(write_residual_table(Report(), tmp_path / "empty.csv"))
    assert empty.empty


def test_failure_dump_reproduces_matrices(tmp_path):
    config = SuiteConfig()
    record = _failing_record()
    (path,) = write_failures(Report(failures=[record]), config, tmp_path)
    assert path.parent.name == "failures"
    header = path.read_text(encoding="utf-8").splitlines()[:2]
    assert header[0] == "# repro: python app.py verify ..."
    assert "\n" not in header[1] and header[1].endswith("沒有收斂 第二行")

    matrices = load_matrix_dump(path)
    pair = gen_pair(record.seed, record.dim, config.gap)
    assert np.array_equal(matrices["L"], pair.L.entries)
    assert np.array_equal(matrices["K"], pair.K.entries)


def test_failure_filename_is_sanitised():
    name = failure_filename(_failing_record(function_id="res^2*pole(1-1j)"))
    assert name == "doi_difference_formula_s3_d2_res_2_pole_1-1j_.txt"


def test_density_csv_columns(tmp_path):
    L = np.diag([1j, 0.5 + 2j])
    df = pd.read_csv(write_density_csv(L, [-1.0, 0.0, 1.0], tmp_path / "density.csv"))
    assert df.shape == (3, 1 + 2 * 2 * 2)
    assert df.columns[0] == "x" and "im_1_1" in df.columns
    assert df["re_0_0"].iloc[1] == pytest.approx(1 / np.pi, rel=1e-12)
