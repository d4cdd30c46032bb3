from typing import Literal

import typer
from pydantic import BaseModel, ConfigDict, Field, field_validator

ARTIFACT_VERSION = "0.0.1"

cli = typer.Typer(
    name="dissipative-lab",
    help="Finite-dimensional laboratory for dissipative operators: DOI formulas, "
         "semi-spectral measures and spectral shift functions.",
    no_args_is_help=True,
    add_completion=False,
)

SUITE_NAMES = ("core", "funcalc", "semispectral", "doi", "shift", "multiplier")
BATTERY_KINDS = ("resolvent_powers", "lower_poles", "disk_polys", "mixed")
PAIR_KINDS = ("generic", "trace_class_structured", "selfadjoint_base")

SuiteName = Literal["core", "funcalc", "semispectral", "doi", "shift", "multiplier"]
BatteryKind = Literal["resolvent_powers", "lower_poles", "disk_polys", "mixed"]
PairKind = Literal["generic", "trace_class_structured", "selfadjoint_base"]


# ─────────────────────────────────────────────────────────────
# 設定輸入
# ─────────────────────────────────────────────────────────────
class BatterySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kinds: list[BatteryKind] = Field(default_factory=lambda: list(BATTERY_KINDS))
    count: int = Field(3, ge=1, description="resolvent_powers 的次方數")
    # 極點以 [re, im] 表示，im 必須 <= -pole_gap
    poles: list[tuple[float, float]] = Field(
        default_factory=lambda: [(0.0, -2.0), (1.0, -1.0), (-1.0, -0.5)]
    )
    disk_degree: int = Field(2, ge=1)
    pole_gap: float = Field(0.5, gt=0)


class Tolerances(BaseModel):
    model_config = ConfigDict(extra="forbid")

    quadrature: float = 1e-8
    residual: float = 1e-8
    fd_step: float = 1e-4
    fd_agreement: float = 1e-5
    trace: float = 1e-6
    q_route: float = 1e-7
    doi_quadrature: float = 1e-6

    @field_validator("*")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("tolerance 必須為正數")
        return value


class MultiplierSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid_sizes: list[int] = Field(default_factory=lambda: [8, 16, 32])
    restarts: int = Field(32, ge=1)
    iters: int = Field(500, ge=1)
    stall: float = Field(1e-6, gt=0)
    trials: int = Field(8, ge=1)


class SuiteConfig(BaseModel):
    """verify 子命令的完整設定；每個 key 都能被同名 CLI flag 覆寫"""
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    dims: list[int] = Field(default_factory=lambda: [2, 4])
    n_instances: int = Field(3, ge=1)
    gap: float = Field(0.25, gt=0)
    pair_kind: PairKind = "generic"
    d: float = Field(0.4, gt=0, lt=1, description="domination 常數 d；maximality 只在 d < 1/2 時檢查")
    battery: BatterySpec = Field(default_factory=BatterySpec)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    suites: list[SuiteName] = Field(default_factory=lambda: list(SUITE_NAMES))
    workers: int = Field(1, ge=1)
    out: str = "out"
    dilation_depths: list[int] = Field(default_factory=lambda: [1, 4, 16])
    t_nodes: int = Field(32, ge=2)
    domination_vectors: int = Field(10_000, ge=1)
    max_dim_quadrature: int = Field(4, ge=1)
    max_dim_shift: int = Field(8, ge=1)
    s1_norm: float = Field(1.0, gt=0, description="trace_class_structured 的 ‖C‖_S1")
    multiplier: MultiplierSettings = Field(default_factory=MultiplierSettings)

    @field_validator("dims", "dilation_depths")
    @classmethod
    def _positive_ints(cls, values: list[int]) -> list[int]:
        if not values:
            raise ValueError("不可為空")
        if any(v < 1 for v in values):
            raise ValueError("所有值都必須 >= 1")
        return values


# ─────────────────────────────────────────────────────────────
# 報告輸出
# ─────────────────────────────────────────────────────────────
def _inf_from_json(value):
    # JSON 裡的 inf 會變成 null
    return float("inf") if value is None else value


class CheckRecord(BaseModel):
    suite: str
    check: str
    seed: int
    dim: int
    function_id: str = "-"
    residual: float
    tolerance: float
    passed: bool
    hard: bool = True
    detail: str = ""
    repro: str = ""

    @field_validator("residual", "tolerance", mode="before")
    @classmethod
    def _restore_inf(cls, value):
        return _inf_from_json(value)


class SuiteSummary(BaseModel):
    passed: int = 0
    failed: int = 0
    reported: int = 0
    records: list[CheckRecord] = Field(default_factory=list)


class WorstCase(BaseModel):
    suite: str
    check: str
    residual: float
    tolerance: float
    seed: int
    dim: int
    function_id: str

    @field_validator("residual", "tolerance", mode="before")
    @classmethod
    def _restore_inf(cls, value):
        return _inf_from_json(value)


class Report(BaseModel):
    version: str = ARTIFACT_VERSION
    config: dict = Field(default_factory=dict)
    suites: dict[str, SuiteSummary] = Field(default_factory=dict)
    worst: list[WorstCase] = Field(default_factory=list)
    failures: list[CheckRecord] = Field(default_factory=list)
    # 每個函數的 k_f 與穩定性，只回報
    lipschitz: dict[str, dict] = Field(default_factory=dict)
    timing: dict[str, float] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(summary.failed == 0 for summary in self.suites.values())
