"""
Pipeline models for the market solver.

This module contains Pydantic models for run configuration, on-disk scenario
files and result bundles.
"""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.config import SearchConfig, SolverConfig, settings
from src.models.market import RewardLedger

FORMAT_VERSION = 1
SIGNIFICANT_DIGITS = 12


class RunMode(str, Enum):
    """What a pipeline run produces."""

    SOLVE = "solve"
    BASELINE = "baseline"
    ORACLE = "oracle"
    VALIDATE = "validate"
    EXPORT = "export"


class ProsumerFile(BaseModel):
    """Storage parameters of one prosumer in scenario.json."""

    model_config = ConfigDict(extra="forbid")

    prosumer_id: str = Field(..., min_length=1, description="Identifier used in profiles.csv")
    e_max: float = Field(..., description="Storage capacity, kWh (0 for no storage)")
    p_max: float = Field(..., description="Charge/discharge limit, kW (0 for no storage)")
    eta_c: float = Field(default=1.0, description="Charge coefficient, e += dt * eta_c * pC")
    eta_dc: float = Field(default=1.0, description="Discharge coefficient, e -= dt * eta_dc * pDC")
    e0: float = Field(default=0.0, description="Initial state of charge, kWh")


Series = Union[float, List[float]]


class ScenarioFile(BaseModel):
    """Schema of scenario.json; profiles and request live in CSV files."""

    model_config = ConfigDict(extra="forbid")

    format_version: Literal[1] = Field(..., description="Scenario file format version")
    note: str = Field(default="", description="Free text, e.g. data provenance")
    T: int = Field(..., description="Number of intervals")
    dt: float = Field(..., description="Interval length in hours")
    p_bar: float = Field(..., description="TSO response price")
    p_tilde: float = Field(..., description="TSO rebound price")
    beta: float = Field(..., description="Saturation coefficient")
    c1: Series = Field(..., description="Pricing slope, scalar or one per interval")
    c0_lo: Series = Field(..., description="Price offset lower bound")
    c0_hi: Series = Field(..., description="Price offset upper bound")
    g: Series = Field(..., description="Grid capacity, kW")
    mu: float = Field(..., description="Discomfort weight")
    delta: float = Field(..., description="Storage degradation weight")
    prosumers: List[ProsumerFile] = Field(..., description="Prosumers in order")


class RunConfig(BaseModel):
    """Configuration of one pipeline run."""

    scenario: Path = Field(..., description="scenario.json")
    profiles: Optional[Path] = Field(default=None, description="profiles.csv")
    request: Optional[Path] = Field(default=None, description="request.csv")
    out: Path = Field(default=Path("results"), description="Output directory")
    mode: RunMode = Field(default=RunMode.SOLVE, description="Run mode")
    seed: int = Field(default_factory=lambda: settings.search.seed, ge=0)
    starts: int = Field(default_factory=lambda: settings.search.starts, ge=1)
    grid_resolution: int = Field(default_factory=lambda: settings.search.grid_resolution, ge=1)
    tikhonov: float = Field(default_factory=lambda: settings.solver.tikhonov, ge=0)
    tol_stat: float = Field(default_factory=lambda: settings.solver.tol_stat, gt=0)
    tol_comp: float = Field(default_factory=lambda: settings.solver.tol_comp, gt=0)
    tol_feas: float = Field(default_factory=lambda: settings.solver.tol_feas, gt=0)
    workers: int = Field(default_factory=lambda: settings.search.workers, ge=1)

    @model_validator(mode="after")
    def check_paths(self) -> "RunConfig":
        for name in ("scenario", "profiles", "request"):
            path = getattr(self, name)
            if path is not None and not path.exists():
                raise ValueError(f"{name}: file not found: {path}")
        if self.out.exists() and not self.out.is_dir():
            raise ValueError(f"out: not a directory: {self.out}")
        return self

    def solver_config(self) -> SolverConfig:
        return settings.solver.model_copy(
            update={
                "tikhonov": self.tikhonov,
                "tol_stat": self.tol_stat,
                "tol_comp": self.tol_comp,
                "tol_feas": self.tol_feas,
            }
        )

    def search_config(self) -> SearchConfig:
        return settings.search.model_copy(
            update={
                "seed": self.seed,
                "starts": self.starts,
                "grid_resolution": self.grid_resolution,
                "workers": self.workers,
            }
        )


class ProsumerSchedule(BaseModel):
    prosumer_id: str
    p: List[float] = Field(..., description="Purchased power, kW")
    y: List[float] = Field(..., description="Response flexibility, kW")
    k: List[float] = Field(..., description="Rebound flexibility, kW")
    e: List[float] = Field(..., description="State of charge, kWh")
    pC: List[float] = Field(..., description="Charging power, kW")
    pDC: List[float] = Field(..., description="Discharging power, kW")


class LeaderBlock(BaseModel):
    c0: List[float]
    alpha: List[float]
    price: List[float] = Field(..., description="Pricing map h at the aggregate purchase")


class CostSummary(BaseModel):
    J_dso: float
    J_followers: List[float]
    energy_revenue: float
    dr_reward_kept: float
    rebound_reward: float


class CertificateBlock(BaseModel):
    radius: float
    samples: int
    evaluated: int
    failures: int
    worst_improvement: float
    tol_improve: float
    passed: bool


class ResidualBlock(BaseModel):
    stationarity: float
    complementarity: float
    feasibility: float
    coupling: float


class BaselineBlock(BaseModel):
    """Aggregate grid draw with and without the DR request."""

    grid_draw_dr: List[float] = Field(..., description="sum(p) - sum(k) per interval")
    grid_draw_baseline: List[float] = Field(..., description="sum(p) with r = 0")
    c0_baseline: List[float]
    J_dso_baseline: float


class OracleBlock(BaseModel):
    resolution: int
    points: int
    best_cost: float
    best_z0: List[float]


class TracePoint(BaseModel):
    start: int
    cost: float


class ResultBundle(BaseModel):
    """Everything a run writes to bundle.json."""

    format_version: Literal[1] = FORMAT_VERSION
    mode: RunMode
    T: int
    dt: float
    r: List[float]
    interval_classes: List[str]
    schedules: List[ProsumerSchedule]
    leader: LeaderBlock
    ledger: RewardLedger
    costs: CostSummary
    certificate: CertificateBlock
    residuals: ResidualBlock
    baseline: Optional[BaselineBlock] = None
    oracle: Optional[OracleBlock] = None
    trace: List[TracePoint] = Field(default_factory=list)
    search: List[Dict[str, Any]] = Field(default_factory=list)


def round_significant(value: Any, digits: int = SIGNIFICANT_DIGITS) -> Any:
    """Round every float in a nested structure to `digits` significant digits."""
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        rounded = float(f"{value:.{digits}g}")
        return 0.0 if rounded == 0 else rounded
    if isinstance(value, dict):
        return {k: round_significant(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_significant(v, digits) for v in value]
    return value


def write_bundle(bundle: ResultBundle, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bundle.json"
    data = round_significant(bundle.model_dump(mode="json"))
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    return path


def load_bundle(path: Path) -> ResultBundle:
    return ResultBundle.model_validate_json(Path(path).read_text(encoding="utf-8"))
