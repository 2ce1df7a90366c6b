"""
Configuration module for the demand-response market solver.

This module contains settings for the follower equilibrium solver, the leader
search, the big-M export and logging.
"""

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class SolverConfig(BaseSettings):
    """Configuration for the follower vGNE solver."""

    model_config = SettingsConfigDict(env_prefix="VGNE_")

    method: str = Field(default="pivoting", description="Primary solve method")
    tol_stat: float = Field(default=1e-6, gt=0, description="Stationarity tolerance")
    tol_comp: float = Field(default=1e-8, gt=0, description="Complementarity tolerance")
    tol_feas: float = Field(default=1e-6, gt=0, description="Feasibility tolerance")
    tikhonov: float = Field(default=1e-8, ge=0, description="Tikhonov selection weight")
    max_pivots: int = Field(default=20000, ge=1, description="Pivot limit for Lemke")
    refactor_every: int = Field(default=100, ge=1, description="Basis refactorization period")
    pivot_tol: float = Field(default=1e-11, gt=0, description="Smallest admissible pivot")
    fallback_max_iter: int = Field(
        default=200000, ge=1, description="Iteration limit of the splitting fallback"
    )
    warm_start_max_iter: int = Field(
        default=12, ge=0, description="Active-set corrections tried before a cold solve"
    )

    @field_validator("method")
    @classmethod
    def validate_method(cls, v: str) -> str:
        valid_methods = ["pivoting", "splitting"]
        if v not in valid_methods:
            raise ValueError(f"Invalid solve method: {v}. Must be one of {valid_methods}")
        return v


class SearchConfig(BaseSettings):
    """Configuration for the leader pattern search and its certificate."""

    model_config = SettingsConfigDict(env_prefix="SEARCH_")

    initial_mesh: float = Field(default=0.25, gt=0, le=1, description="Mesh as box-width share")
    contraction: float = Field(default=0.5, gt=0, lt=1, description="Mesh contraction factor")
    expansion: float = Field(default=2.0, ge=1, description="Mesh expansion factor")
    mesh_tol: float = Field(default=1e-4, gt=0, description="Absolute mesh stopping size")
    starts: int = Field(default=8, ge=1, description="Number of search starts")
    seed: int = Field(default=0, ge=0, description="Seed for starts and certificates")
    max_evaluations: int = Field(default=20000, ge=1, description="Evaluations per start")
    cert_radius: float = Field(default=1e-3, ge=0, description="Certificate radius")
    cert_samples: int = Field(default=200, ge=0, description="Certificate sample count")
    tol_improve: float = Field(default=1e-6, ge=0, description="Admissible improvement")
    cert_rounds: int = Field(default=10, ge=0, description="Certificate-driven restarts")
    grid_resolution: int = Field(default=9, ge=1, description="Grid points per coordinate")
    grid_max_points: int = Field(default=10**6, ge=1, description="Grid enumeration guard")
    workers: int = Field(default=1, ge=1, description="Concurrent evaluations")


class BigMConfig(BaseSettings):
    """Default big-M constants of the single-level export."""

    model_config = SettingsConfigDict(env_prefix="BIGM_")

    primal: float = Field(default=1e3, gt=0, description="Big-M for primal slack rows")
    dual: float = Field(default=1e4, gt=0, description="Big-M for dual rows")


class Settings(BaseSettings):
    """Main settings for the market solver."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_nested_delimiter="__",
        extra="ignore",
    )

    app_name: str = Field(default="dr-stackelberg", description="Application name")
    app_version: str = Field(default="0.1.0", description="Application version")
    debug: bool = Field(default=False, description="Debug mode")
    log_level: str = Field(default="info", description="Log level")

    solver: SolverConfig = Field(default_factory=SolverConfig, description="vGNE solver")
    search: SearchConfig = Field(default_factory=SearchConfig, description="Leader search")
    bigm: BigMConfig = Field(default_factory=BigMConfig, description="Big-M export")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        valid_levels = ["debug", "info", "warning", "error", "critical"]
        if v.lower() not in valid_levels:
            raise ValueError(f"Invalid log level: {v}. Must be one of {valid_levels}")
        return v.lower()


# Create global settings instance
settings = Settings()
