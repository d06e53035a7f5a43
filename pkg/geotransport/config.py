# geotransport/config.py
from __future__ import annotations
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    # ---------- Logging ----------
    LOG_DIR: str = Field(default="./logs")
    LOG_FILE: str = Field(default="geotransport.log")
    LOG_LEVEL: str = Field(default="INFO")
    LOG_MAX_BYTES: int = Field(default=5 * 1024 * 1024)  # 5 MB
    LOG_BACKUP_COUNT: int = Field(default=5)

    # ---------- Instance validation ----------
    SUPPLY_TOLERANCE: float = Field(default=1e-9)
    MAX_DIMENSION: int = Field(default=8)

    # ---------- Quadtree ----------
    EPS0_CONSTANT: float = Field(default=1.0)
    MOAT_EXPONENT: float = Field(default=4.0)
    RULE2_EXPONENT: float = Field(default=8.0)
    # c1 in "cells <= c1 * n * log2(n / eps0)"
    CELL_COUNT_CONSTANT: float = Field(default=10.0)

    # ---------- Solvers ----------
    DEFAULT_EPSILON: float = Field(default=0.5)
    DEFAULT_BACKEND: str = Field(default="exact")
    SHERMAN_CHECK_EVERY: int = Field(default=50)
    SHERMAN_MAX_ITERATIONS_CAP: int = Field(default=1_000_000)
    SHERMAN_STALL_ROUNDS: int = Field(default=4)
    PENALTY_GROWTH: float = Field(default=2.0)

    # ---------- Recovery / prefix split trees ----------
    PREFIX_SPLIT_TOLERANCE: float = Field(default=1e-12)
    DUST_TOLERANCE: float = Field(default=1e-12)

    # ---------- Oracle ----------
    ORACLE_MAX_POINTS: int = Field(default=512)

    # ---------- Bench ----------
    # Warn when total time grows faster than this per doubling of n (n log n stays near 2).
    BENCH_GROWTH_WARN: float = Field(default=2.5)

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


settings = Settings()
