from __future__ import annotations

import logging
import math
import time
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from geotransport.config import settings
from geotransport.core import FloatArray
from geotransport.precond import PreconditionerContext

BACKENDS = ("exact", "sherman")


class SolverConfig(BaseModel):
    """Per-run options; defaults come from settings, CLI flags override them."""
    backend: str = Field(default=settings.DEFAULT_BACKEND)
    epsilon: float = Field(default=settings.DEFAULT_EPSILON)
    k: Optional[int] = Field(default=None, description="Repetitions for best-of-k; None = ceil(log2 n) + 1")
    seed: int = Field(default=0)
    max_iterations: Optional[int] = Field(default=None, description="Inner iteration cap; None = derived from kappa")
    check_every: int = Field(default=settings.SHERMAN_CHECK_EVERY)
    stall_rounds: int = Field(default=settings.SHERMAN_STALL_ROUNDS)
    penalty_growth: float = Field(default=settings.PENALTY_GROWTH)
    residual_tolerance: float = Field(default=1e-9)
    eps0_constant: float = Field(default=settings.EPS0_CONSTANT)
    moat_exponent: float = Field(default=settings.MOAT_EXPONENT)
    rule2_exponent: float = Field(default=settings.RULE2_EXPONENT)
    random_shift: bool = Field(default=True)

    @field_validator("backend")
    @classmethod
    def known_backend(cls, v: str) -> str:
        v = v.strip().lower()
        if v not in BACKENDS:
            raise ValueError(f"Unknown solver backend: {v!r} (choose from {', '.join(BACKENDS)})")
        return v

    @field_validator("epsilon", "residual_tolerance", "eps0_constant", "moat_exponent", "rule2_exponent")
    @classmethod
    def positive_real(cls, v: float) -> float:
        if not v > 0.0 or not math.isfinite(v):
            raise ValueError(f"must be positive and finite, got {v}")
        return v

    @field_validator("k", "max_iterations")
    @classmethod
    def positive_optional(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v

    @field_validator("check_every", "stall_rounds")
    @classmethod
    def positive_count(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"must be >= 1, got {v}")
        return v

    @field_validator("penalty_growth")
    @classmethod
    def growing(cls, v: float) -> float:
        if not v > 1.0:
            raise ValueError(f"penalty growth must exceed 1, got {v}")
        return v

    def repetitions(self, n: int) -> int:
        return self.k if self.k is not None else math.ceil(math.log2(max(n, 1))) + 1

    def iteration_cap(self, kappa: float) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        derived = 50.0 * kappa * kappa * math.ceil(self.epsilon ** -2)
        return int(min(derived, settings.SHERMAN_MAX_ITERATIONS_CAP))


class SolveStats(BaseModel):
    """What one subproblem solve did; emitted in the CLI report."""
    backend: str
    subtree: int = -1
    vertices: int = 0
    edges: int = 0
    cost: float = 0.0
    iterations: int = 0
    rounds: int = 0
    augmentations: int = 0
    residual_norms: list[float] = Field(default_factory=list)
    lower_bound: Optional[float] = None
    gap: Optional[float] = None
    kappa_emp: Optional[float] = None
    beta: Optional[float] = None
    penalty: Optional[float] = None
    apply_count: int = 0
    greedy_seconds: float = 0.0
    seconds: float = 0.0
    certified: bool = False
    warning: Optional[str] = None


class BaseSolver:
    """Solves min sum(length * |f|) subject to A f = b on one subproblem's induced graph."""

    backend = "base"

    def __init__(self, name: str = "BaseSolver", config: SolverConfig | None = None):
        self.name = name
        self.logger = logging.getLogger(name)
        self.config = config or SolverConfig()
        self.history: list[SolveStats] = []

    def solve(self, ctx: PreconditionerContext, b: np.ndarray) -> FloatArray:
        start = time.perf_counter()
        stats = SolveStats(
            backend=self.backend,
            subtree=ctx.subtree.id,
            vertices=ctx.num_vertices,
            edges=ctx.num_edges,
        )
        b = np.asarray(b, dtype=np.float64)
        if ctx.num_edges == 0 or not np.any(b):
            f = np.zeros(ctx.num_edges, dtype=np.float64)
            stats.certified = True
        else:
            f = self._solve(ctx, b, stats)
        stats.cost = float(np.dot(np.abs(f), ctx.length))
        stats.seconds = time.perf_counter() - start
        self.history.append(stats)
        self.logger.debug(
            "Part %d solved in: %.3f seconds (cost %.6g, %d vertices)",
            ctx.subtree.id, stats.seconds, stats.cost, ctx.num_vertices,
        )
        if stats.warning:
            self.logger.warning("Part %d: %s", ctx.subtree.id, stats.warning)
        return f

    def _solve(self, ctx: PreconditionerContext, b: FloatArray, stats: SolveStats) -> FloatArray:
        raise NotImplementedError
