"""Composed approximate solver: a penalized first-order stage finished by the greedy solver.

The first-order stage minimizes sum(length * |f|) + lam * ||B A f - B b||_1 with a diagonally
preconditioned primal-dual hybrid gradient method, touching the problem only through
apply_BA and apply_BA_transpose. Every checkpoint composes the current iterate with
greedy_flow on its residual, so every candidate is exactly feasible. The dual iterate,
rescaled so that |(BA)^T y| <= length, gives a lower bound used as a stopping certificate.
"""
from __future__ import annotations

import logging
import math
import time

import numpy as np

from geotransport.core import FloatArray
from geotransport.precond import (
    LAMBDA_CONSTANT,
    PreconditionerContext,
    apply_B,
    apply_BA,
    apply_BA_transpose,
    greedy_flow,
    local_incidence,
)
from geotransport.solvers.base_solver import BaseSolver, SolveStats, SolverConfig

logger = logging.getLogger("geotransport.solvers.sherman")


def kappa_emp(ctx: PreconditionerContext) -> float:
    """eps0^-1 * log2(n / eps0), read back from Lambda."""
    return ctx.lam / (LAMBDA_CONSTANT * ctx.eps0)


def _soft(x: FloatArray, t: FloatArray) -> FloatArray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _dual_bound(ctx: PreconditionerContext, y: FloatArray, kty: FloatArray, c: FloatArray) -> float:
    g = np.abs(kty)
    mask = g > 0.0
    scale = 1.0
    if mask.any():
        scale = min(1.0, float(np.min(ctx.length[mask] / g[mask])))
    return -scale * float(np.dot(y, c))


def solve_sherman(
    ctx: PreconditionerContext,
    b: np.ndarray,
    config: SolverConfig | None = None,
    stats: SolveStats | None = None,
) -> FloatArray:
    """Flow with A f = b whose cost is within the composition guarantee of optimal."""
    config = config or SolverConfig(backend="sherman")
    stats = stats if stats is not None else SolveStats(backend="sherman")
    b = np.asarray(b, dtype=np.float64)
    if ctx.num_edges == 0 or not np.any(b):
        return np.zeros(ctx.num_edges, dtype=np.float64)

    eps = config.epsilon
    kappa = kappa_emp(ctx)
    beta = eps / (kappa * kappa)
    cap = config.iteration_cap(kappa)
    applies_before = ctx.apply_count
    length = ctx.length

    c = apply_B(ctx, b)
    c_norm = float(np.abs(c).sum())
    tau = np.divide(1.0, ctx.col_sum, out=np.zeros_like(ctx.col_sum), where=ctx.col_sum > 0)
    sigma = np.divide(1.0, ctx.row_sum, out=np.zeros_like(ctx.row_sum), where=ctx.row_sum > 0)
    lam_max = 2.0 * ctx.kappa_bound
    lam = min(1.0, lam_max)

    t0 = time.perf_counter()
    f = greedy_flow(ctx, b)
    greedy_seconds = time.perf_counter() - t0
    best = f.copy()
    best_cost = float(np.dot(np.abs(f), length))
    y = np.zeros(ctx.num_vertices, dtype=np.float64)
    kty = np.zeros(ctx.num_edges, dtype=np.float64)
    lower = 0.0
    last_res = math.inf
    iterations = stall = 0
    status = "cap"

    while iterations < cap:
        for _ in range(min(config.check_every, cap - iterations)):
            f_new = _soft(f - tau * kty, tau * length)
            y = np.clip(y + sigma * (apply_BA(ctx, 2.0 * f_new - f) - c), -lam, lam)
            f = f_new
            kty = apply_BA_transpose(ctx, y)
            iterations += 1
        stats.rounds += 1

        r = b - local_incidence(ctx, f)
        r -= r.sum() / r.size
        res = float(np.abs(apply_B(ctx, r)).sum())
        stats.residual_norms.append(res)
        t0 = time.perf_counter()
        candidate = f + greedy_flow(ctx, r)
        greedy_seconds += time.perf_counter() - t0
        cost = float(np.dot(np.abs(candidate), length))
        # progress means at least a 1e-4 relative drop in cost
        progress = cost < best_cost * (1.0 - 1e-4)
        improved = cost < best_cost * (1.0 - 1e-12)
        if improved:
            best, best_cost = candidate, cost

        lower = max(lower, _dual_bound(ctx, y, kty, c))
        logger.debug(
            "round %d: iter=%d lam=%.3g residual=%.3e best=%.6g lower=%.6g",
            stats.rounds, iterations, lam, res, best_cost, lower,
        )
        if lower > 0.0 and best_cost <= (1.0 + eps) * lower:
            status = "certified"
            break

        last_res = min(last_res, res)
        if lam < lam_max:
            lam = min(lam * config.penalty_growth, lam_max)
            continue
        # stalls only count once the penalty is at full strength
        stall = 0 if progress else stall + 1
        if stall >= config.stall_rounds:
            status = "stalled"
            break

    stats.iterations = iterations
    stats.kappa_emp = kappa
    stats.beta = beta
    stats.penalty = lam
    stats.lower_bound = lower
    stats.gap = best_cost / lower - 1.0 if lower > 0.0 else None
    stats.apply_count = ctx.apply_count - applies_before
    stats.greedy_seconds = greedy_seconds
    stats.certified = status == "certified"
    if status == "cap" and last_res > beta * c_norm:
        stats.warning = (
            f"iteration cap {cap} reached with residual {last_res:.3e} above beta*||Bb|| = {beta * c_norm:.3e}; "
            "greedy finisher absorbed it"
        )
    return best


class ShermanSolver(BaseSolver):
    backend = "sherman"

    def __init__(self, config: SolverConfig | None = None):
        super().__init__(name=self.__class__.__name__, config=config)

    def _solve(self, ctx: PreconditionerContext, b: FloatArray, stats: SolveStats) -> FloatArray:
        return solve_sherman(ctx, b, self.config, stats)
