"""Exact geometric transportation on the complete bipartite graph (small instances only)."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from geotransport.config import settings
from geotransport.core import FloatArray, IntArray, TransportInstance, TransportationMap, map_divergence
from geotransport.errors import InfeasibleFlowError, OracleCapacityError

logger = logging.getLogger("geotransport.oracle")


@dataclass
class ExactResult:
    cost: float
    tmap: TransportationMap
    sources: IntArray
    sinks: IntArray
    source_potentials: FloatArray
    sink_potentials: FloatArray
    augmentations: int = 0


def exact_transport(instance: TransportInstance, *, max_points: int | None = None) -> ExactResult:
    """Optimal map by successive shortest paths over sources (mu > 0) and sinks (mu < 0)."""
    cap = settings.ORACLE_MAX_POINTS if max_points is None else max_points
    if instance.n > cap:
        raise OracleCapacityError(f"Exact oracle is capped at {cap} points, got {instance.n}")
    start = time.perf_counter()
    mu = instance.supplies
    sources = np.flatnonzero(mu > 0.0)
    sinks = np.flatnonzero(mu < 0.0)
    supply = mu[sources].astype(np.float64)
    demand = -mu[sinks].astype(np.float64)
    ns, nt = sources.shape[0], sinks.shape[0]
    pi_s = np.zeros(ns)
    pi_t = np.zeros(nt)
    if ns == 0 or nt == 0:
        return ExactResult(0.0, TransportationMap(), sources, sinks, pi_s, pi_t)

    C = cdist(instance.points[sources], instance.points[sinks])
    X = np.zeros((ns, nt))
    tol = 1e-12 * float(np.abs(mu).sum())
    augmentations = 0

    while np.any(supply > tol):
        d_s = np.where(supply > tol, 0.0, np.inf)
        d_t = np.full(nt, np.inf)
        done_s = np.zeros(ns, dtype=bool)
        done_t = np.zeros(nt, dtype=bool)
        pred_s = np.full(ns, -1, dtype=np.int64)
        pred_t = np.full(nt, -1, dtype=np.int64)
        target = -1
        while True:
            cand_s = np.where(done_s, np.inf, d_s)
            cand_t = np.where(done_t, np.inf, d_t)
            i, j = int(np.argmin(cand_s)), int(np.argmin(cand_t))
            if cand_s[i] == np.inf and cand_t[j] == np.inf:
                break
            if cand_t[j] <= cand_s[i]:
                done_t[j] = True
                if demand[j] > tol:
                    target = j
                    break
                back = (X[:, j] > tol) & ~done_s
                nd = d_t[j] + np.maximum(-C[:, j] + pi_t[j] - pi_s, 0.0)
                better = back & (nd < d_s)
                d_s[better] = nd[better]
                pred_s[better] = j
            else:
                done_s[i] = True
                nd = d_s[i] + np.maximum(C[i, :] + pi_s[i] - pi_t, 0.0)
                better = ~done_t & (nd < d_t)
                d_t[better] = nd[better]
                pred_t[better] = i
        if target < 0:
            raise InfeasibleFlowError("Remaining supply cannot reach any demand")

        path: list[tuple[int, int, int]] = []
        delta = demand[target]
        t = target
        while True:
            s = int(pred_t[t])
            path.append((s, t, 1))
            prev_t = int(pred_s[s])
            if prev_t < 0:
                break
            path.append((s, prev_t, -1))
            delta = min(delta, X[s, prev_t])
            t = prev_t
        delta = min(delta, supply[s])
        for a, b, sign in path:
            X[a, b] += sign * delta
        supply[s] -= delta
        demand[target] -= delta
        augmentations += 1

        dt = d_t[target]
        pi_s += np.minimum(d_s, dt)
        pi_t += np.minimum(d_t, dt)

    rows, cols = np.nonzero(X > tol)
    tmap = TransportationMap(sources[rows], sinks[cols], X[rows, cols])
    cost = float(np.sum(X[rows, cols] * C[rows, cols]))
    logger.info(
        "Exact transport finished in: %.3f seconds (%d sources, %d sinks, cost %.6g)",
        time.perf_counter() - start, ns, nt, cost,
    )
    return ExactResult(cost, tmap, sources, sinks, pi_s, pi_t, augmentations)


def certify(instance: TransportInstance, result: ExactResult, tolerance: float = 1e-9) -> tuple[bool, str | None]:
    """Feasibility plus complementary slackness of the oracle's potentials.

    Returns (ok, witness) where witness describes the first violation found.
    """
    mass = instance.total_mass
    div = map_divergence(instance, result.tmap)
    err = float(np.abs(div - instance.supplies).sum())
    if err > tolerance * max(mass, 1e-300):
        return False, f"divergence error {err:.3e}"
    if result.sources.size == 0 or result.sinks.size == 0:
        return True, None

    C = cdist(instance.points[result.sources], instance.points[result.sinks])
    rise = result.sink_potentials[None, :] - result.source_potentials[:, None]
    slack = tolerance * max(1.0, float(C.max()))
    over = rise - C
    if np.any(over > slack):
        i, j = np.unravel_index(int(np.argmax(over)), over.shape)
        return False, (
            f"potential rise {rise[i, j]:.6g} exceeds distance {C[i, j]:.6g} "
            f"between {int(result.sources[i])} and {int(result.sinks[j])}"
        )
    row_of = {int(p): k for k, p in enumerate(result.sources.tolist())}
    col_of = {int(q): k for k, q in enumerate(result.sinks.tolist())}
    for s, t, _ in result.tmap:
        i, j = row_of[s], col_of[t]
        if rise[i, j] < C[i, j] - slack:
            return False, f"row {s}->{t} is not tight: rise {rise[i, j]:.6g} < distance {C[i, j]:.6g}"
    return True, None
