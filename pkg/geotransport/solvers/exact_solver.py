"""Exact uncapacitated min-cost flow by successive shortest paths with vertex potentials."""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from geotransport.core import FloatArray, IntArray
from geotransport.errors import InfeasibleFlowError
from geotransport.precond import PreconditionerContext
from geotransport.spanner import check_balanced
from geotransport.solvers.base_solver import BaseSolver, SolveStats, SolverConfig

logger = logging.getLogger("geotransport.solvers.exact")

INF = float("inf")


class FlowNetwork(Protocol):
    """Anything with oriented edges (tail, head) and nonnegative lengths."""
    tail: IntArray
    head: IntArray
    length: FloatArray

    @property
    def num_vertices(self) -> int: ...


@dataclass
class ExactFlow:
    flow: FloatArray
    potentials: FloatArray
    cost: float
    augmentations: int
    certified: bool
    # dual value -<phi, b>; equals cost when certified
    lower_bound: float = 0.0


def _adjacency(num_vertices: int, tail: list[int], head: list[int]) -> list[list[tuple[int, int, int]]]:
    """Per vertex: (edge, neighbour, direction) with direction +1 when leaving along the orientation."""
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(num_vertices)]
    for e, (t, h) in enumerate(zip(tail, head)):
        adj[t].append((e, h, 1))
        adj[h].append((e, t, -1))
    return adj


def certify_potentials(
    network: FlowNetwork, flow: np.ndarray, potentials: np.ndarray, tolerance: float = 1e-9
) -> bool:
    """Complementary slackness: |dphi| <= length everywhere, = length along flow direction."""
    length = np.asarray(network.length, dtype=np.float64)
    rise = potentials[network.head] - potentials[network.tail]
    slack = tolerance * max(1.0, float(np.abs(potentials).max(initial=0.0)))
    if np.any(np.abs(rise) > length + slack):
        return False
    ftol = tolerance * max(1.0, float(np.abs(flow).max(initial=0.0)))
    forward = flow > ftol
    backward = flow < -ftol
    return bool(np.all(rise[forward] >= length[forward] - slack) and np.all(-rise[backward] >= length[backward] - slack))


def solve_exact(network: FlowNetwork, b: np.ndarray, *, tolerance: float = 1e-12) -> ExactFlow:
    """Minimum-cost flow with A f = b on an undirected, uncapacitated network."""
    b = np.asarray(b, dtype=np.float64)
    nv = network.num_vertices
    if b.shape != (nv,):
        raise ValueError(f"Expected {nv} divergences, got shape {b.shape}")
    check_balanced(b)
    mass = float(np.abs(b).sum())

    tail, head = network.tail.tolist(), network.head.tolist()
    length = np.asarray(network.length, dtype=np.float64).tolist()
    f = [0.0] * len(tail)
    phi = [0.0] * nv
    excess = b.tolist()
    tol = tolerance * mass
    adj = _adjacency(nv, tail, head)
    augmentations = 0

    while True:
        sources = [v for v in range(nv) if excess[v] > tol]
        if not sources:
            break
        dist = [INF] * nv
        pred: list[tuple[int, int, int] | None] = [None] * nv
        done = [False] * nv
        heap = [(0.0, s) for s in sources]
        for s in sources:
            dist[s] = 0.0
        target = -1
        while heap:
            du, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if excess[u] < -tol:
                target = u
                break
            pu = phi[u]
            for e, w, direction in adj[u]:
                if done[w]:
                    continue
                cost = -length[e] if direction * f[e] < -tol else length[e]
                rc = cost + pu - phi[w]
                if rc < 0.0:
                    rc = 0.0
                nd = du + rc
                if nd < dist[w]:
                    dist[w] = nd
                    pred[w] = (e, u, direction)
                    heapq.heappush(heap, (nd, w))
        if target < 0:
            raise InfeasibleFlowError("Supply cannot reach any demand: network is disconnected")

        delta = -excess[target]
        path = []
        v = target
        while pred[v] is not None:
            e, u, direction = pred[v]
            path.append((e, direction))
            if direction * f[e] < -tol:
                delta = min(delta, -direction * f[e])
            v = u
        delta = min(delta, excess[v])
        for e, direction in path:
            f[e] += direction * delta
        excess[v] -= delta
        excess[target] += delta
        augmentations += 1

        dt = dist[target]
        for x in range(nv):
            phi[x] += dist[x] if dist[x] < dt else dt

    flow = np.array(f, dtype=np.float64)
    potentials = np.array(phi, dtype=np.float64)
    certified = certify_potentials(network, flow, potentials)
    cost = float(np.dot(np.abs(flow), network.length))
    result = ExactFlow(
        flow=flow,
        potentials=potentials,
        cost=cost,
        augmentations=augmentations,
        certified=certified,
        lower_bound=float(-np.dot(potentials, b)),
    )
    if not certified:
        logger.warning("Potential certificate failed after %d augmentations", augmentations)
    return result


class ExactSolver(BaseSolver):
    backend = "exact"

    def __init__(self, config: SolverConfig | None = None):
        super().__init__(name=self.__class__.__name__, config=config)

    def _solve(self, ctx: PreconditionerContext, b: FloatArray, stats: SolveStats) -> FloatArray:
        result = solve_exact(ctx, b)
        stats.augmentations = result.augmentations
        stats.certified = result.certified
        stats.lower_bound = result.lower_bound
        if not result.certified:
            stats.warning = "optimality certificate failed"
        return result.flow
