"""Sparse Steiner graph over input points and net points, with incidence and cost operators."""
from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from geotransport.core import FloatArray, IntArray, TransportInstance
from geotransport.errors import ConstructionError, InfeasibleFlowError
from geotransport.quadtree import Quadtree, subdivide_and_net

logger = logging.getLogger("geotransport.spanner")

EDGE_POINT = 0
EDGE_CLIQUE = 1
EDGE_PARENT = 2


@dataclass(frozen=True)
class SparseGraph:
    """Vertices 0..n-1 are input points, n.. are net points. Every edge has tail < head.

    ``cell`` holds, per edge, the quadtree cell whose subcells it connects (for parent links
    and point edges: the cell of the lower endpoint in the tree).
    """
    n_points: int
    positions: FloatArray
    tail: IntArray
    head: IntArray
    length: FloatArray
    kind: npt.NDArray[np.int8]
    cell: IntArray
    indptr: IntArray
    incidence: IntArray

    @property
    def num_vertices(self) -> int:
        return int(self.positions.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.tail.shape[0])

    @property
    def num_netpoints(self) -> int:
        return self.num_vertices - self.n_points

    @property
    def point_edges(self) -> IntArray:
        """Edge id of each input point's single edge (point p owns edge p)."""
        return np.arange(self.n_points, dtype=np.int64)

    def incident(self, v: int) -> IntArray:
        return self.incidence[self.indptr[v]:self.indptr[v + 1]]

    def other(self, e: int, v: int) -> int:
        t = int(self.tail[e])
        return int(self.head[e]) if t == v else t

    def stats(self) -> dict[str, int]:
        return {
            "vertices": self.num_vertices,
            "edges": self.num_edges,
            "point_edges": int(np.count_nonzero(self.kind == EDGE_POINT)),
            "clique_edges": int(np.count_nonzero(self.kind == EDGE_CLIQUE)),
            "parent_edges": int(np.count_nonzero(self.kind == EDGE_PARENT)),
        }


def _adjacency(num_vertices: int, tail: IntArray, head: IntArray) -> tuple[IntArray, IntArray]:
    m = tail.shape[0]
    ends = np.concatenate([tail, head])
    eids = np.concatenate([np.arange(m), np.arange(m)])
    order = np.argsort(ends, kind="stable")
    counts = np.bincount(ends, minlength=num_vertices)
    indptr = np.zeros(num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, eids[order].astype(np.int64)


def build_sparse_graph(tree: Quadtree) -> SparseGraph:
    """Point edges, per-cell cliques of net points and net-point parent links.

    The tree is subdivided first if that has not happened yet.
    """
    start = time.perf_counter()
    subdivide_and_net(tree)
    n = tree.n
    nets = tree.netpoints
    centers = np.array([net.center for net in nets], dtype=np.float64).reshape(len(nets), tree.d)
    positions = np.vstack([tree.instance.points, centers])

    tails, heads, kinds, cells = [], [], [], []

    leaf_net = tree.point_netpoint
    tails.append(np.arange(n, dtype=np.int64))
    heads.append(n + leaf_net)
    kinds.append(np.full(n, EDGE_POINT, dtype=np.int8))
    cells.append(np.array([nets[i].cell for i in leaf_net.tolist()], dtype=np.int64))

    for cell in tree.cells:
        k = len(cell.netpoints)
        if k < 2:
            continue
        ids = n + np.array(cell.netpoints, dtype=np.int64)
        iu, ju = np.triu_indices(k, 1)
        tails.append(ids[iu])
        heads.append(ids[ju])
        kinds.append(np.full(iu.shape[0], EDGE_CLIQUE, dtype=np.int8))
        cells.append(np.full(iu.shape[0], cell.id, dtype=np.int64))

    linked = [net for net in nets if net.parent >= 0]
    tails.append(np.array([n + net.parent for net in linked], dtype=np.int64))
    heads.append(np.array([n + net.id for net in linked], dtype=np.int64))
    kinds.append(np.full(len(linked), EDGE_PARENT, dtype=np.int8))
    cells.append(np.array([net.cell for net in linked], dtype=np.int64))

    tail = np.concatenate(tails)
    head = np.concatenate(heads)
    if np.any(tail >= head):
        raise ConstructionError("Edge orientation broken: every tail must precede its head")
    length = np.linalg.norm(positions[head] - positions[tail], axis=1)
    indptr, incidence = _adjacency(positions.shape[0], tail, head)
    graph = SparseGraph(
        n_points=n,
        positions=positions,
        tail=tail,
        head=head,
        length=length,
        kind=np.concatenate(kinds),
        cell=np.concatenate(cells),
        indptr=indptr,
        incidence=incidence,
    )
    logger.info(
        "Sparse graph finished in: %.3f seconds (%d vertices, %d edges)",
        time.perf_counter() - start, graph.num_vertices, graph.num_edges,
    )
    return graph


def _check_flow(graph: SparseGraph, f: np.ndarray) -> FloatArray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (graph.num_edges,):
        raise ValueError(f"Flow has shape {f.shape}, graph has {graph.num_edges} edges")
    return f


def apply_incidence(graph: SparseGraph, f: np.ndarray) -> FloatArray:
    """Divergence Af: outflow minus inflow at every vertex."""
    f = _check_flow(graph, f)
    v = graph.num_vertices
    return np.bincount(graph.tail, weights=f, minlength=v) - np.bincount(graph.head, weights=f, minlength=v)


def flow_cost(graph: SparseGraph, f: np.ndarray) -> float:
    f = _check_flow(graph, f)
    return float(np.dot(np.abs(f), graph.length))


def route_supplies(graph: SparseGraph, instance: TransportInstance) -> tuple[FloatArray, FloatArray]:
    """Push every supply onto its point edge.

    Returns (f0, b') where b' is indexed by all vertices; it is zero on input points and holds
    the total supply attached to each net point.
    """
    if instance.n != graph.n_points:
        raise ValueError(f"Instance has {instance.n} points, graph has {graph.n_points}")
    f0 = np.zeros(graph.num_edges, dtype=np.float64)
    f0[graph.point_edges] = instance.supplies
    b_star = np.zeros(graph.num_vertices, dtype=np.float64)
    b_star[:graph.n_points] = instance.supplies
    b_prime = b_star - apply_incidence(graph, f0)
    b_prime[:graph.n_points] = 0.0
    return f0, b_prime


def graph_distance(graph: SparseGraph, p: int, q: int) -> float:
    """Exact shortest-path distance between two vertices."""
    for v in (p, q):
        if not 0 <= v < graph.num_vertices:
            raise ValueError(f"Vertex {v} out of range")
    if p == q:
        return 0.0
    dist = {p: 0.0}
    heap = [(0.0, p)]
    done: set[int] = set()
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == q:
            return du
        done.add(u)
        for e in graph.incident(u).tolist():
            w = graph.other(e, u)
            nd = du + float(graph.length[e])
            if nd < dist.get(w, float("inf")):
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    raise ConstructionError(f"Vertex {q} is unreachable from {p}")


def check_balanced(b: np.ndarray, tolerance: float = 1e-9) -> None:
    """Raise unless the divergences sum to zero relative to their total mass."""
    total = float(np.sum(b))
    if abs(total) > tolerance * max(float(np.abs(b).sum()), 1e-300):
        raise InfeasibleFlowError(f"Divergences are unbalanced: sum={total:.3e}")


def dump_graph(graph: SparseGraph) -> str:
    """Edge list, one ``tail head length`` line per edge."""
    return "".join(
        f"{t} {h} {w:.17g}\n"
        for t, h, w in zip(graph.tail.tolist(), graph.head.tolist(), graph.length.tolist())
    )
