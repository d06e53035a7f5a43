"""Implicit tree preconditioner B for one simple sub-quadtree and its greedy solver.

B has one row per net point nu: B[nu, v] = side(nu) / Lambda when v lies in the subtree of nu
(nu included). It is never materialized; every product is one pass over the net-point tree.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from geotransport.core import FloatArray, IntArray
from geotransport.errors import InfeasibleFlowError
from geotransport.quadtree import Quadtree, SimpleSubquadtree
from geotransport.spanner import EDGE_POINT, SparseGraph, check_balanced

logger = logging.getLogger("geotransport.precond")

LAMBDA_CONSTANT = 22.0


@dataclass(eq=False)
class PreconditionerContext:
    """Induced net-point graph of one simple sub-quadtree plus the tree data B needs.

    Local vertex ids follow the preorder of the sub-quadtree's cells; ``vertices`` maps them
    back to graph vertex ids and ``edges`` maps local edges back to graph edge ids.
    """
    subtree: SimpleSubquadtree
    vertices: IntArray
    netpoints: IntArray
    parent: IntArray
    side: FloatArray
    depth: IntArray
    levels: list[IntArray]
    roots: IntArray
    edges: IntArray
    tail: IntArray
    head: IntArray
    length: FloatArray
    postorder_cells: list[IntArray]
    lam: float
    eps0: float
    dim: int
    col_sum: FloatArray = field(repr=False, default=None)
    row_sum: FloatArray = field(repr=False, default=None)
    children: list[list[int]] = field(repr=False, default_factory=list)
    edge_of: dict[tuple[int, int], int] = field(repr=False, default_factory=dict)
    apply_count: int = 0

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.tail.shape[0])

    @property
    def weights(self) -> FloatArray:
        """Row scale of B: side / Lambda per net point."""
        return self.side / self.lam

    @property
    def kappa_bound(self) -> float:
        """Factor of the greedy cost bound: greedy cost <= kappa_bound * ||B b||_1."""
        return math.sqrt(self.dim) * self.lam / self.eps0


def build_context(tree: Quadtree, graph: SparseGraph, subtree: SimpleSubquadtree) -> PreconditionerContext:
    n = graph.n_points
    nets = [nid for cid in subtree.cells for nid in tree.cells[cid].netpoints]
    netpoints = np.array(nets, dtype=np.int64)
    vertices = n + netpoints
    local_of = {nid: i for i, nid in enumerate(nets)}
    count = len(nets)

    parent = np.full(count, -1, dtype=np.int64)
    depth = np.zeros(count, dtype=np.int64)
    side = np.empty(count, dtype=np.float64)
    children: list[list[int]] = [[] for _ in range(count)]
    for i, nid in enumerate(nets):
        net = tree.netpoints[nid]
        side[i] = net.side
        p = local_of.get(net.parent, -1) if net.parent >= 0 else -1
        parent[i] = p
        if p >= 0:
            depth[i] = depth[p] + 1
            children[p].append(i)

    max_depth = int(depth.max()) if count else 0
    levels = [np.flatnonzero(depth == lv) for lv in range(max_depth + 1)]
    roots = levels[0] if levels else np.zeros(0, dtype=np.int64)

    candidates = np.unique(np.concatenate([graph.incident(int(v)) for v in vertices.tolist()]))
    order = np.argsort(vertices)
    sorted_v = vertices[order]
    t_glob, h_glob = graph.tail[candidates], graph.head[candidates]
    inside = (
        (graph.kind[candidates] != EDGE_POINT)
        & np.isin(t_glob, vertices)
        & np.isin(h_glob, vertices)
    )
    edges = candidates[inside]
    tail = order[np.searchsorted(sorted_v, graph.tail[edges])].astype(np.int64)
    head = order[np.searchsorted(sorted_v, graph.head[edges])].astype(np.int64)
    edge_of = {(min(a, b), max(a, b)): e for e, (a, b) in enumerate(zip(tail.tolist(), head.tolist()))}

    postorder_cells = [
        np.array([local_of[nid] for nid in tree.cells[cid].netpoints], dtype=np.int64)
        for cid in reversed(subtree.cells)
    ]

    n_source = tree.source_instance.n
    lam = LAMBDA_CONSTANT * math.log2(max(n_source, 1) / tree.eps0)
    ctx = PreconditionerContext(
        subtree=subtree,
        vertices=vertices,
        netpoints=netpoints,
        parent=parent,
        side=side,
        depth=depth,
        levels=levels,
        roots=roots,
        edges=edges,
        tail=tail,
        head=head,
        length=graph.length[edges],
        postorder_cells=postorder_cells,
        lam=lam,
        eps0=tree.eps0,
        dim=tree.d,
        children=children,
        edge_of=edge_of,
    )
    ctx.col_sum, ctx.row_sum = _abs_sums(ctx)
    logger.debug(
        "Context for part %d: %d net points, %d edges, Lambda=%.2f",
        subtree.id, ctx.num_vertices, ctx.num_edges, lam,
    )
    return ctx


def _abs_sums(ctx: PreconditionerContext) -> tuple[FloatArray, FloatArray]:
    """Column and row sums of |BA|.

    Column e is nonzero exactly on net points whose subtree holds one endpoint of e but not
    the other, i.e. the two ancestor chains up to their meeting point.
    """
    w = ctx.weights
    parent, depth = ctx.parent.tolist(), ctx.depth.tolist()
    col = np.zeros(ctx.num_edges, dtype=np.float64)
    cuts = np.zeros(ctx.num_vertices, dtype=np.int64)
    for e, (a, b) in enumerate(zip(ctx.tail.tolist(), ctx.head.tolist())):
        total = 0.0
        while a != b:
            if b < 0 or (a >= 0 and depth[a] >= depth[b]):
                total += w[a]
                cuts[a] += 1
                a = parent[a]
            else:
                total += w[b]
                cuts[b] += 1
                b = parent[b]
        col[e] = total
    return col, w * cuts


def _subtree_sums(ctx: PreconditionerContext, values: FloatArray) -> FloatArray:
    sums = np.array(values, dtype=np.float64)
    for idx in reversed(ctx.levels[1:]):
        np.add.at(sums, ctx.parent[idx], sums[idx])
    return sums


def _check_vertex_vector(ctx: PreconditionerContext, b: np.ndarray) -> FloatArray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (ctx.num_vertices,):
        raise ValueError(f"Expected {ctx.num_vertices} divergences, got shape {b.shape}")
    return b


def local_incidence(ctx: PreconditionerContext, f: np.ndarray) -> FloatArray:
    """A f on the induced graph."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (ctx.num_edges,):
        raise ValueError(f"Expected {ctx.num_edges} edge values, got shape {f.shape}")
    v = ctx.num_vertices
    return np.bincount(ctx.tail, weights=f, minlength=v) - np.bincount(ctx.head, weights=f, minlength=v)


def apply_B_norm(ctx: PreconditionerContext, b: np.ndarray) -> tuple[float, FloatArray]:
    """||B b||_1 and the per-subcell terms side/Lambda * |subtree sum|."""
    b = _check_vertex_vector(ctx, b)
    check_balanced(b)
    terms = ctx.weights * np.abs(_subtree_sums(ctx, b))
    return float(terms.sum()), terms


def apply_B(ctx: PreconditionerContext, b: np.ndarray) -> FloatArray:
    """B b as a vector over net points."""
    b = _check_vertex_vector(ctx, b)
    return ctx.weights * _subtree_sums(ctx, b)


def apply_BA(ctx: PreconditionerContext, f: np.ndarray) -> FloatArray:
    ctx.apply_count += 1
    return ctx.weights * _subtree_sums(ctx, local_incidence(ctx, f))


def apply_BA_transpose(ctx: PreconditionerContext, y: np.ndarray) -> FloatArray:
    y = _check_vertex_vector(ctx, y)
    ctx.apply_count += 1
    prefix = ctx.weights * y
    for idx in ctx.levels[1:]:
        prefix[idx] += prefix[ctx.parent[idx]]
    return prefix[ctx.tail] - prefix[ctx.head]


def greedy_bound(ctx: PreconditionerContext, b: np.ndarray) -> float:
    norm, _ = apply_B_norm(ctx, b)
    return ctx.kappa_bound * norm


def greedy_flow(ctx: PreconditionerContext, b: np.ndarray) -> FloatArray:
    """A flow with A f = b built bottom-up.

    In every cell (children before parents), the child net points of each net point cancel
    their remaining supply pairwise along clique edges, and whatever is left moves up the
    parent link. The root cell's net points finally cancel among themselves.
    """
    b = _check_vertex_vector(ctx, b)
    check_balanced(b)
    f = np.zeros(ctx.num_edges, dtype=np.float64)
    rem = b.copy()
    tol = 1e-12 * float(np.abs(b).sum())
    tail = ctx.tail

    def push(u: int, v: int, amount: float) -> None:
        e = ctx.edge_of[(u, v) if u < v else (v, u)]
        if tail[e] == u:
            f[e] += amount
        else:
            f[e] -= amount
        rem[u] -= amount
        rem[v] += amount

    def cancel(group: list[int]) -> None:
        pos = [v for v in group if rem[v] > tol]
        neg = [v for v in group if rem[v] < -tol]
        i = j = rounds = 0
        while i < len(pos) and j < len(neg):
            rounds += 1
            if rounds > len(group):
                raise InfeasibleFlowError("Greedy pairing failed to terminate")
            u, w = pos[i], neg[j]
            push(u, w, min(rem[u], -rem[w]))
            if rem[u] <= tol:
                i += 1
            if rem[w] >= -tol:
                j += 1

    for cell_nets in ctx.postorder_cells:
        for nu in cell_nets.tolist():
            kids = ctx.children[nu]
            if not kids:
                continue
            cancel(kids)
            for v in kids:
                if rem[v] != 0.0:
                    push(v, nu, rem[v])

    roots = ctx.roots.tolist()
    cancel(roots)
    for v in roots[1:]:
        if rem[v] != 0.0:
            push(v, roots[0], rem[v])
    return f
