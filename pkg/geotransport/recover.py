"""Turn a feasible flow on the sparse graph into a transportation map between input points.

Each net point v keeps two prefix split trees: ``pt[v]`` lists the points v currently sends
flow to, ``nt[v]`` the points that send flow to v. Cells are processed children first; every
net point first cancels opposing net-to-net flow through itself, then hands its point trees
to the net points it exchanges flow with, and finally pairs its senders with its receivers
directly. By the triangle inequality no step increases the cost.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from geotransport.config import settings
from geotransport.core import CoincidenceMap, TransportationMap
from geotransport.errors import InfeasibleFlowError
from geotransport.psplit import PrefixSplitTree
from geotransport.quadtree import Quadtree
from geotransport.spanner import EDGE_POINT, SparseGraph, apply_incidence, flow_cost

logger = logging.getLogger("geotransport.recover")


@dataclass
class RecoveryState:
    """Explicit net-to-net flows, the per-net-point trees and the point-to-point result."""
    graph: SparseGraph
    tolerance: float
    debug: bool = False
    flows: dict[int, dict[int, float]] = field(default_factory=dict)
    pt: dict[int, PrefixSplitTree] = field(default_factory=dict)
    nt: dict[int, PrefixSplitTree] = field(default_factory=dict)
    point_flows: dict[tuple[int, int], float] = field(default_factory=dict)
    dropped: float = 0.0
    splits: int = 0
    drains: int = 0

    # ------------------- net-to-net flows -------------------

    def flow(self, v: int, w: int) -> float:
        """f(v, w), antisymmetric."""
        return self.flows.get(v, {}).get(w, 0.0)

    def set_flow(self, v: int, w: int, value: float) -> None:
        if abs(value) <= self.tolerance:
            self.flows.get(v, {}).pop(w, None)
            self.flows.get(w, {}).pop(v, None)
            if value != 0.0:
                self.dropped += abs(value)
            return
        self.flows.setdefault(v, {})[w] = value
        self.flows.setdefault(w, {})[v] = -value

    def partners(self, v: int) -> list[int]:
        return sorted(self.flows.get(v, {}))

    # ------------------- trees -------------------

    def _tree(self, table: dict[int, PrefixSplitTree], v: int) -> PrefixSplitTree:
        tree = table.get(v)
        if tree is None:
            tree = PrefixSplitTree(tolerance=settings.PREFIX_SPLIT_TOLERANCE, debug=self.debug)
            table[v] = tree
        return tree

    def pt_of(self, v: int) -> PrefixSplitTree:
        return self._tree(self.pt, v)

    def nt_of(self, v: int) -> PrefixSplitTree:
        return self._tree(self.nt, v)

    # ------------------- implicit flow (debug) -------------------

    def implicit_cost(self) -> float:
        pos = self.graph.positions
        total = 0.0
        for v, row in self.flows.items():
            for w, value in row.items():
                if value > 0.0:
                    total += value * float(np.linalg.norm(pos[w] - pos[v]))
        for table in (self.pt, self.nt):
            for v, tree in table.items():
                for node in tree.nodes():
                    total += node.w * float(np.linalg.norm(pos[node.label] - pos[v]))
        for (p, q), amount in self.point_flows.items():
            total += amount * float(np.linalg.norm(pos[q] - pos[p]))
        return total

    def implicit_divergence(self) -> np.ndarray:
        div = np.zeros(self.graph.num_vertices, dtype=np.float64)
        for v, row in self.flows.items():
            div[v] += math.fsum(row.values())
        for v, tree in self.pt.items():
            for node in tree.nodes():
                div[v] += node.w
                div[node.label] -= node.w
        for v, tree in self.nt.items():
            for node in tree.nodes():
                div[v] -= node.w
                div[node.label] += node.w
        for (p, q), amount in self.point_flows.items():
            div[p] += amount
            div[q] -= amount
        return div


def _initial_state(graph: SparseGraph, f: np.ndarray, tolerance: float, debug: bool) -> RecoveryState:
    state = RecoveryState(graph=graph, tolerance=tolerance, debug=debug)
    for e, (t, h, value) in enumerate(zip(graph.tail.tolist(), graph.head.tolist(), f.tolist())):
        if value == 0.0:
            continue
        if graph.kind[e] == EDGE_POINT:
            # t is the point, h its leaf net point
            if value > tolerance:
                state.nt_of(h).insert(t, value)
            elif value < -tolerance:
                state.pt_of(h).insert(t, -value)
            else:
                state.dropped += abs(value)
        else:
            state.set_flow(t, h, state.flow(t, h) + value)
    return state


def _process_netpoint(state: RecoveryState, v: int, allowed: set[int] | None) -> None:
    partners = state.partners(v)
    if allowed is not None and any(u not in allowed for u in partners):
        raise AssertionError(f"Net point {v} still exchanges flow outside its cell neighbourhood")

    # cancel: u -> v -> w becomes u -> w
    senders = [u for u in partners if state.flow(v, u) < 0.0]
    receivers = [w for w in partners if state.flow(v, w) > 0.0]
    i = j = 0
    while i < len(senders) and j < len(receivers):
        u, w = senders[i], receivers[j]
        delta = min(-state.flow(v, u), state.flow(v, w))
        state.set_flow(u, w, state.flow(u, w) + delta)
        state.set_flow(u, v, state.flow(u, v) - delta)
        state.set_flow(v, w, state.flow(v, w) - delta)
        if state.flow(u, v) <= 0.0:
            i += 1
        if state.flow(v, w) <= 0.0:
            j += 1

    # incoming net flow takes over a prefix of v's receiving points
    for u in state.partners(v):
        amount = state.flow(u, v)
        if amount <= 0.0:
            continue
        pt = state.pt_of(v)
        take = min(amount, pt.total_weight)
        if take > state.tolerance:
            state.pt_of(u).merge(pt.prefix_split(take))
            state.splits += 1
        state.dropped += amount - take if take > state.tolerance else amount
        state.flows[u].pop(v, None)
        state.flows[v].pop(u, None)

    # outgoing net flow takes over a prefix of v's sending points
    for w in state.partners(v):
        amount = state.flow(v, w)
        if amount <= 0.0:
            continue
        nt = state.nt_of(v)
        take = min(amount, nt.total_weight)
        if take > state.tolerance:
            state.nt_of(w).merge(nt.prefix_split(take))
            state.splits += 1
        state.dropped += amount - take if take > state.tolerance else amount
        state.flows[v].pop(w, None)
        state.flows[w].pop(v, None)

    # drain: sender p and receiver q of v trade directly
    pt, nt = state.pt.get(v), state.nt.get(v)
    while pt and nt:
        x, y = nt.first(), pt.first()
        delta = min(x.w, y.w)
        p, q = x.label, y.label
        if p != q:
            state.point_flows[(p, q)] = state.point_flows.get((p, q), 0.0) + delta
        for tree, node in ((nt, x), (pt, y)):
            rest = node.w - delta
            if rest <= state.tolerance:
                state.dropped += max(rest, 0.0)
                tree.delete(node)
            else:
                tree.update_weight(node, rest)
        state.drains += 1

    for table in (state.pt, state.nt):
        tree = table.pop(v, None)
        if tree:
            state.dropped += tree.total_weight


def recover_map(
    graph: SparseGraph,
    tree: Quadtree,
    flow: np.ndarray,
    *,
    debug: bool = False,
    tolerance: float | None = None,
) -> TransportationMap:
    """Transportation map between the tree's (collapsed) input points, of cost <= flow cost."""
    start = time.perf_counter()
    f = np.asarray(flow, dtype=np.float64)
    if f.shape != (graph.num_edges,):
        raise ValueError(f"Flow has shape {f.shape}, graph has {graph.num_edges} edges")
    n = graph.n_points
    supplies = tree.instance.supplies
    mass = float(np.abs(supplies).sum())
    div = apply_incidence(graph, f)
    err = float(np.abs(div[n:]).sum() + np.abs(div[:n] - supplies).sum())
    if err > 1e-9 * max(mass, 1e-300):
        raise InfeasibleFlowError(f"Flow is infeasible: divergence error {err:.3e} (mass {mass:.3e})")

    tol = (settings.DUST_TOLERANCE if tolerance is None else tolerance) * mass
    state = _initial_state(graph, f, tol, debug)
    start_cost = flow_cost(graph, f)
    last_cost = state.implicit_cost() if debug else start_cost

    for cid in tree.postorder():
        cell = tree.cells[cid]
        if not cell.netpoints:
            continue
        nets = [n + nid for nid in cell.netpoints]
        parents = {n + tree.netpoints[nid].parent for nid in cell.netpoints if tree.netpoints[nid].parent >= 0}
        allowed = set(nets) | parents if debug else None
        for v in nets:
            _process_netpoint(state, v, allowed)
        if debug:
            cost = state.implicit_cost()
            if cost > last_cost * (1.0 + 1e-9) + tol:
                raise AssertionError(f"Recovery increased the cost at cell {cid}: {last_cost:.12g} -> {cost:.12g}")
            last_cost = cost
            drift = state.implicit_divergence()
            drift[:n] -= supplies
            if float(np.abs(drift).sum()) > 1e-9 * max(mass, 1e-300) + 2 * state.dropped:
                raise AssertionError(f"Recovery broke conservation at cell {cid}")

    rows = []
    for (p, q), amount in state.point_flows.items():
        back = state.point_flows.get((q, p), 0.0)
        if amount > back:
            rows.append((p, q, amount - back))
    tmap = TransportationMap.from_entries(rows)
    if state.dropped > 1e-9 * max(mass, 1e-300):
        logger.warning("Recovery dropped %.3e of flow as rounding dust", state.dropped)
    logger.info(
        "Recovery finished in: %.3f seconds (%d rows, %d splits, %d drains)",
        time.perf_counter() - start, len(tmap), state.splits, state.drains,
    )
    return tmap


class _Quota:
    """Consumes a list of (member, capacity) slots in order."""

    def __init__(self, members: list[int], capacity: list[float]) -> None:
        self.members = members
        self.capacity = capacity
        self.pos = 0

    def take(self, amount: float) -> list[tuple[int, float]]:
        pieces = []
        last = len(self.members) - 1
        while amount > 0.0:
            while self.pos < last and self.capacity[self.pos] <= 0.0:
                self.pos += 1
            piece = amount if self.pos == last else min(amount, self.capacity[self.pos])
            pieces.append((self.members[self.pos], piece))
            self.capacity[self.pos] -= piece
            amount -= piece
        return pieces


def merge_coincident(tmap: TransportationMap, coincidence: CoincidenceMap) -> TransportationMap:
    """Re-expand a map over representatives to the original, possibly coincident, points."""
    if coincidence.is_identity:
        return tmap
    groups = [g.tolist() for g in coincidence.groups]
    mu = coincidence.original_supplies.tolist()
    count = len(groups)
    outflow = np.bincount(tmap.sources, weights=tmap.amounts, minlength=count).tolist()

    out_q: list[_Quota] = []
    in_q: list[_Quota] = []
    internal: list[tuple[int, int, float]] = []
    for g, members in enumerate(groups):
        outs = [max(mu[i], 0.0) for i in members]
        ins = [max(-mu[i], 0.0) for i in members]
        extra = outflow[g] - math.fsum(outs)
        if extra >= 0.0:
            # the group forwards mass it does not own; member 0 passes it through
            outs[0] += extra
            ins[0] += extra
        else:
            need, i, j = -extra, 0, 0
            while need > 0.0 and i < len(members) and j < len(members):
                if outs[i] <= 0.0:
                    i += 1
                    continue
                if ins[j] <= 0.0:
                    j += 1
                    continue
                delta = min(outs[i], ins[j], need)
                internal.append((members[i], members[j], delta))
                outs[i] -= delta
                ins[j] -= delta
                need -= delta
        out_q.append(_Quota(members, outs))
        in_q.append(_Quota(members, ins))

    rows: list[tuple[int, int, float]] = []
    for s, t, a in tmap:
        for i, part in out_q[s].take(a):
            for j, piece in in_q[t].take(part):
                rows.append((i, j, piece))
    rows.extend(internal)
    return TransportationMap.from_entries(rows)
