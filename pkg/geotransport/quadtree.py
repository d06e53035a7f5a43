"""Randomly shifted conditionally-compressed quadtree, its subcells and net points.

Each simple sub-quadtree (the global root, or a compressed Rule-2 child) keeps the exact
rational offset of every point from its shifted root square. Membership in cells and
subcells is decided by integer floors of those offsets, so nesting is exact at any depth
and boxes are half-open [low, high).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np
import numpy.typing as npt

from geotransport.config import settings
from geotransport.core import CoincidenceMap, TransportInstance, collapse_coincident
from geotransport.errors import ConstructionError

logger = logging.getLogger("geotransport.quadtree")

RULE_ROOT = "root"
RULE_COMPRESS = "rule2"
RULE_SPLIT = "rule3"


# ---------- Parameters ----------

@dataclass(frozen=True)
class QuadtreeParams:
    """eps0 (1/eps0 a power of two), instance size n, RNG seed and the tunable exponents."""
    eps0: float
    n: int
    seed: int = 0
    moat_exponent: float = settings.MOAT_EXPONENT
    rule2_exponent: float = settings.RULE2_EXPONENT
    random_shift: bool = True

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"Quadtree needs n >= 1, got {self.n}")
        if not 0.0 < self.eps0 <= 0.5:
            raise ValueError(f"eps0 must lie in (0, 1/2], got {self.eps0}")
        inv = round(1.0 / self.eps0)
        if inv & (inv - 1) or abs(inv * self.eps0 - 1.0) > 1e-12:
            raise ValueError(f"1/eps0 must be a power of two, got 1/{1.0 / self.eps0:g}")

    @classmethod
    def from_epsilon(
        cls,
        epsilon: float,
        n: int,
        seed: int = 0,
        *,
        constant: float | None = None,
        **kwargs,
    ) -> "QuadtreeParams":
        """eps0 = epsilon / (c * ceil(log2 n)), rounded down so that 1/eps0 is a power of two."""
        if epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        c = settings.EPS0_CONSTANT if constant is None else constant
        raw = epsilon / (c * max(1, math.ceil(math.log2(max(n, 1)))))
        exponent = max(1, math.ceil(math.log2(1.0 / raw) - 1e-12))
        return cls(eps0=1.0 / (1 << exponent), n=n, seed=seed, **kwargs)

    @property
    def grid(self) -> int:
        """Subcells per side of a cell (1/eps0)."""
        return round(1.0 / self.eps0)

    @property
    def grid_bits(self) -> int:
        return self.grid.bit_length() - 1


# ---------- Tree records ----------

@dataclass(slots=True)
class Cell:
    id: int
    parent: int
    subtree: int
    level: int
    coords: tuple[int, ...]
    corner: npt.NDArray[np.float64]
    side: float
    rule: str
    children: list[int] = field(default_factory=list)
    point_start: int = 0
    point_end: int = 0
    netpoints: list[int] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def is_subtree_root(self) -> bool:
        return self.rule != RULE_SPLIT

    @property
    def npoints(self) -> int:
        return self.point_end - self.point_start


@dataclass(slots=True)
class NetPoint:
    """A nonempty subcell and the Steiner vertex at its center."""
    id: int
    cell: int
    index: tuple[int, ...]
    center: npt.NDArray[np.float64]
    side: float
    vertex: int
    parent: int = -1
    children: list[int] = field(default_factory=list)
    first_point: int = -1
    npoints: int = 0


@dataclass(slots=True)
class SimpleSubquadtree:
    """Cells sharing one random shift: the global root's part or a Rule-2 child's part."""
    id: int
    root_cell: int
    parent: int
    depth: int
    corner: npt.NDArray[np.float64]
    side: float
    shift: npt.NDArray[np.float64]
    seed_path: tuple[int, ...]
    cells: list[int] = field(default_factory=list)
    exact: dict[int, tuple[Fraction, ...]] = field(default_factory=dict, repr=False)


@dataclass
class Quadtree:
    instance: TransportInstance
    source_instance: TransportInstance
    coincidence: CoincidenceMap
    params: QuadtreeParams
    cells: list[Cell]
    subtrees: list[SimpleSubquadtree]
    perm: npt.NDArray[np.int64]
    netpoints: list[NetPoint] = field(default_factory=list)
    point_netpoint: npt.NDArray[np.int64] | None = None
    cell_assignment: list[npt.NDArray[np.int64]] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.instance.n

    @property
    def d(self) -> int:
        return self.instance.d

    @property
    def eps0(self) -> float:
        return self.params.eps0

    @property
    def root(self) -> Cell:
        return self.cells[0]

    @property
    def subdivided(self) -> bool:
        return self.point_netpoint is not None

    def points_of(self, cell: Cell) -> npt.NDArray[np.int64]:
        return self.perm[cell.point_start:cell.point_end]

    def postorder(self) -> range:
        """Cell ids, children before parents."""
        return range(len(self.cells) - 1, -1, -1)

    def stats(self) -> dict[str, int]:
        return {
            "cells": len(self.cells),
            "net_points": len(self.netpoints),
            "simple_subquadtrees": len(self.subtrees),
            "rule2_jumps": len(self.subtrees) - 1,
            "leaves": sum(1 for c in self.cells if c.is_leaf),
        }


# ---------- Construction ----------

class _PointLists:
    """Per-dimension sorted doubly-linked lists of the points of one cell."""
    __slots__ = ("head", "tail", "count")

    def __init__(self, head: list[int], tail: list[int], count: int) -> None:
        self.head = head
        self.tail = tail
        self.count = count


def _floor_scaled(z: Fraction, bits: int) -> int:
    """floor(z * 2**bits) in integer arithmetic."""
    return (z.numerator << bits) // z.denominator


class _TreeBuilder:
    def __init__(self, instance: TransportInstance, params: QuadtreeParams) -> None:
        self.params = params
        self.pts: list[list[float]] = instance.points.tolist()
        self.n = instance.n
        self.d = instance.d
        self.nxt = [[-1] * self.n for _ in range(self.d)]
        self.prv = [[-1] * self.n for _ in range(self.d)]
        self.cells: list[Cell] = []
        self.subtrees: list[SimpleSubquadtree] = []
        self.perm: list[int] = []
        self._spawned: dict[int, int] = {}
        self._threshold = 3.0 * float(params.n) ** params.rule2_exponent

    # ------------------- lists -------------------

    def _initial_lists(self) -> _PointLists:
        heads, tails = [], []
        for j in range(self.d):
            order = sorted(range(self.n), key=lambda i: (self.pts[i][j], i))
            self._link(j, order)
            heads.append(order[0])
            tails.append(order[-1])
        return _PointLists(heads, tails, self.n)

    def _link(self, j: int, order: list[int]) -> None:
        nxt, prv = self.nxt[j], self.prv[j]
        for a, b in zip(order, order[1:]):
            nxt[a] = b
            prv[b] = a
        prv[order[0]] = -1
        nxt[order[-1]] = -1

    def _walk(self, lists: _PointLists, j: int) -> list[int]:
        out, i, nxt = [], lists.head[j], self.nxt[j]
        while i != -1:
            out.append(i)
            i = nxt[i]
        return out

    def _members(self, lists: _PointLists) -> list[int]:
        return self._walk(lists, 0)

    def _bbox(self, lists: _PointLists) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.pts[lists.head[j]][j] for j in range(self.d)])
        hi = np.array([self.pts[lists.tail[j]][j] for j in range(self.d)])
        return lo, hi

    def _split(self, lists: _PointLists, j: int, is_high: Callable[[int], bool]) -> tuple[int, list[int]]:
        """Detach the smaller side of a split by a predicate monotone along list j.

        Walks inward from both ends, so the cost is proportional to the smaller side. Returns
        the side left in ``lists`` (0 low, 1 high) and the detached points in list-j order.
        """
        nxt, prv = self.nxt[j], self.prv[j]
        f, b = lists.head[j], lists.tail[j]
        n_low = n_high = 0
        while True:
            if f == -1 or is_high(f):
                if n_low == 0:
                    return 1, []
                if n_low == lists.count:
                    return 0, []
                small_is_low = True
                break
            n_low += 1
            f = nxt[f]
            if b == -1 or not is_high(b):
                if n_high == 0:
                    return 0, []
                if n_high == lists.count:
                    return 1, []
                small_is_low = False
                break
            n_high += 1
            b = prv[b]

        members: list[int] = []
        if small_is_low:
            i = lists.head[j]
            for _ in range(n_low):
                members.append(i)
                i = nxt[i]
        else:
            i = lists.tail[j]
            for _ in range(n_high):
                members.append(i)
                i = prv[i]
            members.reverse()
        self._unlink(lists, members)
        return (1 if small_is_low else 0), members

    def _unlink(self, lists: _PointLists, members: list[int]) -> None:
        """Remove points from every list of ``lists``; their own links go stale until relinked."""
        for i in range(self.d):
            nxt, prv = self.nxt[i], self.prv[i]
            for m in members:
                p, q = prv[m], nxt[m]
                if p != -1:
                    nxt[p] = q
                else:
                    lists.head[i] = q
                if q != -1:
                    prv[q] = p
                else:
                    lists.tail[i] = p
        lists.count -= len(members)

    def _relink(self, orders: list[list[int]], groups: list[list[int]]) -> list[_PointLists]:
        """Sorted lists for each group by one pass over the orders captured at phase start."""
        owner = {m: g for g, members in enumerate(groups) for m in members}
        out = [_PointLists([-1] * self.d, [-1] * self.d, len(members)) for members in groups]
        for j, order in enumerate(orders):
            buckets: list[list[int]] = [[] for _ in groups]
            for i in order:
                g = owner.get(i)
                if g is not None:
                    buckets[g].append(i)
            for g, seq in enumerate(buckets):
                self._link(j, seq)
                out[g].head[j], out[g].tail[j] = seq[0], seq[-1]
        return out

    # ------------------- records -------------------

    def _new_subtree(
        self, members: list[int], lo: np.ndarray, hi: np.ndarray, extent: float, parent: int
    ) -> SimpleSubquadtree:
        if parent < 0:
            path: tuple[int, ...] = ()
        else:
            ordinal = self._spawned.get(parent, 0)
            self._spawned[parent] = ordinal + 1
            path = self.subtrees[parent].seed_path + (ordinal,)
        if self.params.random_shift:
            rng = np.random.default_rng(np.random.SeedSequence(self.params.seed, spawn_key=path))
            shift = rng.uniform(0.0, extent, size=self.d)
        else:
            shift = np.zeros(self.d)
        center = (lo + hi) / 2.0
        # no point may sit below the corner after rounding
        corner = np.minimum(center - 1.5 * extent + shift, lo)
        side = 3.0 * extent
        frame = SimpleSubquadtree(
            id=len(self.subtrees),
            root_cell=len(self.cells),
            parent=parent,
            depth=0 if parent < 0 else self.subtrees[parent].depth + 1,
            corner=corner,
            side=side,
            shift=shift,
            seed_path=path,
        )
        origin = [Fraction(c) for c in corner.tolist()]
        scale = Fraction(side)
        for i in members:
            z = tuple((Fraction(x) - o) / scale for x, o in zip(self.pts[i], origin))
            if any(v < 0 or v >= 1 for v in z):
                raise ConstructionError(f"Point {i} falls outside the shifted root square of part {frame.id}")
            frame.exact[i] = z
        self.subtrees.append(frame)
        return frame

    def _new_cell(self, parent: int, sid: int, level: int, coords: tuple[int, ...], rule: str) -> Cell:
        frame = self.subtrees[sid]
        side = math.ldexp(frame.side, -level)
        corner = frame.corner + np.array(coords, dtype=np.float64) * side
        cell = Cell(
            id=len(self.cells),
            parent=parent,
            subtree=sid,
            level=level,
            coords=coords,
            corner=corner,
            side=side,
            rule=rule,
            point_start=len(self.perm),
        )
        self.cells.append(cell)
        frame.cells.append(cell.id)
        if parent >= 0:
            self.cells[parent].children.append(cell.id)
        return cell

    def _children(self, lists: _PointLists, sid: int, level: int, coords: tuple[int, ...]):
        """Split a cell's points into its child cells.

        One child keeps ``lists``; every other child comes back as a bare member list whose
        sorted lists are rebuilt later by ``_relink``.
        """
        exact = self.subtrees[sid].exact
        bits = level + 1
        tests = []
        for j in range(self.d):
            boundary = 2 * coords[j] + 1

            def is_high(i: int, j: int = j, boundary: int = boundary) -> bool:
                z = exact[i][j]
                return (z.numerator << bits) >= boundary * z.denominator

            tests.append(is_high)

        kept: tuple[int, ...] = ()
        loose: list[tuple[tuple[int, ...], list[int]]] = []
        for j in range(self.d):
            side, members = self._split(lists, j, tests[j])
            if members:
                loose.append((kept + (1 - side,), members))
            kept += (side,)

        groups: dict[tuple[int, ...], list[int]] = {}
        for prefix, members in loose:
            for m in members:
                key = prefix + tuple(int(tests[j](m)) for j in range(len(prefix), self.d))
                groups.setdefault(key, []).append(m)
        return kept, list(groups.items())

    # ------------------- main loop -------------------

    def _phase(self, task: tuple, stack: list) -> None:
        """Follow the largest child down from ``task`` until it holds at most half the points.

        Siblings split off on the way keep only their member lists; one pass over the orders
        captured at the start gives them sorted lists again. Every phase is linear and halves
        the largest part, which keeps construction at O(n log n) for fixed d.
        """
        lists, parent, sid, level, coords, rule = task
        limit = lists.count // 2
        orders = [self._walk(lists, j) for j in range(self.d)] if lists.count > 1 else []
        eps0 = self.params.eps0
        pending: list[tuple[list[int], tuple]] = []
        final = None
        while True:
            cell = self._new_cell(parent, sid, level, coords, rule)
            if lists.count == 1:
                self.perm.append(lists.head[0])
                break
            lo, hi = self._bbox(lists)
            extent = float(np.max(hi - lo))
            if extent < eps0 * cell.side / self._threshold:
                frame = self._new_subtree(self._members(lists), lo, hi, extent, parent=sid)
                final = (lists, cell.id, frame.id, 0, (0,) * self.d, RULE_COMPRESS)
                break
            kept, loose = self._children(lists, sid, level, coords)
            for bits, members in loose:
                child = tuple(2 * c + b for c, b in zip(coords, bits))
                pending.append((members, (cell.id, sid, level + 1, child, RULE_SPLIT)))
            parent, level, rule = cell.id, level + 1, RULE_SPLIT
            coords = tuple(2 * c + b for c, b in zip(coords, kept))
            if lists.count <= limit:
                final = (lists, parent, sid, level, coords, rule)
                break

        # deeper siblings go on top so every path cell's subtree stays contiguous in perm
        if pending:
            rebuilt = self._relink(orders, [members for members, _ in pending])
            for part, (_, context) in zip(rebuilt, pending):
                stack.append((part, *context))
        if final is not None:
            stack.append(final)

    def run(self) -> None:
        lists = self._initial_lists()
        lo, hi = self._bbox(lists)
        extent = float(np.max(hi - lo))
        if extent == 0.0:
            extent = 1.0 / 3.0  # unit root square
        root = self._new_subtree(list(range(self.n)), lo, hi, extent, parent=-1)
        stack = [(lists, -1, root.id, 0, (0,) * self.d, RULE_ROOT)]
        while stack:
            self._phase(stack.pop(), stack)

        for cell in reversed(self.cells):
            if cell.is_leaf:
                cell.point_end = cell.point_start + 1
            else:
                cell.point_end = max(self.cells[c].point_end for c in cell.children)


def build_quadtree(
    instance: TransportInstance,
    params: QuadtreeParams,
    rng: np.random.SeedSequence | int | None = None,
) -> Quadtree:
    """Build the conditionally-compressed quadtree over the distinct points of ``instance``.

    ``rng`` overrides ``params.seed`` when given.
    """
    if rng is not None:
        seed = int(rng.generate_state(1)[0]) if isinstance(rng, np.random.SeedSequence) else int(rng)
        params = replace(params, seed=seed)
    if instance.n < 1:
        raise ConstructionError("Cannot build a quadtree over an empty instance")
    start = time.perf_counter()
    collapsed, coincidence = collapse_coincident(instance)
    builder = _TreeBuilder(collapsed, params)
    builder.run()
    tree = Quadtree(
        instance=collapsed,
        source_instance=instance,
        coincidence=coincidence,
        params=params,
        cells=builder.cells,
        subtrees=builder.subtrees,
        perm=np.array(builder.perm, dtype=np.int64),
    )
    elapsed = time.perf_counter() - start
    logger.info(
        "Quadtree built in: %.3f seconds (%d cells, %d simple sub-quadtrees)",
        elapsed, len(tree.cells), len(tree.subtrees),
    )
    return tree


def subdivide_and_net(tree: Quadtree) -> Quadtree:
    """Materialize every cell's nonempty subcells with a net point at each center."""
    if tree.subdivided:
        return tree
    k, kbits, d, n = tree.params.grid, tree.params.grid_bits, tree.d, tree.n
    lookups: list[dict[tuple[int, ...], int]] = []
    netpoints: list[NetPoint] = []
    assignment: list[np.ndarray] = []
    point_netpoint = np.full(n, -1, dtype=np.int64)

    for cell in tree.cells:
        frame = tree.subtrees[cell.subtree]
        bits = cell.level + kbits
        base = [c * k for c in cell.coords]
        buckets: dict[tuple[int, ...], list[int]] = {}
        members = tree.points_of(cell).tolist()
        for p in members:
            z = frame.exact[p]
            key = tuple(_floor_scaled(z[j], bits) - base[j] for j in range(d))
            buckets.setdefault(key, []).append(p)

        sub_side = cell.side * tree.eps0
        lookup: dict[tuple[int, ...], int] = {}
        for key in sorted(buckets):
            if any(t < 0 or t >= k for t in key):
                raise ConstructionError(f"Point {buckets[key][0]} lies outside cell {cell.id}")
            np_id = len(netpoints)
            net = NetPoint(
                id=np_id,
                cell=cell.id,
                index=key,
                center=cell.corner + (np.array(key, dtype=np.float64) + 0.5) * sub_side,
                side=sub_side,
                vertex=n + np_id,
                first_point=buckets[key][0],
                npoints=len(buckets[key]),
            )
            net.parent = _parent_netpoint(tree, cell, net, lookups)
            if net.parent >= 0:
                netpoints[net.parent].children.append(np_id)
            lookup[key] = np_id
            netpoints.append(net)
            cell.netpoints.append(np_id)
        lookups.append(lookup)

        where = {p: lookup[key] for key, pts in buckets.items() for p in pts}
        assignment.append(np.array([where[p] for p in members], dtype=np.int64))
        if cell.is_leaf:
            point_netpoint[members[0]] = cell.netpoints[0]

    tree.netpoints = netpoints
    tree.cell_assignment = assignment
    tree.point_netpoint = point_netpoint
    logger.debug("Subdivided %d cells into %d net points", len(tree.cells), len(netpoints))
    return tree


def _parent_netpoint(
    tree: Quadtree, cell: Cell, net: NetPoint, lookups: list[dict[tuple[int, ...], int]]
) -> int:
    if cell.parent < 0:
        return -1
    pcell = tree.cells[cell.parent]
    k = tree.params.grid
    if cell.rule == RULE_SPLIT:
        offsets = [c - 2 * pc for c, pc in zip(cell.coords, pcell.coords)]
        key = tuple((o * k + t) // 2 for o, t in zip(offsets, net.index))
        found = lookups[pcell.id].get(key)
        if found is None:
            raise ConstructionError(f"Subcell {net.index} of cell {cell.id} is not nested in cell {pcell.id}")
        return found

    pframe = tree.subtrees[pcell.subtree]
    bits = pcell.level + tree.params.grid_bits
    base = [c * k for c in pcell.coords]
    origin = [Fraction(c) for c in pframe.corner.tolist()]
    scale = Fraction(pframe.side)
    z = [(Fraction(x) - o) / scale for x, o in zip(net.center.tolist(), origin)]
    key = tuple(_floor_scaled(v, bits) - b for v, b in zip(z, base))
    found = lookups[pcell.id].get(key)
    if found is not None:
        return found
    # the compressed child straddles an empty parent subcell; use the one holding its points
    zp = pframe.exact[net.first_point]
    key = tuple(_floor_scaled(v, bits) - b for v, b in zip(zp, base))
    logger.debug("Rule-2 cell %d: center outside nonempty parent subcells, using point %d", cell.id, net.first_point)
    return lookups[pcell.id][key]


# ---------- Property checks ----------

@dataclass
class PropertyReport:
    cell_count: int
    cell_bound: float
    cells_ok: bool = True
    moats_ok: bool = True
    rule2_ok: bool = True
    moat_violations: int = 0
    witness: str | None = None

    @property
    def passed(self) -> bool:
        return self.cells_ok and self.moats_ok and self.rule2_ok

    def _fail(self, message: str) -> None:
        if self.witness is None:
            self.witness = message


def check_properties(tree: Quadtree, *, cell_constant: float | None = None) -> PropertyReport:
    """Cell count bound, point moats and containment of compressed children in a parent subcell."""
    subdivide_and_net(tree)
    n, eps0 = tree.n, tree.eps0
    c1 = settings.CELL_COUNT_CONSTANT if cell_constant is None else cell_constant
    bound = c1 * n * max(1.0, math.log2(n / eps0))
    report = PropertyReport(cell_count=len(tree.cells), cell_bound=bound)
    if len(tree.cells) > bound:
        report.cells_ok = False
        report._fail(f"{len(tree.cells)} cells exceed the bound {bound:.1f}")
    if n < 2:
        return report

    points = tree.instance.points
    factor = float(n) ** tree.params.moat_exponent
    for cell, assigned in zip(tree.cells, tree.cell_assignment):
        idx = tree.points_of(cell)
        P = points[idx]
        gap = np.minimum(P - cell.corner, cell.corner + cell.side - P).min(axis=1)
        centers = np.array([tree.netpoints[a].center for a in assigned.tolist()])
        half = cell.side * eps0 / 2.0
        sub_gap = np.minimum(P - (centers - half), (centers + half) - P).min(axis=1)
        bad = np.flatnonzero((gap < cell.side / factor) | (sub_gap < eps0 * cell.side / factor))
        if bad.size:
            report.moats_ok = False
            report.moat_violations += int(bad.size)
            p = int(idx[bad[0]])
            report._fail(
                f"point {p} within moat of cell {cell.id} (cell gap {gap[bad[0]]:.3e}, subcell gap {sub_gap[bad[0]]:.3e})"
            )

    for frame in tree.subtrees[1:]:
        root = tree.cells[frame.root_cell]
        pnet = tree.netpoints[tree.netpoints[root.netpoints[0]].parent]
        lo = pnet.center - pnet.side / 2.0
        hi = pnet.center + pnet.side / 2.0
        if np.any(root.corner < lo) or np.any(root.corner + root.side > hi):
            report.rule2_ok = False
            report._fail(f"compressed cell {root.id} is not inside subcell {pnet.id} of cell {pnet.cell}")
    return report


def simple_subquadtrees(tree: Quadtree) -> list[SimpleSubquadtree]:
    """All simple sub-quadtrees, every part listed before the parts that contain it."""
    return list(reversed(tree.subtrees))


def resample(tree: Quadtree, seed: int) -> Quadtree:
    """Rebuild the same instance under fresh shifts."""
    fresh = build_quadtree(tree.source_instance, replace(tree.params, seed=seed))
    if tree.subdivided:
        subdivide_and_net(fresh)
    return fresh


def dump_quadtree(tree: Quadtree) -> str:
    """One line per cell, then one line per subcell (net vertex ids)."""
    lines = []
    for c in tree.cells:
        corner = " ".join(f"{x:.17g}" for x in c.corner.tolist())
        flags = "S" if c.is_subtree_root else "-"
        lines.append(f"cell {c.id} {c.parent} {c.side:.17g} {corner} {c.npoints} {c.rule} {flags}")
    for net in tree.netpoints:
        center = " ".join(f"{x:.17g}" for x in net.center.tolist())
        parent = tree.netpoints[net.parent].vertex if net.parent >= 0 else -1
        lines.append(f"subcell {net.cell} {center} {net.vertex} {parent}")
    return "\n".join(lines) + "\n"
