"""Prefix split trees: ordered weighted splay trees with Merge and PrefixSplit.

Every node carries a weight ``w`` and the total weight ``W`` of its subtree. The in-order
sequence of nodes is the only order that matters; it is not sorted by anything.
"""
from __future__ import annotations

from typing import Any, Iterator

from geotransport.config import settings
from geotransport.errors import PrefixSplitError


class PSTNode:
    """One weighted entry of a prefix split tree. The handle stays valid across splays."""

    __slots__ = ("label", "w", "W", "size", "left", "right", "parent", "alive")

    def __init__(self, label: Any, weight: float) -> None:
        self.label = label
        self.w = weight
        self.W = weight
        self.size = 1
        self.left: PSTNode | None = None
        self.right: PSTNode | None = None
        self.parent: PSTNode | None = None
        self.alive = True

    def __repr__(self) -> str:
        return f"PSTNode(label={self.label!r}, w={self.w:.6g})"


def _update(x: PSTNode) -> None:
    W, size = x.w, 1
    if x.left is not None:
        W += x.left.W
        size += x.left.size
    if x.right is not None:
        W += x.right.W
        size += x.right.size
    x.W = W
    x.size = size


def _rotate(x: PSTNode) -> None:
    p = x.parent
    g = p.parent
    if p.left is x:
        b = x.right
        p.left = b
        x.right = p
    else:
        b = x.left
        p.right = b
        x.left = p
    if b is not None:
        b.parent = p
    p.parent = x
    x.parent = g
    if g is not None:
        if g.left is p:
            g.left = x
        else:
            g.right = x
    _update(p)
    _update(x)


def _splay(x: PSTNode) -> PSTNode:
    while x.parent is not None:
        p = x.parent
        g = p.parent
        if g is None:
            _rotate(x)
        elif (g.left is p) == (p.left is x):
            _rotate(p)
            _rotate(x)
        else:
            _rotate(x)
            _rotate(x)
    return x


def _rightmost(x: PSTNode) -> PSTNode:
    while x.right is not None:
        x = x.right
    return _splay(x)


def _leftmost(x: PSTNode) -> PSTNode:
    while x.left is not None:
        x = x.left
    return _splay(x)


def _join(left: PSTNode | None, right: PSTNode | None) -> PSTNode | None:
    if left is None:
        return right
    if right is None:
        return left
    top = _rightmost(left)
    top.right = right
    right.parent = top
    _update(top)
    return top


class PrefixSplitTree:
    """Ordered weighted binary tree with amortized O(log m) operations."""

    def __init__(self, *, tolerance: float | None = None, debug: bool = False) -> None:
        self._root: PSTNode | None = None
        self.tolerance = settings.PREFIX_SPLIT_TOLERANCE if tolerance is None else tolerance
        self.debug = debug

    # ------------------- queries -------------------

    def __len__(self) -> int:
        return 0 if self._root is None else self._root.size

    def __bool__(self) -> bool:
        return self._root is not None

    @property
    def total_weight(self) -> float:
        """w(S), read from the root in O(1)."""
        return 0.0 if self._root is None else self._root.W

    def first(self) -> PSTNode | None:
        """In-order first node (splayed to the root)."""
        if self._root is None:
            return None
        self._root = _leftmost(self._root)
        return self._root

    def nodes(self) -> Iterator[PSTNode]:
        """In-order traversal; does not restructure the tree."""
        stack: list[PSTNode] = []
        x = self._root
        while stack or x is not None:
            while x is not None:
                stack.append(x)
                x = x.left
            x = stack.pop()
            yield x
            x = x.right

    def items(self) -> list[tuple[Any, float]]:
        return [(x.label, x.w) for x in self.nodes()]

    def audit(self) -> bool:
        """Recompute W, sizes and parent links bottom-up; True when all are consistent."""
        if self._root is None:
            return True
        if self._root.parent is not None:
            return False
        ok = True
        order: list[PSTNode] = []
        stack = [self._root]
        while stack:
            x = stack.pop()
            order.append(x)
            for child in (x.left, x.right):
                if child is not None:
                    if child.parent is not x:
                        ok = False
                    stack.append(child)
        for x in reversed(order):
            W = x.w + (x.left.W if x.left else 0.0) + (x.right.W if x.right else 0.0)
            size = 1 + (x.left.size if x.left else 0) + (x.right.size if x.right else 0)
            if abs(W - x.W) > 1e-9 * max(1.0, abs(W)) or size != x.size or not x.alive:
                ok = False
        return ok

    # ------------------- updates -------------------

    def insert(self, label: Any, weight: float) -> PSTNode:
        """Append a node of the given weight at the end of the in-order sequence."""
        if not weight > 0.0:
            raise PrefixSplitError(f"Node weight must be positive, got {weight!r}")
        node = PSTNode(label, float(weight))
        self._root = _join(self._root, node)
        self._root = _splay(node)
        self._check()
        return node

    def delete(self, node: PSTNode) -> None:
        self._own(node)
        _splay(node)
        left, right = node.left, node.right
        if left is not None:
            left.parent = None
        if right is not None:
            right.parent = None
        node.left = node.right = None
        node.alive = False
        self._root = _join(left, right)
        self._check()

    def update_weight(self, node: PSTNode, weight: float) -> None:
        if not weight > 0.0:
            raise PrefixSplitError(f"Node weight must be positive, got {weight!r}")
        self._own(node)
        self._root = _splay(node)
        node.w = float(weight)
        _update(node)
        self._check()

    def merge(self, other: "PrefixSplitTree") -> "PrefixSplitTree":
        """Append every node of ``other`` after this tree's nodes; ``other`` is left empty."""
        if other is self:
            raise PrefixSplitError("Cannot merge a prefix split tree with itself")
        self._root = _join(self._root, other._root)
        other._root = None
        self._check()
        return self

    def prefix_split(self, t: float) -> "PrefixSplitTree":
        """Split off the in-order prefix of total weight exactly ``t`` and return it.

        The first node crossing ``t`` is replaced by two fresh nodes with the same label;
        the first completes the returned prefix and the second stays here.
        """
        total = self.total_weight
        tol = self.tolerance * total
        if not t > 0.0:
            raise PrefixSplitError(f"Split target must be positive, got {t!r}")
        if t > total + tol:
            raise PrefixSplitError(f"Split target {t!r} exceeds tree weight {total!r}")

        out = PrefixSplitTree(tolerance=self.tolerance, debug=self.debug)
        if t >= total - tol:
            out._root, self._root = self._root, None
            return out

        # first node whose inclusive prefix weight passes t
        x, acc = self._root, 0.0
        while True:
            lw = x.left.W if x.left is not None else 0.0
            if acc + lw > t and x.left is not None:
                x = x.left
            elif acc + lw + x.w > t or x.right is None:
                break
            else:
                acc += lw + x.w
                x = x.right
        y = _splay(x)
        left, right = y.left, y.right
        before = left.W if left is not None else 0.0
        need = t - before

        if need <= tol:
            y.left = None
            if left is not None:
                left.parent = None
            _update(y)
            out._root, self._root = left, y
        elif y.w - need <= tol:
            y.right = None
            if right is not None:
                right.parent = None
            _update(y)
            out._root, self._root = y, right
        else:
            head = PSTNode(y.label, need)
            tail = PSTNode(y.label, y.w - need)
            y.left = y.right = None
            y.alive = False
            head.left = left
            if left is not None:
                left.parent = head
            tail.right = right
            if right is not None:
                right.parent = tail
            _update(head)
            _update(tail)
            out._root, self._root = head, tail
        self._check()
        out._check()
        return out

    # ------------------- internals -------------------

    def _own(self, node: PSTNode) -> None:
        if not node.alive:
            raise PrefixSplitError(f"Stale handle {node!r}")
        top = node
        while top.parent is not None:
            top = top.parent
        if top is not self._root:
            raise PrefixSplitError(f"Handle {node!r} does not belong to this tree")

    def _check(self) -> None:
        if self.debug and not self.audit():
            raise PrefixSplitError("Prefix split tree audit failed")
