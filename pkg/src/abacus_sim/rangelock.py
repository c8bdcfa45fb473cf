"""Range lock over flash-mapped data sections.

Locked ranges live in a balanced interval tree keyed by start page, each node augmented with
the largest last page in its subtree so overlap queries prune whole subtrees. Requests that
conflict with an in-force node (or with an earlier waiter) queue FIFO.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterator

READ_MAP = "read-map"
WRITE_MAP = "write-map"
KINDS = (READ_MAP, WRITE_MAP)


def conflicts(kind_a: str, owner_a: Hashable, kind_b: str, owner_b: Hashable) -> bool:
    """Conflict matrix for two overlapping ranges.

    read/read never conflicts, write/write always does, and a read/write pair conflicts
    only between different owners (a kernel may read back what it is writing).
    """
    if kind_a == READ_MAP and kind_b == READ_MAP:
        return False
    if kind_a == WRITE_MAP and kind_b == WRITE_MAP:
        return True
    return owner_a != owner_b


@dataclass
class LockNode:
    start: int
    last: int
    kind: str
    owner: Hashable
    lock_id: int
    token: Any = None
    # tree links
    left: "LockNode | None" = field(default=None, repr=False)
    right: "LockNode | None" = field(default=None, repr=False)
    height: int = field(default=1, repr=False)
    max_last: int = field(default=0, repr=False)

    @property
    def key(self) -> tuple[int, int]:
        return self.start, self.lock_id

    def overlaps(self, start: int, last: int) -> bool:
        return self.start <= last and start <= self.last


def _h(n: LockNode | None) -> int:
    return n.height if n else 0


def _update(n: LockNode) -> None:
    l, r = n.left, n.right
    hl = l.height if l else 0
    hr = r.height if r else 0
    n.height = 1 + (hl if hl > hr else hr)
    m = n.last
    if l and l.max_last > m:
        m = l.max_last
    if r and r.max_last > m:
        m = r.max_last
    n.max_last = m


def _rot_right(n: LockNode) -> LockNode:
    l = n.left
    n.left, l.right = l.right, n
    _update(n)
    _update(l)
    return l


def _rot_left(n: LockNode) -> LockNode:
    r = n.right
    n.right, r.left = r.left, n
    _update(n)
    _update(r)
    return r


def _balance(n: LockNode) -> LockNode:
    _update(n)
    l, r = n.left, n.right
    bf = (l.height if l else 0) - (r.height if r else 0)
    if bf > 1:
        if _h(l.left) < _h(l.right):
            n.left = _rot_left(l)
        return _rot_right(n)
    if bf < -1:
        if _h(r.right) < _h(r.left):
            n.right = _rot_right(r)
        return _rot_left(n)
    return n


class IntervalTree:
    """AVL tree of ``LockNode`` keyed by (start, lock_id)."""

    def __init__(self) -> None:
        self.root: LockNode | None = None
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def insert(self, node: LockNode) -> None:
        node.left = node.right = None
        node.height = 1
        node.max_last = node.last
        self.root = self._insert(self.root, node)
        self.size += 1

    def _insert(self, cur: LockNode | None, node: LockNode) -> LockNode:
        if cur is None:
            return node
        if node.key < cur.key:
            cur.left = self._insert(cur.left, node)
        else:
            cur.right = self._insert(cur.right, node)
        return _balance(cur)

    def remove(self, node: LockNode) -> None:
        self.root, found = self._remove(self.root, node.key)
        if not found:
            raise KeyError(f"lock {node.lock_id} is not in the tree")
        self.size -= 1

    def _remove(self, cur: LockNode | None, key: tuple[int, int]) -> tuple[LockNode | None, bool]:
        if cur is None:
            return None, False
        if key < cur.key:
            cur.left, found = self._remove(cur.left, key)
        elif key > cur.key:
            cur.right, found = self._remove(cur.right, key)
        else:
            found = True
            if cur.left is None:
                return cur.right, True
            if cur.right is None:
                return cur.left, True
            succ = cur.right
            while succ.left:
                succ = succ.left
            cur.right, _ = self._remove(cur.right, succ.key)
            succ.left, succ.right = cur.left, cur.right
            cur = succ
        return _balance(cur), found

    def overlapping(self, start: int, last: int) -> Iterator[LockNode]:
        """Yield in-force nodes overlapping [start, last], in key order."""
        stack: list[tuple[LockNode, bool]] = []
        if self.root:
            stack.append((self.root, False))
        while stack:
            n, expanded = stack.pop()
            if n.max_last < start:
                continue
            if expanded:
                if n.overlaps(start, last):
                    yield n
                continue
            # in-order: right subtree, self, left subtree pushed in reverse
            if n.right and n.start <= last:
                stack.append((n.right, False))
            stack.append((n, True))
            if n.left:
                stack.append((n.left, False))

    def __iter__(self) -> Iterator[LockNode]:
        return self.overlapping(-(1 << 62), 1 << 62)

    def check(self) -> None:
        """Verify AVL, BST, and augmentation invariants (for tests)."""
        def walk(n: LockNode | None) -> tuple[int, int]:
            if n is None:
                return 0, -(1 << 62)
            hl, ml = walk(n.left)
            hr, mr = walk(n.right)
            assert abs(hl - hr) <= 1, "unbalanced"
            assert n.height == 1 + max(hl, hr)
            assert n.max_last == max(n.last, ml, mr)
            if n.left:
                assert n.left.key < n.key
            if n.right:
                assert n.right.key > n.key
            return n.height, n.max_last
        walk(self.root)


class LockError(RuntimeError):
    pass


class RangeLockTree:
    """Typed range locks with FIFO admission for blocked requests."""

    def __init__(self) -> None:
        self.tree = IntervalTree()
        self.waiting: deque[LockNode] = deque()
        self.held: dict[int, LockNode] = {}
        self._ids = itertools.count()

    def __len__(self) -> int:
        return len(self.tree)

    def _blocked_by_active(self, req: LockNode) -> bool:
        return any(conflicts(req.kind, req.owner, n.kind, n.owner)
                   for n in self.tree.overlapping(req.start, req.last))

    def _blocked_by_waiters(self, req: LockNode, upto: int | None = None) -> bool:
        for i, w in enumerate(self.waiting):
            if upto is not None and i >= upto:
                break
            if w.overlaps(req.start, req.last) and conflicts(req.kind, req.owner, w.kind, w.owner):
                return True
        return False

    def request(self, start: int, last: int, kind: str, owner: Hashable, token: Any = None) -> tuple[int, bool]:
        """Ask for [start, last]; returns (lock id, granted now)."""
        if kind not in KINDS:
            raise LockError(f"unknown lock kind {kind!r}")
        if start < 0 or last < start:
            raise LockError(f"bad range [{start}, {last}]")
        node = LockNode(start, last, kind, owner, next(self._ids), token)
        if self._blocked_by_active(node) or self._blocked_by_waiters(node):
            self.waiting.append(node)
            return node.lock_id, False
        self.tree.insert(node)
        self.held[node.lock_id] = node
        return node.lock_id, True

    def release(self, lock_id: int) -> list[LockNode]:
        """Drop a held lock; returns waiters granted as a result, in FIFO order."""
        node = self.held.pop(lock_id, None)
        if node is None:
            raise LockError(f"lock {lock_id} is not held")
        self.tree.remove(node)
        granted = []
        remaining: deque[LockNode] = deque()
        for w in self.waiting:
            # a waiter may not overtake an earlier conflicting waiter
            clash = any(r.overlaps(w.start, w.last) and conflicts(w.kind, w.owner, r.kind, r.owner)
                        for r in remaining)
            if not clash and not self._blocked_by_active(w):
                self.tree.insert(w)
                self.held[w.lock_id] = w
                granted.append(w)
            else:
                remaining.append(w)
        self.waiting = remaining
        return granted

    def is_waiting(self, lock_id: int) -> bool:
        return any(w.lock_id == lock_id for w in self.waiting)

    def check_sound(self) -> None:
        """Assert no two in-force nodes violate the conflict matrix."""
        nodes = list(self.tree)
        for i, a in enumerate(nodes):
            for b in self.tree.overlapping(a.start, a.last):
                if b.lock_id != a.lock_id and conflicts(a.kind, a.owner, b.kind, b.owner):
                    raise LockError(f"locks {a.lock_id} and {b.lock_id} conflict")
        self.tree.check()
