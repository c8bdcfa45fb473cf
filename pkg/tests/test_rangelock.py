import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abacus_sim.rangelock import READ_MAP, WRITE_MAP, IntervalTree, LockError, LockNode, RangeLockTree, conflicts


def test_conflict_matrix():
    assert not conflicts(READ_MAP, "a", READ_MAP, "b")
    assert conflicts(WRITE_MAP, "a", WRITE_MAP, "a")
    assert conflicts(WRITE_MAP, "a", READ_MAP, "b")
    assert conflicts(READ_MAP, "a", WRITE_MAP, "b")
    assert not conflicts(READ_MAP, "a", WRITE_MAP, "a")


def test_write_blocks_other_readers_until_release():
    locks = RangeLockTree()
    w, ok = locks.request(0, 1, WRITE_MAP, "k0")
    assert ok
    r, ok = locks.request(1, 2, READ_MAP, "k1")
    assert not ok and locks.is_waiting(r)
    granted = locks.release(w)
    assert [n.lock_id for n in granted] == [r]
    assert r in locks.held


def test_shared_readers_and_disjoint_writers():
    locks = RangeLockTree()
    assert locks.request(0, 9, READ_MAP, "a")[1]
    assert locks.request(0, 9, READ_MAP, "b")[1]
    assert locks.request(10, 19, WRITE_MAP, "c")[1]
    assert not locks.request(9, 10, WRITE_MAP, "d")[1]


def test_waiter_cannot_overtake_earlier_conflicting_waiter():
    locks = RangeLockTree()
    r0, _ = locks.request(0, 0, READ_MAP, "reader")
    w, ok = locks.request(0, 0, WRITE_MAP, "writer")
    assert not ok
    # a second reader would fit beside r0 but must queue behind the writer
    r1, ok = locks.request(0, 0, READ_MAP, "late")
    assert not ok
    assert [n.lock_id for n in locks.release(r0)] == [w]
    assert [n.lock_id for n in locks.release(w)] == [r1]


def test_bad_requests():
    locks = RangeLockTree()
    with pytest.raises(LockError):
        locks.request(5, 4, READ_MAP, "x")
    with pytest.raises(LockError):
        locks.request(0, 4, "exclusive", "x")
    with pytest.raises(LockError):
        locks.release(99)


def test_storengine_copy_defers_to_kernel_read():
    locks = RangeLockTree()
    kernel, _ = locks.request(10, 20, READ_MAP, ("app", 0))
    gc, ok = locks.request(15, 15, WRITE_MAP, ("storengine",))
    assert not ok
    assert [n.lock_id for n in locks.release(kernel)] == [gc]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 200), st.integers(0, 30)), min_size=1, max_size=120), st.randoms())
def test_interval_tree_matches_brute_force(spans, rnd):
    tree = IntervalTree()
    nodes = []
    for i, (s, n) in enumerate(spans):
        node = LockNode(s, s + n, READ_MAP, i, i)
        tree.insert(node)
        nodes.append(node)
    rnd.shuffle(nodes)
    for node in nodes[: len(nodes) // 2]:
        tree.remove(node)
    live = nodes[len(nodes) // 2:]
    tree.check()
    assert len(tree) == len(live)
    for q0 in range(0, 240, 17):
        q1 = q0 + 9
        expect = sorted((n.start, n.lock_id) for n in live if n.start <= q1 and q0 <= n.last)
        got = [(n.start, n.lock_id) for n in tree.overlapping(q0, q1)]
        assert got == expect


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_lock_traffic_stays_sound_and_live(seed):
    rng = random.Random(seed)
    locks = RangeLockTree()
    for _ in range(300):
        if locks.held and rng.random() < 0.45:
            locks.release(rng.choice(sorted(locks.held)))
        else:
            s = rng.randrange(64)
            locks.request(s, s + rng.randrange(6), rng.choice((READ_MAP, WRITE_MAP)), rng.randrange(4))
        locks.check_sound()
        # every waiter is held back by an in-force lock or an earlier conflicting waiter
        earlier = []
        for w in locks.waiting:
            blocked = any(conflicts(w.kind, w.owner, n.kind, n.owner) for n in locks.tree.overlapping(w.start, w.last))
            blocked = blocked or any(e.overlaps(w.start, w.last) and conflicts(w.kind, w.owner, e.kind, e.owner)
                                     for e in earlier)
            assert blocked, f"lock {w.lock_id} waits for nothing"
            earlier.append(w)
    while locks.held:
        locks.release(min(locks.held))
    assert not locks.waiting and len(locks) == 0
