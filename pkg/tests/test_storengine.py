import math

import pytest

from abacus_sim.flashvisor import PageGroupTable
from abacus_sim.hardware import KB, BackboneGeometry
from abacus_sim.storengine import (
    FREE, RETIRED, USED, BlockPool, JournalPolicy, NothingToReclaim, RetirementError, Storengine,
)

from oracles import FlashMedium

GROUP = 64 * KB


def _pool_with_used(n, used):
    pool = BlockPool(n, 4)
    for b in used:
        pool.free.remove(b)
        pool.state[b] = USED
    return pool


def test_victim_cursor_semantics():
    pool = _pool_with_used(3, [0, 1, 2])
    pool.cursor = 1
    assert pool.select_victim() == 1 and pool.cursor == 2
    assert [pool.select_victim() for _ in range(4)] == [2, 0, 1, 2]


def test_round_robin_fairness():
    pool = _pool_with_used(7, [1, 3, 4, 6])
    picks = [pool.select_victim() for _ in range(4 * 5)]
    assert all(picks.count(b) == 5 for b in (1, 3, 4, 6))


def test_empty_used_pool():
    with pytest.raises(NothingToReclaim):
        BlockPool(4, 4).select_victim()


def _setup(capacity_groups=32, gpb=4):
    geo = BackboneGeometry(capacity=capacity_groups * GROUP, groups_per_block=gpb)
    t = PageGroupTable(geo)
    return geo, t, Storengine(t), FlashMedium(geo.physical_groups, geo.logical_groups, gpb)


def _write(t, medium, lg):
    phys = t.translate_write(lg)
    medium.write(lg, phys)
    return phys


def test_reclaim_of_fully_invalid_block_only_erases():
    _, t, se, medium = _setup()
    for lg in range(4):
        _write(t, medium, lg)
    for lg in range(4):
        _write(t, medium, lg)
    job = se.reclaim(0)
    assert job.migrations == []
    assert t.pool.state[0] == FREE and t.pool.erase_count[0] == 1
    assert se.gc_trace[-1].migrated == 0


def test_reclaim_with_three_valid_groups():
    _, t, se, medium = _setup()
    for lg in range(4):
        _write(t, medium, lg)
    _write(t, medium, 2)  # block 0 keeps 0, 1, 3
    job = se.begin_reclaim(0)
    assert len(job.migrations) == 3
    for m in job.migrations:
        assert se.migrate(job, m)
        medium.copy(m.source, m.dest)
    medium.erase(se.complete_reclaim(job))
    assert job.moved == 3
    assert medium.mismatches(t.l2p).size == 0
    t.check()


def test_migration_skips_groups_overwritten_mid_reclaim():
    _, t, se, medium = _setup()
    for lg in range(4):
        _write(t, medium, lg)
    job = se.begin_reclaim(0)
    _write(t, medium, 1)  # foreground overwrite before the copy
    for m in job.migrations:
        if se.migrate(job, m):
            medium.copy(m.source, m.dest)
    medium.erase(se.complete_reclaim(job))
    assert job.moved == 3
    assert [m.logical for m in job.migrations if m.skipped] == [1]
    assert medium.mismatches(t.l2p).size == 0


def test_complete_refuses_pending_work():
    _, t, se, medium = _setup()
    for lg in range(4):
        _write(t, medium, lg)
    job = se.begin_reclaim(0)
    with pytest.raises(RuntimeError):
        se.complete_reclaim(job)


def test_reclaim_of_non_used_block_is_rejected():
    _, t, se, _ = _setup()
    with pytest.raises(ValueError):
        se.begin_reclaim(3)


def test_journal_size_at_default_geometry():
    se = Storengine(PageGroupTable(), period=100e6)
    chunks = se.journal_tick(100e6)
    assert len(chunks) == 32
    assert chunks[0].first_logical == 0 and chunks[-1].last_logical == 524_287
    assert all(c.last_logical - c.first_logical + 1 == 16_384 for c in chunks)


def test_journal_period_rules():
    assert Storengine(PageGroupTable(), period=math.inf).journal_tick(1e12) == []
    se = Storengine(PageGroupTable(), period=100.0)
    assert se.journal_tick(100.0)
    assert se.journal_tick(150.0) == []
    assert se.journal_tick(200.0)
    assert se.journal_dumps == 2
    with pytest.raises(ValueError):
        JournalPolicy(0)


def test_retire_empty_block():
    _, t, se, _ = _setup()
    usable = sum(s != RETIRED for s in t.pool.state)
    job = se.retire_bad_block(5)
    assert job.migrations == []
    assert t.pool.state[5] == RETIRED and 5 not in t.pool.free
    assert sum(s != RETIRED for s in t.pool.state) == usable - 1
    with pytest.raises(RetirementError):
        se.retire_bad_block(5)


def test_retire_block_with_two_valid_groups():
    _, t, se, medium = _setup()
    for lg in range(4):
        _write(t, medium, lg)
    _write(t, medium, 0)
    _write(t, medium, 1)
    job = se.begin_reclaim(0, retire=True)
    assert len(job.migrations) == 2
    for m in job.migrations:
        se.migrate(job, m)
        medium.copy(m.source, m.dest)
    medium.erase(se.complete_reclaim(job))
    assert t.pool.state[0] == RETIRED
    assert medium.mismatches(t.l2p).size == 0
    # retired blocks are never picked as victims again
    assert 0 not in {t.pool.select_victim() for _ in range(2 * t.pool.blocks)}


def test_retire_with_empty_free_list():
    _, t, se, _ = _setup()
    t.pool.free.clear()
    with pytest.raises(RetirementError):
        se.retire_bad_block(0)
