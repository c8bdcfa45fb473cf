"""Background storage management: block pools, round-robin reclaim, journaling, bad-block retirement."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .flashvisor import PageGroupTable

FREE, ACTIVE, USED, RECLAIMING, RETIRED = "free", "active", "used", "reclaiming", "retired"
META_PAGES_PER_BLOCK = 2


class NothingToReclaim(LookupError):
    """The used pool is empty."""


class GCDeadlock(RuntimeError):
    """No destination space for a migration; over-provisioning is too small."""


class RetirementError(RuntimeError):
    pass


@dataclass
class BlockPool:
    """Free and used physical blocks plus per-block counters."""

    blocks: int
    groups_per_block: int
    free: deque = field(default_factory=deque)
    state: list[str] = field(default_factory=list)
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]
    erase_count: np.ndarray = field(default=None)  # type: ignore[assignment]
    cursor: int = 0

    def __post_init__(self) -> None:
        if not self.state:
            self.state = [FREE] * self.blocks
            self.free = deque(range(self.blocks))
        if self.valid is None:
            self.valid = np.zeros(self.blocks, dtype=np.int64)
        if self.erase_count is None:
            self.erase_count = np.zeros(self.blocks, dtype=np.int64)

    @property
    def used(self) -> list[int]:
        return [b for b, s in enumerate(self.state) if s == USED]

    def select_victim(self) -> int:
        """Round robin over used blocks: first used id at or after the cursor, wrapping."""
        n = self.blocks
        for step in range(n):
            b = (self.cursor + step) % n
            if self.state[b] == USED:
                self.cursor = (b + 1) % n
                return b
        raise NothingToReclaim("used pool is empty")

    def check(self) -> None:
        counts = {s: 0 for s in (FREE, ACTIVE, USED, RECLAIMING, RETIRED)}
        for s in self.state:
            counts[s] += 1
        assert counts[FREE] == len(self.free), "free list out of sync"
        assert all(self.state[b] == FREE for b in self.free)
        assert counts[ACTIVE] <= 1
        assert (self.valid >= 0).all() and (self.valid <= self.groups_per_block).all()


@dataclass
class Migration:
    logical: int
    source: int
    dest: int
    moved: bool = False
    skipped: bool = False


@dataclass
class ReclaimJob:
    victim: int
    migrations: list[Migration]
    retire: bool = False

    @property
    def pending(self) -> list[Migration]:
        return [m for m in self.migrations if not (m.moved or m.skipped)]

    @property
    def moved(self) -> int:
        return sum(m.moved for m in self.migrations)


@dataclass
class GCRecord:
    time: float
    victim: int
    migrated: int
    erase_count: int


@dataclass(frozen=True)
class JournalWrite:
    chunk: int
    first_logical: int
    last_logical: int


@dataclass
class JournalPolicy:
    period: float
    meta_pages_per_block: int = META_PAGES_PER_BLOCK

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise ValueError("journal period must be > 0")


class Storengine:
    """Reclaim, journaling, and retirement over a ``PageGroupTable``."""

    def __init__(self, table: "PageGroupTable", period: float = math.inf) -> None:
        self.table = table
        self.policy = JournalPolicy(period)
        self.last_dump = 0.0
        self.gc_trace: list[GCRecord] = []
        self.journal_dumps = 0

    @property
    def pool(self) -> BlockPool:
        return self.table.pool

    # ------------------------------------------------------------ reclaim
    def select_victim(self) -> int:
        return self.pool.select_victim()

    def begin_reclaim(self, victim: int | None = None, *, retire: bool = False) -> ReclaimJob:
        """Pull the victim out of the used pool and reserve destination groups for its valid data."""
        t = self.table
        if victim is None:
            victim = self.select_victim()
        state = self.pool.state[victim]
        if retire:
            if state in (RETIRED, RECLAIMING):
                raise RetirementError(f"block {victim} is already {state}")
        elif state != USED:
            raise ValueError(f"block {victim} is not in the used pool ({state})")
        if state == FREE:
            self.pool.free.remove(victim)
        if state == ACTIVE:
            t.close_active()
        self.pool.state[victim] = RECLAIMING
        sources = t.valid_groups_of(victim)
        try:
            dests = t.reserve_groups(len(sources))
        except GCDeadlock:
            self.pool.state[victim] = USED if state in (USED, ACTIVE) else state
            if state == FREE:
                self.pool.free.appendleft(victim)
            raise
        migrations = [Migration(int(t.p2l[s]), int(s), int(d)) for s, d in zip(sources, dests)]
        return ReclaimJob(victim, migrations, retire)

    def migrate(self, job: ReclaimJob, m: Migration) -> bool:
        """Copy one group if it is still live in the victim; returns whether it moved."""
        t = self.table
        if t.p2l[m.source] != m.logical:
            m.skipped = True
            return False
        t.remap(m.logical, m.dest)
        m.moved = True
        return True

    def complete_reclaim(self, job: ReclaimJob, now: float = 0.0) -> int:
        """Erase the victim and return it to the free pool (or retire it)."""
        if job.pending:
            raise RuntimeError(f"reclaim of block {job.victim} still has pending migrations")
        t = self.table
        b = job.victim
        if self.pool.valid[b] != 0:
            raise RuntimeError(f"block {b} still holds valid groups after migration")
        t.erase_block(b)
        if job.retire:
            self.pool.state[b] = RETIRED
        else:
            self.pool.state[b] = FREE
            self.pool.free.append(b)
        self.gc_trace.append(GCRecord(now, b, job.moved, int(self.pool.erase_count[b])))
        return b

    def reclaim(self, victim: int | None = None, now: float = 0.0) -> ReclaimJob:
        job = self.begin_reclaim(victim)
        for m in job.migrations:
            self.migrate(job, m)
        self.complete_reclaim(job, now)
        return job

    # ------------------------------------------------------------ journaling
    def journal_chunks(self) -> list[JournalWrite]:
        geo = self.table.geometry
        per_chunk = geo.page_group_size // geo.table_entry_size
        n = math.ceil(geo.table_bytes / geo.page_group_size)
        return [JournalWrite(i, i * per_chunk, min(geo.logical_groups, (i + 1) * per_chunk) - 1)
                for i in range(n)]

    def journal_tick(self, now: float) -> list[JournalWrite]:
        """One group write per table chunk, at most once per period."""
        if not now >= self.last_dump + self.policy.period:
            return []
        self.last_dump = now
        self.journal_dumps += 1
        return self.journal_chunks()

    # ------------------------------------------------------------ bad blocks
    def retire_bad_block(self, block: int, now: float = 0.0) -> ReclaimJob:
        """Migrate a block's valid groups elsewhere and exclude it permanently."""
        if not self.pool.free:
            raise RetirementError("free list is empty; cannot retire")
        try:
            job = self.begin_reclaim(block, retire=True)
        except GCDeadlock as exc:
            raise RetirementError(str(exc)) from None
        for m in job.migrations:
            self.migrate(job, m)
        self.complete_reclaim(job, now)
        return job
