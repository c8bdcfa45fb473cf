"""Flash virtualization: page-group mapping table, address translation, and range-locked section mapping."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .hardware import BackboneGeometry, HardwareParams
from .rangelock import READ_MAP, WRITE_MAP, RangeLockTree
from .storengine import ACTIVE, USED, BlockPool, GCDeadlock

SNAPSHOT_MAGIC = b"PGT1"
UNMAPPED = 0xFFFFFFFF


class NotFound(LookupError):
    """Read of a logical group that was never written."""


class MappingError(ValueError):
    """Misaligned or out-of-capacity flash request; ``code`` is alignment or capacity."""

    def __init__(self, code: str, message: str) -> None:
        self.code = code
        super().__init__(message)


@dataclass(frozen=True)
class PhysicalLocation:
    group: int
    package: int
    page: int
    channels: tuple[int, ...]


@dataclass(frozen=True)
class QueueMessage:
    kind: str  # "read" | "write"
    section: Hashable
    word_address: int
    length: int


@dataclass(frozen=True)
class LockGrant:
    lock_id: int
    granted: bool
    first_group: int
    last_group: int


class PageGroupTable:
    """Logical to physical page-group map with a single log-structured write stream."""

    def __init__(self, geometry: BackboneGeometry | None = None) -> None:
        self.geometry = geometry or BackboneGeometry()
        g = self.geometry
        self.gpb = g.groups_per_block
        self.l2p = np.full(g.logical_groups, -1, dtype=np.int64)
        self.p2l = np.full(g.physical_groups, -1, dtype=np.int64)
        self.pool = BlockPool(g.physical_blocks, self.gpb)
        self.active: int | None = None
        self.next_offset = 0
        self.cursor = -1
        self.writes = 0

    # ------------------------------------------------------------ capacity
    @property
    def free_groups(self) -> int:
        return self.active_space + len(self.pool.free) * self.gpb

    @property
    def active_space(self) -> int:
        return 0 if self.active is None else self.gpb - self.next_offset

    def _open_block(self, gc: bool) -> bool:
        # foreground writes never take the last free block; it is the reclaim reserve
        if len(self.pool.free) < (1 if gc else 2):
            return False
        b = self.pool.free.popleft()
        self.pool.state[b] = ACTIVE
        self.active = b
        self.next_offset = 0
        return True

    def close_active(self) -> None:
        if self.active is not None:
            self.pool.state[self.active] = USED
            self.active = None
            self.next_offset = 0

    def can_allocate(self, gc: bool = False) -> bool:
        return self.active_space > 0 or len(self.pool.free) >= (1 if gc else 2)

    def allocate(self, gc: bool = False) -> int | None:
        """Next physical group on the write stream, or None when a foreground write must stall."""
        if self.active_space == 0:
            self.close_active()
            if not self._open_block(gc):
                return None
        phys = self.active * self.gpb + self.next_offset
        self.next_offset += 1
        self.cursor = phys
        if self.next_offset == self.gpb:
            self.close_active()
        return phys

    def reserve_groups(self, n: int) -> list[int]:
        """Reclaim-side allocation of ``n`` groups; may use the reserve block."""
        if n > self.free_groups:
            raise GCDeadlock(f"need {n} destination groups, only {self.free_groups} free")
        return [self.allocate(gc=True) for _ in range(n)]

    # ------------------------------------------------------------ mapping
    def remap(self, logical: int, phys: int) -> None:
        old = self.l2p[logical]
        if old >= 0:
            self.p2l[old] = -1
            self.pool.valid[old // self.gpb] -= 1
        self.l2p[logical] = phys
        self.p2l[phys] = logical
        self.pool.valid[phys // self.gpb] += 1
        self.writes += 1

    def translate_write(self, logical: int, gc: bool = False) -> int | None:
        if not 0 <= logical < self.geometry.logical_groups:
            raise MappingError("capacity", f"logical group {logical} beyond capacity")
        phys = self.allocate(gc)
        if phys is None:
            return None
        self.remap(logical, phys)
        return phys

    def lookup(self, logical: int) -> int:
        if not 0 <= logical < self.geometry.logical_groups:
            raise MappingError("capacity", f"logical group {logical} beyond capacity")
        phys = int(self.l2p[logical])
        if phys < 0:
            raise NotFound(f"logical group {logical} was never written")
        return phys

    def lookup_many(self, logical: np.ndarray) -> np.ndarray:
        phys = self.l2p[logical]
        if (phys < 0).any():
            bad = int(np.asarray(logical)[np.flatnonzero(phys < 0)[0]])
            raise NotFound(f"logical group {bad} was never written")
        return phys

    def populate(self, logical: np.ndarray) -> None:
        """Bulk sequential write of distinct logical groups (used to precondition input data)."""
        logical = np.asarray(logical, dtype=np.int64)
        if logical.size and np.unique(logical).size != logical.size:
            raise ValueError("populate needs distinct logical groups")
        done = 0
        while done < logical.size:
            if self.active_space == 0:
                self.close_active()
                if not self._open_block(gc=False):
                    raise GCDeadlock("backbone full while preconditioning")
            k = min(self.active_space, logical.size - done)
            lgs = logical[done:done + k]
            phys = self.active * self.gpb + self.next_offset + np.arange(k, dtype=np.int64)
            old = self.l2p[lgs]
            live = old[old >= 0]
            self.p2l[live] = -1
            np.subtract.at(self.pool.valid, live // self.gpb, 1)
            self.l2p[lgs] = phys
            self.p2l[phys] = lgs
            self.pool.valid[self.active] += k
            self.next_offset += k
            self.cursor = int(phys[-1])
            self.writes += k
            done += k
            if self.next_offset == self.gpb:
                self.close_active()

    def valid_groups_of(self, block: int) -> np.ndarray:
        lo = block * self.gpb
        return lo + np.flatnonzero(self.p2l[lo:lo + self.gpb] >= 0)

    def erase_block(self, block: int) -> None:
        lo = block * self.gpb
        if (self.p2l[lo:lo + self.gpb] >= 0).any():
            raise RuntimeError(f"erasing block {block} would drop valid data")
        self.pool.erase_count[block] += 1
        if self.active == block:
            self.active = None
            self.next_offset = 0

    # ------------------------------------------------------------ address arithmetic
    def logical_group(self, word_address: int) -> int:
        return word_address * self.geometry.word_size // self.geometry.page_group_size

    def locate(self, phys: int) -> PhysicalLocation:
        ppp = self.geometry.pages_per_package
        return PhysicalLocation(int(phys), int(phys) // ppp, int(phys) % ppp,
                                tuple(range(self.geometry.channels)))

    def translate_read(self, word_address: int) -> PhysicalLocation:
        return self.locate(self.lookup(self.logical_group(word_address)))

    # ------------------------------------------------------------ checks and snapshots
    def check(self) -> None:
        mapped = np.flatnonzero(self.l2p >= 0)
        phys = self.l2p[mapped]
        assert np.unique(phys).size == phys.size, "two logical groups share a physical group"
        assert (self.p2l[phys] == mapped).all(), "reverse map out of sync"
        assert int((self.p2l >= 0).sum()) == mapped.size, "stale reverse entries"
        counts = np.bincount(phys // self.gpb, minlength=self.pool.blocks)
        assert (counts == self.pool.valid).all(), "valid counts out of sync"
        self.pool.check()

    def export_snapshot(self) -> bytes:
        header = SNAPSHOT_MAGIC + struct.pack("<Iq", self.geometry.fingerprint(), self.cursor)
        entries = np.where(self.l2p < 0, UNMAPPED, self.l2p).astype("<u4")
        return header + entries.tobytes()

    @staticmethod
    def import_snapshot(blob: bytes, geometry: BackboneGeometry | None = None) -> tuple[np.ndarray, int]:
        """Decode a snapshot into (logical->physical array with -1 for unmapped, cursor)."""
        geometry = geometry or BackboneGeometry()
        if len(blob) < 16 or blob[:4] != SNAPSHOT_MAGIC:
            raise ValueError("not a page-group table snapshot")
        crc, cursor = struct.unpack("<Iq", blob[4:16])
        if crc != geometry.fingerprint():
            raise ValueError("snapshot was taken with a different geometry")
        entries = np.frombuffer(blob, dtype="<u4", offset=16)
        if entries.size != geometry.logical_groups:
            raise ValueError("snapshot length does not match the geometry")
        l2p = entries.astype(np.int64)
        l2p[entries == UNMAPPED] = -1
        return l2p, cursor


class Flashvisor:
    """Owns the mapping table and range locks; all requests arrive as queue messages."""

    def __init__(self, params: HardwareParams | None = None, table: PageGroupTable | None = None) -> None:
        self.params = params or HardwareParams()
        self.table = table or PageGroupTable(self.params.geometry)
        self.locks = RangeLockTree()

    def lookup_latency(self, kind: str = "lookup") -> float:
        if kind not in ("lookup", "update"):
            raise ValueError(f"kind must be lookup or update, got {kind!r}")
        return self.params.scratchpad_access

    def group_span(self, word_address: int, length: int) -> tuple[int, int]:
        geo = self.params.geometry
        start = word_address * geo.word_size
        if start % geo.page_group_size or length % geo.page_group_size or length <= 0:
            raise MappingError("alignment",
                               f"[{start}, {length}] is not a non-empty page-group aligned range")
        if start + length > geo.capacity:
            raise MappingError("capacity", f"range ends at {start + length} B, beyond {geo.capacity} B")
        first = start // geo.page_group_size
        return first, first + length // geo.page_group_size - 1

    def map_section(self, msg: QueueMessage, owner: Hashable, token=None) -> LockGrant:
        if msg.kind not in ("read", "write"):
            raise ValueError(f"request type must be read or write, got {msg.kind!r}")
        first, last = self.group_span(msg.word_address, msg.length)
        kind = READ_MAP if msg.kind == "read" else WRITE_MAP
        lock_id, granted = self.locks.request(first, last, kind, owner, token)
        return LockGrant(lock_id, granted, first, last)

    def unmap_section(self, lock_id: int):
        return self.locks.release(lock_id)

    def translate_read(self, word_address: int) -> PhysicalLocation:
        return self.table.translate_read(word_address)

    def translate_write(self, word_address: int) -> int | None:
        return self.table.translate_write(self.table.logical_group(word_address))
