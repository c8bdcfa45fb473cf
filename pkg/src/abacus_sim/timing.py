"""FIFO resource calendars and the flash/transfer timing model.

Every shared component (flash way, flash link, DDR3L, PCIe, host CPU, ...) is a ``Resource``:
a single FIFO server with a ``free_at`` pointer and a coalesced busy-interval ledger.
Batches of page-group transfers are reserved in one call with numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hardware import HardwareParams


@dataclass
class Resource:
    name: str
    free_at: float = 0.0
    intervals: list[tuple[float, float]] = field(default_factory=list)

    @property
    def busy_time(self) -> float:
        return sum(e - s for s, e in self.intervals)

    def _record(self, start: float, end: float) -> None:
        if end <= start:
            return
        if self.intervals and self.intervals[-1][1] >= start:
            s0, e0 = self.intervals[-1]
            self.intervals[-1] = (s0, max(e0, end))
        else:
            self.intervals.append((start, end))

    def reserve(self, at: float, duration: float) -> tuple[float, float]:
        """Queue one job arriving at ``at``; returns its (start, end)."""
        if duration <= 0:
            return at, at
        start = max(self.free_at, at)
        end = start + duration
        self.free_at = end
        self._record(start, end)
        return start, end

    def reserve_batch(self, arrivals: np.ndarray, duration: float) -> np.ndarray:
        """Queue equal-length jobs in array order; returns their end times.

        Solves d_i = max(d_{i-1}, a_i) + x in closed form:
        d_i = (i+1)x + max(free_at, max_{j<=i}(a_j - j x)).
        """
        arrivals = np.asarray(arrivals, dtype=float)
        n = arrivals.size
        if n == 0:
            return arrivals.copy()
        if duration <= 0:
            return arrivals.copy()
        idx = np.arange(n, dtype=float)
        base = np.maximum.accumulate(arrivals - idx * duration)
        base = np.maximum(base, self.free_at)
        ends = (idx + 1) * duration + base
        starts = ends - duration
        self.free_at = float(ends[-1])
        # a new busy run starts wherever the server sat idle before the job
        prev_end = np.concatenate(([-np.inf], ends[:-1]))
        breaks = np.flatnonzero(starts > prev_end)
        run_ends = np.concatenate((breaks[1:] - 1, [n - 1]))
        for b, e in zip(breaks.tolist(), run_ends.tolist()):
            self._record(float(starts[b]), float(ends[e]))
        return ends


class FlashBackbone:
    """Ways (package x die) plus the shared flash link, in page-group units."""

    def __init__(self, params: HardwareParams) -> None:
        self.params = params
        geo = params.geometry
        self.ways = [Resource(f"way{w}") for w in range(geo.ways)]
        self.link = Resource("flash-link")
        self.group_transfer = geo.page_group_size / params.flash_link_bw * 1e9

    def way_of(self, phys: np.ndarray) -> np.ndarray:
        return np.asarray(phys, dtype=np.int64) % len(self.ways)

    def _per_way(self, ways: np.ndarray, arrivals: np.ndarray, latency: float) -> np.ndarray:
        ends = np.empty(arrivals.size, dtype=float)
        for w in np.unique(ways).tolist():
            sel = np.flatnonzero(ways == w)
            ends[sel] = self.ways[w].reserve_batch(arrivals[sel], latency)
        return ends

    def read(self, phys: np.ndarray, at: float) -> np.ndarray:
        """Array read on each group's way, then transfer over the link. Returns per-group arrival at DDR3L."""
        phys = np.asarray(phys, dtype=np.int64)
        if phys.size == 0:
            return np.empty(0)
        sensed = self._per_way(self.way_of(phys), np.full(phys.size, at, dtype=float),
                               self.params.geometry.read_latency)
        order = np.argsort(sensed, kind="stable")
        done = np.empty_like(sensed)
        done[order] = self.link.reserve_batch(sensed[order], self.group_transfer)
        return done

    def write(self, phys: np.ndarray, at: float) -> np.ndarray:
        """Transfer over the link, then program on each group's way. Returns per-group program end."""
        phys = np.asarray(phys, dtype=np.int64)
        if phys.size == 0:
            return np.empty(0)
        moved = self.link.reserve_batch(np.full(phys.size, at, dtype=float), self.group_transfer)
        return self._per_way(self.way_of(phys), moved, self.params.geometry.write_latency)

    def erase(self, block_first_group: int, at: float) -> float:
        way = int(block_first_group) % len(self.ways)
        return self.ways[way].reserve(at, self.params.geometry.erase_latency)[1]

    def sense_page(self, phys: int, at: float) -> float:
        """Single metadata page read (no link transfer)."""
        way = int(phys) % len(self.ways)
        return self.ways[way].reserve(at, self.params.geometry.read_latency)[1]

    def program_page(self, phys: int, at: float) -> float:
        way = int(phys) % len(self.ways)
        return self.ways[way].reserve(at, self.params.geometry.write_latency)[1]


def screen_io_time(length: int, kind: str, params: HardwareParams | None = None) -> float:
    """Duration of reading or writing ``length`` bytes on an idle backbone (groups at consecutive addresses)."""
    params = params or HardwareParams()
    group = params.geometry.page_group_size
    if length % group:
        raise ValueError(f"length {length} is not a multiple of the {group} B page group")
    if kind not in ("read", "write"):
        raise ValueError(f"kind must be 'read' or 'write', got {kind!r}")
    n = length // group
    if n == 0:
        return 0.0
    backbone = FlashBackbone(params)
    phys = np.arange(n, dtype=np.int64)
    ends = backbone.read(phys, 0.0) if kind == "read" else backbone.write(phys, 0.0)
    return float(ends.max())
