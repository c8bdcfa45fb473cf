"""Kernel scheduling policies and the multi-app execution chain.

Inter-kernel policies hand a whole kernel to one worker LWP, which then runs its screens
back to back. Intra-kernel policies hand out single screens from each kernel's frontier
microblock (the earliest one not yet finished).
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .workload import KernelDescriptor, MicroblockSpec, ScreenSpec

INTER_ST = "interst"
INTER_DY = "interdy"
INTRA_IO = "intraio"
INTRA_O3 = "intrao3"
SIMD = "simd"
POLICIES = (INTER_ST, INTER_DY, INTRA_IO, INTRA_O3, SIMD)
INTER_POLICIES = (INTER_ST, INTER_DY)
DISPLAY_NAMES = {INTER_ST: "InterSt", INTER_DY: "InterDy", INTRA_IO: "IntraIo", INTRA_O3: "IntraO3", SIMD: "SIMD"}


class ProtocolViolation(RuntimeError):
    """A completion or start that does not match the chain's screen state."""


class Status(enum.Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"


@dataclass
class ScreenRecord:
    screen: ScreenSpec
    assigned_lwp: int | None = None
    status: Status = Status.PENDING
    start: float | None = None
    end: float | None = None


@dataclass
class ChainNode:
    microblock: MicroblockSpec
    screens: list[ScreenRecord]

    @classmethod
    def build(cls, mb: MicroblockSpec) -> "ChainNode":
        return cls(mb, [ScreenRecord(s) for s in mb.screens])

    @property
    def done(self) -> bool:
        return all(r.status is Status.DONE for r in self.screens)

    def pending(self) -> list[int]:
        return [i for i, r in enumerate(self.screens) if r.status is Status.PENDING]


@dataclass(eq=False)
class KernelChain:
    """One kernel instance's ordered microblock nodes."""

    app_id: int
    instance: int
    descriptor: KernelDescriptor
    seq: int = 0
    arrival: float = 0.0
    nodes: list[ChainNode] = field(default_factory=list)
    claimed_lwp: int | None = None
    frontier: int = 0
    unassigned: int = 0
    finished_at: float | None = None
    first_start: float | None = None

    def __post_init__(self) -> None:
        if not self.nodes:
            self.nodes = [ChainNode.build(mb) for mb in self.descriptor.microblocks]
        self.unassigned = sum(len(n.screens) for n in self.nodes)

    @property
    def kernel_id(self) -> int:
        return self.descriptor.kernel_id

    @property
    def key(self) -> tuple[int, int, int]:
        return self.app_id, self.instance, self.kernel_id

    @property
    def finished(self) -> bool:
        return self.frontier >= len(self.nodes)

    def frontier_pending(self) -> list[int]:
        if self.finished:
            return []
        return self.nodes[self.frontier].pending()

    def screen_order(self) -> list[tuple[int, int]]:
        return [(m, s) for m, n in enumerate(self.nodes) for s in range(len(n.screens))]


@dataclass(frozen=True)
class Dispatch:
    lwp: int
    kernel: KernelChain
    microblock: int | None = None  # None: the whole kernel
    screen: int | None = None

    @property
    def whole_kernel(self) -> bool:
        return self.microblock is None


class MultiAppExecutionChain:
    """Root with one pointer per application; each application lists its kernel chains."""

    def __init__(self) -> None:
        self.root: dict[int, list[KernelChain]] = defaultdict(list)
        self.arrivals: list[KernelChain] = []
        self._live: list[KernelChain] = []

    def add(self, kernel: KernelChain) -> KernelChain:
        kernel.seq = len(self.arrivals)
        self.root[kernel.app_id].append(kernel)
        self.arrivals.append(kernel)
        self._live.append(kernel)
        return kernel

    def live(self) -> list[KernelChain]:
        """Unfinished kernels in arrival order."""
        return self._live

    @property
    def all_finished(self) -> bool:
        return not self._live

    def app_finished(self, app_id: int) -> bool:
        return all(k.finished for k in self.root.get(app_id, ()))

    def start(self, kernel: KernelChain, mb: int, screen: int, lwp: int, now: float) -> ScreenRecord:
        if mb != kernel.frontier:
            raise ProtocolViolation(f"{kernel.key}: microblock {mb} started before microblock "
                                    f"{kernel.frontier} finished")
        rec = kernel.nodes[mb].screens[screen]
        if rec.status is not Status.PENDING:
            raise ProtocolViolation(f"{kernel.key}: screen {mb}.{screen} is already {rec.status.value}")
        rec.status = Status.RUNNING
        rec.assigned_lwp = lwp
        rec.start = now
        kernel.unassigned -= 1
        if kernel.first_start is None:
            kernel.first_start = now
        return rec

    def notify_completion(self, kernel: KernelChain, mb: int, screen: int, lwp: int, now: float) -> bool:
        """Mark a running screen done; returns True when the whole kernel finished."""
        rec = kernel.nodes[mb].screens[screen]
        if rec.status is not Status.RUNNING or rec.assigned_lwp != lwp:
            raise ProtocolViolation(f"{kernel.key}: completion of screen {mb}.{screen} on LWP {lwp} "
                                    f"but it is {rec.status.value} on {rec.assigned_lwp}")
        rec.status = Status.DONE
        rec.end = now
        while kernel.frontier < len(kernel.nodes) and kernel.nodes[kernel.frontier].done:
            kernel.frontier += 1
        if kernel.finished:
            kernel.finished_at = now
            self._live.remove(kernel)
            return True
        return False


@dataclass
class SchedulerPolicy:
    variant: str
    workers: Sequence[int]

    def __post_init__(self) -> None:
        if self.variant not in POLICIES:
            raise ValueError(f"unknown policy {self.variant!r}; expected one of {', '.join(POLICIES)}")
        if not self.workers:
            raise ValueError("worker pool is empty")
        self.workers = tuple(self.workers)

    @property
    def whole_kernel(self) -> bool:
        return self.variant in INTER_POLICIES

    def static_lwp(self, app_id: int) -> int:
        return self.workers[app_id % len(self.workers)]

    def assign(self, chain: MultiAppExecutionChain, idle: Iterable[int]) -> list[Dispatch]:
        idle_sorted = sorted(idle)
        if self.variant == INTER_ST:
            return assign_static(chain, idle_sorted, self)
        if self.variant == INTER_DY:
            return assign_dynamic(chain, idle_sorted)
        if self.variant == INTRA_IO:
            return assign_intra_inorder(chain, idle_sorted)
        if self.variant == INTRA_O3:
            return assign_intra_ooo(chain, idle_sorted)
        return assign_simd(chain, idle_sorted)


def assign_static(chain: MultiAppExecutionChain, idle: list[int], policy: SchedulerPolicy) -> list[Dispatch]:
    """Each application is pinned to worker ``app_id mod pool``; its kernels queue FIFO there."""
    out = []
    free = set(idle)
    seen: set[int] = set()
    for k in chain.live():
        if k.claimed_lwp is not None:
            continue
        lwp = policy.static_lwp(k.app_id)
        if lwp in seen:
            continue  # an earlier kernel is still queued for this LWP
        seen.add(lwp)
        if lwp in free:
            free.discard(lwp)
            k.claimed_lwp = lwp
            out.append(Dispatch(lwp, k))
    return out


def assign_dynamic(chain: MultiAppExecutionChain, idle: list[int]) -> list[Dispatch]:
    """Oldest waiting kernel to the lowest-index idle worker."""
    out = []
    free = list(idle)
    for k in chain.live():
        if not free:
            break
        if k.claimed_lwp is None:
            k.claimed_lwp = free.pop(0)
            out.append(Dispatch(k.claimed_lwp, k))
    return out


def _fill(k: KernelChain, free: list[int], out: list[Dispatch]) -> None:
    for s in k.frontier_pending():
        if not free:
            return
        if any(d.kernel is k and d.microblock == k.frontier and d.screen == s for d in out):
            continue
        out.append(Dispatch(free.pop(0), k, k.frontier, s))


def _assigned_here(k: KernelChain, out: list[Dispatch]) -> int:
    return sum(1 for d in out if d.kernel is k)


def assign_intra_inorder(chain: MultiAppExecutionChain, idle: list[int]) -> list[Dispatch]:
    """Spread the frontier screens of the oldest kernel; move on only once it has nothing left to assign."""
    out: list[Dispatch] = []
    free = list(idle)
    for k in chain.live():
        if not free:
            break
        _fill(k, free, out)
        if k.unassigned - _assigned_here(k, out) > 0:
            break
    return out


def assign_intra_ooo(chain: MultiAppExecutionChain, idle: list[int]) -> list[Dispatch]:
    """Fill idle workers with frontier screens of any kernel, oldest kernel first."""
    out: list[Dispatch] = []
    free = list(idle)
    for k in chain.live():
        if not free:
            break
        _fill(k, free, out)
    return out


def assign_simd(chain: MultiAppExecutionChain, idle: list[int]) -> list[Dispatch]:
    """Conventional accelerator: one kernel at a time, its frontier screens spread over the workers."""
    out: list[Dispatch] = []
    live = chain.live()
    if live:
        _fill(live[0], list(idle), out)
    return out


# --------------------------------------------------------------------------- auditing

@dataclass(frozen=True)
class DispatchRecord:
    time: float
    lwp: int
    app: int
    instance: int
    kernel: int
    microblock: int
    screen: int
    event: str  # "dispatch" | "complete"

    def as_row(self) -> list:
        return [repr(float(self.time)), self.lwp, self.app, self.instance, self.kernel,
                self.microblock, self.screen, self.event]


DISPATCH_HEADER = ["time_ns", "lwp", "app", "instance", "kernel", "microblock", "screen", "event"]


def audit_dispatch_trace(records: Sequence[DispatchRecord],
                         management: Iterable[int] = ()) -> list[str]:
    """Check dependency safety, status transitions, and LWP exclusivity over a dispatch trace."""
    problems: list[str] = []
    banned = set(management)
    starts: dict[tuple, float] = {}
    ends: dict[tuple, float] = {}
    per_kernel: dict[tuple, dict[int, list[tuple]]] = defaultdict(lambda: defaultdict(list))
    lwp_spans: dict[int, list[tuple[float, float]]] = defaultdict(list)
    open_on: dict[int, tuple] = {}
    for r in records:
        key = (r.app, r.instance, r.kernel, r.microblock, r.screen)
        if r.lwp in banned:
            problems.append(f"screen {key} ran on management LWP {r.lwp}")
        if r.event == "dispatch":
            if key in starts:
                problems.append(f"screen {key} dispatched twice")
            if r.lwp in open_on:
                problems.append(f"LWP {r.lwp} got {key} while running {open_on[r.lwp]}")
            starts[key] = r.time
            open_on[r.lwp] = key
            per_kernel[key[:3]][r.microblock].append(key)
        elif r.event == "complete":
            if key not in starts:
                problems.append(f"screen {key} completed without dispatch")
            elif key in ends:
                problems.append(f"screen {key} completed twice")
            elif open_on.get(r.lwp) != key:
                problems.append(f"screen {key} completed on LWP {r.lwp} which was not running it")
            else:
                ends[key] = r.time
                del open_on[r.lwp]
                lwp_spans[r.lwp].append((starts[key], r.time))
        else:
            problems.append(f"unknown event {r.event!r}")
    for kkey, mbs in per_kernel.items():
        ids = sorted(mbs)
        for a, b in zip(ids, ids[1:]):
            prev_done = [ends.get(s) for s in mbs[a]]
            if any(e is None for e in prev_done):
                problems.append(f"kernel {kkey}: microblock {b} started while {a} unfinished")
                continue
            first_next = min(starts[s] for s in mbs[b])
            if first_next < max(prev_done):
                problems.append(f"kernel {kkey}: microblock {b} started at {first_next} before "
                                f"microblock {a} finished at {max(prev_done)}")
        if ids and ids != list(range(ids[-1] + 1)):
            problems.append(f"kernel {kkey}: microblocks {ids} skipped one")
    return problems
