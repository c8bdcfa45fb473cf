"""Deterministic discrete-event engine for the integrated accelerator and the host-centric baseline.

Events sit in a heap ordered by (time, insertion sequence), so equal-time events run FIFO.
All events at one instant are drained before the scheduler looks at idle workers.
"""

from __future__ import annotations

import dataclasses
import heapq
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .flashvisor import Flashvisor, QueueMessage
from .hardware import HardwareParams
from .rangelock import READ_MAP, WRITE_MAP
from .report import KernelRecord, SimulationReport
from .sched import (INTER_POLICIES, SIMD, Dispatch, DispatchRecord, KernelChain,
                    MultiAppExecutionChain, SchedulerPolicy, audit_dispatch_trace)
from .storengine import GCDeadlock, NothingToReclaim, Storengine
from .timing import FlashBackbone, Resource
from .workload import KernelDescriptor, WorkloadMix

FLASHABACUS = "flashabacus"
BASELINE = "baseline"
MODES = (FLASHABACUS, BASELINE)
STORENGINE_OWNER = ("storengine",)

OFFLOAD_STEPS = ("interrupt", "sleep", "boot-address", "ipi", "wake")
BOOT_STEPS = OFFLOAD_STEPS[1:]


class SimulationError(RuntimeError):
    """Invalid run request or an unrecoverable condition during simulation."""

    code = "simulation"


class OffloadRejected(SimulationError):
    code = "offload"


class SimulationDeadlock(SimulationError):
    code = "deadlock"


@dataclass(frozen=True)
class ControlStep:
    name: str
    duration: float


def offload_kernel(descriptor: KernelDescriptor, target_lwp: int,
                   params: HardwareParams | None = None) -> list[ControlStep]:
    """Control sequence that downloads a kernel and boots it on ``target_lwp``."""
    params = params or HardwareParams()
    if target_lwp in (params.flashvisor_lwp, params.storengine_lwp):
        raise OffloadRejected(f"LWP {target_lwp} is reserved for management")
    if target_lwp not in params.workers:
        raise OffloadRejected(f"LWP {target_lwp} does not exist")
    steps = [ControlStep("pcie", descriptor.sections.descriptor_bytes / params.pcie_bw * 1e9)]
    steps += [ControlStep(name, params.control_latency) for name in OFFLOAD_STEPS]
    return steps


def arrival_order(mix: WorkloadMix) -> list[tuple[int, int, KernelDescriptor]]:
    """Kernel instances interleaved across applications: by kernel position, then instance, then app."""
    items = []
    for app in mix.applications:
        for pos, k in enumerate(app.kernels):
            for inst in range(app.instance_count):
                items.append(((pos, inst, app.app_id), (app.app_id, inst, k)))
    items.sort(key=lambda x: x[0])
    return [it[1] for it in items]


@dataclass
class _ScreenRun:
    kernel: KernelChain
    mb: int
    screen: int
    lwp: int
    compute: float = 0.0
    lock_id: int | None = None


class Simulator:
    def __init__(self, mix: WorkloadMix, policy: str, params: HardwareParams | None = None,
                 mode: str = FLASHABACUS, *, preloaded: bool = False, trace: bool = False) -> None:
        if mode not in MODES:
            raise SimulationError(f"unknown mode {mode!r}; expected flashabacus or baseline")
        if policy == SIMD and mode != BASELINE:
            raise SimulationError("the simd policy models the conventional accelerator and runs in baseline mode only")
        self.mix = mix
        self.params = params or HardwareParams()
        self.mode = mode
        self.policy = SchedulerPolicy(policy, self.params.workers)
        self.preloaded = preloaded
        self.trace = trace
        p = self.params

        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._dirty = False
        self.chain = MultiAppExecutionChain()
        self.idle = set(p.workers)
        self.lwp_res = {l: Resource(f"lwp{l}") for l in range(p.lwp_count)}
        self.ddr = Resource("ddr3l")
        self.pcie = Resource("pcie")
        self.host_cpu = Resource("host_cpu")
        self.host_dram = Resource("host_dram")
        self.ssd = Resource("ssd")
        self.events: list[tuple] = []
        self.dispatch_trace: list[DispatchRecord] = []
        self.kernels: list[KernelChain] = []
        self.ready_at: dict[int, float] = {}
        self.pending_arrivals = 0
        self.counters: dict[str, Any] = {"dispatches": 0, "flash_read_groups": 0, "flash_write_groups": 0,
                                         "buffer_hits": 0, "journal_writes": 0, "gc_migrations": 0,
                                         "lock_waits": 0, "buffer_waits": 0}

        if mode == FLASHABACUS:
            self.backbone = FlashBackbone(p)
            self.fv = Flashvisor(p)
            self.se = Storengine(self.fv.table, p.journal_period)
            self._precondition()
            self.buffer_used = 0
            self.buffer_waiters: deque = deque()
            self.dirty: dict[int, int] = {}
            self.flush_queue: deque = deque()
            self.flush_stalled = False
            self.reclaim_job = None
            self.reclaim_left = 0

    # ------------------------------------------------------------------ event plumbing
    def at(self, time: float, fn: Callable, *args) -> None:
        if time < self.now:
            raise SimulationError(f"event scheduled in the past ({time} < {self.now})")
        heapq.heappush(self._heap, (time, self._seq, fn, args))
        self._seq += 1

    def log(self, actor: str, kind: str, kernel: KernelChain | None = None, mb: int = -1, screen: int = -1,
            time: float | None = None) -> None:
        t = self.now if time is None else time
        if kernel is None:
            self.events.append((t, actor, kind, -1, -1, -1, mb, screen))
        else:
            self.events.append((t, actor, kind, kernel.app_id, kernel.instance, kernel.kernel_id, mb, screen))

    def run(self) -> SimulationReport:
        p = self.params
        host_t = 0.0
        for app_id, inst, desc in arrival_order(self.mix):
            k = KernelChain(app_id, inst, desc, arrival=0.0)
            self.kernels.append(k)
            if self.preloaded:
                ready = 0.0
            else:
                host_t = self.pcie.reserve(host_t, desc.sections.descriptor_bytes / p.pcie_bw * 1e9)[1]
                ready = host_t + p.control_latency
            self.pending_arrivals += 1
            self.at(ready, self._arrive, k)
        if self.mode == FLASHABACUS and math.isfinite(p.journal_period) and self.kernels:
            self.at(p.journal_period, self._journal_tick)

        while self._heap:
            t = self._heap[0][0]
            self.now = t
            while self._heap and self._heap[0][0] == t:
                _, _, fn, args = heapq.heappop(self._heap)
                fn(*args)
            if self._dirty:
                self._dirty = False
                self._schedule()
        if self.pending_arrivals or not self.chain.all_finished:
            raise SimulationDeadlock(self._diagnose())
        return self._report()

    # ------------------------------------------------------------------ scheduling
    def _arrive(self, k: KernelChain) -> None:
        self.pending_arrivals -= 1
        self.ready_at[id(k)] = self.now
        self.chain.add(k)
        if not self.preloaded:
            self.log("pcie", "dma", k)
        self._dirty = True

    def _schedule(self) -> None:
        p = self.params
        boot = len(BOOT_STEPS) * p.control_latency
        for d in self.policy.assign(self.chain, self.idle):
            self.idle.discard(d.lwp)
            self.counters["dispatches"] += 1
            self.log(f"lwp{d.lwp}", "control", d.kernel, -1 if d.whole_kernel else d.microblock,
                     -1 if d.whole_kernel else d.screen)
            if d.whole_kernel:
                m, s = d.kernel.screen_order()[0]
                self._start_screen(_ScreenRun(d.kernel, m, s, d.lwp), self.now + boot)
            else:
                overhead = boot + p.dispatch_overhead
                self._start_screen(_ScreenRun(d.kernel, d.microblock, d.screen, d.lwp), self.now + overhead)

    def _start_screen(self, run: _ScreenRun, begin: float) -> None:
        self.chain.start(run.kernel, run.mb, run.screen, run.lwp, self.now)
        self.dispatch_trace.append(DispatchRecord(self.now, run.lwp, run.kernel.app_id, run.kernel.instance,
                                                  run.kernel.kernel_id, run.mb, run.screen, "dispatch"))
        if self.mode == FLASHABACUS:
            self.at(begin, self._fa_input, run)
        else:
            self.at(begin, self._bl_input, run)

    def _screen_done(self, run: _ScreenRun) -> None:
        k = run.kernel
        self.dispatch_trace.append(DispatchRecord(self.now, run.lwp, k.app_id, k.instance, k.kernel_id,
                                                  run.mb, run.screen, "complete"))
        finished = self.chain.notify_completion(k, run.mb, run.screen, run.lwp, self.now)
        if self.policy.whole_kernel and not finished:
            order = k.screen_order()
            m, s = order[order.index((run.mb, run.screen)) + 1]
            self._start_screen(_ScreenRun(k, m, s, run.lwp), self.now)
            return
        self.idle.add(run.lwp)
        self._dirty = True

    def _spec(self, run: _ScreenRun):
        return run.kernel.descriptor.microblocks[run.mb].screens[run.screen]

    def _output_range(self, run: _ScreenRun):
        k = run.kernel
        app = self._app(k.app_id)
        return self._spec(run).output_range.shifted(app.instance_output_offset(k.instance))

    def _app(self, app_id: int):
        for a in self.mix.applications:
            if a.app_id == app_id:
                return a
        raise KeyError(app_id)

    def _compute(self, run: _ScreenRun, t_first: float, t_in: float, groups: int) -> float:
        p = self.params
        spec = self._spec(run)
        c = p.compute_time(spec.compute_instructions)
        ddr_bytes = spec.compute_instructions * spec.ldst_ratio * p.ddr_bytes_per_ldst + spec.io_bytes
        ddr_end = self.ddr.reserve(t_first, ddr_bytes / p.ddr3l_bw * 1e9)[1]
        end = max(t_first + c, ddr_end)
        if groups:
            end = max(end, t_in + c / groups)
        run.compute = c
        self.lwp_res[run.lwp].reserve(end - c, c)
        return end

    # ------------------------------------------------------------------ integrated datapath
    def _precondition(self) -> None:
        group = self.params.geometry.page_group_size
        lgs: set[int] = set()
        for app in self.mix.applications:
            for k in app.kernels:
                for s in k.screens:
                    r = s.input_range
                    if r.length:
                        lgs.update(range(r.start // group, r.end // group))
        if lgs:
            self.fv.table.populate(np.array(sorted(lgs), dtype=np.int64))

    def _fa_input(self, run: _ScreenRun) -> None:
        spec = self._spec(run)
        r = spec.input_range
        if not r.length:
            end = self._compute(run, self.now, self.now, 0)
            self.at(end, self._fa_computed, run)
            return
        msg = QueueMessage("read", run.kernel.key, r.start // self.params.geometry.word_size, r.length)
        grant = self.fv.map_section(msg, run.kernel.key, (self._fa_read, run))
        run.lock_id = grant.lock_id
        if grant.granted:
            self._fa_read(run)
        else:
            self.counters["lock_waits"] += 1
            if self.trace:
                self.log("flashvisor", "lock-wait", run.kernel, run.mb, run.screen)

    def _fa_read(self, run: _ScreenRun) -> None:
        p = self.params
        r = self._spec(run).input_range
        group = p.geometry.page_group_size
        lgs = np.arange(r.start // group, r.end // group, dtype=np.int64)
        issue = self.now + lgs.size * self.fv.lookup_latency("lookup")
        hit = np.fromiter((g in self.dirty for g in lgs.tolist()), dtype=bool, count=lgs.size) \
            if self.dirty else np.zeros(lgs.size, dtype=bool)
        arrive = np.full(lgs.size, issue)
        miss = np.flatnonzero(~hit)
        if miss.size:
            phys = self.fv.table.lookup_many(lgs[miss])
            arrive[miss] = self.backbone.read(phys, issue)
        self.counters["flash_read_groups"] += int(miss.size)
        self.counters["buffer_hits"] += int(lgs.size - miss.size)
        t_first, t_in = float(arrive.min()), float(arrive.max())
        if self.trace:
            self.log("flash", "flash-read", run.kernel, run.mb, run.screen, time=t_in)
        self.at(t_in, self._release, run.lock_id)
        end = self._compute(run, t_first, t_in, lgs.size)
        self.at(end, self._fa_computed, run)

    def _release(self, lock_id: int) -> None:
        for node in self.fv.unmap_section(lock_id):
            fn, arg = node.token
            self.at(self.now, fn, arg)

    def _fa_computed(self, run: _ScreenRun) -> None:
        self.log(f"lwp{run.lwp}", "compute-done", run.kernel, run.mb, run.screen)
        out = self._output_range(run)
        if not out.length:
            self._screen_done(run)
            return
        if self.buffer_waiters or not self._buffer_fits(out.length):
            self.counters["buffer_waits"] += 1
            self.buffer_waiters.append(run)
            return
        self._fa_admit(run)

    def _buffer_fits(self, nbytes: int) -> bool:
        # an oversized output is admitted alone so it cannot wait forever
        return self.buffer_used + nbytes <= self.params.write_buffer or self.buffer_used == 0

    def _fa_admit(self, run: _ScreenRun) -> None:
        out = self._output_range(run)
        self.buffer_used += out.length
        msg = QueueMessage("write", run.kernel.key, out.start // self.params.geometry.word_size, out.length)
        grant = self.fv.map_section(msg, run.kernel.key, (self._fa_buffered, run))
        run.lock_id = grant.lock_id
        if grant.granted:
            self._fa_buffered(run)
        else:
            self.counters["lock_waits"] += 1

    def _fa_buffered(self, run: _ScreenRun) -> None:
        out = self._output_range(run)
        group = self.params.geometry.page_group_size
        lgs = list(range(out.start // group, out.end // group))
        for g in lgs:
            self.dirty[g] = self.dirty.get(g, 0) + 1
        self.flush_queue.append(deque(lgs))
        self._release(run.lock_id)
        self._screen_done(run)
        self._pump_flushes()

    def _pump_flushes(self) -> None:
        table = self.fv.table
        update = self.fv.lookup_latency("update")
        while self.flush_queue:
            batch = self.flush_queue[0]
            lgs, phys = [], []
            while batch:
                ph = table.translate_write(batch[0])
                if ph is None:
                    break
                lgs.append(batch.popleft())
                phys.append(ph)
            if lgs:
                ends = self.backbone.write(np.array(phys, dtype=np.int64), self.now + len(lgs) * update)
                self.counters["flash_write_groups"] += len(lgs)
                end = float(ends.max())
                if self.trace:
                    self.log("flash", "flash-write", time=end)
                self.at(end, self._flush_done, lgs)
            if batch:
                self.flush_stalled = True
                self._start_reclaim()
                return
            self.flush_queue.popleft()
        self.flush_stalled = False

    def _flush_done(self, lgs: list[int]) -> None:
        group = self.params.geometry.page_group_size
        self.buffer_used -= len(lgs) * group
        for g in lgs:
            n = self.dirty[g] - 1
            if n:
                self.dirty[g] = n
            else:
                del self.dirty[g]
        while self.buffer_waiters and self._buffer_fits(self._output_range(self.buffer_waiters[0]).length):
            self._fa_admit(self.buffer_waiters.popleft())
        pool = self.fv.table.pool
        if (self.reclaim_job is None and len(pool.free) < self.params.gc_background_free_blocks
                and pool.used):
            self._start_reclaim()

    # ------------------------------------------------------------------ storengine activity
    def _journal_tick(self) -> None:
        if self.chain.all_finished and not self.pending_arrivals:
            return
        writes = self.se.journal_tick(self.now)
        if writes:
            self.log("storengine", "journal")
        geo = self.params.geometry
        for i, w in enumerate(writes):
            lock_id, granted = self.fv.locks.request(w.first_logical, w.last_logical, READ_MAP,
                                                     STORENGINE_OWNER)
            node_token = (self._journal_write, (lock_id, i % geo.ways))
            if granted:
                self._journal_write((lock_id, i % geo.ways))
            else:
                self._set_token(lock_id, node_token)
        self.at(self.now + self.params.journal_period, self._journal_tick)

    def _set_token(self, lock_id: int, token) -> None:
        for w in self.fv.locks.waiting:
            if w.lock_id == lock_id:
                w.token = token
                return

    def _journal_write(self, arg) -> None:
        lock_id, way = arg
        p = self.params
        moved = self.backbone.link.reserve(self.now, self.backbone.group_transfer)[1]
        end = self.backbone.ways[way].reserve(moved, p.geometry.write_latency)[1]
        self.counters["journal_writes"] += 1
        self.at(end, self._release, lock_id)

    def _start_reclaim(self) -> None:
        if self.reclaim_job is not None:
            return
        try:
            job = self.se.begin_reclaim()
        except NothingToReclaim:
            if self.flush_stalled:
                raise SimulationError("flash backbone is full and nothing can be reclaimed") from None
            return
        except GCDeadlock as exc:
            raise SimulationError(f"garbage collection deadlock: {exc}") from None
        self.reclaim_job = job
        self.reclaim_left = len(job.migrations)
        gpb = self.params.geometry.groups_per_block
        # the victim's page-table entries live in its first pages
        pte_ready = self.backbone.sense_page(job.victim * gpb, self.now)
        self.log("storengine", "gc")
        self.at(pte_ready, self._gc_issue, job)

    def _gc_issue(self, job) -> None:
        if not job.migrations:
            self._gc_erase(job)
            return
        for m in job.migrations:
            lock_id, granted = self.fv.locks.request(m.logical, m.logical, WRITE_MAP, STORENGINE_OWNER)
            if granted:
                self._gc_copy((job, m, lock_id))
            else:
                self.counters["lock_waits"] += 1
                self._set_token(lock_id, (self._gc_copy, (job, m, lock_id)))

    def _gc_copy(self, arg) -> None:
        job, m, lock_id = arg
        if not self.se.migrate(job, m):
            self._gc_copied((job, lock_id))
            return
        read = self.backbone.read(np.array([m.source]), self.now)
        end = float(self.backbone.write(np.array([m.dest]), float(read[0]))[0])
        self.counters["gc_migrations"] += 1
        self.at(end, self._gc_copied, (job, lock_id))

    def _gc_copied(self, arg) -> None:
        job, lock_id = arg
        self._release(lock_id)
        self.reclaim_left -= 1
        if self.reclaim_left == 0:
            self._gc_erase(job)

    def _gc_erase(self, job) -> None:
        gpb = self.params.geometry.groups_per_block
        end = self.backbone.erase(job.victim * gpb, self.now)
        self.at(end, self._gc_done, job)

    def _gc_done(self, job) -> None:
        self.se.complete_reclaim(job, self.now)
        self.reclaim_job = None
        self.log("storengine", "gc")
        if self.flush_stalled:
            self._pump_flushes()

    # ------------------------------------------------------------------ baseline datapath
    def _host_path(self, nbytes: int, t: float, direction: str) -> float:
        """SSD, host storage stack with its DRAM copies, and PCIe; returns the time data lands."""
        p = self.params
        requests = math.ceil(nbytes / p.host_request_bytes)
        copy = p.host_copies * nbytes / p.host_copy_bw * 1e9
        host = requests * p.host_stack_latency + copy
        pcie = nbytes / p.pcie_bw * 1e9
        if direction == "in":
            ssd_end = self.ssd.reserve(t, p.ssd_request_latency + nbytes / p.ssd_read_bw * 1e9)[1]
            start, host_end = self.host_cpu.reserve(ssd_end, host)
            self.host_dram.reserve(start, copy)
            return self.pcie.reserve(host_end, pcie)[1]
        pcie_end = self.pcie.reserve(t, pcie)[1]
        start, host_end = self.host_cpu.reserve(pcie_end, host)
        self.host_dram.reserve(start, copy)
        return self.ssd.reserve(host_end, p.ssd_request_latency + nbytes / p.ssd_write_bw * 1e9)[1]

    def _bl_input(self, run: _ScreenRun) -> None:
        p = self.params
        r = self._spec(run).input_range
        if not r.length:
            end = self._compute(run, self.now, self.now, 0)
        else:
            t_in = self._host_path(r.length, self.now, "in")
            self.log("pcie", "dma", run.kernel, run.mb, run.screen, time=t_in)
            if p.baseline_overlap:
                groups = r.length // p.geometry.page_group_size
                first = self.now + (t_in - self.now) / groups
                end = self._compute(run, first, t_in, groups)
            else:
                end = self._compute(run, t_in, t_in, 0)
        self.at(end, self._bl_computed, run)

    def _bl_computed(self, run: _ScreenRun) -> None:
        self.log(f"lwp{run.lwp}", "compute-done", run.kernel, run.mb, run.screen)
        out = self._output_range(run)
        if not out.length:
            self._screen_done(run)
            return
        self.at(self._host_path(out.length, self.now, "out"), self._screen_done, run)

    # ------------------------------------------------------------------ wrap-up
    def _diagnose(self) -> str:
        parts = [f"{len(self.chain.live())} kernel(s) unfinished"]
        if self.pending_arrivals:
            parts.append(f"{self.pending_arrivals} kernel(s) never arrived")
        if self.mode == FLASHABACUS:
            if self.fv.locks.waiting:
                parts.append("blocked range locks: " + ", ".join(
                    f"[{w.start},{w.last}] {w.kind} by {w.owner}" for w in self.fv.locks.waiting))
            if self.buffer_waiters:
                parts.append(f"{len(self.buffer_waiters)} screen(s) waiting for write-buffer space")
            if self.flush_stalled:
                parts.append("flushes stalled on free flash space")
        busy = sorted(set(self.params.workers) - self.idle)
        if busy:
            parts.append(f"LWPs held: {busy}")
        return "; ".join(parts)

    def _report(self) -> SimulationReport:
        p = self.params
        records = []
        for k in self.kernels:
            desc = k.descriptor
            app = self._app(k.app_id)
            records.append(KernelRecord(
                app=k.app_id, instance=k.instance, kernel=k.kernel_id, name=app.label,
                arrival=k.arrival, ready=self.ready_at[id(k)],
                start=k.first_start if k.first_start is not None else k.finished_at,
                end=k.finished_at, input_bytes=desc.input_bytes,
                output_bytes=sum(s.output_range.length for s in desc.screens), lwp=k.claimed_lwp))
        makespan = max((r.end for r in records), default=0.0)
        busy: dict[str, list[tuple[float, float]]] = {}
        management = []
        for l, res in self.lwp_res.items():
            name = f"lwp{l}"
            if l not in p.workers:
                if self.mode != FLASHABACUS:
                    continue
                management.append(name)
            busy[name] = list(res.intervals)
        busy["ddr3l"] = list(self.ddr.intervals)
        busy["pcie"] = list(self.pcie.intervals)
        if self.mode == FLASHABACUS:
            for w in self.backbone.ways:
                busy[w.name] = list(w.intervals)
            busy["flash-link"] = list(self.backbone.link.intervals)
        else:
            busy["ssd"] = list(self.ssd.intervals)
            busy["host_cpu"] = list(self.host_cpu.intervals)
            busy["host_dram"] = list(self.host_dram.intervals)
        horizon = max([makespan] + [ivs[-1][1] for ivs in busy.values() if ivs])
        if management:
            for name in management:
                # Flashvisor and Storengine stay powered and busy for the whole run
                busy[name] = [(0.0, horizon)] if horizon > 0 else []
        counters = dict(self.counters)
        counters["management_lwps"] = management
        counters["policy_whole_kernel"] = self.policy.whole_kernel
        if self.mode == FLASHABACUS:
            counters["gc_reclaims"] = len(self.se.gc_trace)
            counters["journal_dumps"] = self.se.journal_dumps
        mgmt = (p.flashvisor_lwp, p.storengine_lwp)
        audit = audit_dispatch_trace(self.dispatch_trace, mgmt)
        gc = [(g.time, g.victim, g.migrated, g.erase_count) for g in self.se.gc_trace] \
            if self.mode == FLASHABACUS else []
        return SimulationReport(
            mix=self.mix.name, policy=self.policy.variant, mode=self.mode, params=_params_doc(p),
            kernels=records, busy=busy, makespan=makespan, horizon=horizon,
            events=sorted(self.events, key=lambda e: e[0]),
            dispatch=[r.as_row() for r in self.dispatch_trace], gc=gc, counters=counters, audit=audit)


def _params_doc(p: HardwareParams) -> dict[str, Any]:
    doc = dataclasses.asdict(p)
    for k, v in list(doc.items()):
        if isinstance(v, float) and not math.isfinite(v):
            doc[k] = repr(v)
    return doc


def run(mix: WorkloadMix, policy: str, params: HardwareParams | None = None, mode: str = FLASHABACUS,
        **kwargs) -> SimulationReport:
    """Simulate ``mix`` to quiescence under one policy and datapath mode."""
    return Simulator(mix, policy, params, mode, **kwargs).run()
