"""Canonical scheduling scenarios in abstract time units, plus a random small-workload generator.

Screens here do no I/O and take whole time units of compute. ``unit_params`` strips the control
overheads so a run's completion times are exact multiples of ``UNIT``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .hardware import MB, BackboneGeometry, HardwareParams
from .simcore import FLASHABACUS, run
from .workload import ApplicationSpec, KernelDescriptor, MicroblockSpec, ScreenSpec, WorkloadMix

UNIT = 1_000_000.0  # ns per abstract time unit

# Kernel shapes: one list per microblock, one duration (in units) per screen.
Shape = Sequence[Sequence[int]]

# Two applications (ids 0 and 2) with two kernels each, on four workers.
INTER_SCENARIO: dict[str, tuple[int, int, Shape]] = {
    "k0": (0, 0, [[1], [1]]),
    "k1": (0, 1, [[1]]),
    "k2": (2, 0, [[1], [1], [1]]),
    "k3": (2, 1, [[1]]),
}

INTRA_SCENARIO: dict[str, tuple[int, int, Shape]] = {
    "k0": (0, 0, [[1], [1, 1, 1]]),
    "k1": (0, 1, [[1]]),
    "k2": (2, 0, [[1, 1], [1], [1, 1, 1, 1]]),
    "k3": (2, 1, [[1]]),
}

SCENARIO_WORKERS = 4


def unit_params(workers: int = SCENARIO_WORKERS, **overrides) -> HardwareParams:
    geometry = BackboneGeometry(capacity=64 * MB, groups_per_block=16)
    base = dict(lwp_count=workers + 2, control_latency=0.0, dispatch_overhead=0.0, geometry=geometry)
    base.update(overrides)
    return HardwareParams(**base)


def unit_kernel(app_id: int, kernel_id: int, shape: Shape, params: HardwareParams) -> KernelDescriptor:
    per_unit = UNIT * params.instr_per_ns
    mbs = []
    for m, durations in enumerate(shape):
        screens = tuple(ScreenSpec(s, int(round(d * per_unit)), 0.0) for s, d in enumerate(durations))
        mbs.append(MicroblockSpec(m, screens, is_serial=len(screens) == 1))
    return KernelDescriptor(app_id, kernel_id, tuple(mbs))


def unit_mix(kernels: dict[str, tuple[int, int, Shape]], params: HardwareParams, name: str = "scenario") -> WorkloadMix:
    by_app: dict[int, list[KernelDescriptor]] = {}
    for app_id, kernel_id, shape in kernels.values():
        by_app.setdefault(app_id, []).append(unit_kernel(app_id, kernel_id, shape, params))
    apps = tuple(ApplicationSpec(a, tuple(sorted(ks, key=lambda k: k.kernel_id)), 1)
                 for a, ks in sorted(by_app.items()))
    return WorkloadMix(name, apps, "compute-intensive")


@dataclass(frozen=True)
class ScenarioResult:
    policy: str
    completion: dict[str, int]  # kernel label -> completion time in units
    placement: dict[str, list[int]]  # kernel label -> worker indices used
    makespan: int
    audit: list[str]


def run_scenario(kernels: dict[str, tuple[int, int, Shape]], policy: str,
                 workers: int = SCENARIO_WORKERS) -> ScenarioResult:
    params = unit_params(workers)
    mix = unit_mix(kernels, params)
    report = run(mix, policy, params, FLASHABACUS, preloaded=True)
    labels = {(a, k): name for name, (a, k, _) in kernels.items()}
    completion = {}
    for rec in report.kernels:
        units = rec.end / UNIT
        if units != round(units):
            raise AssertionError(f"completion {rec.end} ns is not a whole number of units")
        completion[labels[(rec.app, rec.kernel)]] = int(round(units))
    first_worker = params.workers[0]
    placement: dict[str, list[int]] = {name: [] for name in kernels}
    for row in report.dispatch:
        _, lwp, app, _, kernel, _, _, event = row
        if event == "dispatch":
            idx = lwp - first_worker
            name = labels[(app, kernel)]
            if idx not in placement[name]:
                placement[name].append(idx)
    return ScenarioResult(policy, completion, placement, max(completion.values()), report.audit)


def random_small_workload(rng: random.Random, max_apps: int = 4, max_kernels: int = 3,
                          max_screens: int = 8, max_microblocks: int = 3,
                          max_screens_per_mblk: int = 3, durations: Sequence[int] = (1,)) -> dict:
    """Random kernel shapes with at most ``max_screens`` screens in total."""
    while True:
        kernels = {}
        total = 0
        for a in range(rng.randint(1, max_apps)):
            for k in range(rng.randint(1, max_kernels)):
                shape = [[rng.choice(durations) for _ in range(rng.randint(1, max_screens_per_mblk))]
                         for _ in range(rng.randint(1, max_microblocks))]
                total += sum(len(m) for m in shape)
                kernels[f"a{a}k{k}"] = (a, k, shape)
        if total <= max_screens:
            return kernels
