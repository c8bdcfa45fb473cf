"""Evaluation quantities derived from a ``SimulationReport``: throughput, latency, utilization, energy, power."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .hardware import HardwareParams
from .report import SimulationReport

J_PER_WNS = 1e-9  # one watt for one nanosecond


class MetricsError(ValueError):
    pass


def throughput(report: SimulationReport) -> float:
    """Processed input bytes per second of makespan."""
    if report.makespan <= 0:
        raise MetricsError("report has zero makespan")
    return sum(k.input_bytes for k in report.kernels) / (report.makespan * 1e-9)


@dataclass
class LatencyStats:
    min: float
    mean: float
    max: float
    cdf: list[tuple[float, float]]  # (latency ns, cumulative fraction), one sample per kernel instance
    per_kernel: dict[str, float] = field(default_factory=dict)


def latency_stats(report: SimulationReport) -> LatencyStats:
    lats = sorted(k.latency for k in report.kernels)
    if not lats:
        return LatencyStats(0.0, 0.0, 0.0, [])
    n = len(lats)
    per = {f"{k.name}#{k.instance}.k{k.kernel}": k.latency for k in report.kernels}
    return LatencyStats(lats[0], sum(lats) / n, lats[-1], [(v, (i + 1) / n) for i, v in enumerate(lats)], per)


@dataclass
class UtilizationReport:
    per_lwp: dict[str, float]
    mean_worker: float


def utilization(report: SimulationReport) -> UtilizationReport:
    """Busy time of each LWP over the makespan."""
    if report.makespan <= 0:
        return UtilizationReport({}, 0.0)
    per = {c: min(1.0, report.busy_time(c) / report.makespan)
           for c in report.busy if c.startswith("lwp")}
    workers = report.workers
    mean = sum(per[c] for c in workers) / len(workers) if workers else 0.0
    return UtilizationReport(per, mean)


@dataclass
class EnergyBreakdown:
    data_movement: float
    computation: float
    storage_access: float
    detail: dict[str, float]

    @property
    def total(self) -> float:
        return self.data_movement + self.computation + self.storage_access

    @property
    def data_movement_fraction(self) -> float:
        return self.data_movement / self.total if self.total else 0.0

    def as_dict(self) -> dict[str, float]:
        return {"data_movement": self.data_movement, "computation": self.computation,
                "storage_access": self.storage_access, "total": self.total, "detail": dict(self.detail)}


# detail bucket and energy category per component
_CATEGORY = {"lwp": "computation", "ddr3l": "computation", "storage": "storage_access",
             "pcie": "data_movement", "host_cpu": "data_movement", "host_dram": "data_movement"}


def _components(report: SimulationReport, params: HardwareParams) -> list[tuple[str, str, float]]:
    """(busy-ledger name, detail bucket, active watts) for every powered component."""
    comps = []
    ways = [c for c in report.busy if c.startswith("way")]
    for c in report.busy:
        if c.startswith("lwp"):
            comps.append((c, "lwp", params.lwp_power))
    comps.append(("ddr3l", "ddr3l", params.ddr3l_power))
    for w in ways:
        comps.append((w, "storage", params.ssd_power / len(ways)))
    if "ssd" in report.busy:
        comps.append(("ssd", "storage", params.ssd_power))
    comps.append(("pcie", "pcie", params.pcie_power))
    if "host_cpu" in report.busy or params.count_host_idle:
        comps.append(("host_cpu", "host_cpu", params.host_cpu_power))
        comps.append(("host_dram", "host_dram", params.host_dram_power))
    return comps


def _params(report: SimulationReport, params: HardwareParams | None) -> HardwareParams:
    return params if params is not None else HardwareParams.from_dict(report.params)


def energy(report: SimulationReport, params: HardwareParams | None = None) -> EnergyBreakdown:
    """Active power over busy time plus idle power (a fixed fraction of active) over the rest of the run.

    ``params`` defaults to the parameter set recorded in the report.
    """
    params = _params(report, params)
    horizon = report.horizon
    detail = {b: 0.0 for b in _CATEGORY}
    for name, bucket, watts in _components(report, params):
        busy = min(report.busy_time(name), horizon)
        joules = (watts * busy + params.idle_fraction * watts * (horizon - busy)) * J_PER_WNS
        detail[bucket] += joules
    cats = {"data_movement": 0.0, "computation": 0.0, "storage_access": 0.0}
    for bucket, joules in detail.items():
        cats[_CATEGORY[bucket]] += joules
    return EnergyBreakdown(detail=detail, **cats)


def _cumulative_busy(intervals: list[tuple[float, float]], t: np.ndarray) -> np.ndarray:
    if not intervals:
        return np.zeros_like(t)
    iv = np.asarray(intervals, dtype=float)
    s, e = iv[:, 0], iv[:, 1]
    before = np.concatenate(([0.0], np.cumsum(e - s)))
    i = np.searchsorted(s, t, side="right") - 1
    inside = np.clip(t - s[np.maximum(i, 0)], 0.0, (e - s)[np.maximum(i, 0)])
    return np.where(i >= 0, before[np.maximum(i, 0)] + inside, 0.0)


def power_timeseries(report: SimulationReport, bin_ns: float,
                     params: HardwareParams | None = None) -> list[tuple[float, float]]:
    """Average watts per bin, by exact interval intersection; bins cover [0, horizon)."""
    if not bin_ns > 0:
        raise MetricsError("bin width must be > 0")
    params = _params(report, params)
    horizon = report.horizon
    if horizon <= 0:
        return []
    nbins = int(np.ceil(horizon / bin_ns))
    edges = np.minimum(np.arange(nbins + 1, dtype=float) * bin_ns, horizon)
    widths = np.diff(edges)
    watts = np.zeros(nbins)
    for name, _, p in _components(report, params):
        busy = np.diff(_cumulative_busy(report.busy.get(name, []), edges))
        busy = np.minimum(busy, widths)
        watts += (p * busy + params.idle_fraction * p * (widths - busy)) / bin_ns
    return [(float(edges[i]), float(watts[i])) for i in range(nbins)]


def cdf_csv(report: SimulationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["latency_ns", "fraction"])
    for v, f in latency_stats(report).cdf:
        w.writerow([repr(float(v)), repr(float(f))])
    return buf.getvalue()


def timeseries_csv(series: list[tuple[float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_start_ns", "watts"])
    for t, p in series:
        w.writerow([repr(t), repr(p)])
    return buf.getvalue()


@dataclass
class ComparisonRow:
    label: str
    throughput_ratio: float
    mean_latency_ratio: float
    energy_ratio: float


def compare(reports: dict[str, SimulationReport], reference: str,
            params: HardwareParams | None = None) -> list[ComparisonRow]:
    """Throughput, mean latency, and energy of each report normalized to ``reference``."""
    if reference not in reports:
        raise MetricsError(f"reference {reference!r} is not among the reports")
    if len(reports) < 2:
        raise MetricsError("need at least two reports to compare")
    mixes = {r.mix for r in reports.values()}
    if len(mixes) != 1:
        raise MetricsError(f"reports cover different workloads: {', '.join(sorted(mixes))}")
    ref = reports[reference]
    t0 = throughput(ref)
    l0 = latency_stats(ref).mean
    e0 = energy(ref, params).total
    rows = []
    for label, r in reports.items():
        rows.append(ComparisonRow(label, throughput(r) / t0, latency_stats(r).mean / l0 if l0 else 1.0,
                                  energy(r, params).total / e0 if e0 else 1.0))
    return rows


def _union_length(intervals: list[tuple[float, float]]) -> float:
    total, cur_s, cur_e = 0.0, None, None
    for s, e in sorted(intervals):
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


TRANSFER_COMPONENTS = ("ssd", "host_cpu", "host_dram", "pcie", "flash-link")


def transfer_fraction(report: SimulationReport) -> float:
    """Share of the makespan during which any data-transfer component is busy."""
    if report.makespan <= 0:
        return 0.0
    ivs = [iv for c in TRANSFER_COMPONENTS for iv in report.busy.get(c, ())]
    return min(1.0, _union_length(ivs) / report.makespan)
