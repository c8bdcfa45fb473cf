"""Simulation report: per-kernel timing, busy-interval ledgers, traces, and their file formats."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Any

EVENT_HEADER = ["time_ns", "actor", "kind", "app", "instance", "kernel", "microblock", "screen"]
GC_HEADER = ["time_ns", "victim_block", "valid_groups_migrated", "erase_count"]
REPORT_VERSION = 1


class ReportError(ValueError):
    pass


@dataclass
class KernelRecord:
    app: int
    instance: int
    kernel: int
    name: str
    arrival: float
    ready: float
    start: float
    end: float
    input_bytes: int
    output_bytes: int
    lwp: int | None = None

    @property
    def latency(self) -> float:
        return self.end - self.arrival


@dataclass
class SimulationReport:
    mix: str
    policy: str
    mode: str
    params: dict[str, Any]
    kernels: list[KernelRecord]
    busy: dict[str, list[tuple[float, float]]]
    makespan: float
    horizon: float
    events: list[tuple] = field(default_factory=list)
    dispatch: list[tuple] = field(default_factory=list)
    gc: list[tuple] = field(default_factory=list)
    counters: dict[str, Any] = field(default_factory=dict)
    audit: list[str] = field(default_factory=list)

    @property
    def workers(self) -> list[str]:
        return sorted((c for c in self.busy if c.startswith("lwp") and c not in self.management),
                      key=lambda c: int(c[3:]))

    @property
    def management(self) -> list[str]:
        return list(self.counters.get("management_lwps", []))

    def busy_time(self, component: str) -> float:
        return sum(e - s for s, e in self.busy.get(component, ()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": REPORT_VERSION,
            "mix": self.mix,
            "policy": self.policy,
            "mode": self.mode,
            "params": self.params,
            "makespan_ns": self.makespan,
            "horizon_ns": self.horizon,
            "kernels": [asdict(k) for k in self.kernels],
            "busy_intervals": {c: [list(iv) for iv in ivs] for c, ivs in self.busy.items()},
            "counters": self.counters,
            "audit": self.audit,
        }

    def to_json(self, extra: dict[str, Any] | None = None) -> str:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SimulationReport":
        try:
            if doc.get("version") != REPORT_VERSION:
                raise ReportError(f"unsupported report version {doc.get('version')!r}")
            return cls(
                mix=doc["mix"], policy=doc["policy"], mode=doc["mode"], params=doc["params"],
                kernels=[KernelRecord(**k) for k in doc["kernels"]],
                busy={c: [tuple(iv) for iv in ivs] for c, ivs in doc["busy_intervals"].items()},
                makespan=doc["makespan_ns"], horizon=doc["horizon_ns"],
                counters=doc.get("counters", {}), audit=doc.get("audit", []),
            )
        except (KeyError, TypeError) as exc:
            raise ReportError(f"malformed report: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "SimulationReport":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportError(f"report is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def events_csv(report: SimulationReport) -> str:
    return _csv(EVENT_HEADER, report.events)


def dispatch_csv(report: SimulationReport) -> str:
    from .sched import DISPATCH_HEADER
    return _csv(DISPATCH_HEADER, report.dispatch)


def gc_csv(report: SimulationReport) -> str:
    return _csv(GC_HEADER, report.gc)
