"""Command-line front end: ``abacus-sim run|compare|validate|preset``."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import metrics
from .flashvisor import MappingError
from .hardware import HardwareParams, ParameterError
from .report import ReportError, SimulationReport, dispatch_csv, events_csv
from .sched import POLICIES, SIMD
from .simcore import BASELINE, FLASHABACUS, MODES, SimulationError, run
from .workload import WorkloadError, WorkloadMix, build_mix, parse_workload, preset_mix, serialize_workload

PROG = "abacus-sim"
THREADS_ENV = "ABACUS_SIM_THREADS"


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = 1) -> None:
        self.code = code
        self.status = status
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # keep every failure on one machine-parsable line
        raise CliError("usage", message, 2)


@dataclass
class ExperimentConfig:
    source: tuple[str, str]  # ("mix", "3") | ("preset", "atax") | ("spec", path)
    policies: list[str]
    modes: list[str]
    overrides: dict[str, str] = field(default_factory=dict)
    out: Path = Path(".")
    seed: int = 0
    trace: bool = False
    instances: int | None = None

    def __post_init__(self) -> None:
        if not self.policies or not self.modes:
            raise CliError("usage", "need at least one policy and one mode", 2)

    def params(self) -> HardwareParams:
        return HardwareParams().with_overrides(self.overrides)

    def runs(self) -> list[tuple[str, str]]:
        """(policy, mode) pairs; simd only exists in baseline mode."""
        return [(p, m) for m in self.modes for p in self.policies if not (p == SIMD and m != BASELINE)]


def load_workload(source: tuple[str, str], params: HardwareParams, instances: int | None = None) -> WorkloadMix:
    kind, value = source
    geo = params.geometry
    if kind == "mix":
        try:
            mix_id = int(value)
        except ValueError:
            raise CliError("usage", f"--mix expects an integer, got {value!r}", 2) from None
        return build_mix(mix_id, instances or 4, geometry=geo)
    if kind == "preset":
        return preset_mix(value, instances or 6, geometry=geo)
    try:
        text = Path(value).read_text()
    except OSError as exc:
        raise CliError("io", f"cannot read {value}: {exc.strerror}") from None
    return parse_workload(text, geo)


def _parse_policies(text: str) -> list[str]:
    if text == "all":
        return list(POLICIES)
    names = [p.strip().lower() for p in text.split(",") if p.strip()]
    for n in names:
        if n not in POLICIES:
            raise CliError("usage", f"unknown policy {n!r}; choose from {', '.join(POLICIES)} or all", 2)
    return list(dict.fromkeys(names))


def _parse_modes(text: str) -> list[str]:
    if text == "both":
        return [FLASHABACUS, BASELINE]
    if text not in MODES:
        raise CliError("usage", f"unknown mode {text!r}; choose flashabacus, baseline, or both", 2)
    return [text]


def _parse_sets(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise CliError("usage", f"--set expects key=value, got {item!r}", 2)
        out[key.strip()] = value.strip()
    return out


def _summary(report: SimulationReport) -> dict:
    e = metrics.energy(report)
    lat = metrics.latency_stats(report)
    util = metrics.utilization(report)
    return {"metrics": {
        "throughput_bytes_per_s": metrics.throughput(report) if report.makespan > 0 else 0.0,
        "latency_ns": {"min": lat.min, "mean": lat.mean, "max": lat.max, "cdf": lat.cdf},
        "energy_j": e.as_dict(),
        "utilization": {"per_lwp": util.per_lwp, "mean_worker": util.mean_worker},
        "transfer_fraction": metrics.transfer_fraction(report),
    }}


def _one(job: tuple) -> tuple[str, str, str, str]:
    mix, policy, mode, params, trace, seed = job
    report = run(mix, policy, params, mode, trace=trace)
    extra = _summary(report)
    extra["seed"] = seed
    return report.to_json(extra), events_csv(report), dispatch_csv(report), _line(report)


def _line(report: SimulationReport) -> str:
    thr = metrics.throughput(report) / 1e6 if report.makespan > 0 else 0.0
    return (f"{report.mix} {report.policy} {report.mode}: makespan {report.makespan / 1e9:.6f} s, "
            f"throughput {thr:.2f} MB/s, energy {metrics.energy(report).total:.3f} J")


def _threads(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError("usage", f"{THREADS_ENV} must be an integer, got {raw!r}", 2) from None
    return max(1, min(n, n_jobs))


def cmd_run(config: ExperimentConfig) -> int:
    params = config.params()
    mix = load_workload(config.source, params, config.instances)
    pairs = config.runs()
    if not pairs:
        raise CliError("usage", "simd runs in baseline mode only; add --mode baseline", 2)
    config.out.mkdir(parents=True, exist_ok=True)
    jobs = [(mix, p, m, params, config.trace, config.seed) for p, m in pairs]
    workers = _threads(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    for (policy, mode), (rep, ev, disp, line) in zip(pairs, results):
        stem = config.out / f"{mix.name}_{policy}_{mode}"
        Path(f"{stem}.report").write_text(rep)
        Path(f"{stem}.events.csv").write_text(ev)
        Path(f"{stem}.dispatch.csv").write_text(disp)
        print(line)
    return 0


def cmd_compare(paths: Sequence[str], reference: str | None) -> int:
    if len(paths) < 2:
        raise CliError("usage", "compare needs at least two reports", 2)
    reports = {}
    for p in paths:
        try:
            reports[p] = SimulationReport.from_json(Path(p).read_text())
        except OSError as exc:
            raise CliError("io", f"cannot read {p}: {exc.strerror}") from None
    ref = reference or paths[0]
    if ref not in reports:
        raise CliError("usage", f"reference {ref} is not one of the compared reports", 2)
    rows = metrics.compare(reports, ref)
    width = max(len(r.label) for r in rows)
    print(f"{'report':<{width}}  throughput  mean-latency  energy   (normalized to {ref})")
    for r in rows:
        print(f"{r.label:<{width}}  {r.throughput_ratio:10.4f}  {r.mean_latency_ratio:12.4f}  {r.energy_ratio:6.4f}")
    return 0


def cmd_validate(path: str, overrides: dict[str, str]) -> int:
    params = HardwareParams().with_overrides(overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror}") from None
    mix = parse_workload(text, params.geometry)
    kernels = sum(len(a.kernels) for a in mix.applications)
    print(f"ok: {mix.name}: {len(mix.applications)} application(s), {kernels} kernel(s), "
          f"{mix.kernel_instances} kernel instance(s)")
    return 0


def cmd_preset(source: tuple[str, str], instances: int | None, out: str | None) -> int:
    params = HardwareParams()
    text = serialize_workload(load_workload(source, params, instances), params.geometry)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _add_source(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--mix", metavar="N", help="heterogeneous mix 1..14")
    g.add_argument("--preset", metavar="NAME", help="homogeneous workload of one application")
    g.add_argument("--spec", metavar="PATH", help="workload spec file")
    p.add_argument("--instances", type=int, default=None,
                   help="instances per application (default 4 for mixes, 6 for presets)")


def _source(args) -> tuple[str, str]:
    for kind in ("mix", "preset", "spec"):
        value = getattr(args, kind, None)
        if value is not None:
            return kind, value
    raise CliError("usage", "one of --mix, --preset, --spec is required", 2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Discrete-event simulator of a flash-integrated accelerator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate workloads and write reports and traces")
    _add_source(r)
    r.add_argument("--policy", default="intrao3", help="comma list of " + ", ".join(POLICIES) + ", or all")
    r.add_argument("--mode", default=FLASHABACUS, help="flashabacus, baseline, or both")
    r.add_argument("--out", default=".", help="output directory")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="hardware parameter override")
    r.add_argument("--trace", action="store_true", help="add flash-level events to the event trace")
    r.add_argument("--seed", type=int, default=0, help="recorded in reports for randomized workloads")

    c = sub.add_parser("compare", help="normalize reports against a reference")
    c.add_argument("reports", nargs="+")
    c.add_argument("--reference", default=None, help="report used as 1.0 (default: the first)")

    v = sub.add_parser("validate", help="check a workload spec file")
    v.add_argument("spec")
    v.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    d = sub.add_parser("preset", help="print a preset or mix as a workload spec file")
    g = d.add_mutually_exclusive_group(required=True)
    g.add_argument("--mix", metavar="N")
    g.add_argument("--preset", metavar="NAME")
    d.add_argument("--instances", type=int, default=None)
    d.add_argument("--out", default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "run":
            if args.instances is not None and args.instances < 1:
                raise CliError("usage", "--instances must be >= 1", 2)
            config = ExperimentConfig(_source(args), _parse_policies(args.policy), _parse_modes(args.mode),
                                      _parse_sets(args.set), Path(args.out), args.seed, args.trace,
                                      args.instances)
            return cmd_run(config)
        if args.command == "compare":
            return cmd_compare(args.reports, args.reference)
        if args.command == "validate":
            return cmd_validate(args.spec, _parse_sets(args.set))
        return cmd_preset(_source(args), args.instances, args.out)
    except CliError as exc:
        return _fail(exc.code, str(exc), exc.status)
    except WorkloadError as exc:
        return _fail(exc.code, str(exc))
    except ParameterError as exc:
        return _fail("parameter", str(exc))
    except MappingError as exc:
        return _fail(exc.code, str(exc))
    except SimulationError as exc:
        return _fail(exc.code, str(exc))
    except (ReportError, metrics.MetricsError) as exc:
        return _fail("report", str(exc))


def _fail(code: str, message: str, status: int = 1) -> int:
    text = " ".join(str(message).split())
    print(f"{PROG}: error: {code}: {text}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
