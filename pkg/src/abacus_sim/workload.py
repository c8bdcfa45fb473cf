"""Kernel / microblock / screen workload model, benchmark presets, and the workload spec format.

A workload spec file is TOML with a fixed set of tables (see ``docs/workload-format.md``)::

    [mix]
    name = "mx1"
    classification = "mixed"

    [app.0]
    name = "ATAX"
    instances = 4

    [app.0.kernel.0]
    text = 65536
    data = 56623104
    heap = 65536
    stack = 65536

    [app.0.kernel.0.microblock.0]
    serial = true
    screens = 1
    instructions = 4872848098
    ldst_ratio = 0.4561
    input_range = [0, 335544320]
    output_range = [671088640, 5242880]

Microblock ranges are split across its screens in whole page groups (earlier screens take the
remainder). Optional ``[...microblock.N.screen.M]`` tables override a single screen.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .hardware import KB, MB, BackboneGeometry

CLASSIFICATIONS = ("data-intensive", "compute-intensive", "mixed")

# B/KI at or above this counts as data-intensive.
DATA_INTENSIVE_BKI = Fraction(30)

DEFAULT_SCREENS = 6
DEFAULT_OUTPUT_FRACTION = Fraction(1, 64)
DEFAULT_SECTION = 64 * KB


class WorkloadError(ValueError):
    """Invalid workload; ``code`` is one of syntax, unknown-key, invariant, alignment, capacity, unknown-mix."""

    def __init__(self, code: str, message: str, location: str = "") -> None:
        self.code = code
        self.location = location
        text = f"{location}: {message}" if location else message
        super().__init__(text)


@dataclass(frozen=True)
class FlashRange:
    start: int
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length

    def overlaps(self, other: "FlashRange") -> bool:
        if not self.length or not other.length:
            return False
        return self.start < other.end and other.start < self.end

    def shifted(self, offset: int) -> "FlashRange":
        return FlashRange(self.start + offset, self.length)


EMPTY = FlashRange(0, 0)


@dataclass(frozen=True)
class ScreenSpec:
    screen_id: int
    compute_instructions: int
    ldst_ratio: float
    input_range: FlashRange = EMPTY
    output_range: FlashRange = EMPTY

    def __post_init__(self) -> None:
        if self.compute_instructions <= 0:
            raise WorkloadError("invariant", "compute_instructions must be > 0", f"screen.{self.screen_id}")
        if not 0.0 <= self.ldst_ratio <= 1.0:
            raise WorkloadError("invariant", "ldst_ratio must be in [0, 1]", f"screen.{self.screen_id}")
        for name in ("input_range", "output_range"):
            rng = getattr(self, name)
            if rng.start < 0 or rng.length < 0:
                raise WorkloadError("invariant", f"{name} must be non-negative", f"screen.{self.screen_id}")

    @property
    def io_bytes(self) -> int:
        return self.input_range.length + self.output_range.length


@dataclass(frozen=True)
class MicroblockSpec:
    microblock_id: int
    screens: tuple[ScreenSpec, ...]
    is_serial: bool = False

    def __post_init__(self) -> None:
        where = f"microblock.{self.microblock_id}"
        if not self.screens:
            raise WorkloadError("invariant", "a microblock needs at least one screen", where)
        if self.is_serial != (len(self.screens) == 1):
            raise WorkloadError("invariant", "a microblock is serial exactly when it holds one screen",
                                where + ".serial")
        if [s.screen_id for s in self.screens] != list(range(len(self.screens))):
            raise WorkloadError("invariant", "screen ids must be 0..n-1 in order", where)


@dataclass(frozen=True)
class SectionTable:
    text: int = DEFAULT_SECTION
    data: int = DEFAULT_SECTION
    heap: int = DEFAULT_SECTION
    stack: int = DEFAULT_SECTION

    def __post_init__(self) -> None:
        for name in ("text", "data", "heap", "stack"):
            if getattr(self, name) <= 0:
                raise WorkloadError("invariant", f"section {name} must be > 0", "sections")

    @property
    def descriptor_bytes(self) -> int:
        """Bytes downloaded over PCIe; the data section stays flash-mapped."""
        return self.text


@dataclass(frozen=True)
class KernelDescriptor:
    app_id: int
    kernel_id: int
    microblocks: tuple[MicroblockSpec, ...]
    sections: SectionTable = field(default_factory=SectionTable)

    def __post_init__(self) -> None:
        where = f"app.{self.app_id}.kernel.{self.kernel_id}"
        if not self.microblocks:
            raise WorkloadError("invariant", "a kernel needs at least one microblock", where)
        if [m.microblock_id for m in self.microblocks] != list(range(len(self.microblocks))):
            raise WorkloadError("invariant", "microblock ids must be 0..n-1 in order", where)
        if self.sections.data < self.max_footprint:
            raise WorkloadError("invariant",
                                f"data section ({self.sections.data} B) smaller than largest screen "
                                f"footprint ({self.max_footprint} B)", where + ".data")

    @property
    def screens(self) -> Iterable[ScreenSpec]:
        for mb in self.microblocks:
            yield from mb.screens

    @property
    def max_footprint(self) -> int:
        return max(s.io_bytes for s in self.screens)

    @property
    def total_instructions(self) -> int:
        return sum(s.compute_instructions for s in self.screens)

    @property
    def input_bytes(self) -> int:
        return sum(s.input_range.length for s in self.screens)

    @property
    def screen_count(self) -> int:
        return sum(len(m.screens) for m in self.microblocks)


@dataclass(frozen=True)
class ApplicationSpec:
    app_id: int
    kernels: tuple[KernelDescriptor, ...]
    instance_count: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        where = f"app.{self.app_id}"
        if self.instance_count < 1:
            raise WorkloadError("invariant", "instance_count must be >= 1", where + ".instances")
        if not self.kernels:
            raise WorkloadError("invariant", "an application needs at least one kernel", where)
        ids = [k.kernel_id for k in self.kernels]
        if len(set(ids)) != len(ids):
            raise WorkloadError("invariant", "kernel ids must be unique within an application", where)
        if any(k.app_id != self.app_id for k in self.kernels):
            raise WorkloadError("invariant", "kernel app_id does not match its application", where)

    @property
    def label(self) -> str:
        return self.name or f"app{self.app_id}"

    def output_span(self) -> int:
        """Distance between consecutive instances' output regions."""
        outs = [s.output_range for k in self.kernels for s in k.screens if s.output_range.length]
        if not outs:
            return 0
        return max(r.end for r in outs) - min(r.start for r in outs)

    def instance_output_offset(self, instance: int) -> int:
        return instance * self.output_span()


@dataclass(frozen=True)
class WorkloadMix:
    name: str
    applications: tuple[ApplicationSpec, ...]
    classification: str = "mixed"

    def __post_init__(self) -> None:
        if not self.applications:
            raise WorkloadError("invariant", "a mix needs at least one application", "mix")
        if self.classification not in CLASSIFICATIONS:
            raise WorkloadError("invariant", f"classification must be one of {', '.join(CLASSIFICATIONS)}",
                                "mix.classification")
        ids = [a.app_id for a in self.applications]
        if len(set(ids)) != len(ids):
            raise WorkloadError("invariant", "application ids must be unique", "mix")

    @property
    def kernel_instances(self) -> int:
        return sum(a.instance_count * len(a.kernels) for a in self.applications)


# --------------------------------------------------------------------------- validation

def validate_mix(mix: WorkloadMix, geometry: BackboneGeometry | None = None) -> WorkloadMix:
    """Check geometry-dependent invariants (alignment, capacity, disjoint outputs)."""
    geometry = geometry or BackboneGeometry()
    group = geometry.page_group_size
    for app in mix.applications:
        shift = app.instance_output_offset(app.instance_count - 1)
        for kernel in app.kernels:
            for mb in kernel.microblocks:
                for s in mb.screens:
                    where = (f"app.{app.app_id}.kernel.{kernel.kernel_id}."
                             f"microblock.{mb.microblock_id}.screen.{s.screen_id}")
                    for name, rng, extra in (("input_range", s.input_range, 0),
                                             ("output_range", s.output_range, shift)):
                        if rng.start % group or rng.length % group:
                            raise WorkloadError("alignment",
                                                f"{name} [{rng.start}, {rng.length}] is not aligned to "
                                                f"the {group} B page group", where)
                        if rng.length and rng.end + extra > geometry.capacity:
                            raise WorkloadError("capacity",
                                                f"{name} ends at {rng.end + extra} B, beyond the "
                                                f"{geometry.capacity} B backbone", where)
                outs = [s.output_range for s in mb.screens]
                for i, a in enumerate(outs):
                    for j in range(i):
                        if a.overlaps(outs[j]):
                            raise WorkloadError("invariant", f"screens {j} and {i} write overlapping ranges",
                                                f"app.{app.app_id}.kernel.{kernel.kernel_id}."
                                                f"microblock.{mb.microblock_id}")
    return mix


# --------------------------------------------------------------------------- presets

@dataclass(frozen=True)
class TableRow:
    name: str
    mblks: int
    serial_mblks: int
    input_mb: int
    ldst_pct: str
    bki: str


# Columns: MBLKs, Serial MBLK, Input (MB), LD/ST ratio (%), B/KI.
BENCHMARKS = {
    row.name: row for row in (
        TableRow("ATAX", 2, 1, 640, "45.61", "68.86"),
        TableRow("BICG", 2, 1, 640, "46", "72.3"),
        TableRow("2DCON", 1, 0, 640, "23.96", "35.59"),
        TableRow("MVT", 1, 0, 640, "45.1", "72.05"),
        TableRow("ADI", 3, 1, 1920, "23.96", "35.59"),
        TableRow("FDTD", 3, 1, 1920, "27.27", "38.52"),
        TableRow("GESUM", 1, 0, 640, "48.08", "72.13"),
        TableRow("SYRK", 1, 0, 1280, "28.21", "5.29"),
        TableRow("3MM", 3, 1, 2560, "33.68", "2.48"),
        TableRow("COVAR", 3, 1, 640, "34.33", "2.86"),
        TableRow("GEMM", 1, 0, 192, "30.77", "5.29"),
        TableRow("2MM", 2, 1, 2560, "33.33", "3.76"),
        TableRow("SYR2K", 1, 0, 1280, "30.19", "1.85"),
        TableRow("CORR", 4, 1, 640, "33.04", "2.79"),
    )
}

MIX_MEMBERS = {
    1: ("ATAX", "BICG", "2DCON", "MVT", "SYRK", "3MM"),
    2: ("ADI", "FDTD", "GESUM", "COVAR", "GEMM", "2MM"),
    3: ("MVT", "ADI", "GESUM", "SYRK", "3MM", "COVAR"),
    4: ("FDTD", "COVAR", "GEMM", "2MM", "SYR2K", "CORR"),
    5: ("ATAX", "2DCON", "GESUM", "SYRK", "COVAR", "GEMM"),
    6: ("BICG", "MVT", "ADI", "FDTD", "3MM", "2MM"),
    7: ("MVT", "ADI", "FDTD", "3MM", "2MM", "CORR"),
    8: ("GESUM", "SYRK", "COVAR", "GEMM", "2MM", "SYR2K"),
    9: ("BICG", "ADI", "SYRK", "GEMM", "2MM", "CORR"),
    10: ("ATAX", "2DCON", "MVT", "FDTD", "GESUM", "SYR2K"),
    11: ("ATAX", "MVT", "ADI", "FDTD", "GESUM", "SYR2K"),
    12: ("2DCON", "MVT", "ADI", "FDTD", "GESUM", "GEMM"),
    13: ("BICG", "2DCON", "MVT", "ADI", "GEMM", "2MM"),
    14: ("MVT", "ADI", "FDTD", "GESUM", "GEMM", "CORR"),
}

DATA_INTENSIVE_PRESETS = ("ATAX", "BICG", "2DCON", "MVT")


def _fraction(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value))


def even_split(total: int, parts: int) -> list[int]:
    """Split ``total`` units into ``parts`` near-equal shares, remainder to the front."""
    q, r = divmod(total, parts)
    return [q + 1] * r + [q] * (parts - r)


def total_instructions(input_bytes: int, bki: Any) -> Fraction:
    return Fraction(input_bytes) * 1000 / _fraction(bki)


def preset_from_table(name: str, input_mb: Any, bki: Any, ldst_pct: Any, mblks: int,
                      serial_mblks: int, screens_per_parallel_mblk: int = DEFAULT_SCREENS, *,
                      app_id: int = 0, instances: int = 1, base: int = 0,
                      output_fraction: Any = DEFAULT_OUTPUT_FRACTION,
                      geometry: BackboneGeometry | None = None) -> ApplicationSpec:
    """Build a single-kernel application from benchmark-table characteristics.

    Instructions come from ``input / B/KI * 1000``, split evenly over microblocks and then
    over the screens of each microblock, rounded up per screen. Input and output ranges
    are tiled contiguously from ``base`` in whole page groups; each instance gets its own
    output region right after the previous one.
    """
    geometry = geometry or BackboneGeometry()
    group = geometry.page_group_size
    input_mb = _fraction(input_mb)
    for label, value in (("input_mb", input_mb), ("bki", _fraction(bki)), ("mblks", mblks),
                         ("screens_per_parallel_mblk", screens_per_parallel_mblk)):
        if value <= 0:
            raise WorkloadError("invariant", f"{label} must be positive", name)
    if not 0 <= serial_mblks <= mblks:
        raise WorkloadError("invariant", "serial_mblks must be within [0, mblks]", name)
    ldst = float(_fraction(ldst_pct) / 100)
    input_bytes = input_mb * MB
    if input_bytes.denominator != 1 or int(input_bytes) % group:
        raise WorkloadError("alignment", f"input of {input_mb} MB is not a whole number of page groups", name)
    input_bytes = int(input_bytes)

    total = total_instructions(input_bytes, bki)
    per_mblk = total / mblks
    counts = [1 if i < serial_mblks else screens_per_parallel_mblk for i in range(mblks)]
    if per_mblk / max(counts) < 1:
        raise WorkloadError("invariant", "fewer than one instruction per screen", name)

    in_groups = input_bytes // group
    out_groups = int(math.ceil(in_groups * _fraction(output_fraction)))
    in_cursor = base
    out_cursor = base + input_bytes
    microblocks = []
    for m, (mb_in, mb_out) in enumerate(zip(even_split(in_groups, mblks), even_split(out_groups, mblks))):
        per_screen = math.ceil(per_mblk / counts[m])
        screens = []
        for s, (sin, sout) in enumerate(zip(even_split(mb_in, counts[m]), even_split(mb_out, counts[m]))):
            screens.append(ScreenSpec(s, per_screen, ldst,
                                      FlashRange(in_cursor, sin * group), FlashRange(out_cursor, sout * group)))
            in_cursor += sin * group
            out_cursor += sout * group
        microblocks.append(MicroblockSpec(m, tuple(screens), is_serial=counts[m] == 1))
    footprint = max(s.io_bytes for mb in microblocks for s in mb.screens)
    kernel = KernelDescriptor(app_id, 0, tuple(microblocks),
                              SectionTable(data=max(footprint, group)))
    return ApplicationSpec(app_id, (kernel,), instances, name)


def preset_application(name: str, *, app_id: int = 0, instances: int = 1, base: int = 0,
                       screens: int = DEFAULT_SCREENS, geometry: BackboneGeometry | None = None,
                       output_fraction: Any = DEFAULT_OUTPUT_FRACTION) -> ApplicationSpec:
    row = _row(name)
    return preset_from_table(row.name, row.input_mb, row.bki, row.ldst_pct, row.mblks, row.serial_mblks,
                             screens, app_id=app_id, instances=instances, base=base,
                             output_fraction=output_fraction, geometry=geometry)


def app_footprint(app: ApplicationSpec) -> int:
    ranges = [r for k in app.kernels for s in k.screens for r in (s.input_range, s.output_range) if r.length]
    if not ranges:
        return 0
    return max(r.end for r in ranges) + app.instance_output_offset(app.instance_count - 1)


def classify(names: Sequence[str]) -> str:
    kinds = {"data-intensive" if _fraction(_row(n).bki) >= DATA_INTENSIVE_BKI else "compute-intensive"
             for n in names}
    return kinds.pop() if len(kinds) == 1 else "mixed"


def preset_mix(name: str, instances: int = 6, screens: int = DEFAULT_SCREENS,
               geometry: BackboneGeometry | None = None) -> WorkloadMix:
    """Homogeneous workload: one benchmark application with ``instances`` copies."""
    row = _row(name)
    app = preset_application(row.name, instances=instances, screens=screens, geometry=geometry)
    return validate_mix(WorkloadMix(row.name.lower(), (app,), classify([row.name])), geometry)


def build_mix(mix_id: int, instance_per_kernel: int = 4, screens: int = DEFAULT_SCREENS,
              geometry: BackboneGeometry | None = None) -> WorkloadMix:
    """Heterogeneous mix MX1..MX14; application ids follow benchmark row order."""
    if mix_id not in MIX_MEMBERS:
        raise WorkloadError("unknown-mix", f"unknown mix id {mix_id} (expected 1..14)", "mix")
    names = MIX_MEMBERS[mix_id]
    apps = []
    base = 0
    for app_id, name in enumerate(names):
        app = preset_application(name, app_id=app_id, instances=instance_per_kernel, base=base,
                                 screens=screens, geometry=geometry)
        apps.append(app)
        base = app_footprint(app)
    return validate_mix(WorkloadMix(f"mx{mix_id}", tuple(apps), classify(names)), geometry)


def _row(name: str) -> TableRow:
    key = name.upper()
    if key not in BENCHMARKS:
        raise WorkloadError("unknown-mix", f"unknown preset {name!r}", "preset")
    return BENCHMARKS[key]


# --------------------------------------------------------------------------- spec-file format

_MIX_KEYS = {"name", "classification"}
_APP_KEYS = {"name", "instances", "kernel"}
_KERNEL_KEYS = {"text", "data", "heap", "stack", "microblock"}
_MBLK_KEYS = {"serial", "screens", "instructions", "ldst_ratio", "input_range", "output_range", "screen"}
_SCREEN_KEYS = {"instructions", "ldst_ratio", "input_range", "output_range"}
_POSITION = re.compile(r"line (\d+), column (\d+)")


def parse_workload(spec_text: str, geometry: BackboneGeometry | None = None) -> WorkloadMix:
    """Parse and validate a workload spec document."""
    geometry = geometry or BackboneGeometry()
    try:
        doc = tomllib.loads(spec_text)
    except tomllib.TOMLDecodeError as exc:
        m = _POSITION.search(str(exc))
        where = f"line {m.group(1)}, column {m.group(2)}" if m else ""
        raise WorkloadError("syntax", str(exc), where) from None
    _reject_unknown(doc, {"mix", "app"}, "")
    mix_doc = _table(doc.get("mix", {}), "mix")
    _reject_unknown(mix_doc, _MIX_KEYS, "mix")
    apps_doc = _table(doc.get("app", {}), "app")
    if not apps_doc:
        raise WorkloadError("invariant", "no [app.<id>] tables", "app")
    apps = [_parse_app(_int_id(key, "app"), _table(body, f"app.{key}"), geometry)
            for key, body in sorted(apps_doc.items(), key=lambda kv: _int_id(kv[0], "app"))]
    mix = WorkloadMix(_get(mix_doc, "name", str, "mix", "workload"), tuple(apps),
                      _get(mix_doc, "classification", str, "mix", "mixed"))
    return validate_mix(mix, geometry)


def _parse_app(app_id: int, body: dict, geometry: BackboneGeometry) -> ApplicationSpec:
    where = f"app.{app_id}"
    _reject_unknown(body, _APP_KEYS, where)
    kernels_doc = _table(body.get("kernel", {}), where + ".kernel")
    if not kernels_doc:
        raise WorkloadError("invariant", "application has no kernels", where)
    kernels = [_parse_kernel(app_id, _int_id(k, where + ".kernel"), _table(v, f"{where}.kernel.{k}"), geometry)
               for k, v in sorted(kernels_doc.items(), key=lambda kv: _int_id(kv[0], where + ".kernel"))]
    return ApplicationSpec(app_id, tuple(kernels), _get(body, "instances", int, where, 1),
                           _get(body, "name", str, where, ""))


def _parse_kernel(app_id: int, kernel_id: int, body: dict, geometry: BackboneGeometry) -> KernelDescriptor:
    where = f"app.{app_id}.kernel.{kernel_id}"
    _reject_unknown(body, _KERNEL_KEYS, where)
    mblks_doc = _table(body.get("microblock", {}), where + ".microblock")
    if not mblks_doc:
        raise WorkloadError("invariant", "kernel has no microblocks", where)
    ids = sorted(_int_id(k, where + ".microblock") for k in mblks_doc)
    if ids != list(range(len(ids))):
        raise WorkloadError("invariant", "microblock ids must be 0..n-1", where)
    microblocks = tuple(_parse_microblock(i, _table(mblks_doc[_key_for(mblks_doc, i)], f"{where}.microblock.{i}"),
                                          f"{where}.microblock.{i}", geometry) for i in ids)
    group = geometry.page_group_size
    footprint = max(s.io_bytes for mb in microblocks for s in mb.screens)
    sections = SectionTable(
        text=_get(body, "text", int, where, DEFAULT_SECTION),
        data=_get(body, "data", int, where, max(footprint, group)),
        heap=_get(body, "heap", int, where, DEFAULT_SECTION),
        stack=_get(body, "stack", int, where, DEFAULT_SECTION),
    )
    try:
        return KernelDescriptor(app_id, kernel_id, microblocks, sections)
    except WorkloadError as exc:
        raise WorkloadError(exc.code, str(exc).split(": ", 1)[-1], exc.location or where) from None


def _parse_microblock(mb_id: int, body: dict, where: str, geometry: BackboneGeometry) -> MicroblockSpec:
    _reject_unknown(body, _MBLK_KEYS, where)
    count = _get(body, "screens", int, where, 1)
    if count < 1:
        raise WorkloadError("invariant", "screens must be >= 1", where + ".screens")
    serial = _get(body, "serial", bool, where, count == 1)
    overrides = _table(body.get("screen", {}), where + ".screen")
    for key in overrides:
        idx = _int_id(key, where + ".screen")
        if idx >= count:
            raise WorkloadError("invariant", f"screen {idx} exceeds screens = {count}", f"{where}.screen.{key}")
    group = geometry.page_group_size
    in_parts = _split_range(_get_range(body, "input_range", where), count, group, where + ".input_range")
    out_parts = _split_range(_get_range(body, "output_range", where), count, group, where + ".output_range")
    screens = []
    for s in range(count):
        sw = f"{where}.screen.{s}"
        ov = _table(overrides[_key_for(overrides, s)], sw) if _key_for(overrides, s) is not None else {}
        _reject_unknown(ov, _SCREEN_KEYS, sw)
        instr = _get(ov, "instructions", int, sw, None)
        if instr is None:
            instr = _get(body, "instructions", int, where, None)
        if instr is None:
            raise WorkloadError("invariant", "missing instructions", sw)
        ldst = _get(ov, "ldst_ratio", float, sw, None)
        if ldst is None:
            ldst = _get(body, "ldst_ratio", float, where, 0.0)
        in_rng = _get_range(ov, "input_range", sw) if "input_range" in ov else in_parts[s]
        out_rng = _get_range(ov, "output_range", sw) if "output_range" in ov else out_parts[s]
        try:
            screens.append(ScreenSpec(s, instr, ldst, in_rng, out_rng))
        except WorkloadError as exc:
            raise WorkloadError(exc.code, str(exc).split(": ", 1)[-1], sw) from None
    try:
        return MicroblockSpec(mb_id, tuple(screens), serial)
    except WorkloadError as exc:
        raise WorkloadError(exc.code, str(exc).split(": ", 1)[-1], where) from None


def _split_range(rng: FlashRange, parts: int, group: int, where: str) -> list[FlashRange]:
    if rng.start % group or rng.length % group:
        raise WorkloadError("alignment", f"[{rng.start}, {rng.length}] is not aligned to the {group} B page group",
                            where)
    out = []
    cursor = rng.start
    for n in even_split(rng.length // group, parts):
        out.append(FlashRange(cursor, n * group))
        cursor += n * group
    return out


def _key_for(table: dict, idx: int) -> str | None:
    for key in table:
        if key.isdigit() and int(key) == idx:
            return key
    return None


def _reject_unknown(table: dict, allowed: set[str], where: str) -> None:
    for key in table:
        if key not in allowed:
            loc = f"{where}.{key}" if where else key
            raise WorkloadError("unknown-key", f"unknown key {key!r}", loc)


def _table(value: Any, where: str) -> dict:
    if not isinstance(value, dict):
        raise WorkloadError("invariant", "expected a table", where)
    return value


def _int_id(key: str, where: str) -> int:
    if not key.isdigit():
        raise WorkloadError("invariant", f"id {key!r} must be a non-negative integer", f"{where}.{key}")
    return int(key)


def _get(table: dict, key: str, kind: type, where: str, default: Any) -> Any:
    if key not in table:
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise WorkloadError("invariant", f"expected {kind.__name__}, got {value!r}", f"{where}.{key}")
    return value


def _get_range(table: dict, key: str, where: str) -> FlashRange:
    if key not in table:
        return EMPTY
    value = table[key]
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise WorkloadError("invariant", "expected [start, length] in bytes", f"{where}.{key}")
    if value[0] < 0 or value[1] < 0:
        raise WorkloadError("invariant", "range values must be non-negative", f"{where}.{key}")
    return FlashRange(value[0], value[1])


def serialize_workload(mix: WorkloadMix, geometry: BackboneGeometry | None = None) -> str:
    """Render a mix in the spec-file format; ``parse_workload`` inverts it."""
    geometry = geometry or BackboneGeometry()
    group = geometry.page_group_size
    lines = ["[mix]", f"name = {_quote(mix.name)}", f"classification = {_quote(mix.classification)}", ""]
    for app in mix.applications:
        lines += [f"[app.{app.app_id}]"]
        if app.name:
            lines.append(f"name = {_quote(app.name)}")
        lines += [f"instances = {app.instance_count}", ""]
        for k in app.kernels:
            kp = f"app.{app.app_id}.kernel.{k.kernel_id}"
            sec = k.sections
            lines += [f"[{kp}]", f"text = {sec.text}", f"data = {sec.data}", f"heap = {sec.heap}",
                      f"stack = {sec.stack}", ""]
            for mb in k.microblocks:
                lines += _serialize_microblock(f"{kp}.microblock.{mb.microblock_id}", mb, group)
    return "\n".join(lines)


def _serialize_microblock(path: str, mb: MicroblockSpec, group: int) -> list[str]:
    first = mb.screens[0]
    n = len(mb.screens)
    in_union = _union(s.input_range for s in mb.screens)
    out_union = _union(s.output_range for s in mb.screens)
    lines = [f"[{path}]", f"serial = {'true' if mb.is_serial else 'false'}", f"screens = {n}",
             f"instructions = {first.compute_instructions}", f"ldst_ratio = {first.ldst_ratio!r}"]
    compact_in = _compact_ok(in_union, [s.input_range for s in mb.screens], group)
    compact_out = _compact_ok(out_union, [s.output_range for s in mb.screens], group)
    if compact_in:
        lines.append(f"input_range = [{in_union.start}, {in_union.length}]")
    if compact_out:
        lines.append(f"output_range = [{out_union.start}, {out_union.length}]")
    lines.append("")
    for s in mb.screens:
        body = []
        if s.compute_instructions != first.compute_instructions:
            body.append(f"instructions = {s.compute_instructions}")
        if s.ldst_ratio != first.ldst_ratio:
            body.append(f"ldst_ratio = {s.ldst_ratio!r}")
        if not compact_in:
            body.append(f"input_range = [{s.input_range.start}, {s.input_range.length}]")
        if not compact_out:
            body.append(f"output_range = [{s.output_range.start}, {s.output_range.length}]")
        if body:
            lines += [f"[{path}.screen.{s.screen_id}]", *body, ""]
    return lines


def _union(ranges: Iterable[FlashRange]) -> FlashRange:
    nonempty = [r for r in ranges if r.length]
    if not nonempty:
        return EMPTY
    start = min(r.start for r in nonempty)
    return FlashRange(start, max(r.end for r in nonempty) - start)


def _compact_ok(union: FlashRange, ranges: list[FlashRange], group: int) -> bool:
    if union.start % group or union.length % group:
        return False
    try:
        return _split_range(union, len(ranges), group, "") == [
            r if r.length else FlashRange(r.start, 0) for r in ranges]
    except WorkloadError:
        return False


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'
