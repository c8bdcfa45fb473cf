"""Hardware parameter sets: flash backbone geometry and the accelerator/host platform.

All times are nanoseconds (float), sizes are bytes, bandwidths are bytes per second.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, field
from typing import Any

KB = 1024
MB = 1024 * KB
GB = 1024 * MB

US = 1_000.0
MS = 1_000_000.0
SEC = 1_000_000_000.0


class ParameterError(ValueError):
    """A hardware parameter is missing, mistyped, or violates an invariant."""


@dataclass(frozen=True)
class BackboneGeometry:
    channels: int = 4
    packages_per_channel: int = 4
    dies_per_package: int = 2
    planes_per_die: int = 2
    page_size: int = 8 * KB
    capacity: int = 32 * GB
    groups_per_block: int = 256
    overprovision: float = 0.07
    read_latency: float = 81 * US
    write_latency: float = 2.6 * MS
    erase_latency: float = 3 * MS
    word_size: int = 4
    table_entry_size: int = 4

    def __post_init__(self) -> None:
        for name in ("channels", "packages_per_channel", "dies_per_package", "planes_per_die",
                     "page_size", "capacity", "groups_per_block", "word_size", "table_entry_size"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"geometry.{name} must be positive")
        if self.capacity % self.page_group_size:
            raise ParameterError("geometry.capacity must be a multiple of the page-group size")
        if self.logical_groups % self.groups_per_block:
            raise ParameterError("geometry.capacity must hold a whole number of blocks")
        if self.capacity % (self.channels * self.packages_per_channel * self.dies_per_package):
            raise ParameterError("geometry.capacity must divide evenly across dies")
        if not 0 <= self.overprovision < 1:
            raise ParameterError("geometry.overprovision must be in [0, 1)")
        for name in ("read_latency", "write_latency", "erase_latency"):
            if getattr(self, name) < 0:
                raise ParameterError(f"geometry.{name} must be non-negative")

    @property
    def page_group_size(self) -> int:
        return self.channels * self.planes_per_die * self.page_size

    @property
    def die_capacity(self) -> int:
        return self.capacity // (self.channels * self.packages_per_channel * self.dies_per_package)

    @property
    def pages_per_package(self) -> int:
        return self.capacity // (self.channels * self.packages_per_channel) // self.page_size

    @property
    def logical_groups(self) -> int:
        return self.capacity // self.page_group_size

    @property
    def logical_blocks(self) -> int:
        return self.logical_groups // self.groups_per_block

    @property
    def op_blocks(self) -> int:
        """Spare blocks beyond logical capacity, not counting the GC reserve block."""
        if self.overprovision == 0:
            return 0
        return max(1, math.ceil(self.logical_blocks * self.overprovision))

    @property
    def physical_blocks(self) -> int:
        return self.logical_blocks + self.op_blocks + 1

    @property
    def physical_groups(self) -> int:
        return self.physical_blocks * self.groups_per_block

    @property
    def table_bytes(self) -> int:
        return self.logical_groups * self.table_entry_size

    @property
    def ways(self) -> int:
        # A page group stripes every channel, so package/die interleaving is the only parallelism left.
        return self.packages_per_channel * self.dies_per_package

    def fingerprint(self) -> int:
        """32-bit hash used to tag mapping-table snapshots."""
        text = repr(dataclasses.astuple(self)).encode()
        return zlib.crc32(text) & 0xFFFFFFFF


@dataclass(frozen=True)
class HardwareParams:
    lwp_count: int = 8
    lwp_freq: float = 1e9
    ipc: float = 4.0
    l1_size: int = 64 * KB
    l2_size: int = 512 * KB
    scratchpad_size: int = 4 * MB
    scratchpad_freq: float = 500e6
    ddr3l_size: int = 1 * GB
    ddr3l_bw: float = 6.4e9
    ddr_bytes_per_ldst: float = 0.125
    write_buffer: int = 64 * MB
    geometry: BackboneGeometry = field(default_factory=BackboneGeometry)
    srio_bw: float = 4 * 5e9 / 8
    pcie_bw: float = 1e9
    tier1_bw: float = 16e9
    tier2_bw: float = 5.2e9
    # offload control protocol
    control_latency: float = 1 * US
    dispatch_overhead: float = 5 * US
    # storengine
    journal_period: float = 100 * MS
    gc_background_free_blocks: int = 16
    # baseline host datapath
    ssd_read_bw: float = 2e9
    ssd_write_bw: float = 1e9
    ssd_request_latency: float = 20 * US
    host_request_bytes: int = 128 * KB
    host_stack_latency: float = 440 * US
    host_copy_bw: float = 4e9
    host_copies: int = 2
    baseline_overlap: bool = False
    # powers (W)
    lwp_power: float = 0.8
    ddr3l_power: float = 0.7
    ssd_power: float = 11.0
    pcie_power: float = 0.17
    host_cpu_power: float = 85.0
    host_dram_power: float = 5.0
    idle_fraction: float = 0.1
    count_host_idle: bool = False

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or f.name == "geometry":
                continue
            if f.name in ("control_latency", "dispatch_overhead", "ssd_request_latency",
                          "host_stack_latency", "ddr_bytes_per_ldst", "write_buffer",
                          "gc_background_free_blocks", "idle_fraction") or f.name.endswith("_power"):
                if value < 0:
                    raise ParameterError(f"{f.name} must be non-negative")
            elif value <= 0:
                raise ParameterError(f"{f.name} must be positive")
        if self.lwp_count < 3:
            raise ParameterError("lwp_count must leave at least one worker beside Flashvisor and Storengine")
        if self.idle_fraction > 1:
            raise ParameterError("idle_fraction must be in [0, 1]")

    @property
    def flashvisor_lwp(self) -> int:
        return 0

    @property
    def storengine_lwp(self) -> int:
        return 1

    @property
    def workers(self) -> list[int]:
        return list(range(2, self.lwp_count))

    @property
    def instr_per_ns(self) -> float:
        return self.ipc * self.lwp_freq / 1e9

    @property
    def flash_link_bw(self) -> float:
        return min(self.srio_bw, self.tier2_bw)

    @property
    def scratchpad_access(self) -> float:
        return 1e9 / self.scratchpad_freq

    def compute_time(self, instructions: float) -> float:
        return instructions / self.instr_per_ns

    def with_overrides(self, overrides: dict[str, Any]) -> "HardwareParams":
        """Return a copy with ``name=value`` overrides; ``geometry.x`` keys reach the backbone."""
        top: dict[str, Any] = {}
        geo: dict[str, Any] = {}
        geo_fields = {f.name: f for f in dataclasses.fields(BackboneGeometry)}
        own_fields = {f.name: f for f in dataclasses.fields(self)}
        for key, raw in overrides.items():
            if key.startswith("geometry."):
                name = key.split(".", 1)[1]
                if name not in geo_fields:
                    raise ParameterError(f"unknown parameter {key!r}")
                geo[name] = _coerce(key, raw, type(getattr(self.geometry, name)))
            else:
                if key not in own_fields or key == "geometry":
                    raise ParameterError(f"unknown parameter {key!r}")
                top[key] = _coerce(key, raw, type(getattr(self, key)))
        if geo:
            top["geometry"] = dataclasses.replace(self.geometry, **geo)
        return dataclasses.replace(self, **top)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "HardwareParams":
        """Inverse of ``as_dict``; non-finite floats may arrive as their repr strings."""
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in doc.items():
            if key not in names:
                raise ParameterError(f"unknown parameter {key!r}")
            if key == "geometry":
                value = BackboneGeometry(**value) if isinstance(value, dict) else value
            elif isinstance(value, str):
                value = _coerce(key, value, type(getattr(cls(), key)))
            kwargs[key] = value
        return cls(**kwargs)


def _coerce(key: str, raw: Any, kind: type) -> Any:
    if not isinstance(raw, str):
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, kind):
            return raw
        raise ParameterError(f"{key} expects {kind.__name__}, got {type(raw).__name__}")
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text, 0)
        if kind is float:
            return float(text)
    except ValueError:
        raise ParameterError(f"{key} expects {kind.__name__}, got {raw!r}") from None
    raise ParameterError(f"{key} cannot be overridden from text")
