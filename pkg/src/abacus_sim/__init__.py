"""Discrete-event simulator of a flash-integrated accelerator with self-governed multi-kernel scheduling."""

from .hardware import BackboneGeometry, HardwareParams, ParameterError
from .simcore import BASELINE, FLASHABACUS, SimulationError, run
from .workload import WorkloadError, WorkloadMix, build_mix, parse_workload, preset_mix, serialize_workload

__version__ = "0.1.0"

__all__ = [
    "BASELINE", "FLASHABACUS", "BackboneGeometry", "HardwareParams", "ParameterError", "SimulationError",
    "WorkloadError", "WorkloadMix", "build_mix", "parse_workload", "preset_mix", "run", "serialize_workload",
]
