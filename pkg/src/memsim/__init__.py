"""Cycle-level model of a multiport GPU memory hierarchy."""

from .config import (
    ArbitrationPolicy,
    CacheLevelConfig,
    HierarchyConfig,
    MemoryConfig,
    Policy,
    TopologyConfig,
    ValidatedConfig,
    derive_output_ports,
    load_config,
    validate,
    with_override,
)
from .engine import SimStats, Simulation, run, sweep
from .workloads import WorkloadSpec, builtin_suite, generate, get_workload

__all__ = [
    "ArbitrationPolicy", "CacheLevelConfig", "HierarchyConfig", "MemoryConfig", "Policy",
    "TopologyConfig", "ValidatedConfig", "derive_output_ports", "load_config", "validate",
    "with_override", "SimStats", "Simulation", "run", "sweep", "WorkloadSpec", "builtin_suite",
    "generate", "get_workload",
]
