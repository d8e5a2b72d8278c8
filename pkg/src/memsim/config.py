"""Simulation configuration: topology, cache geometry, port derivation.

Port counts are derived top-down from the core side. Every cache level gets
one bank per incoming request port, and its memory-side port count is capped
by the number of HBM channels::

    L1D inputs  = cores_per_socket
    L1 outputs  = max(L1I out, L1D out)          (ICache/DCache share ports)
    L2 inputs   = sockets_per_cluster * L1 outputs
    L3 inputs   = num_clusters * L2 outputs      (when enabled)
    out(level)  = min(inputs(level), num_channels)

A boundary whose input and output counts are equal is wired one-to-one; a
boundary with more inputs than outputs needs an arbiter.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import (
    ConfigError,
    GeometryError,
    GroupIndivisible,
    MissingField,
    NonPowerOfTwo,
    ParseError,
    PortMismatch,
    ZeroField,
)

VALID_CHANNEL_COUNTS = (1, 2, 4, 8, 16)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class Policy(str, enum.Enum):
    DIRECT = "direct"
    CROSSBAR = "crossbar"
    SOURCE_RR = "source_rr"
    DISTRIBUTED_RR = "distributed_rr"

    @classmethod
    def parse(cls, value: str) -> "Policy":
        key = str(value).strip().lower().replace("-", "_")
        if key in _POLICY_ALIASES:
            return _POLICY_ALIASES[key]
        return cls(key)


_POLICY_ALIASES = {
    "a": Policy.CROSSBAR,
    "arb_a": Policy.CROSSBAR,
    "b": Policy.SOURCE_RR,
    "arb_b": Policy.SOURCE_RR,
    "c": Policy.DISTRIBUTED_RR,
    "arb_c": Policy.DISTRIBUTED_RR,
}


@dataclass(frozen=True)
class TopologyConfig:
    num_clusters: int = 2
    sockets_per_cluster: int = 1
    cores_per_socket: int = 4
    warps_per_core: int = 4
    threads_per_warp: int = 4

    @property
    def num_sockets(self) -> int:
        return self.num_clusters * self.sockets_per_cluster

    @property
    def total_cores(self) -> int:
        return self.num_sockets * self.cores_per_socket

    @property
    def total_warps(self) -> int:
        return self.total_cores * self.warps_per_core


@dataclass(frozen=True)
class CacheLevelConfig:
    enabled: bool = True
    capacity_bytes: int = 16 * 1024
    ways: int = 4
    line_size: int = 64
    mshr_per_bank: int = 4
    hit_latency: int = 2
    input_queue_depth: int = 4
    miss_queue_depth: int = 8
    # Derived by validate(); may be given explicitly but must then agree.
    num_banks: Optional[int] = None
    input_ports: Optional[int] = None
    output_ports: Optional[int] = None

    @property
    def num_sets(self) -> int:
        return self.capacity_bytes // (self.ways * self.line_size * self.num_banks)


@dataclass(frozen=True)
class MemoryConfig:
    num_channels: int = 8
    channel_latency: int = 100
    requests_per_channel_per_cycle: int = 1
    channel_queue_depth: int = 16


@dataclass(frozen=True)
class ArbitrationPolicy:
    variant: Policy = Policy.CROSSBAR
    # Source round-robin only: serve the pointed-to group even when it is idle.
    strict_time_slice: bool = False


@dataclass(frozen=True)
class CoreConfig:
    # One ICache line fetch per this many retired instructions; 0 disables.
    icache_fetch_interval: int = 16
    code_bytes: int = 4096
    code_base: int = 0x4000_0000
    # Each warp becomes ready at a cycle drawn uniformly from
    # [0, launch_jitter) with the config seed; 0 launches every warp at once.
    launch_jitter: int = 32


def _default_l1i():
    return CacheLevelConfig(capacity_bytes=16 * 1024, ways=2, hit_latency=2, input_ports=1)


def _default_l1d():
    return CacheLevelConfig(capacity_bytes=16 * 1024, ways=4, hit_latency=2)


def _default_l2():
    return CacheLevelConfig(capacity_bytes=128 * 1024, ways=8, hit_latency=10)


def _default_l3():
    return CacheLevelConfig(enabled=False, capacity_bytes=512 * 1024, ways=16, hit_latency=20)


@dataclass(frozen=True)
class HierarchyConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    l1_icache: CacheLevelConfig = field(default_factory=_default_l1i)
    l1_dcache: CacheLevelConfig = field(default_factory=_default_l1d)
    l2: CacheLevelConfig = field(default_factory=_default_l2)
    l3: CacheLevelConfig = field(default_factory=_default_l3)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    arbitration: ArbitrationPolicy = field(default_factory=ArbitrationPolicy)
    core: CoreConfig = field(default_factory=CoreConfig)
    seed: int = 0

    @property
    def line_size(self) -> int:
        return self.l1_dcache.line_size

    @property
    def l1_output_ports(self) -> int:
        return max(self.l1_icache.output_ports, self.l1_dcache.output_ports)


@dataclass(frozen=True)
class ValidatedConfig(HierarchyConfig):
    """A HierarchyConfig whose derived port fields are filled in and checked."""


@dataclass(frozen=True)
class Boundary:
    """One port boundary: ``num_inputs`` bank queues feeding ``num_outputs`` ports."""

    name: str
    num_inputs: int
    num_outputs: int
    num_groups: int
    direct: bool


def derive_output_ports(input_ports: int, downstream_ports: int) -> tuple[int, bool]:
    """Return ``(output_ports, direct_mapped)`` for one cache level."""
    if input_ports < 1 or downstream_ports < 1:
        raise ZeroField("port counts must be >= 1")
    out = min(input_ports, downstream_ports)
    return out, out == input_ports


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def _check_positive(section: str, obj) -> None:
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, bool) or value is None or not isinstance(value, int):
            continue
        if f.name in ("code_base", "icache_fetch_interval", "launch_jitter"):
            if value < 0:
                raise ZeroField(f"{section}.{f.name} must be >= 0")
            continue
        if value < 1:
            raise ZeroField(f"{section}.{f.name} must be >= 1, got {value}")


def _derive_level(name: str, level: CacheLevelConfig, inputs: int, channels: int,
                  line_size: int) -> CacheLevelConfig:
    _check_positive(name, level)
    if level.line_size != line_size:
        raise GeometryError(f"{name}.line_size {level.line_size} differs from L1D line size {line_size}")
    if level.input_ports is not None and level.input_ports != inputs:
        raise PortMismatch(f"{name}.input_ports={level.input_ports} but {inputs} requests arrive")
    if level.num_banks is not None and level.num_banks != inputs:
        raise PortMismatch(f"{name}.num_banks={level.num_banks} must equal input ports {inputs}")
    out, _ = derive_output_ports(inputs, channels)
    if level.output_ports is not None and level.output_ports != out:
        raise PortMismatch(f"{name}.output_ports={level.output_ports}, derived {out}")
    per_set = level.ways * level.line_size * inputs
    if level.capacity_bytes % per_set or level.capacity_bytes < per_set:
        raise GeometryError(
            f"{name}.capacity_bytes={level.capacity_bytes} not divisible into "
            f"{inputs} banks x {level.ways} ways x {level.line_size} B")
    return dataclasses.replace(level, num_banks=inputs, input_ports=inputs, output_ports=out)


def validate(config: HierarchyConfig) -> ValidatedConfig:
    """Fill in derived port counts and reject inconsistent configurations.

    Idempotent: validating an already validated config returns an equal one.
    """
    topo = config.topology
    _check_positive("topology", topo)
    mem = config.memory
    _check_positive("memory", mem)
    _check_positive("core", config.core)
    if mem.num_channels not in VALID_CHANNEL_COUNTS:
        raise NonPowerOfTwo(f"memory.num_channels must be one of {VALID_CHANNEL_COUNTS}, got {mem.num_channels}")
    line = config.l1_dcache.line_size
    if not is_power_of_two(line):
        raise NonPowerOfTwo(f"line_size must be a power of two, got {line}")
    channels = mem.num_channels

    icache_in = config.l1_icache.input_ports if config.l1_icache.input_ports is not None else 1
    l1i = _derive_level("l1i", config.l1_icache, icache_in, channels, line)
    l1d = _derive_level("l1d", config.l1_dcache, topo.cores_per_socket, channels, line)
    for name, lvl in (("l1i", l1i), ("l1d", l1d)):
        if not is_power_of_two(lvl.output_ports):
            raise NonPowerOfTwo(f"{name} output ports must be a power of two, got {lvl.output_ports}")
    if not l1i.enabled or not l1d.enabled or not config.l2.enabled:
        raise ConfigError("L1 and L2 caches cannot be disabled")
    l1_out = max(l1i.output_ports, l1d.output_ports)
    l2 = _derive_level("l2", config.l2, topo.sockets_per_cluster * l1_out, channels, line)
    if config.l3.enabled:
        l3 = _derive_level("l3", config.l3, topo.num_clusters * l2.output_ports, channels, line)
    else:
        l3 = dataclasses.replace(config.l3, num_banks=None, input_ports=None, output_ports=None)

    validated = ValidatedConfig(
        topology=topo, l1_icache=l1i, l1_dcache=l1d, l2=l2, l3=l3, memory=mem,
        arbitration=config.arbitration, core=config.core, seed=config.seed,
    )
    for b in boundaries(validated):
        _check_boundary(b, validated.arbitration.variant)
    return validated


def _check_boundary(b: Boundary, policy: Policy) -> None:
    if policy is Policy.DIRECT and not b.direct:
        raise PortMismatch(f"direct policy at {b.name}: {b.num_inputs} inputs vs {b.num_outputs} outputs")
    if policy is Policy.SOURCE_RR and b.num_inputs % b.num_outputs:
        raise GroupIndivisible(
            f"source round-robin at {b.name}: {b.num_inputs} inputs not divisible into groups of {b.num_outputs}")
    if policy is Policy.DISTRIBUTED_RR:
        if b.num_outputs % b.num_groups or b.num_inputs % b.num_groups:
            raise GroupIndivisible(
                f"distributed round-robin at {b.name}: {b.num_outputs} outputs / "
                f"{b.num_inputs} inputs not divisible by {b.num_groups} source groups")


def boundaries(config: ValidatedConfig) -> list[Boundary]:
    """Enumerate every arbitrated-or-direct port boundary, top to bottom."""
    topo = config.topology
    out = []
    for name, lvl, groups in (("l1i", config.l1_icache, 1), ("l1d", config.l1_dcache, 1),
                              ("l2", config.l2, topo.sockets_per_cluster)):
        out.append(Boundary(name, lvl.num_banks, lvl.output_ports, groups,
                            lvl.num_banks == lvl.output_ports))
    if config.l3.enabled:
        l3 = config.l3
        out.append(Boundary("l3", l3.num_banks, l3.output_ports, topo.num_clusters,
                            l3.num_banks == l3.output_ports))
        mem_in, groups = l3.output_ports, 1
    else:
        mem_in, groups = topo.num_clusters * config.l2.output_ports, topo.num_clusters
    mem_out, _ = derive_output_ports(mem_in, config.memory.num_channels)
    out.append(Boundary("mem", mem_in, mem_out, groups, mem_in == mem_out))
    return out


# --------------------------------------------------------------------------
# file format
# --------------------------------------------------------------------------

_SECTIONS = {
    "topology": ("topology", TopologyConfig),
    "l1i": ("l1_icache", CacheLevelConfig),
    "l1d": ("l1_dcache", CacheLevelConfig),
    "l2": ("l2", CacheLevelConfig),
    "l3": ("l3", CacheLevelConfig),
    "memory": ("memory", MemoryConfig),
    "core": ("core", CoreConfig),
}
_IGNORED_SECTIONS = ("workload", "workloads")


def _line_of(text: str, key: str) -> Optional[int]:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _coerce(section: str, cls, default, values: dict, text: str):
    if not isinstance(values, dict):
        raise ParseError(f"section {section!r} must be an object", key=section, line=_line_of(text, section))
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in types:
            raise ParseError(f"unknown field in section {section!r}", key=f"{section}.{key}",
                             line=_line_of(text, key))
        if value is None:
            raise MissingField("field present without a value", key=f"{section}.{key}",
                               line=_line_of(text, key))
        expected = getattr(default, key)
        if isinstance(expected, bool) and not isinstance(value, bool):
            raise ParseError("expected a boolean", key=f"{section}.{key}", line=_line_of(text, key))
        if (expected is None or isinstance(expected, int)) and not isinstance(expected, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParseError("expected an integer", key=f"{section}.{key}", line=_line_of(text, key))
        kwargs[key] = value
    return dataclasses.replace(default, **kwargs)


def config_from_dict(data: dict[str, Any], text: str = "") -> HierarchyConfig:
    """Build an unvalidated config from the parsed JSON object."""
    if not isinstance(data, dict):
        raise ParseError("top level must be a JSON object", line=1)
    base = HierarchyConfig()
    kwargs: dict[str, Any] = {}
    mem_ports = None
    for key, value in data.items():
        if key in _SECTIONS:
            attr, cls = _SECTIONS[key]
            kwargs[attr] = _coerce(key, cls, getattr(base, attr), value, text)
        elif key == "arbitration":
            kwargs["arbitration"] = _parse_arbitration(value, text)
        elif key == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParseError("expected an integer", key="seed", line=_line_of(text, "seed"))
            kwargs["seed"] = value
        elif key == "mem_ports":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParseError("expected an integer", key="mem_ports", line=_line_of(text, "mem_ports"))
            mem_ports = value
        elif key in _IGNORED_SECTIONS:
            continue
        else:
            raise ParseError("unknown top-level key", key=key, line=_line_of(text, key))
    cfg = dataclasses.replace(base, **kwargs)
    if mem_ports is not None:
        cfg = dataclasses.replace(cfg, memory=dataclasses.replace(cfg.memory, num_channels=mem_ports))
    return cfg


def _parse_arbitration(value, text: str) -> ArbitrationPolicy:
    if isinstance(value, str):
        value = {"policy": value}
    if not isinstance(value, dict):
        raise ParseError("arbitration must be a string or object", key="arbitration",
                         line=_line_of(text, "arbitration"))
    unknown = set(value) - {"policy", "strict_time_slice"}
    if unknown:
        key = sorted(unknown)[0]
        raise ParseError("unknown field in section 'arbitration'", key=f"arbitration.{key}",
                         line=_line_of(text, key))
    try:
        variant = Policy.parse(value.get("policy", Policy.CROSSBAR.value))
    except ValueError:
        raise ParseError(f"unknown arbitration policy {value.get('policy')!r}", key="arbitration.policy",
                         line=_line_of(text, "policy")) from None
    strict = value.get("strict_time_slice", False)
    if not isinstance(strict, bool):
        raise ParseError("expected a boolean", key="arbitration.strict_time_slice",
                         line=_line_of(text, "strict_time_slice"))
    return ArbitrationPolicy(variant=variant, strict_time_slice=strict)


def load_config(path) -> HierarchyConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    return config_from_dict(data, text)


def config_to_dict(config: HierarchyConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, (attr, _) in _SECTIONS.items():
        # derived port fields left unset are omitted rather than written as null
        out[key] = {k: v for k, v in dataclasses.asdict(getattr(config, attr)).items() if v is not None}
    out["arbitration"] = {"policy": config.arbitration.variant.value,
                          "strict_time_slice": config.arbitration.strict_time_slice}
    out["seed"] = config.seed
    return out


def dump_config(config: HierarchyConfig, path=None) -> str:
    text = json.dumps(config_to_dict(config), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def with_override(config: HierarchyConfig, key: str, value) -> HierarchyConfig:
    """Return a copy with one parameter replaced.

    ``key`` is ``mem_ports``, ``arbitration``, ``seed``, ``l3_enabled`` or a
    dotted path such as ``memory.channel_latency`` / ``l2.mshr_per_bank``.
    """
    config = strip_derived(config)
    if key == "mem_ports":
        key = "memory.num_channels"
    if key == "arbitration":
        policy = value if isinstance(value, Policy) else Policy.parse(value)
        return dataclasses.replace(config, arbitration=dataclasses.replace(config.arbitration, variant=policy))
    if key == "l3_enabled":
        key = "l3.enabled"
    if key == "seed":
        return dataclasses.replace(config, seed=int(value))
    section, _, name = key.partition(".")
    attr = _SECTIONS[section][0] if section in _SECTIONS else section
    if not name or not hasattr(config, attr):
        raise ConfigError(f"unknown sweep parameter {key!r}")
    sub = getattr(config, attr)
    if not hasattr(sub, name):
        raise ConfigError(f"unknown sweep parameter {key!r}")
    return dataclasses.replace(config, **{attr: dataclasses.replace(sub, **{name: value})})


def strip_derived(config: HierarchyConfig) -> HierarchyConfig:
    """Drop derived port fields so a modified config can be re-derived."""
    def clear(level: CacheLevelConfig, keep_inputs: bool = False):
        return dataclasses.replace(level, num_banks=None, output_ports=None,
                                   input_ports=level.input_ports if keep_inputs else None)
    return HierarchyConfig(
        topology=config.topology, l1_icache=clear(config.l1_icache, keep_inputs=True),
        l1_dcache=clear(config.l1_dcache), l2=clear(config.l2), l3=clear(config.l3),
        memory=config.memory, arbitration=config.arbitration, core=config.core, seed=config.seed,
    )
