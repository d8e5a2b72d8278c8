"""Synthetic per-warp instruction streams for the benchmark characterizations.

Nothing here executes a real kernel. Each workload is a memory access pattern
plus a compute-to-memory instruction ratio:

==========  ==============  ===============  =====================================
name        pattern         compute_per_mem  character
==========  ==============  ===============  =====================================
conv3       Strided(192)    8                compute bound, sliding-window reuse
sgemm       Contiguous      8                compute bound, small reused tile
bfs         Irregular       0.5              memory bound, random lines
transpose   Transpose       1                memory bound, column-major reads
vecadd      Contiguous      1                memory bound, streaming a+b -> c
==========  ==============  ===============  =====================================

Memory operations cycle through ``op_cycle`` (``"L"`` load, ``"S"`` store);
operation ``k`` of a cycle of length ``m`` targets array ``k % m``, each array
being a ``footprint / m`` region. The transpose matrix rows are padded by
one line (528 columns) so a column read spreads across L2 banks.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .config import TopologyConfig
from .core import Compute, Instruction, Load, Store
from .errors import InvalidSpec, ParseError
from .protocol import TraceRecord


@dataclass(frozen=True)
class Contiguous:
    """Consecutive elements in line-sized blocks; block ``b`` of warp ``g`` is block ``b * warps + g``."""


@dataclass(frozen=True)
class Strided:
    """Warp base addresses ``stride`` bytes apart, contiguous threads."""

    stride: int


@dataclass(frozen=True)
class Transpose:
    """Column-major reads over a row-major ``rows x cols`` matrix, row-major writes."""

    rows: int
    cols: int


@dataclass(frozen=True)
class Irregular:
    """Uniform random element per thread, drawn from a seeded generator."""

    seed: int = 0


Pattern = Union[Contiguous, Strided, Transpose, Irregular]


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    pattern: Pattern
    compute_per_mem: float
    instructions_per_warp: int = 512
    footprint_bytes: int = 4 * 1024 * 1024
    element_bytes: int = 4
    op_cycle: str = "L"
    compute_duration: int = 1

    def validate(self, line_size: int = 64) -> None:
        if self.compute_per_mem < 0:
            raise InvalidSpec(f"{self.name}: compute_per_mem must be >= 0")
        if self.instructions_per_warp < 1:
            raise InvalidSpec(f"{self.name}: instructions_per_warp must be >= 1")
        if self.footprint_bytes < line_size:
            raise InvalidSpec(f"{self.name}: footprint {self.footprint_bytes} smaller than a line")
        if self.element_bytes < 1 or self.compute_duration < 1:
            raise InvalidSpec(f"{self.name}: element_bytes and compute_duration must be >= 1")
        if not self.op_cycle or set(self.op_cycle) - {"L", "S"}:
            raise InvalidSpec(f"{self.name}: op_cycle must be a nonempty string of L/S")
        p = self.pattern
        if isinstance(p, Strided) and p.stride < self.element_bytes:
            raise InvalidSpec(f"{self.name}: stride {p.stride} smaller than element {self.element_bytes}")
        if isinstance(p, Transpose) and (p.rows < 1 or p.cols < 1):
            raise InvalidSpec(f"{self.name}: transpose dims must be >= 1")


def builtin_suite() -> list[WorkloadSpec]:
    return [
        WorkloadSpec("conv3", Strided(192), 8, footprint_bytes=64 * 1024),
        WorkloadSpec("sgemm", Contiguous(), 8, footprint_bytes=8 * 1024),
        # bfs is short and small: every request misses to HBM, and the full sweep
        # has to stay fast.
        WorkloadSpec("bfs", Irregular(seed=1), 0.5, instructions_per_warp=128,
                     footprint_bytes=256 * 1024, op_cycle="LLLS"),
        WorkloadSpec("transpose", Transpose(512, 528), 1, op_cycle="LS"),
        # vecadd runs longer so its IPC is not dominated by the drain tail.
        WorkloadSpec("vecadd", Contiguous(), 1, instructions_per_warp=2048, op_cycle="LLS"),
    ]


def get_workload(name: str) -> WorkloadSpec:
    for spec in builtin_suite():
        if spec.name == name:
            return spec
    names = ", ".join(s.name for s in builtin_suite())
    raise KeyError(f"unknown workload {name!r}; valid names: {names}")


def memory_slots(n: int, compute_per_mem: float) -> list[bool]:
    """Which of ``n`` instruction slots are memory operations.

    Slot ``i`` is a memory op when ``floor((i+1)/p) > floor(i/p)`` with
    ``p = 1 + compute_per_mem``, so the memory fraction is ``1/p`` up to rounding.
    """
    period = 1 + Fraction(compute_per_mem).limit_denominator(1000)
    num, den = period.numerator, period.denominator
    return [(i + 1) * den // num > i * den // num for i in range(n)]


def _addresses(spec: WorkloadSpec, topo: TopologyConfig, g: int, k: int, rng,
               line_size: int) -> tuple[int, ...]:
    """Per-thread byte addresses of memory op ``k`` of global warp ``g``."""
    T, E = topo.threads_per_warp, spec.element_bytes
    m = len(spec.op_cycle)
    region = max(line_size, (spec.footprint_bytes // m) // line_size * line_size)
    base = (k % m) * region
    j = k // m
    p = spec.pattern
    if isinstance(p, Contiguous):
        # line-sized blocks dealt round-robin to warps
        per_line = max(1, line_size // E)
        offs = []
        for t in range(T):
            q = j * T + t
            offs.append(((q // per_line * topo.total_warps + g) * per_line + q % per_line) * E)
    elif isinstance(p, Strided):
        offs = [g * p.stride + (j * T + t) * E for t in range(T)]
    elif isinstance(p, Transpose):
        if spec.op_cycle[k % m] == "S":
            # row-major write of the transposed tile
            flat = (j * topo.total_warps + g) * T
            offs = [(flat + t) * E for t in range(T)]
        else:
            flat = (j * topo.total_warps + g) * T
            offs = []
            for t in range(T):
                e = flat + t
                row, col = e % p.rows, (e // p.rows) % p.cols
                offs.append((row * p.cols + col) * E)
    else:
        n_elem = max(1, region // E)
        offs = [int(x) * E for x in rng.integers(0, n_elem, size=T)]
    return tuple(base + (o % region) for o in offs)


def generate(spec: WorkloadSpec, topology: TopologyConfig, line_size: int = 64,
             seed: int = 0) -> list[list[Instruction]]:
    """Instruction streams for every warp, indexed by global warp id.

    Global warp id is ``((cluster * sockets + socket) * cores + core) * warps + warp``.
    Deterministic in ``(spec, topology, seed)``.
    """
    spec.validate(line_size)
    slots = memory_slots(spec.instructions_per_warp, spec.compute_per_mem)
    compute = Compute(spec.compute_duration)
    m = len(spec.op_cycle)
    programs = []
    base_seed = spec.pattern.seed if isinstance(spec.pattern, Irregular) else 0
    for g in range(topology.total_warps):
        rng = np.random.default_rng([base_seed, seed, g])
        prog: list[Instruction] = []
        k = 0
        for is_mem in slots:
            if not is_mem:
                prog.append(compute)
                continue
            addrs = _addresses(spec, topology, g, k, rng, line_size)
            prog.append(Store(addrs) if spec.op_cycle[k % m] == "S" else Load(addrs))
            k += 1
        programs.append(prog)
    return programs


def from_trace(records: Sequence[TraceRecord], topology: TopologyConfig) -> list[list[Instruction]]:
    """Turn a request trace into per-warp programs, one memory op per record.

    Each record becomes a load or store whose threads all touch the recorded
    address. Records are ordered by cycle, then id, within each warp.
    """
    programs: list[list[Instruction]] = [[] for _ in range(topology.total_warps)]
    T = topology.threads_per_warp
    for r in sorted(records, key=lambda r: (r.cycle, r.id)):
        s = r.source
        if s.warp < 0:
            continue
        g = ((s.cluster * topology.sockets_per_cluster + s.socket) * topology.cores_per_socket
             + s.core) * topology.warps_per_core + s.warp
        if not 0 <= g < len(programs):
            raise InvalidSpec(f"trace record {r.id} outside topology: {s}")
        addrs = (r.address,) * T
        programs[g].append(Store(addrs) if r.is_write else Load(addrs))
    return programs


_PATTERNS = {"contiguous": Contiguous, "strided": Strided, "transpose": Transpose, "irregular": Irregular}


def spec_from_dict(data: dict) -> WorkloadSpec:
    if "name" not in data:
        from .errors import MissingField
        raise MissingField("workload entry needs a name", key="workload.name")
    d = dict(data)
    name = d.pop("name")
    if name in {s.name for s in builtin_suite()}:
        spec = get_workload(name)
    else:
        spec = WorkloadSpec(name, Contiguous(), 1.0)
    if "pattern" in d:
        pat = d.pop("pattern")
        if isinstance(pat, str):
            pat = {"kind": pat}
        kind = str(pat.get("kind", "")).lower()
        if kind not in _PATTERNS:
            raise ParseError(f"unknown pattern {kind!r}", key="workload.pattern")
        args = {k: v for k, v in pat.items() if k != "kind"}
        spec = dataclasses.replace(spec, pattern=_PATTERNS[kind](**args))
    fields = {f.name for f in dataclasses.fields(WorkloadSpec)}
    for key in d:
        if key not in fields:
            raise ParseError("unknown workload field", key=f"workload.{key}")
    return dataclasses.replace(spec, **d)


def load_workloads(path) -> list[WorkloadSpec]:
    """Workload entries from the ``workload``/``workloads`` section of a config file."""
    data = json.loads(Path(path).read_text())
    entries = data.get("workloads", data.get("workload", []))
    if isinstance(entries, dict):
        entries = [entries]
    return [spec_from_dict(e) for e in entries]


def resolve(name_or_spec, extra: Optional[Sequence[WorkloadSpec]] = None) -> WorkloadSpec:
    if isinstance(name_or_spec, WorkloadSpec):
        return name_or_spec
    for spec in extra or ():
        if spec.name == name_or_spec:
            return spec
    return get_workload(name_or_spec)
