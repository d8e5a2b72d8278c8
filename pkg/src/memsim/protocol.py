"""Memory transactions and the address-to-bank/channel hash.

Every boundary in the hierarchy uses the same line-interleaved hash: the line
number ``address // line_size`` modulo the number of banks (or channels).
Swap :func:`bank_index` to try other interleavings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, NamedTuple

# Which component issued a request; responses are routed back by this tag.
ORIGIN_CORE = 0
ORIGIN_L1 = 1
ORIGIN_L2 = 2
ORIGIN_L3 = 3


class SourcePath(NamedTuple):
    cluster: int
    socket: int = -1
    core: int = -1
    warp: int = -1


@dataclass(slots=True, eq=False)
class MemRequest:
    id: int
    address: int
    is_write: bool
    source: SourcePath
    line_address: int
    issue_cycle: int = 0
    origin: int = ORIGIN_CORE
    ifetch: bool = False

    @classmethod
    def make(cls, id, address, line_size, *, is_write=False, source=SourcePath(0, 0, 0, 0),
             issue_cycle=0, origin=ORIGIN_CORE, ifetch=False) -> "MemRequest":
        return cls(id, address, is_write, source, address & ~(line_size - 1),
                   issue_cycle, origin, ifetch)


class MemResponse(NamedTuple):
    request_id: int
    line_address: int
    fill_cycle: int


def bank_index(address: int, line_size: int, num_banks: int) -> int:
    return (address // line_size) % num_banks


def channel_index(address: int, line_size: int, num_channels: int) -> int:
    return (address // line_size) % num_channels


# --------------------------------------------------------------------------
# CSV request trace
# --------------------------------------------------------------------------

TRACE_COLUMNS = ("cycle", "id", "address", "is_write", "cluster", "socket", "core", "warp")


class TraceRecord(NamedTuple):
    cycle: int
    id: int
    address: int
    is_write: bool
    source: SourcePath


class TraceWriter:
    """Writes one CSV line per core-issued request.

    Columns: cycle, id, address (hex), is_write (0/1), cluster, socket, core, warp.
    """

    def __init__(self, fh):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(TRACE_COLUMNS)

    def write(self, cycle: int, req: MemRequest) -> None:
        s = req.source
        self._w.writerow((cycle, req.id, f"0x{req.address:x}", int(req.is_write),
                          s.cluster, s.socket, s.core, s.warp))


def read_trace(fh) -> list[TraceRecord]:
    reader = csv.DictReader(fh)
    missing = set(TRACE_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"trace is missing columns: {sorted(missing)}")
    out = []
    for row in reader:
        out.append(TraceRecord(
            int(row["cycle"]), int(row["id"]), int(row["address"], 0), row["is_write"] == "1",
            SourcePath(int(row["cluster"]), int(row["socket"]), int(row["core"]), int(row["warp"])),
        ))
    return out


def write_trace(fh, records: Iterable[TraceRecord]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in records:
        s = r.source
        w.writerow((r.cycle, r.id, f"0x{r.address:x}", int(r.is_write), s.cluster, s.socket, s.core, s.warp))
