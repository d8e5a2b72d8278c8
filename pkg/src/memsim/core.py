"""Synthetic SIMT core: warp scheduler, load/store unit and memory coalescer.

A core issues at most one instruction per cycle, picked round-robin among its
ready warps. Compute instructions retire at issue and keep their warp busy for
their duration. A load or store is coalesced into line requests; the first one
must be accepted by the DCache in the issuing cycle, the rest drain from the
LSU one per cycle. Loads block their warp until every line has returned;
stores are posted and retire once all their lines are accepted.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, NamedTuple, Optional, Sequence

from .protocol import ORIGIN_CORE, MemRequest, SourcePath

READY = "ready"
WAITING = "waiting"
FINISHED = "finished"


class Compute(NamedTuple):
    duration: int = 1


class Load(NamedTuple):
    addresses: tuple[int, ...]


class Store(NamedTuple):
    addresses: tuple[int, ...]


Instruction = Compute | Load | Store


def coalesce(addresses: Sequence[int], line_size: int) -> list[int]:
    """Merge per-thread byte addresses into distinct line addresses.

    Order follows the first thread touching each line.
    """
    mask = ~(line_size - 1)
    seen: dict[int, None] = {}
    for a in addresses:
        seen.setdefault(a & mask, None)
    return list(seen)


class WarpState:
    __slots__ = ("warp_id", "program", "pc", "status", "busy_until", "outstanding", "retired",
                 "in_lsu", "retry")

    def __init__(self, warp_id: int, program: Sequence[Instruction]):
        self.warp_id = warp_id
        self.program = program
        self.pc = 0
        self.status = READY if program else FINISHED
        self.busy_until = 0
        self.outstanding: set[int] = set()
        self.retired = 0
        self.in_lsu = False
        # (lines, first request) of a memory instruction the DCache refused;
        # the retry reuses them, so request ids do not depend on attempt count.
        self.retry: Optional[tuple[list[int], MemRequest]] = None

    def ready(self, now: int) -> bool:
        return self.status == READY and self.busy_until <= now


def schedule_warp(warps: Sequence[WarpState], last: int, now: int) -> Optional[int]:
    """Next ready warp in round-robin order after ``last`` (``last`` itself comes last)."""
    n = len(warps)
    for k in range(1, n + 1):
        w = (last + k) % n
        if warps[w].ready(now):
            return w
    return None


SendFn = Callable[[MemRequest], bool]


class Core:
    def __init__(self, path: SourcePath, programs: Sequence[Sequence[Instruction]], line_size: int,
                 new_id: Callable[[], int], fetch_interval: int = 0, code_base: int = 0,
                 code_bytes: int = 4096):
        self.path = path
        self.line_size = line_size
        self.warps = [WarpState(i, p) for i, p in enumerate(programs)]
        self.last = len(self.warps) - 1
        self.live_warps = sum(1 for w in self.warps if w.status != FINISHED)
        self._new_id = new_id
        n = len(self.warps)
        # Round-robin scan order after each possible "last" warp.
        self._orders = [tuple((last + k) % n for k in range(1, n + 1)) for last in range(n)]
        self.fetch_interval = fetch_interval
        self.code_base = code_base
        self.code_lines = max(1, code_bytes // line_size)
        self._fetch_count = 0
        self._since_fetch = 0
        self.ifetch_queue: deque[MemRequest] = deque()
        self.lsu: deque[MemRequest] = deque()
        self.lsu_warp: Optional[WarpState] = None
        self.retired = 0
        self.issued_requests = 0
        self.thread_accesses = 0
        self.stall_no_warp = 0
        self.stall_port = 0
        self.trace: Optional[Callable[[int, MemRequest], None]] = None

    @property
    def program_length(self) -> int:
        return sum(len(w.program) for w in self.warps)

    @property
    def done(self) -> bool:
        return not self.live_warps and not self.lsu and not self.ifetch_queue

    def _retire(self, warp: WarpState) -> None:
        warp.retired += 1
        warp.pc += 1
        self.retired += 1
        if warp.pc >= len(warp.program):
            warp.status = FINISHED
            self.live_warps -= 1
        else:
            warp.status = READY
        if self.fetch_interval:
            self._since_fetch += 1
            if self._since_fetch >= self.fetch_interval:
                self._since_fetch = 0
                addr = self.code_base + (self._fetch_count % self.code_lines) * self.line_size
                self._fetch_count += 1
                self.ifetch_queue.append(MemRequest(
                    self._new_id(), addr, False, SourcePath(*self.path[:3], -1), addr, 0,
                    ORIGIN_CORE, True))

    def _request(self, warp: WarpState, line: int, is_write: bool, now: int) -> MemRequest:
        c = self.path
        return MemRequest(self._new_id(), line, is_write, SourcePath(c[0], c[1], c[2], warp.warp_id),
                          line, now, ORIGIN_CORE, False)

    def _lsu_finished(self, warp: WarpState) -> None:
        warp.in_lsu = False
        self.lsu_warp = None
        instr = warp.program[warp.pc]
        if type(instr) is Store or not warp.outstanding:
            self._retire(warp)
        else:
            warp.status = WAITING

    def step(self, now: int, send_data: SendFn, send_ifetch: Optional[SendFn] = None) -> bool:
        """Advance one cycle; returns True if anything changed."""
        active = False
        if self.ifetch_queue and send_ifetch is not None:
            req = self.ifetch_queue[0]
            req.issue_cycle = now
            if send_ifetch(req):
                self.ifetch_queue.popleft()
                self.issued_requests += 1
                if self.trace:
                    self.trace(now, req)
                active = True

        port_used = False
        if self.lsu:
            port_used = True
            req = self.lsu[0]
            req.issue_cycle = now
            if send_data(req):
                self.lsu.popleft()
                self.issued_requests += 1
                if self.trace:
                    self.trace(now, req)
                active = True
                if not self.lsu:
                    self._lsu_finished(self.lsu_warp)

        if not self.live_warps:
            return active
        warps = self.warps
        for w in self._orders[self.last]:
            warp = warps[w]
            if warp.status is READY and warp.busy_until <= now:
                break
        else:
            self.stall_no_warp += 1
            return active
        instr = warp.program[warp.pc]
        if type(instr) is Compute:
            self.last = w
            warp.busy_until = now + instr.duration
            self._retire(warp)
            return True
        if port_used or self.lsu_warp is not None:
            self.stall_port += 1
            return active
        is_write = type(instr) is Store
        if warp.retry is not None:
            lines, first = warp.retry
            first.issue_cycle = now
        else:
            lines = coalesce(instr.addresses, self.line_size)
            first = self._request(warp, lines[0], is_write, now)
        if not send_data(first):
            # Not issued: the warp stays ready and retries on its next turn.
            self.stall_port += 1
            warp.retry = (lines, first)
            moved, self.last = self.last != w, w
            return active or moved
        warp.retry = None
        self.last = w
        self.issued_requests += 1
        self.thread_accesses += len(instr.addresses)
        if self.trace:
            self.trace(now, first)
        if not is_write:
            warp.outstanding.add(first.id)
        rest = [self._request(warp, line, is_write, now) for line in lines[1:]]
        if not is_write:
            warp.outstanding.update(r.id for r in rest)
        warp.status = WAITING
        if rest:
            self.lsu.extend(rest)
            self.lsu_warp = warp
            warp.in_lsu = True
        else:
            self._lsu_finished(warp)
        return True

    def complete(self, req: MemRequest) -> None:
        """A request issued by this core has finished in the L1."""
        if req.ifetch or req.is_write:
            return
        warp = self.warps[req.source.warp]
        warp.outstanding.discard(req.id)
        if not warp.outstanding and not warp.in_lsu and warp.status == WAITING:
            self._retire(warp)

    def next_event(self, now: int) -> Optional[int]:
        """Earliest future cycle at which a busy warp becomes ready."""
        times = [w.busy_until for w in self.warps if w.status == READY and w.busy_until > now]
        return min(times) if times else None

    def can_act(self, now: int) -> bool:
        if self.lsu or self.ifetch_queue:
            return True
        return any(w.ready(now) for w in self.warps)
