"""Banked, non-blocking, write-back/write-allocate LRU cache.

Each bank has its own tag array, MSHR file, input queue and miss queue, and
accepts one access per cycle. A line lives in bank ``line % num_banks`` and
set ``(line // num_banks) % num_sets``.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict, deque
from typing import Callable, NamedTuple, Optional

from .config import CacheLevelConfig
from .errors import BankMismatch, MemSimError, OrphanFill
from .protocol import ORIGIN_CORE, ORIGIN_L1, MemRequest, MemResponse, SourcePath

HIT = "hit"
MISS_ISSUED = "miss_issued"
MISS_MERGED = "miss_merged"
STALL_MSHR_FULL = "stall_mshr_full"
STALL_QUEUE_FULL = "stall_queue_full"
# A full-line writeback from an upper cache that misses: the line is installed
# dirty with no fetch, since every byte is overwritten.
MISS_INSTALLED = "miss_installed"


class AccessOutcome(NamedTuple):
    kind: str
    ready_cycle: Optional[int] = None

    @property
    def stalled(self) -> bool:
        return self.kind in (STALL_MSHR_FULL, STALL_QUEUE_FULL)

    def __bool__(self) -> bool:
        # True when the access made progress.
        return not self.stalled


_ISSUED = AccessOutcome(MISS_ISSUED)
_MERGED = AccessOutcome(MISS_MERGED)
_STALL_MSHR = AccessOutcome(STALL_MSHR_FULL)
_STALL_QUEUE = AccessOutcome(STALL_QUEUE_FULL)


class _Mshr:
    __slots__ = ("waiters", "dirty")

    def __init__(self):
        self.waiters: list[MemRequest] = []
        self.dirty = False


class CacheBank:
    def __init__(self, config: CacheLevelConfig, bank_id: int = 0, num_banks: Optional[int] = None,
                 new_id: Optional[Callable[[], int]] = None, source: SourcePath = SourcePath(-1),
                 origin: int = ORIGIN_L1, read_only: bool = False, ifetch: bool = False):
        self.config = config
        self.bank_id = bank_id
        self.num_banks = num_banks if num_banks is not None else (config.num_banks or 1)
        self.line_size = config.line_size
        self.ways = config.ways
        self.num_sets = config.capacity_bytes // (config.ways * config.line_size * self.num_banks)
        self.hit_latency = config.hit_latency
        self.mshr_capacity = config.mshr_per_bank
        self.miss_queue_depth = config.miss_queue_depth
        self.input_queue_depth = config.input_queue_depth
        # Per set: line address -> dirty flag, least recently used first.
        self.sets: list[OrderedDict[int, bool]] = [OrderedDict() for _ in range(self.num_sets)]
        self.mshrs: dict[int, _Mshr] = {}
        self.miss_queue: deque[tuple[int, MemRequest]] = deque()
        self.input_queue: deque[MemRequest] = deque()
        self.completions: deque[tuple[int, MemRequest]] = deque()
        self.writebacks_pending: set[int] = set()
        self._new_id = new_id if new_id is not None else itertools.count(1).__next__
        self.source = source
        self.origin = origin
        self.read_only = read_only
        self.ifetch = ifetch
        self.hits = self.misses = self.merges = 0
        self.stalls_mshr = self.stalls_queue = 0
        self.writebacks = 0
        self.fills = 0
        # Outcome of a stalled input-queue head; it cannot change before a
        # fill or a miss-queue pop, so retries just count the stall.
        self._blocked: Optional[AccessOutcome] = None

    # -- helpers -----------------------------------------------------------

    def _locate(self, line_address: int) -> OrderedDict:
        n = line_address // self.line_size
        if n % self.num_banks != self.bank_id:
            raise BankMismatch(f"line 0x{line_address:x} routed to bank {self.bank_id} of {self.num_banks}")
        return self.sets[(n // self.num_banks) % self.num_sets]

    def contains(self, address: int) -> bool:
        line = address & ~(self.line_size - 1)
        return line in self._locate(line)

    def is_dirty(self, address: int) -> bool:
        line = address & ~(self.line_size - 1)
        return self._locate(line).get(line, False)

    def head_ready(self, now: int) -> bool:
        q = self.miss_queue
        return bool(q) and q[0][0] <= now

    @property
    def idle(self) -> bool:
        return not (self.mshrs or self.miss_queue or self.input_queue or self.completions
                    or self.writebacks_pending)

    # -- operations --------------------------------------------------------

    def access(self, req: MemRequest, now: int) -> AccessOutcome:
        line = req.line_address
        tags = self._locate(line)
        if req.is_write and self.read_only:
            raise MemSimError(f"write to read-only cache bank (request {req.id})")
        if line in tags:
            tags.move_to_end(line)
            if req.is_write:
                tags[line] = True
            self.hits += 1
            ready = now + self.hit_latency
            self.completions.append((ready, req))
            return AccessOutcome(HIT, ready)
        entry = self.mshrs.get(line)
        if entry is not None:
            entry.waiters.append(req)
            entry.dirty |= req.is_write
            self.merges += 1
            return _MERGED
        if req.is_write and req.origin != ORIGIN_CORE:
            self._install(tags, line, True, now)
            self.misses += 1
            ready = now + self.hit_latency
            self.completions.append((ready, req))
            return AccessOutcome(MISS_INSTALLED, ready)
        if len(self.mshrs) >= self.mshr_capacity:
            self.stalls_mshr += 1
            return _STALL_MSHR
        if len(self.miss_queue) >= self.miss_queue_depth:
            self.stalls_queue += 1
            return _STALL_QUEUE
        entry = _Mshr()
        entry.waiters.append(req)
        entry.dirty = req.is_write
        self.mshrs[line] = entry
        fetch = MemRequest(self._new_id(), line, False, self.source, line, now, self.origin, self.ifetch)
        self.miss_queue.append((now + self.hit_latency, fetch))
        self.misses += 1
        return _ISSUED

    def fill(self, resp: MemResponse, now: int) -> list[int]:
        """Install a returned line and complete its waiters.

        Returns the ids of the completed waiters (empty for a writeback ack).
        """
        if resp.request_id in self.writebacks_pending:
            self.writebacks_pending.remove(resp.request_id)
            return []
        self._blocked = None
        line = resp.line_address
        entry = self.mshrs.pop(line, None)
        if entry is None:
            raise OrphanFill(f"fill for line 0x{line:x} (request {resp.request_id}) has no MSHR")
        self._install(self._locate(line), line, entry.dirty, now)
        self.fills += 1
        ready = now + self.hit_latency
        for w in entry.waiters:
            self.completions.append((ready, w))
        return [w.id for w in entry.waiters]

    def _install(self, tags: OrderedDict, line: int, dirty: bool, now: int) -> None:
        if len(tags) >= self.ways:
            victim, victim_dirty = tags.popitem(last=False)
            if victim_dirty:
                wb = MemRequest(self._new_id(), victim, True, self.source, victim, now, self.origin, False)
                # Writebacks bypass the miss-queue depth check so fills never block.
                self.miss_queue.append((now, wb))
                self.writebacks_pending.add(wb.id)
                self.writebacks += 1
        tags[line] = dirty

    def pop_miss(self) -> MemRequest:
        self._blocked = None
        return self.miss_queue.popleft()[1]

    def drain_miss_queue(self, budget: int) -> list[MemRequest]:
        out = []
        while budget > 0 and self.miss_queue:
            out.append(self.pop_miss())
            budget -= 1
        return out

    def process_input(self, now: int) -> Optional[AccessOutcome]:
        """Run one access from the head of the input queue, if any.

        Returns None when the queue is empty. A stalled head stays queued and
        the returned outcome is falsy.
        """
        q = self.input_queue
        if not q:
            return None
        blocked = self._blocked
        if blocked is not None:
            if blocked is _STALL_MSHR:
                self.stalls_mshr += 1
            else:
                self.stalls_queue += 1
            return blocked
        outcome = self.access(q[0], now)
        if outcome.kind is STALL_MSHR_FULL or outcome.kind is STALL_QUEUE_FULL:
            self._blocked = outcome
        else:
            q.popleft()
        return outcome

    def service(self, now: int) -> bool:
        """:meth:`process_input` for the engine: True if the head made progress."""
        blocked = self._blocked
        if blocked is not None:
            if blocked is _STALL_MSHR:
                self.stalls_mshr += 1
            else:
                self.stalls_queue += 1
            return False
        q = self.input_queue
        outcome = self.access(q[0], now)
        kind = outcome.kind
        if kind is STALL_MSHR_FULL or kind is STALL_QUEUE_FULL:
            self._blocked = outcome
            return False
        q.popleft()
        return True

    def pop_completions(self, now: int) -> list[MemRequest]:
        q = self.completions
        out = []
        while q and q[0][0] <= now:
            out.append(q.popleft()[1])
        return out


class BankedCache:
    """A set of independently ported banks sharing one geometry."""

    def __init__(self, config: CacheLevelConfig, level_name: str = "cache",
                 new_id: Optional[Callable[[], int]] = None, source: SourcePath = SourcePath(-1),
                 origin: int = ORIGIN_L1, read_only: bool = False, ifetch: bool = False):
        self.config = config
        self.level_name = level_name
        n = config.num_banks or 1
        if new_id is None:
            new_id = itertools.count(1).__next__
        self.banks = [CacheBank(config, b, n, new_id, source, origin, read_only, ifetch) for b in range(n)]
        self.num_banks = n
        self.line_size = config.line_size

    def bank_for(self, address: int) -> CacheBank:
        return self.banks[(address // self.line_size) % self.num_banks]

    def has_room(self, address: int) -> bool:
        bank = self.banks[(address // self.line_size) % self.num_banks]
        return len(bank.input_queue) < bank.input_queue_depth

    def try_enqueue(self, req: MemRequest) -> bool:
        bank = self.banks[(req.address // self.line_size) % self.num_banks]
        if len(bank.input_queue) >= bank.input_queue_depth:
            return False
        bank.input_queue.append(req)
        return True

    def access(self, req: MemRequest, now: int) -> AccessOutcome:
        return self.bank_for(req.address).access(req, now)

    def fill(self, resp: MemResponse, now: int) -> list[int]:
        return self.bank_for(resp.line_address).fill(resp, now)

    @property
    def capacity_bytes(self) -> int:
        b = self.banks[0]
        return self.num_banks * b.num_sets * b.ways * b.line_size

    def counters(self) -> dict[str, int]:
        keys = ("hits", "misses", "merges", "stalls_mshr", "stalls_queue", "writebacks", "fills")
        return {k: sum(getattr(b, k) for b in self.banks) for k in keys}

    @property
    def idle(self) -> bool:
        return all(b.idle for b in self.banks)
