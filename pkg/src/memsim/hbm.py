"""Fixed-latency multi-channel HBM.

Each channel is a bounded FIFO that starts servicing up to
``requests_per_cycle`` heads per cycle; a serviced request returns exactly
``latency`` cycles later. Row buffers, bank groups and refresh are not modeled.
"""

from __future__ import annotations

from collections import deque

from .config import MemoryConfig
from .errors import ChannelMismatch
from .protocol import MemRequest, MemResponse, channel_index


class HbmChannel:
    def __init__(self, index: int, latency: int, depth: int, requests_per_cycle: int = 1):
        self.index = index
        self.latency = latency
        self.depth = depth
        self.requests_per_cycle = requests_per_cycle
        self.queue: deque[tuple[MemRequest, int]] = deque()
        self.in_flight: deque[tuple[MemRequest, int]] = deque()
        self.enqueued = 0
        self.serviced = 0
        self.peak_occupancy = 0
        self.busy_cycles = 0

    def try_enqueue(self, req: MemRequest, now: int) -> bool:
        if len(self.queue) >= self.depth:
            return False
        self.queue.append((req, now))
        self.enqueued += 1
        if len(self.queue) > self.peak_occupancy:
            self.peak_occupancy = len(self.queue)
        return True

    def tick(self, now: int) -> list[tuple[MemRequest, MemResponse]]:
        """Service queue heads, then return everything whose latency elapsed.

        Returns ``(request, response)`` pairs so the caller can route by the
        request's source tag.
        """
        q = self.queue
        if q:
            done = now + self.latency
            n = 0
            while q and n < self.requests_per_cycle:
                req, _ = q.popleft()
                self.in_flight.append((req, done))
                n += 1
            self.serviced += n
            self.busy_cycles += 1
        out = []
        f = self.in_flight
        while f and f[0][1] <= now:
            req, ready = f.popleft()
            out.append((req, MemResponse(req.id, req.line_address, ready)))
        return out

    @property
    def idle(self) -> bool:
        return not self.queue and not self.in_flight

    def next_ready(self):
        return self.in_flight[0][1] if self.in_flight else None


class HbmDevice:
    """All channels of one stack.

    With ``address_routed`` set, every request must arrive on the channel its
    address hashes to; otherwise the channel is simply the memory port the
    request was granted (each port reaches the whole address space).
    """

    def __init__(self, config: MemoryConfig, line_size: int, address_routed: bool = False):
        self.config = config
        self.line_size = line_size
        self.address_routed = address_routed
        self.channels = [HbmChannel(c, config.channel_latency, config.channel_queue_depth,
                                    config.requests_per_channel_per_cycle)
                         for c in range(config.num_channels)]

    def try_enqueue(self, channel: int, req: MemRequest, now: int) -> bool:
        if self.address_routed:
            expected = channel_index(req.address, self.line_size, len(self.channels))
            if expected != channel:
                raise ChannelMismatch(f"request {req.id} for channel {expected} arrived on {channel}")
        return self.channels[channel].try_enqueue(req, now)

    def tick(self, now: int) -> list[tuple[MemRequest, MemResponse]]:
        out = []
        for ch in self.channels:
            if ch.queue or ch.in_flight:
                out.extend(ch.tick(now))
        return out

    @property
    def idle(self) -> bool:
        return all(ch.idle for ch in self.channels)

    def busy(self) -> bool:
        return any(ch.queue for ch in self.channels)

    def next_ready(self):
        times = [t for t in (ch.next_ready() for ch in self.channels) if t is not None]
        return min(times) if times else None
