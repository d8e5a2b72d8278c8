"""Port-boundary arbitration.

An arbiter sees, each cycle, which of its ``num_inputs`` bank queues have a
request ready and returns a grant set: ``(input, output)`` pairs with no input
and no output repeated. Four policies are provided:

* direct      -- input ``i`` drives output ``i``; needs equal port counts.
* crossbar    -- any input to any output; every output keeps its own
                 round-robin pointer over the inputs demanding it.
* source_rr   -- inputs form contiguous groups of ``num_outputs``; one whole
                 group is served per cycle, groups taken in round-robin order.
* distributed_rr -- every source group owns a fixed slice of
                 ``num_outputs / num_groups`` outputs; a window of that many
                 ports in each group is eligible per cycle and the window
                 slides every cycle.

:class:`SharedPortArbiter` merges the ICache and DCache ports of one L1 onto
``max(icache, dcache)`` outputs, alternating on the shared ones.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .config import Policy
from .errors import GroupIndivisible, PolicyMisuse

Grant = tuple[int, int]


class Arbiter:
    policy: Policy

    def __init__(self, num_inputs: int, num_outputs: int, num_groups: int = 1):
        if num_inputs < 1 or num_outputs < 1 or num_groups < 1:
            raise ValueError("arbiter port and group counts must be >= 1")
        self.num_inputs = num_inputs
        self.num_outputs = num_outputs
        self.num_groups = num_groups
        self.grants_per_input = [0] * num_inputs
        self.grants_per_output = [0] * num_outputs
        self.stall_cycles = 0

    def arbitrate(self, pending: Sequence[bool], demands: Optional[Sequence[int]] = None) -> list[Grant]:
        grants = self._arbitrate(pending, demands)
        gi, go = self.grants_per_input, self.grants_per_output
        for i, o in grants:
            gi[i] += 1
            go[o] += 1
        if len(grants) < sum(1 for p in pending if p):
            self.stall_cycles += 1
        return grants

    def _arbitrate(self, pending, demands) -> list[Grant]:
        raise NotImplementedError

    def output_for(self, i: int, demands: Optional[Sequence[int]] = None) -> Optional[int]:
        """Output input ``i`` would drive if granted this cycle (None: not eligible)."""
        raise NotImplementedError

    def advance_idle(self, cycles: int) -> None:
        """Account for ``cycles`` cycles in which nothing was pending."""

    @property
    def needs_every_cycle(self) -> bool:
        # True when the arbiter's state moves on its own, so a pending input
        # may become grantable without any other event.
        return False

    def __repr__(self):
        return f"{type(self).__name__}({self.num_inputs}->{self.num_outputs}, groups={self.num_groups})"


class DirectArbiter(Arbiter):
    policy = Policy.DIRECT

    def __init__(self, num_inputs, num_outputs, num_groups=1):
        if num_inputs != num_outputs:
            raise PolicyMisuse(f"direct mapping needs equal port counts, got {num_inputs}->{num_outputs}")
        super().__init__(num_inputs, num_outputs, num_groups)

    def _arbitrate(self, pending, demands):
        return [(i, i) for i, p in enumerate(pending) if p]

    def output_for(self, i, demands=None):
        return i


class CrossbarArbiter(Arbiter):
    """Per-output round-robin switch allocator."""

    policy = Policy.CROSSBAR

    def __init__(self, num_inputs, num_outputs, num_groups=1):
        super().__init__(num_inputs, num_outputs, num_groups)
        self.pointers = [0] * num_outputs

    def _arbitrate(self, pending, demands):
        if demands is None:
            raise PolicyMisuse("crossbar arbitration needs the demanded output of every pending input")
        n = self.num_inputs
        by_output: dict[int, list[int]] = {}
        for i, p in enumerate(pending):
            if p:
                by_output.setdefault(demands[i], []).append(i)
        grants = []
        for o in sorted(by_output):
            cands = by_output[o]
            ptr = self.pointers[o]
            # first candidate at or after the pointer, wrapping
            chosen = min(cands, key=lambda i: (i - ptr) % n)
            self.pointers[o] = (chosen + 1) % n
            grants.append((chosen, o))
        grants.sort()
        return grants

    def output_for(self, i, demands=None):
        if demands is None:
            raise PolicyMisuse("crossbar arbitration needs the demanded output of every pending input")
        return demands[i]


class SourceRoundRobinArbiter(Arbiter):
    """Serves one whole source group per cycle."""

    policy = Policy.SOURCE_RR

    def __init__(self, num_inputs, num_outputs, num_groups=None, strict: bool = False):
        if num_inputs % num_outputs:
            raise GroupIndivisible(f"{num_inputs} inputs cannot form groups of {num_outputs}")
        super().__init__(num_inputs, num_outputs, num_inputs // num_outputs)
        self.pointer = 0
        self.strict = strict

    def _arbitrate(self, pending, demands):
        size, groups = self.num_outputs, self.num_groups
        if self.strict:
            g = self.pointer
            self.pointer = (g + 1) % groups
            base = g * size
            return [(base + j, j) for j in range(size) if pending[base + j]]
        for k in range(groups):
            g = (self.pointer + k) % groups
            base = g * size
            grants = [(base + j, j) for j in range(size) if pending[base + j]]
            if grants:
                self.pointer = (g + 1) % groups
                return grants
        return []

    def output_for(self, i, demands=None):
        return i % self.num_outputs

    def advance_idle(self, cycles):
        if self.strict:
            self.pointer = (self.pointer + cycles) % self.num_groups

    @property
    def needs_every_cycle(self):
        return self.strict


class DistributedRoundRobinArbiter(Arbiter):
    """Each group drives its own output slice through a sliding port window."""

    policy = Policy.DISTRIBUTED_RR

    def __init__(self, num_inputs, num_outputs, num_groups=1):
        if num_outputs % num_groups or num_inputs % num_groups:
            raise GroupIndivisible(
                f"{num_outputs} outputs / {num_inputs} inputs not divisible by {num_groups} groups")
        super().__init__(num_inputs, num_outputs, num_groups)
        self.window = num_outputs // num_groups
        self.group_size = num_inputs // num_groups
        self.offset = 0

    def _arbitrate(self, pending, demands):
        w, size = self.window, self.group_size
        grants = []
        for g in range(self.num_groups):
            base, out_base = g * size, g * w
            for k in range(min(w, size)):
                i = base + (self.offset + k) % size
                if pending[i]:
                    grants.append((i, out_base + k))
        self.offset = (self.offset + w) % size
        grants.sort()
        return grants

    def output_for(self, i, demands=None):
        size = self.group_size
        g, j = divmod(i, size)
        k = (j - self.offset) % size
        return g * self.window + k if k < min(self.window, size) else None

    def advance_idle(self, cycles):
        self.offset = (self.offset + cycles * self.window) % self.group_size

    @property
    def needs_every_cycle(self):
        return self.window < self.group_size


def make_arbiter(policy: Policy, num_inputs: int, num_outputs: int, num_groups: int = 1,
                 strict: bool = False) -> Arbiter:
    if policy is Policy.DIRECT:
        return DirectArbiter(num_inputs, num_outputs)
    if policy is Policy.CROSSBAR:
        return CrossbarArbiter(num_inputs, num_outputs)
    if policy is Policy.SOURCE_RR:
        return SourceRoundRobinArbiter(num_inputs, num_outputs, strict=strict)
    if policy is Policy.DISTRIBUTED_RR:
        return DistributedRoundRobinArbiter(num_inputs, num_outputs, num_groups)
    raise ValueError(policy)


def arbitrate_direct(pending: Sequence[bool]) -> list[Grant]:
    n = len(pending)
    return DirectArbiter(n, n).arbitrate(pending)


def check_grant_set(grants: Sequence[Grant], num_inputs: int, num_outputs: int) -> None:
    """Assert the one-per-input / one-per-output legality of a grant set."""
    ins = [i for i, _ in grants]
    outs = [o for _, o in grants]
    assert len(set(ins)) == len(ins), f"input granted twice: {grants}"
    assert len(set(outs)) == len(outs), f"output granted twice: {grants}"
    assert len(grants) <= num_outputs
    assert all(0 <= i < num_inputs for i in ins) and all(0 <= o < num_outputs for o in outs)


ICACHE = "I"
DCACHE = "D"


class SharedPortArbiter:
    """L1 memory-side port merge between the ICache and the DCache.

    The first ``min(icache_ports, dcache_ports)`` ports are shared and
    alternate between the two caches when both want them; the remaining ports
    belong to the larger cache alone.
    """

    def __init__(self, icache_ports: int, dcache_ports: int):
        self.icache_ports = icache_ports
        self.dcache_ports = dcache_ports
        self.shared = min(icache_ports, dcache_ports)
        self.num_ports = max(icache_ports, dcache_ports)
        # Cache granted most recently on each shared port; the other one wins
        # the next conflict. DCache starts as "last" so the ICache wins first.
        self.last = [DCACHE] * self.shared
        self.grants = {ICACHE: [0] * self.num_ports, DCACHE: [0] * self.num_ports}
        self.conflicts = 0

    def arbitrate(self, icache_pending: Sequence[bool], dcache_pending: Sequence[bool]) -> list[Optional[str]]:
        out: list[Optional[str]] = [None] * self.num_ports
        for p in range(self.num_ports):
            want_i = p < self.icache_ports and icache_pending[p]
            want_d = p < self.dcache_ports and dcache_pending[p]
            if want_i and want_d:
                self.conflicts += 1
                winner = ICACHE if self.last[p] == DCACHE else DCACHE
            elif want_i:
                winner = ICACHE
            elif want_d:
                winner = DCACHE
            else:
                continue
            if p < self.shared:
                self.last[p] = winner
            out[p] = winner
            self.grants[winner][p] += 1
        return out

    def port_owners(self, port: int) -> tuple[str, ...]:
        owners = []
        if port < self.icache_ports:
            owners.append(ICACHE)
        if port < self.dcache_ports:
            owners.append(DCACHE)
        return tuple(owners)
