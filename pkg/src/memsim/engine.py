"""Cycle-stepped simulation of cores -> L1 -> L2 -> (L3) -> HBM.

Phase order inside one cycle (part of the determinism contract):

1. HBM channels service queue heads and emit finished responses.
2. Responses and cache completions propagate upward, bottom level first:
   HBM -> L3 -> L2 -> L1 -> cores.
3. Cores step, issuing into their L1 input queues. The first core rotates
   by one every cycle.
4. Every port boundary computes its grants from the ready miss-queue heads.
5. Granted requests move down one level (rejected moves stay queued).
6. Every cache bank runs at most one access from its input queue, L1 first.

A request issued by a core at cycle ``t`` that misses everywhere reaches the
HBM queue at ``t + l1_hit + l2_hit`` (plus the L3 hit latency when enabled);
channels service it on the following cycle.

A bank whose head the level below could not take this cycle (full input
queue, full channel queue) is not offered to its arbiter, so its grant is
withheld and the request stays queued.

When nothing can act until a known future cycle (every warp waits on memory,
every queue is empty) the loop jumps straight to that cycle. The jump is exact:
statistics are identical with ``fast_forward=False``.
"""

from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .cache import BankedCache
from .config import (
    HierarchyConfig,
    Policy,
    ValidatedConfig,
    boundaries,
    validate,
    with_override,
)
from .core import Core
from .errors import CycleCapExceeded, DeadlockDetected, MemSimError
from .hbm import HbmDevice
from .interconnect import DCACHE, ICACHE, SharedPortArbiter, make_arbiter
from .protocol import ORIGIN_CORE, ORIGIN_L1, ORIGIN_L2, ORIGIN_L3, MemResponse, SourcePath, TraceWriter
from .workloads import WorkloadSpec, generate, resolve

log = logging.getLogger(__name__)

DEFAULT_CYCLE_CAP = 10_000_000
# RNG stream tag for launch times, kept apart from workload address streams.
_LAUNCH_STREAM = 77


@dataclass
class SimStats:
    cycles: int = 0
    retired: int = 0
    issued: int = 0
    completed: int = 0
    max_outstanding: int = 0
    program_length: int = 0
    levels: dict[str, dict[str, int]] = field(default_factory=dict)
    port_grants: dict[str, list[int]] = field(default_factory=dict)
    input_grants: dict[str, list[int]] = field(default_factory=dict)
    boundary_stalls: dict[str, int] = field(default_factory=dict)
    shared_port: dict[str, Any] = field(default_factory=dict)
    channels: list[dict[str, int]] = field(default_factory=list)
    cores: dict[str, int] = field(default_factory=dict)
    grant_digest: int = 0
    requests_per_channel_per_cycle: int = 1

    @property
    def ipc(self) -> float:
        return self.retired / self.cycles if self.cycles else 0.0

    def hit_rate(self, level: str) -> float:
        c = self.levels.get(level)
        if not c:
            return float("nan")
        total = c["hits"] + c["misses"] + c["merges"]
        return c["hits"] / total if total else float("nan")

    @property
    def channel_util_mean(self) -> float:
        if not self.channels or not self.cycles:
            return 0.0
        cap = self.cycles * self.requests_per_channel_per_cycle
        return sum(ch["serviced"] / cap for ch in self.channels) / len(self.channels)

    @property
    def conserved(self) -> bool:
        return self.issued == self.completed

    def summary(self) -> str:
        lines = [
            f"cycles            {self.cycles}",
            f"retired           {self.retired}",
            f"ipc               {self.ipc:.6f}",
            f"requests          issued {self.issued}, completed {self.completed}, "
            f"max outstanding {self.max_outstanding}",
        ]
        for name in ("l1i", "l1d", "l2", "l3"):
            if name in self.levels:
                c = self.levels[name]
                lines.append(f"{name:<17} hit rate {self.hit_rate(name):.4f} "
                             f"(hits {c['hits']}, misses {c['misses']}, merges {c['merges']}, "
                             f"writebacks {c['writebacks']})")
        util = ", ".join(f"{ch['serviced'] / max(1, self.cycles):.3f}" for ch in self.channels)
        lines.append(f"channel util      [{util}] mean {self.channel_util_mean:.4f}")
        return "\n".join(lines)


class _NonePorts:
    """Stand-in for "no grants" that reads False at every port."""

    def __getitem__(self, _port):
        return None


_NONE_PORTS = _NonePorts()


class _Stage:
    """Runtime state of one bank-to-port boundary.

    ``accept(req, output)`` says whether the level below can take ``req`` on
    ``output`` this cycle (``output`` None: on some output). A bank whose
    request would be refused is not pending, so its grant is withheld.
    """

    __slots__ = ("name", "banks", "arbiter", "direct", "n_out", "line", "accept", "rotating", "waiting")

    def __init__(self, name, banks, arbiter, direct, line, accept):
        self.name = name
        self.banks = banks
        self.arbiter = arbiter
        self.direct = direct
        self.n_out = arbiter.num_outputs
        self.line = line
        self.accept = accept
        self.rotating = arbiter.needs_every_cycle
        # A rotating arbiter left an acceptable request ungranted this cycle.
        self.waiting = False

    def grants(self, now, banks=None):
        """Per output port, the bank granted this cycle (or None).

        Returns None when nothing was granted. ``banks`` overrides the input
        list for a boundary fed by another boundary's grants.
        """
        arb = self.arbiter
        src = banks if banks is not None else self.banks
        self.waiting = False
        for b in src:
            if b is not None:
                q = b.miss_queue
                if q and q[0][0] <= now:
                    break
        else:
            arb.advance_idle(1)
            return None
        heads = []
        for b in src:
            q = b.miss_queue if b is not None else None
            heads.append(q[0][1] if q and q[0][0] <= now else None)
        if arb.policy is Policy.CROSSBAR:
            if self.direct:
                demands = range(len(heads))
            else:
                n, line = self.n_out, self.line
                demands = [(h.address // line) % n if h is not None else -1 for h in heads]
        else:
            demands = None
        accept = self.accept
        pending = []
        for i, h in enumerate(heads):
            if h is None:
                pending.append(False)
                continue
            o = arb.output_for(i, demands)
            pending.append(o is not None and accept(h, o))
        if not any(pending):
            arb.advance_idle(1)
            granted = ()
            out = None
        else:
            granted = arb.arbitrate(pending, demands)
            out = [None] * self.n_out
            for i, o in granted:
                out[o] = src[i]
        if self.rotating:
            won = {i for i, _ in granted}
            self.waiting = any(h is not None and i not in won and accept(h, None)
                               for i, h in enumerate(heads))
        return out


class Simulation:
    def __init__(self, config: HierarchyConfig, workload=None, *, programs=None,
                 cycle_cap: int = DEFAULT_CYCLE_CAP, trace=None, fast_forward: bool = True):
        cfg = config if isinstance(config, ValidatedConfig) else validate(config)
        self.config = cfg
        self.cycle_cap = cycle_cap
        self.fast_forward = fast_forward
        topo = cfg.topology
        line = cfg.line_size
        self.line = line
        if programs is None:
            if workload is None:
                raise ValueError("need a workload or explicit programs")
            self.workload = resolve(workload)
            programs = generate(self.workload, topo, line, seed=cfg.seed)
        else:
            self.workload = workload
        if len(programs) != topo.total_warps:
            raise ValueError(f"need {topo.total_warps} warp programs, got {len(programs)}")

        self.cycle = 0
        self._ids = itertools.count(1)
        self.issued = 0
        self.completed = 0
        self.outstanding: set[int] = set()
        self.max_outstanding = 0
        self._digest = 0
        self._trace_writer = TraceWriter(trace) if trace is not None else None

        def cache_id():
            i = next(self._ids)
            self._register(i)
            return i

        core_id = self._ids.__next__
        policy = cfg.arbitration.variant
        strict = cfg.arbitration.strict_time_slice
        bspecs = {b.name: b for b in boundaries(cfg)}

        def arbiter(name):
            b = bspecs[name]
            return make_arbiter(policy, b.num_inputs, b.num_outputs, b.num_groups, strict)

        S, C, W = topo.sockets_per_cluster, topo.cores_per_socket, topo.warps_per_core
        self.l2 = [BankedCache(cfg.l2, "l2", cache_id, SourcePath(cl), ORIGIN_L2)
                   for cl in range(topo.num_clusters)]
        self.l3 = BankedCache(cfg.l3, "l3", cache_id, SourcePath(-1), ORIGIN_L3) if cfg.l3.enabled else None
        mem_b = bspecs["mem"]
        self.hbm = HbmDevice(cfg.memory, line,
                             address_routed=(policy is Policy.CROSSBAR and not mem_b.direct))

        def room_in(cache):
            def accept(req, _output):
                return cache.has_room(req.address)
            return accept

        def always(_req, _output):
            return True

        channels, depth = self.hbm.channels, cfg.memory.channel_queue_depth

        def channel_room(_req, output):
            return output is None or len(channels[output].queue) < depth

        self.l1i: list[BankedCache] = []
        self.l1d: list[BankedCache] = []
        self.l1_stages = []
        for cl in range(topo.num_clusters):
            into_l2 = room_in(self.l2[cl])
            for so in range(S):
                src = SourcePath(cl, so)
                ic = BankedCache(cfg.l1_icache, "l1i", cache_id, src, ORIGIN_L1, read_only=True, ifetch=True)
                dc = BankedCache(cfg.l1_dcache, "l1d", cache_id, src, ORIGIN_L1)
                self.l1i.append(ic)
                self.l1d.append(dc)
                self.l1_stages.append((
                    _Stage("l1i", ic.banks, arbiter("l1i"), bspecs["l1i"].direct, line, into_l2),
                    _Stage("l1d", dc.banks, arbiter("l1d"), bspecs["l1d"].direct, line, into_l2),
                    SharedPortArbiter(cfg.l1_icache.output_ports, cfg.l1_dcache.output_ports),
                ))
        into_l3 = room_in(self.l3) if self.l3 else always
        self.l2_stages = [_Stage("l2", c.banks, arbiter("l2"), bspecs["l2"].direct, line, into_l3)
                          for c in self.l2]
        self.l3_stage = (_Stage("l3", self.l3.banks, arbiter("l3"), bspecs["l3"].direct, line, always)
                         if self.l3 else None)
        self.mem_stage = _Stage("mem", None, arbiter("mem"), mem_b.direct, line, channel_room)
        self.mem_arbiter = self.mem_stage.arbiter
        self.levels_by_name = {"l1i": self.l1i, "l1d": self.l1d, "l2": self.l2,
                               "l3": [self.l3] if self.l3 else []}
        self.caches_top_down = self.l1i + self.l1d + self.l2 + ([self.l3] if self.l3 else [])

        self.cores: list[Core] = []
        self._senders = []
        cc = cfg.core
        for cl in range(topo.num_clusters):
            for so in range(S):
                sidx = cl * S + so
                for co in range(C):
                    g0 = (sidx * C + co) * W
                    core = Core(SourcePath(cl, so, co), programs[g0:g0 + W], line, core_id,
                                cc.icache_fetch_interval, cc.code_base, cc.code_bytes)
                    if self._trace_writer is not None:
                        core.trace = self._trace_writer.write
                    self.cores.append(core)
                    self._senders.append((self._sender(self.l1d[sidx]), self._sender(self.l1i[sidx])))
        self.program_length = sum(c.program_length for c in self.cores)
        if cc.launch_jitter > 1:
            rng = np.random.default_rng([cfg.seed, _LAUNCH_STREAM])
            for c in self.cores:
                for w in c.warps:
                    w.busy_until = int(rng.integers(0, cc.launch_jitter))
        entries = [(c, d, i) for c, (d, i) in zip(self.cores, self._senders)]
        self._core_orders = [entries[k:] + entries[:k] for k in range(len(entries))]
        self._banks_top_down = [b for c in self.caches_top_down for b in c.banks]
        self._banks_bottom_up = [b for c in reversed(self.caches_top_down) for b in c.banks]

    # -- bookkeeping ---------------------------------------------------------

    def _register(self, rid: int) -> None:
        self.issued += 1
        self.outstanding.add(rid)
        if len(self.outstanding) > self.max_outstanding:
            self.max_outstanding = len(self.outstanding)

    def _complete(self, rid: int) -> None:
        try:
            self.outstanding.remove(rid)
        except KeyError:
            raise MemSimError(f"request {rid} completed twice or was never issued") from None
        self.completed += 1

    def _sender(self, cache: BankedCache):
        def send(req):
            if cache.try_enqueue(req):
                self._register(req.id)
                return True
            return False
        return send

    # -- routing ---------------------------------------------------------------

    def _route_up(self, req, now):
        """Deliver the completion of ``req`` to whoever issued it."""
        self._complete(req.id)
        origin = req.origin
        s = req.source
        if origin == ORIGIN_CORE:
            topo = self.config.topology
            idx = (s.cluster * topo.sockets_per_cluster + s.socket) * topo.cores_per_socket + s.core
            self.cores[idx].complete(req)
            return
        resp = MemResponse(req.id, req.line_address, now)
        if origin == ORIGIN_L1:
            sidx = s.cluster * self.config.topology.sockets_per_cluster + s.socket
            cache = self.l1i[sidx] if req.ifetch else self.l1d[sidx]
        elif origin == ORIGIN_L2:
            cache = self.l2[s.cluster]
        else:
            cache = self.l3
        cache.fill(resp, now)

    # -- one cycle ------------------------------------------------------------------

    def step(self) -> bool:
        """Advance one cycle. Returns True if any component changed state."""
        now = self.cycle
        active = False

        # 1. HBM
        for req, resp in self.hbm.tick(now):
            active = True
            self._complete(req.id)
            target = self.l3 if req.origin == ORIGIN_L3 else self.l2[req.source.cluster]
            target.fill(resp, now)
        if self.hbm.busy():
            active = True

        # 2. completions, bottom-up
        for bank in self._banks_bottom_up:
            q = bank.completions
            if q and q[0][0] <= now:
                active = True
                for req in bank.pop_completions(now):
                    self._route_up(req, now)

        # 3. cores
        # Starting core rotates every cycle so no core has fixed priority at
        # the L1 input queues.
        for core, send_d, send_i in self._core_orders[now % len(self.cores)]:
            if core.step(now, send_d, send_i):
                active = True

        # 4 + 5. boundaries
        if self._move_down(now):
            active = True

        # 6. cache accesses, top-down
        for bank in self._banks_top_down:
            if bank.input_queue and bank.service(now):
                active = True

        self.cycle = now + 1
        return active

    def _move_down(self, now) -> bool:
        moved = False
        digest = self._digest
        # L1: ICache and DCache stages merged through the shared-port arbiter.
        S = self.config.topology.sockets_per_cluster
        for sidx, (istage, dstage, shared) in enumerate(self.l1_stages):
            iports = istage.grants(now)
            dports = dstage.grants(now)
            if iports is None and dports is None:
                continue
            winners = shared.arbitrate(iports or _NONE_PORTS, dports or _NONE_PORTS)
            l2 = self.l2[sidx // S]
            for p, who in enumerate(winners):
                if who is None:
                    continue
                bank = iports[p] if who == ICACHE else dports[p]
                req = bank.miss_queue[0][1]
                if l2.try_enqueue(req):
                    bank.pop_miss()
                    moved = True
                    digest = hash((digest, now, 1, sidx, p, req.id))
        # L2
        mem_inputs = []
        for cl, stage in enumerate(self.l2_stages):
            ports = stage.grants(now)
            if self.l3 is not None:
                if ports is None:
                    continue
                for p, bank in enumerate(ports):
                    if bank is not None:
                        req = bank.miss_queue[0][1]
                        if self.l3.try_enqueue(req):
                            bank.pop_miss()
                            moved = True
                            digest = hash((digest, now, 2, cl, p, req.id))
            else:
                mem_inputs.extend(ports or [None] * stage.n_out)
        if self.l3 is not None:
            mem_inputs = self.l3_stage.grants(now) or [None] * self.l3_stage.n_out
        # memory boundary
        ports = self.mem_stage.grants(now, mem_inputs)
        if ports is not None:
            for ch, bank in enumerate(ports):
                if bank is None:
                    continue
                req = bank.miss_queue[0][1]
                if self.hbm.try_enqueue(ch, req, now):
                    bank.pop_miss()
                    moved = True
                    digest = hash((digest, now, 3, mem_inputs.index(bank), ch, req.id))
        self._digest = digest
        return moved

    # -- idle skipping ------------------------------------------------------------

    def _all_stages(self):
        for istage, dstage, _ in self.l1_stages:
            yield istage
            yield dstage
        yield from self.l2_stages
        if self.l3_stage is not None:
            yield self.l3_stage

    def _arbiters(self):
        for s in self._all_stages():
            yield s.arbiter
        yield self.mem_arbiter

    def _rotation_pending(self) -> bool:
        """A rotating arbiter may grant next cycle what it could not grant this one."""
        return any(s.waiting for s in self._all_stages()) or self.mem_stage.waiting

    def _next_event(self) -> Optional[int]:
        """Earliest cycle >= ``self.cycle`` at which a timed event fires, or None."""
        now = self.cycle
        times = []
        t = self.hbm.next_ready()
        if t is not None:
            times.append(t)
        for cache in self.caches_top_down:
            for b in cache.banks:
                if b.completions:
                    times.append(b.completions[0][0])
                if b.miss_queue and b.miss_queue[0][0] >= now:
                    times.append(b.miss_queue[0][0])
        for core in self.cores:
            t = core.next_event(now - 1)
            if t is not None:
                times.append(t)
        times = [t for t in times if t >= now]
        return min(times) if times else None

    def _counter_refs(self):
        refs = []
        for core in self.cores:
            refs += [(core, "stall_no_warp"), (core, "stall_port")]
        for cache in self.caches_top_down:
            for b in cache.banks:
                refs += [(b, "stalls_mshr"), (b, "stalls_queue")]
        for arb in self._arbiters():
            refs.append((arb, "stall_cycles"))
        return refs

    def _fast_forward(self, target: int) -> bool:
        """Jump to ``target`` if the system is frozen until then.

        One probe cycle is stepped; if it changes nothing but stall counters,
        every cycle up to ``target`` would repeat it exactly, so its counter
        increments are replayed in bulk. Returns False if the probe was active.
        """
        refs = self._refs
        before = [getattr(o, a) for o, a in refs]
        if self.step() or self._rotation_pending():
            return False
        n = target - self.cycle
        if n <= 0:
            return True
        for (o, a), b in zip(refs, before):
            d = getattr(o, a) - b
            if d:
                setattr(o, a, getattr(o, a) + d * n)
        for arb in self._arbiters():
            arb.advance_idle(n)
        self.cycle = target
        return True

    # -- driver ---------------------------------------------------------------------

    @property
    def finished(self) -> bool:
        return not self.outstanding and all(c.done for c in self.cores)

    def run(self) -> SimStats:
        self._refs = self._counter_refs()
        while not self.finished:
            if self.cycle >= self.cycle_cap:
                stats = self.stats()
                raise CycleCapExceeded(
                    f"cycle cap {self.cycle_cap} reached: {self._liveness()}", stats)
            if self.step() or self._rotation_pending():
                continue
            nxt = self._next_event()
            if nxt is None:
                if self.finished:
                    break
                raise DeadlockDetected(
                    f"no progress at cycle {self.cycle - 1}: {self._liveness()}", self.stats())
            if self.fast_forward and nxt > self.cycle + 1:
                self._fast_forward(min(nxt, self.cycle_cap))
        return self.stats()

    def _liveness(self) -> str:
        unfinished = sum(1 for c in self.cores for w in c.warps if w.status != "finished")
        return f"{unfinished} warps unfinished, {len(self.outstanding)} requests outstanding"

    def stats(self) -> SimStats:
        levels = {}
        for name, caches in self.levels_by_name.items():
            if not caches:
                continue
            agg: dict[str, int] = {}
            for c in caches:
                for k, v in c.counters().items():
                    agg[k] = agg.get(k, 0) + v
            levels[name] = agg
        port_grants: dict[str, list[int]] = {}
        input_grants: dict[str, list[int]] = {}
        stalls: dict[str, int] = {}
        for st in self._all_stages():
            a = st.arbiter
            pg = port_grants.setdefault(st.name, [0] * a.num_outputs)
            ig = input_grants.setdefault(st.name, [0] * a.num_inputs)
            for i, v in enumerate(a.grants_per_output):
                pg[i] += v
            for i, v in enumerate(a.grants_per_input):
                ig[i] += v
            stalls[st.name] = stalls.get(st.name, 0) + a.stall_cycles
        port_grants["mem"] = list(self.mem_arbiter.grants_per_output)
        input_grants["mem"] = list(self.mem_arbiter.grants_per_input)
        stalls["mem"] = self.mem_arbiter.stall_cycles
        shared_i = [0] * len(self.l1_stages[0][2].grants[ICACHE])
        shared_d = list(shared_i)
        conflicts = 0
        for _, _, sh in self.l1_stages:
            for p, v in enumerate(sh.grants[ICACHE]):
                shared_i[p] += v
            for p, v in enumerate(sh.grants[DCACHE]):
                shared_d[p] += v
            conflicts += sh.conflicts
        channels = [dict(enqueued=ch.enqueued, serviced=ch.serviced, peak_occupancy=ch.peak_occupancy,
                         busy_cycles=ch.busy_cycles) for ch in self.hbm.channels]
        cores = {k: sum(getattr(c, k) for c in self.cores)
                 for k in ("retired", "issued_requests", "thread_accesses", "stall_no_warp", "stall_port")}
        return SimStats(
            cycles=self.cycle, retired=cores["retired"], issued=self.issued, completed=self.completed,
            max_outstanding=self.max_outstanding, program_length=self.program_length, levels=levels,
            port_grants=port_grants, input_grants=input_grants, boundary_stalls=stalls,
            shared_port={"icache": shared_i, "dcache": shared_d, "conflicts": conflicts},
            channels=channels, cores=cores, grant_digest=self._digest,
            requests_per_channel_per_cycle=self.config.memory.requests_per_channel_per_cycle,
        )


def run(config: HierarchyConfig, workload, *, cycle_cap: int = DEFAULT_CYCLE_CAP, trace=None,
        fast_forward: bool = True) -> SimStats:
    """Simulate one workload to completion and return its statistics."""
    return Simulation(config, workload, cycle_cap=cycle_cap, trace=trace, fast_forward=fast_forward).run()


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

@dataclass
class SweepRow:
    workload: str
    parameter: str
    value: Any
    config: Optional[ValidatedConfig]
    stats: Optional[SimStats] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.stats is not None


def _run_point(args):
    cfg, spec, cycle_cap = args
    try:
        return run(cfg, spec, cycle_cap=cycle_cap), None
    except MemSimError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def sweep(base: HierarchyConfig, axis: tuple[str, Sequence[Any]], suite: Sequence, *,
          jobs: int = 1, cycle_cap: int = DEFAULT_CYCLE_CAP) -> list[SweepRow]:
    """Run every (workload, axis value) pair.

    Rows come back ordered by workload, then axis value, regardless of
    ``jobs``. A point that fails validation or simulation yields a row with
    ``error`` set; the other points still run.
    """
    name, values = axis
    specs: list[WorkloadSpec] = [resolve(w) for w in suite]
    rows: list[SweepRow] = []
    work = []
    for spec in specs:
        for value in values:
            row = SweepRow(spec.name, name, value, None)
            try:
                row.config = validate(with_override(base, name, value))
            except MemSimError as exc:
                row.error = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            if row.config is not None:
                work.append((row, (row.config, spec, cycle_cap)))
    if jobs is None or jobs < 1:
        jobs = os.cpu_count() or 1
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, [w[1] for w in work]))
    else:
        results = [_run_point(w[1]) for w in work]
    for (row, _), (stats, err) in zip(work, results):
        row.stats, row.error = stats, err
    return rows
