import dataclasses
import io

import pytest

from memsim import HierarchyConfig, Simulation, run, sweep, validate, with_override
from memsim.core import Compute, Load, Store
from memsim.errors import CycleCapExceeded
from memsim.protocol import read_trace
from memsim.workloads import builtin_suite, get_workload

from conftest import quiet_config


def short(name, n=48):
    return dataclasses.replace(get_workload(name), instructions_per_warp=n)


def lone(cfg, prog):
    progs = [[] for _ in range(cfg.topology.total_warps)]
    progs[0] = prog
    return Simulation(cfg, programs=progs)


def test_single_compute():
    sim = lone(validate(quiet_config()), [Compute()])
    s = sim.run()
    assert s.retired == 1 and s.cycles == 1


def test_single_load_timeline():
    cfg = validate(quiet_config())
    sim = lone(cfg, [Load((0x1000,) * 4)])
    at_hbm = None
    while not sim.finished:
        sim.step()
        if at_hbm is None and any(ch.enqueued for ch in sim.hbm.channels):
            at_hbm = sim.cycle - 1
    l1, l2, mem = cfg.l1_dcache.hit_latency, cfg.l2.hit_latency, cfg.memory.channel_latency
    assert at_hbm == l1 + l2
    # serviced the next cycle, then fills climb back through L2 and L1
    assert sim.cycle == at_hbm + 1 + mem + l2 + l1 + 1


def test_idle_step_leaves_queues_empty():
    sim = lone(validate(quiet_config()), [])
    sim.step()
    assert sim.finished and sim.hbm.idle
    assert all(c.idle for c in sim.l2) and all(c.idle for c in sim.l1d)


def test_determinism():
    cfg = HierarchyConfig()
    assert run(cfg, short("bfs")) == run(cfg, short("bfs"))


def test_more_ports_help_vecadd():
    w = short("vecadd", 128)
    assert run(with_override(HierarchyConfig(), "mem_ports", 4), w).ipc > \
        run(with_override(HierarchyConfig(), "mem_ports", 1), w).ipc


@pytest.mark.parametrize("name", [s.name for s in builtin_suite()])
@pytest.mark.parametrize("ports,l3,policy", [(1, False, "crossbar"), (4, False, "crossbar"), (8, False, "direct"),
                                             (4, True, "source_rr"), (4, True, "distributed_rr")])
def test_fast_forward_is_exact(name, ports, l3, policy):
    cfg = with_override(with_override(with_override(HierarchyConfig(), "mem_ports", ports), "l3_enabled", l3),
                        "arbitration", policy)
    w = short(name)
    a = run(cfg, w)
    b = run(cfg, w, fast_forward=False)
    assert a == b
    assert a.conserved and a.retired == a.program_length


def test_backpressure_keeps_every_request():
    cfg = with_override(with_override(HierarchyConfig(), "memory.channel_queue_depth", 1), "mem_ports", 2)
    s = run(cfg, short("bfs", 64))
    assert s.conserved and s.retired == s.program_length
    assert all(ch["peak_occupancy"] <= 1 for ch in s.channels)
    assert s.boundary_stalls["mem"] > 0


def test_writes_reach_memory():
    cfg = quiet_config()
    progs = [[Store((k * 4096 + w * 64,) * 4) for k in range(64)] for w in range(32)]
    s = Simulation(validate(cfg), programs=progs).run()
    assert s.levels["l1d"]["writebacks"] > 0 and s.conserved


def test_cycle_cap():
    with pytest.raises(CycleCapExceeded) as exc:
        run(HierarchyConfig(), short("vecadd"), cycle_cap=50)
    assert exc.value.stats.cycles == 50


def test_trace_file():
    buf = io.StringIO()
    s = run(HierarchyConfig(), short("sgemm", 16), trace=buf)
    buf.seek(0)
    recs = read_trace(buf)
    assert len(recs) == s.cores["issued_requests"]
    assert len({r.id for r in recs}) == len(recs)


def test_launch_jitter_follows_seed():
    w = short("vecadd", 32)
    a = run(HierarchyConfig(), w)
    assert a == run(HierarchyConfig(), w)
    assert a != run(with_override(HierarchyConfig(), "seed", 5), w)


def test_sweep_shapes():
    suite = [short(s.name, 8) for s in builtin_suite()]
    rows = sweep(HierarchyConfig(), ("mem_ports", [1, 2, 4, 8]), suite)
    assert len(rows) == 20 and all(r.ok for r in rows)
    assert [(r.workload, r.value) for r in rows[:2]] == [("conv3", 1), ("conv3", 2)]
    l3 = with_override(with_override(HierarchyConfig(), "l3_enabled", True), "mem_ports", 4)
    assert len(sweep(l3, ("arbitration", ["a", "b", "c"]), suite)) == 15
    assert sweep(HierarchyConfig(), ("mem_ports", []), suite) == []


def test_sweep_records_bad_points():
    rows = sweep(HierarchyConfig(), ("mem_ports", [3, 4]), [short("sgemm", 8)])
    assert rows[0].error and "NonPowerOfTwo" in rows[0].error and rows[1].ok


def test_parallel_sweep_matches_serial():
    suite = [short("bfs", 16), short("conv3", 16)]
    a = sweep(HierarchyConfig(), ("mem_ports", [1, 8]), suite, jobs=1)
    b = sweep(HierarchyConfig(), ("mem_ports", [1, 8]), suite, jobs=2)
    assert [r.stats for r in a] == [r.stats for r in b]
