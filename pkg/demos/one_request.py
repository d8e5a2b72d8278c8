"""Follow a single cold load through every level, cycle by cycle."""

import dataclasses

from memsim import HierarchyConfig, Simulation, validate
from memsim.core import Load

base = HierarchyConfig()
cfg = validate(dataclasses.replace(base, core=dataclasses.replace(base.core, launch_jitter=0,
                                                                  icache_fetch_interval=0)))
programs = [[] for _ in range(cfg.topology.total_warps)]
programs[0] = [Load((0x1000, 0x1004, 0x1008, 0x100C))]   # four threads, one line
sim = Simulation(cfg, programs=programs)

seen = set()
while not sim.finished:
    now = sim.cycle
    sim.step()
    l1 = sim.l1d[0].banks[0]
    events = {
        "L1 miss queued": bool(l1.miss_queue) or l1.mshrs,
        "L2 miss queued": any(b.mshrs for b in sim.l2[0].banks),
        "at HBM": any(ch.queue or ch.in_flight for ch in sim.hbm.channels),
        "L2 filled": sim.l2[0].counters()["fills"] > 0,
        "L1 filled": l1.fills > 0,
    }
    for name, happened in events.items():
        if happened and name not in seen:
            seen.add(name)
            print(f"cycle {now:>4}: {name}")
print(f"cycle {sim.cycle - 1:>4}: load retired, IPC {sim.stats().ipc:.4f}")
