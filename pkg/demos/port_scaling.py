"""Walk through the memory-port sweep on the default topology.

Run with ``python3 demos/port_scaling.py``. Takes about half a minute.
"""

from memsim import HierarchyConfig, builtin_suite, run, validate, with_override
from memsim.config import boundaries

base = HierarchyConfig()

# How the port counts fall out of the channel count: each level gets
# min(inputs, channels) outputs, and banks always equal inputs.
for ports in (1, 2, 4, 8):
    cfg = validate(with_override(base, "mem_ports", ports))
    chain = ", ".join(f"{b.name} {b.num_inputs}->{b.num_outputs}" for b in boundaries(cfg))
    print(f"{ports} channel(s): {chain}")
print()

# Compute-bound kernels gain little once the L1 absorbs their reuse;
# memory-bound ones keep gaining until the L2 banks become the limit.
print(f"{'workload':<10}" + "".join(f"{p:>10}" for p in (1, 2, 4, 8)))
for spec in builtin_suite():
    ipc = [run(with_override(base, "mem_ports", p), spec).ipc for p in (1, 2, 4, 8)]
    print(f"{spec.name:<10}" + "".join(f"{x / ipc[0]:>9.2f}x" for x in ipc))
