"""Compare the three arbitration policies where they actually differ.

With L3 enabled and 4 channels, the 8 L3 banks share 4 output ports, so the
policy decides which banks send each cycle. Elsewhere every boundary is
one-to-one and the policies agree exactly.
"""

from memsim import HierarchyConfig, Policy, builtin_suite, run, with_override
from memsim.interconnect import make_arbiter

# The arbiters on their own: eight saturated inputs, four outputs, two clusters.
for policy in (Policy.CROSSBAR, Policy.SOURCE_RR, Policy.DISTRIBUTED_RR):
    arb = make_arbiter(policy, 8, 4, 2)
    demands = [i % 4 for i in range(8)]
    cycles = [arb.arbitrate([True] * 8, demands) for _ in range(2)]
    print(f"{policy.value:<15} cycle 0 {cycles[0]}\n{'':<15} cycle 1 {cycles[1]}")
print()

base = with_override(with_override(HierarchyConfig(), "l3_enabled", True), "mem_ports", 4)
print(f"{'workload':<10}{'crossbar':>10}{'source_rr':>11}{'distr_rr':>10}{'spread':>8}")
for spec in builtin_suite():
    ipc = [run(with_override(base, "arbitration", p), spec).ipc for p in ("crossbar", "source_rr", "distributed_rr")]
    spread = (max(ipc) - min(ipc)) / min(ipc)
    print(f"{spec.name:<10}" + "".join(f"{x:>10.4f}" for x in ipc) + f"{spread:>8.1%}")
