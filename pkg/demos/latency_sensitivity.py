"""Injected first-packet delay: hopping term versus full CG iteration.

The halo exchange moves ~33 KB faces whose transfer time dwarfs any
per-message delay, so the hopping term barely notices added latency. The
global sums are 8-byte messages climbing a 2*ceil(log2 P)-hop tree three
times per iteration; they absorb the delay in full, and the iteration rate
falls accordingly.
"""

from qcdperf import perfmodel as pm

NODES, L = 32, 14
cfg = pm.ClusterConfig.homogeneous(pm.REFERENCE_NODE, NODES, pm.REFERENCE_LINK)
points = pm.sweep_latency(cfg, range(0, 401, 50), L)

print(f"{NODES} nodes, {L}^4 sublattice per process\n")
print(f"{'delay us':>8s} {'hop term ms':>12s} {'CG iter ms':>11s} "
      f"{'MFlop/s per node':>17s}")
for p in points:
    print(f"{p.injected_delay_us:8.0f} {p.dslash_total_us / 1e3:12.2f} "
          f"{p.congrad_iter_us / 1e3:11.2f} {p.congrad_mflops_per_node:17.1f}")

d0, dN = points[0], points[-1]
print(f"\nhopping term moved {100 * (dN.dslash_total_us / d0.dslash_total_us - 1):.1f}% "
      f"over 0-400 us; the full iteration lost "
      f"{100 * (1 - dN.congrad_mflops_per_node / d0.congrad_mflops_per_node):.1f}%")
