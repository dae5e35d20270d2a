"""Modeled fixed-sublattice scaling over 1 to 128 nodes.

Each process keeps an L^4 sublattice while the node count grows, so the
communicated dimensions climb 0 -> 4 (at 2, 4, 8, and 16 nodes) and then
saturate: per-node throughput steps down with each new halo direction and
flattens beyond 16 nodes. Larger sublattices scale better, surface to
volume being what it is.
"""

from qcdperf import perfmodel as pm

counts = [1, 2, 4, 8, 16, 32, 64, 128]
sizes = (4, 8, 10, 12, 14)

print("MFlop/s per node (one process per node, flat-rate surface-to-volume "
      "reference config)\n")
header = f"{'nodes':>6s} {'dims':>4s} " + " ".join(f"L={L:>4d}" for L in sizes)
print(header)
curves = {L: pm.sweep_scaling(pm.SCALING_NODE, pm.SCALING_LINK, counts, L)
          for L in sizes}
for i, count in enumerate(counts):
    row = " ".join(f"{curves[L][i].mflops_per_node:6.1f}" for L in sizes)
    print(f"{count:6d} {curves[sizes[0]][i].comm_dims:4d} {row}")

print("\nper-node efficiency at 128 nodes, by sublattice size:")
for L in sizes:
    eff = curves[L][-1].mflops_per_node / curves[L][0].mflops_per_node
    print(f"  L={L:2d}: {100 * eff:5.1f}%")

print("\ntwo processes per node (55% memory-bus scaling, shared adapter):")
two = pm.sweep_scaling(pm.SCALING_NODE, pm.SCALING_LINK, counts, 14,
                       procs_per_node=2)
for i, count in enumerate(counts):
    print(f"{count:6d} nodes: {two[i].mflops_per_node:6.1f} MFlop/s per node "
          f"({two[i].nprocs} processes)")
