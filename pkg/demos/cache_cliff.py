"""Inverter throughput versus lattice size: the cache cliff.

Sweeps the CG inverter over n^4 lattices with site records padded to the
full 1656-byte MILC site, so the working set crosses the cache hierarchy
the way the original production code's did. Throughput peaks while the
lattice fits in cache and falls once it spills.

Usage: python demos/cache_cliff.py [max_n, default 14]
"""

import sys

from qcdperf.lattice import LayoutPolicy, MILC_SITE_BYTES
from qcdperf.membench import detect_effective_cache_bytes, host_l2_bytes
from qcdperf.solver import benchmark_inverter

max_n = int(sys.argv[1]) if len(sys.argv) > 1 else 14
sizes = [n for n in (2, 4, 6, 8, 10, 12, 14) if n <= max_n]
layout = LayoutPolicy.site_major(milc_emulation=True)

l2 = host_l2_bytes()
llc = detect_effective_cache_bytes()
print(f"host caches: L2 ~{l2 >> 10} KiB, effective last level ~{llc >> 20} MiB")
print(f"site record: {MILC_SITE_BYTES} bytes (MILC emulation)\n")

samples = benchmark_inverter(sizes, [layout], mass=0.1, tol=1e-30, max_iter=30,
                             seed=1234)
print(f"{'n':>3s} {'working set':>12s} {'MFlop/s':>9s}  {'regime'}")
for s in samples:
    ws = s.working_set_bytes
    if ws <= l2:
        regime = "fits L2"
    elif ws <= llc:
        regime = "fits last-level cache"
    else:
        regime = "main memory"
    print(f"{s.L:3d} {ws:12,d} {s.report.mflops:9.0f}  {regime}")

peak = max(samples, key=lambda s: s.report.mflops)
last = samples[-1]
print(f"\npeak at n={peak.L}; n={last.L} runs at "
      f"{100 * last.report.mflops / peak.report.mflops:.0f}% of peak")
