"""SU(3) kernel throughput under the four memory-access patterns.

Runs the matrix-vector and matrix-matrix kernels against a large operand
pool addressed in-cache, sequentially, with a large constant stride, and
through a random mapping, then prints the table next to the shipped
2002-era reference numbers. The in-cache rate shows the compute ceiling;
the other rows show what the memory system leaves of it.

Usage: python demos/qcdstream_patterns.py [pool_bytes, default 128M]
"""

import sys
from importlib import resources

from qcdperf.membench import (
    AccessPattern,
    Kernel,
    MachineProfile,
    Pattern,
    run_qcdstream_suite,
)

pool = int(sys.argv[1]) if len(sys.argv) > 1 else 128 * 1024 * 1024
machine = MachineProfile(label="demo")
patterns = [AccessPattern(Pattern.IN_CACHE), AccessPattern(Pattern.SEQUENTIAL),
            AccessPattern(Pattern.STRIDED), AccessPattern(Pattern.MAPPED)]

print(f"operand pool: {pool >> 20} MiB, configured L2 {machine.l2_bytes >> 10} KiB\n")
results = {}
for kernel in (Kernel.MATVEC, Kernel.MATMAT):
    results[kernel] = run_qcdstream_suite(kernel, patterns, pool, machine=machine)

ref = {}
ref_path = resources.files("qcdperf").joinpath("data/reference/qcdstream_2002.csv")
for line in ref_path.read_text().splitlines():
    if line.startswith(("#", "host")):
        continue
    host, kernel, pattern, mflops = line.split(",")
    if host.startswith("Xeon"):
        ref[(kernel, pattern)] = float(mflops)

print(f"{'kernel':8s} {'pattern':11s} {'MFlop/s':>9s} {'MB/s':>9s}   2.0 GHz Xeon (2002)")
for kernel, samples in results.items():
    for s in samples:
        r = ref.get((s.kernel, s.pattern))
        print(f"{s.kernel:8s} {s.pattern:11s} {s.mflops:9.0f} {s.mbytes_per_sec:9.0f}"
              f"   {r:8.0f}" if r else f"{s.kernel:8s} {s.pattern:11s} {s.mflops:9.0f}")
    print()

for kernel, samples in results.items():
    by = {s.pattern: s.mflops for s in samples}
    print(f"{kernel.value}: strided keeps {100 * by['strided'] / by['incache']:.0f}% "
          f"of the in-cache rate; mapped is within "
          f"{100 * abs(by['mapped'] - by['strided']) / by['strided']:.0f}% of strided")
