"""Independent workers fighting over one memory bus.

Dual-socket nodes of the measured era shared a single front-side bus, so a
second independent process bought far less than 2x on memory-bound kernels.
This experiment forks N workers with private operand pools behind a start
barrier and reports aggregate scaling against the single-worker rate.

On a single-hardware-thread host the workers time-slice and every pattern
lands near 1/N; the contention signal needs real cores.
"""

import os

from qcdperf.membench import AccessPattern, Kernel, Pattern, run_smp_contention

POOL = 128 * 1024 * 1024
ncpu = os.cpu_count() or 1
print(f"host exposes {ncpu} hardware thread(s)\n")

experiments = [
    (Kernel.MATVEC, Pattern.IN_CACHE, "compute-bound, private working sets"),
    (Kernel.MATVEC, Pattern.SEQUENTIAL, "streaming, shared memory bus"),
    (Kernel.COPY, Pattern.SEQUENTIAL, "pure bandwidth"),
]

print(f"{'kernel':8s} {'pattern':11s} {'workers':>7s} {'efficiency':>10s}  note")
for kernel, pattern, note in experiments:
    for workers in (1, 2):
        res = run_smp_contention(kernel, AccessPattern(pattern), workers, POOL)
        print(f"{kernel.value:8s} {pattern.value:11s} {workers:7d} "
              f"{res.efficiency:10.2f}  {note if workers == 2 else ''}")
