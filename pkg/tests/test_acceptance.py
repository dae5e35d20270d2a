"""Acceptance suite: one test per criterion, printing one PASS line each.

Measured-performance criteria embed host premises from their statements
(multicore for the contention test, last-level cache smaller than the L=14
working set for the cache cliff); when a premise does not hold on the host
the test skips and names the premise. Run with ``pytest -v -s`` to see the
per-criterion lines.
"""

import os
import time

import numpy as np
import pytest

from qcdperf import membench, perfmodel as pm
from qcdperf.cli import INVERTER_CSV_HEADER, main, read_manifest
from qcdperf.lattice import LatticeGeometry, LayoutPolicy, MILC_SITE_BYTES
from qcdperf.membench import (
    AccessPattern,
    Kernel,
    MachineProfile,
    Pattern,
    detect_effective_cache_bytes,
    run_qcdstream_suite,
    run_smp_contention,
)
from qcdperf.solver import EVEN, FermionField, apply_normal, congrad, congrad_flops, \
    dense_oracle, random_gauge

QCDSTREAM_POOL = 128 * 1024 * 1024  # >= 64 MiB as required, above this host's LLC


def _report(num: int, text: str) -> None:
    print(f"\nACCEPTANCE {num:2d} PASS: {text}")


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # compile the JIT kernels outside any timed window
    geom = LatticeGeometry.hypercube(2)
    U = random_gauge(geom, LayoutPolicy.field_major(), 1)
    b = FermionField.random(geom, EVEN, 2)
    congrad(U, b, mass=0.5, tol=1e-3, max_iter=5)
    run_qcdstream_suite(Kernel.MATVEC, [AccessPattern(Pattern.SEQUENTIAL)],
                        1 << 20, machine=MachineProfile(l2_bytes=1 << 16))
    run_qcdstream_suite(Kernel.MATMAT, [AccessPattern(Pattern.SEQUENTIAL)],
                        1 << 20, machine=MachineProfile(l2_bytes=1 << 16))


def _solve_rate_mflops(L: int, layout: LayoutPolicy, seed: int = 1234,
                       iters: int = 30) -> float:
    """Best observed solve rate, following the membench timing discipline:
    repeat the fixed-iteration solve until at least 0.3 s has been measured
    (and at least 3 runs), report the best. Small lattices finish one solve
    in about a millisecond, far below scheduler noise on shared hosts."""
    geom = LatticeGeometry.hypercube(L)
    U = random_gauge(geom, layout, seed + 1000 * L)
    b = FermionField.random(geom, EVEN, seed + 1000 * L + 7)
    congrad(U, b, mass=0.1, tol=1e-30, max_iter=2)  # warm this geometry's path
    best = 0.0
    spent = 0.0
    runs = 0
    while spent < 0.3 or runs < 3:
        _, rep = congrad(U, b, mass=0.1, tol=1e-30, max_iter=iters)
        assert rep.iterations == iters
        best = max(best, rep.mflops)
        spent += rep.elapsed_sec
        runs += 1
    return best


def test_criterion_01_solver_oracle_correctness():
    t0 = time.perf_counter()
    mass, tol = 0.3, 1e-5
    worst_apply = worst_solve = worst_resid = 0.0
    for L in (2, 4):
        geom = LatticeGeometry.hypercube(L)
        for seed in range(10):
            U = random_gauge(geom, LayoutPolicy.field_major(), 31 * seed + L)
            A = dense_oracle(U, mass)
            x = FermionField.random(geom, EVEN, 7 * seed + 1)
            applied = apply_normal(U, x, mass).data.ravel()
            expected = A @ x.data.astype(np.complex128).ravel()
            rel = np.linalg.norm(applied - expected) / np.linalg.norm(expected)
            worst_apply = max(worst_apply, rel)
            assert rel < 1e-5

            b = FermionField.random(geom, EVEN, 7 * seed + 2)
            xs, rep = congrad(U, b, mass=mass, tol=tol, max_iter=500)
            assert rep.converged
            dense = np.linalg.solve(A, b.data.astype(np.complex128).ravel())
            rel = np.linalg.norm(xs.data.ravel() - dense) / np.linalg.norm(dense)
            worst_solve = max(worst_solve, rel)
            assert rel < 1e-4

            ax = apply_normal(U, xs, mass)
            true_rel = float(np.linalg.norm((b.data - ax.data).astype(np.complex128))
                             / np.linalg.norm(b.data.astype(np.complex128)))
            worst_resid = max(worst_resid, true_rel)
            assert true_rel <= 2 * tol
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    _report(1, f"oracle agreement on 2^4/4^4 x10 seeds: dslash {worst_apply:.2e} "
               f"(<1e-5), solve {worst_solve:.2e} (<1e-4), true residual "
               f"{worst_resid:.2e} (<=2tol), {elapsed:.1f}s (<30s)")


def test_criterion_02_flop_accounting_exact():
    geom = LatticeGeometry.hypercube(4)
    U = random_gauge(geom, LayoutPolicy.field_major(), 13)
    b = FermionField.random(geom, EVEN, 14)
    configs = [(1.0, 1e-6, 100), (0.25, 1e-5, 100), (0.1, 1e-30, 75)]
    for mass, tol, cap in configs:
        _, rep = congrad(U, b, mass=mass, tol=tol, max_iter=cap)
        assert rep.flops == congrad_flops(rep.iterations, rep.recomputes,
                                          geom.half_volume)
    _report(2, f"SolveReport.flops matches the frozen per-iteration formula "
               f"(integer equality) on {len(configs)} configurations")


def test_criterion_03_layout_invariance_and_benefit():
    # bitwise: identical residual sequences under both layouts
    geom = LatticeGeometry.hypercube(4)
    bs = FermionField.random(geom, EVEN, 5)
    bf = FermionField.random(geom, EVEN, 5)
    Us = random_gauge(geom, LayoutPolicy.site_major(milc_emulation=True), 3)
    Uf = random_gauge(geom, LayoutPolicy.field_major(), 3)
    xs, rs = congrad(Us, bs, mass=0.1, tol=1e-6, max_iter=300)
    xf, rf = congrad(Uf, bf, mass=0.1, tol=1e-6, max_iter=300)
    assert rs.residual_history == rf.residual_history
    assert np.array_equal(xs.data, xf.data)

    # benefit at L=14: field major vs the padded MILC-like site major the
    # original comparison was made against
    site = _solve_rate_mflops(14, LayoutPolicy.site_major(milc_emulation=True))
    field = _solve_rate_mflops(14, LayoutPolicy.field_major())
    assert field >= site
    _report(3, f"residual sequences bitwise identical across layouts; L=14 "
               f"field-major {field:.0f} MFlop/s >= site-major {site:.0f}")


def test_criterion_04_cache_cliff():
    # configured cache = the host's real L2 (the MachineProfile knob); the
    # last-level estimate guards the criterion's host premise
    l2 = membench.host_l2_bytes()
    llc = detect_effective_cache_bytes()
    ws14 = MILC_SITE_BYTES * 14**4
    if max(l2, llc) >= ws14:
        pytest.skip(f"criterion premise not met: host L2/L3 "
                    f"({l2 >> 20}/{llc >> 20} MiB) is not smaller than the "
                    f"L=14 working set ({ws14 >> 20} MiB)")
    machine = MachineProfile(label="cliff", l2_bytes=l2)
    sizes = (2, 4, 6, 8, 10, 12, 14)
    layout = LayoutPolicy.site_major(milc_emulation=True)
    rates = {L: _solve_rate_mflops(L, layout) for L in sizes}
    assert rates[4] >= 1.2 * rates[14]

    working = {L: MILC_SITE_BYTES * L**4 for L in sizes}
    expected_tick = next(i for i, L in enumerate(sizes)
                         if working[L] > machine.l2_bytes)
    # reported crossover: on the falling side of the curve, the split with
    # the largest separation of regime means (the rising side below the peak
    # is the small-lattice dispatch-bound regime)
    series = [rates[L] for L in sizes]
    peak_idx = max(range(len(series)), key=series.__getitem__)
    measured_tick = max(
        range(peak_idx + 1, len(series)),
        key=lambda k: (sum(series[peak_idx:k]) / (k - peak_idx)
                       - sum(series[k:]) / (len(series) - k)))
    assert abs(measured_tick - expected_tick) <= 1
    curve = " ".join(f"{L}:{rates[L]:.0f}" for L in sizes)
    _report(4, f"MILC-emulated cliff: L=4 {rates[4]:.0f} >= 1.2x L=14 "
               f"{rates[14]:.0f} MFlop/s; crossover at n={sizes[measured_tick]}, "
               f"working set first exceeds the configured {l2 >> 20} MiB cache "
               f"at n={sizes[expected_tick]}; curve [{curve}]")


def test_criterion_05_qcdstream_ordering():
    machine = MachineProfile(label="acceptance")
    patterns = [AccessPattern(Pattern.IN_CACHE), AccessPattern(Pattern.SEQUENTIAL),
                AccessPattern(Pattern.STRIDED), AccessPattern(Pattern.MAPPED)]
    frac = {}
    rates = {}
    for kernel in (Kernel.MATVEC, Kernel.MATMAT):
        s = {p.pattern: p.mflops for p in
             run_qcdstream_suite(kernel, patterns, QCDSTREAM_POOL, machine=machine)}
        assert s["incache"] >= s["sequential"] >= s["strided"]
        assert abs(s["mapped"] - s["strided"]) <= 0.25 * s["strided"]
        frac[kernel] = s["strided"] / s["incache"]
        rates[kernel] = s
    assert frac[Kernel.MATMAT] > frac[Kernel.MATVEC]
    mv, mm = rates[Kernel.MATVEC], rates[Kernel.MATMAT]
    _report(5, f"pattern ordering holds at {QCDSTREAM_POOL >> 20} MiB pools; "
               f"matvec {mv['incache']:.0f}/{mv['sequential']:.0f}/"
               f"{mv['strided']:.0f}/{mv['mapped']:.0f}, matmat "
               f"{mm['incache']:.0f}/{mm['sequential']:.0f}/{mm['strided']:.0f}/"
               f"{mm['mapped']:.0f} MFlop/s; strided retention "
               f"{frac[Kernel.MATMAT]:.2f} > {frac[Kernel.MATVEC]:.2f}")


def test_criterion_06_smp_contention():
    ncpu = os.cpu_count() or 1
    if ncpu < 2:
        pytest.skip(f"criterion premise not met: contention needs a multicore "
                    f"host, this one exposes {ncpu} CPU")
    seq = run_smp_contention(Kernel.MATVEC, AccessPattern(Pattern.SEQUENTIAL), 2,
                             QCDSTREAM_POOL)
    cpy = run_smp_contention(Kernel.COPY, AccessPattern(Pattern.SEQUENTIAL), 2,
                             QCDSTREAM_POOL)
    inc = run_smp_contention(Kernel.MATVEC, AccessPattern(Pattern.IN_CACHE), 2,
                             QCDSTREAM_POOL)
    assert seq.efficiency < 1.0
    assert cpy.efficiency < 1.0
    assert inc.efficiency >= 0.9
    _report(6, f"2-worker efficiency: sequential {seq.efficiency:.2f} < 1, "
               f"copy {cpy.efficiency:.2f} < 1, in-cache {inc.efficiency:.2f} >= 0.9")


def test_criterion_07_model_latency_sensitivity():
    t0 = time.perf_counter()
    cfg = pm.ClusterConfig.homogeneous(pm.REFERENCE_NODE, 32, pm.REFERENCE_LINK)
    points = pm.sweep_latency(cfg, range(0, 401, 50), 14)
    dslash = [p.dslash_total_us for p in points]
    congrad_rate = [p.congrad_mflops_per_node for p in points]
    spread = (max(dslash) - min(dslash)) / min(dslash)
    assert spread < 0.05
    assert all(b < a for a, b in zip(congrad_rate, congrad_rate[1:]))
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(7, f"0-400us injected delay at P=32: D-slash varies {100 * spread:.1f}% "
               f"(<5%), CONGRAD strictly decreasing "
               f"{congrad_rate[0]:.1f}->{congrad_rate[-1]:.1f} MFlop/s/node, "
               f"{elapsed * 1e3:.0f} ms (<1s)")


def test_criterion_08_model_substitution_ordering():
    slow = pm.model_substitution(pm.REFERENCE_NODE, pm.TABLE4_PROFILES["i850E"], 32,
                                 pm.REFERENCE_LINK, 14)
    mild = pm.model_substitution(pm.REFERENCE_NODE, pm.TABLE4_PROFILES["i860"], 32,
                                 pm.REFERENCE_LINK, 14)
    assert slow.degradation >= 3 * mild.degradation
    _report(8, f"one i850E node degrades the 32-node cluster by "
               f"{100 * slow.degradation:.2f}% vs {100 * mild.degradation:.3f}% "
               f"for i860 ({slow.degradation / mild.degradation:.0f}x >= 3x)")


def test_criterion_09_model_scaling_shape():
    counts = [1, 2, 4, 8, 16, 32, 64, 128]
    sizes = (4, 8, 10, 12, 14)
    curves = {L: pm.sweep_scaling(pm.SCALING_NODE, pm.SCALING_LINK, counts, L)
              for L in sizes}
    for L, pts in curves.items():
        rates = [p.mflops_per_node for p in pts]
        assert all(b <= a for a, b in zip(rates, rates[1:]))  # non-increasing
        tail = rates[counts.index(16):]
        assert (max(tail) - min(tail)) / min(tail) <= 0.005  # constant >= 16
        assert [p.comm_dims for p in pts[:5]] == [0, 1, 2, 3, 4]  # exact
    for i in range(1, len(counts)):  # strictly ordered by L at multi-node points
        ordered = [curves[L][i].mflops_per_node for L in sizes]
        assert all(b > a for a, b in zip(ordered, ordered[1:]))
    at16 = {L: curves[L][4].mflops_per_node for L in sizes}
    _report(9, f"fixed-sublattice curves 1-128 nodes: non-increasing, flat "
               f"beyond 16 nodes (<=0.5%), strictly L-ordered "
               f"(at 16 nodes: {', '.join(f'L={L}:{at16[L]:.1f}' for L in sizes)}), "
               f"comm_dims 0,1,2,3,4 over 1,2,4,8,16")


def test_criterion_10_manifest_determinism(tmp_path):
    def rows_without(path, timing_cols):
        out = []
        for line in open(path).read().strip().splitlines():
            cells = line.split(",")
            out.append(tuple(c for i, c in enumerate(cells) if i not in timing_cols))
        return out

    # qcdstream through manifest replay (pool small enough to stay quick)
    qs = tmp_path / "qs.csv"
    assert main(["qcdstream", "--all-patterns", "--pool", "4M", "--l2", "128k",
                 "--seed", "99", "--label", "det", "--out", str(qs)]) == 0
    qs2 = tmp_path / "qs_replay.csv"
    assert main(["replay", str(qs) + ".manifest", "--out", str(qs2)]) == 0
    assert rows_without(qs, {5, 8, 9}) == rows_without(qs2, {5, 8, 9})

    # inverter sweep: everything but wall-clock columns is bitwise stable
    inv = tmp_path / "inv.csv"
    assert main(["inverter-sweep", "--sizes", "2,4", "--layouts", "both",
                 "--mass", "0.5", "--tol", "1e-5", "--seed", "77",
                 "--out", str(inv)]) == 0
    inv2 = tmp_path / "inv_replay.csv"
    assert main(["replay", str(inv) + ".manifest", "--out", str(inv2)]) == 0
    assert open(inv).readline().strip() == INVERTER_CSV_HEADER
    assert rows_without(inv, {7, 8}) == rows_without(inv2, {7, 8})

    # analytic model: the whole file reproduces bitwise
    mdl = tmp_path / "model.csv"
    assert main(["model", "latency", "--nodes", "32", "--steps", "5",
                 "--out", str(mdl)]) == 0
    mdl2 = tmp_path / "model_replay.csv"
    assert main(["replay", str(mdl) + ".manifest", "--out", str(mdl2)]) == 0
    assert open(mdl).read() == open(mdl2).read()

    for stem in (qs, inv, mdl):
        manifest = read_manifest(str(stem) + ".manifest")
        assert manifest["out"] == str(stem)
    _report(10, "manifest replays reproduce every non-timing column bitwise "
                "(qcdstream, inverter sweep, model)")
