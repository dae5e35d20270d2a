"""Command-line front end.

Every command writes its CSV next to a flat key=value manifest recording the
command line, seeds, and all resolved defaults; ``qcdperf replay <manifest>``
re-executes the run and reproduces every deterministic column bitwise (wall
clock timings and the rates derived from them are the only exceptions).

Exit codes: 0 success, 1 numerical or convergence failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import os
import re
import shlex
import sys
from importlib import resources

from . import __version__, membench, perfmodel
from .lattice import Layout, LayoutPolicy
from .membench import (
    AccessPattern,
    ConfigurationError,
    Kernel,
    MachineProfile,
    Pattern,
    run_smp_contention,
    run_qcdstream_suite,
    write_samples_csv,
)
from .perfmodel import (
    ConfigError,
    ModelError,
    parse_cluster_config,
    write_cluster_config,
)

INVERTER_CSV_HEADER = ("L,layout,mass,tol,iters,residual,flops,elapsed_sec,"
                       "mflops,converged,working_set_bytes")
SMP_CSV_HEADER = ("label,kernel,pattern,pool_bytes,workers,worker_id,reps,"
                  "elapsed_sec,flops,mflops,mbps,aggregate_mflops,single_mflops,efficiency")
SUBSTITUTE_CSV_HEADER = "profile,nodes,L,cluster_mflops,baseline_mflops,degradation"

#: known CSV schemas for the schema-check subcommand, by header line.
CSV_SCHEMAS = {
    membench.CSV_HEADER: "qcdstream-v1",
    INVERTER_CSV_HEADER: "inverter-v1",
    SMP_CSV_HEADER: "smp-v1",
    perfmodel.SCALING_CSV_HEADER: "model-scaling-v1",
    perfmodel.LATENCY_CSV_HEADER: "model-latency-v1",
    SUBSTITUTE_CSV_HEADER: "model-substitute-v1",
}

_SIZE_RE = re.compile(r"^(\d+)([kKmMgG]?)$")
_SIZE_MULT = {"": 1, "k": 1024, "m": 1024**2, "g": 1024**3}


def parse_size(text: str) -> int:
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise argparse.ArgumentTypeError(f"bad size {text!r} (use e.g. 64M, 1G)")
    return int(m.group(1)) * _SIZE_MULT[m.group(2).lower()]


def parse_us(text: str) -> float:
    t = text.strip().lower()
    if t.endswith("us"):
        t = t[:-2]
    elif t.endswith("ms"):
        return float(t[:-2]) * 1000.0
    return float(t)


def parse_int_list(text: str) -> list[int]:
    """Comma list or an inclusive power-of-two range like 1..128."""
    if ".." in text:
        lo, hi = (int(x) for x in text.split("..", 1))
        out, v = [], lo
        while v <= hi:
            out.append(v)
            v *= 2
        return out
    return [int(x) for x in text.split(",") if x]


def default_out_dir() -> str:
    return os.environ.get("QCDPERF_OUT_DIR", ".")


def _out_path(args, name: str) -> str:
    if args.out:
        path = args.out
    else:
        path = os.path.join(default_out_dir(), name)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def write_manifest(path, command: str, argv, resolved: dict) -> str:
    mpath = path + ".manifest"
    lines = [
        "manifest_version = 1",
        f"toolkit_version = {__version__}",
        f"command = {command}",
        f"argv = {shlex.join(argv)}",
        f"timestamp = {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
        f"out = {path}",
    ]
    host = MachineProfile().metadata()
    lines += [f"host.{k} = {v}" for k, v in sorted(host.items())]
    lines += [f"resolved.{k} = {v}" for k, v in sorted(resolved.items())]
    with open(mpath, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return mpath


def read_manifest(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out


_PATTERNS = {p.value: p for p in Pattern}
_KERNELS = {k.value: k for k in Kernel}


def _machine(args) -> MachineProfile:
    return MachineProfile(label=getattr(args, "label", "") or "",
                          cache_line_bytes=args.cache_line, l2_bytes=args.l2)


def _add_machine_flags(p):
    p.add_argument("--label", default="", help="host label for CSV rows")
    p.add_argument("--l2", type=parse_size, default=512 * 1024,
                   help="configured L2 size (in-cache window sizing)")
    p.add_argument("--cache-line", type=parse_size, default=64)
    p.add_argument("--out", default="", help="output CSV path")
    p.add_argument("--gnuplot", action="store_true", help="emit a plot script next to the CSV")
    p.add_argument("--compare", action="store_true",
                   help="overlay 2002-era reference data in the plot script")


def _reference_path(name: str) -> str:
    return str(resources.files("qcdperf").joinpath(f"data/reference/{name}"))


def _emit_gnuplot(path, lines) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_qcdstream(args, argv) -> int:
    machine = _machine(args)
    kernel = _KERNELS[args.kernel]
    if args.all_patterns:
        tags = [Pattern.IN_CACHE, Pattern.SEQUENTIAL, Pattern.STRIDED, Pattern.MAPPED]
    else:
        tags = [_PATTERNS[args.pattern]]
    record = membench.kernel_record_bytes(kernel)
    stride_elems = None
    if args.stride is not None:
        if args.stride <= machine.cache_line_bytes:
            print(f"error: strided stride of {args.stride} bytes must strictly exceed "
                  f"one cache line ({machine.cache_line_bytes} bytes)", file=sys.stderr)
            return 2
        stride_elems = max(1, round(args.stride / record))
    patterns = [AccessPattern(t, stride_elems=stride_elems if t is Pattern.STRIDED else None,
                              seed=args.seed) for t in tags]
    samples = run_qcdstream_suite(kernel, patterns, args.pool, args.reps, machine,
                                  args.seed, calibrate=not args.exact_reps)
    out = _out_path(args, "qcdstream.csv")
    write_samples_csv(out, samples)
    if args.profile_json:
        machine.write_json(args.profile_json)
    write_manifest(out, "qcdstream", argv, {
        "kernel": args.kernel, "patterns": ",".join(t.value for t in tags),
        "pool_bytes": args.pool, "reps": args.reps, "seed": args.seed,
        "executed_reps": samples[0].reps,
        "stride_bytes": args.stride if args.stride is not None else "default",
        "l2_bytes": machine.l2_bytes, "cache_line_bytes": machine.cache_line_bytes})
    if args.gnuplot:
        gp = [f'set datafile separator ","', 'set ylabel "MFlop/s"',
              'set style data histograms', 'set style fill solid 0.6',
              f'plot "{out}" every ::1 using 9:xtic(3) title "{args.kernel} (this host)"']
        if args.compare:
            ref = _reference_path("qcdstream_2002.csv")
            gp.append(f'replot "{ref}" every ::1 using 4:xtic(3) '
                      f'title "2.0 GHz Xeon, 2002 (reference)"')
        _emit_gnuplot(out + ".gp", gp)
    for s in samples:
        print(f"{s.kernel:7s} {s.pattern:10s} {s.mflops:9.1f} MFlop/s "
              f"({s.mbytes_per_sec:8.1f} MB/s, reps={s.reps})")
    return 0


def cmd_stream(args, argv) -> int:
    machine = _machine(args)
    sample = membench.run_stream_copy(args.bytes, args.reps, machine, args.seed,
                                      calibrate=not args.exact_reps)
    out = _out_path(args, "stream.csv")
    write_samples_csv(out, [sample])
    write_manifest(out, "stream", argv, {"bytes": args.bytes, "reps": args.reps,
                                         "executed_reps": sample.reps,
                                         "seed": args.seed})
    print(f"copy {sample.mbytes_per_sec:.1f} MB/s (reps={sample.reps})")
    return 0


def cmd_inverter_sweep(args, argv) -> int:
    from .solver import benchmark_inverter  # deferred: pulls in the JIT

    sizes = parse_int_list(args.sizes)
    if any(s % 2 or s < 2 for s in sizes):
        print("error: sizes must be even and >= 2", file=sys.stderr)
        return 2
    layouts = []
    if args.layouts in ("site", "both"):
        layouts.append(LayoutPolicy.site_major(milc_emulation=args.emulate_milc_site))
    if args.layouts in ("field", "both"):
        layouts.append(LayoutPolicy.field_major())
    samples = benchmark_inverter(sizes, layouts, mass=args.mass, tol=args.tol,
                                 max_iter=args.max_iter, seed=args.seed)
    out = _out_path(args, "inverter.csv")
    new = not os.path.exists(out) or os.path.getsize(out) == 0
    failed = False
    with open(out, "a") as fh:
        if new:
            fh.write(INVERTER_CSV_HEADER + "\n")
        for s in samples:
            r = s.report
            tag = "site" if s.layout.tag is Layout.SITE_MAJOR else "field"
            fh.write(f"{s.L},{tag},{s.mass},{s.tol},{r.iterations},"
                     f"{r.final_relative_residual:.6e},{r.flops},{r.elapsed_sec:.6f},"
                     f"{r.mflops:.2f},{int(r.converged)},{s.working_set_bytes}\n")
            failed = failed or not r.converged
    write_manifest(out, "inverter-sweep", argv, {
        "sizes": args.sizes, "layouts": args.layouts, "mass": args.mass,
        "tol": args.tol, "max_iter": args.max_iter, "seed": args.seed,
        "emulate_milc_site": args.emulate_milc_site})
    if args.gnuplot:
        gp = [f'set datafile separator ","', "set logscale x",
              'set xlabel "working set (bytes/site x L^4)"', 'set ylabel "MFlop/s"',
              f'plot "{out}" every ::1 using ($1**4*{1656 if args.emulate_milc_site else 312}):9 '
              'with linespoints title "inverter"']
        _emit_gnuplot(out + ".gp", gp)
    for s in samples:
        r = s.report
        tag = "site" if s.layout.tag is Layout.SITE_MAJOR else "field"
        flag = "" if r.converged else "  [not converged]"
        print(f"L={s.L:2d} {tag:5s} iters={r.iterations:4d} {r.mflops:8.1f} MFlop/s{flag}")
    return 1 if failed else 0


def cmd_smp(args, argv) -> int:
    machine = _machine(args)
    kernel = _KERNELS[args.kernel]
    pattern = AccessPattern(_PATTERNS[args.pattern], seed=args.seed)
    result = run_smp_contention(kernel, pattern, args.workers, args.pool, machine,
                                args.seed, reps=args.reps,
                                calibrate=not args.exact_reps)
    out = _out_path(args, "smp.csv")
    base = result.single
    base_rate = base.mflops if kernel is not Kernel.COPY else base.mbytes_per_sec
    new = not os.path.exists(out) or os.path.getsize(out) == 0
    with open(out, "a") as fh:
        if new:
            fh.write(SMP_CSV_HEADER + "\n")
        for wid, s in enumerate(result.samples):
            fh.write(f"{machine.label},{s.kernel},{s.pattern},{s.pool_bytes},"
                     f"{result.workers},{wid},{s.reps},{s.elapsed_sec:.6f},{s.flops},"
                     f"{s.mflops:.2f},{s.mbytes_per_sec:.2f},{result.aggregate_mflops:.2f},"
                     f"{base_rate:.2f},{result.efficiency:.4f}\n")
    write_manifest(out, "smp", argv, {"kernel": args.kernel, "pattern": args.pattern,
                                      "workers": args.workers, "pool_bytes": args.pool,
                                      "executed_reps": result.single.reps,
                                      "seed": args.seed})
    print(f"workers={result.workers} efficiency={result.efficiency:.3f}")
    return 0


def _load_model_config(args, default_node, default_link):
    if args.config:
        cfg = parse_cluster_config(args.config)
        if args.nodes and args.nodes != len(cfg.nodes):
            cfg = perfmodel.ClusterConfig.homogeneous(
                cfg.nodes[0], args.nodes, cfg.link, procs_per_node=cfg.procs_per_node,
                smp_efficiency=cfg.smp_efficiency, site_bytes=cfg.site_bytes)
        return cfg
    return perfmodel.ClusterConfig.homogeneous(
        default_node, args.nodes or 32, default_link,
        procs_per_node=args.procs_per_node)


def cmd_model(args, argv) -> int:
    if args.experiment == "latency":
        cfg = _load_model_config(args, perfmodel.REFERENCE_NODE, perfmodel.REFERENCE_LINK)
        delays = [args.max_delay * i / max(args.steps - 1, 1) for i in range(args.steps)]
        points = perfmodel.sweep_latency(cfg, delays, args.sublattice)
        out = _out_path(args, "model_latency.csv")
        with open(out, "w") as fh:
            fh.write(perfmodel.LATENCY_CSV_HEADER + "\n")
            for p in points:
                fh.write(p.csv_row() + "\n")
        write_manifest(out, "model latency", argv, {
            "nodes": len(cfg.nodes), "sublattice": args.sublattice,
            "max_delay_us": args.max_delay, "steps": args.steps})
        if args.gnuplot:
            _emit_gnuplot(out + ".gp", [
                'set datafile separator ","', 'set xlabel "injected delay (us)"',
                'set ylabel "MFlop/s per node"',
                f'plot "{out}" every ::1 using 1:4 with linespoints title "CONGRAD"'])
        for p in points:
            print(f"delay={p.injected_delay_us:6.1f}us dslash={p.dslash_total_us:10.1f}us "
                  f"congrad={p.congrad_mflops_per_node:7.2f} MFlop/s/node")
        return 0

    if args.experiment == "scaling":
        cfg = _load_model_config(args, perfmodel.SCALING_NODE, perfmodel.SCALING_LINK)
        counts = parse_int_list(args.nodes_list)
        sizes = parse_int_list(args.L)
        out = _out_path(args, "model_scaling.csv")
        with open(out, "w") as fh:
            fh.write(perfmodel.SCALING_CSV_HEADER + "\n")
            for L in sizes:
                for p in perfmodel.sweep_scaling(cfg.nodes[0], cfg.link, counts, L,
                                                 procs_per_node=cfg.procs_per_node,
                                                 smp_efficiency=cfg.smp_efficiency,
                                                 site_bytes=cfg.site_bytes):
                    fh.write(p.csv_row() + "\n")
        write_manifest(out, "model scaling", argv, {
            "L": args.L, "nodes": args.nodes_list,
            "procs_per_node": cfg.procs_per_node})
        if args.gnuplot:
            _emit_gnuplot(out + ".gp", [
                'set datafile separator ","', "set logscale x 2",
                'set xlabel "nodes"', 'set ylabel "MFlop/s per node"',
                f'plot "{out}" every ::1 using 1:8 with linespoints title "per-node rate"'])
        print(f"wrote {len(sizes) * len(counts)} scaling points to {out}")
        return 0

    if args.experiment == "substitute":
        cfg = _load_model_config(args, perfmodel.REFERENCE_NODE, perfmodel.REFERENCE_LINK)
        profiles = ([args.profile] if args.profile else list(perfmodel.TABLE4_PROFILES))
        out = _out_path(args, "model_substitute.csv")
        rows = []
        for name in profiles:
            if name not in perfmodel.TABLE4_PROFILES:
                print(f"error: unknown profile {name!r}; choose from "
                      f"{sorted(perfmodel.TABLE4_PROFILES)}", file=sys.stderr)
                return 2
            res = perfmodel.model_substitution(
                cfg.nodes[0], perfmodel.TABLE4_PROFILES[name], len(cfg.nodes),
                cfg.link, args.sublattice, procs_per_node=cfg.procs_per_node,
                smp_efficiency=cfg.smp_efficiency, site_bytes=cfg.site_bytes)
            rows.append(res)
        with open(out, "w") as fh:
            fh.write(SUBSTITUTE_CSV_HEADER + "\n")
            for r in rows:
                fh.write(f"{r.profile_label},{len(cfg.nodes)},{args.sublattice},"
                         f"{r.cluster_mflops:.4f},{r.baseline_mflops:.4f},"
                         f"{r.degradation:.6f}\n")
        write_manifest(out, "model substitute", argv, {
            "nodes": len(cfg.nodes), "sublattice": args.sublattice,
            "profiles": ",".join(profiles)})
        for r in rows:
            print(f"{r.profile_label:10s} cluster={r.cluster_mflops:10.1f} MFlop/s "
                  f"(degradation {100 * r.degradation:6.3f}%)")
        return 0

    raise AssertionError(args.experiment)


def cmd_write_config(args, argv) -> int:
    presets = {
        "latency": (perfmodel.REFERENCE_NODE, perfmodel.REFERENCE_LINK),
        "scaling": (perfmodel.SCALING_NODE, perfmodel.SCALING_LINK),
    }
    node, link = presets[args.preset]
    cfg = perfmodel.ClusterConfig.homogeneous(node, args.nodes, link)
    out = _out_path(args, f"{args.preset}.cfg")
    write_cluster_config(cfg, out)
    print(f"wrote {out}")
    return 0


def cmd_schema_check(args, argv) -> int:
    with open(args.file) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        print(f"error: {args.file}: empty file", file=sys.stderr)
        return 2
    header = lines[0]
    schema = CSV_SCHEMAS.get(header)
    if schema is None:
        print(f"error: {args.file}: header matches no known schema", file=sys.stderr)
        return 2
    ncols = len(header.split(","))
    for i, row in enumerate(lines[1:], 2):
        if len(row.split(",")) != ncols:
            print(f"error: {args.file}:{i}: expected {ncols} columns", file=sys.stderr)
            return 2
    print(f"{args.file}: {schema}, {len(lines) - 1} rows")
    return 0


def cmd_replay(args, argv) -> int:
    manifest = read_manifest(args.manifest)
    if "command" not in manifest or "argv" not in manifest:
        print(f"error: {args.manifest}: not a qcdperf manifest", file=sys.stderr)
        return 2
    new_argv = manifest["command"].split() + shlex.split(manifest["argv"])
    # strip recorded output/reps flags, then redirect and pin the reps so the
    # replayed run performs bitwise-identical work
    stripped, skip = [], False
    for tok in new_argv:
        if skip:
            skip = False
            continue
        if tok in ("--out", "--reps"):
            skip = True
            continue
        if tok == "--exact-reps":
            continue
        stripped.append(tok)
    stripped += ["--out", args.out or (manifest.get("out", "replay.csv") + ".replay")]
    if "resolved.executed_reps" in manifest:
        stripped += ["--reps", manifest["resolved.executed_reps"], "--exact-reps"]
    return main(stripped)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcdperf",
                                 description="lattice QCD performance toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("qcdstream", help="SU3 kernels under memory access patterns")
    p.add_argument("--kernel", choices=sorted(k for k in _KERNELS if k != "copy"),
                   default="matvec")
    p.add_argument("--pattern", choices=sorted(_PATTERNS), default="sequential")
    p.add_argument("--all-patterns", action="store_true")
    p.add_argument("--pool", type=parse_size, default=128 * 1024**2,
                   help="operand pool bytes (default 128M)")
    p.add_argument("--stride", type=parse_size, default=None,
                   help="strided step in bytes (default 6144)")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--exact-reps", action="store_true",
                   help="run exactly --reps passes (no timing calibration)")
    p.add_argument("--seed", type=int, default=membench.DEFAULT_SEED)
    p.add_argument("--profile-json", default="", help="write host profile JSON here")
    _add_machine_flags(p)
    p.set_defaults(fn=cmd_qcdstream)

    p = sub.add_parser("stream", help="Stream-style copy bandwidth")
    p.add_argument("--bytes", type=parse_size, default=64 * 1024**2)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--exact-reps", action="store_true")
    p.add_argument("--seed", type=int, default=membench.DEFAULT_SEED)
    _add_machine_flags(p)
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("inverter-sweep", help="CG inverter over lattice sizes and layouts")
    p.add_argument("--sizes", default="2,4,6,8,10,12,14")
    p.add_argument("--layouts", choices=["site", "field", "both"], default="both")
    p.add_argument("--mass", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--emulate-milc-site", action="store_true",
                   help="pad site-major records to 1656 bytes/site")
    _add_machine_flags(p)
    p.set_defaults(fn=cmd_inverter_sweep)

    p = sub.add_parser("smp", help="independent-worker memory contention")
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--kernel", choices=sorted(_KERNELS), default="matvec")
    p.add_argument("--pattern", choices=sorted(_PATTERNS), default="sequential")
    p.add_argument("--pool", type=parse_size, default=128 * 1024**2)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--exact-reps", action="store_true")
    p.add_argument("--seed", type=int, default=membench.DEFAULT_SEED)
    _add_machine_flags(p)
    p.set_defaults(fn=cmd_smp)

    p = sub.add_parser("model", help="analytic cluster model sweeps")
    msub = p.add_subparsers(dest="experiment", required=True)

    q = msub.add_parser("latency", help="injected-delay sensitivity (D-slash vs CONGRAD)")
    q.add_argument("--config", default="", help="cluster config file")
    q.add_argument("--nodes", type=int, default=32)
    q.add_argument("--procs-per-node", type=int, default=1)
    q.add_argument("--sublattice", type=int, default=14)
    q.add_argument("--max-delay", type=parse_us, default=400.0)
    q.add_argument("--steps", type=int, default=9)
    _add_machine_flags(q)
    q.set_defaults(fn=cmd_model)

    q = msub.add_parser("scaling", help="fixed-sublattice scaling curves")
    q.add_argument("--config", default="")
    q.add_argument("--nodes", dest="nodes_list", default="1..128")
    q.add_argument("--nodes-count", dest="nodes", type=int, default=0, help=argparse.SUPPRESS)
    q.add_argument("--procs-per-node", type=int, default=1)
    q.add_argument("--L", default="4,8,10,12,14")
    _add_machine_flags(q)
    q.set_defaults(fn=cmd_model)

    q = msub.add_parser("substitute", help="slow-node substitution")
    q.add_argument("--config", default="")
    q.add_argument("--nodes", type=int, default=32)
    q.add_argument("--procs-per-node", type=int, default=1)
    q.add_argument("--sublattice", type=int, default=14)
    q.add_argument("--profile", default="",
                   help="Table-4 profile name (default: all profiles)")
    _add_machine_flags(q)
    q.set_defaults(fn=cmd_model)

    p = sub.add_parser("write-config", help="emit a reference model config file")
    p.add_argument("--preset", choices=["latency", "scaling"], default="latency")
    p.add_argument("--nodes", type=int, default=32)
    p.add_argument("--out", default="")
    p.set_defaults(fn=cmd_write_config)

    p = sub.add_parser("schema-check", help="validate an output CSV against known schemas")
    p.add_argument("file")
    p.set_defaults(fn=cmd_schema_check)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default="")
    p.set_defaults(fn=cmd_replay)

    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    # manifests store the flags only; the command tokens go in their own key
    ntok = 2 if args.cmd == "model" else 1
    flag_argv = argv[ntok:]
    try:
        return args.fn(args, flag_argv)
    except (ConfigurationError, ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
