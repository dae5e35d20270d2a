"""Analytic cluster performance model for the staggered CG workload.

Reproduces three experiments: fixed-sublattice scaling over node counts,
slow-node substitution into a homogeneous cluster, and injected-latency
sensitivity of D-slash versus the full CG iteration.

Units: rates in MB/s equal bytes/us, so message time in microseconds is
``base_latency_us + injected_delay_us + nbytes / effective_bandwidth_mbps``;
flops divided by MFlop/s likewise give microseconds.

Model laws:

* effective point-to-point bandwidth = min(link bandwidth, wire-rate cap,
  PCI read/write rates of both endpoints); PCI rates are halved when two
  processes share a node (shared adapter);
* no compute/communication overlap: times add;
* one D-slash application per process = 576 * sub_volume/2 flops of compute
  plus, per communicated dimension, 2 face messages;
* one CG iteration = 2 D-slash applications + the CG linear algebra
  + 3 allreduces (alpha step, beta step, convergence norm);
* allreduce = binary-tree reduce + broadcast: 2*ceil(log2 P) hops, each one
  message of 8 bytes;
* barrier gating: the cluster advances at the slowest process's iteration
  time (the premise of the substitution methodology).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .lattice import MILC_SITE_BYTES
from .solver import CG_GLOBAL_SUMS_PER_ITER, CG_ITER_SITE_FLOPS, DSLASH_SITE_FLOPS

#: bytes exchanged per surface site in one D-slash halo: one color 3-vector.
HALO_BYTES_PER_SITE = 24
ALLREDUCE_MESSAGE_BYTES = 8
#: per-iteration CG work that is not D-slash (combine, dots, axpys).
CG_LINALG_SITE_FLOPS = CG_ITER_SITE_FLOPS - 2 * DSLASH_SITE_FLOPS  # 84

#: the split order for decomposition ties and for fixed-sublattice doubling.
_DIM_SPLIT_ORDER = (3, 2, 1, 0)  # t, z, y, x


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class NodeProfile:
    label: str
    mflops_in_cache: float
    mflops_main_memory: float
    l2_bytes: int = 512 * 1024
    pci_read_mbps: float = 423.0
    pci_write_mbps: float = 476.0

    def __post_init__(self):
        for v in (self.mflops_in_cache, self.mflops_main_memory,
                  self.pci_read_mbps, self.pci_write_mbps):
            if v <= 0:
                raise ModelError(f"node {self.label}: rates must be positive")

    def rate_mflops(self, working_set_bytes: int) -> float:
        """Cache-aware node rate: in-cache if the working set fits in L2."""
        if working_set_bytes <= self.l2_bytes:
            return self.mflops_in_cache
        return self.mflops_main_memory


@dataclass(frozen=True)
class LinkProfile:
    bandwidth_mbps: float = 225.0
    base_latency_us: float = 15.0
    injected_first_packet_delay_us: float = 0.0
    wire_rate_cap_mbps: float = 250.0

    def __post_init__(self):
        if self.bandwidth_mbps <= 0 or self.wire_rate_cap_mbps <= 0:
            raise ModelError("link bandwidths must be positive")
        if self.base_latency_us < 0 or self.injected_first_packet_delay_us < 0:
            raise ModelError("latencies must be non-negative")


@dataclass
class ClusterConfig:
    nodes: list  # NodeProfile per physical node; heterogeneous allowed
    link: LinkProfile
    procs_per_node: int = 1
    smp_efficiency: float = 0.55
    site_bytes: int = MILC_SITE_BYTES

    def __post_init__(self):
        if self.procs_per_node not in (1, 2):
            raise ModelError("procs_per_node must be 1 or 2")
        if not 0 < self.smp_efficiency <= 1:
            raise ModelError("smp_efficiency must be in (0, 1]")
        if not self.nodes:
            raise ModelError("need at least one node")

    @classmethod
    def homogeneous(cls, profile: NodeProfile, count: int, link: LinkProfile,
                    **kw) -> "ClusterConfig":
        return cls([profile] * count, link, **kw)

    @property
    def nprocs(self) -> int:
        return len(self.nodes) * self.procs_per_node

    def node_of_proc(self, p: int) -> NodeProfile:
        return self.nodes[p // self.procs_per_node]

    def proc_rate_mflops(self, p: int, working_set_bytes: int) -> float:
        rate = self.node_of_proc(p).rate_mflops(working_set_bytes)
        if self.procs_per_node == 2:
            rate *= self.smp_efficiency
        return rate


@dataclass(frozen=True)
class Decomposition:
    grid: tuple  # processes per dimension (x, y, z, t)
    sub_dims: tuple  # per-process sublattice extents
    comm_dim_indices: tuple  # dimensions with grid extent > 1

    @property
    def comm_dims(self) -> int:
        return len(self.comm_dim_indices)

    @property
    def nprocs(self) -> int:
        g = self.grid
        return g[0] * g[1] * g[2] * g[3]


def decompose(lattice_dims, nprocs: int) -> Decomposition:
    """Split a global lattice over nprocs (power of two), halving the largest
    remaining extent first; ties go in t, z, y, x order."""
    if nprocs < 1 or nprocs & (nprocs - 1):
        raise ModelError(f"nprocs must be a power of two, got {nprocs}")
    dims = list(lattice_dims)
    grid = [1, 1, 1, 1]
    for _ in range(nprocs.bit_length() - 1):
        d = max(_DIM_SPLIT_ORDER, key=lambda i: dims[i])
        if dims[d] % 2:
            raise ModelError(f"dimension {d} extent {dims[d]} not divisible for split")
        dims[d] //= 2
        grid[d] *= 2
    comm = tuple(i for i in range(4) if grid[i] > 1)
    return Decomposition(tuple(grid), tuple(dims), comm)


def decompose_fixed_sublattice(nprocs: int, sub_extent: int) -> Decomposition:
    """Canonical grid for weak scaling with an L^4 sublattice per process:
    grid dimensions double in t, z, y, x round-robin order. Equivalent to
    ``decompose`` applied to the resulting global lattice."""
    if nprocs < 1 or nprocs & (nprocs - 1):
        raise ModelError(f"nprocs must be a power of two, got {nprocs}")
    grid = [1, 1, 1, 1]
    order = 0
    for _ in range(nprocs.bit_length() - 1):
        grid[_DIM_SPLIT_ORDER[order % 4]] *= 2
        order += 1
    comm = tuple(i for i in range(4) if grid[i] > 1)
    return Decomposition(tuple(grid), (sub_extent,) * 4, comm)


def surface_bytes(sub_dims, comm_dim_indices,
                  bytes_per_site: int = HALO_BYTES_PER_SITE) -> tuple[dict, int]:
    """Halo bytes per D-slash application: per communicated dimension d,
    2 faces x (sub_volume / extent_d) / 2 sites of one parity x bytes."""
    vol = 1
    for d in sub_dims:
        vol *= d
    per_dim = {}
    for d in comm_dim_indices:
        face_sites = vol // sub_dims[d] // 2
        per_dim[d] = 2 * face_sites * bytes_per_site
    return per_dim, sum(per_dim.values())


def effective_bandwidth_mbps(link: LinkProfile, a: NodeProfile, b: NodeProfile,
                             procs_per_node: int = 1) -> float:
    """min(link bandwidth, wire-rate cap, PCI rates of both endpoints)."""
    share = 2.0 if procs_per_node == 2 else 1.0
    return min(link.bandwidth_mbps, link.wire_rate_cap_mbps,
               a.pci_read_mbps / share, a.pci_write_mbps / share,
               b.pci_read_mbps / share, b.pci_write_mbps / share)


def message_time_us(link: LinkProfile, nbytes: float, a: NodeProfile,
                    b: NodeProfile, procs_per_node: int = 1) -> float:
    bw = effective_bandwidth_mbps(link, a, b, procs_per_node)
    return link.base_latency_us + link.injected_first_packet_delay_us + nbytes / bw


def allreduce_time_us(config: ClusterConfig, nprocs: int) -> float:
    """Binary-tree reduce + broadcast: 2*ceil(log2 P) hops of an 8-byte
    message; the slowest participating endpoint pair gates every hop."""
    if nprocs <= 1:
        return 0.0
    slowest = min(config.nodes, key=lambda n: min(n.pci_read_mbps, n.pci_write_mbps))
    hop = message_time_us(config.link, ALLREDUCE_MESSAGE_BYTES, slowest, slowest,
                          config.procs_per_node)
    return 2 * math.ceil(math.log2(nprocs)) * hop


def _proc_coords(dec: Decomposition, p: int):
    g = dec.grid
    x = p % g[0]
    p //= g[0]
    y = p % g[1]
    p //= g[1]
    z = p % g[2]
    t = p // g[2]
    return [x, y, z, t]


def _proc_linear(dec: Decomposition, c) -> int:
    g = dec.grid
    return ((c[3] * g[2] + c[2]) * g[1] + c[1]) * g[0] + c[0]


@dataclass
class DslashTime:
    compute_us: float
    comm_us: float

    @property
    def total_us(self) -> float:
        return self.compute_us + self.comm_us


def _proc_dslash_time(config: ClusterConfig, dec: Decomposition, p: int) -> DslashTime:
    sub_vol = 1
    for d in dec.sub_dims:
        sub_vol *= d
    ws = config.site_bytes * sub_vol
    rate = config.proc_rate_mflops(p, ws)
    compute = DSLASH_SITE_FLOPS * (sub_vol // 2) / rate
    per_dim, _ = surface_bytes(dec.sub_dims, dec.comm_dim_indices)
    me = config.node_of_proc(p)
    coords = _proc_coords(dec, p)
    comm = 0.0
    for d in dec.comm_dim_indices:
        face = per_dim[d] // 2  # one face each way
        for step in (1, -1):
            c = list(coords)
            c[d] = (c[d] + step) % dec.grid[d]
            peer = config.node_of_proc(_proc_linear(dec, c))
            comm += message_time_us(config.link, face, me, peer, config.procs_per_node)
    return DslashTime(compute, comm)


def model_dslash_time(config: ClusterConfig, dec: Decomposition) -> DslashTime:
    """Per-application D-slash time of the gating (slowest) process."""
    times = [_proc_dslash_time(config, dec, p) for p in range(dec.nprocs)]
    return max(times, key=lambda t: t.total_us)


@dataclass
class CongradIterTime:
    dslash_us: float  # both parity applications, compute + halo
    linalg_us: float
    allreduce_us: float

    @property
    def total_us(self) -> float:
        return self.dslash_us + self.linalg_us + self.allreduce_us


def model_congrad_iter_time(config: ClusterConfig, dec: Decomposition) -> CongradIterTime:
    """Per-iteration CG time of the gating process."""
    sub_vol = 1
    for d in dec.sub_dims:
        sub_vol *= d
    ws = config.site_bytes * sub_vol
    allreduce = CG_GLOBAL_SUMS_PER_ITER * allreduce_time_us(config, dec.nprocs)
    worst = None
    for p in range(dec.nprocs):
        ds = _proc_dslash_time(config, dec, p)
        linalg = CG_LINALG_SITE_FLOPS * (sub_vol // 2) / config.proc_rate_mflops(p, ws)
        t = CongradIterTime(2 * ds.total_us, linalg, allreduce)
        if worst is None or t.total_us > worst.total_us:
            worst = t
    return worst


def cluster_mflops(config: ClusterConfig, dec: Decomposition) -> float:
    """Barrier-gated cluster rate: nprocs x per-process useful flops over the
    slowest process's iteration time."""
    sub_vol = 1
    for d in dec.sub_dims:
        sub_vol *= d
    iter_flops = CG_ITER_SITE_FLOPS * (sub_vol // 2)
    t = model_congrad_iter_time(config, dec)
    return dec.nprocs * iter_flops / t.total_us


@dataclass
class SubstitutionResult:
    profile_label: str
    cluster_mflops: float
    baseline_mflops: float

    @property
    def degradation(self) -> float:
        return (self.baseline_mflops - self.cluster_mflops) / self.baseline_mflops


def model_substitution(base_profile: NodeProfile, substitute_profile: NodeProfile,
                       node_count: int, link: LinkProfile, sub_extent: int,
                       **cfg_kw) -> SubstitutionResult:
    """Replace one node of a homogeneous cluster and report the gated rate."""
    if node_count < 2:
        raise ModelError("substitution needs at least 2 nodes")
    dec = decompose_fixed_sublattice(node_count, sub_extent)
    base = ClusterConfig.homogeneous(base_profile, node_count, link, **cfg_kw)
    mixed = ClusterConfig([substitute_profile] + [base_profile] * (node_count - 1),
                          link, **cfg_kw)
    return SubstitutionResult(substitute_profile.label,
                              cluster_mflops(mixed, dec),
                              cluster_mflops(base, dec))


@dataclass
class ScalingPoint:
    nprocs: int
    L: int
    comm_dims: int
    compute_us: float
    comm_us: float
    allreduce_us: float
    total_us: float
    mflops_per_node: float

    def csv_row(self) -> str:
        return (f"{self.nprocs},{self.L},{self.comm_dims},{self.compute_us:.4f},"
                f"{self.comm_us:.4f},{self.allreduce_us:.4f},{self.total_us:.4f},"
                f"{self.mflops_per_node:.4f}")


SCALING_CSV_HEADER = "nprocs,L,comm_dims,compute_us,comm_us,allreduce_us,total_us,mflops_per_node"


def sweep_scaling(profile: NodeProfile, link: LinkProfile, node_counts, L: int,
                  procs_per_node: int = 1, smp_efficiency: float = 0.55,
                  site_bytes: int = MILC_SITE_BYTES) -> list[ScalingPoint]:
    """Fixed-sublattice curve: one point per node count."""
    points = []
    for count in node_counts:
        cfg = ClusterConfig.homogeneous(profile, count, link,
                                        procs_per_node=procs_per_node,
                                        smp_efficiency=smp_efficiency,
                                        site_bytes=site_bytes)
        dec = decompose_fixed_sublattice(cfg.nprocs, L)
        ds = model_dslash_time(cfg, dec)
        it = model_congrad_iter_time(cfg, dec)
        per_node = cluster_mflops(cfg, dec) / count
        points.append(ScalingPoint(cfg.nprocs, L, dec.comm_dims,
                                   2 * ds.compute_us, 2 * ds.comm_us,
                                   it.allreduce_us, it.total_us, per_node))
    return points


@dataclass
class LatencyPoint:
    injected_delay_us: float
    dslash_total_us: float
    congrad_iter_us: float
    congrad_mflops_per_node: float

    def csv_row(self) -> str:
        return (f"{self.injected_delay_us:.1f},{self.dslash_total_us:.4f},"
                f"{self.congrad_iter_us:.4f},{self.congrad_mflops_per_node:.4f}")


LATENCY_CSV_HEADER = "injected_delay_us,dslash_total_us,congrad_iter_us,congrad_mflops_per_node"


def sweep_latency(config: ClusterConfig, delays_us, L: int) -> list[LatencyPoint]:
    """D-slash time and CG rate as the injected first-packet delay grows."""
    dec = decompose_fixed_sublattice(config.nprocs, L)
    points = []
    for delay in delays_us:
        cfg = replace_link(config, injected_first_packet_delay_us=float(delay))
        ds = model_dslash_time(cfg, dec)
        per_node = cluster_mflops(cfg, dec) / len(cfg.nodes)
        it = model_congrad_iter_time(cfg, dec)
        points.append(LatencyPoint(float(delay), ds.total_us, it.total_us, per_node))
    return points


def replace_link(config: ClusterConfig, **kw) -> ClusterConfig:
    return ClusterConfig(config.nodes, replace(config.link, **kw),
                         procs_per_node=config.procs_per_node,
                         smp_efficiency=config.smp_efficiency,
                         site_bytes=config.site_bytes)


# ---------------------------------------------------------------------------
# Reference profiles (PCI rates from the measured motherboard table; the
# substitution rows keep the host cluster's compute rates so the experiment
# isolates the I/O path, which is what the substitution methodology varies).
# ---------------------------------------------------------------------------

_HOST_RATES = dict(mflops_in_cache=905.0, mflops_main_memory=150.0, l2_bytes=512 * 1024)

REFERENCE_NODE = NodeProfile(label="E7500", pci_read_mbps=423, pci_write_mbps=476,
                             **_HOST_RATES)

TABLE4_PROFILES = {
    "i850E": NodeProfile(label="i850E", pci_read_mbps=100, pci_write_mbps=128, **_HOST_RATES),
    "440GX": NodeProfile(label="440GX", pci_read_mbps=125, pci_write_mbps=127, **_HOST_RATES),
    "i860": NodeProfile(label="i860", pci_read_mbps=219, pci_write_mbps=294, **_HOST_RATES),
    "E7500": REFERENCE_NODE,
    "E7500-1.7": NodeProfile(label="E7500-1.7", pci_read_mbps=422, pci_write_mbps=477,
                             **_HOST_RATES),
}

REFERENCE_LINK = LinkProfile(bandwidth_mbps=225.0, base_latency_us=15.0,
                             injected_first_packet_delay_us=0.0,
                             wire_rate_cap_mbps=250.0)

#: scaling reference isolates surface-to-volume: flat node rate, zero base
#: latency (cache and latency mechanisms belong to the other experiments).
SCALING_NODE = NodeProfile(label="flat150", mflops_in_cache=150.0,
                           mflops_main_memory=150.0, l2_bytes=512 * 1024,
                           pci_read_mbps=423, pci_write_mbps=476)
SCALING_LINK = LinkProfile(bandwidth_mbps=225.0, base_latency_us=0.0,
                           injected_first_packet_delay_us=0.0,
                           wire_rate_cap_mbps=250.0)


# ---------------------------------------------------------------------------
# Declarative config file (key = value lines, # comments)
# ---------------------------------------------------------------------------

_CONFIG_SCHEMA = {
    "nodes": int,
    "procs_per_node": int,
    "smp_efficiency": float,
    "site_bytes": int,
    "node.label": str,
    "node.mflops_in_cache": float,
    "node.mflops_main_memory": float,
    "node.l2_bytes": int,
    "node.pci_read_mbps": float,
    "node.pci_write_mbps": float,
    "link.bandwidth_mbps": float,
    "link.base_latency_us": float,
    "link.injected_first_packet_delay_us": float,
    "link.wire_rate_cap_mbps": float,
}


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""


def parse_cluster_config(path) -> ClusterConfig:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_SCHEMA:
                raise ConfigError(f"{key}: unknown field")
            try:
                values[key] = _CONFIG_SCHEMA[key](val.strip())
            except ValueError:
                raise ConfigError(
                    f"{key}: expected {_CONFIG_SCHEMA[key].__name__}, got {val.strip()!r}") from None
    for required in ("nodes", "node.mflops_in_cache", "node.mflops_main_memory"):
        if required not in values:
            raise ConfigError(f"{required}: missing required field")
    try:
        profile = NodeProfile(
            label=values.get("node.label", "node"),
            mflops_in_cache=values["node.mflops_in_cache"],
            mflops_main_memory=values["node.mflops_main_memory"],
            l2_bytes=values.get("node.l2_bytes", 512 * 1024),
            pci_read_mbps=values.get("node.pci_read_mbps", 423.0),
            pci_write_mbps=values.get("node.pci_write_mbps", 476.0))
        link = LinkProfile(
            bandwidth_mbps=values.get("link.bandwidth_mbps", 225.0),
            base_latency_us=values.get("link.base_latency_us", 15.0),
            injected_first_packet_delay_us=values.get("link.injected_first_packet_delay_us", 0.0),
            wire_rate_cap_mbps=values.get("link.wire_rate_cap_mbps", 250.0))
        return ClusterConfig.homogeneous(
            profile, values["nodes"], link,
            procs_per_node=values.get("procs_per_node", 1),
            smp_efficiency=values.get("smp_efficiency", 0.55),
            site_bytes=values.get("site_bytes", MILC_SITE_BYTES))
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def write_cluster_config(config: ClusterConfig, path) -> None:
    node = config.nodes[0]
    lines = [
        "# qcdperf cluster model config",
        f"nodes = {len(config.nodes)}",
        f"procs_per_node = {config.procs_per_node}",
        f"smp_efficiency = {config.smp_efficiency}",
        f"site_bytes = {config.site_bytes}",
        f"node.label = {node.label}",
        f"node.mflops_in_cache = {node.mflops_in_cache}",
        f"node.mflops_main_memory = {node.mflops_main_memory}",
        f"node.l2_bytes = {node.l2_bytes}",
        f"node.pci_read_mbps = {node.pci_read_mbps}",
        f"node.pci_write_mbps = {node.pci_write_mbps}",
        f"link.bandwidth_mbps = {config.link.bandwidth_mbps}",
        f"link.base_latency_us = {config.link.base_latency_us}",
        f"link.injected_first_packet_delay_us = {config.link.injected_first_packet_delay_us}",
        f"link.wire_rate_cap_mbps = {config.link.wire_rate_cap_mbps}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
