"""Naive one-link staggered D-slash and even-odd conjugate-gradient inverter.

Conventions (frozen; the tests depend on them):

* phases: eta_0 = 1, eta_mu(x) = (-1)^(x_0 + ... + x_{mu-1}) with direction
  order (x, y, z, t);
* operator: Dslash(chi)(x) = 1/2 sum_mu eta_mu(x) [U_mu(x) chi(x+mu)
  - U_mu(x-mu)^dag chi(x-mu)], connecting opposite parities only;
* CG solves (4 m^2 - D_eo D_oe) x = b on even sites, the normal-equation
  form of M = 2m + D. All inner products accumulate in double precision and
  pass through ``global_sum``, three reductions per iteration (alpha step,
  beta step, convergence norm).

The layout policy of the gauge field governs only the link storage the
stencil reads on every application (the traffic field-major packing is
about); CG vectors are contiguous parity arrays either way, so solver
results are layout independent bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .lattice import (
    FieldSet,
    LatticeGeometry,
    LayoutPolicy,
    coords_table,
    linear_from_coords,
)
from .su3 import COMPLEX, mat_vec_adj_ref, mat_vec_ref

EVEN = "even"
ODD = "odd"

#: per output site: 8 mat-vec (66) + 7 vector add/sub (6) + one 1/2 scale (6).
DSLASH_SITE_FLOPS = 8 * 66 + 7 * 6 + 6  # 576
#: 4m^2*x - DDx per site: real scale (6) + subtract (6).
NORMAL_COMBINE_SITE_FLOPS = 12
APPLY_NORMAL_SITE_FLOPS = 2 * DSLASH_SITE_FLOPS + NORMAL_COMBINE_SITE_FLOPS  # 1164
#: Re<a,b> per site: 3 components x (2 mul + 2 add).
DOT_RE_SITE_FLOPS = 12
AXPY_SITE_FLOPS = 12
#: one CG iteration: A*p, three reductions, two axpy, one xpay.
CG_ITER_SITE_FLOPS = APPLY_NORMAL_SITE_FLOPS + 3 * DOT_RE_SITE_FLOPS + 3 * AXPY_SITE_FLOPS  # 1236
#: periodic true-residual recomputation: A*x and b - A*x.
CG_RECOMPUTE_SITE_FLOPS = APPLY_NORMAL_SITE_FLOPS + 6  # 1170
CG_SETUP_SITE_FLOPS = 2 * DOT_RE_SITE_FLOPS  # |b|^2 and initial |r|^2
CG_GLOBAL_SUMS_PER_ITER = 3
CG_RESIDUAL_RECOMPUTE_EVERY = 50


class SolverError(ValueError):
    pass


GaugeField = FieldSet  # links + geometry + layout; see lattice.FieldSet


def random_gauge(geometry: LatticeGeometry, layout: LayoutPolicy, seed: int) -> GaugeField:
    """Deterministic SU(3) gauge field (field values independent of layout)."""
    return FieldSet.random(geometry, layout, seed)


def identity_gauge(geometry: LatticeGeometry, layout: LayoutPolicy) -> GaugeField:
    fs = FieldSet(geometry, layout)
    eye = np.broadcast_to(np.eye(3, dtype=COMPLEX), (4, geometry.volume, 3, 3))
    fs.set_links(np.ascontiguousarray(eye))
    return fs


@dataclass
class FermionField:
    """One color 3-vector per site, possibly restricted to one parity."""

    data: np.ndarray
    geometry: LatticeGeometry
    parity: str  # "even", "odd" or "full"

    def __post_init__(self):
        want = self.geometry.volume if self.parity == "full" else self.geometry.half_volume
        if self.data.shape != (want, 3):
            raise SolverError(f"field shape {self.data.shape} != ({want}, 3) for parity {self.parity}")

    @classmethod
    def zeros(cls, geometry: LatticeGeometry, parity: str) -> "FermionField":
        n = geometry.volume if parity == "full" else geometry.half_volume
        return cls(np.zeros((n, 3), dtype=COMPLEX), geometry, parity)

    @classmethod
    def random(cls, geometry: LatticeGeometry, parity: str, seed: int) -> "FermionField":
        n = geometry.volume if parity == "full" else geometry.half_volume
        gen = np.random.Generator(np.random.Philox(seed))
        data = np.empty((n, 3), dtype=COMPLEX)
        data.real = gen.standard_normal((n, 3), dtype=np.float32)
        data.imag = gen.standard_normal((n, 3), dtype=np.float32)
        return cls(data, geometry, parity)

    def copy(self) -> "FermionField":
        return FermionField(self.data.copy(), self.geometry, self.parity)


@lru_cache(maxsize=32)
def staggered_phases(geom: LatticeGeometry) -> np.ndarray:
    """(4, volume) array of eta_mu(x) = (-1)^(x_0+...+x_{mu-1}), eta_0 = 1."""
    coords = coords_table(geom)
    eta = np.ones((4, geom.volume), dtype=np.float32)
    acc = np.zeros(geom.volume, dtype=np.int64)
    for mu in range(1, 4):
        acc = acc + coords[mu - 1]
        eta[mu] = np.where(acc % 2 == 0, 1.0, -1.0)
    return eta


@lru_cache(maxsize=32)
def _stencil(geom: LatticeGeometry, target_parity: int):
    """Neighbor tables for outputs of the given parity (0 even, 1 odd)."""
    vh = geom.half_volume
    base = target_parity * vh
    src_base = (1 - target_parity) * vh
    coords = coords_table(geom)[:, base : base + vh]
    fwd_pos = np.empty((4, vh), dtype=np.int32)
    bwd_pos = np.empty((4, vh), dtype=np.int32)
    bwd_lin = np.empty((4, vh), dtype=np.int32)
    for mu in range(4):
        c = [coords[i].copy() for i in range(4)]
        c[mu] = (c[mu] + 1) % geom.dims[mu]
        fwd_pos[mu] = linear_from_coords(geom, *c) - src_base
        c = [coords[i].copy() for i in range(4)]
        c[mu] = (c[mu] - 1) % geom.dims[mu]
        lin = linear_from_coords(geom, *c)
        bwd_lin[mu] = lin
        bwd_pos[mu] = lin - src_base
    eta = np.ascontiguousarray(staggered_phases(geom)[:, base : base + vh])
    return base, fwd_pos, bwd_pos, bwd_lin, eta


def dslash(U: GaugeField, chi: FermionField, phases: np.ndarray | None = None,
           kernel: str = "fast", out: FermionField | None = None) -> FermionField:
    """Apply the staggered hopping operator; output has the opposite parity."""
    geom = U.geometry
    if chi.geometry != geom:
        raise SolverError("gauge and fermion geometries differ")
    if chi.parity not in (EVEN, ODD):
        raise SolverError("dslash input must be parity restricted")
    target = 0 if chi.parity == ODD else 1
    base, fwd_pos, bwd_pos, bwd_lin, eta = _stencil(geom, target)
    if phases is not None:
        eta = np.ascontiguousarray(phases[:, base : base + geom.half_volume].astype(np.float32))
    if out is None:
        out = FermionField.zeros(geom, EVEN if target == 0 else ODD)
    if kernel == "fast":
        from . import _kernels

        _kernels.dslash_sites(U.links_site_view(), chi.data, out.data, base,
                              bwd_lin, fwd_pos, bwd_pos, eta)
    elif kernel == "reference":
        links = U.links_site_view()
        for v in range(geom.half_volume):
            acc = np.zeros(3, dtype=COMPLEX)
            for mu in range(4):
                fwd = mat_vec_ref(links[base + v, mu], chi.data[fwd_pos[mu, v]])
                bwd = mat_vec_adj_ref(links[bwd_lin[mu, v], mu], chi.data[bwd_pos[mu, v]])
                acc += np.float32(eta[mu, v]) * (fwd - bwd)
            out.data[v] = np.float32(0.5) * acc
    else:
        raise SolverError(f"unknown kernel {kernel!r}")
    return out


def global_sum(partials) -> float:
    """Deterministic left-to-right float64 sum of per-worker partials.

    This is the reduction point the cluster model charges allreduce latency
    against; the input order is never re-sorted.
    """
    acc = 0.0
    for p in partials:
        acc += float(p)
    return acc


def apply_normal(U: GaugeField, x: FermionField, mass: float,
                 work_odd: FermionField | None = None,
                 out: FermionField | None = None) -> FermionField:
    """(4 m^2 - D_eo D_oe) x on even sites."""
    if x.parity != EVEN:
        raise SolverError("normal operator acts on even-parity fields")
    from . import _kernels

    odd = dslash(U, x, out=work_odd)
    ddx = dslash(U, odd, out=out)
    # elementwise, so ddx may serve as both input and output
    _kernels.normal_combine(x.data, ddx.data, np.float32(4.0 * mass * mass), ddx.data)
    return ddx


@dataclass
class SolveReport:
    iterations: int
    final_relative_residual: float
    flops: int
    elapsed_sec: float
    mflops: float
    converged: bool
    residual_history: tuple
    recomputes: int = 0


def congrad_flops(iterations: int, recomputes: int, half_volume: int) -> int:
    """Exact flop count of a congrad call (the frozen accounting formula)."""
    return half_volume * (CG_SETUP_SITE_FLOPS
                          + CG_ITER_SITE_FLOPS * iterations
                          + CG_RECOMPUTE_SITE_FLOPS * recomputes)


def congrad(U: GaugeField, b: FermionField, mass: float, tol: float = 1e-6,
            max_iter: int = 1000, kernel: str = "fast") -> tuple[FermionField, SolveReport]:
    """Even-odd CG for (4 m^2 - D_eo D_oe) x = b.

    Non-convergence within max_iter is not an exception: the report carries
    the best iterate with converged=False.
    """
    if tol < 0 or mass <= 0:
        raise SolverError("need tol >= 0 and mass > 0")
    if b.parity != EVEN:
        raise SolverError("right-hand side must be even parity")
    from . import _kernels

    geom = U.geometry
    vh = geom.half_volume

    # geometry setup (stencil tables, link view, work buffers) happens before
    # the solve clock starts; small lattices are dispatch-bound otherwise
    links = U.links_site_view()
    base_o, fwd_o, bwd_o, bwdlin_o, eta_o = _stencil(geom, 1)
    base_e, fwd_e, bwd_e, bwdlin_e, eta_e = _stencil(geom, 0)
    msq4 = np.float32(4.0 * mass * mass)
    odd_buf = np.zeros((vh, 3), dtype=COMPLEX)
    Ap_buf = np.zeros((vh, 3), dtype=COMPLEX)
    ax_buf = np.zeros((vh, 3), dtype=COMPLEX)

    def apply_a(src, dst):
        _kernels.dslash_sites(links, src, odd_buf, base_o, bwdlin_o, fwd_o, bwd_o, eta_o)
        _kernels.dslash_sites(links, odd_buf, dst, base_e, bwdlin_e, fwd_e, bwd_e, eta_e)
        _kernels.normal_combine(src, dst, msq4, dst)

    t0 = time.perf_counter()
    bnorm2 = global_sum([_kernels.dot_re(b.data, b.data)])
    if bnorm2 == 0.0:
        report = SolveReport(0, 0.0, DOT_RE_SITE_FLOPS * vh,
                             time.perf_counter() - t0, 0.0, True, ())
        return FermionField.zeros(geom, EVEN), report

    x = FermionField.zeros(geom, EVEN)
    r = b.copy()
    p = r.copy()
    rsq = global_sum([_kernels.dot_re(r.data, r.data)])

    history = []
    iterations = 0
    recomputes = 0
    converged = False
    rel = float(np.sqrt(rsq / bnorm2))
    for it in range(1, max_iter + 1):
        iterations = it
        apply_a(p.data, Ap_buf)
        pAp = global_sum([_kernels.dot_re(p.data, Ap_buf)])
        alpha = rsq / pAp
        _kernels.axpy(np.float32(alpha), p.data, x.data)
        _kernels.axpy(np.float32(-alpha), Ap_buf, r.data)
        if it % CG_RESIDUAL_RECOMPUTE_EVERY == 0:
            apply_a(x.data, ax_buf)
            np.subtract(b.data, ax_buf, out=r.data)
            recomputes += 1
        rsq_new = global_sum([_kernels.dot_re(r.data, r.data)])
        conv = global_sum([_kernels.dot_re(r.data, r.data)])
        rel = float(np.sqrt(conv / bnorm2))
        history.append(rel)
        beta = rsq_new / rsq
        rsq = rsq_new
        _kernels.xpay(r.data, np.float32(beta), p.data)
        if rel <= tol:
            converged = True
            break

    elapsed = time.perf_counter() - t0
    flops = congrad_flops(iterations, recomputes, vh)
    report = SolveReport(iterations, rel, flops, elapsed,
                         flops / (elapsed * 1e6) if elapsed > 0 else 0.0,
                         converged, tuple(history), recomputes)
    return x, report


def dense_oracle(U: GaugeField, mass: float) -> np.ndarray:
    """Explicit matrix of the even-site operator, built from first principles.

    Enumerates sites and neighbors through coordinate arithmetic (not the
    stencil tables) and returns the (3 Vh, 3 Vh) complex128 matrix of
    4 m^2 - D_eo D_oe. Guarded to volumes <= 4096.
    """
    geom = U.geometry
    if geom.volume > 4096:
        raise SolverError(f"dense oracle limited to volume <= 4096, got {geom.volume}")
    vh = geom.half_volume
    links = U.links_site_view().astype(np.complex128)

    def hop_matrix(target_parity: int) -> np.ndarray:
        # rows: sites of target parity, cols: sites of the other parity
        d = np.zeros((3 * vh, 3 * vh), dtype=np.complex128)
        base = target_parity * vh
        src_base = (1 - target_parity) * vh
        for v in range(vh):
            coords = geom.site_coords(base + v)
            for mu in range(4):
                eta = 1.0 if sum(coords[:mu]) % 2 == 0 else -1.0
                up = list(coords)
                up[mu] = (up[mu] + 1) % geom.dims[mu]
                j = geom.site_index(up).linear - src_base
                d[3 * v : 3 * v + 3, 3 * j : 3 * j + 3] += 0.5 * eta * links[base + v, mu]
                dn = list(coords)
                dn[mu] = (dn[mu] - 1) % geom.dims[mu]
                k = geom.site_index(dn).linear
                d[3 * v : 3 * v + 3, 3 * (k - src_base) : 3 * (k - src_base) + 3] -= (
                    0.5 * eta * links[k, mu].conj().T
                )
        return d

    d_oe = hop_matrix(1)  # even -> odd
    d_eo = hop_matrix(0)  # odd -> even
    return 4.0 * mass * mass * np.eye(3 * vh, dtype=np.complex128) - d_eo @ d_oe


@dataclass
class InverterSample:
    L: int
    layout: LayoutPolicy
    working_set_bytes: int
    mass: float
    tol: float
    report: SolveReport


def benchmark_inverter(sizes, layouts, mass: float = 0.1, tol: float = 1e-6,
                       max_iter: int = 1000, seed: int = 1234) -> list[InverterSample]:
    """Run full CG solves per (size, layout) for the cache-cliff and
    layout-comparison curves. Field values depend only on (seed, L), so
    iteration counts are identical across layouts."""
    samples = []
    for L in sizes:
        geom = LatticeGeometry.hypercube(L)
        seed_l = seed + 1000 * L
        b = FermionField.random(geom, EVEN, seed_l + 7)
        for layout in layouts:
            U = random_gauge(geom, layout, seed_l)
            congrad(U, b, mass, tol=tol, max_iter=1)  # JIT and page warm-up
            _, report = congrad(U, b, mass, tol=tol, max_iter=max_iter)
            samples.append(InverterSample(L, layout, layout.working_set_bytes(geom),
                                          mass, tol, report))
    return samples
