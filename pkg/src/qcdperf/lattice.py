"""4-D periodic lattice geometry, even-odd ordering, and storage layouts.

Two storage policies are supported for the per-site fields (4 gauge links of
72 bytes plus one 24-byte fermion vector):

* site-major: all fields of one site are contiguous, one record per site,
  optionally padded to a fixed record size (1656 bytes emulates the full MILC
  site struct of the original measurements without carrying its extra fields);
* field-major: each field is contiguous across all sites.

Sites are ordered even parity first, lexicographic in (t, z, y, x) within each
parity class, so parity-restricted fields are contiguous halves of any
full-volume array.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .su3 import COMPLEX, random_su3_field

#: unpadded site record: 4 links (72 B each) + 1 fermion vector (24 B).
SITE_PAYLOAD_BYTES = 4 * 72 + 24  # 312
#: full MILC site size from the original single-node measurements.
MILC_SITE_BYTES = 1656
_PAYLOAD_WORDS = SITE_PAYLOAD_BYTES // 8  # complex64 words per record

_MAGIC = b"SU3L"


class Layout(enum.Enum):
    SITE_MAJOR = 0
    FIELD_MAJOR = 1


class GeometryError(ValueError):
    """Invalid lattice dimensions or coordinates."""


class SiteIndex(NamedTuple):
    linear: int
    parity: int  # 0 even, 1 odd


@dataclass(frozen=True)
class LatticeGeometry:
    """Periodic 4-D lattice; every dimension must be even (>= 2)."""

    dims: tuple[int, int, int, int]

    def __post_init__(self):
        if len(self.dims) != 4:
            raise GeometryError("need exactly 4 dimensions")
        for d in self.dims:
            if d < 2 or d % 2 != 0:
                raise GeometryError(f"dimensions must be even and >= 2, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @classmethod
    def hypercube(cls, n: int) -> "LatticeGeometry":
        return cls((n, n, n, n))

    @property
    def volume(self) -> int:
        nx, ny, nz, nt = self.dims
        return nx * ny * nz * nt

    @property
    def half_volume(self) -> int:
        return self.volume // 2

    def site_index(self, coords) -> SiteIndex:
        """Linear even-odd index of the site at (x, y, z, t)."""
        x, y, z, t = coords
        nx, ny, nz, nt = self.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz and 0 <= t < nt):
            raise GeometryError(f"coordinates {coords} outside lattice {self.dims}")
        rank = ((t * nz + z) * ny + y) * nx + x
        parity = (x + y + z + t) % 2
        return SiteIndex(parity * self.half_volume + rank // 2, parity)

    def site_coords(self, linear: int) -> tuple[int, int, int, int]:
        """Inverse of site_index."""
        if not 0 <= linear < self.volume:
            raise GeometryError(f"linear index {linear} outside [0, {self.volume})")
        parity = int(linear >= self.half_volume)
        rank = 2 * (linear - parity * self.half_volume)
        coords = self._rank_coords(rank)
        if sum(coords) % 2 != parity:
            coords = self._rank_coords(rank + 1)
        return coords

    def _rank_coords(self, rank: int) -> tuple[int, int, int, int]:
        nx, ny, nz, _ = self.dims
        x = rank % nx
        rank //= nx
        y = rank % ny
        rank //= ny
        z = rank % nz
        t = rank // nz
        return (x, y, z, t)

    def neighbor(self, site: SiteIndex, mu: int, sign: int) -> SiteIndex:
        """Site shifted by +-1 in direction mu (0..3), periodic wrap."""
        if mu not in (0, 1, 2, 3) or sign not in (1, -1):
            raise GeometryError(f"bad direction mu={mu} sign={sign}")
        coords = list(self.site_coords(site.linear))
        coords[mu] = (coords[mu] + sign) % self.dims[mu]
        return self.site_index(coords)


@lru_cache(maxsize=32)
def coords_table(geom: LatticeGeometry) -> np.ndarray:
    """(4, volume) int64 coordinates of every site, in linear-index order."""
    nx, ny, nz, nt = geom.dims
    x, y, z, t = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), np.arange(nt), indexing="ij"
    )
    x, y, z, t = (a.ravel() for a in (x, y, z, t))
    lin = linear_from_coords(geom, x, y, z, t)
    out = np.empty((4, geom.volume), dtype=np.int64)
    for i, c in enumerate((x, y, z, t)):
        out[i, lin] = c
    return out


def linear_from_coords(geom: LatticeGeometry, x, y, z, t) -> np.ndarray:
    """Vectorized site_index for integer coordinate arrays."""
    nx, ny, nz, _ = geom.dims
    rank = ((t * nz + z) * ny + y) * nx + x
    parity = (x + y + z + t) % 2
    return parity * geom.half_volume + rank // 2


@dataclass(frozen=True)
class LayoutPolicy:
    tag: Layout
    site_padding_bytes: int = 0

    def __post_init__(self):
        if self.site_padding_bytes < 0 or self.site_padding_bytes % 8 != 0:
            raise ValueError("site_padding_bytes must be a non-negative multiple of 8")
        if self.tag is Layout.FIELD_MAJOR and self.site_padding_bytes:
            raise ValueError("padding applies to site-major records only")

    @classmethod
    def site_major(cls, milc_emulation: bool = False) -> "LayoutPolicy":
        pad = MILC_SITE_BYTES - SITE_PAYLOAD_BYTES if milc_emulation else 0
        return cls(Layout.SITE_MAJOR, pad)

    @classmethod
    def field_major(cls) -> "LayoutPolicy":
        return cls(Layout.FIELD_MAJOR)

    @property
    def site_record_bytes(self) -> int:
        """Bytes one site occupies in storage (pad counts for site-major)."""
        return SITE_PAYLOAD_BYTES + self.site_padding_bytes

    def working_set_bytes(self, geom: LatticeGeometry) -> int:
        return self.site_record_bytes * geom.volume


class FieldSet:
    """Gauge links + fermion source field stored under a layout policy.

    ``links_site_view()`` always presents the links as a (volume, 4, 3, 3)
    array; for field-major storage that view is strided, so kernels reading
    through it generate exactly the memory traffic the underlying layout
    implies while sharing one code path.
    """

    def __init__(self, geometry: LatticeGeometry, layout: LayoutPolicy):
        self.geometry = geometry
        self.layout = layout
        v = geometry.volume
        if layout.tag is Layout.SITE_MAJOR:
            words = layout.site_record_bytes // 8
            self._store = np.zeros((v, words), dtype=COMPLEX)
            self._links = None
            self._fermion = None
        else:
            self._store = None
            self._links = np.zeros((4, v, 3, 3), dtype=COMPLEX)
            self._fermion = np.zeros((v, 3), dtype=COMPLEX)

    @classmethod
    def random(cls, geometry: LatticeGeometry, layout: LayoutPolicy, seed: int) -> "FieldSet":
        """Deterministic field set: SU(3) links, gaussian fermion source."""
        fs = cls(geometry, layout)
        v = geometry.volume
        links = random_su3_field(seed, 4 * v).reshape(4, v, 3, 3)
        fseed = (seed * 0x9E3779B97F4A7C15 + 0x5851F42D) % 2**64
        gen = np.random.Generator(np.random.Philox(fseed))
        ferm = np.empty((v, 3), dtype=COMPLEX)
        ferm.real = gen.standard_normal((v, 3), dtype=np.float32)
        ferm.imag = gen.standard_normal((v, 3), dtype=np.float32)
        fs.set_links(links)
        fs.set_fermion(ferm)
        return fs

    def links_site_view(self) -> np.ndarray:
        """(volume, 4, 3, 3) view of the links in this layout's storage."""
        if self._store is not None:
            v = self.geometry.volume
            return self._store[:, :36].reshape(v, 4, 3, 3)
        return self._links.transpose(1, 0, 2, 3)

    def link(self, mu: int) -> np.ndarray:
        """(volume, 3, 3) view of the direction-mu links."""
        return self.links_site_view()[:, mu]

    @property
    def fermion(self) -> np.ndarray:
        """(volume, 3) view of the fermion field."""
        if self._store is not None:
            return self._store[:, 36:39]
        return self._fermion

    def set_links(self, links_fm: np.ndarray) -> None:
        """Assign links from canonical (4, volume, 3, 3) values."""
        self.links_site_view()[:] = links_fm.transpose(1, 0, 2, 3)

    def set_fermion(self, ferm: np.ndarray) -> None:
        self.fermion[:] = ferm

    def links_canonical(self) -> np.ndarray:
        """Copy of the links in canonical (4, volume, 3, 3) order."""
        return np.ascontiguousarray(self.links_site_view().transpose(1, 0, 2, 3))


def transform_layout(fs: FieldSet, to: LayoutPolicy) -> FieldSet:
    """Re-store a field set under another layout; values are bit-identical."""
    out = FieldSet(fs.geometry, to)
    out.links_site_view()[:] = fs.links_site_view()
    out.fermion[:] = fs.fermion
    return out


def save(fs: FieldSet, path) -> None:
    """Flat binary format: 16-byte header, then float32 LE payload.

    Header: magic "SU3L", layout tag (uint8), record pad words (uint8),
    2 zero bytes, 4 dims as uint16 LE. Payload is the unpadded field data in
    linear-index order: site-major writes per-site records (links then
    fermion), field-major writes each field contiguously (links by direction,
    then the fermion field).
    """
    pad_words = fs.layout.site_padding_bytes // 8
    header = _MAGIC + struct.pack("<BBxx4H", fs.layout.tag.value, pad_words, *fs.geometry.dims)
    if fs.layout.tag is Layout.SITE_MAJOR:
        payload = fs._store[:, :_PAYLOAD_WORDS]
    else:
        payload = np.concatenate([fs._links.reshape(-1), fs._fermion.reshape(-1)])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload).view(np.float32).astype("<f4").tobytes())


def load(path) -> FieldSet:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != _MAGIC:
            raise ValueError(f"{path}: not a SU3L field file")
        tag, pad_words, nx, ny, nz, nt = struct.unpack("<BBxx4H", header[4:])
        raw = np.frombuffer(fh.read(), dtype="<f4").astype(np.float32)
    geom = LatticeGeometry((nx, ny, nz, nt))
    layout = LayoutPolicy(Layout(tag), pad_words * 8)
    expect = geom.volume * (SITE_PAYLOAD_BYTES // 4)
    if raw.size != expect:
        raise ValueError(f"{path}: payload has {raw.size} floats, expected {expect}")
    data = raw.view(COMPLEX)
    fs = FieldSet(geom, layout)
    if layout.tag is Layout.SITE_MAJOR:
        rec = data.reshape(geom.volume, _PAYLOAD_WORDS)
        fs._store[:, :_PAYLOAD_WORDS] = rec
    else:
        nl = 4 * geom.volume * 9
        fs._links[:] = data[:nl].reshape(4, geom.volume, 3, 3)
        fs._fermion[:] = data[nl:].reshape(geom.volume, 3)
    return fs
