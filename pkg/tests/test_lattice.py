import numpy as np
import pytest

from qcdperf import lattice
from qcdperf.lattice import (
    FieldSet,
    GeometryError,
    LatticeGeometry,
    Layout,
    LayoutPolicy,
    transform_layout,
)


def test_dimension_validation():
    with pytest.raises(GeometryError):
        LatticeGeometry((1, 1, 1, 1))  # single-site lattice: odd dims
    with pytest.raises(GeometryError):
        LatticeGeometry((4, 4, 3, 4))
    with pytest.raises(GeometryError):
        LatticeGeometry((4, 4))
    g = LatticeGeometry((2, 4, 6, 8))
    assert g.volume == 2 * 4 * 6 * 8


def test_origin_and_parity():
    g = LatticeGeometry.hypercube(4)
    s = g.site_index((0, 0, 0, 0))
    assert s.linear == 0 and s.parity == 0
    s = g.site_index((1, 0, 0, 0))
    assert s.parity == 1 and s.linear >= g.half_volume == 128


def test_site_index_round_trip_exhaustive():
    g = LatticeGeometry.hypercube(4)
    seen = set()
    for x in range(4):
        for y in range(4):
            for z in range(4):
                for t in range(4):
                    s = g.site_index((x, y, z, t))
                    assert g.site_coords(s.linear) == (x, y, z, t)
                    seen.add(s.linear)
    assert seen == set(range(256))


def test_parity_blocks():
    g = LatticeGeometry.hypercube(4)
    for linear in range(g.volume):
        parity = sum(g.site_coords(linear)) % 2
        assert (linear >= g.half_volume) == bool(parity)


def test_coords_table_matches_scalar():
    g = LatticeGeometry((2, 4, 2, 4))
    table = lattice.coords_table(g)
    for linear in range(g.volume):
        assert tuple(table[:, linear]) == g.site_coords(linear)


def test_neighbor_examples_and_wrap():
    g = LatticeGeometry.hypercube(4)
    origin = g.site_index((0, 0, 0, 0))
    assert g.site_coords(g.neighbor(origin, 0, 1).linear) == (1, 0, 0, 0)
    edge = g.site_index((3, 0, 0, 0))
    assert g.site_coords(g.neighbor(edge, 0, 1).linear) == (0, 0, 0, 0)
    with pytest.raises(GeometryError):
        g.neighbor(origin, 4, 1)


def test_neighbor_inverse_and_parity_flip_exhaustive():
    g = LatticeGeometry.hypercube(4)
    for linear in range(g.volume):
        s = lattice.SiteIndex(linear, int(linear >= g.half_volume))
        for mu in range(4):
            n = g.neighbor(s, mu, 1)
            assert n.parity != s.parity
            assert g.neighbor(n, mu, -1).linear == s.linear


def test_out_of_range_coordinates_rejected():
    g = LatticeGeometry.hypercube(4)
    with pytest.raises(GeometryError):
        g.site_index((4, 0, 0, 0))
    with pytest.raises(GeometryError):
        g.site_coords(256)


def test_layout_policy_records():
    assert lattice.SITE_PAYLOAD_BYTES == 312
    assert LayoutPolicy.site_major().site_record_bytes == 312
    assert LayoutPolicy.site_major(milc_emulation=True).site_record_bytes == 1656
    with pytest.raises(ValueError):
        LayoutPolicy(Layout.FIELD_MAJOR, 8)
    with pytest.raises(ValueError):
        LayoutPolicy(Layout.SITE_MAJOR, 5)


def test_working_set_arithmetic():
    milc = LayoutPolicy.site_major(milc_emulation=True)
    assert milc.working_set_bytes(LatticeGeometry.hypercube(4)) == 423936
    assert milc.working_set_bytes(LatticeGeometry.hypercube(6)) == 2146176


def test_field_major_contiguity():
    # direction-0 links of a 2^4 lattice occupy one contiguous 16 x 72 region
    g = LatticeGeometry.hypercube(2)
    fs = FieldSet.random(g, LayoutPolicy.field_major(), seed=1)
    link0 = fs.link(0)
    assert link0.nbytes == 16 * 72
    assert link0.strides == (72, 24, 8)  # site i+1 starts 72 bytes after site i
    assert link0.base is not None


def test_site_major_stride_is_record_size():
    g = LatticeGeometry.hypercube(2)
    for milc in (False, True):
        pol = LayoutPolicy.site_major(milc_emulation=milc)
        fs = FieldSet.random(g, pol, seed=1)
        assert fs.links_site_view().strides[0] == pol.site_record_bytes
        assert fs.fermion.strides[0] == pol.site_record_bytes


def test_layout_values_independent_of_storage():
    g = LatticeGeometry.hypercube(2)
    a = FieldSet.random(g, LayoutPolicy.site_major(), seed=7)
    b = FieldSet.random(g, LayoutPolicy.field_major(), seed=7)
    assert np.array_equal(a.links_site_view(), b.links_site_view())
    assert np.array_equal(a.fermion, b.fermion)


def test_transform_layout_involution_bitwise():
    g = LatticeGeometry.hypercube(2)
    fs = FieldSet.random(g, LayoutPolicy.site_major(milc_emulation=True), seed=3)
    there = transform_layout(fs, LayoutPolicy.field_major())
    back = transform_layout(there, fs.layout)
    assert np.array_equal(back._store, fs._store)
    assert np.array_equal(there.links_site_view(), fs.links_site_view())


@pytest.mark.parametrize("layout", [LayoutPolicy.site_major(),
                                    LayoutPolicy.site_major(milc_emulation=True),
                                    LayoutPolicy.field_major()])
def test_save_load_round_trip(tmp_path, layout):
    g = LatticeGeometry((2, 2, 4, 2))
    fs = FieldSet.random(g, layout, seed=11)
    path = tmp_path / "field.su3l"
    lattice.save(fs, path)
    back = lattice.load(path)
    assert back.geometry == g
    assert back.layout == layout
    assert np.array_equal(back.links_site_view(), fs.links_site_view())
    assert np.array_equal(back.fermion, fs.fermion)


def test_file_header_format(tmp_path):
    g = LatticeGeometry((2, 4, 6, 8))
    fs = FieldSet.random(g, LayoutPolicy.field_major(), seed=2)
    path = tmp_path / "f.su3l"
    lattice.save(fs, path)
    raw = path.read_bytes()
    assert raw[:4] == b"SU3L"
    assert raw[4] == Layout.FIELD_MAJOR.value
    dims = np.frombuffer(raw[8:16], dtype="<u2")
    assert tuple(dims) == (2, 4, 6, 8)
    assert len(raw) == 16 + g.volume * lattice.SITE_PAYLOAD_BYTES


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ValueError):
        lattice.load(path)


def test_load_rejects_truncated_payload(tmp_path):
    g = LatticeGeometry.hypercube(2)
    fs = FieldSet.random(g, LayoutPolicy.field_major(), seed=4)
    path = tmp_path / "cut.su3l"
    lattice.save(fs, path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError):
        lattice.load(path)
