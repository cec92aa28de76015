import struct

import numpy as np
import pytest

from implicithair import formats as fm
from implicithair.errors import FormatError
from implicithair.fields import GridSpec, OccupancyField, OrientationField
from implicithair.imaging import ImageMap
from implicithair.strands import HairModel, Strand, canonical_bbox


def f32_exact(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _model(rng, n=4):
    strands = [Strand(f32_exact(np.cumsum(rng.normal(size=(k, 3)), axis=0))) for k in rng.integers(2, 9, size=n)]
    return HairModel(strands, canonical_bbox((16, 16, 12)), {})


# --- HSTR ---------------------------------------------------------------------------------------

def test_hstr_layout_matches_hand_packed_bytes():
    pts = np.array([[0.0, 1.0, 2.0], [0.5, -1.0, 3.25]])
    m = HairModel([Strand(pts)], canonical_bbox((4, 4, 4)), {})
    expect = b"HSTR" + struct.pack("<III", 1, 1, 2) + struct.pack("<6f", *pts.ravel())
    assert fm.strands_to_bytes(m) == expect


def test_hstr_round_trip_is_byte_exact(rng, tmp_path):
    m = _model(rng)
    b = fm.strands_to_bytes(m)
    back = fm.strands_from_bytes(b, bbox=m.bbox)
    assert fm.strands_to_bytes(back) == b
    for s, t in zip(m.strands, back.strands):
        np.testing.assert_array_equal(s.points, t.points)
    fm.write_strands(tmp_path / "a.hstr", m)
    assert len(fm.read_strands(tmp_path / "a.hstr").strands) == len(m.strands)
    empty = fm.strands_from_bytes(fm.strands_to_bytes(HairModel([], np.zeros((2, 3)), {})))
    assert empty.strands == []


@pytest.mark.parametrize("mutate,msg", [
    (lambda b: b"HSTX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 2) + b[8:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\0", "trailing"),
])
def test_hstr_rejects_corruption(rng, mutate, msg):
    b = fm.strands_to_bytes(_model(rng, 2))
    with pytest.raises(FormatError, match=msg):
        fm.strands_from_bytes(mutate(b))


# --- HFLD / HLAT --------------------------------------------------------------------------------

def test_hfld_round_trip(rng, tmp_path):
    spec = GridSpec((3, 4, 5), origin=(1.0, -2.0, 0.5), voxel_size=0.25)
    ori = OrientationField(spec, rng.normal(size=spec.dims + (3,)).astype(np.float32))
    occ = OccupancyField(spec, (rng.uniform(size=spec.dims) > 0.5).astype(np.float32))
    for f in (ori, occ):
        b = fm.field_to_bytes(f)
        back = fm.field_from_bytes(b)
        assert type(back) is type(f) and back.spec == spec
        np.testing.assert_array_equal(back.data, f.data)
        assert fm.field_to_bytes(back) == b
    fm.write_field(tmp_path / "o.hfld", ori)
    np.testing.assert_array_equal(fm.read_field(tmp_path / "o.hfld").data, ori.data)


def test_hfld_header_and_payload_order():
    spec = GridSpec((1, 2, 3))
    data = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
    b = fm.field_to_bytes(OccupancyField(spec, data))
    assert b[:4] == b"HFLD"
    assert struct.unpack("<5I", b[4:24]) == (1, 1, 1, 2, 3)
    assert struct.unpack("<4f", b[24:40]) == (0.0, 0.0, 0.0, 1.0)
    assert struct.unpack("<6f", b[40:]) == tuple(range(6))  # x fastest
    bad = b[:8] + struct.pack("<I", 7) + b[12:]
    with pytest.raises(FormatError, match="kind"):
        fm.field_from_bytes(bad)
    with pytest.raises(TypeError):
        fm.field_to_bytes(data)


def test_hlat_round_trip(rng, tmp_path):
    spec = GridSpec((8, 8, 8), origin=(0.5, 0.0, -1.0))
    lat = rng.normal(size=(5, 5, 5, 6)).astype(np.float32)
    b = fm.latents_to_bytes(lat, 4, spec)
    got, d, frame = fm.latents_from_bytes(b)
    np.testing.assert_array_equal(got, lat)
    assert d == 4 and frame == (0.5, 0.0, -1.0, 1.0)
    fm.write_latents(tmp_path / "l.hlat", lat, 4, spec)
    assert fm.latents_to_bytes(fm.read_latents(tmp_path / "l.hlat")[0], 4, spec) == b
    with pytest.raises(ValueError):
        fm.latents_to_bytes(lat[0], 4, spec)
    with pytest.raises(FormatError):
        fm.latents_from_bytes(b + b"x")


# --- images -------------------------------------------------------------------------------------

def test_pfm_rows_bottom_to_top_and_sentinels():
    a = np.array([[1.0, 2.0], [3.0, -1.0], [np.inf, 0.5]], np.float32)
    b = fm.image_to_pfm(ImageMap(a, "DEPTH"))
    head, payload = b[:b.index(b"-1.0\n") + 5], b[b.index(b"-1.0\n") + 5:]
    assert head == b"Pf\n2 3\n-1.0\n"
    assert struct.unpack("<6f", payload)[:2] == (np.inf, 0.5)  # first stored row is the bottom one
    back = fm.image_from_pfm(b, "DEPTH")
    np.testing.assert_array_equal(back.data, a)
    assert fm.image_to_pfm(back) == b


def test_pfm_rgb_and_big_endian(rng, tmp_path):
    a = rng.uniform(size=(3, 4, 3)).astype(np.float32)
    fm.write_pfm(tmp_path / "c.pfm", ImageMap(a, "RGB"))
    back = fm.read_pfm(tmp_path / "c.pfm")
    assert back.kind == "RGB"
    np.testing.assert_array_equal(back.data, a)
    g = rng.uniform(size=(2, 3)).astype(np.float32)
    be = b"Pf\n3 2\n1.0\n" + g[::-1].astype(">f4").tobytes()
    np.testing.assert_array_equal(fm.image_from_pfm(be).data, g)
    with pytest.raises(FormatError):
        fm.image_from_pfm(b"P6\n1 1\n-1\n")
    with pytest.raises(ValueError):
        fm.image_to_pfm(ImageMap(np.zeros((2, 2, 2)), "RGB"))


def test_pgm_quantisation(tmp_path):
    a = np.array([[0.0, 0.5, 1.0], [2.0, -1.0, np.inf]])
    fm.write_pgm(tmp_path / "m.pgm", ImageMap(a, "MASK"))
    raw = (tmp_path / "m.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert list(raw[-6:]) == [0, 128, 255, 255, 0, 0]
    back = fm.read_pgm(tmp_path / "m.pgm")
    np.testing.assert_allclose(back.data, np.array([[0, 128, 255], [255, 0, 0]]) / 255.0, atol=1e-7)
    (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        fm.read_pgm(tmp_path / "x.pgm")


# --- polylines and digests ----------------------------------------------------------------------

def test_ply_and_obj(rng, tmp_path):
    m = _model(rng, 3)
    fm.write_ply(tmp_path / "m.ply", m)
    text = (tmp_path / "m.ply").read_text().splitlines()
    nv = sum(len(s.points) for s in m.strands)
    assert f"element vertex {nv}" in text and f"element edge {nv - 3}" in text
    assert len(text) == text.index("end_header") + 1 + nv + nv - 3
    fm.write_obj(tmp_path / "m.obj", m)
    back = fm.read_obj(tmp_path / "m.obj")
    assert [len(s.points) for s in back.strands] == [len(s.points) for s in m.strands]
    for s, t in zip(m.strands, back.strands):
        np.testing.assert_allclose(s.points, t.points, atol=1e-6)


def test_directory_digest(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "x.bin").write_bytes(b"1")
    (tmp_path / "y.bin").write_bytes(b"2")
    d0 = fm.directory_digest(tmp_path)
    (tmp_path / "run.log").write_text("noise")
    assert fm.directory_digest(tmp_path) == d0
    (tmp_path / "y.bin").write_bytes(b"3")
    assert fm.directory_digest(tmp_path) != d0
    (tmp_path / "y.bin").write_bytes(b"2")
    assert fm.directory_digest(tmp_path) == d0
    (tmp_path / "y.bin").rename(tmp_path / "z.bin")
    assert fm.directory_digest(tmp_path) != d0
    assert fm.sha256_file(tmp_path / "z.bin") == "d4735e3a265e16eee03f59718b9b5d03019c07d8b6c51f90da3a666eec13ab35"
