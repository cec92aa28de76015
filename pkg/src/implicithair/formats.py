"""Binary and text file formats. All binary layouts are little-endian.

HSTR  strands    "HSTR" u32 version, u32 count, then per strand u32 n and n*(x,y,z) f32
HFLD  fields     "HFLD" u32 version, u32 kind (0 ORI, 1 OCC), u32 D, H, W,
                 f32 origin x, y, z, f32 voxel_size, then f32 payload in (z, y, x[, c]) order
HLAT  latents    "HLAT" u32 version, u32 d, u32 nz, ny, nx, u32 latent dim,
                 f32 origin x, y, z, f32 voxel_size, then f32 payload (nz, ny, nx, dim)
PFM   float maps "Pf" (1 channel) or "PF" (3 channels), scale -1 (little-endian), rows bottom to top
PGM   8-bit maps binary P5, values quantised from [0, vmax]

Map sentinels survive PFM unchanged: ORI2D uses -1 off hair, DEPTH uses +inf.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .fields import GridSpec, OccupancyField, OrientationField
from .imaging import ImageMap
from .strands import HairModel, Strand

VERSION = 1
KIND_ORI, KIND_OCC = 0, 1


def _read_exact(f, n):
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(b)}")
    return b


def _check_magic(f, magic):
    got = _read_exact(f, len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (ver,) = struct.unpack("<I", _read_exact(f, 4))
    if ver != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {ver}")


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def directory_digest(root, exclude=("*.log",)):
    """sha256 over relative paths and contents of every file below ``root``, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if not p.is_file() or any(p.match(pat) for pat in exclude):
            continue
        h.update(p.relative_to(root).as_posix().encode() + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


# --- HSTR ---------------------------------------------------------------------------------------

def strands_to_bytes(model: HairModel) -> bytes:
    out = [b"HSTR", struct.pack("<II", VERSION, len(model.strands))]
    for s in model.strands:
        out.append(struct.pack("<I", len(s.points)))
        out.append(_f32(s.points))
    return b"".join(out)


def strands_from_bytes(data: bytes, bbox=None, meta=None) -> HairModel:
    f = io.BytesIO(data)
    _check_magic(f, b"HSTR")
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    strands = []
    for _ in range(count):
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        pts = np.frombuffer(_read_exact(f, 12 * n), dtype="<f4").reshape(n, 3).astype(np.float64)
        strands.append(Strand(pts))
    if f.read(1):
        raise FormatError("trailing bytes after HSTR payload")
    if bbox is None:
        if strands:
            allp = np.concatenate([s.points for s in strands])
            bbox = np.stack([allp.min(0), allp.max(0)])
        else:
            bbox = np.zeros((2, 3))
    return HairModel(strands, np.asarray(bbox, dtype=np.float64), dict(meta or {}))


def write_strands(path, model: HairModel):
    Path(path).write_bytes(strands_to_bytes(model))


def read_strands(path, bbox=None, meta=None) -> HairModel:
    return strands_from_bytes(Path(path).read_bytes(), bbox, meta)


# --- HFLD ---------------------------------------------------------------------------------------

def _spec_bytes(spec: GridSpec):
    return struct.pack("<4f", *spec.origin, spec.voxel_size)


def _spec_read(f, dims):
    ox, oy, oz, vs = struct.unpack("<4f", _read_exact(f, 16))
    return GridSpec(dims, (ox, oy, oz), vs)


def field_to_bytes(field) -> bytes:
    if isinstance(field, OrientationField):
        kind = KIND_ORI
    elif isinstance(field, OccupancyField):
        kind = KIND_OCC
    else:
        raise TypeError(f"not a field: {type(field).__name__}")
    D, H, W = field.spec.dims
    head = b"HFLD" + struct.pack("<I I 3I", VERSION, kind, D, H, W) + _spec_bytes(field.spec)
    return head + _f32(field.data)


def field_from_bytes(data: bytes):
    f = io.BytesIO(data)
    _check_magic(f, b"HFLD")
    kind, D, H, W = struct.unpack("<4I", _read_exact(f, 16))
    spec = _spec_read(f, (D, H, W))
    if kind == KIND_ORI:
        shape, cls = (D, H, W, 3), OrientationField
    elif kind == KIND_OCC:
        shape, cls = (D, H, W), OccupancyField
    else:
        raise FormatError(f"unknown HFLD kind {kind}")
    n = int(np.prod(shape))
    payload = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").reshape(shape)
    if f.read(1):
        raise FormatError("trailing bytes after HFLD payload")
    return cls(spec, payload.astype(np.float32))


def write_field(path, field):
    Path(path).write_bytes(field_to_bytes(field))


def read_field(path):
    return field_from_bytes(Path(path).read_bytes())


# --- HLAT ---------------------------------------------------------------------------------------

def latents_to_bytes(latents: np.ndarray, d: int, spec: GridSpec) -> bytes:
    latents = np.asarray(latents)
    if latents.ndim != 4:
        raise ValueError("latents must be (nz, ny, nx, dim)")
    nz, ny, nx, dim = latents.shape
    head = b"HLAT" + struct.pack("<I I 3I I", VERSION, d, nz, ny, nx, dim) + _spec_bytes(spec)
    return head + _f32(latents)


def latents_from_bytes(data: bytes):
    """Returns (latents (nz, ny, nx, dim) f32, d, (origin x, y, z, voxel_size))."""
    f = io.BytesIO(data)
    _check_magic(f, b"HLAT")
    d, nz, ny, nx, dim = struct.unpack("<5I", _read_exact(f, 20))
    ox, oy, oz, vs = struct.unpack("<4f", _read_exact(f, 16))
    lat = np.frombuffer(_read_exact(f, 4 * nz * ny * nx * dim), dtype="<f4").reshape(nz, ny, nx, dim)
    if f.read(1):
        raise FormatError("trailing bytes after HLAT payload")
    return lat.astype(np.float32), d, (ox, oy, oz, vs)


def write_latents(path, latents, d, spec):
    Path(path).write_bytes(latents_to_bytes(latents, d, spec))


def read_latents(path):
    return latents_from_bytes(Path(path).read_bytes())


# --- PFM / PGM ----------------------------------------------------------------------------------

def image_to_pfm(img: ImageMap) -> bytes:
    data = img.data
    if data.ndim == 3 and data.shape[2] != 3:
        raise ValueError("PFM holds 1 or 3 channels")
    tag = b"PF" if data.ndim == 3 else b"Pf"
    head = tag + b"\n%d %d\n-1.0\n" % (img.width, img.height)
    return head + _f32(data[::-1])


def image_from_pfm(data: bytes, kind=None) -> ImageMap:
    f = io.BytesIO(data)
    tag = f.readline().strip()
    if tag not in (b"PF", b"Pf"):
        raise FormatError(f"bad PFM tag {tag!r}")
    w, h = (int(t) for t in f.readline().split())
    scale = float(f.readline())
    ch = 3 if tag == b"PF" else 1
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(_read_exact(f, 4 * w * h * ch), dtype=dt)
    arr = arr.reshape((h, w, 3) if ch == 3 else (h, w))[::-1]
    if kind is None:
        kind = "RGB" if ch == 3 else "LUMA"
    return ImageMap(arr.astype(np.float32), kind)


def write_pfm(path, img: ImageMap):
    Path(path).write_bytes(image_to_pfm(img))


def read_pfm(path, kind=None) -> ImageMap:
    return image_from_pfm(Path(path).read_bytes(), kind)


def write_pgm(path, img: ImageMap, vmax=None):
    """8-bit preview. Non-finite values and ORI2D sentinels are written as 0."""
    data = np.asarray(img.data, dtype=np.float64)
    if data.ndim == 3:
        data = data.mean(axis=2)
    if vmax is None:
        vmax = {"LUMA": 100.0, "ORI2D": np.pi}.get(img.kind, 1.0)
    data = np.where(np.isfinite(data) & (data >= 0), data, 0.0)
    q = np.clip(np.rint(data / vmax * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (img.width, img.height) + q.tobytes())


def read_pgm(path, kind="MASK", vmax=1.0) -> ImageMap:
    f = io.BytesIO(Path(path).read_bytes())
    if f.readline().strip() != b"P5":
        raise FormatError("not a binary PGM")
    line = f.readline()
    while line.startswith(b"#"):
        line = f.readline()
    w, h = (int(t) for t in line.split())
    maxval = int(f.readline())
    if maxval > 255:
        raise FormatError("only 8-bit PGM is supported")
    q = np.frombuffer(_read_exact(f, w * h), dtype=np.uint8).reshape(h, w)
    return ImageMap(q.astype(np.float64) / maxval * vmax, kind)


# --- polyline export ----------------------------------------------------------------------------

def write_ply(path, model: HairModel):
    pts = [s.points for s in model.strands]
    nv = sum(len(p) for p in pts)
    ne = sum(len(p) - 1 for p in pts)
    lines = ["ply", "format ascii 1.0", f"element vertex {nv}", "property float x", "property float y",
             "property float z", f"element edge {ne}", "property int vertex1", "property int vertex2", "end_header"]
    for p in pts:
        lines.extend(f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in p)
    base = 0
    for p in pts:
        lines.extend(f"{base + i} {base + i + 1}" for i in range(len(p) - 1))
        base += len(p)
    Path(path).write_text("\n".join(lines) + "\n")


def write_obj(path, model: HairModel):
    lines = []
    for s in model.strands:
        lines.extend(f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in s.points)
    base = 1
    for s in model.strands:
        lines.append("l " + " ".join(str(base + i) for i in range(len(s.points))))
        base += len(s.points)
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path, bbox=None) -> HairModel:
    verts, strands = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(t) for t in parts[1:4]])
        elif parts[0] == "l":
            idx = [int(t) - 1 for t in parts[1:]]
            strands.append(Strand(np.asarray(verts)[idx]))
    if bbox is None:
        allp = np.asarray(verts) if verts else np.zeros((1, 3))
        bbox = np.stack([allp.min(0), allp.max(0)])
    return HairModel(strands, bbox, {})
