"""HNNC checkpoint container.

Layout (little-endian)::

    b"HNNC" | u32 version | 32-byte sha256 layer digest | u64 step | u64 seed |
    u32 epoch | u32 meta_len | meta (utf-8 JSON) | u32 n_entries |
    per entry: u16 name_len | name | u8 kind | u8 ndim | ndim x u32 dims | f32 payload

``kind`` is 0 for parameters, 1 for Adam first moments, 2 for Adam second moments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DigestMismatchError, FormatError

MAGIC = b"HNNC"
VERSION = 1
_KINDS = {"param": 0, "m": 1, "v": 2}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}


@dataclass
class Checkpoint:
    digest: str
    params: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    def check_digest(self, expected: str):
        if expected != self.digest:
            raise DigestMismatchError(f"checkpoint digest {self.digest[:12]} != network digest {expected[:12]}")

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.meta, sort_keys=True, separators=(",", ":")).encode()
        parts = [MAGIC, struct.pack("<I", VERSION), bytes.fromhex(self.digest),
                 struct.pack("<QQI", self.step, self.seed, self.epoch),
                 struct.pack("<I", len(meta)), meta]
        entries = [("param", k, v) for k, v in self.params.items()]
        entries += [("m", k, v) for k, v in self.adam_m.items()]
        entries += [("v", k, v) for k, v in self.adam_v.items()]
        parts.append(struct.pack("<I", len(entries)))
        for kind, name, arr in entries:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode()
            parts.append(struct.pack("<H", len(nb)) + nb)
            parts.append(struct.pack("<BB", _KINDS[kind], arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise FormatError("not an HNNC checkpoint")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise FormatError(f"unsupported HNNC version {version}")
        digest = blob[8:40].hex()
        step, seed, epoch = struct.unpack_from("<QQI", blob, 40)
        off = 60
        (mlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        meta = json.loads(blob[off:off + mlen].decode())
        off += mlen
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        tables = {"param": {}, "m": {}, "v": {}}
        for _ in range(n):
            (nl,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nl].decode()
            off += nl
            kind, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            dims = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            count = int(np.prod(dims)) if ndim else 1
            if off + 4 * count > len(blob):
                raise FormatError(f"truncated payload for {name!r}")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float32)
            off += 4 * count
            tables[_KIND_NAMES[kind]][name] = arr
        if off != len(blob):
            raise FormatError("trailing bytes after checkpoint payload")
        return cls(digest, tables["param"], tables["m"], tables["v"], step, seed, epoch, meta)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def make_checkpoint(module, digest, optimizer=None, seed=0, meta=None) -> Checkpoint:
    ck = Checkpoint(digest=digest, params=module.state_dict(), seed=seed, meta=dict(meta or {}))
    if optimizer is not None:
        ck.adam_m = {k: v.copy() for k, v in optimizer.m.items()}
        ck.adam_v = {k: v.copy() for k, v in optimizer.v.items()}
        ck.step = optimizer.t
        ck.epoch = optimizer.epoch
    return ck


def params_digest(params: dict) -> str:
    """sha256 over parameter names and float32 bytes; used for freeze/determinism checks."""
    import hashlib

    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k], dtype="<f4").tobytes())
    return h.hexdigest()
