"""Model container file.

Layout (little-endian)::

    b"FLSN"  u16 version
    u32 descriptor length, UTF-8 JSON architecture descriptor
    u32 tensor count, then per tensor:
        u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 rank,
        rank x u32 extents, raw data

Tensor names are ``params/<path>`` or ``buffers/<path>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .netzoo import Network

MAGIC = b"FLSN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class ModelFormatError(ValueError):
    pass


class MagicMismatchError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


def model_to_bytes(net: Network) -> bytes:
    desc = json.dumps(net.config(), sort_keys=True, separators=(",", ":")).encode()
    tensors = [("params/" + k, v) for k, v in net.params().items()]
    tensors += [("buffers/" + k, v) for k, v in net.buffers().items()]
    out = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(desc)), desc,
           struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ModelFormatError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(data: bytes) -> Network:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise MagicMismatchError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    r.take(4)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported model file version {version} (expected {VERSION})")
    (dlen,) = r.unpack("<I")
    cfg = json.loads(r.take(dlen).decode())
    net = Network.from_config(cfg)
    (count,) = r.unpack("<I")
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise ModelFormatError(f"unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[code]
        arr = np.frombuffer(r.take(int(np.prod(shape)) * dt.itemsize), dtype=dt).reshape(shape)
        kind, _, key = name.partition("/")
        if kind not in ("params", "buffers"):
            raise ModelFormatError(f"bad tensor name {name!r}")
        net.set_tensor(key, arr.astype(dt.newbyteorder("=")).copy())
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return net


def save_model(net: Network, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(model_to_bytes(net))


def load_model(path) -> Network:
    return model_from_bytes(Path(path).read_bytes())
