"""Binary checkpoint format.

All integers little-endian::

    b"MUNRCKPT"
    u32 version
    u32 len, config JSON bytes
    u32 param count
      per param: u16 len, name bytes, u8 dtype (0=f32, 1=f64), u8 ndim,
                 u32 × ndim dims, raw values
    u32 epoch
    u32 len, rng-state bytes
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import FormatError, VersionError

MAGIC = b"MUNRCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    config: dict
    params: List[Tuple[str, np.ndarray]]
    epoch: int = 0
    rng_state: bytes = b""
    version: int = VERSION

    def param_dict(self) -> Dict[str, np.ndarray]:
        return dict(self.params)


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    cfg = json.dumps(ckpt.config, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params:
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise FormatError(f"parameter {name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode()
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
    buf.write(struct.pack("<I", ckpt.epoch))
    buf.write(struct.pack("<I", len(ckpt.rng_state)))
    buf.write(ckpt.rng_state)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not a checkpoint: bad magic bytes")
    (version,) = r.unpack("<I")
    if version > VERSION:
        raise VersionError(f"checkpoint version {version} is newer than supported version {VERSION}")
    (clen,) = r.unpack("<I")
    try:
        config = json.loads(r.take(clen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint config is not valid JSON ({exc})") from exc
    (count,) = r.unpack("<I")
    params = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"parameter {name}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        dtype = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype).reshape(shape)
        params.append((name, arr.astype(dtype.newbyteorder("="), copy=True)))
    (epoch,) = r.unpack("<I")
    (rlen,) = r.unpack("<I")
    rng_state = r.take(rlen)
    if r.pos != len(data):
        raise FormatError(f"checkpoint has {len(data) - r.pos} trailing bytes")
    return Checkpoint(config, params, epoch, rng_state, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"checkpoint {path} not found") from exc
    return from_bytes(data)
