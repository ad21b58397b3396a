"""MSWT parameter checkpoint files.

Layout (little-endian)::

    b"MSWT"  u16 version=1
    u32 config_len, config_len bytes of UTF-8 JSON (model config)
    u32 n_records
    per record: u16 name_len, name, u8 ndim, ndim x u32 dims, prod(dims) x f32
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"MSWT"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray], config: dict | None = None) -> None:
    cfg = json.dumps(config or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode()
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an MSWT checkpoint")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 6
    try:
        (clen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        config = json.loads(buf[pos:pos + clen].decode())
        pos += clen
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        state = {}
        for _ in range(n):
            (nl,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nl].decode()
            pos += nl
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if pos + 4 * count > len(buf):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            state[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return state, config
