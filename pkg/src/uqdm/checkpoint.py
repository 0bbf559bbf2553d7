"""Versioned binary checkpoints.

Layout (all little-endian)::

    b"UQDMCKPT"  u16 version
    f64 gamma_min  f64 gamma_max
    u32 len + UTF-8 JSON model config
    u32 tensor count, then per tensor: u16 name len, name, u8 ndim, u32 dims...
    row-major f64 weights of every tensor, in header order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .diffusion import UQDM

MAGIC = b"UQDMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(model: UQDM) -> bytes:
    state = model.state_dict()
    sched = model.schedule.frozen()
    cfg = json.dumps(model.config, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<H", VERSION), struct.pack("<dd", sched.gamma_min, sched.gamma_max)]
    out.append(struct.pack("<I", len(cfg)) + cfg)
    out.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        enc = name.encode()
        out.append(struct.pack("<H", len(enc)) + enc + struct.pack("<B", tensor.ndim))
        out.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
    for tensor in state.values():
        out.append(tensor.detach().cpu().to(torch.float64).numpy().astype("<f8").tobytes(order="C"))
    return b"".join(out)


def from_bytes(buf: bytes, dtype: torch.dtype = torch.float64) -> UQDM:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a UQDM checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 10 + 16
    (n_cfg,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    cfg = json.loads(buf[pos : pos + n_cfg].decode())
    pos += n_cfg
    (n_tensors,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    specs = []
    for _ in range(n_tensors):
        (n_name,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + n_name].decode()
        pos += n_name
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        specs.append((name, shape))

    model = UQDM(**cfg)
    expected = model.state_dict()
    if [n for n, _ in specs] != list(expected):
        raise CheckpointError("tensor names do not match the model configuration")
    state = {}
    for name, shape in specs:
        if tuple(expected[name].shape) != tuple(shape):
            raise CheckpointError(f"shape mismatch for {name}: {shape} vs {tuple(expected[name].shape)}")
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(buf):
            raise CheckpointError("checkpoint truncated")
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        state[name] = torch.from_numpy(arr.copy())
    if pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint weights")
    model.load_state_dict(state)
    model.denoiser.to(dtype)
    return model


def digest(buf: bytes) -> bytes:
    return hashlib.sha256(buf).digest()


def model_digest(model: UQDM) -> bytes:
    return digest(to_bytes(model))


def save(model: UQDM, path) -> bytes:
    buf = to_bytes(model)
    Path(path).write_bytes(buf)
    return digest(buf)


def load(path, dtype: torch.dtype = torch.float64) -> UQDM:
    return from_bytes(Path(path).read_bytes(), dtype=dtype)
