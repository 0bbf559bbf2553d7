"""Progressive bitstream: shared-seed ``z_T``, one coded chunk per step, lossless tail.

Stream layout (little-endian, see FORMAT.md)::

    b"UQDM" u16 version u8 flags u8 ndim u32[ndim] shape u32 data_dim
    u16 levels u16 T f64 gamma_min f64 gamma_max u64 seed  32-byte weights digest
    T step chunks (t = T..1) then the tail chunk, each ``u32 length + payload``
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from . import entropy, uq
from .checkpoint import model_digest
from .data import grid_index, grid_values, quantize_to_grid
from .diffusion import UQDM
from .reconstruct import MODES, reconstruct

MAGIC = b"UQDM"
VERSION = 1
FLAG_LEARNED = 1
FLAG_GAUSSIAN = 2
_RECON_SHIFT = 2


class CodecError(ValueError):
    pass


class DigestMismatch(CodecError):
    pass


@dataclass
class Header:
    shape: tuple
    data_dim: int
    levels: int
    T: int
    gamma_min: float
    gamma_max: float
    seed: int
    digest: bytes
    flags: int = 0

    @property
    def recon_mode(self) -> str:
        return MODES[(self.flags >> _RECON_SHIFT) & 3]

    @property
    def num_values(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def pack(self) -> bytes:
        nd = len(self.shape)
        return b"".join([
            MAGIC,
            struct.pack("<HBB", VERSION, self.flags, nd),
            struct.pack(f"<{nd}I", *self.shape),
            struct.pack("<IHHddQ", self.data_dim, self.levels, self.T,
                        self.gamma_min, self.gamma_max, self.seed & uq.MASK64),
            self.digest,
        ])

    @classmethod
    def unpack(cls, buf: bytes) -> tuple["Header", int]:
        if len(buf) < 8 or buf[:4] != MAGIC:
            raise CodecError("not a UQDM stream (bad magic)")
        version, flags, nd = struct.unpack_from("<HBB", buf, 4)
        if version != VERSION:
            raise CodecError(f"unsupported stream version {version}")
        pos = 8
        need = pos + 4 * nd + struct.calcsize("<IHHddQ") + 32
        if len(buf) < need:
            raise CodecError("stream header truncated")
        shape = struct.unpack_from(f"<{nd}I", buf, pos)
        pos += 4 * nd
        data_dim, levels, T, gmin, gmax, seed = struct.unpack_from("<IHHddQ", buf, pos)
        pos += struct.calcsize("<IHHddQ")
        digest = bytes(buf[pos : pos + 32])
        pos += 32
        return cls(tuple(shape), data_dim, levels, T, gmin, gmax, seed, digest, flags), pos


def _flags(model: UQDM, recon: str) -> int:
    f = 0
    if model.variance == "learned":
        f |= FLAG_LEARNED
    if model.density == "gaussian":
        f |= FLAG_GAUSSIAN
    return f | (MODES.index(recon) << _RECON_SHIFT)


def _coeffs_np(model: UQDM):
    with torch.no_grad():
        return {k: v.numpy() for k, v in model.coefficients().items()}, model.coefficients()


def _step_tables(model: UQDM, z: np.ndarray, t: int, u: np.ndarray, coeffs):
    with torch.no_grad():
        dens = model.reverse_density(torch.from_numpy(z), t, coeffs=coeffs)
    return entropy.build_cdf_batch(dens.mean.numpy(), dens.scale.numpy(), dens.delta.numpy(), u)


def _tail_tables(model: UQDM, z0: np.ndarray, coeffs):
    with torch.no_grad():
        logp = model.recon_log_probs(torch.from_numpy(z0), coeffs).numpy()
    return entropy.categorical_cdf_batch(logp.reshape(-1, model.levels))


def _chunk(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def _rows(model: UQDM, n: int) -> int:
    if n % model.data_dim:
        raise CodecError(f"{n} values do not split into rows of data_dim={model.data_dim}")
    return n // model.data_dim


def compress(x, model: UQDM, seed: int, recon: str = "denoise", digest: bytes | None = None) -> bytes:
    """Encode gridded data ``x`` (any shape whose size is a multiple of ``data_dim``)."""
    x = np.asarray(x, dtype=np.float64)
    model_levels = model.levels
    idx = grid_index(x, model_levels)
    digest = model_digest(model) if digest is None else digest
    sched = model.schedule.frozen()
    header = Header(tuple(int(s) for s in x.shape), model.data_dim, model_levels, model.T,
                    sched.gamma_min, sched.gamma_max, seed, digest, _flags(model, recon))
    n = x.size
    if n == 0:
        return header.pack()
    rows = _rows(model, n)
    xs = x.reshape(rows, model.data_dim)
    c, coeffs = _coeffs_np(model)
    z = uq.shared_normal(seed, n).reshape(xs.shape)
    parts = [header.pack()]
    for t in range(model.T, 0, -1):
        u = uq.dither_field(seed, t, n).reshape(xs.shape)
        mu_q = c["b"][t] * z + c["c"][t] * xs
        k = uq.uq_quantize(mu_q, c["delta"][t], u)
        try:
            tables = _step_tables(model, z, t, u, coeffs)
        except entropy.CodingRangeError as exc:
            raise CodecError(f"step {t}: {exc}") from exc
        parts.append(_chunk(entropy.encode(k.ravel(), tables)))
        z = uq.uq_reconstruct(k, c["delta"][t], u)
    parts.append(_chunk(entropy.encode(idx.ravel(), _tail_tables(model, z, coeffs))))
    return b"".join(parts)


def split_chunks(buf: bytes, start: int) -> list[bytes]:
    """Complete length-prefixed chunks after ``start``; a partial trailing chunk is dropped."""
    chunks = []
    pos = start
    while pos + 4 <= len(buf):
        (n,) = struct.unpack_from("<I", buf, pos)
        if pos + 4 + n > len(buf):
            break
        chunks.append(bytes(buf[pos + 4 : pos + 4 + n]))
        pos += 4 + n
    return chunks


@dataclass
class Decoded:
    x: np.ndarray
    lossy: bool
    t: int  # latent step the output was derived from; -1 for exact data
    bits_received: int


def read_header(buf: bytes) -> Header:
    return Header.unpack(buf)[0]


def decompress(buf: bytes, model: UQDM, stop_at: int | None = None, recon: str | None = None,
               seed: int = 0, digest: bytes | None = None) -> Decoded:
    """Decode a stream or any prefix of it.

    With the whole stream and no ``stop_at`` the result is exact.  Otherwise the
    available chunks are decoded down to ``z_t`` (``t >= stop_at``) and a lossy
    reconstruction of the requested kind is returned, snapped to the data grid.
    """
    header, pos = Header.unpack(buf)
    digest = model_digest(model) if digest is None else digest
    if header.digest != digest:
        raise DigestMismatch("stream was produced with different model weights")
    if header.T != model.T or header.data_dim != model.data_dim or header.levels != model.levels:
        raise CodecError("stream parameters do not match the model")
    if stop_at is not None and not 0 <= stop_at <= header.T:
        raise ValueError(f"stop_at must be within [0, {header.T}]")
    recon = header.recon_mode if recon is None else recon
    n = header.num_values
    if n == 0:
        return Decoded(np.zeros(header.shape), False, -1, 8 * len(buf))
    chunks = split_chunks(buf, pos)
    rows = _rows(model, n)
    shape2 = (rows, model.data_dim)
    c, coeffs = _coeffs_np(model)
    z = uq.shared_normal(header.seed, n).reshape(shape2)
    target = 0 if stop_at is None else stop_at
    used_bits = 8 * pos
    t = header.T
    while t > target and (header.T - t) < len(chunks):
        chunk = chunks[header.T - t]
        u = uq.dither_field(header.seed, t, n).reshape(shape2)
        tables = _step_tables(model, z, t, u, coeffs)
        try:
            k = entropy.decode(chunk, tables)
        except entropy.DecodeError as exc:
            raise CodecError(f"step {t}: {exc}") from exc
        z = uq.uq_reconstruct(k.reshape(shape2), c["delta"][t], u)
        used_bits += 8 * (4 + len(chunk))
        t -= 1
    if t == 0 and stop_at is None and len(chunks) > header.T:
        tail = chunks[header.T]
        try:
            idx = entropy.decode(tail, _tail_tables(model, z, coeffs))
        except entropy.DecodeError as exc:
            raise CodecError(f"tail: {exc}") from exc
        used_bits += 8 * (4 + len(tail))
        x = grid_values(model.levels)[idx].reshape(header.shape)
        return Decoded(x, False, -1, used_bits)
    xr = reconstruct(model, z, t, recon, seed)
    xr = quantize_to_grid(np.clip(xr, -1.0, 1.0), model.levels)
    return Decoded(xr.reshape(header.shape), True, t, used_bits)


def decode_latents(buf: bytes, model: UQDM) -> list[np.ndarray]:
    """Every latent ``z_T, z_{T-1}, ...`` the received chunks determine."""
    header, pos = Header.unpack(buf)
    n = header.num_values
    chunks = split_chunks(buf, pos)
    shape2 = (_rows(model, n), model.data_dim)
    c, coeffs = _coeffs_np(model)
    z = uq.shared_normal(header.seed, n).reshape(shape2)
    out = [z]
    for t in range(header.T, 0, -1):
        if header.T - t >= len(chunks):
            break
        u = uq.dither_field(header.seed, t, n).reshape(shape2)
        k = entropy.decode(chunks[header.T - t], _step_tables(model, z, t, u, coeffs))
        z = uq.uq_reconstruct(k.reshape(shape2), c["delta"][t], u)
        out.append(z)
    return out


def rate_profile(buf: bytes) -> dict:
    """Exact bit accounting: header, per-step chunks (t = T..1, with length prefix) and tail."""
    header, pos = Header.unpack(buf)
    chunks = split_chunks(buf, pos)
    sizes = [8 * (4 + len(ch)) for ch in chunks]
    steps = sizes[: header.T]
    tail = sizes[header.T] if len(sizes) > header.T else 0
    return {
        "header_bits": 8 * pos,
        "step_bits": steps,
        "tail_bits": tail,
        "total_bits": 8 * len(buf),
        "num_values": header.num_values,
        "T": header.T,
    }
