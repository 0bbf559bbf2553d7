"""Universal (dithered) quantization and the shared counter-based dither stream.

The mixing function is part of the bitstream contract::

    h = seed
    h = mix64(h ^ mix64(t))
    h = mix64(h ^ mix64(i))
    u = (h >> 11) * 2**-53 - 1/2

where ``mix64`` is the SplitMix64 finalizer.  Any coordinate's dither can be
computed independently, so encoder and decoder never depend on draw order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags folded into the seed; see stream_seed()
STREAM_DITHER = 0
STREAM_ZT = int.from_bytes(b"zT", "little")
STREAM_ANCESTRAL = int.from_bytes(b"anc", "little")
STREAM_TRAIN = int.from_bytes(b"train", "little")


def mix64(x):
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        x = x ^ (x >> np.uint64(31))
    return x


def _mix64_int(x: int) -> int:
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def stream_seed(seed: int, stream: int) -> int:
    """Derive an independent 64-bit key for a named stream; the dither stream is ``seed`` itself."""
    if stream == STREAM_DITHER:
        return seed & MASK64
    return _mix64_int((seed & MASK64) ^ _mix64_int(stream))


def dither(seed: int, t, i) -> np.ndarray:
    """Uniform values in ``[-1/2, 1/2)`` keyed by ``(seed, t, i)``; ``t`` and ``i`` broadcast."""
    t = np.asarray(t, dtype=np.uint64)
    i = np.asarray(i, dtype=np.uint64)
    h = np.uint64(seed & MASK64)
    h = mix64(h ^ mix64(t))
    h = mix64(h ^ mix64(i))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53 - 0.5


def dither_field(seed: int, t: int, n: int, offset: int = 0) -> np.ndarray:
    """Dithers for coordinates ``offset .. offset+n-1`` at step ``t``."""
    return dither(seed, t, np.arange(offset, offset + n, dtype=np.uint64))


def shared_normal(seed: int, n: int, t: int = 0) -> np.ndarray:
    """Standard normal draws shared by encoder and decoder (Box-Muller, cosine branch).

    Coordinate ``i`` uses the two dithers at indices ``2i`` and ``2i+1`` of the
    ``zT`` stream.
    """
    key = stream_seed(seed, STREAM_ZT)
    idx = np.arange(2 * n, dtype=np.uint64)
    u = dither(key, t, idx)
    u1 = 0.5 - u[0::2]  # (0, 1]
    u2 = u[1::2] + 0.5  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def uq_quantize(mu_q, delta, u):
    """Lattice index ``round_half_even(mu_q / delta + u)`` as int64."""
    mu_q = np.asarray(mu_q, dtype=np.float64)
    if not np.all(np.isfinite(mu_q)):
        raise FloatingPointError("non-finite value passed to uq_quantize")
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("quantization width must be positive")
    # np.rint rounds half to even
    return np.rint(mu_q / delta + u).astype(np.int64)


def uq_reconstruct(k, delta, u):
    return np.asarray(delta, dtype=np.float64) * (np.asarray(k, dtype=np.float64) - u)
