"""rANS entropy coding of integer lattice indices under discretized logistic densities.

Coder layout (normative, see FORMAT.md): 32-bit state ``x`` kept in
``[2**23, 2**31)``, byte-wise renormalization, 16-bit frequency precision.  The
buffer is the final encoder state (4 bytes, little-endian) followed by the
renormalization bytes in the order the decoder consumes them.  The decoder must
end in the initial state, which doubles as a corruption sentinel.

Every table reserves one escape slot.  A symbol outside ``[k_min, k_max]`` is
coded as the escape symbol followed by an Elias-gamma code (one equiprobable
binary decision per bit) of the zig-zagged offset beyond the nearer bound.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
RANS_L = 1 << 23
_MASK = TOTAL - 1
_HALF = TOTAL >> 1

TAIL_MASS = 2.0**-20
# sigmoid(-TAIL_LOGIT) < 2**-20
TAIL_LOGIT = 20.0 * math.log(2.0)
MAX_SUPPORT = 1 << 20
MAX_TABLE = 4095  # in-range symbols per table; wider supports are clipped around the mode
PARAM_GRID = 2.0**-16


class CodingRangeError(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizedCdf:
    """Cumulative frequencies for symbols ``k_min..k_max`` plus a trailing escape slot."""

    k_min: int
    k_max: int
    cdf: np.ndarray  # length n + 2, cdf[0] = 0, cdf[-1] = TOTAL

    @property
    def n_symbols(self) -> int:
        return self.k_max - self.k_min + 1

    @property
    def freqs(self) -> np.ndarray:
        return np.diff(self.cdf)

    def prob(self, k: int) -> float:
        """Model probability of lattice index ``k``, including escape-code bits."""
        f = self.freqs
        if self.k_min <= k <= self.k_max:
            return f[k - self.k_min] / TOTAL
        z = _zigzag_offset(k, self.k_min, self.k_max)
        return f[-1] / TOTAL * 2.0 ** -(2 * z.bit_length() - 1)


class CdfBatch:
    """Row-per-coordinate tables sharing one padded array; rows index like a sequence."""

    def __init__(self, k_min: np.ndarray, n_symbols: np.ndarray, cdf: np.ndarray):
        self.k_min = np.asarray(k_min, dtype=np.int64)
        self.n_symbols = np.asarray(n_symbols, dtype=np.int64)
        self.cdf = np.asarray(cdf, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.k_min)

    def __getitem__(self, i: int) -> QuantizedCdf:
        n = int(self.n_symbols[i])
        k0 = int(self.k_min[i])
        return QuantizedCdf(k0, k0 + n - 1, self.cdf[i, : n + 2].copy())

    @classmethod
    def from_tables(cls, tables: Sequence[QuantizedCdf]) -> "CdfBatch":
        width = max(t.n_symbols for t in tables) + 2
        cdf = np.full((len(tables), width), TOTAL, dtype=np.int64)
        for row, t in enumerate(tables):
            cdf[row, : t.n_symbols + 2] = t.cdf
        return cls([t.k_min for t in tables], [t.n_symbols for t in tables], cdf)

    def lookup(self, symbols: np.ndarray):
        """Vectorized ``(start, freq, in_range)`` for each row's symbol."""
        symbols = np.asarray(symbols, dtype=np.int64)
        idx = symbols - self.k_min
        in_range = (idx >= 0) & (idx < self.n_symbols)
        idx = np.where(in_range, idx, self.n_symbols)
        rows = np.arange(len(self))
        start = self.cdf[rows, idx]
        freq = self.cdf[rows, idx + 1] - start
        return start, freq, in_range


def quantize_probabilities(probs: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Integer frequencies summing to ``TOTAL`` per row, each valid entry at least 1.

    Largest-remainder rule on ``probs * (TOTAL - n_valid)`` over the floor of one;
    ties go to the lower column index.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if valid is None:
        valid = np.ones(probs.shape, dtype=bool)
    probs = np.where(valid, np.maximum(probs, 0.0), 0.0)
    n_valid = valid.sum(axis=1)
    if np.any(n_valid > TOTAL):
        raise CodingRangeError("more symbols than the frequency precision allows")
    budget = (TOTAL - n_valid).astype(np.float64)
    mass = probs.sum(axis=1)
    scaled = probs * (budget / mass)[:, None]
    base = np.floor(scaled)
    rem = np.where(valid, scaled - base, -1.0)
    leftover = (budget - base.sum(axis=1)).astype(np.int64)
    order = np.argsort(-rem, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(probs.shape[1])[None, :].repeat(len(probs), 0), axis=1)
    extra = rank < leftover[:, None]
    freq = np.where(valid, base.astype(np.int64) + 1 + extra, 0)
    return freq


def quantize_pmf(pmf: Sequence[float], k_min: int = 0, escape_mass: float | None = None) -> QuantizedCdf:
    """Table for an explicit pmf over ``k_min .. k_min + len(pmf) - 1``."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if escape_mass is None:
        escape_mass = max(0.0, 1.0 - float(pmf.sum()))
    freq = quantize_probabilities(np.append(pmf, escape_mass))[0]
    return QuantizedCdf(k_min, k_min + len(pmf) - 1, np.concatenate([[0], np.cumsum(freq)]))


def round_params(mean_over_delta, log2_scale_over_delta):
    """Snap density parameters to the normative 2**-16 grid."""
    m = np.round(np.asarray(mean_over_delta, dtype=np.float64) / PARAM_GRID) * PARAM_GRID
    ls = np.round(np.asarray(log2_scale_over_delta, dtype=np.float64) / PARAM_GRID) * PARAM_GRID
    return m, ls


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def build_cdf_batch(mean, scale, delta, u) -> CdfBatch:
    """Tables for ``K = round(mu / delta + u)`` when ``mu ~ Logistic(mean, scale)``.

    Symbol ``k`` gets the logistic mass of the cell ``delta*(k - u) +- delta/2``,
    i.e. ``delta * f(delta*(k - u))`` with ``f`` the logistic density convolved
    with ``U(-delta/2, delta/2)``.  Parameters are rounded to the normative grid
    first so encoder and decoder derive identical tables.
    """
    mean, scale, delta, u = (a.ravel() for a in np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (mean, scale, delta, u))))
    if np.any(~(delta > 0)) or np.any(~np.isfinite(delta)):
        raise CodingRangeError("quantization width must be positive and finite")
    if np.any(~(scale > 0)) or not np.all(np.isfinite(mean)) or not np.all(np.isfinite(scale)):
        raise CodingRangeError("density parameters must be finite with positive scale")
    m, ls = round_params(mean / delta, np.log2(scale / delta))
    sc = np.exp2(ls)
    centre = m + u
    lo = np.floor(centre + 0.5 - sc * TAIL_LOGIT)
    hi = np.ceil(centre - 0.5 + sc * TAIL_LOGIT)
    n = hi - lo + 1
    if np.any(n > MAX_SUPPORT):
        raise CodingRangeError(
            f"coding support of {int(n.max())} symbols exceeds {MAX_SUPPORT}; delta too small"
        )
    wide = n > MAX_TABLE
    if np.any(wide):
        mode = np.rint(centre)
        lo = np.where(wide, mode - MAX_TABLE // 2, lo)
        n = np.where(wide, MAX_TABLE, n)
    lo = lo.astype(np.int64)
    n = n.astype(np.int64)

    rows = len(mean)
    out_w = int(n.max()) + 2 if rows else 2
    cdf = np.full((rows, out_w), TOTAL, dtype=np.int64)
    # bound the padded working set
    block = max(1, (1 << 22) // out_w)
    for r0 in range(0, rows, block):
        sl = slice(r0, r0 + block)
        nb = n[sl]
        width = int(nb.max())
        j = np.arange(width)[None, :]
        valid = j < nb[:, None]
        # cell [k - u - 1/2, k - u + 1/2] in units of delta, relative to the mean
        k = lo[sl, None] + j
        a = (k - centre[sl, None] + 0.5) / sc[sl, None]
        b = a - 1.0 / sc[sl, None]
        logmass = _log_sigmoid(a) + _log_sigmoid(-b) + np.log(-np.expm1(-1.0 / sc[sl, None]))
        mass = np.where(valid, np.exp(logmass), 0.0)
        a_hi = (lo[sl] + nb - 1 - centre[sl] + 0.5) / sc[sl]
        b_lo = (lo[sl] - centre[sl] - 0.5) / sc[sl]
        escape = np.exp(_log_sigmoid(b_lo)) + np.exp(_log_sigmoid(-a_hi))
        probs = np.concatenate([mass, np.zeros((len(nb), 1))], axis=1)
        probs[np.arange(len(nb)), nb] = escape
        valid_e = np.concatenate([valid, np.zeros((len(nb), 1), dtype=bool)], axis=1)
        valid_e[np.arange(len(nb)), nb] = True
        freq = quantize_probabilities(probs, valid_e)
        cum = np.concatenate([np.zeros((len(nb), 1), dtype=np.int64), np.cumsum(freq, axis=1)], axis=1)
        cdf[sl, : width + 2] = cum
    return CdfBatch(lo, n, cdf)


def build_cdf(mean: float, scale: float, delta: float, u: float) -> QuantizedCdf:
    """Single-coordinate form of :func:`build_cdf_batch`."""
    return build_cdf_batch([mean], [scale], [delta], [u])[0]


def categorical_cdf_batch(log_probs: np.ndarray) -> CdfBatch:
    """Tables over symbols ``0..V-1`` from row-wise log-probabilities (escape slot kept)."""
    log_probs = np.atleast_2d(np.asarray(log_probs, dtype=np.float64))
    rows, V = log_probs.shape
    probs = np.exp(log_probs - log_probs.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    probs = np.concatenate([probs, np.zeros((rows, 1))], axis=1)
    freq = quantize_probabilities(probs)
    cum = np.concatenate([np.zeros((rows, 1), dtype=np.int64), np.cumsum(freq, axis=1)], axis=1)
    return CdfBatch(np.zeros(rows, dtype=np.int64), np.full(rows, V), cum)


# -- coder -------------------------------------------------------------------


def _zigzag_offset(k: int, k_min: int, k_max: int) -> int:
    if k > k_max:
        return 2 * (k - k_max)
    return 2 * (k_min - k) - 1


def _elias_gamma_bits(n: int) -> list[int]:
    nbits = n.bit_length()
    return [0] * (nbits - 1) + [(n >> s) & 1 for s in range(nbits - 1, -1, -1)]


def _as_batch(cdfs) -> CdfBatch:
    if isinstance(cdfs, CdfBatch):
        return cdfs
    return CdfBatch.from_tables(list(cdfs))


def encode(symbols, cdfs) -> bytes:
    """rANS-encode ``symbols[i]`` under ``cdfs[i]``; total for any integers via escapes."""
    batch = _as_batch(cdfs)
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    if len(symbols) != len(batch):
        raise ValueError(f"{len(symbols)} symbols but {len(batch)} tables")
    start, freq, in_range = batch.lookup(symbols) if len(batch) else ([], [], [])

    # forward-order list of (start, freq) decisions; pushed in reverse below
    ops_start: list[int] = []
    ops_freq: list[int] = []
    if len(batch) and np.all(in_range):
        ops_start = start.tolist()
        ops_freq = freq.tolist()
    else:
        for i in range(len(symbols)):
            ops_start.append(int(start[i]))
            ops_freq.append(int(freq[i]))
            if not in_range[i]:
                k_min = int(batch.k_min[i])
                k_max = k_min + int(batch.n_symbols[i]) - 1
                for bit in _elias_gamma_bits(_zigzag_offset(int(symbols[i]), k_min, k_max)):
                    ops_start.append(bit * _HALF)
                    ops_freq.append(_HALF)

    x = RANS_L
    out = bytearray()
    x_max_unit = (RANS_L >> PRECISION) << 8
    for s, f in zip(reversed(ops_start), reversed(ops_freq)):
        x_max = x_max_unit * f
        while x >= x_max:
            out.append(x & 0xFF)
            x >>= 8
        x = ((x // f) << PRECISION) + (x % f) + s
    out.reverse()
    return x.to_bytes(4, "little") + bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        if len(buf) < 4:
            raise DecodeError("coder buffer shorter than its 4-byte state")
        self.buf = buf
        self.pos = 4
        self.x = int.from_bytes(buf[:4], "little")
        if not RANS_L <= self.x < (RANS_L << 8):
            raise DecodeError("coder state out of range")

    def pop(self, cum: Sequence[int]) -> int:
        x = self.x
        slot = x & _MASK
        j = bisect_right(cum, slot) - 1
        s = cum[j]
        f = cum[j + 1] - s
        x = f * (x >> PRECISION) + slot - s
        buf = self.buf
        while x < RANS_L:
            if self.pos >= len(buf):
                raise DecodeError("coder buffer exhausted")
            x = (x << 8) | buf[self.pos]
            self.pos += 1
        self.x = x
        return j

    def pop_bit(self) -> int:
        return self.pop((0, _HALF, TOTAL))

    def finish(self):
        if self.x != RANS_L or self.pos != len(self.buf):
            raise DecodeError("coder sentinel mismatch: buffer corrupted or tables differ")


def decode(buf: bytes, cdfs) -> np.ndarray:
    """Inverse of :func:`encode` under byte-identical tables."""
    batch = _as_batch(cdfs)
    reader = _Reader(bytes(buf))
    rows = batch.cdf.tolist()
    k_mins = batch.k_min.tolist()
    ns = batch.n_symbols.tolist()
    out = np.empty(len(batch), dtype=np.int64)
    for i in range(len(batch)):
        n = ns[i]
        j = reader.pop(rows[i][: n + 2])
        if j < n:
            out[i] = k_mins[i] + j
            continue
        zeros = 0
        while reader.pop_bit() == 0:
            zeros += 1
            if zeros > 64:
                raise DecodeError("malformed escape code")
        z = 1
        for _ in range(zeros):
            z = (z << 1) | reader.pop_bit()
        if z % 2 == 0:
            out[i] = k_mins[i] + n - 1 + z // 2
        else:
            out[i] = k_mins[i] - (z + 1) // 2
    reader.finish()
    return out


def cross_entropy_bits(symbols, cdfs) -> float:
    """``-sum log2 p_quantized(k_i)`` including escape-code bits."""
    batch = _as_batch(cdfs)
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    start, freq, in_range = batch.lookup(symbols)
    bits = float(np.sum(PRECISION - np.log2(freq)))
    for i in np.flatnonzero(~in_range):
        k_min = int(batch.k_min[i])
        z = _zigzag_offset(int(symbols[i]), k_min, k_min + int(batch.n_symbols[i]) - 1)
        bits += 2 * z.bit_length() - 1
    return bits
