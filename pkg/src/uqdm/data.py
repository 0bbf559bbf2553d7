"""Swirl toy data, the categorical value grid, and binary PGM/PPM files.

Data live in ``[-1, 1]``.  A grid of ``V`` levels is mid-rise: level ``j`` sits at
``-1 + (2j + 1) / V``, so 8-bit pixel value ``p`` maps to level ``p``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

DATA_RANGE = (-1.0, 1.0)
SWIRL_TURNS = 3.0 * np.pi
SWIRL_NOISE = 0.01
# fixed affine map onto [-1, 1]: max radius 1 plus a 5-sigma noise margin
SWIRL_EXTENT = 1.0 + 5 * SWIRL_NOISE


class FormatError(ValueError):
    pass


def grid_values(levels: int) -> np.ndarray:
    if levels < 2:
        raise ValueError("need at least two grid levels")
    return -1.0 + (2.0 * np.arange(levels) + 1.0) / levels


def quantize_to_grid(x, levels: int = 256) -> np.ndarray:
    """Snap values in ``[-1, 1]`` to the nearest grid level value."""
    return grid_values(levels)[_cell(x, levels)]


def _cell(x, levels):
    x = np.asarray(x, dtype=np.float64)
    if levels < 2:
        raise ValueError("need at least two grid levels")
    lo, hi = DATA_RANGE
    if np.any(~np.isfinite(x)) or np.any(x < lo) or np.any(x > hi):
        raise ValueError("input outside the data range [-1, 1]")
    return np.clip(np.floor((x - lo) / (hi - lo) * levels), 0, levels - 1).astype(np.int64)


def grid_index(x, levels: int = 256, atol: float = 1e-9) -> np.ndarray:
    """Level indices of on-grid data; raises for off-grid values."""
    idx = _cell(x, levels)
    if np.any(np.abs(grid_values(levels)[idx] - np.asarray(x)) > atol):
        raise ValueError("data is not on the declared grid")
    return idx


def swirl(n: int, seed: int, levels: int | None = 256) -> np.ndarray:
    """``n`` points of a noisy 1.5-turn spiral in ``[-1, 1]^2``; gridded unless ``levels`` is None."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, SWIRL_TURNS, n)
    r = 0.15 + 0.85 * theta / SWIRL_TURNS
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    pts = pts + rng.normal(0.0, SWIRL_NOISE, pts.shape)
    pts = np.clip(pts / SWIRL_EXTENT, -1.0, 1.0)
    return pts if levels is None else quantize_to_grid(pts, levels)


def pixels_to_data(pixels: np.ndarray) -> np.ndarray:
    return grid_values(256)[np.asarray(pixels, dtype=np.int64)]


def data_to_pixels(x: np.ndarray) -> np.ndarray:
    return _cell(np.clip(x, -1.0, 1.0), 256).astype(np.uint8)


def synthetic_images(n: int, seed: int, size: int = 16) -> np.ndarray:
    """Smooth random 8-bit grayscale images: a shaded gradient plus one soft disc."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    out = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        ang = rng.uniform(0, 2 * np.pi)
        base = rng.uniform(40, 200)
        img = base + rng.uniform(-60, 60) * (np.cos(ang) * xx + np.sin(ang) * yy - 0.5)
        cy, cx = rng.uniform(0.2, 0.8, 2)
        rad = rng.uniform(0.12, 0.35)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        img = img + rng.uniform(-80, 80) / (1.0 + np.exp((d - rad) * 30.0))
        img = img + rng.normal(0.0, 2.0, img.shape)
        out[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return out


# -- PGM / PPM ---------------------------------------------------------------

def _header_tokens(buf: bytes):
    """Return the four header tokens and the offset of the first raster byte."""
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < 4:
        if i >= n:
            raise FormatError("malformed PGM/PPM header: ends before maxval")
        ch = buf[i : i + 1]
        if ch == b"#":
            while i < n and buf[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < n and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
                j += 1
            tokens.append(buf[i:j])
            i = j
    if i >= n or not buf[i : i + 1].isspace():
        raise FormatError("malformed PGM/PPM header: no whitespace after maxval")
    return tokens, i + 1


def parse_pnm(buf: bytes) -> np.ndarray:
    """Decode binary P5 (grayscale) or P6 (RGB) with maxval 255."""
    tokens, offset = _header_tokens(buf)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(tok) for tok in tokens[1:])
    except ValueError as exc:
        raise FormatError("malformed PGM/PPM header") from exc
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    raster = buf[offset : offset + need]
    if len(raster) < need:
        raise FormatError(
            f"truncated pixel data: expected {need} bytes starting at byte offset {offset}, "
            f"input ends at byte offset {len(buf)}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).copy()
    return arr.reshape(h, w) if channels == 1 else arr.reshape(h, w, 3)


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise FormatError("only 8-bit images are supported")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    return magic + b"\n%d %d\n255\n" % (w, h) + img.tobytes()


def load_image(path) -> np.ndarray:
    return parse_pnm(Path(path).read_bytes())


def save_image(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(img))
