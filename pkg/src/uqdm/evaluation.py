"""Fidelity and realism metrics, and the bpd-vs-T / rate-distortion sweep."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, codec
from .data import grid_values, pixels_to_data, swirl, synthetic_images
from .diffusion import UQDM
from .reconstruct import denoise
from .training import TrainConfig, evaluate_bpd, train

log = logging.getLogger(__name__)

CSV_COLUMNS = ("dataset", "T", "variance_mode", "step", "bits_cum", "psnr", "sw", "bpd_total")
SW_PROJECTIONS = 512
SW_SAMPLES = 2048


def psnr(x, x_hat, peak: float = 2.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)


def sliced_wasserstein(a, b, n_projections: int = SW_PROJECTIONS, seed: int = 0) -> float:
    """Mean 1-D 2-Wasserstein distance over random unit directions.

    Rows are samples (flattened beyond the first axis).  Unequal sample counts
    are compared through matching quantiles of the smaller set size.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sliced Wasserstein needs non-empty sample sets")
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets have different dimensionality")
    dirs = np.random.default_rng(seed).normal(size=(a.shape[1], n_projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(a @ dirs, axis=0)
    pb = np.sort(b @ dirs, axis=0)
    if len(pa) != len(pb):
        q = (np.arange(min(len(pa), len(pb))) + 0.5) / min(len(pa), len(pb))
        pa = np.quantile(pa, q, axis=0, method="inverted_cdf")
        pb = np.quantile(pb, q, axis=0, method="inverted_cdf")
    return float(np.mean(np.sqrt(np.mean((pa - pb) ** 2, axis=0))))


# -- trained swirl models ----------------------------------------------------

SWIRL_TRAIN = (200_000, 0)  # (count, seed)
SWIRL_VAL = (4096, 1)


def swirl_splits():
    return swirl(*SWIRL_TRAIN), swirl(*SWIRL_VAL)


def train_swirl(T: int, variance: str, steps: int, seed: int = 0, cache_dir=None, **model_kw) -> UQDM:
    """Train (or load from ``cache_dir``) a swirl model; checkpoints are float64 and deterministic."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"swirl_T{T}_{variance}_{steps}_s{seed}.ckpt"
        if path.exists():
            return checkpoint.load(path)
    tr, va = swirl_splits()
    torch.manual_seed(seed)
    model = UQDM(2, T=T, variance=variance, **model_kw)
    model, tlog = train(model, tr, TrainConfig(steps=steps, seed=seed, eval_every=max(steps // 10, 1)), va)
    log.info("trained T=%d %s in %.0fs", T, variance, tlog.seconds)
    return _cache(model, tlog, path)


def _cache(model: UQDM, tlog, path) -> UQDM:
    """Write the checkpoint plus a JSON training log next to it; reload so callers see float64 weights."""
    if path is None:
        return model
    path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(model, path)
    path.with_suffix(".json").write_text(json.dumps(
        {"seconds": tlog.seconds, "steps": tlog.steps, "train_bpd": tlog.train_bpd, "val_bpd": tlog.val_bpd}))
    return checkpoint.load(path)


def training_log(path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())


IMAGE_TRAIN = (4096, 0)
IMAGE_VAL = (32, 1)


def image_rows(n: int, seed: int, size: int = 16) -> np.ndarray:
    """Synthetic grayscale images as flattened data rows."""
    return pixels_to_data(synthetic_images(n, seed, size)).reshape(n, size * size)


def train_images(T: int, steps: int, seed: int = 0, cache_dir=None, size: int = 16,
                 batch_size: int = 64, **model_kw) -> UQDM:
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"images{size}_T{T}_{steps}_s{seed}_h{model_kw.get('hidden', 512)}.ckpt"
        if path.exists():
            return checkpoint.load(path)
    tr = image_rows(*IMAGE_TRAIN, size=size)
    torch.manual_seed(seed)
    model = UQDM(size * size, T=T, **model_kw)
    cfg = TrainConfig(steps=steps, seed=seed, batch_size=batch_size, eval_every=max(steps // 10, 1))
    model, tlog = train(model, tr, cfg)
    return _cache(model, tlog, path)


def validation_bpd(model: UQDM, data=None, mode: str = "quadrature") -> float:
    data = swirl(*SWIRL_VAL) if data is None else data
    return evaluate_bpd(model, data, mode=mode)


# -- rate / distortion / realism along the stream ------------------------------

def progressive_curve(model: UQDM, x: np.ndarray, seed: int = 0, reference=None, sw_seed: int = 0):
    """Per received-chunk count ``j = 0..T``: cumulative bits/dim, denoise PSNR and SW.

    ``reference`` (default: ``x``) is the sample set the realism metric compares against.
    """
    x = np.asarray(x, dtype=np.float64)
    stream = codec.compress(x, model, seed)
    prof = codec.rate_profile(stream)
    latents = codec.decode_latents(stream, model)
    dims = x.size
    ref = x if reference is None else reference
    rows = []
    cum = 0
    for j, z in enumerate(latents):
        t = model.T - j
        if j:
            cum += prof["step_bits"][j - 1]
        if t == 0:
            with torch.no_grad():
                xr = model.recon_log_probs(torch.from_numpy(z)).argmax(-1).numpy()
            xr = grid_values(model.levels)[xr]
        else:
            xr = denoise(model, z, t)
        xr = xr.reshape(x.shape)
        rows.append(dict(step=j, bits_cum=cum / dims, psnr=psnr(x, xr),
                         sw=sliced_wasserstein(xr.reshape(len(x), -1), ref.reshape(len(ref), -1), seed=sw_seed)))
    rows.append(dict(step=model.T + 1, bits_cum=(prof["total_bits"] - prof["header_bits"]) / dims,
                     psnr=float("inf"), sw=0.0 if reference is None else
                     sliced_wasserstein(x.reshape(len(x), -1), ref.reshape(len(ref), -1), seed=sw_seed)))
    return rows


@dataclass
class SweepConfig:
    T_values: list = field(default_factory=lambda: [3, 5, 10])
    variances: list = field(default_factory=lambda: ["fixed", "learned"])
    steps: int = 10_000
    seed: int = 0
    eval_points: int = SW_SAMPLES
    cache_dir: str | None = None


def sweep_T(dataset: str, config: SweepConfig, csv_path=None) -> list[dict]:
    """Train one model per (T, variance) and tabulate the progressive curve of each."""
    if dataset != "swirl":
        raise ValueError("sweep_T supports the swirl dataset only")
    val = swirl(*SWIRL_VAL)
    x = val[: config.eval_points]
    table = []
    for T in config.T_values:
        for variance in config.variances:
            model = train_swirl(T, variance, config.steps, config.seed, config.cache_dir)
            bpd = validation_bpd(model, val)
            for row in progressive_curve(model, x, seed=config.seed, reference=val[-config.eval_points:]):
                table.append(dict(dataset=dataset, T=T, variance_mode=variance, bpd_total=bpd, **row))
    if csv_path is not None:
        write_csv(table, csv_path)
    return table


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in CSV_COLUMNS})
