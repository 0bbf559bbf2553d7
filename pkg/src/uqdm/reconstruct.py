"""Lossy reconstructions from an intermediate latent ``z_t``."""

from __future__ import annotations

import numpy as np
import torch

from . import uq
from .data import grid_values
from .diffusion import UQDM

MODES = ("denoise", "ancestral", "flow")


def _as_tensor(z):
    return torch.as_tensor(np.asarray(z, dtype=np.float64))


@torch.no_grad()
def denoise(model: UQDM, z_t, t: int) -> np.ndarray:
    """Network prediction of ``x`` clamped to the data range."""
    x_hat, _ = model.predict(_as_tensor(z_t), t)
    return np.clip(x_hat.numpy(), -1.0, 1.0)


def flow_step(z, x_hat, alpha_prev, sigma_prev, alpha, sigma):
    """Probability-flow update, x-prediction form."""
    ratio = sigma_prev / sigma
    return ratio * z + (alpha_prev - ratio * alpha) * x_hat


def flow_step_eps(z, eps_hat, alpha_prev, sigma_prev, alpha, sigma):
    """Probability-flow update, noise-prediction form."""
    ratio = alpha_prev / alpha
    return ratio * z + (sigma_prev - ratio * sigma) * eps_hat


def _final(model: UQDM, z0, seed, sample: bool, coeffs) -> np.ndarray:
    logp = model.recon_log_probs(z0, coeffs).numpy()
    values = grid_values(model.levels)
    if not sample:
        return values[np.argmax(logp, axis=-1)]
    key = uq.stream_seed(seed, uq.STREAM_ANCESTRAL)
    u = uq.dither(key, 0, np.arange(z0.numel(), dtype=np.uint64)).reshape(z0.shape) + 0.5
    cdf = np.cumsum(np.exp(logp), axis=-1)
    idx = (cdf < u[..., None] * cdf[..., -1:]).sum(-1)
    return values[np.minimum(idx, model.levels - 1)]


@torch.no_grad()
def flow(model: UQDM, z_t, t: int) -> np.ndarray:
    coeffs = model.coefficients()
    z = _as_tensor(z_t)
    alpha, sigma = coeffs["alpha"], coeffs["sigma"]
    for s in range(t, 0, -1):
        x_hat, _ = model.predict(z, s, coeffs)
        z = flow_step(z, x_hat, alpha[s - 1], sigma[s - 1], alpha[s], sigma[s])
    return _final(model, z, 0, False, coeffs)


@torch.no_grad()
def ancestral(model: UQDM, z_t, t: int, seed: int = 0, sample_final: bool = False) -> np.ndarray:
    """Sample ``z_{s-1} ~ p(z_{s-1} | z_s)`` down to ``z_0``, then decode ``x``.

    Each step draws the logistic ``g`` and adds an independent
    ``U(-delta/2, delta/2)``, i.e. samples ``g`` convolved with the uniform.
    """
    coeffs = model.coefficients()
    z = _as_tensor(z_t)
    key = uq.stream_seed(seed, uq.STREAM_ANCESTRAL)
    idx = np.arange(z.numel(), dtype=np.uint64)
    for s in range(t, 0, -1):
        dens = model.reverse_density(z, s, coeffs=coeffs)
        p = uq.dither(key, 2 * s, idx).reshape(z.shape) + 0.5 + 2.0**-54  # (0, 1)
        noise = torch.from_numpy(np.log(p) - np.log1p(-p))
        box = torch.from_numpy(uq.dither(key, 2 * s + 1, idx).reshape(z.shape))
        z = dens.mean + dens.scale * noise + dens.delta * box
    return _final(model, z, seed, sample_final, coeffs)


def reconstruct(model: UQDM, z_t, t: int, mode: str = "denoise", seed: int = 0) -> np.ndarray:
    if mode == "denoise":
        return denoise(model, z_t, t)
    if mode == "ancestral":
        return ancestral(model, z_t, t, seed)
    if mode == "flow":
        return flow(model, z_t, t)
    raise ValueError(f"unknown reconstruction mode {mode!r}; expected one of {MODES}")
