"""Noise-prediction MLP with Fourier features and an optional variance head."""

from __future__ import annotations

import math

import torch
from torch import nn


class Denoiser(nn.Module):
    """Maps ``(z_t, gamma_t)`` to a noise estimate and raw log-variance scaling logits.

    Input layout per row: ``z``, then ``sin(2^k pi z)`` and ``cos(2^k pi z)`` for every
    configured band ``k``, then a sinusoidal embedding of ``gamma_t``.  The output
    layer is zero-initialized, so a fresh network predicts ``eps = 0`` and unit
    variance scaling.
    """

    def __init__(
        self,
        data_dim: int,
        hidden: int = 512,
        depth: int = 2,
        fourier_bands=(7, 8),
        time_dim: int = 64,
        learned_variance: bool = True,
    ):
        super().__init__()
        if time_dim % 2:
            raise ValueError("time_dim must be even")
        self.data_dim = int(data_dim)
        self.fourier_bands = tuple(int(k) for k in fourier_bands)
        self.time_dim = int(time_dim)
        self.learned_variance = bool(learned_variance)
        self.in_dim = self.data_dim * (1 + 2 * len(self.fourier_bands)) + self.time_dim
        self.out_dim = self.data_dim * (2 if learned_variance else 1)

        freqs = torch.exp(torch.linspace(math.log(0.01), math.log(10.0), self.time_dim // 2))
        self.register_buffer("time_freqs", freqs)
        bands = torch.tensor([2.0**k * math.pi for k in self.fourier_bands])
        self.register_buffer("band_freqs", bands)

        layers = []
        width = self.in_dim
        for _ in range(depth):
            layers += [nn.Linear(width, hidden), nn.SiLU()]
            width = hidden
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(width, self.out_dim)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def features(self, z: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
        parts = [z]
        if self.fourier_bands:
            arg = z[..., None] * self.band_freqs.to(z.dtype)
            parts += [torch.sin(arg).flatten(-2), torch.cos(arg).flatten(-2)]
        g = gamma.to(z.dtype).reshape(-1, 1).expand(z.shape[0], 1)
        targ = g * self.time_freqs.to(z.dtype)
        parts += [torch.sin(targ), torch.cos(targ)]
        return torch.cat(parts, dim=-1)

    def forward(self, z: torch.Tensor, gamma: torch.Tensor):
        """Return ``(eps_hat, raw)``; ``raw`` is ``None`` without the variance head."""
        out = self.head(self.body(self.features(z, gamma)))
        if self.learned_variance:
            return out[..., : self.data_dim], out[..., self.data_dim :]
        return out, None
