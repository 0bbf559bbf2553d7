"""Uniform-noise forward process, logistic-uniform reverse densities and the NELBO.

All rates are in bits.  Data tensors are ``(batch, data_dim)`` on the categorical
grid from :mod:`uqdm.data`; schedule coefficients are float64 and the denoiser
may run in lower precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import uq
from .data import grid_index, grid_values
from .denoiser import Denoiser
from .schedule import DEFAULT_GAMMA_MAX, DEFAULT_GAMMA_MIN, ScheduleParams

LN2 = math.log(2.0)
LOGISTIC_SCALE = math.sqrt(3.0) / math.pi  # logistic scale per unit standard deviation
LOG2_DENSITY_FLOOR = -64.0
VARIANCE_LOGIT_CLAMP = 8.0
SCALE_FLOOR = 1e-12
MIN_ALPHA = 1e-12


@dataclass
class Trajectory:
    """Latents ``z[t]`` for ``t = 0..T`` and the dithers ``u[t]`` (``u[0]`` unused)."""

    z: list
    dithers: list


@dataclass
class ReverseDensity:
    mean: torch.Tensor
    scale: torch.Tensor
    delta: torch.Tensor
    x_hat: torch.Tensor
    mu_q: torch.Tensor | None = None


@dataclass
class NelboReport:
    """Per-example rates in bits; ``l_steps[:, t-1]`` is the cost of sending ``z_{t-1}``."""

    l_T: torch.Tensor
    l_steps: torch.Tensor
    l_recon: torch.Tensor
    num_dims: int
    total_bpd: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.total_bpd = (self.l_T + self.l_steps.sum(-1) + self.l_recon) / self.num_dims

    def total_bits(self) -> torch.Tensor:
        return self.l_T + self.l_steps.sum(-1) + self.l_recon


def _log_sigmoid(x):
    return torch.nn.functional.logsigmoid(x)


def log_cell_mass(z, mean, scale, delta, density: str = "logistic"):
    """Natural log of ``G(z + delta/2) - G(z - delta/2)`` for the CDF ``G`` of ``g``.

    Equals ``log(delta * f(z))`` where ``f`` is ``g`` convolved with the width-``delta``
    uniform.
    """
    if density == "logistic":
        a = (z + 0.5 * delta - mean) / scale
        # sigmoid(a) - sigmoid(b) = sigmoid(a) sigmoid(-b) (1 - exp(b - a))
        return _log_sigmoid(a) + _log_sigmoid(delta / scale - a) + torch.log(-torch.expm1(-delta / scale))
    if density == "gaussian":
        a = (z + 0.5 * delta - mean) / scale
        b = (z - 0.5 * delta - mean) / scale
        # evaluate on the side where both CDF values are small
        flip = (a + b) > 0
        hi = torch.where(flip, -b, a)
        lo = torch.where(flip, -a, b)
        lhi = torch.special.log_ndtr(hi)
        llo = torch.special.log_ndtr(lo)
        return lhi + torch.log(-torch.expm1(llo - lhi))
    raise ValueError(f"unknown density {density!r}")


def log2_density_f(z, mean, scale, delta, density: str = "logistic", floor: float = LOG2_DENSITY_FLOOR):
    """``log2 f(z)`` of the reverse coding density, clamped below at ``floor``."""
    z, mean, scale, delta = (torch.as_tensor(v, dtype=torch.float64) for v in (z, mean, scale, delta))
    val = (log_cell_mass(z, mean, scale, delta, density) - torch.log(delta)) / LN2
    return torch.clamp(val, min=floor)


class UQDM(nn.Module):
    """Schedule plus denoiser; everything needed to price and code one data batch."""

    def __init__(
        self,
        data_dim: int,
        T: int = 5,
        variance: str = "learned",
        density: str = "logistic",
        levels: int = 256,
        gamma_min: float = DEFAULT_GAMMA_MIN,
        gamma_max: float = DEFAULT_GAMMA_MAX,
        learn_schedule: bool = True,
        hidden: int = 512,
        depth: int = 2,
        fourier_bands=(7, 8),
        time_dim: int = 64,
    ):
        super().__init__()
        if variance not in ("learned", "fixed"):
            raise ValueError(f"variance must be 'learned' or 'fixed', got {variance!r}")
        self.config = dict(
            data_dim=int(data_dim), T=int(T), variance=variance, density=density,
            levels=int(levels), gamma_min=float(gamma_min), gamma_max=float(gamma_max),
            learn_schedule=bool(learn_schedule), hidden=int(hidden), depth=int(depth),
            fourier_bands=[int(k) for k in fourier_bands], time_dim=int(time_dim),
        )
        self.data_dim = int(data_dim)
        self.T = int(T)
        self.variance = variance
        self.density = density
        self.levels = int(levels)
        self.schedule = ScheduleParams(T, gamma_min, gamma_max, learnable=learn_schedule)
        self.denoiser = Denoiser(
            data_dim, hidden=hidden, depth=depth, fourier_bands=fourier_bands,
            time_dim=time_dim, learned_variance=(variance == "learned"),
        )

    @property
    def net_dtype(self) -> torch.dtype:
        return self.denoiser.head.weight.dtype

    def coefficients(self) -> dict[str, torch.Tensor]:
        return self.schedule.coefficients()

    # -- denoiser -----------------------------------------------------------

    def predict(self, z, t, coeffs=None):
        """Denoised estimate and variance scaling at step(s) ``t``.

        ``t`` is an int or a per-row integer tensor.  Returns ``(x_hat, s)`` with
        ``s`` None in fixed-variance mode.
        """
        coeffs = self.coefficients() if coeffs is None else coeffs
        z = torch.as_tensor(z, dtype=torch.float64)
        t_idx = torch.as_tensor(t, dtype=torch.long)
        if t_idx.ndim == 0:
            t_idx = t_idx.expand(z.shape[0])
        if torch.any(t_idx < 0) or torch.any(t_idx > self.T):
            raise ValueError(f"step index out of range [0, {self.T}]")
        alpha = coeffs["alpha"][t_idx][:, None]
        sigma = coeffs["sigma"][t_idx][:, None]
        if torch.any(alpha < MIN_ALPHA):
            raise FloatingPointError("alpha_t too small for the x-parameterization")
        eps, raw = self.denoiser(z.to(self.net_dtype), coeffs["gamma"][t_idx])
        eps = eps.to(torch.float64)
        if not torch.all(torch.isfinite(eps)):
            raise FloatingPointError(f"non-finite denoiser output at step(s) {sorted(set(t_idx.tolist()))}")
        x_hat = (z - sigma * eps) / alpha
        s = None
        if raw is not None:
            raw = raw.to(torch.float64)
            if not torch.all(torch.isfinite(raw)):
                raise FloatingPointError("non-finite variance output")
            s = torch.exp(torch.clamp(raw, -VARIANCE_LOGIT_CLAMP, VARIANCE_LOGIT_CLAMP))
        return x_hat, s

    def reverse_density(self, z_t, t, target_x=None, coeffs=None) -> ReverseDensity:
        """Parameters of ``p(z_{t-1} | z_t)``; ``target_x`` adds the encoder-side ``mu_q``."""
        coeffs = self.coefficients() if coeffs is None else coeffs
        z_t = torch.as_tensor(z_t, dtype=torch.float64)
        t_idx = torch.as_tensor(t, dtype=torch.long)
        if t_idx.ndim == 0:
            t_idx = t_idx.expand(z_t.shape[0])
        if torch.any(t_idx < 1):
            raise ValueError("reverse density needs t >= 1")
        x_hat, s = self.predict(z_t, t_idx, coeffs)
        b = coeffs["b"][t_idx][:, None]
        c = coeffs["c"][t_idx][:, None]
        delta = coeffs["delta"][t_idx][:, None]
        var = coeffs["sigma_q2"][t_idx][:, None].expand_as(z_t)
        if s is not None:
            var = var * s
        std = torch.sqrt(var)
        scale = std * LOGISTIC_SCALE if self.density == "logistic" else std
        scale = torch.clamp(scale, min=SCALE_FLOOR)
        mean = b * z_t + c * x_hat
        mu_q = None
        if target_x is not None:
            mu_q = b * z_t + c * torch.as_tensor(target_x, dtype=torch.float64)
        return ReverseDensity(mean, scale, delta.expand_as(z_t), x_hat, mu_q)

    # -- forward process ----------------------------------------------------

    def sample_forward(self, x, seed: int, coeffs=None) -> Trajectory:
        """Full trajectory; a pure function of ``(x, seed)`` and the schedule."""
        coeffs = self.coefficients() if coeffs is None else coeffs
        x = torch.as_tensor(x, dtype=torch.float64)
        n = x.numel()
        eps = torch.from_numpy(uq.shared_normal(seed, n)).reshape(x.shape)
        z = [None] * (self.T + 1)
        dithers = [None] * (self.T + 1)
        z[self.T] = coeffs["alpha"][self.T] * x + coeffs["sigma"][self.T] * eps
        for t in range(self.T, 0, -1):
            u = torch.from_numpy(uq.dither_field(seed, t, n)).reshape(x.shape)
            dithers[t] = u
            z[t - 1] = coeffs["b"][t] * z[t] + coeffs["c"][t] * x + coeffs["delta"][t] * u
        return Trajectory(z, dithers)

    # -- rates --------------------------------------------------------------

    def prior_kl_bits(self, x, coeffs=None):
        """``KL(q(z_T|x) || N(0, I))`` per example."""
        coeffs = self.coefficients() if coeffs is None else coeffs
        x = torch.as_tensor(x, dtype=torch.float64)
        a2 = coeffs["alpha"][self.T] ** 2
        s2 = coeffs["sigma2"][self.T]
        kl = 0.5 * (a2 * x**2 + s2 - 1.0 - torch.log(s2))
        return kl.sum(-1) / LN2

    def recon_log_probs(self, z0, coeffs=None):
        """Natural-log categorical ``log p(v_j | z_0)`` with shape ``(..., V)``."""
        coeffs = self.coefficients() if coeffs is None else coeffs
        z0 = torch.as_tensor(z0, dtype=torch.float64)
        v = torch.from_numpy(grid_values(self.levels))
        alpha0 = coeffs["alpha"][0]
        sigma2_0 = coeffs["sigma2"][0]
        # -(z0 - alpha0 v)^2 / (2 sigma2_0) without the z0^2 term, which cancels
        slope = alpha0 / sigma2_0 * v
        logits = z0[..., None] * slope - 0.5 * alpha0 * slope * v
        return torch.log_softmax(logits, dim=-1)

    def recon_loglik(self, x, z0, coeffs=None):
        """``-log2 p(x | z_0)`` per example (summed over the last axis)."""
        idx = torch.from_numpy(grid_index(np.asarray(torch.as_tensor(x).detach()), self.levels))
        logp = self.recon_log_probs(z0, coeffs)
        picked = torch.gather(logp, -1, idx[..., None])[..., 0]
        return -picked.sum(-1) / LN2

    def step_rates(self, traj: Trajectory, x, coeffs, mode: str = "mc", n_quad: int = 8):
        """``L_{t-1}`` per example for ``t = 1..T``, shape ``(batch, T)``."""
        x = torch.as_tensor(x, dtype=torch.float64)
        B = x.shape[0]
        T = self.T
        z_in = torch.cat([traj.z[t] for t in range(1, T + 1)], dim=0)
        t_idx = torch.arange(1, T + 1).repeat_interleave(B)
        dens = self.reverse_density(z_in, t_idx, target_x=x.repeat(T, 1), coeffs=coeffs)
        if mode == "mc":
            target = torch.cat([traj.z[t - 1] for t in range(1, T + 1)], dim=0)
            log2f = self._log2f(target, dens)
            rate = -torch.log2(dens.delta) - log2f
        elif mode == "quadrature":
            nodes, weights = np.polynomial.legendre.leggauss(n_quad)
            rate = 0.0
            for node, w in zip(nodes, weights):
                target = dens.mu_q + 0.5 * node * dens.delta
                rate = rate + 0.5 * w * (-torch.log2(dens.delta) - self._log2f(target, dens))
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return rate.sum(-1).reshape(T, B).T

    def _log2f(self, target, dens: ReverseDensity):
        val = (log_cell_mass(target, dens.mean, dens.scale, dens.delta, self.density)
               - torch.log(dens.delta)) / LN2
        return torch.clamp(val, min=LOG2_DENSITY_FLOOR)

    def nelbo(self, x, seed: int, mode: str = "mc") -> NelboReport:
        coeffs = self.coefficients()
        x = torch.as_tensor(x, dtype=torch.float64)
        traj = self.sample_forward(x, seed, coeffs)
        return NelboReport(
            l_T=self.prior_kl_bits(x, coeffs),
            l_steps=self.step_rates(traj, x, coeffs, mode=mode),
            l_recon=self.recon_loglik(x, traj.z[0], coeffs),
            num_dims=x.shape[-1],
        )


def rate_diagnostic(mean_hat, mean_q, scale, delta, density: str = "logistic", n_quad: int = 64):
    """Quadratic estimate vs quadrature of ``L_{t-1}`` for one coordinate, in bits.

    ``h(z) = log2(G(z + mu + delta/2) - G(z + mu - delta/2))`` with ``G`` centred at
    ``mean_hat``; the quadratic estimate is ``-(4 h(0) + h(-delta/2) + h(delta/2)) / 6``.
    """
    mean_hat, mean_q, scale, delta = (
        torch.as_tensor(v, dtype=torch.float64) for v in (mean_hat, mean_q, scale, delta)
    )

    def h(z):
        return log_cell_mass(z + mean_q, mean_hat, scale, delta, density) / LN2

    quadratic = -(4.0 * h(0.0) + h(-0.5 * delta) + h(0.5 * delta)) / 6.0
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    quad = sum(-0.5 * w * h(0.5 * node * delta) for node, w in zip(nodes, weights))
    return float(quadratic), float(quad)
