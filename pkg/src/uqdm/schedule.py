"""Linear log-SNR noise schedule and the closed-form coefficients derived from it.

Conventions: ``gamma(t)`` is the negated log-SNR, ``sigma_t^2 = sigmoid(gamma(t))``
and ``alpha_t^2 = 1 - sigma_t^2`` (variance preserving).  Step ``t = 0`` is the
cleanest latent, ``t = T`` the noisiest.

Everything here is float64.  The learnable endpoints used during training live in
:class:`ScheduleParams`, which evaluates the very same formulas on torch tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

DEFAULT_GAMMA_MIN = -13.3
DEFAULT_GAMMA_MAX = 5.0

SQRT12 = math.sqrt(12.0)


class ScheduleError(ValueError):
    """Raised for invalid schedules or step indices."""


@dataclass(frozen=True)
class TransitionCoefficients:
    """Forward posterior ``z_{t-1} = b z_t + c x + delta * u`` with ``u ~ U[-1/2, 1/2)``."""

    b: float
    c: float
    delta: float
    sigma_q2: float


def _sigmoid(x):
    if isinstance(x, torch.Tensor):
        return torch.sigmoid(x)
    x = np.asarray(x, dtype=np.float64)
    # two-branch form keeps full relative precision in both tails
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _transition_terms(alpha2_prev, sigma2_prev, alpha2_t, sigma2_t):
    """Return ``(b, c, delta, sigma_q2)``; works on floats, numpy arrays and tensors."""
    sigma2_cond = sigma2_t - alpha2_t / alpha2_prev * sigma2_prev
    alpha_ratio = (alpha2_t / alpha2_prev) ** 0.5
    b = alpha_ratio * sigma2_prev / sigma2_t
    c = sigma2_cond * alpha2_prev**0.5 / sigma2_t
    sigma_q2 = sigma2_cond * sigma2_prev / sigma2_t
    delta = SQRT12 * sigma_q2**0.5
    return b, c, delta, sigma_q2


def transition_from_variances(sigma2_prev: float, sigma2_t: float) -> TransitionCoefficients:
    """Single-step coefficients for a variance-preserving pair ``(sigma2_{t-1}, sigma2_t)``."""
    alpha2_prev = 1.0 - sigma2_prev
    alpha2_t = 1.0 - sigma2_t
    if not (0.0 <= sigma2_prev < 1.0 and 0.0 < sigma2_t <= 1.0):
        raise ScheduleError(f"variances out of range: {sigma2_prev}, {sigma2_t}")
    sigma2_cond = sigma2_t - alpha2_t / alpha2_prev * sigma2_prev
    if not sigma2_cond > 0.0:
        raise ScheduleError(
            "SNR must strictly decrease between consecutive steps "
            f"(sigma2_t|t-1 = {sigma2_cond!r})"
        )
    b, c, delta, sigma_q2 = _transition_terms(alpha2_prev, sigma2_prev, alpha2_t, sigma2_t)
    return TransitionCoefficients(float(b), float(c), float(delta), float(sigma_q2))


@dataclass(frozen=True)
class NoiseSchedule:
    gamma_min: float = DEFAULT_GAMMA_MIN
    gamma_max: float = DEFAULT_GAMMA_MAX
    T: int = 5
    learnable: bool = False

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ScheduleError(f"T must be a positive integer, got {self.T!r}")
        if not (math.isfinite(self.gamma_min) and math.isfinite(self.gamma_max)):
            raise ScheduleError("schedule endpoints must be finite")
        if not self.gamma_min < self.gamma_max:
            raise ScheduleError(
                f"need gamma_min < gamma_max, got {self.gamma_min} >= {self.gamma_max}"
            )

    def _check(self, t, lo=0):
        if int(t) != t or not lo <= t <= self.T:
            raise ScheduleError(f"step {t!r} outside [{lo}, {self.T}]")

    def gamma(self, t: int) -> float:
        self._check(t)
        return self.gamma_min + (t / self.T) * (self.gamma_max - self.gamma_min)

    def sigma2(self, t: int) -> float:
        return float(_sigmoid(self.gamma(t)))

    def alpha2(self, t: int) -> float:
        return float(_sigmoid(-self.gamma(t)))

    def alpha_sigma(self, t: int) -> tuple[float, float]:
        return math.sqrt(self.alpha2(t)), math.sqrt(self.sigma2(t))

    def snr(self, t: int) -> float:
        return math.exp(-self.gamma(t))

    def transition(self, t: int) -> TransitionCoefficients:
        self._check(t, lo=1)
        b, c, delta, sigma_q2 = _transition_terms(
            self.alpha2(t - 1), self.sigma2(t - 1), self.alpha2(t), self.sigma2(t)
        )
        if not sigma_q2 > 0.0:
            raise ScheduleError(f"non-positive posterior variance at step {t}")
        return TransitionCoefficients(float(b), float(c), float(delta), float(sigma_q2))

    def long_range(self, s: int, t: int) -> tuple[float, float, float]:
        """``(b_{t|s}, c_{t|s}, beta2_{t|s})`` parameterizing ``q(z_s | z_t, x)``."""
        if not s < t:
            raise ScheduleError(f"long_range needs s < t, got s={s}, t={t}")
        self._check(s)
        self._check(t)
        b, c, _, beta2 = _transition_terms(
            self.alpha2(s), self.sigma2(s), self.alpha2(t), self.sigma2(t)
        )
        return float(b), float(c), float(beta2)

    def delta_v_given_t(self, v: int, t: int) -> float:
        """Weight of ``sqrt(12) u_v`` in ``z_t`` given ``(z_T, x)``, product form."""
        if not t < v <= self.T:
            raise ScheduleError(f"need t < v <= T, got v={v}, t={t}")
        out = self.transition(v).delta / SQRT12
        for j in range(t + 1, v):
            out *= self.transition(j).b
        return out

    def delta_v_given_t_snr(self, v: int, t: int) -> float:
        """Same quantity as :meth:`delta_v_given_t`, through the SNR difference."""
        if not t < v <= self.T:
            raise ScheduleError(f"need t < v <= T, got v={v}, t={t}")
        alpha, _ = self.alpha_sigma(t)
        return self.sigma2(t) / alpha * math.sqrt(self.snr(v - 1) - self.snr(v))

    def table(self) -> dict[str, np.ndarray]:
        """Per-step arrays indexed by ``t = 0..T`` (transition entries at 0 are NaN)."""
        gammas = np.array([self.gamma(t) for t in range(self.T + 1)])
        sigma2 = _sigmoid(gammas)
        alpha2 = _sigmoid(-gammas)
        nan = np.array([np.nan])
        b, c, delta, sigma_q2 = _transition_terms(alpha2[:-1], sigma2[:-1], alpha2[1:], sigma2[1:])
        return {
            "gamma": gammas,
            "alpha": np.sqrt(alpha2),
            "sigma": np.sqrt(sigma2),
            "b": np.concatenate([nan, b]),
            "c": np.concatenate([nan, c]),
            "delta": np.concatenate([nan, delta]),
            "sigma_q2": np.concatenate([nan, sigma_q2]),
        }


class ScheduleParams(nn.Module):
    """Trainable endpoints, ``gamma_max = gamma_min + exp(raw_span)`` keeps them ordered."""

    def __init__(self, T: int, gamma_min=DEFAULT_GAMMA_MIN, gamma_max=DEFAULT_GAMMA_MAX,
                 learnable: bool = True):
        super().__init__()
        NoiseSchedule(gamma_min, gamma_max, T)  # validates
        self.T = int(T)
        self.learnable = learnable
        gmin = torch.tensor(float(gamma_min), dtype=torch.float64)
        span = torch.tensor(math.log(gamma_max - gamma_min), dtype=torch.float64)
        if learnable:
            self.gamma_min = nn.Parameter(gmin)
            self.raw_span = nn.Parameter(span)
        else:
            self.register_buffer("gamma_min", gmin)
            self.register_buffer("raw_span", span)

    @property
    def gamma_max(self) -> torch.Tensor:
        return self.gamma_min + torch.exp(self.raw_span)

    def gammas(self) -> torch.Tensor:
        steps = torch.arange(self.T + 1, dtype=torch.float64) / self.T
        return self.gamma_min + steps * (self.gamma_max - self.gamma_min)

    def coefficients(self) -> dict[str, torch.Tensor]:
        """Differentiable version of :meth:`NoiseSchedule.table`."""
        gammas = self.gammas()
        sigma2 = torch.sigmoid(gammas)
        alpha2 = torch.sigmoid(-gammas)
        b, c, delta, sigma_q2 = _transition_terms(alpha2[:-1], sigma2[:-1], alpha2[1:], sigma2[1:])
        nan = torch.full((1,), float("nan"), dtype=torch.float64)
        return {
            "gamma": gammas,
            "alpha": alpha2.sqrt(),
            "sigma": sigma2.sqrt(),
            "sigma2": sigma2,
            "b": torch.cat([nan, b]),
            "c": torch.cat([nan, c]),
            "delta": torch.cat([nan, delta]),
            "sigma_q2": torch.cat([nan, sigma_q2]),
        }

    def frozen(self) -> NoiseSchedule:
        return NoiseSchedule(
            float(self.gamma_min.detach()), float(self.gamma_max.detach()), self.T, self.learnable
        )
