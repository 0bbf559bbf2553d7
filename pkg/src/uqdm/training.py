"""End-to-end NELBO training over full simulated trajectories."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import uq
from .diffusion import UQDM

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; ``model`` holds the last good weights."""

    def __init__(self, step: int, model: UQDM):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.model = model


@dataclass
class TrainConfig:
    steps: int = 50_000
    batch_size: int = 128
    lr: float = 3e-4
    clip_norm: float = 1.0
    seed: int = 0
    eval_every: int = 1000
    eval_size: int = 2048
    # cosine decay to lr * final_lr_frac over the run; 1.0 keeps lr constant
    final_lr_frac: float = 1.0
    log_every: int = 0


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    train_bpd: list = field(default_factory=list)
    val_bpd: list = field(default_factory=list)
    seconds: float = 0.0


def step_seed(seed: int, step: int) -> int:
    return uq.stream_seed(seed, uq.STREAM_TRAIN + (step << 8))


@torch.no_grad()
def evaluate_bpd(model: UQDM, data: np.ndarray, seed: int = 1, batch: int = 4096,
                 mode: str = "mc") -> float:
    """Mean total bpd over ``data`` (rows are examples)."""
    total = 0.0
    for i in range(0, len(data), batch):
        x = torch.from_numpy(np.asarray(data[i : i + batch], dtype=np.float64))
        rep = model.nelbo(x, seed + i, mode=mode)
        total += float(rep.total_bpd.sum())
    return total / len(data)


def train(model: UQDM, dataset: np.ndarray, config: TrainConfig, val_data: np.ndarray | None = None):
    """Minimize the mean NELBO in bits per dimension; returns ``(model, TrainLog)``."""
    dataset = np.asarray(dataset, dtype=np.float64)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sched = None
    if config.final_lr_frac != 1.0 and config.steps > 0:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(
            opt, T_max=config.steps, eta_min=config.lr * config.final_lr_frac
        )
    tlog = TrainLog()
    last_good = copy.deepcopy(model.state_dict())
    t0 = time.time()
    running = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(dataset), config.batch_size)
        x = torch.from_numpy(dataset[idx])
        loss = model.nelbo(x, step_seed(config.seed, step)).total_bpd.mean()
        if not torch.isfinite(loss):
            model.load_state_dict(last_good)
            raise TrainingDiverged(step, model)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
        opt.step()
        if sched is not None:
            sched.step()
        running.append(float(loss.detach()))
        if config.eval_every and (step % config.eval_every == 0 or step == config.steps):
            last_good = copy.deepcopy(model.state_dict())
            tlog.steps.append(step)
            tlog.train_bpd.append(float(np.mean(running)))
            running = []
            if val_data is not None:
                tlog.val_bpd.append(evaluate_bpd(model, val_data[: config.eval_size]))
            log.info("step %d train %.4f val %s", step, tlog.train_bpd[-1],
                     f"{tlog.val_bpd[-1]:.4f}" if tlog.val_bpd else "-")
    tlog.seconds = time.time() - t0
    return model, tlog
