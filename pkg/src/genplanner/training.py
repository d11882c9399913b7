"""Losses and the optimization loop for all three variants."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import torch
import torch.nn.functional as F

from .dataset import MazeDataset, stack_conditions, stack_targets
from .model import CONDITION_CHANNELS, NetConfig, PlannerUNet, VariantError, init_params
from .noise import DEFAULT_T, NoiseSchedule, diffuse_forward, flow_interpolate, flow_target_velocity, make_schedule
from .samplers import NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "flow-velocity"
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 2e-4
    seed: int = 0
    schedule_T: int = DEFAULT_T
    grad_clip: float = 1.0
    base_channels: int = 64
    depth: Optional[int] = None
    time_embed_dim: int = 128
    keep_channels: tuple = CONDITION_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "keep_channels", tuple(self.keep_channels))
        if self.epochs < 1 or self.batch_size < 1 or self.schedule_T < 1:
            raise ValueError("epochs, batch_size and schedule_T must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    def net_config(self, grid_size: int) -> NetConfig:
        return NetConfig(
            grid_size=grid_size,
            variant=self.variant,
            base_channels=self.base_channels,
            depth=self.depth,
            time_embed_dim=self.time_embed_dim,
            keep_channels=self.keep_channels,
            schedule_T=self.schedule_T,
        )


def _generator(seed) -> torch.Generator:
    if isinstance(seed, torch.Generator):
        return seed
    return torch.Generator().manual_seed(int(seed))


def _require(model, variant: str) -> None:
    if isinstance(model, PlannerUNet) and model.config.variant != variant:
        raise VariantError(f"expected a {variant} network, got {model.config.variant}")


def diffusion_inputs(x0: torch.Tensor, sched: NoiseSchedule, seed):
    """Per-sample timestep and noise draws; returns ``(x_t, t, eps)``."""
    g = _generator(seed)
    t = torch.randint(0, sched.T, (x0.shape[0],), generator=g)
    eps = torch.randn(x0.shape, generator=g, dtype=x0.dtype)
    return diffuse_forward(x0, eps, t, sched), t, eps


def flow_inputs(x0: torch.Tensor, seed):
    """Per-sample flow time and noise draws; returns ``(x_t, t, x1)``."""
    g = _generator(seed)
    t = torch.rand(x0.shape[0], generator=g, dtype=x0.dtype)
    x1 = torch.randn(x0.shape, generator=g, dtype=x0.dtype)
    return flow_interpolate(x0, x1, t), t, x1


def diff_loss(model: Callable, x0: torch.Tensor, cond: torch.Tensor, sched: NoiseSchedule, seed) -> torch.Tensor:
    """Mean squared error between drawn noise and predicted noise."""
    _require(model, "diffusion-eps")
    x_t, t, eps = diffusion_inputs(x0, sched, seed)
    pred = model(x_t, cond, t.to(x0.dtype) / sched.T)
    return F.mse_loss(pred, eps)


def flow_loss(model: Callable, x0: torch.Tensor, cond: torch.Tensor, seed) -> torch.Tensor:
    """Mean squared error between target velocity ``x1 - x0`` and predicted velocity."""
    _require(model, "flow-velocity")
    x_t, t, x1 = flow_inputs(x0, seed)
    pred = model(x_t, cond, t)
    return F.mse_loss(pred, flow_target_velocity(x0, x1))


def baseline_loss(model: Callable, x0: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
    """Per-pixel binary cross-entropy of path logits against the {0, 1} mask."""
    _require(model, "baseline")
    logits = model(None, cond)
    return F.binary_cross_entropy_with_logits(logits, (x0 > 0).to(logits.dtype))


def variant_loss(net: PlannerUNet, x0, cond, sched: Optional[NoiseSchedule], generator) -> torch.Tensor:
    variant = net.config.variant
    if variant == "diffusion-eps":
        return diff_loss(net, x0, cond, sched, generator)
    if variant == "flow-velocity":
        return flow_loss(net, x0, cond, generator)
    return baseline_loss(net, x0, cond)


def train(config: TrainConfig, dataset: MazeDataset, log_path=None, progress: bool = False):
    """Fit a fresh network on the dataset's train split.

    Returns ``(net, losses)`` where ``losses`` holds the mean training loss of
    every epoch. With ``log_path`` each epoch is appended as a JSON line.
    """
    if dataset.grid_size is None or not dataset.train:
        raise ValueError("dataset has no training samples")
    net = init_params(config.net_config(dataset.grid_size), config.seed)
    x0_all = torch.from_numpy(stack_targets(dataset.train))
    cond_all = torch.from_numpy(stack_conditions(dataset.train))
    sched = make_schedule(config.schedule_T) if config.variant == "diffusion-eps" else None
    # one stream for data order and noise, distinct from the init stream
    gen = torch.Generator().manual_seed(config.seed + 1)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate, weight_decay=0.0)
    n = x0_all.shape[0]
    losses = []
    log_file = open(log_path, "w") if log_path else None
    try:
        net.train()
        for epoch in range(config.epochs):
            order = torch.randperm(n, generator=gen)
            total, seen = 0.0, 0
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                loss = variant_loss(net, x0_all[idx], cond_all[idx], sched, gen)
                if not torch.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss {loss.item()} at epoch {epoch + 1}, step {net.step}"
                    )
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if config.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
                opt.step()
                net.step += 1
                total += loss.item() * len(idx)
                seen += len(idx)
            mean = total / seen
            losses.append(mean)
            record = {"epoch": epoch + 1, "step": net.step, "loss": mean}
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if progress:
                log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, mean)
    finally:
        if log_file:
            log_file.close()
    net.eval()
    return net, losses
