"""Noise schedule and forward corruption for the diffusion and flow variants.

Everything here works on torch tensors and is broadcast over a leading batch
dimension where ``t`` is given per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

DEFAULT_T = 1000
BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients ``alpha_bar[t]`` for ``t = 0 .. T-1`` (float64)."""

    alpha_bar: torch.Tensor

    @property
    def T(self) -> int:
        return self.alpha_bar.numel()

    def coeffs(self, t, like: torch.Tensor):
        """sqrt(alpha_bar_t) and sqrt(1 - alpha_bar_t), shaped to broadcast against ``like``."""
        ab = self.alpha_bar[torch.as_tensor(t, dtype=torch.long)]
        ab = ab.to(like.dtype).reshape(-1, *([1] * (like.dim() - 1))) if ab.dim() else ab.to(like.dtype)
        return ab.sqrt(), (1.0 - ab).sqrt()


def make_schedule(T: int = DEFAULT_T, beta_start: float = BETA_START, beta_end: float = BETA_END) -> NoiseSchedule:
    """Linear per-step betas with ``alpha_bar_t = prod_{s<=t} (1 - beta_s)``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if T == 1:
        betas = torch.tensor([beta_start], dtype=torch.float64)
    else:
        betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    return NoiseSchedule(torch.cumprod(1.0 - betas, dim=0))


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def diffuse_forward(x0: torch.Tensor, eps: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps. ``t`` is an int or a per-sample index tensor."""
    _same_shape(x0, eps)
    t = torch.as_tensor(t)
    if ((t < 0) | (t >= sched.T)).any():
        raise ValueError(f"timestep out of range [0, {sched.T})")
    a, s = sched.coeffs(t, x0)
    return a * x0 + s * eps


def _broadcast_time(t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype)
    if t.dim():
        t = t.reshape(-1, *([1] * (like.dim() - 1)))
    return t


def flow_interpolate(x0: torch.Tensor, x1: torch.Tensor, t) -> torch.Tensor:
    """x_t = (1 - t) x0 + t x1."""
    _same_shape(x0, x1)
    t = _broadcast_time(t, x0)
    return (1.0 - t) * x0 + t * x1


def flow_target_velocity(x0: torch.Tensor, x1: torch.Tensor) -> torch.Tensor:
    """d x_t / dt along the linear interpolant: x1 - x0."""
    _same_shape(x0, x1)
    return x1 - x0
