"""Iterative generation: Euler integration for flow models, DDIM for diffusion models.

Samplers take any predictor ``model(x_t, cond, t_norm) -> tensor`` so they can
be driven by a trained :class:`~genplanner.model.PlannerUNet` or by an
analytic stand-in. ``t_norm`` is flow time in [0, 1] or ``t / T`` for
diffusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .noise import NoiseSchedule

Predictor = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


class NumericalError(RuntimeError):
    pass


@dataclass
class SampleTrace:
    final: torch.Tensor
    # (time, clean-sample estimate), ordered from most to least noisy
    intermediates: list = field(default_factory=list)


def _generator(seed) -> torch.Generator:
    if isinstance(seed, torch.Generator):
        return seed
    return torch.Generator().manual_seed(int(seed))


def initial_noise(cond: torch.Tensor, seed, dtype=torch.float32) -> torch.Tensor:
    """Standard normal start state shaped like one path map per condition."""
    shape = (cond.shape[0], 1, *cond.shape[-2:]) if cond.dim() == 4 else (1, *cond.shape[-2:])
    return torch.randn(shape, generator=_generator(seed), dtype=dtype)


def estimate_x0_flow(x_t: torch.Tensor, v: torch.Tensor, t) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=x_t.dtype)
    if ((t < 0) | (t > 1)).any():
        raise ValueError("flow time must lie in [0, 1]")
    return x_t - t * v


def estimate_x0_diff(x_t: torch.Tensor, eps_hat: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    ab = float(sched.alpha_bar[int(t)])
    if ab <= 0.0:
        raise ZeroDivisionError(f"alpha_bar[{t}] is zero; clean-sample estimate undefined")
    return (x_t - (1.0 - ab) ** 0.5 * eps_hat) / ab**0.5


def ddim_timesteps(steps: int, T: int) -> list[int]:
    """Uniformly strided descending timesteps from ``T-1`` down to 0.

    The subsequence always ends at 0, so a single step visits only ``t = 0``.
    """
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}], got {steps}")
    if steps == 1:
        return [0]
    return [int(v) for v in np.rint(np.linspace(T - 1, 0, steps))]


@torch.no_grad()
def euler_sample(model: Predictor, cond: torch.Tensor, steps: int, seed=0,
                 record: bool = False, x_init: Optional[torch.Tensor] = None) -> SampleTrace:
    """Integrate dx/dt = v(x, c, t) from t=1 to t=0 with ``steps`` explicit Euler steps."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = initial_noise(cond, seed, cond.dtype) if x_init is None else x_init.clone()
    dt = -1.0 / steps
    trace = SampleTrace(x)
    for i in range(steps):
        t = 1.0 - i / steps
        v = model(x, cond, torch.tensor(t, dtype=x.dtype))
        if record:
            trace.intermediates.append((t, estimate_x0_flow(x, v, t)))
        x = x + dt * v
    trace.final = x
    return trace


@torch.no_grad()
def ddim_sample(model: Predictor, cond: torch.Tensor, steps: int, sched: NoiseSchedule, seed=0,
                record: bool = False, x_init: Optional[torch.Tensor] = None) -> SampleTrace:
    """Deterministic DDIM reverse process over a strided timestep subsequence."""
    ts = ddim_timesteps(steps, sched.T)
    x = initial_noise(cond, seed, cond.dtype) if x_init is None else x_init.clone()
    trace = SampleTrace(x)
    for i, t in enumerate(ts):
        eps = model(x, cond, torch.tensor(t / sched.T, dtype=x.dtype))
        x0_hat = estimate_x0_diff(x, eps, t, sched)
        if record:
            trace.intermediates.append((t, x0_hat))
        ab_next = float(sched.alpha_bar[ts[i + 1]]) if i + 1 < len(ts) else 1.0
        x = ab_next**0.5 * x0_hat + (1.0 - ab_next) ** 0.5 * eps
    trace.final = x
    return trace


def binarize(x) -> np.ndarray:
    """Cells with value strictly above zero form the path."""
    arr = x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else np.asarray(x)
    if not np.isfinite(arr).all():
        raise NumericalError("cannot binarize a map containing non-finite values")
    return arr > 0
