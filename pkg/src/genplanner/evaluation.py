"""Experiment harness: generate paths for an eval split and score them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .dataset import MazeDataset, MazeInstance, stack_conditions
from .metrics import MetricRow, aggregate, sample_metrics
from .model import CONDITION_CHANNELS, PlannerUNet
from .noise import make_schedule
from .samplers import binarize, ddim_sample, euler_sample, initial_noise
from .training import TrainConfig, train

DEFAULT_STEPS = 50
TABLE4_STEPS = (50, 30, 20, 10, 5, 1)

# ablation name -> condition channels fed to the network
CHANNEL_SUBSETS = {
    "none": (),
    "startend": ("start", "goal"),
    "walls": ("walls",),
    "full": CONDITION_CHANNELS,
}


class EvaluationError(ValueError):
    pass


@dataclass
class EvalReport:
    tag: str
    variant: str
    steps: Optional[int]
    records: list = field(default_factory=list)
    aggregate: Optional[MetricRow] = None

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "variant": self.variant,
            "steps": self.steps,
            "samples": len(self.records),
            "aggregate": vars(self.aggregate),
            "aggregate_percent": self.aggregate.as_percent(),
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def format_table(reports: Sequence[EvalReport]) -> str:
    """Plain-text table with validity / single-path / length ratio / branch rate columns."""
    header = f"{'Model':<24}{'Steps':>6}{'Validity (%)':>15}{'Single-Path (%)':>18}{'Length Ratio':>15}{'Branch-Rate (%)':>18}"
    lines = [header, "-" * len(header)]
    for rep in reports:
        p = rep.aggregate.as_percent()
        ratio = "N/A" if p["length_ratio"] is None else f"{p['length_ratio']:.2f}"
        steps = "-" if rep.steps is None else str(rep.steps)
        lines.append(
            f"{rep.tag:<24}{steps:>6}{p['validity']:>15.2f}{p['single_path']:>18.2f}{ratio:>15}{p['branch_rate']:>18.2f}"
        )
    return "\n".join(lines)


@torch.no_grad()
def generate_raw(net: Callable, cond: torch.Tensor, steps: int, seed=0, variant: Optional[str] = None,
                 batch_size: int = 256, schedule_T: Optional[int] = None) -> torch.Tensor:
    """Continuous outputs (B, 1, H, W) for a batch of conditions.

    All starting noise is drawn up front so results do not depend on ``batch_size``.
    """
    if isinstance(net, PlannerUNet):
        variant = variant or net.config.variant
        schedule_T = schedule_T or net.config.schedule_T
    if variant is None:
        raise EvaluationError("variant is required for a bare predictor")
    if variant == "baseline":
        outs = [net(None, cond[i : i + batch_size]) for i in range(0, len(cond), batch_size)]
        return torch.cat(outs)
    noise = initial_noise(cond, seed, cond.dtype)
    sched = make_schedule(schedule_T or 1000) if variant == "diffusion-eps" else None
    outs = []
    for i in range(0, len(cond), batch_size):
        c, x = cond[i : i + batch_size], noise[i : i + batch_size]
        if variant == "flow-velocity":
            outs.append(euler_sample(net, c, steps, x_init=x).final)
        else:
            outs.append(ddim_sample(net, c, steps, sched, x_init=x).final)
    return torch.cat(outs)


def generate_masks(net: Callable, instances: Sequence[MazeInstance], steps: int = DEFAULT_STEPS, seed=0,
                   variant: Optional[str] = None, batch_size: int = 256) -> list[np.ndarray]:
    cond = torch.from_numpy(stack_conditions(list(instances)))
    raw = generate_raw(net, cond, steps, seed, variant, batch_size)
    return [binarize(x[0]) for x in raw]


def evaluate_masks(masks: Sequence[np.ndarray], instances: Sequence[MazeInstance], tag: str = "",
                   variant: str = "", steps: Optional[int] = None) -> EvalReport:
    if len(masks) != len(instances):
        raise EvaluationError(f"{len(masks)} masks for {len(instances)} instances")
    if not instances:
        raise EvaluationError("nothing to evaluate: empty split")
    records = []
    for i, (mask, inst) in enumerate(zip(masks, instances)):
        rec = sample_metrics(mask, inst)
        rec["index"] = i
        records.append(rec)
    return EvalReport(tag, variant, steps, records, aggregate(records))


def _check_grid(net, instances: Sequence[MazeInstance]) -> None:
    if not instances:
        raise EvaluationError("nothing to evaluate: empty split")
    if isinstance(net, PlannerUNet) and instances[0].shape != (net.config.grid_size,) * 2:
        raise EvaluationError(
            f"checkpoint grid {net.config.grid_size} does not match dataset grid {instances[0].shape[0]}"
        )


def evaluate(net: Callable, instances: Sequence[MazeInstance], steps: int = DEFAULT_STEPS, seed=0,
             tag: Optional[str] = None, variant: Optional[str] = None, batch_size: int = 256) -> EvalReport:
    """One generation per instance, scored with all four metrics.

    The baseline is a single forward pass thresholded at logit 0; ``steps`` is
    then reported as ``None``.
    """
    _check_grid(net, instances)
    if isinstance(net, PlannerUNet):
        variant = net.config.variant
    masks = generate_masks(net, instances, steps, seed, variant, batch_size)
    tag = tag or variant
    return evaluate_masks(masks, instances, tag, variant, None if variant == "baseline" else steps)


def steps_sweep(net: Callable, instances: Sequence[MazeInstance], steps_list: Sequence[int] = TABLE4_STEPS,
                seed=0, tag: Optional[str] = None, variant: Optional[str] = None) -> list[EvalReport]:
    return [evaluate(net, instances, s, seed, tag, variant) for s in steps_list]


def conditioning_ablation(dataset: MazeDataset, config: TrainConfig, subsets: Sequence[str] = tuple(CHANNEL_SUBSETS),
                          steps: int = DEFAULT_STEPS, seed=0, on_trained=None) -> list[EvalReport]:
    """Train and evaluate one model per condition-channel subset; dropped channels are zeroed.

    ``on_trained(name, net, losses)`` is called after each training run (e.g. to save checkpoints).
    """
    reports = []
    for name in subsets:
        if name not in CHANNEL_SUBSETS:
            raise ValueError(f"unknown channel subset {name!r}; expected one of {sorted(CHANNEL_SUBSETS)}")
        cfg = TrainConfig(**{**vars(config), "keep_channels": CHANNEL_SUBSETS[name]})
        net, losses = train(cfg, dataset)
        if on_trained:
            on_trained(name, net, losses)
        reports.append(evaluate(net, dataset.eval, steps, seed, tag=f"{config.variant}[{name}]"))
    return reports
