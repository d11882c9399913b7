import json

import numpy as np
import pytest
import torch

from genplanner.dataset import DatasetConfig, MazeDataset, decode_condition, generate_instances
from genplanner.evaluation import (
    CHANNEL_SUBSETS,
    EvaluationError,
    conditioning_ablation,
    evaluate,
    evaluate_masks,
    format_table,
    generate_masks,
    steps_sweep,
)
from genplanner.maze import astar_shortest_path, path_to_mask
from genplanner.model import NetConfig, init_params
from genplanner.noise import make_schedule
from genplanner.training import TrainConfig
from test_model import SMALL


@pytest.fixture(scope="module")
def instances():
    return generate_instances(DatasetConfig(8, 0, 40, 1, 0.2, 9))


def solved_targets(cond):
    out = []
    for c in cond.numpy():
        walls, start, goal = decode_condition(c)
        mask = path_to_mask(astar_shortest_path(walls, start, goal), walls.shape)
        out.append(np.where(mask, 1.0, -1.0))
    return torch.tensor(np.stack(out)[:, None], dtype=cond.dtype)


def flow_oracle(x, cond, t):
    # exact velocity of the straight line from the solution through x
    t = t.reshape(-1, 1, 1, 1) if t.dim() else t
    return (x - solved_targets(cond)) / t


def eps_oracle(x, cond, t, sched=make_schedule(1000)):
    a, b = sched.coeffs(torch.round(t * 1000).long(), x)
    return (x - a * solved_targets(cond)) / b


@pytest.mark.parametrize("steps", [1, 5, 50])
def test_flow_oracle_scores_perfectly(instances, steps):
    rep = evaluate(flow_oracle, instances, steps, seed=0, variant="flow-velocity")
    row = rep.aggregate
    assert (row.validity, row.single_path, row.length_ratio, row.branch_rate) == (1.0, 1.0, 1.0, 0.0)


@pytest.mark.parametrize("steps", [1, 10])
def test_ddim_oracle_scores_perfectly(instances, steps):
    rep = evaluate(eps_oracle, instances, steps, seed=0, variant="diffusion-eps")
    assert rep.aggregate.validity == 1.0 and rep.aggregate.single_path == 1.0


def test_ground_truth_masks(instances):
    rep = evaluate_masks([i.path_mask for i in instances], instances, "gt")
    assert rep.aggregate.validity == 1.0 and rep.aggregate.length_ratio == 1.0
    assert len(rep.records) == len(instances) and rep.records[3]["index"] == 3


def test_empty_masks_give_na_ratio(instances):
    rep = evaluate_masks([np.zeros((8, 8), bool)] * len(instances), instances, "empty")
    assert rep.aggregate.validity == 0.0 and rep.aggregate.length_ratio is None
    assert "N/A" in format_table([rep])
    assert json.loads(rep.to_json())["aggregate"]["length_ratio"] is None


def test_sweep_matches_single_evaluations(instances):
    net = init_params(NetConfig(8, "flow-velocity", **SMALL), 0)
    reps = steps_sweep(net, instances, [5, 2], seed=3)
    for rep, s in zip(reps, [5, 2]):
        single = evaluate(net, instances, s, seed=3)
        assert rep.to_dict() == single.to_dict() and rep.steps == s


def test_batch_size_does_not_change_results(instances):
    net = init_params(NetConfig(8, "diffusion-eps", **SMALL), 0)
    a = generate_masks(net, instances, 4, seed=1, batch_size=7)
    b = generate_masks(net, instances, 4, seed=1, batch_size=256)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_baseline_reports_no_steps(instances):
    net = init_params(NetConfig(8, "baseline", **SMALL), 0)
    rep = evaluate(net, instances)
    assert rep.steps is None and rep.variant == "baseline"


def test_errors(instances):
    net = init_params(NetConfig(16, "flow-velocity", **SMALL), 0)
    with pytest.raises(EvaluationError):
        evaluate(net, [])
    with pytest.raises(EvaluationError):
        evaluate(net, instances)
    with pytest.raises(EvaluationError):
        evaluate(flow_oracle, instances)
    with pytest.raises(EvaluationError):
        evaluate_masks([], instances)


def test_conditioning_ablation_smoke():
    insts = generate_instances(DatasetConfig(8, 16, 4, 1, 0.2, 0))
    ds = MazeDataset(insts, 16, 8)
    cfg = TrainConfig("flow-velocity", epochs=1, batch_size=8, **SMALL)
    seen = []
    reps = conditioning_ablation(ds, cfg, ["none", "full"], steps=2, on_trained=lambda n, net, l: seen.append((n, net)))
    assert [r.tag for r in reps] == ["flow-velocity[none]", "flow-velocity[full]"]
    assert seen[0][1].config.keep_channels == CHANNEL_SUBSETS["none"]
    assert seen[1][1].config.keep_channels == CHANNEL_SUBSETS["full"]
    with pytest.raises(ValueError):
        conditioning_ablation(ds, cfg, ["bogus"])
