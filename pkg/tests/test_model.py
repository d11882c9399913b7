import numpy as np
import pytest
import torch

from genplanner.model import (
    CheckpointError,
    ConfigError,
    NetConfig,
    VariantError,
    forward_baseline,
    forward_denoiser,
    init_params,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)

SMALL = dict(base_channels=8, time_embed_dim=16)


def random_inputs(n, batch=2, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(batch, 1, n, n, generator=g, dtype=dtype)
    cond = (torch.rand(batch, 3, n, n, generator=g) > 0.7).to(dtype)
    return x, cond


def finite_difference_check(net, loss_fn, count=20, seed=0, h=1e-5):
    """Compare autograd with central differences on randomly chosen parameter entries."""
    params = [p for p in net.parameters()]
    net.zero_grad()
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    worst = 0.0
    for _ in range(count):
        k = rng.choice(len(params), p=sizes / sizes.sum())
        p = params[k]
        idx = int(rng.integers(p.numel()))
        analytic = p.grad.reshape(-1)[idx].item()
        flat = p.data.reshape(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + h
            up = loss_fn().item()
            flat[idx] = orig - h
            down = loss_fn().item()
            flat[idx] = orig
        numeric = (up - down) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7)
        worst = max(worst, rel)
    return worst


@pytest.mark.parametrize("n", [8, 16, 32, 48])
@pytest.mark.parametrize("variant", ["flow-velocity", "diffusion-eps"])
def test_output_shape_all_grids(n, variant):
    net = init_params(NetConfig(n, variant, **SMALL), 0)
    x, cond = random_inputs(n)
    assert net(x, cond, torch.rand(2)).shape == (2, 1, n, n)
    assert forward_denoiser(net, x[0, 0], cond[0], 0.5).shape == (n, n)
    assert forward_denoiser(net, x[0], cond[0], 0.5).shape == (1, n, n)


@pytest.mark.parametrize("n", [8, 16, 32, 48])
def test_baseline_shape(n):
    net = init_params(NetConfig(n, "baseline", **SMALL), 0)
    _, cond = random_inputs(n)
    assert forward_baseline(net, cond[0]).shape == (n, n)
    assert forward_baseline(net, cond).shape == (2, 1, n, n)


def test_default_depths():
    assert NetConfig(8).depth == 2 and NetConfig(16).depth == 2
    assert NetConfig(32).depth == 3 and NetConfig(48).depth == 3


def test_init_deterministic_and_finite():
    cfg = NetConfig(8, "flow-velocity", **SMALL)
    a, b = init_params(cfg, 5), init_params(cfg, 5)
    assert all(torch.equal(p, q) for p, q in zip(a.state_dict().values(), b.state_dict().values()))
    assert sum(p.numel() for p in a.parameters()) > 0
    assert all(torch.isfinite(p).all() for p in a.parameters())
    c = init_params(cfg, 6)
    assert not all(torch.equal(p, q) for p, q in zip(a.parameters(), c.parameters()))


def test_init_does_not_disturb_global_rng():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    init_params(NetConfig(8, **SMALL), 0)
    assert torch.equal(torch.rand(3), expected)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(grid_size=8, depth=4),
        dict(grid_size=12, depth=3),
        dict(grid_size=8, base_channels=4),
        dict(grid_size=8, variant="gan"),
        dict(grid_size=8, keep_channels=("walls", "cats")),
    ],
)
def test_bad_configs(kwargs):
    with pytest.raises(ConfigError):
        NetConfig(**kwargs)


def test_variant_guards():
    flow = init_params(NetConfig(8, "flow-velocity", **SMALL), 0)
    base = init_params(NetConfig(8, "baseline", **SMALL), 0)
    x, cond = random_inputs(8)
    with pytest.raises(VariantError):
        forward_baseline(flow, cond)
    with pytest.raises(VariantError):
        forward_denoiser(base, x, cond, 0.5)


def test_forward_deterministic():
    net = init_params(NetConfig(8, "diffusion-eps", **SMALL), 1)
    x, cond = random_inputs(8)
    with torch.no_grad():
        assert torch.equal(net(x, cond, torch.tensor(0.3)), net(x, cond, torch.tensor(0.3)))


def test_time_changes_output():
    net = init_params(NetConfig(8, "flow-velocity", **SMALL), 1)
    x, cond = random_inputs(8)
    with torch.no_grad():
        assert not torch.allclose(net(x, cond, torch.tensor(0.1)), net(x, cond, torch.tensor(0.9)))


def test_dropped_channels_are_ignored():
    net = init_params(NetConfig(8, "flow-velocity", keep_channels=("start", "goal"), **SMALL), 0)
    x, cond = random_inputs(8)
    other = cond.clone()
    other[:, 0] = 1 - other[:, 0]
    with torch.no_grad():
        assert torch.equal(net(x, cond, torch.tensor(0.5)), net(x, other, torch.tensor(0.5)))
        other[:, 1] = 1 - other[:, 1]
        assert not torch.equal(net(x, cond, torch.tensor(0.5)), net(x, other, torch.tensor(0.5)))


def test_no_nonfinite_activations():
    for n in (8, 16):
        net = init_params(NetConfig(n, "diffusion-eps", **SMALL), 2)
        with torch.no_grad():
            for trial in range(50):
                x, cond = random_inputs(n, batch=2, seed=trial)
                assert torch.isfinite(net(x * 3, cond, torch.rand(2))).all()


@pytest.mark.parametrize("variant", ["flow-velocity", "diffusion-eps"])
def test_denoiser_gradient_check(variant):
    net = init_params(NetConfig(8, variant, **SMALL), 3).double()
    x, cond = random_inputs(8, dtype=torch.float64)
    weights = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(9), dtype=torch.float64)
    t = torch.tensor([0.2, 0.7], dtype=torch.float64)
    loss = lambda: (net(x, cond, t) * weights).sum()
    assert finite_difference_check(net, loss) < 1e-3


def test_denoiser_input_gradient():
    net = init_params(NetConfig(8, "flow-velocity", **SMALL), 3).double()
    x, cond = random_inputs(8, dtype=torch.float64)
    x.requires_grad_(True)
    t = torch.tensor(0.4, dtype=torch.float64)
    (net(x, cond, t) ** 2).sum().backward()
    analytic = x.grad[0, 0, 3, 4].item()
    h = 1e-6
    with torch.no_grad():
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[0, 0, 3, 4] += h
        xm[0, 0, 3, 4] -= h
        numeric = ((net(xp, cond, t) ** 2).sum() - (net(xm, cond, t) ** 2).sum()).item() / (2 * h)
    assert abs(analytic - numeric) / max(abs(numeric), 1e-7) < 1e-3


def test_baseline_gradient_check():
    net = init_params(NetConfig(8, "baseline", **SMALL), 4).double()
    _, cond = random_inputs(8, dtype=torch.float64)
    weights = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    assert finite_difference_check(net, lambda: (forward_baseline(net, cond) * weights).sum()) < 1e-3


@pytest.mark.parametrize("variant", ["flow-velocity", "diffusion-eps", "baseline"])
def test_checkpoint_roundtrip(tmp_path, variant):
    cfg = NetConfig(16, variant, keep_channels=("walls", "goal"), schedule_T=100, **SMALL)
    net = init_params(cfg, 7)
    net.step = 42
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net, extra={"note": "x"})
    back = load_checkpoint(path)
    assert back.config == cfg and back.step == 42
    header = read_checkpoint_header(path)
    assert header["variant"] == variant and header["extra"] == {"note": "x"}
    x, cond = random_inputs(16)
    with torch.no_grad():
        if variant == "baseline":
            a, b = net(None, cond), back(None, cond)
        else:
            a, b = net.eval()(x, cond, torch.tensor(0.5)), back(x, cond, torch.tensor(0.5))
    assert (a - b).abs().max() < 1e-6
    save_checkpoint(tmp_path / "again.ckpt", back, extra={"note": "x"})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
