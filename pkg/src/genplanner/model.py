"""Conditional U-Net shared by the diffusion, flow and direct-prediction variants.

The network sees the noisy path map concatenated with the three condition
masks (walls, start, goal) along the channel axis. Generative variants add a
sinusoidal embedding of the normalized time as a per-block shift; the baseline
has no time input and no noisy-map channel.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

VARIANTS = ("diffusion-eps", "flow-velocity", "baseline")
CONDITION_CHANNELS = ("walls", "start", "goal")


class ConfigError(ValueError):
    pass


class VariantError(RuntimeError):
    """A network was used through the wrong entry point."""


def default_depth(grid_size: int) -> int:
    return 2 if grid_size <= 16 else 3


@dataclass(frozen=True)
class NetConfig:
    grid_size: int
    variant: str = "flow-velocity"
    base_channels: int = 64
    depth: Optional[int] = None
    time_embed_dim: int = 128
    # condition channels that are fed to the network; dropped ones are zeroed
    keep_channels: tuple = CONDITION_CHANNELS
    # diffusion schedule length the network was trained against
    schedule_T: int = 1000
    channel_mults: tuple = field(default=(1, 2, 2, 4))

    def __post_init__(self):
        if self.depth is None:
            object.__setattr__(self, "depth", default_depth(self.grid_size))
        object.__setattr__(self, "keep_channels", tuple(self.keep_channels))
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.base_channels < 8:
            raise ConfigError("base_channels must be >= 8")
        if self.depth < 1 or self.depth > len(self.channel_mults) - 1:
            raise ConfigError(f"depth must lie in [1, {len(self.channel_mults) - 1}]")
        if self.grid_size % (2**self.depth):
            raise ConfigError(
                f"grid_size {self.grid_size} is not divisible by 2**depth = {2 ** self.depth}"
            )
        unknown = set(self.keep_channels) - set(CONDITION_CHANNELS)
        if unknown:
            raise ConfigError(f"unknown condition channels {sorted(unknown)}")

    @property
    def is_generative(self) -> bool:
        return self.variant != "baseline"


def timestep_embedding(t: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    """Sinusoidal features of normalized time ``t`` in [0, 1]."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = scale * t[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _groups(channels: int) -> int:
    return math.gcd(8, channels)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: Optional[int]):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None:
            h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class PlannerUNet(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        self.step = 0
        c = config.base_channels
        chans = [c * m for m in config.channel_mults[: config.depth + 1]]
        tdim = config.time_embed_dim if config.is_generative else None
        if tdim:
            self.time_mlp = nn.Sequential(
                nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
            )
        in_ch = 4 if config.is_generative else 3
        keep = [name in config.keep_channels for name in CONDITION_CHANNELS]
        self.register_buffer("cond_keep", torch.tensor(keep, dtype=torch.float32)[None, :, None, None])

        self.stem = nn.Conv2d(in_ch, chans[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        for i in range(config.depth):
            self.down.append(nn.ModuleList([ResBlock(chans[i], chans[i], tdim), ResBlock(chans[i], chans[i], tdim)]))
            self.downsample.append(nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1))
        mid = chans[config.depth]
        self.mid = nn.ModuleList([ResBlock(mid, mid, tdim), ResBlock(mid, mid, tdim)])
        self.upsample = nn.ModuleList()
        self.up = nn.ModuleList()
        for i in reversed(range(config.depth)):
            self.upsample.append(nn.Conv2d(chans[i + 1], chans[i], 3, padding=1))
            self.up.append(nn.ModuleList([ResBlock(2 * chans[i], chans[i], tdim), ResBlock(chans[i], chans[i], tdim)]))
        self.out_norm = nn.GroupNorm(_groups(chans[0]), chans[0])
        self.out = nn.Conv2d(chans[0], 1, 3, padding=1)

    def forward(self, x_t: Optional[torch.Tensor], cond: torch.Tensor, t: Optional[torch.Tensor] = None):
        """Return a ``(B, 1, H, W)`` map: noise / velocity / path logits depending on the variant.

        ``t`` is normalized time in [0, 1], either a scalar or one value per sample.
        """
        cond = cond * self.cond_keep.to(cond.dtype)
        if self.config.is_generative:
            h = torch.cat([x_t, cond], dim=1)
            t = torch.as_tensor(t, dtype=h.dtype).reshape(-1).expand(h.shape[0])
            temb = self.time_mlp(timestep_embedding(t, self.config.time_embed_dim))
        else:
            h, temb = cond, None
        h = self.stem(h)
        skips = []
        for blocks, down in zip(self.down, self.downsample):
            for block in blocks:
                h = block(h, temb)
            skips.append(h)
            h = down(h)
        for block in self.mid:
            h = block(h, temb)
        for up, blocks in zip(self.upsample, self.up):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, temb)
        return self.out(F.silu(self.out_norm(h)))


def init_params(config: NetConfig, seed: int = 0) -> PlannerUNet:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = PlannerUNet(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return net


def _as_batch(x: torch.Tensor, dims: int) -> tuple[torch.Tensor, bool]:
    if x.dim() == dims:
        return x[None], True
    return x, False


def forward_denoiser(net: PlannerUNet, x_t: torch.Tensor, cond: torch.Tensor, t) -> torch.Tensor:
    """Noise (diffusion) or velocity (flow) prediction.

    Accepts unbatched ``x_t`` of shape (H, W) or (1, H, W) with ``cond`` (3, H, W),
    or batched (B, 1, H, W) / (B, 3, H, W). Output matches the ``x_t`` shape.
    """
    if not net.config.is_generative:
        raise VariantError("forward_denoiser needs a diffusion-eps or flow-velocity network")
    shape = x_t.shape
    if x_t.dim() == 2:
        x_t = x_t[None, None]
    elif x_t.dim() == 3:
        x_t = x_t[None]
    cond, _ = _as_batch(cond, 3)
    if x_t.shape[-2:] != cond.shape[-2:]:
        raise ValueError("x_t and condition spatial shapes differ")
    return net(x_t, cond, t).reshape(shape)


def forward_baseline(net: PlannerUNet, cond: torch.Tensor) -> torch.Tensor:
    """Path logits from the condition alone: (3, H, W) -> (H, W), or batched (B, 3, H, W) -> (B, 1, H, W)."""
    if net.config.variant != "baseline":
        raise VariantError("forward_baseline needs a baseline network")
    cond, single = _as_batch(cond, 3)
    out = net(None, cond)
    return out[0, 0] if single else out


# Checkpoint container:
#   b"GPCK" | u16 version | u32 header length | UTF-8 JSON header | raw float32 LE tensors
CKPT_MAGIC = b"GPCK"
CKPT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, net: PlannerUNet, extra: Optional[dict] = None) -> None:
    tensors = []
    offset = 0
    for name, tensor in net.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "format": "genplanner-checkpoint",
        "config": asdict(net.config),
        "variant": net.config.variant,
        "step": int(net.step),
        "tensors": tensors,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        f.write(blob)
        for tensor in net.state_dict().values():
            f.write(tensor.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        prefix = f.read(_CKPT_PREFIX.size)
        if len(prefix) < _CKPT_PREFIX.size:
            raise CheckpointError("truncated checkpoint")
        magic, version, size = _CKPT_PREFIX.unpack(prefix)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"not a checkpoint (magic {magic!r})")
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(size))
    header["_data_offset"] = _CKPT_PREFIX.size + size
    return header


def load_checkpoint(path) -> PlannerUNet:
    header = read_checkpoint_header(path)
    config = NetConfig(**header["config"])
    net = PlannerUNet(config)
    raw = Path(path).read_bytes()[header["_data_offset"] :]
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=entry["offset"]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)
    net.step = header["step"]
    net.eval()
    return net
