"""Maze datasets: instance generation, the GPLN v1 container and tensor encodings.

GPLN v1 layout (little-endian)::

    magic  b"GPLN"
    u16    version (= 1)
    u16    H
    u16    W
    u32    sample count
    u32    split boundary (samples [0, split) are train, the rest eval)
    then per sample four bit-packed H*W masks: walls, start, goal, path

Each mask is flattened row-major, packed MSB-first (``np.packbits`` default
bit order) and padded with zero bits to a whole number of bytes.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .maze import (
    DEFAULT_WALL_PROB,
    Cell,
    InfeasibleInstanceError,
    astar_shortest_path,
    generate_walls,
    path_to_mask,
    sample_endpoints,
)

log = logging.getLogger(__name__)

MAGIC = b"GPLN"
VERSION = 1
_HEADER = struct.Struct("<4sHHHII")

# samples rejected per window before the generator gives up
REJECTION_WINDOW = 10_000
MAX_REJECTION_RATE = 0.999


class DatasetFormatError(ValueError):
    pass


class InfeasibleDatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    grid_size: int
    train_count: int
    eval_count: int
    min_path_len: int = 1
    wall_prob: float = DEFAULT_WALL_PROB
    seed: int = 0

    def __post_init__(self):
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.train_count < 0 or self.eval_count < 0 or self.train_count + self.eval_count == 0:
            raise ValueError("sample counts must be non-negative and not both zero")
        if self.min_path_len < 1:
            raise ValueError("min_path_len must be >= 1")
        if not 0.0 <= self.wall_prob <= 1.0:
            raise ValueError("wall_prob must lie in [0, 1]")


# grid -> (train, eval, min path length in edges)
TABLE1_PRESETS = {
    48: (20_000, 1_000, 20),
    32: (20_000, 1_000, 10),
    16: (10_000, 500, 5),
    8: (5_000, 250, 1),
}


def preset(grid_size: int, wall_prob: float = DEFAULT_WALL_PROB, seed: int = 0) -> DatasetConfig:
    train, evaluation, min_len = TABLE1_PRESETS[grid_size]
    return DatasetConfig(grid_size, train, evaluation, min_len, wall_prob, seed)


@dataclass
class MazeInstance:
    walls: np.ndarray
    start: Cell
    goal: Cell
    path_mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    @property
    def path_cells(self) -> int:
        return int(self.path_mask.sum())

    def __eq__(self, other):
        if not isinstance(other, MazeInstance):
            return NotImplemented
        return (
            tuple(self.start) == tuple(other.start)
            and tuple(self.goal) == tuple(other.goal)
            and np.array_equal(self.walls, other.walls)
            and np.array_equal(self.path_mask, other.path_mask)
        )


@dataclass
class MazeDataset:
    instances: list[MazeInstance]
    split: int
    grid_size: int

    @property
    def train(self) -> list[MazeInstance]:
        return self.instances[: self.split]

    @property
    def eval(self) -> list[MazeInstance]:
        return self.instances[self.split :]

    def __len__(self):
        return len(self.instances)


def _subseed(seed, k: int) -> list[int]:
    return [int(v) for v in np.atleast_1d(seed)] + [k]


def generate_instance(config: DatasetConfig, instance_seed) -> Optional[MazeInstance]:
    """Draw one maze; ``None`` if it is unsolvable or its path is too short."""
    n = config.grid_size
    walls = generate_walls(n, n, config.wall_prob, seed=_subseed(instance_seed, 0))
    try:
        start, goal = sample_endpoints(walls, seed=_subseed(instance_seed, 1))
    except InfeasibleInstanceError:
        return None
    path = astar_shortest_path(walls, start, goal)
    if path is None or len(path) - 1 < config.min_path_len:
        return None
    return MazeInstance(walls, start, goal, path_to_mask(path, walls.shape))


def generate_instances(config: DatasetConfig) -> list[MazeInstance]:
    wanted = config.train_count + config.eval_count
    instances: list[MazeInstance] = []
    attempt = 0
    window_accepted = 0
    while len(instances) < wanted:
        inst = generate_instance(config, [config.seed, attempt])
        attempt += 1
        if inst is not None:
            instances.append(inst)
            window_accepted += 1
        if attempt % REJECTION_WINDOW == 0:
            rate = 1.0 - window_accepted / REJECTION_WINDOW
            if rate > MAX_REJECTION_RATE:
                raise InfeasibleDatasetError(
                    f"rejection rate {rate:.4%} over the last {REJECTION_WINDOW} draws "
                    f"(accepted {len(instances)}/{wanted} after {attempt} attempts; "
                    f"grid={config.grid_size}, wall_prob={config.wall_prob}, "
                    f"min_path_len={config.min_path_len})"
                )
            window_accepted = 0
    log.info("generated %d instances in %d attempts", wanted, attempt)
    return instances


def build_dataset(config: DatasetConfig, path) -> MazeDataset:
    dataset = MazeDataset(generate_instances(config), config.train_count, config.grid_size)
    write_dataset(path, dataset)
    return dataset


def _pack(mask: np.ndarray) -> bytes:
    return np.packbits(mask.astype(bool).ravel()).tobytes()


def _cell_mask(cell: Cell, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[cell] = True
    return mask


def write_dataset(path, dataset: MazeDataset) -> None:
    n = dataset.grid_size
    chunks = [_HEADER.pack(MAGIC, VERSION, n, n, len(dataset), dataset.split)]
    for inst in dataset.instances:
        if inst.shape != (n, n):
            raise ValueError(f"instance shape {inst.shape} does not match grid {n}")
        chunks.append(_pack(inst.walls))
        chunks.append(_pack(_cell_mask(inst.start, inst.shape)))
        chunks.append(_pack(_cell_mask(inst.goal, inst.shape)))
        chunks.append(_pack(inst.path_mask))
    Path(path).write_bytes(b"".join(chunks))


def _single_cell(mask: np.ndarray, what: str, index: int) -> Cell:
    hits = np.argwhere(mask)
    if len(hits) != 1:
        raise DatasetFormatError(f"sample {index}: {what} mask has {len(hits)} set cells, expected 1")
    return Cell(int(hits[0][0]), int(hits[0][1]))


def read_dataset(path) -> MazeDataset:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DatasetFormatError("file too short for a GPLN header")
    magic, version, h, w, count, split = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported GPLN version {version}")
    if h != w:
        raise DatasetFormatError(f"non-square grids are not supported ({h}x{w})")
    if split > count:
        raise DatasetFormatError(f"split {split} exceeds sample count {count}")
    cells = h * w
    mask_bytes = (cells + 7) // 8
    expected = _HEADER.size + count * 4 * mask_bytes
    if len(blob) != expected:
        raise DatasetFormatError(f"expected {expected} bytes, found {len(blob)}")
    raw = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size).reshape(count, 4, mask_bytes)
    masks = np.unpackbits(raw, axis=-1, count=cells).astype(bool).reshape(count, 4, h, w)
    instances = []
    for i, (walls, start, goal, path_mask) in enumerate(masks):
        instances.append(
            MazeInstance(
                walls.copy(),
                _single_cell(start, "start", i),
                _single_cell(goal, "goal", i),
                path_mask.copy(),
            )
        )
    return MazeDataset(instances, split, h)


def encode_condition(instance: MazeInstance) -> np.ndarray:
    """Stack walls, start and goal into a ``(3, H, W)`` float32 array."""
    cond = np.zeros((3, *instance.shape), dtype=np.float32)
    cond[0] = instance.walls
    cond[1][instance.start] = 1.0
    cond[2][instance.goal] = 1.0
    return cond


def decode_condition(cond: np.ndarray) -> tuple[np.ndarray, Cell, Cell]:
    walls = cond[0] > 0.5
    start = _single_cell(cond[1] > 0.5, "start", 0)
    goal = _single_cell(cond[2] > 0.5, "goal", 0)
    return walls, start, goal


def encode_path_target(instance: MazeInstance) -> np.ndarray:
    """Path cells map to +1, everything else to -1."""
    return np.where(instance.path_mask, 1.0, -1.0).astype(np.float32)


def stack_conditions(instances: list[MazeInstance]) -> np.ndarray:
    return np.stack([encode_condition(inst) for inst in instances])


def stack_targets(instances: list[MazeInstance]) -> np.ndarray:
    """``(N, 1, H, W)`` clean targets."""
    return np.stack([encode_path_target(inst) for inst in instances])[:, None]
