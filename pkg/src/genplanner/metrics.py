"""Path-quality metrics on binary masks: validity, single-path, length ratio, branch rate."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .dataset import MazeInstance
from .maze import neighbors


def neighbor_counts(mask: np.ndarray) -> np.ndarray:
    """Number of in-mask 4-neighbors of every cell."""
    m = np.pad(mask.astype(np.int8), 1)
    return m[:-2, 1:-1] + m[2:, 1:-1] + m[1:-1, :-2] + m[1:-1, 2:]


def validity(mask: np.ndarray, instance: MazeInstance) -> bool:
    """Start and goal are in the mask and joined by a 4-connected route of free mask cells.

    Mask cells on walls are not rejected outright; they just cannot be traversed.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != instance.shape:
        raise ValueError(f"mask shape {mask.shape} != maze shape {instance.shape}")
    usable = mask & ~instance.walls
    start, goal = tuple(instance.start), tuple(instance.goal)
    if not (usable[start] and usable[goal]):
        return False
    h, w = mask.shape
    seen = {start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            return True
        for nb in neighbors(cell, h, w):
            nb = tuple(nb)
            if usable[nb] and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return False


def branch_rate(mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    total = int(mask.sum())
    if total == 0:
        return 0.0
    return int(((neighbor_counts(mask) >= 3) & mask).sum()) / total


def count_endpoints(mask: np.ndarray) -> int:
    """Mask cells with exactly one in-mask neighbor (isolated cells do not count)."""
    mask = np.asarray(mask, dtype=bool)
    return int(((neighbor_counts(mask) == 1) & mask).sum())


def is_connected(mask: np.ndarray) -> bool:
    """All mask cells form one 4-connected component (an empty mask counts as connected)."""
    mask = np.asarray(mask, dtype=bool)
    cells = np.argwhere(mask)
    if len(cells) == 0:
        return True
    h, w = mask.shape
    first = tuple(int(v) for v in cells[0])
    seen = {first}
    queue = deque([first])
    while queue:
        for nb in neighbors(queue.popleft(), h, w):
            nb = tuple(nb)
            if mask[nb] and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(cells)


def _single(mask: np.ndarray, valid: bool, rate: float) -> bool:
    # an isolated stray cell is not an endpoint, so connectivity is checked separately
    return valid and rate == 0.0 and count_endpoints(mask) == 2 and is_connected(mask)


def single_path(mask: np.ndarray, instance: MazeInstance) -> bool:
    """Valid, branch-free, exactly two endpoints and no detached fragments."""
    return _single(mask, validity(mask, instance), branch_rate(mask))


def length_ratio(mask: np.ndarray, instance: MazeInstance) -> Optional[float]:
    """Generated cell count over the optimal path's cell count; ``None`` for invalid masks."""
    if not validity(mask, instance):
        return None
    return float(np.asarray(mask, dtype=bool).sum()) / instance.path_cells


@dataclass
class MetricRow:
    validity: float
    single_path: float
    length_ratio: Optional[float]
    branch_rate: float

    def as_percent(self) -> dict:
        """Fractions as percentages with two decimals; length ratio as-is (or None)."""
        return {
            "validity": round(100 * self.validity, 2),
            "single_path": round(100 * self.single_path, 2),
            "length_ratio": None if self.length_ratio is None else round(self.length_ratio, 2),
            "branch_rate": round(100 * self.branch_rate, 2),
        }


def sample_metrics(mask: np.ndarray, instance: MazeInstance) -> dict:
    valid = validity(mask, instance)
    rate = branch_rate(mask)
    return {
        "validity": valid,
        "single_path": _single(mask, valid, rate),
        "length_ratio": float(np.asarray(mask, bool).sum()) / instance.path_cells if valid else None,
        "branch_rate": rate,
        "path_cells": int(np.asarray(mask, bool).sum()),
    }


def aggregate(records: list[dict]) -> MetricRow:
    """Means over samples; the length ratio only over valid samples (``None`` if there are none)."""
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    # fsum is exactly rounded, so aggregates do not depend on record order
    def mean(values):
        return math.fsum(values) / len(values)

    ratios = [r["length_ratio"] for r in records if r["length_ratio"] is not None]
    return MetricRow(
        validity=mean([float(r["validity"]) for r in records]),
        single_path=mean([float(r["single_path"]) for r in records]),
        length_ratio=mean(ratios) if ratios else None,
        branch_rate=mean([r["branch_rate"] for r in records]),
    )


def row_dict(row: MetricRow) -> dict:
    return asdict(row)
