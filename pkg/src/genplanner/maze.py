"""Grid primitives: random wall masks, endpoint sampling and shortest-path search.

Walls are stored as ``(H, W)`` boolean numpy arrays (``True`` = wall). Movement
is 4-connected with unit cost per edge.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import NamedTuple, Optional

import numpy as np

DEFAULT_WALL_PROB = 0.2

# N, S, W, E
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class Cell(NamedTuple):
    row: int
    col: int


class InfeasibleInstanceError(ValueError):
    """The maze cannot host a start/goal pair."""


def neighbors(cell: Cell, height: int, width: int):
    r, c = cell
    for dr, dc in MOVES:
        nr, nc = r + dr, c + dc
        if 0 <= nr < height and 0 <= nc < width:
            yield Cell(nr, nc)


def generate_walls(height: int, width: int, wall_prob: float = DEFAULT_WALL_PROB, seed=0) -> np.ndarray:
    """Draw an i.i.d. Bernoulli(``wall_prob``) wall mask."""
    if not 0.0 <= wall_prob <= 1.0:
        raise ValueError(f"wall_prob must lie in [0, 1], got {wall_prob}")
    if height < 2 or width < 2:
        raise ValueError(f"grid must be at least 2x2, got {height}x{width}")
    rng = np.random.default_rng(seed)
    return rng.random((height, width)) < wall_prob


def sample_endpoints(walls: np.ndarray, seed=0) -> tuple[Cell, Cell]:
    """Pick an ordered pair of distinct free cells uniformly at random."""
    free = np.flatnonzero(~walls.ravel())
    if free.size < 2:
        raise InfeasibleInstanceError(f"need at least 2 free cells, found {free.size}")
    rng = np.random.default_rng(seed)
    a, b = rng.choice(free, size=2, replace=False)
    width = walls.shape[1]
    return Cell(*divmod(int(a), width)), Cell(*divmod(int(b), width))


def _check_endpoints(walls: np.ndarray, start: Cell, goal: Cell) -> None:
    h, w = walls.shape
    for name, cell in (("start", start), ("goal", goal)):
        r, c = cell
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"{name} {tuple(cell)} outside {h}x{w} grid")
        if walls[r, c]:
            raise ValueError(f"{name} {tuple(cell)} lies on a wall")


def _trace(parent: dict, goal: Cell) -> list[Cell]:
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def astar_shortest_path(walls: np.ndarray, start, goal) -> Optional[list[Cell]]:
    """Shortest 4-connected path by A* with the Manhattan heuristic.

    Ties in the open list are broken by lower f, then lower g, then row-major
    cell index, so the returned path is deterministic. Returns ``None`` when
    the goal is unreachable.
    """
    start, goal = Cell(*start), Cell(*goal)
    _check_endpoints(walls, start, goal)
    h, w = walls.shape

    def heuristic(cell: Cell) -> int:
        return abs(cell.row - goal.row) + abs(cell.col - goal.col)

    g_score = {start: 0}
    parent: dict[Cell, Optional[Cell]] = {start: None}
    open_heap = [(heuristic(start), 0, start.row * w + start.col, start)]
    closed = set()
    while open_heap:
        _, g, _, cell = heapq.heappop(open_heap)
        if cell in closed:
            continue
        if cell == goal:
            return _trace(parent, goal)
        closed.add(cell)
        for nb in neighbors(cell, h, w):
            if walls[nb] or nb in closed:
                continue
            ng = g + 1
            if ng < g_score.get(nb, h * w + 1):
                g_score[nb] = ng
                parent[nb] = cell
                heapq.heappush(open_heap, (ng + heuristic(nb), ng, nb.row * w + nb.col, nb))
    return None


def bfs_shortest_path(walls: np.ndarray, start, goal) -> Optional[list[Cell]]:
    """Shortest 4-connected path by breadth-first search."""
    start, goal = Cell(*start), Cell(*goal)
    _check_endpoints(walls, start, goal)
    h, w = walls.shape
    parent: dict[Cell, Optional[Cell]] = {start: None}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        if cell == goal:
            return _trace(parent, goal)
        for nb in neighbors(cell, h, w):
            if not walls[nb] and nb not in parent:
                parent[nb] = cell
                queue.append(nb)
    return None


def path_length(path: list[Cell]) -> int:
    """Edge count of a cell path."""
    return len(path) - 1


def is_valid_path(walls: np.ndarray, path: list[Cell]) -> bool:
    """Check 4-adjacency of consecutive cells, wall-freeness and no repeats."""
    if not path:
        return False
    if len(set(path)) != len(path):
        return False
    for cell in path:
        if walls[cell]:
            return False
    for a, b in zip(path, path[1:]):
        if abs(a[0] - b[0]) + abs(a[1] - b[1]) != 1:
            return False
    return True


def path_to_mask(path: list[Cell], shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for r, c in path:
        mask[r, c] = True
    return mask
