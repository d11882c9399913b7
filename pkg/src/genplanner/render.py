"""Raster rendering of mazes and path masks (lossless PNG via Pillow)."""

from __future__ import annotations

from typing import Optional

import numpy as np
from PIL import Image

from .dataset import MazeInstance
from .maze import Cell

DEFAULT_SCALE = 12

WALL = (0, 0, 0)
FREE = (255, 255, 255)
PATH = (0, 200, 0)
# path cell drawn on top of a wall (generated masks only)
PATH_ON_WALL = (0, 90, 0)
START = (0, 0, 255)
GOAL = (255, 0, 0)


def render(instance: MazeInstance, mask: Optional[np.ndarray] = None, scale: int = DEFAULT_SCALE) -> Image.Image:
    """Draw walls, a path mask (ground truth when omitted), start and goal."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    mask = instance.path_mask if mask is None else np.asarray(mask, dtype=bool)
    rgb = np.empty((*instance.shape, 3), dtype=np.uint8)
    rgb[:] = FREE
    rgb[instance.walls] = WALL
    rgb[mask & ~instance.walls] = PATH
    rgb[mask & instance.walls] = PATH_ON_WALL
    rgb[tuple(instance.start)] = START
    rgb[tuple(instance.goal)] = GOAL
    big = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    return Image.fromarray(big, mode="RGB")


def decode(image: Image.Image, scale: int = DEFAULT_SCALE):
    """Inverse of :func:`render`: returns ``(walls, path_mask, start, goal)``.

    Start and goal cells are reported as path cells, matching how the ground
    truth stores them.
    """
    arr = np.asarray(image.convert("RGB"))
    centers = arr[scale // 2 :: scale, scale // 2 :: scale]

    def match(color):
        return np.all(centers == np.array(color, dtype=np.uint8), axis=-1)

    walls = match(WALL) | match(PATH_ON_WALL)
    start, goal = match(START), match(GOAL)
    path = match(PATH) | match(PATH_ON_WALL) | start | goal
    s, g = np.argwhere(start), np.argwhere(goal)
    if len(s) != 1 or len(g) != 1:
        raise ValueError("image does not contain exactly one start and one goal cell")
    return walls, path, Cell(*map(int, s[0])), Cell(*map(int, g[0]))


def save_png(image: Image.Image, path) -> None:
    image.save(path, format="PNG", optimize=False)
