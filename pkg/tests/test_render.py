import numpy as np
import pytest
from PIL import Image

from genplanner.dataset import DatasetConfig, MazeInstance, generate_instances
from genplanner.maze import Cell
from genplanner.render import decode, render, save_png


@pytest.fixture(scope="module")
def instances():
    return generate_instances(DatasetConfig(16, 30, 0, 3, 0.2, 4))


@pytest.mark.parametrize("scale", [1, 3, 12])
def test_ground_truth_roundtrip(tmp_path, instances, scale):
    for i, inst in enumerate(instances):
        path = tmp_path / f"{i}.png"
        save_png(render(inst, scale=scale), path)
        walls, mask, start, goal = decode(Image.open(path), scale)
        assert np.array_equal(walls, inst.walls)
        assert np.array_equal(mask, inst.path_mask)
        assert (start, goal) == (inst.start, inst.goal)


def test_generated_mask_roundtrip_including_wall_overlap(instances):
    rng = np.random.default_rng(0)
    for inst in instances[:10]:
        mask = rng.random(inst.shape) < 0.3
        walls, back, start, goal = decode(render(inst, mask, 5), 5)
        expected = mask.copy()
        expected[inst.start] = expected[inst.goal] = True
        assert np.array_equal(back, expected)
        assert np.array_equal(walls, inst.walls)


def test_image_size_and_palette():
    walls = np.zeros((4, 4), bool)
    walls[0, 3] = True
    path = np.zeros((4, 4), bool)
    path[0, :3] = True
    inst = MazeInstance(walls, Cell(0, 0), Cell(0, 2), path)
    img = render(inst, scale=12)
    assert img.size == (48, 48) and img.mode == "RGB"
    arr = np.asarray(img)
    assert tuple(arr[6, 6]) == (0, 0, 255)
    assert tuple(arr[6, 30]) == (255, 0, 0)
    assert tuple(arr[6, 18]) == (0, 200, 0)
    assert tuple(arr[6, 42]) == (0, 0, 0)
    assert tuple(arr[40, 40]) == (255, 255, 255)


def test_bad_scale(instances):
    with pytest.raises(ValueError):
        render(instances[0], scale=0)


def test_png_bytes_deterministic(tmp_path, instances):
    save_png(render(instances[0]), tmp_path / "a.png")
    save_png(render(instances[0]), tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
