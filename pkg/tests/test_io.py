import numpy as np
import pytest

from vista import OCCUPIED, VoxelGrid
from vista.io import (canonical_json, grid_to_ply, load_grid_npz, read_pgm,
                      read_ply, save_grid_npz, write_depth_pgm, write_ply,
                      write_scaled_pgm)


def small_grid():
    g = VoxelGrid(center=(2, 2, 2), resolution=1.0, dims=(4, 4, 4))
    g.state[1, 2, 3] = OCCUPIED
    g.semantic[1, 2, 3] = 0.75
    g.color[1, 2, 3] = [1.0, 0.5, 0.0]
    return g


class TestPly:
    def test_single_voxel_grid_exports_one_vertex(self, tmp_path):
        path = tmp_path / "map.ply"
        grid_to_ply(small_grid(), path)
        text = path.read_text()
        assert "element vertex 1" in text
        pts, cols, sem = read_ply(path)
        assert pts.shape == (1, 3)
        assert np.allclose(pts[0], [1.5, 2.5, 3.5])
        assert sem[0] == pytest.approx(0.75, abs=1e-6)

    def test_round_trip_preserves_occupied_set(self, tmp_path):
        rng = np.random.default_rng(0)
        g = VoxelGrid(center=(4, 4, 4), resolution=0.5, dims=(16, 16, 16))
        mask = rng.random(g.dims) < 0.1
        g.state[mask] = OCCUPIED
        g.semantic[mask] = rng.random(int(mask.sum()))
        path = tmp_path / "map.ply"
        grid_to_ply(g, path)
        pts, cols, sem = read_ply(path)
        # re-voxelize the vertices: the occupied set must be identical
        idx, inb = g.world_to_index(pts)
        assert inb.all()
        got = {tuple(i) for i in idx}
        expect = {tuple(i) for i in np.argwhere(mask)}
        assert got == expect

    def test_write_read_values(self, tmp_path):
        path = tmp_path / "cloud.ply"
        write_ply(path, [[0.5, 1.0, -2.0]], [[0.0, 0.5, 1.0]], [0.25])
        pts, cols, sem = read_ply(path)
        assert np.allclose(pts[0], [0.5, 1.0, -2.0], atol=1e-6)
        assert np.allclose(cols[0], [0.0, 0.498, 1.0], atol=0.01)
        assert sem[0] == pytest.approx(0.25, abs=1e-6)

    def test_rejects_non_ply(self, tmp_path):
        path = tmp_path / "not.ply"
        path.write_text("hello\n")
        with pytest.raises(ValueError):
            read_ply(path)


class TestPgm:
    def test_depth_pgm_is_16bit_millimeters(self, tmp_path):
        path = tmp_path / "depth.pgm"
        depth = np.array([[1.234, -1.0], [0.0005, 70.0]])
        write_depth_pgm(path, depth)
        img = read_pgm(path)
        assert img.dtype.str == ">u2"
        assert img[0, 0] == 1234
        assert img[0, 1] == 0          # sentinel encodes as 0
        assert img[1, 0] == 0          # sub-millimeter rounds down
        assert img[1, 1] == 65535      # clamped
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n65535\n")

    def test_all_sentinel_depth_renders_zero_image(self, tmp_path):
        path = tmp_path / "empty.pgm"
        write_depth_pgm(path, np.full((3, 5), -1.0))
        assert np.all(read_pgm(path) == 0)

    def test_scaled_pgm_is_8bit(self, tmp_path):
        path = tmp_path / "gain.pgm"
        write_scaled_pgm(path, np.array([[0.0, 0.5], [1.0, 2.0]]))
        img = read_pgm(path)
        assert img.dtype == np.uint8
        assert img[0, 0] == 0
        assert img[0, 1] == 128
        assert img[1, 0] == 255
        assert img[1, 1] == 255  # clamped


class TestGridSnapshot:
    def test_npz_round_trip(self, tmp_path):
        g = small_grid()
        g.dir_mask[1, 2, 3, 0] = np.uint64(17)
        path = tmp_path / "grid.npz"
        save_grid_npz(g, path)
        loaded = load_grid_npz(path)
        assert np.array_equal(loaded.state, g.state)
        assert np.array_equal(loaded.semantic, g.semantic)
        assert np.array_equal(loaded.dir_mask, g.dir_mask)
        assert np.allclose(loaded.center, g.center)
        assert loaded.resolution == g.resolution


def test_canonical_json_is_stable():
    a = canonical_json({"b": 1.5, "a": [1, 2, {"z": None}]})
    b = canonical_json({"a": [1, 2, {"z": None}], "b": 1.5})
    assert a == b
