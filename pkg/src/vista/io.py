"""File formats: PLY point clouds, PGM images, grid snapshots, JSON logs.

Formats are bit-documented in docs/formats.md. PLY is ASCII with one
vertex per occupied voxel center carrying color and the semantic scalar.
Depth PGM is 16-bit big-endian millimeters with 0 encoding no return;
gain/semantic PGM is 8-bit with [0, 1] scaled to 0..255.
"""

from __future__ import annotations

import json

import numpy as np

from .voxelgrid import OCCUPIED, VoxelGrid

PLY_HEADER = """ply
format ascii 1.0
element vertex {count}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
property float semantic_value
end_header
"""


def write_ply(path, points, colors, semantic) -> None:
    """ASCII PLY with per-vertex color and semantic scalar."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    colors = np.asarray(colors, dtype=float).reshape(-1, 3)
    semantic = np.asarray(semantic, dtype=float).reshape(-1)
    rgb = np.clip(np.rint(colors * 255.0), 0, 255).astype(int)
    with open(path, "w") as f:
        f.write(PLY_HEADER.format(count=points.shape[0]))
        for p, c, s in zip(points, rgb, semantic):
            f.write("%.6f %.6f %.6f %d %d %d %.6f\n"
                    % (p[0], p[1], p[2], c[0], c[1], c[2], s))


def read_ply(path):
    """Read the PLY dialect written by write_ply.

    Returns (points, colors in [0, 1], semantic).
    """
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError("not a PLY file")
        count = None
        while True:
            line = f.readline()
            if not line:
                raise ValueError("truncated PLY header")
            line = line.strip()
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
            if line == "end_header":
                break
        if count is None:
            raise ValueError("PLY header lacks a vertex element")
        pts = np.empty((count, 3))
        cols = np.empty((count, 3))
        sem = np.empty(count)
        for i in range(count):
            vals = f.readline().split()
            pts[i] = [float(v) for v in vals[0:3]]
            cols[i] = [int(v) / 255.0 for v in vals[3:6]]
            sem[i] = float(vals[6])
    return pts, cols, sem


def grid_to_ply(grid: VoxelGrid, path) -> None:
    """Export occupied voxel centers with color and semantic value."""
    idx = grid.occupied_indices()
    points = grid.index_to_center(idx) if idx.size else np.zeros((0, 3))
    colors = (grid.color[idx[:, 0], idx[:, 1], idx[:, 2]]
              if idx.size else np.zeros((0, 3)))
    semantic = (grid.semantic[idx[:, 0], idx[:, 1], idx[:, 2]]
                if idx.size else np.zeros(0))
    write_ply(path, points, colors, semantic)


def write_depth_pgm(path, depth) -> None:
    """16-bit big-endian PGM in millimeters; no-return pixels encode 0."""
    depth = np.asarray(depth, dtype=float)
    mm = np.where(depth < 0, 0.0, np.clip(depth * 1000.0, 0.0, 65535.0))
    data = np.rint(mm).astype(">u2")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (depth.shape[1], depth.shape[0]))
        f.write(data.tobytes())


def write_scaled_pgm(path, image) -> None:
    """8-bit PGM; values in [0, 1] scale to 0..255."""
    img = np.asarray(image, dtype=float)
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM written by either writer above."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM")
        dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        dtype = ">u2" if maxval > 255 else np.uint8
        data = np.frombuffer(f.read(), dtype=dtype)
    return data.reshape(height, width)


def save_grid_npz(grid: VoxelGrid, path) -> None:
    """Grid snapshot: states, semantics, colors, direction masks, metadata."""
    np.savez_compressed(
        path, state=grid.state, semantic=grid.semantic, color=grid.color,
        dir_mask=grid.dir_mask, center=grid.center,
        resolution=np.array(grid.resolution),
        dims=np.array(grid.dims, dtype=np.int64))


def load_grid_npz(path) -> VoxelGrid:
    with np.load(path) as data:
        grid = VoxelGrid(center=data["center"],
                         resolution=float(data["resolution"]),
                         dims=tuple(int(d) for d in data["dims"]))
        grid.state = data["state"].copy()
        grid.semantic = data["semantic"].copy()
        grid.color = data["color"].copy()
        grid.dir_mask = data["dir_mask"].copy()
    return grid


def canonical_json(obj) -> str:
    """Deterministic JSON serialization for logs and stdout."""
    return json.dumps(obj, sort_keys=True, indent=2)


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        f.write(canonical_json(obj))
        f.write("\n")
