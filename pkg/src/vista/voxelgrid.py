"""Robot-centered voxel map.

Voxels are classified unobserved / free / occupied. Occupied voxels carry
a semantic relevancy scalar, a color, and the set of directions from
which sensor rays have hit them. Rendering, free-space carving, and
view-direction recording all ride on the same compiled grid traversal.

The grid is a single-writer structure: integrate / carve / record /
recenter mutate it in place, while render() and traverse() only read.
snapshot() produces an independent copy for concurrent scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import _kernels
from .codebook import CODEBOOK, MASK_WORDS, ViewDirectionSet
from .geometry import CameraIntrinsics, CameraPose, Ray, camera_ray_directions

UNOBSERVED = _kernels.UNOBSERVED
FREE = _kernels.FREE
OCCUPIED = _kernels.OCCUPIED

#: Depth value written for pixels whose ray leaves the grid or runs out of
#: draw distance. Valid depths are always >= 0.
DEPTH_SENTINEL = -1.0

RENDER_CHANNELS = ("depth", "semantic", "gain", "color")


class TraversalCause(IntEnum):
    HIT_OCCUPIED = _kernels.HIT_OCCUPIED
    HIT_UNOBSERVED = _kernels.HIT_UNOBSERVED
    EXITED_GRID = _kernels.EXITED_GRID
    MAX_RANGE = _kernels.MAX_RANGE


@dataclass
class TraversalResult:
    """Ordered cells a ray visited, plus why it stopped."""

    indices: np.ndarray          # (n, 3) int64
    cause: TraversalCause
    t_hit: float                 # entry t of the terminal voxel, -1 if none

    def __len__(self):
        return self.indices.shape[0]


@dataclass
class SemanticPointCloud:
    """Points with colors in [0,1] and unit-norm semantic embeddings."""

    points: np.ndarray       # (n, 3) meters
    colors: np.ndarray       # (n, 3) in [0, 1]
    embeddings: np.ndarray   # (n, l) unit vectors

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings,
                                                   dtype=float))
        n = self.points.shape[0]
        if self.colors.shape[0] != n or self.embeddings.shape[0] != n:
            raise ValueError("points, colors, embeddings must be parallel")
        if n:
            norms = np.linalg.norm(self.embeddings, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("embeddings must be unit-norm")

    def __len__(self):
        return self.points.shape[0]


class VoxelGrid:
    """Fixed-size voxel window centered on the robot."""

    def __init__(self, center, resolution: float = 0.25,
                 dims=(80, 80, 16), store_exact_directions: bool = False):
        self.center = np.asarray(center, dtype=float).reshape(3)
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in self.dims):
            raise ValueError("grid dims must be >= 1")
        nx, ny, nz = self.dims
        self.state = np.zeros((nx, ny, nz), dtype=np.uint8)
        self.semantic = np.zeros((nx, ny, nz), dtype=np.float64)
        self.color = np.zeros((nx, ny, nz, 3), dtype=np.float32)
        self.dir_mask = np.zeros((nx, ny, nz, MASK_WORDS), dtype=np.uint64)
        self.store_exact_directions = bool(store_exact_directions)
        # exact-mode oracle storage: (i, j, k) -> list of raw unit vectors
        self.exact_dirs: dict = {} if store_exact_directions else None

    # ---- geometry helpers -------------------------------------------------

    @property
    def origin(self) -> np.ndarray:
        """World coordinates of the grid's minimum corner."""
        return self.center - 0.5 * self.resolution * np.array(self.dims)

    @property
    def extent(self) -> np.ndarray:
        return self.resolution * np.array(self.dims, dtype=float)

    def world_to_index(self, points: np.ndarray):
        """Map world points to voxel indices. Returns (idx, in_bounds)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (pts - self.origin) / self.resolution
        idx = np.floor(rel).astype(np.int64)
        dims = np.array(self.dims)
        inb = np.all((idx >= 0) & (idx < dims), axis=1)
        return idx, inb

    def index_to_center(self, idx: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(idx))
        return self.origin + (idx + 0.5) * self.resolution

    def band_indices(self, z_lo: float, z_hi: float):
        """Voxel layer range [k0, k1) covering the vertical band."""
        if z_hi <= z_lo:
            raise ValueError("empty z band: z_lo must be < z_hi")
        oz = self.origin[2]
        k0 = int(math.floor((z_lo - oz) / self.resolution))
        k1 = int(math.ceil((z_hi - oz) / self.resolution))
        k0 = max(k0, 0)
        k1 = min(k1, self.dims[2])
        if k1 <= k0:
            raise ValueError("z band does not intersect the grid")
        return k0, k1

    # ---- state queries ----------------------------------------------------

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.state == OCCUPIED)

    def observed_count(self) -> int:
        return int(np.count_nonzero(self.state != UNOBSERVED))

    def band_unobserved_fraction(self, z_lo: float, z_hi: float) -> float:
        k0, k1 = self.band_indices(z_lo, z_hi)
        band = self.state[:, :, k0:k1]
        return float(np.count_nonzero(band == UNOBSERVED) / band.size)

    def view_directions(self, idx) -> ViewDirectionSet:
        """Direction set of one voxel (exact if the grid stores exact)."""
        i, j, k = (int(v) for v in idx)
        if self.store_exact_directions:
            s = ViewDirectionSet(exact=True)
            for d in self.exact_dirs.get((i, j, k), []):
                s.add(d)
            return s
        return ViewDirectionSet.from_mask(self.dir_mask[i, j, k])

    def snapshot(self) -> "VoxelGrid":
        """Independent copy for read-only use while the original updates."""
        g = VoxelGrid.__new__(VoxelGrid)
        g.center = self.center.copy()
        g.resolution = self.resolution
        g.dims = self.dims
        g.state = self.state.copy()
        g.semantic = self.semantic.copy()
        g.color = self.color.copy()
        g.dir_mask = self.dir_mask.copy()
        g.store_exact_directions = self.store_exact_directions
        g.exact_dirs = (None if self.exact_dirs is None
                        else {k: list(v) for k, v in self.exact_dirs.items()})
        return g

    # ---- mutations ---------------------------------------------------------

    def integrate_point_cloud(self, cloud: SemanticPointCloud,
                              query_embedding: np.ndarray) -> None:
        """Register a semantic point cloud into occupied voxels.

        Each in-bounds point marks its voxel occupied. The voxel semantic
        value is the max over contributing points of the normalized
        similarity (cos + 1) / 2 to the query; color is last-writer.
        """
        q = np.asarray(query_embedding, dtype=float).ravel()
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("query embedding must be unit-norm")
        if len(cloud) == 0:
            return
        if cloud.embeddings.shape[1] != q.shape[0]:
            raise ValueError(
                "embedding dimension mismatch: cloud has %d, query has %d"
                % (cloud.embeddings.shape[1], q.shape[0]))
        idx, inb = self.world_to_index(cloud.points)
        if not np.any(inb):
            return
        idx = idx[inb]
        sims = np.clip((cloud.embeddings[inb] @ q + 1.0) * 0.5, 0.0, 1.0)
        flat = (idx[:, 0] * self.dims[1] + idx[:, 1]) * self.dims[2] + idx[:, 2]
        self.state.reshape(-1)[flat] = OCCUPIED
        np.maximum.at(self.semantic.reshape(-1), flat, sims)
        self.color.reshape(-1, 3)[flat] = cloud.colors[inb]

    def carve_free_space(self, pose: CameraPose,
                         intrinsics: CameraIntrinsics,
                         depth: np.ndarray) -> None:
        """Mark voxels seen through by the depth image as free.

        Each pixel ray is capped at its measured depth; sentinel (no-hit)
        pixels carve out to the sensor max range. Occupied voxels are
        never demoted and terminal voxels are left untouched.
        """
        depth = np.asarray(depth, dtype=float)
        if depth.shape != (intrinsics.height, intrinsics.width):
            raise ValueError("depth image shape does not match intrinsics")
        dirs = camera_ray_directions(pose, intrinsics)
        ranges = depth.reshape(-1).copy()
        ranges[ranges < 0] = intrinsics.max_range
        np.minimum(ranges, intrinsics.max_range, out=ranges)
        _kernels.carve_kernel(self.state, self.origin, self.resolution,
                              pose.position, dirs, ranges)

    def record_view_directions(self, pose: CameraPose,
                               intrinsics: CameraIntrinsics) -> None:
        """Store the ray direction in every occupied voxel hit by a pixel ray."""
        dirs = camera_ray_directions(pose, intrinsics)
        hits = np.empty((dirs.shape[0], 3), dtype=np.int64)
        _kernels.record_kernel(self.state, self.dir_mask, self.origin,
                               self.resolution, pose.position, dirs,
                               intrinsics.max_range, hits)
        if self.store_exact_directions:
            hit = hits[:, 0] >= 0
            for (i, j, k), d in zip(hits[hit], dirs[hit]):
                self.exact_dirs.setdefault((int(i), int(j), int(k)),
                                           []).append(d.copy())

    def recenter(self, new_center) -> None:
        """Scroll the window by the whole-voxel shift nearest the request.

        Attributes survive in the overlap; voxels entering the window are
        unobserved, voxels leaving it are discarded.
        """
        new_center = np.asarray(new_center, dtype=float).reshape(3)
        shift = np.rint((new_center - self.center)
                        / self.resolution).astype(int)
        if not np.any(shift):
            return
        self.center = self.center + shift * self.resolution
        slabs = []
        for ax, s in enumerate(shift):
            n = self.dims[ax]
            dst = slice(max(0, -s), min(n, n - s))
            src = slice(max(0, s), min(n, n + s))
            if dst.stop <= dst.start:
                slabs = None
                break
            slabs.append((dst, src))
        for name in ("state", "semantic", "color", "dir_mask"):
            old = getattr(self, name)
            new = np.zeros_like(old)
            if slabs is not None:
                (dx, sx), (dy, sy), (dz, sz) = slabs
                new[dx, dy, dz] = old[sx, sy, sz]
            setattr(self, name, new)
        if self.store_exact_directions:
            moved = {}
            for (i, j, k), dirs in self.exact_dirs.items():
                ni, nj, nk = i - shift[0], j - shift[1], k - shift[2]
                if (0 <= ni < self.dims[0] and 0 <= nj < self.dims[1]
                        and 0 <= nk < self.dims[2]):
                    moved[(ni, nj, nk)] = dirs
            self.exact_dirs = moved

    # ---- rendering ----------------------------------------------------------

    def render(self, pose: CameraPose, intrinsics: CameraIntrinsics,
               channel: str) -> np.ndarray:
        """Render one channel by grid traversal from the given pose.

        depth: entry range of the terminal voxel, DEPTH_SENTINEL when the
        ray exits the grid or runs out of draw distance. semantic: terminal
        voxel value for occupied hits, 0 otherwise. gain: view-diversity
        gain for occupied hits (1 when the voxel has no recorded views),
        exactly 1 for unobserved hits, 0 for no hit. color: (H, W, 3).
        """
        if channel not in RENDER_CHANNELS:
            raise ValueError("unknown render channel: %r" % (channel,))
        depth, sem, gain, color, _ = self.render_all(pose, intrinsics)
        if channel == "depth":
            return depth
        if channel == "semantic":
            return sem
        if channel == "gain":
            return gain
        return color

    def render_all(self, pose: CameraPose, intrinsics: CameraIntrinsics):
        """All channels in one traversal pass.

        Returns (depth, semantic, gain, color, term) where term is
        (H*W, 4): cause and last-visited cell per pixel.
        """
        dirs = camera_ray_directions(pose, intrinsics)
        n = dirs.shape[0]
        depth = np.empty(n)
        sem = np.empty(n)
        gain = np.empty(n)
        color = np.empty((n, 3))
        term = np.empty((n, 4), dtype=np.int64)
        if self.store_exact_directions:
            self._render_exact(pose, dirs, intrinsics.max_range, depth, sem,
                               gain, color, term)
        else:
            _kernels.render_kernel(self.state, self.semantic, self.color,
                                   self.dir_mask, CODEBOOK, self.origin,
                                   self.resolution, pose.position, dirs,
                                   intrinsics.max_range, depth, sem, gain,
                                   color, term)
        h, w = intrinsics.height, intrinsics.width
        return (depth.reshape(h, w), sem.reshape(h, w), gain.reshape(h, w),
                color.reshape(h, w, 3), term)

    def _render_exact(self, pose, dirs, max_range, depth, sem, gain, color,
                      term):
        """Reference render path scoring gain against raw stored directions."""
        buf = np.empty((sum(self.dims) + 8, 3), dtype=np.int64)
        for r in range(dirs.shape[0]):
            count, cause, t_hit = _kernels.traverse_fill(
                pose.position, dirs[r], max_range, self.state, self.origin,
                self.resolution, True, buf)
            if count:
                ix, iy, iz = buf[count - 1]
            else:
                ix = iy = iz = -1
            term[r] = (cause, ix, iy, iz)
            if cause == _kernels.HIT_OCCUPIED:
                depth[r] = t_hit
                sem[r] = self.semantic[ix, iy, iz]
                color[r] = self.color[ix, iy, iz]
                stored = self.exact_dirs.get((int(ix), int(iy), int(iz)))
                if stored:
                    dots = np.array(stored) @ dirs[r]
                    gain[r] = (1.0 - dots.max()) * 0.5
                else:
                    gain[r] = 1.0
            elif cause == _kernels.HIT_UNOBSERVED:
                depth[r] = t_hit
                sem[r] = 0.0
                gain[r] = 1.0
                color[r] = 0.0
            else:
                depth[r] = DEPTH_SENTINEL
                sem[r] = 0.0
                gain[r] = 0.0
                color[r] = 0.0


def traverse(ray: Ray, grid: VoxelGrid,
             stop_at_unobserved: bool = True) -> TraversalResult:
    """Enumerate the voxels a ray passes through, in order of increasing t.

    Terminates at the first occupied voxel, at the first unobserved voxel
    when stop_at_unobserved is set (rendering mode; carving mode passes
    through), at grid exit, or at the ray's draw distance. The terminal
    voxel is included.
    """
    buf = np.empty((sum(grid.dims) + 8, 3), dtype=np.int64)
    count, cause, t_hit = _kernels.traverse_fill(
        ray.origin, ray.direction, ray.max_range, grid.state, grid.origin,
        grid.resolution, stop_at_unobserved, buf)
    return TraversalResult(indices=buf[:count].copy(),
                           cause=TraversalCause(cause), t_hit=t_hit)
