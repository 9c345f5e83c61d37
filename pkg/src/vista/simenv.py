"""Deterministic synthetic environment.

A scene is a dense ground-truth occupancy grid (finer than the mapping
grid), colored surfaces, and a set of named spherical objects carrying
unit semantic embeddings. The simulated RGB-D sensor ray-casts the
ground truth and emits a semantic point cloud; embeddings are assigned by
proximity to the objects so the query object scores cosine similarity 1
and everything else scores 0 against the query. A referee with access to
the ground truth adjudicates task success.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import (CameraIntrinsics, CameraPose, ControlLimits,
                       PlannerState, camera_ray_directions, project_point,
                       wrap_angle)
from .voxelgrid import SemanticPointCloud

DEFAULT_EMBEDDING_DIM = 8


@dataclass
class SceneObject:
    name: str
    center: np.ndarray
    radius: float
    color: np.ndarray
    embedding: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.color = np.asarray(self.color, dtype=float).reshape(3)
        self.embedding = np.asarray(self.embedding, dtype=float).ravel()
        n = np.linalg.norm(self.embedding)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("object embedding must be unit-norm")
        if self.radius <= 0:
            raise ValueError("object radius must be positive")


class SceneError(ValueError):
    """Malformed scene description."""


class GroundTruthScene:
    """Immutable world model: geometry, semantics, start state, and query."""

    def __init__(self, extents, resolution, occupancy, color_grid, objects,
                 start: PlannerState, query: str | None, flight_z: float,
                 background_embedding, name: str = "scene", spec=None):
        self.extents = np.asarray(extents, dtype=float).reshape(3)
        self.resolution = float(resolution)
        self.occupancy = occupancy
        self.color_grid = color_grid
        self.objects = list(objects)
        self.start = start
        self.query = query
        self.flight_z = float(flight_z)
        self.background_embedding = np.asarray(background_embedding,
                                               dtype=float).ravel()
        self.name = name
        self.spec = spec
        self.origin = np.zeros(3)
        self._blocked2d_cache: dict = {}
        if query is not None and self.query_object is None:
            raise SceneError("query %r names no object in the scene" % query)
        for obj in self.objects:
            if np.any(obj.center < 0) or np.any(obj.center > self.extents):
                raise SceneError("object %r lies outside the scene bounds"
                                 % obj.name)
        si, sj = (int(start.x / self.resolution),
                  int(start.y / self.resolution))
        blocked = self.blocked_2d(self.flight_z)
        if not (0 <= si < blocked.shape[0] and 0 <= sj < blocked.shape[1]):
            raise SceneError("start state lies outside the scene bounds")
        if blocked[si, sj]:
            raise SceneError("start cell is occupied in the ground truth")

    # ---- queries -----------------------------------------------------------

    @property
    def query_object(self) -> SceneObject | None:
        if self.query is None:
            return None
        for obj in self.objects:
            if obj.name == self.query:
                return obj
        return None

    def with_query(self, query: str | None) -> "GroundTruthScene":
        """Same world, different search query."""
        return GroundTruthScene(
            extents=self.extents, resolution=self.resolution,
            occupancy=self.occupancy, color_grid=self.color_grid,
            objects=self.objects, start=self.start, query=query,
            flight_z=self.flight_z,
            background_embedding=self.background_embedding, name=self.name,
            spec=self.spec)

    @property
    def query_embedding(self) -> np.ndarray:
        obj = self.query_object
        return obj.embedding if obj is not None else self.background_embedding

    def contains_position(self, position) -> bool:
        p = np.asarray(position, dtype=float).reshape(3)
        return bool(np.all(p >= 0) and np.all(p <= self.extents))

    def blocked_2d(self, z: float, half_height: float | None = None
                   ) -> np.ndarray:
        """Occupancy of the horizontal slab around altitude z."""
        hh = self.resolution if half_height is None else half_height
        key = (round(z, 6), round(hh, 6))
        cached = self._blocked2d_cache.get(key)
        if cached is None:
            nz = self.occupancy.shape[2]
            k0 = max(0, int(math.floor((z - hh) / self.resolution)))
            k1 = min(nz, int(math.ceil((z + hh) / self.resolution)))
            if k1 <= k0:
                k0, k1 = max(0, min(k0, nz - 1)), max(1, min(k0 + 1, nz))
            cached = self.occupancy[:, :, k0:k1].any(axis=2)
            self._blocked2d_cache[key] = cached
        return cached

    def object_visible_from(self, position, obj: SceneObject) -> bool:
        """Ground-truth line of sight from a point to the object center."""
        p0 = np.asarray(position, dtype=float).reshape(3)
        hit, _, ix, iy, iz = _kernels.segment_first_hit(
            self.occupancy, self.origin, self.resolution, p0, obj.center)
        if not hit:
            return True
        cell_center = (np.array([ix, iy, iz]) + 0.5) * self.resolution
        slack = self.resolution * math.sqrt(3.0) / 2.0
        return bool(np.linalg.norm(cell_center - obj.center)
                    <= obj.radius + slack)

    def shortest_path_length(self, goal_xy, d_succ: float,
                             start_xy=None) -> float:
        """Ground-truth shortest path (meters) from the start to within
        d_succ of the goal point, 8-connected at ground-truth resolution.

        Returns inf when the goal region is unreachable.
        """
        blocked = self.blocked_2d(self.flight_z)
        nx, ny = blocked.shape
        res = self.resolution
        sxy = (np.array([self.start.x, self.start.y])
               if start_xy is None else np.asarray(start_xy, dtype=float))
        si, sj = int(sxy[0] / res), int(sxy[1] / res)
        if blocked[si, sj]:
            raise SceneError("start cell is occupied")
        goal = np.asarray(goal_xy, dtype=float).reshape(2)
        cost = np.full((nx, ny), np.inf)
        cost[si, sj] = 0.0
        heap = [(0.0, si, sj)]
        sqrt2 = math.sqrt(2.0)
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        centers_x = (ii + 0.5) * res
        centers_y = (jj + 0.5) * res
        goal_mask = ((centers_x - goal[0]) ** 2 + (centers_y - goal[1]) ** 2
                     <= d_succ * d_succ) & ~blocked
        best = np.inf
        while heap:
            c, i, j = heapq.heappop(heap)
            if c > cost[i, j]:
                continue
            if goal_mask[i, j]:
                best = c
                break
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    a, b = i + di, j + dj
                    if not (0 <= a < nx and 0 <= b < ny) or blocked[a, b]:
                        continue
                    nc = c + (sqrt2 if di and dj else 1.0)
                    if nc < cost[a, b]:
                        cost[a, b] = nc
                        heapq.heappush(heap, (nc, a, b))
        return best * res


class SensorModel:
    """Simulated RGB-D sensor: intrinsics plus noise and dropout models."""

    def __init__(self, intrinsics: CameraIntrinsics, depth_sigma: float = 0.0,
                 drop_rate: float = 0.0, rng=None):
        if depth_sigma < 0:
            raise ValueError("depth noise sigma must be >= 0")
        if not (0.0 <= drop_rate < 1.0):
            raise ValueError("point drop rate must be in [0, 1)")
        self.intrinsics = intrinsics
        self.depth_sigma = float(depth_sigma)
        self.drop_rate = float(drop_rate)
        self.rng = (rng if isinstance(rng, np.random.Generator)
                    else np.random.default_rng(rng))


@dataclass
class EpisodeClock:
    """Simulation time with a fixed step and a hard budget."""

    dt: float
    max_duration: float
    time: float = 0.0

    def tick(self) -> float:
        self.time += self.dt
        return self.time

    @property
    def exceeded(self) -> bool:
        return self.time >= self.max_duration


def sense(scene: GroundTruthScene, pose: CameraPose,
          model: SensorModel):
    """Simulate one RGB-D frame: depth image plus semantic point cloud.

    Depth is the range to the first occupied ground-truth cell boundary
    (sentinel for no return), optionally perturbed by Gaussian noise.
    Each surviving point carries the hit cell's color and the embedding of
    the nearest object whose (slack-padded) radius contains it, else the
    background embedding.
    """
    if not scene.contains_position(pose.position):
        raise ValueError("sensor pose lies outside the scene bounds")
    intr = model.intrinsics
    dirs = camera_ray_directions(pose, intr)
    n = dirs.shape[0]
    depth = np.empty(n)
    cells = np.empty((n, 3), dtype=np.int64)
    _kernels.cast_bool_kernel(scene.occupancy, scene.origin,
                              scene.resolution, pose.position, dirs,
                              intr.max_range, depth, cells)
    hit = depth >= 0.0
    if model.depth_sigma > 0.0 and np.any(hit):
        noisy = depth[hit] + model.rng.normal(0.0, model.depth_sigma,
                                              size=int(hit.sum()))
        depth[hit] = np.clip(noisy, 0.0, intr.max_range)
    keep = hit.copy()
    if model.drop_rate > 0.0 and np.any(hit):
        keep[hit] &= model.rng.random(int(hit.sum())) >= model.drop_rate
    points = pose.position + dirs[keep] * depth[keep, None]
    colors = scene.color_grid[cells[keep, 0], cells[keep, 1], cells[keep, 2]]
    emb_dim = scene.background_embedding.shape[0]
    embeddings = np.tile(scene.background_embedding, (points.shape[0], 1))
    # rasterized sphere surfaces stick out by up to half a cell diagonal
    slack = scene.resolution * math.sqrt(3.0)
    for obj in scene.objects:
        d = np.linalg.norm(points - obj.center, axis=1)
        embeddings[d <= obj.radius + slack] = obj.embedding
    depth_img = depth.reshape(intr.height, intr.width)
    cloud = SemanticPointCloud(points=points, colors=np.asarray(colors,
                                                                dtype=float),
                               embeddings=embeddings.reshape(-1, emb_dim))
    return depth_img, cloud


def step_robot(scene: GroundTruthScene, state: PlannerState,
               target: PlannerState, limits: ControlLimits,
               z: float | None = None):
    """Advance one control period toward the target state.

    Planar speed and yaw rate saturate at the limits; the target is
    reached exactly when within one step. Motion is truncated at the
    first ground-truth contact at flight altitude and flagged as a
    collision rather than an error.

    Returns (new_state, collided).
    """
    z = scene.flight_z if z is None else z
    dx = target.x - state.x
    dy = target.y - state.y
    dist = math.hypot(dx, dy)
    step = min(dist, limits.step_distance)
    if dist > 1e-12 and step > 0.0:
        nx = state.x + dx / dist * step
        ny = state.y + dy / dist * step
    else:
        nx, ny = state.x, state.y
    collided = False
    if step > 1e-12:
        blocked = scene.blocked_2d(z)
        occ3 = blocked[:, :, None]
        p0 = np.array([state.x, state.y, 0.5 * scene.resolution])
        p1 = np.array([nx, ny, 0.5 * scene.resolution])
        hit, t, _, _, _ = _kernels.segment_first_hit(
            occ3, scene.origin, scene.resolution, p0, p1)
        if hit:
            collided = True
            seg = math.hypot(nx - state.x, ny - state.y)
            back = max(0.0, t - 1e-3 / max(seg, 1e-9))
            nx = state.x + (nx - state.x) * back
            ny = state.y + (ny - state.y) * back
    dyaw = wrap_angle(target.yaw - state.yaw)
    if dyaw > limits.step_yaw:
        dyaw = limits.step_yaw
    elif dyaw < -limits.step_yaw:
        dyaw = -limits.step_yaw
    return PlannerState(nx, ny, wrap_angle(state.yaw + dyaw)), collided


def check_success(scene: GroundTruthScene, state: PlannerState,
                  pose: CameraPose, intrinsics: CameraIntrinsics,
                  d_succ: float = 1.5) -> bool:
    """Referee: close enough, unobstructed, and actually looking at it.

    Success requires the robot within d_succ (planar) of the query object
    center, a clear ground-truth line of sight from the camera, and the
    object center inside the camera frustum within sensing range.
    """
    obj = scene.query_object
    if obj is None:
        return False
    if math.hypot(state.x - obj.center[0],
                  state.y - obj.center[1]) > d_succ:
        return False
    proj = project_point(pose, intrinsics, obj.center)
    if proj is None:
        return False
    u, v, rng_ = proj
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        return False
    if rng_ > intrinsics.max_range:
        return False
    return scene.object_visible_from(pose.position, obj)


# ---- scene construction -----------------------------------------------------


def _basis_embedding(index: int, dim: int) -> np.ndarray:
    e = np.zeros(dim)
    e[index] = 1.0
    return e


def scene_from_spec(spec: dict) -> GroundTruthScene:
    """Rasterize a scene description into a ground-truth grid.

    The description lists axis-aligned boxes and spherical objects; see
    docs/formats.md for the exact schema. Objects default to orthogonal
    basis embeddings in registration order; the background uses the last
    basis vector.
    """
    known = {"name", "extents", "resolution", "flight_z", "boxes", "objects",
             "start", "query", "embedding_dim"}
    unknown = set(spec) - known
    if unknown:
        raise SceneError("unknown scene keys: %s" % ", ".join(sorted(unknown)))
    try:
        extents = np.asarray(spec["extents"], dtype=float).reshape(3)
        res = float(spec["resolution"])
        start_d = spec["start"]
        start = PlannerState(float(start_d["x"]), float(start_d["y"]),
                             float(start_d.get("yaw", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError("bad scene description: %s" % exc) from exc
    if res <= 0 or np.any(extents <= 0):
        raise SceneError("extents and resolution must be positive")
    dims = np.maximum(np.rint(extents / res).astype(int), 1)
    occ = np.zeros(tuple(dims), dtype=bool)
    color = np.zeros(tuple(dims) + (3,), dtype=np.float64)

    centers = [(np.arange(d) + 0.5) * res for d in dims]

    def _axis_slice(lo, hi, axis):
        a = max(0, int(math.floor(lo / res)))
        b = min(int(dims[axis]), int(math.ceil(hi / res)))
        return slice(a, max(a, b))

    for box in spec.get("boxes", []):
        bmin = np.asarray(box["min"], dtype=float)
        bmax = np.asarray(box["max"], dtype=float)
        if np.any(bmax <= bmin):
            raise SceneError("box max must exceed min")
        sx = _axis_slice(bmin[0], bmax[0], 0)
        sy = _axis_slice(bmin[1], bmax[1], 1)
        sz = _axis_slice(bmin[2], bmax[2], 2)
        occ[sx, sy, sz] = True
        color[sx, sy, sz] = np.asarray(box.get("color", [0.6, 0.6, 0.6]),
                                       dtype=float)

    dim = int(spec.get("embedding_dim", DEFAULT_EMBEDDING_DIM))
    objs = []
    specs = spec.get("objects", [])
    if len(specs) > dim - 1:
        raise SceneError("more objects than available embedding axes")
    for i, od in enumerate(specs):
        emb = od.get("embedding")
        emb = (_basis_embedding(i, dim) if emb is None
               else np.asarray(emb, dtype=float))
        obj = SceneObject(name=od["name"], center=od["center"],
                          radius=float(od["radius"]),
                          color=od.get("color", [1.0, 0.2, 0.2]),
                          embedding=emb)
        # rasterize the sphere
        dx = centers[0][:, None, None] - obj.center[0]
        dy = centers[1][None, :, None] - obj.center[1]
        dz = centers[2][None, None, :] - obj.center[2]
        inside = dx * dx + dy * dy + dz * dz <= obj.radius ** 2
        occ |= inside
        color[inside] = obj.color
        objs.append(obj)

    return GroundTruthScene(
        extents=extents, resolution=res, occupancy=occ, color_grid=color,
        objects=objs, start=start, query=spec.get("query"),
        flight_z=float(spec.get("flight_z", extents[2] / 2.0)),
        background_embedding=_basis_embedding(dim - 1, dim),
        name=spec.get("name", "scene"), spec=spec)


def _room_spec(name, size, walls_extra=(), objects=(), start=(3.0, 3.0, 0.8),
               query=None):
    t = 0.25            # wall thickness
    h = 2.5             # wall height
    sx, sy = size
    boxes = [
        {"min": [0.0, 0.0, 0.0], "max": [sx, t, h], "color": [0.55, 0.55, 0.6]},
        {"min": [0.0, sy - t, 0.0], "max": [sx, sy, h],
         "color": [0.55, 0.55, 0.6]},
        {"min": [0.0, 0.0, 0.0], "max": [t, sy, h], "color": [0.6, 0.55, 0.55]},
        {"min": [sx - t, 0.0, 0.0], "max": [sx, sy, h],
         "color": [0.6, 0.55, 0.55]},
    ]
    boxes.extend(walls_extra)
    return {
        "name": name,
        "extents": [sx, sy, 2.5],
        "resolution": 0.125,
        "flight_z": 1.25,
        "boxes": boxes,
        "objects": list(objects),
        "start": {"x": start[0], "y": start[1], "yaw": start[2]},
        "query": query,
    }


def _open_room_spec(with_object=True):
    objects = []
    query = None
    if with_object:
        objects = [
            {"name": "ball", "center": [8.5, 7.0, 1.25], "radius": 0.45,
             "color": [0.9, 0.15, 0.1]},
            {"name": "post", "center": [3.0, 9.5, 1.25], "radius": 0.4,
             "color": [0.1, 0.3, 0.9]},
        ]
        query = "ball"
    return _room_spec("open_room" if with_object else "closed_room",
                      (12.0, 12.0), objects=objects, query=query)


def _occluded_room_spec():
    # a long interior wall hides a deep pocket; the only way in is the
    # gap at the top, and the object sits at the far end of the pocket
    wall = {"min": [8.0, 0.25, 0.0], "max": [8.25, 10.0, 2.5],
            "color": [0.5, 0.5, 0.55]}
    objects = [
        {"name": "ball", "center": [11.0, 3.0, 1.25], "radius": 0.45,
         "color": [0.9, 0.15, 0.1]},
        {"name": "post", "center": [4.0, 2.5, 1.25], "radius": 0.4,
         "color": [0.1, 0.3, 0.9]},
    ]
    return _room_spec("occluded_room", (14.0, 14.0), walls_extra=[wall],
                      objects=objects, start=(2.5, 7.0, 0.0), query="ball")


def _maze_spec():
    walls = [
        {"min": [5.25, 0.25, 0.0], "max": [5.5, 10.0, 2.5],
         "color": [0.5, 0.5, 0.55]},
        {"min": [10.5, 6.0, 0.0], "max": [10.75, 15.75, 2.5],
         "color": [0.5, 0.5, 0.55]},
    ]
    objects = [
        {"name": "ball", "center": [13.5, 3.0, 1.25], "radius": 0.45,
         "color": [0.9, 0.15, 0.1]},
    ]
    return _room_spec("maze", (16.0, 16.0), walls_extra=walls,
                      objects=objects, start=(2.5, 2.5, 0.8), query="ball")


def builtin_scenes() -> dict:
    """Named deterministic scene generators.

    open_room: query object visible from the start pose.
    occluded_room: query object hidden behind an interior wall.
    maze: corridor-and-rooms layout, object reachable but remote.
    closed_room: the open room with no objects and no query.
    """
    return {
        "open_room": lambda seed=0: scene_from_spec(_open_room_spec(True)),
        "closed_room": lambda seed=0: scene_from_spec(_open_room_spec(False)),
        "occluded_room": lambda seed=0: scene_from_spec(_occluded_room_spec()),
        "maze": lambda seed=0: scene_from_spec(_maze_spec()),
    }


def load_scene(ref: str) -> GroundTruthScene:
    """Resolve a scene reference: builtin name or path to a scene JSON."""
    scenes = builtin_scenes()
    if ref in scenes:
        return scenes[ref]()
    import json
    from pathlib import Path

    p = Path(ref)
    if not p.exists():
        raise SceneError("unknown scene %r (not a builtin, not a file)" % ref)
    with open(p) as f:
        return scene_from_spec(json.load(f))
