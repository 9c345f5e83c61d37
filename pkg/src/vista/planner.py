"""Receding-horizon informative planner.

One planning cycle flattens the voxel grid into a 2D occupancy/semantic
map, extracts frontier cells and high-semantic samples, fits a Gaussian
mixture over them, grows a shortest-path tree from the robot, samples
candidate paths toward mixture draws, assigns dynamically feasible
headings, scores every candidate by rendering gain and semantic images at
its waypoints, and returns the best-scoring trajectory. The geometric
weight decays across cycles so semantic relevance gradually dominates.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .gain import (ScoreWeights, WaypointScore, decay_weight,
                   image_geometric_gain, image_semantic_gain,
                   trajectory_score)
from .geometry import (CameraIntrinsics, CameraPose, ControlLimits,
                       PlannerState, wrap_angle)
from .gmm import GaussianMixture, fit_gmm_points
from .voxelgrid import FREE, OCCUPIED, UNOBSERVED, VoxelGrid


class PlanningError(RuntimeError):
    """Raised when no usable plan can be produced this cycle."""


_NEIGHBORS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0),
               (1, 1)]


@dataclass
class FlatGrid:
    """Top-down projection of the voxel grid over a vertical band.

    Cell state takes the highest-priority state in the column (occupied,
    then unobserved, then free); the semantic layer sums occupied-voxel
    semantic values down each column.
    """

    state: np.ndarray        # (nx, ny) uint8
    semantic: np.ndarray     # (nx, ny) float, column sums >= 0
    origin_xy: np.ndarray    # world coords of cell (0, 0) lower corner
    resolution: float
    z_lo: float
    z_hi: float

    @property
    def shape(self):
        return self.state.shape

    def cell_centers(self, cells: np.ndarray) -> np.ndarray:
        cells = np.atleast_2d(np.asarray(cells, dtype=float))
        return self.origin_xy + (cells + 0.5) * self.resolution

    def world_to_cell(self, xy) -> tuple:
        rel = (np.asarray(xy, dtype=float) - self.origin_xy) / self.resolution
        return int(math.floor(rel[0])), int(math.floor(rel[1]))


def flatten_voxel_grid(grid: VoxelGrid, z_lo: float, z_hi: float) -> FlatGrid:
    """Project the voxel grid onto 2D over the band [z_lo, z_hi]."""
    k0, k1 = grid.band_indices(z_lo, z_hi)
    band = grid.state[:, :, k0:k1]
    occ = (band == OCCUPIED).any(axis=2)
    unob = (band == UNOBSERVED).any(axis=2)
    state = np.full(band.shape[:2], FREE, dtype=np.uint8)
    state[unob] = UNOBSERVED
    state[occ] = OCCUPIED
    sem_band = np.where(band == OCCUPIED, grid.semantic[:, :, k0:k1], 0.0)
    semantic = sem_band.sum(axis=2)
    return FlatGrid(state=state, semantic=semantic,
                    origin_xy=grid.origin[:2].copy(),
                    resolution=grid.resolution, z_lo=z_lo, z_hi=z_hi)


def get_frontiers(flat: FlatGrid) -> np.ndarray:
    """Free cells with at least one unobserved 8-neighbor, as (m, 2) indices."""
    state = flat.state
    unob = state == UNOBSERVED
    near_unob = np.zeros_like(unob)
    for di, dj in _NEIGHBORS8:
        src_i = slice(max(0, di), state.shape[0] + min(0, di))
        dst_i = slice(max(0, -di), state.shape[0] + min(0, -di))
        src_j = slice(max(0, dj), state.shape[1] + min(0, dj))
        dst_j = slice(max(0, -dj), state.shape[1] + min(0, -dj))
        near_unob[dst_i, dst_j] |= unob[src_i, src_j]
    return np.argwhere((state == FREE) & near_unob)


def get_semantic_samples(flat: FlatGrid, top_m: int, n_samples: int,
                         rng) -> np.ndarray:
    """Sample 2D points from a categorical over the top-m semantic cells.

    Cells are weighted by their semantic column sums; each draw is the
    cell center jittered uniformly inside the cell. Returns (n, 2) world
    points, empty when no cell has positive semantic mass.
    """
    if top_m < 1:
        raise ValueError("top_m must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(
        rng, np.random.Generator) else rng
    values = flat.semantic.reshape(-1)
    positive = np.flatnonzero(values > 0.0)
    if positive.size == 0 or n_samples <= 0:
        return np.zeros((0, 2))
    order = positive[np.argsort(-values[positive], kind="stable")]
    top = order[:top_m]
    probs = values[top] / values[top].sum()
    picks = rng.choice(top.size, size=n_samples, p=probs)
    cells = np.stack([top[picks] // flat.shape[1],
                      top[picks] % flat.shape[1]], axis=1)
    centers = flat.cell_centers(cells)
    jitter = rng.uniform(-0.5, 0.5, size=(n_samples, 2)) * flat.resolution
    return centers + jitter


def fit_gmm(frontier_cells, semantic_points, k: int, rng, flat: FlatGrid,
            ) -> GaussianMixture:
    """Fit the target mixture over frontier cell centers plus semantic samples.

    Covariances are floored at (resolution / 2)^2 on the diagonal; k is
    reduced (and flagged) when there are fewer points than components.
    """
    frontier_cells = np.asarray(frontier_cells).reshape(-1, 2)
    pts = [flat.cell_centers(frontier_cells)] if frontier_cells.size else []
    semantic_points = np.asarray(semantic_points, dtype=float).reshape(-1, 2)
    if semantic_points.size:
        pts.append(semantic_points)
    if not pts:
        raise PlanningError("no frontier or semantic points to fit")
    points = np.vstack(pts)
    floor = (flat.resolution / 2.0) ** 2
    return fit_gmm_points(points, k, rng, covariance_floor=floor)


@dataclass
class ShortestPathTree:
    """Dijkstra parent-pointer tree over traversable free cells.

    Costs are in cell units (1 orthogonal, sqrt(2) diagonal); multiply by
    resolution for meters. parent holds flat indices, -1 for unreached,
    the cell's own index at the root.
    """

    cost: np.ndarray        # (nx, ny) float, inf unreached
    parent: np.ndarray      # (nx, ny) int64 flat index
    start_cell: tuple
    traversable: np.ndarray
    resolution: float
    origin_xy: np.ndarray

    def reachable_cells(self, traversable_only: bool = True) -> np.ndarray:
        mask = np.isfinite(self.cost)
        if traversable_only:
            mask &= self.traversable
        return np.argwhere(mask)

    def path_to(self, cell) -> np.ndarray:
        """Cells from the start to the target, inclusive, shape (L+1, 2)."""
        i, j = int(cell[0]), int(cell[1])
        ny = self.cost.shape[1]
        if not np.isfinite(self.cost[i, j]):
            raise PlanningError("cell (%d, %d) is not in the tree" % (i, j))
        out = []
        flat = i * ny + j
        while True:
            out.append((flat // ny, flat % ny))
            p = int(self.parent[out[-1]])
            if p == flat:
                break
            flat = p
        return np.array(out[::-1], dtype=np.int64)


def _inflate(occ: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation of an occupancy mask."""
    out = occ.copy()
    for _ in range(radius):
        grown = out.copy()
        for di, dj in _NEIGHBORS8:
            src_i = slice(max(0, di), out.shape[0] + min(0, di))
            dst_i = slice(max(0, -di), out.shape[0] + min(0, -di))
            src_j = slice(max(0, dj), out.shape[1] + min(0, dj))
            dst_j = slice(max(0, -dj), out.shape[1] + min(0, -dj))
            grown[dst_i, dst_j] |= out[src_i, src_j]
        out = grown
    return out


def _snap_start(flat: FlatGrid, traversable: np.ndarray,
                start: PlannerState) -> tuple:
    """Start cell, snapped to a nearby free cell when needed."""
    nx, ny = flat.shape
    si, sj = flat.world_to_cell(start.xy)
    si = min(max(si, 0), nx - 1)
    sj = min(max(sj, 0), ny - 1)
    if traversable[si, sj]:
        return si, sj
    candidates = []
    for di in range(-2, 3):
        for dj in range(-2, 3):
            i, j = si + di, sj + dj
            if not (0 <= i < nx and 0 <= j < ny):
                continue
            if flat.state[i, j] != FREE:
                continue
            center = flat.cell_centers(np.array([[i, j]]))[0]
            d = float(np.hypot(center[0] - start.x, center[1] - start.y))
            candidates.append((not traversable[i, j], d, i, j))
    if not candidates:
        raise PlanningError("start state is not on or near a free cell")
    candidates.sort()
    _, _, i, j = candidates[0]
    return i, j


def dijkstra_paths(flat: FlatGrid, start: PlannerState,
                   inflation_radius: int = 1) -> ShortestPathTree:
    """Shortest paths from the robot to every reachable free cell.

    8-connected moves cost 1 orthogonal and sqrt(2) diagonal. Occupied and
    unobserved cells block, as does anything within the inflation radius
    of an occupied cell. The start cell itself only needs to be free.
    """
    nx, ny = flat.shape
    traversable = (flat.state == FREE) & ~_inflate(flat.state == OCCUPIED,
                                                   inflation_radius)
    si, sj = _snap_start(flat, traversable, start)

    cost = np.full((nx, ny), np.inf)
    parent = np.full((nx, ny), -1, dtype=np.int64)
    cost[si, sj] = 0.0
    parent[si, sj] = si * ny + sj
    sqrt2 = math.sqrt(2.0)
    heap = [(0.0, si, sj)]
    while heap:
        c, i, j = heapq.heappop(heap)
        if c > cost[i, j]:
            continue
        for di, dj in _NEIGHBORS8:
            a, b = i + di, j + dj
            if not (0 <= a < nx and 0 <= b < ny):
                continue
            if not traversable[a, b]:
                continue
            nc = c + (sqrt2 if di and dj else 1.0)
            if nc < cost[a, b]:
                cost[a, b] = nc
                parent[a, b] = i * ny + j
                heapq.heappush(heap, (nc, a, b))
    return ShortestPathTree(cost=cost, parent=parent, start_cell=(si, sj),
                            traversable=traversable,
                            resolution=flat.resolution,
                            origin_xy=flat.origin_xy.copy())


def _downsample_path(path: np.ndarray, max_waypoints: int) -> np.ndarray:
    """At most max_waypoints cells, evenly spaced, endpoint always kept."""
    last = path.shape[0] - 1
    if last <= 0:
        return path[-1:].copy()
    idx = []
    for j in range(1, max_waypoints + 1):
        i = int(round(j * last / max_waypoints))
        if not idx or i != idx[-1]:
            idx.append(i)
    return path[idx]


def sample_trajectories(tree: ShortestPathTree, gmm: GaussianMixture,
                        n_traj: int, max_waypoints: int, rng):
    """Candidate waypoint paths toward mixture-sampled targets.

    Each draw snaps to the nearest reachable free cell, takes its
    shortest path, and is thinned to at most max_waypoints cells.
    Returns a list of (positions (m, 2) meters, target (2,)) pairs.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(
        rng, np.random.Generator) else rng
    cells = tree.reachable_cells(traversable_only=True)
    if cells.shape[0] == 0:
        raise PlanningError("shortest-path tree is empty")
    centers = tree.origin_xy + (cells + 0.5) * tree.resolution
    targets = gmm.sample(n_traj, rng)
    out = []
    for t in targets:
        d2 = np.sum((centers - t) ** 2, axis=1)
        cell = cells[int(np.argmin(d2))]
        path = tree.path_to(cell)
        wp_cells = _downsample_path(path, max_waypoints)
        positions = tree.origin_xy + (wp_cells + 0.5) * tree.resolution
        out.append((positions, t.copy()))
    return out


def feasible_headings(path_xy: np.ndarray, frontier_xy: np.ndarray,
                      attention_xy: np.ndarray, current: PlannerState,
                      limits: ControlLimits) -> np.ndarray:
    """Rate-limited yaws pointing at the nearest attention target.

    For each waypoint the desired yaw faces the closest point among the
    frontier cells and the extra attention points (the mixture means
    during planning). The emitted sequence starts from the current yaw
    and turns at most max_yaw_rate * dt per waypoint. With no targets the
    current yaw is held.
    """
    path_xy = np.atleast_2d(np.asarray(path_xy, dtype=float))
    if path_xy.shape[0] == 0:
        raise ValueError("path is empty")
    targets = [np.asarray(p, dtype=float).reshape(-1, 2)
               for p in (frontier_xy, attention_xy)]
    targets = np.vstack([t for t in targets if t.size]) if any(
        t.size for t in targets) else np.zeros((0, 2))
    yaws = np.empty(path_xy.shape[0])
    prev = current.yaw
    max_step = limits.step_yaw
    for i, wp in enumerate(path_xy):
        if targets.shape[0]:
            d2 = np.sum((targets - wp) ** 2, axis=1)
            j = int(np.argmin(d2))
            dx, dy = targets[j] - wp
            if dx * dx + dy * dy > 1e-18:
                desired = math.atan2(dy, dx)
            else:
                desired = prev
        else:
            desired = prev
        delta = wrap_angle(desired - prev)
        if delta > max_step:
            delta = max_step
        elif delta < -max_step:
            delta = -max_step
        prev = wrap_angle(prev + delta)
        yaws[i] = prev
    return yaws


def construct_full_pose(states, z: float):
    """Lift planar states (x, y, yaw) to full poses (x, y, z, 0, 0, yaw)."""
    return [s.to_pose(z) for s in states]


@dataclass
class Trajectory:
    """Scored candidate path."""

    states: list              # PlannerState waypoints
    poses: list               # full camera poses at flight altitude
    score: float
    target: np.ndarray | None = None
    is_recovery: bool = False


@dataclass
class PlannerConfig:
    """Tunables of one planning cycle."""

    limits: ControlLimits
    score_intrinsics: CameraIntrinsics
    z_lo: float = 0.75
    z_hi: float = 1.75
    flight_z: float = 1.25
    top_m: int = 10
    n_semantic_samples: int = 48
    gmm_components: int = 4
    n_trajectories: int = 32
    max_waypoints: int = 8
    inflation_radius: int = 1
    use_semantics: bool = True


@dataclass
class PlanResult:
    best: Trajectory
    weights: ScoreWeights
    candidates: list = field(default_factory=list)
    recovery: bool = False
    debug: dict | None = None


def recovery_trajectory(current: PlannerState,
                        config: PlannerConfig) -> Trajectory:
    """Rotate in place through a full revolution at the yaw-rate limit."""
    step = config.limits.step_yaw
    n = max(1, int(math.ceil(2.0 * math.pi / step)))
    states = []
    yaw = current.yaw
    for _ in range(n):
        yaw = wrap_angle(yaw + step)
        states.append(PlannerState(current.x, current.y, yaw))
    poses = construct_full_pose(states, config.flight_z)
    return Trajectory(states=states, poses=poses, score=0.0, target=None,
                      is_recovery=True)


def plan(current: PlannerState, grid: VoxelGrid, weights: ScoreWeights,
         config: PlannerConfig, rng, collect_debug: bool = False,
         ) -> PlanResult:
    """One full planning cycle; falls back to rotate-in-place on failure.

    Scores each candidate with the current weights, then decays the
    geometric weight for the next cycle. Ties break toward the lowest
    candidate index.
    """
    rng = np.random.default_rng(rng) if not isinstance(
        rng, np.random.Generator) else rng
    snap = grid.snapshot()
    flat = flatten_voxel_grid(snap, config.z_lo, config.z_hi)
    if not config.use_semantics:
        flat.semantic = np.zeros_like(flat.semantic)
    frontier_cells = get_frontiers(flat)
    sem_points = get_semantic_samples(flat, config.top_m,
                                      config.n_semantic_samples, rng)
    new_weights = decay_weight(weights)
    try:
        if frontier_cells.shape[0] == 0 and sem_points.shape[0] == 0:
            raise PlanningError("no frontiers and no semantic targets")
        tree = dijkstra_paths(flat, current, config.inflation_radius)
        mixture = fit_gmm(frontier_cells, sem_points, config.gmm_components,
                          rng, flat)
        paths = sample_trajectories(tree, mixture, config.n_trajectories,
                                    config.max_waypoints, rng)
    except PlanningError:
        return PlanResult(best=recovery_trajectory(current, config),
                          weights=new_weights, recovery=True)

    frontier_xy = (flat.cell_centers(frontier_cells)
                   if frontier_cells.size else np.zeros((0, 2)))
    candidates = []
    for positions, target in paths:
        yaws = feasible_headings(positions, frontier_xy, mixture.means,
                                 current, config.limits)
        states = [PlannerState(p[0], p[1], y)
                  for p, y in zip(positions, yaws)]
        poses = construct_full_pose(states, config.flight_z)
        scores = []
        for pose in poses:
            _, sem_img, gain_img, _, _ = snap.render_all(
                pose, config.score_intrinsics)
            g_i = image_geometric_gain(gain_img)
            g_s = (image_semantic_gain(sem_img)
                   if config.use_semantics else 0.0)
            scores.append(WaypointScore(geometric=g_i, semantic=g_s,
                                        pose=pose))
        candidates.append(Trajectory(
            states=states, poses=poses,
            score=trajectory_score(scores, weights), target=target))

    best = candidates[0]
    for cand in candidates[1:]:
        if cand.score > best.score:
            best = cand
    debug = None
    if collect_debug:
        debug = {
            "frontier_count": int(frontier_cells.shape[0]),
            "semantic_sample_count": int(sem_points.shape[0]),
            "gmm": {
                "weights": mixture.weights.tolist(),
                "means": mixture.means.tolist(),
                "covariances": mixture.covariances.tolist(),
            },
            "candidates": [
                {"score": c.score,
                 "target": None if c.target is None else c.target.tolist(),
                 "waypoints": [[s.x, s.y, s.yaw] for s in c.states]}
                for c in candidates
            ],
            "chosen": int(candidates.index(best)),
        }
    return PlanResult(best=best, weights=new_weights, candidates=candidates,
                      recovery=False, debug=debug)
