"""Closed-loop episodes: sense, map, plan, step, adjudicate.

An episode starts with a full in-place turn to seed the map, then runs
replanning cycles until the referee declares success, a collision aborts,
or the time budget runs out. Batches sweep scenes x strategies x seeds
and aggregate success rate, time to reach, and success weighted by
inverse path length.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import ScenarioConfig
from .gain import ScoreWeights
from .geometry import PlannerState, wrap_angle
from .planner import (PlannerConfig, PlanningError, Trajectory,
                      dijkstra_paths, flatten_voxel_grid, plan,
                      recovery_trajectory, sample_trajectories,
                      construct_full_pose)
from .simenv import (GroundTruthScene, SensorModel, EpisodeClock,
                     check_success, load_scene, sense, step_robot)
from .voxelgrid import OCCUPIED, VoxelGrid


class SetupError(ValueError):
    """Configuration inconsistencies detected before any stepping."""


class StrategyKind(str, Enum):
    VISTA = "vista"
    SEMANTIC_GREEDY = "semantic"
    GEOMETRIC_ONLY = "geometric"


@dataclass
class EpisodeResult:
    """Outcome and bookkeeping of one episode."""

    scene: str
    strategy: str
    seed: int
    success: bool
    time_to_reach: float | None
    path_length: float
    shortest_path_length: float | None
    collision_count: int
    n_cycles: int
    final_band_unobserved: float
    cycles: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "scene": self.scene,
            "strategy": self.strategy,
            "seed": self.seed,
            "success": self.success,
            "time_to_reach": self.time_to_reach,
            "path_length": self.path_length,
            "shortest_path_length": self.shortest_path_length,
            "collision_count": self.collision_count,
            "n_cycles": self.n_cycles,
            "final_band_unobserved": self.final_band_unobserved,
            "cycles": self.cycles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        d = dict(d)
        d.pop("schema_version", None)
        return cls(**d)


def _reached(state: PlannerState, wp: PlannerState) -> bool:
    return (math.hypot(state.x - wp.x, state.y - wp.y) <= 0.05
            and abs(wrap_angle(wp.yaw - state.yaw)) <= 0.06)


def band_unobserved_in_scene(grid: VoxelGrid, scene: GroundTruthScene,
                             z_lo: float, z_hi: float) -> float:
    """Unobserved fraction of the flight band, clipped to the scene
    footprint (the robot-centered window extends past the walls, where
    nothing is observable)."""
    k0, k1 = grid.band_indices(z_lo, z_hi)
    band = grid.state[:, :, k0:k1]
    xs = grid.origin[0] + (np.arange(grid.dims[0]) + 0.5) * grid.resolution
    ys = grid.origin[1] + (np.arange(grid.dims[1]) + 0.5) * grid.resolution
    inside = ((xs[:, None] >= 0) & (xs[:, None] <= scene.extents[0])
              & (ys[None, :] >= 0) & (ys[None, :] <= scene.extents[1]))
    sub = band[inside]
    if sub.size == 0:
        return 1.0
    return float(np.count_nonzero(sub == 0) / sub.size)


def _greedy_trajectory(state: PlannerState, grid: VoxelGrid,
                       pcfg: PlannerConfig) -> Trajectory:
    """Semantic-greedy baseline: head straight for the most semantically
    relevant occupied voxel, pointing the heading along the path."""
    snap = grid.snapshot()
    if not np.any(snap.state == OCCUPIED) or snap.semantic.max() <= 0.0:
        return recovery_trajectory(state, pcfg)
    best = np.unravel_index(int(np.argmax(snap.semantic)), snap.semantic.shape)
    flat = flatten_voxel_grid(snap, pcfg.z_lo, pcfg.z_hi)
    try:
        tree = dijkstra_paths(flat, state, pcfg.inflation_radius)
    except PlanningError:
        return recovery_trajectory(state, pcfg)
    cells = tree.reachable_cells(traversable_only=True)
    if cells.shape[0] == 0:
        return recovery_trajectory(state, pcfg)
    centers = tree.origin_xy + (cells + 0.5) * tree.resolution
    goal_xy = flat.cell_centers(np.array([[best[0], best[1]]]))[0]
    cell = cells[int(np.argmin(np.sum((centers - goal_xy) ** 2, axis=1)))]
    path = tree.path_to(cell)
    from .planner import _downsample_path

    wp_cells = _downsample_path(path, pcfg.max_waypoints)
    positions = tree.origin_xy + (wp_cells + 0.5) * tree.resolution
    yaws = []
    prev_xy = state.xy
    prev_yaw = state.yaw
    desired = prev_yaw
    for p in positions:
        seg = p - prev_xy
        if seg[0] ** 2 + seg[1] ** 2 > 1e-18:
            desired = math.atan2(seg[1], seg[0])
        delta = wrap_angle(desired - prev_yaw)
        step = pcfg.limits.step_yaw
        delta = max(-step, min(step, delta))
        prev_yaw = wrap_angle(prev_yaw + delta)
        yaws.append(prev_yaw)
        prev_xy = p
    states = [PlannerState(p[0], p[1], y) for p, y in zip(positions, yaws)]
    poses = construct_full_pose(states, pcfg.flight_z)
    return Trajectory(states=states, poses=poses, score=0.0,
                      target=goal_xy.copy())


def run_episode(scene: GroundTruthScene | str, strategy, config: ScenarioConfig,
                seed: int) -> EpisodeResult:
    """Run one closed-loop episode; deterministic given the seed."""
    if isinstance(scene, str):
        scene = load_scene(scene)
    strategy = StrategyKind(strategy)
    if config.query is not None and config.query != scene.query:
        scene = scene.with_query(config.query)

    flight_z = scene.flight_z if config.flight_z is None else config.flight_z
    grid_cz = scene.extents[2] / 2.0
    half_z = config.grid_dims[2] * config.grid_resolution / 2.0
    if config.z_lo < grid_cz - half_z or config.z_hi > grid_cz + half_z:
        raise SetupError(
            "grid z window [%.2f, %.2f] does not cover the flight band "
            "[%.2f, %.2f]" % (grid_cz - half_z, grid_cz + half_z,
                              config.z_lo, config.z_hi))
    if not (config.z_lo <= flight_z <= config.z_hi):
        raise SetupError("flight altitude %.2f outside the flatten band"
                         % flight_z)
    min_extent = 2.0 * config.max_range
    if (config.grid_dims[0] * config.grid_resolution < min_extent
            or config.grid_dims[1] * config.grid_resolution < min_extent):
        raise SetupError("grid XY extent smaller than twice the sensor range")

    root = np.random.default_rng(seed)
    sensor_rng, planner_rng = root.spawn(2)
    intr = config.sensor_intrinsics()
    model = SensorModel(intr, config.depth_sigma, config.drop_rate,
                        sensor_rng)
    limits = config.limits()
    clock = EpisodeClock(dt=config.dt, max_duration=config.max_duration)
    state = scene.start
    grid = VoxelGrid(center=(state.x, state.y, grid_cz),
                     resolution=config.grid_resolution,
                     dims=config.grid_dims)
    pcfg = config.planner_config(
        use_semantics=(strategy is not StrategyKind.GEOMETRIC_ONLY),
        flight_z=flight_z)
    beta = 1.0 if strategy is StrategyKind.GEOMETRIC_ONLY else config.beta
    weights = ScoreWeights(c=config.c, gamma=config.gamma, beta=beta)

    query_emb = scene.query_embedding
    zero_sem = config.zero_semantics or scene.query is None

    shortest = None
    obj = scene.query_object
    if obj is not None:
        l = scene.shortest_path_length(obj.center[:2], config.d_succ)
        shortest = float(l) if math.isfinite(l) else None

    path_length = 0.0
    collisions = 0
    success = False
    ttr = None
    cycles = []

    def observe() -> bool:
        pose = state.to_pose(flight_z)
        depth, cloud = sense(scene, pose, model)
        if zero_sem and len(cloud):
            cloud.embeddings = np.tile(-query_emb, (len(cloud), 1))
        grid.integrate_point_cloud(cloud, query_emb)
        grid.carve_free_space(pose, intr, depth)
        grid.record_view_directions(pose, intr)
        return check_success(scene, state, pose, intr, config.d_succ)

    aborted = False
    if clock.max_duration > 0:
        success = observe()
        # initialization: one full turn in place at the yaw-rate limit
        n_spin = int(math.ceil(2.0 * math.pi / limits.step_yaw))
        for _ in range(n_spin):
            if success or clock.exceeded:
                break
            target = PlannerState(state.x, state.y,
                                  state.yaw + limits.step_yaw)
            state, _ = step_robot(scene, state, target, limits, flight_z)
            clock.tick()
            if observe():
                success = True
                ttr = clock.time

        while not success and not clock.exceeded and not aborted:
            grid.recenter((state.x, state.y, grid.center[2]))
            if strategy is StrategyKind.SEMANTIC_GREEDY:
                traj = _greedy_trajectory(state, grid, pcfg)
                recovery = traj.is_recovery
            else:
                res = plan(state, grid, weights, pcfg, planner_rng,
                           collect_debug=config.debug_dump)
                traj = res.best
                weights = res.weights
                recovery = res.recovery
            exec_n = (len(traj.states) if traj.is_recovery
                      else config.exec_waypoints)
            for wp in traj.states[:exec_n]:
                dist = math.hypot(wp.x - state.x, wp.y - state.y)
                dyaw = abs(wrap_angle(wp.yaw - state.yaw))
                budget = (int(math.ceil(dist / limits.step_distance))
                          + int(math.ceil(dyaw / limits.step_yaw)) + 2)
                for _ in range(budget):
                    prev = state
                    state, collided = step_robot(scene, state, wp, limits,
                                                 flight_z)
                    path_length += math.hypot(state.x - prev.x,
                                              state.y - prev.y)
                    clock.tick()
                    if observe():
                        success = True
                        ttr = clock.time
                        break
                    if collided:
                        collisions += 1
                        aborted = True
                        break
                    if clock.exceeded or _reached(state, wp):
                        break
                if success or aborted or clock.exceeded:
                    break
            record = {
                "cycle": len(cycles),
                "time": clock.time,
                "x": state.x, "y": state.y, "yaw": state.yaw,
                "recovery": bool(recovery if strategy is not
                                 StrategyKind.SEMANTIC_GREEDY
                                 else traj.is_recovery),
                "score": traj.score,
                "target": (None if traj.target is None
                           else [float(traj.target[0]),
                                 float(traj.target[1])]),
                "waypoints": [[s.x, s.y, s.yaw] for s in traj.states],
                "map_observed": grid.observed_count(),
                "map_max_semantic": float(grid.semantic.max()),
                "band_unobserved_fraction": band_unobserved_in_scene(
                    grid, scene, pcfg.z_lo, pcfg.z_hi),
            }
            if config.debug_dump and strategy is not \
                    StrategyKind.SEMANTIC_GREEDY and res.debug is not None:
                record["planner_debug"] = res.debug
            cycles.append(record)

    return EpisodeResult(
        scene=scene.name, strategy=strategy.value, seed=int(seed),
        success=bool(success), time_to_reach=ttr,
        path_length=float(path_length), shortest_path_length=shortest,
        collision_count=int(collisions), n_cycles=len(cycles),
        final_band_unobserved=band_unobserved_in_scene(grid, scene,
                                                       pcfg.z_lo, pcfg.z_hi),
        cycles=cycles)


def spl(results) -> float:
    """Success weighted by inverse path length over a batch of episodes.

    spl = mean_i S_i * l_i / max(p_i, l_i) with S_i the success flag,
    l_i the ground-truth shortest path, p_i the executed path length.
    """
    results = list(results)
    if not results:
        raise ValueError("spl needs at least one episode result")
    total = 0.0
    for r in results:
        l = r.shortest_path_length
        if l is None or l <= 0:
            raise ValueError("episode lacks a positive shortest-path oracle")
        if r.success:
            total += l / max(r.path_length, l)
    return total / len(results)


def _episode_task(args):
    scene_ref, strategy, config, seed = args
    return run_episode(scene_ref, strategy, config, seed)


def run_batch(scene_refs, strategies, seeds, config: ScenarioConfig,
              workers: int | None = None):
    """Episodes over the scene x strategy x seed grid.

    Returns (rows, results) where rows has one aggregate dict per
    scene x strategy cell (SR %, median TTR over successes, SPL %) and
    results maps (scene, strategy, seed) -> EpisodeResult. Cells whose
    setup fails are recorded with an error instead of aborting the batch.
    """
    scene_refs = list(scene_refs)
    strategies = [StrategyKind(s).value for s in strategies]
    seeds = [int(s) for s in seeds]
    if not scene_refs or not strategies or not seeds:
        raise ValueError("batch needs scenes, strategies, and seeds")
    workers = workers if workers is not None else config.workers

    jobs = [(sc, st, config, sd)
            for sc in scene_refs for st in strategies for sd in seeds]
    results: dict = {}
    errors: dict = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_episode_task, job): job for job in jobs}
            for fut, job in futures.items():
                try:
                    results[(job[0], job[1], job[3])] = fut.result()
                except SetupError as exc:
                    errors[(job[0], job[1])] = str(exc)
    else:
        for job in jobs:
            try:
                results[(job[0], job[1], job[3])] = _episode_task(job)
            except SetupError as exc:
                errors[(job[0], job[1])] = str(exc)

    rows = []
    for sc in scene_refs:
        for st in strategies:
            if (sc, st) in errors:
                rows.append({"scene": sc, "strategy": st,
                             "episodes": 0, "successes": 0,
                             "sr_pct": None, "ttr_median": None,
                             "spl_pct": None, "error": errors[(sc, st)]})
                continue
            cell = [results[(sc, st, sd)] for sd in seeds
                    if (sc, st, sd) in results]
            if not cell:
                continue
            succ = [r for r in cell if r.success]
            ttrs = sorted(r.time_to_reach for r in succ)
            ttr_med = (None if not ttrs
                       else float(np.median(np.array(ttrs))))
            has_oracle = all(r.shortest_path_length not in (None, 0)
                             for r in cell)
            rows.append({
                "scene": sc, "strategy": st,
                "episodes": len(cell), "successes": len(succ),
                "sr_pct": 100.0 * len(succ) / len(cell),
                "ttr_median": ttr_med,
                "spl_pct": 100.0 * spl(cell) if has_oracle else None,
                "error": None,
            })
    return rows, results
