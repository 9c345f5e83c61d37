"""Voxel mapping, view-diversity gain, and semantic exploration planning."""

from .codebook import (CODEBOOK, DIRECTION_COUNT, MAX_BIN_HALF_ANGLE,
                       ViewDirectionSet, quantize_directions)
from .config import ConfigError, ScenarioConfig, config_from_dict, load_config
from .episode import (EpisodeResult, SetupError, StrategyKind, run_batch,
                      run_episode, spl)
from .gain import (ScoreWeights, WaypointScore, decay_weight,
                   image_geometric_gain, image_semantic_gain, pixel_gain,
                   trajectory_score)
from .geometry import (CameraIntrinsics, CameraPose, ControlLimits,
                       PlannerState, Ray, wrap_angle)
from .gmm import GaussianMixture, fit_gmm_points
from .planner import (FlatGrid, PlannerConfig, PlanningError, Trajectory,
                      construct_full_pose, dijkstra_paths, feasible_headings,
                      fit_gmm, flatten_voxel_grid, get_frontiers,
                      get_semantic_samples, plan, sample_trajectories)
from .simenv import (EpisodeClock, GroundTruthScene, SceneError, SceneObject,
                     SensorModel, builtin_scenes, check_success, load_scene,
                     scene_from_spec, sense, step_robot)
from .voxelgrid import (DEPTH_SENTINEL, FREE, OCCUPIED, UNOBSERVED,
                        SemanticPointCloud, TraversalCause, TraversalResult,
                        VoxelGrid, traverse)

__version__ = "0.1.0"
