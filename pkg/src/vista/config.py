"""Scenario configuration: one validated JSON document drives everything.

Every tunable of the mapper, scorer, planner, simulator, and episode loop
is overridable here; unknown keys are rejected and violations name the
offending key so batch scripts fail loudly. See docs/formats.md for the
schema and docs/scenario.schema.json for a machine-readable copy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .geometry import CameraIntrinsics, ControlLimits
from .planner import PlannerConfig

STRATEGIES = ("vista", "semantic", "geometric")


class ConfigError(ValueError):
    """Invalid scenario configuration; message names the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__("%s: %s" % (key, message))


@dataclass
class ScenarioConfig:
    scene: str = "open_room"
    query: str | None = None          # None keeps the scene's own query
    strategy: str = "vista"
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    # batch sweeps; None falls back to the single scene/strategy
    scenes: list | None = None
    strategies: list | None = None

    # mapping grid; the window is sized so recentering never drops scene
    # content for rooms up to ~14 m
    grid_resolution: float = 0.25
    grid_dims: tuple = (112, 112, 16)

    # flatten band
    z_lo: float = 0.75
    z_hi: float = 1.75

    # score weights
    c: float = 2.0
    gamma: float = 0.9
    beta: float = 0.997

    # planner
    top_m: int = 10
    n_semantic_samples: int = 48
    gmm_components: int = 4
    n_trajectories: int = 32
    max_waypoints: int = 8
    inflation_radius: int = 1
    exec_waypoints: int = 3

    # control limits
    max_speed: float = 1.0
    max_yaw_rate: float = 0.9
    dt: float = 0.5

    # sensor
    sensor_width: int = 64
    sensor_height: int = 48
    hfov_deg: float = 70.0
    max_range: float = 8.0
    depth_sigma: float = 0.0
    drop_rate: float = 0.0

    # scoring renders (cheaper than the sensor)
    score_width: int = 32
    score_height: int = 24

    # episode
    d_succ: float = 1.5
    max_duration: float = 180.0
    flight_z: float | None = None     # None uses the scene's flight altitude
    zero_semantics: bool = False

    # outputs / execution
    debug_dump: bool = False
    workers: int = 1

    # ---- derived helpers ---------------------------------------------------

    def sensor_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.sensor_width,
                                         self.sensor_height, self.hfov_deg,
                                         self.max_range)

    def score_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.score_width, self.score_height,
                                         self.hfov_deg, self.max_range)

    def limits(self) -> ControlLimits:
        return ControlLimits(max_speed=self.max_speed,
                             max_yaw_rate=self.max_yaw_rate, dt=self.dt)

    def planner_config(self, use_semantics: bool,
                       flight_z: float) -> PlannerConfig:
        return PlannerConfig(
            limits=self.limits(), score_intrinsics=self.score_intrinsics(),
            z_lo=self.z_lo, z_hi=self.z_hi, flight_z=flight_z,
            top_m=self.top_m, n_semantic_samples=self.n_semantic_samples,
            gmm_components=self.gmm_components,
            n_trajectories=self.n_trajectories,
            max_waypoints=self.max_waypoints,
            inflation_radius=self.inflation_radius,
            use_semantics=use_semantics)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **{k: v for k, v in kw.items()
                                if v is not None})


_SCHEMA = {
    None: {"scene": str, "query": (str, type(None)), "strategy": str,
           "seed": int, "seeds": list, "scenes": list, "strategies": list},
    "grid": {"resolution": float, "dims": list},
    "band": {"z_lo": float, "z_hi": float},
    "score": {"c": float, "gamma": float, "beta": float},
    "planner": {"top_m": int, "n_semantic_samples": int,
                "gmm_components": int, "n_trajectories": int,
                "max_waypoints": int, "inflation_radius": int,
                "exec_waypoints": int},
    "limits": {"max_speed": float, "max_yaw_rate": float, "dt": float},
    "sensor": {"width": int, "height": int, "hfov_deg": float,
               "max_range": float, "depth_sigma": float, "drop_rate": float,
               "score_width": int, "score_height": int},
    "episode": {"d_succ": float, "max_duration": float, "flight_z": float,
                "zero_semantics": bool},
    "output": {"debug_dump": bool, "workers": int},
}

# maps (section, key) -> dataclass field
_FIELD_MAP = {
    (None, "scene"): "scene", (None, "query"): "query",
    (None, "strategy"): "strategy", (None, "seed"): "seed",
    (None, "seeds"): "seeds", (None, "scenes"): "scenes",
    (None, "strategies"): "strategies",
    ("grid", "resolution"): "grid_resolution",
    ("grid", "dims"): "grid_dims",
    ("band", "z_lo"): "z_lo", ("band", "z_hi"): "z_hi",
    ("score", "c"): "c", ("score", "gamma"): "gamma",
    ("score", "beta"): "beta",
    ("planner", "top_m"): "top_m",
    ("planner", "n_semantic_samples"): "n_semantic_samples",
    ("planner", "gmm_components"): "gmm_components",
    ("planner", "n_trajectories"): "n_trajectories",
    ("planner", "max_waypoints"): "max_waypoints",
    ("planner", "inflation_radius"): "inflation_radius",
    ("planner", "exec_waypoints"): "exec_waypoints",
    ("limits", "max_speed"): "max_speed",
    ("limits", "max_yaw_rate"): "max_yaw_rate",
    ("limits", "dt"): "dt",
    ("sensor", "width"): "sensor_width",
    ("sensor", "height"): "sensor_height",
    ("sensor", "hfov_deg"): "hfov_deg",
    ("sensor", "max_range"): "max_range",
    ("sensor", "depth_sigma"): "depth_sigma",
    ("sensor", "drop_rate"): "drop_rate",
    ("sensor", "score_width"): "score_width",
    ("sensor", "score_height"): "score_height",
    ("episode", "d_succ"): "d_succ",
    ("episode", "max_duration"): "max_duration",
    ("episode", "flight_z"): "flight_z",
    ("episode", "zero_semantics"): "zero_semantics",
    ("output", "debug_dump"): "debug_dump",
    ("output", "workers"): "workers",
}


def _coerce(path: str, value, expected):
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number, got %r" % (value,))
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer, got %r" % (value,))
        return value
    if isinstance(expected, tuple):
        if not isinstance(value, expected):
            raise ConfigError(path, "unexpected type %r" % (value,))
        return value
    if not isinstance(value, expected):
        raise ConfigError(path, "expected %s, got %r"
                          % (expected.__name__, value))
    return value


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Parse and validate a scenario document. Unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    kw = {}
    for section, content in doc.items():
        if section in _SCHEMA[None]:
            val = _coerce(section, content, _SCHEMA[None][section])
            kw[_FIELD_MAP[(None, section)]] = val
            continue
        if section not in _SCHEMA or section is None:
            raise ConfigError(section, "unknown configuration key")
        if not isinstance(content, dict):
            raise ConfigError(section, "expected an object")
        for key, value in content.items():
            path = "%s.%s" % (section, key)
            if key not in _SCHEMA[section]:
                raise ConfigError(path, "unknown configuration key")
            kw[_FIELD_MAP[(section, key)]] = _coerce(
                path, value, _SCHEMA[section][key])
    if "grid_dims" in kw:
        dims = kw["grid_dims"]
        if len(dims) != 3 or not all(isinstance(d, int) and not
                                     isinstance(d, bool) for d in dims):
            raise ConfigError("grid.dims", "expected three integers")
        kw["grid_dims"] = tuple(dims)
    if "seeds" in kw:
        seeds = kw["seeds"]
        if not seeds or not all(isinstance(s, int) and not
                                isinstance(s, bool) for s in seeds):
            raise ConfigError("seeds", "expected a non-empty integer list")
    for name in ("scenes", "strategies"):
        if kw.get(name) is not None:
            vals = kw[name]
            if not vals or not all(isinstance(v, str) for v in vals):
                raise ConfigError(name, "expected a non-empty string list")
    cfg = ScenarioConfig(**kw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ScenarioConfig) -> None:
    """Check every field against the module preconditions it feeds."""
    checks = [
        ("strategy", cfg.strategy in STRATEGIES,
         "must be one of %s" % (STRATEGIES,)),
        ("grid.resolution", cfg.grid_resolution > 0, "must be positive"),
        ("grid.dims", all(d >= 1 for d in cfg.grid_dims), "must be >= 1"),
        ("band.z_lo", cfg.z_lo < cfg.z_hi, "must be below band.z_hi"),
        ("score.c", cfg.c >= 0, "must be nonnegative"),
        ("score.gamma", 0 < cfg.gamma <= 1, "must be in (0, 1]"),
        ("score.beta", 0 < cfg.beta <= 1, "must be in (0, 1]"),
        ("planner.top_m", cfg.top_m >= 1, "must be >= 1"),
        ("planner.n_semantic_samples", cfg.n_semantic_samples >= 0,
         "must be >= 0"),
        ("planner.gmm_components", cfg.gmm_components >= 1, "must be >= 1"),
        ("planner.n_trajectories", cfg.n_trajectories >= 1, "must be >= 1"),
        ("planner.max_waypoints", cfg.max_waypoints >= 1, "must be >= 1"),
        ("planner.inflation_radius", cfg.inflation_radius >= 0,
         "must be >= 0"),
        ("planner.exec_waypoints", cfg.exec_waypoints >= 1, "must be >= 1"),
        ("limits.max_speed", cfg.max_speed > 0, "must be positive"),
        ("limits.max_yaw_rate", cfg.max_yaw_rate > 0, "must be positive"),
        ("limits.dt", cfg.dt > 0, "must be positive"),
        ("sensor.width", cfg.sensor_width >= 1, "must be >= 1"),
        ("sensor.height", cfg.sensor_height >= 1, "must be >= 1"),
        ("sensor.hfov_deg", 0 < cfg.hfov_deg < 180, "must be in (0, 180)"),
        ("sensor.max_range", cfg.max_range > 0, "must be positive"),
        ("sensor.depth_sigma", cfg.depth_sigma >= 0, "must be >= 0"),
        ("sensor.drop_rate", 0 <= cfg.drop_rate < 1, "must be in [0, 1)"),
        ("sensor.score_width", cfg.score_width >= 1, "must be >= 1"),
        ("sensor.score_height", cfg.score_height >= 1, "must be >= 1"),
        ("episode.d_succ", cfg.d_succ > 0, "must be positive"),
        ("episode.max_duration", cfg.max_duration >= 0, "must be >= 0"),
        ("output.workers", cfg.workers >= 1, "must be >= 1"),
        ("strategies", cfg.strategies is None or all(
            s in STRATEGIES for s in cfg.strategies),
         "must be drawn from %s" % (STRATEGIES,)),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(key, msg)
    if cfg.flight_z is not None and not (cfg.z_lo <= cfg.flight_z
                                         <= cfg.z_hi):
        raise ConfigError("episode.flight_z", "must lie inside the band")


def load_config(path) -> ScenarioConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", "not valid JSON: %s" % exc) from exc
    return config_from_dict(doc)
