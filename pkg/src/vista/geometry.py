"""Shared geometric types: camera poses, intrinsics, rays, planar states."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = a % TWO_PI
    if w > math.pi:
        w -= TWO_PI
    return w


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap to (-pi, pi]."""
    w = np.asarray(a, dtype=float) % TWO_PI
    return np.where(w > math.pi, w - TWO_PI, w)


@dataclass(frozen=True)
class CameraPose:
    """6-DoF camera pose: position in meters plus intrinsic Z-Y-X Euler angles.

    Yaw is the only angle the planner controls; roll and pitch stay zero for
    planned poses but are accepted for generality.
    """

    position: np.ndarray
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "roll", wrap_angle(float(self.roll)))
        object.__setattr__(self, "pitch", wrap_angle(float(self.pitch)))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def rotation(self) -> np.ndarray:
        """Body-to-world rotation, intrinsic Z-Y-X (yaw, then pitch, then roll)."""
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
        return rz @ ry @ rx

    def forward(self) -> np.ndarray:
        """World-frame optical axis (body +x)."""
        return self.rotation()[:, 0]


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model. The body frame is +x forward, +y left, +z up; pixel u
    grows to the right (-y), pixel v grows downward (-z)."""

    width: int
    height: int
    focal_x: float
    focal_y: float
    center_x: float
    center_y: float
    max_range: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError("focal lengths must be positive")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float,
                 max_range: float) -> "CameraIntrinsics":
        """Build square-pixel intrinsics from a horizontal field of view."""
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(width=width, height=height, focal_x=f, focal_y=f,
                   center_x=width / 2.0, center_y=height / 2.0,
                   max_range=max_range)

    def pixel_directions(self) -> np.ndarray:
        """Unit ray directions in the body frame, one per pixel, shape (H*W, 3).

        Row-major pixel order: index = v * width + u.
        """
        u = (np.arange(self.width) + 0.5 - self.center_x) / self.focal_x
        v = (np.arange(self.height) + 0.5 - self.center_y) / self.focal_y
        uu, vv = np.meshgrid(u, v)          # (H, W)
        d = np.stack([np.ones_like(uu), -uu, -vv], axis=-1).reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


_PIXEL_DIR_CACHE: dict = {}


def camera_ray_directions(pose: CameraPose,
                          intrinsics: CameraIntrinsics) -> np.ndarray:
    """World-frame unit ray directions for every pixel, shape (H*W, 3)."""
    key = (intrinsics.width, intrinsics.height, intrinsics.focal_x,
           intrinsics.focal_y, intrinsics.center_x, intrinsics.center_y)
    body = _PIXEL_DIR_CACHE.get(key)
    if body is None:
        body = intrinsics.pixel_directions()
        _PIXEL_DIR_CACHE[key] = body
    return body @ pose.rotation().T


def project_point(pose: CameraPose, intrinsics: CameraIntrinsics,
                  point: np.ndarray):
    """Project a world point to pixel coordinates.

    Returns (u, v, range) or None when the point is behind the camera.
    """
    rel = pose.rotation().T @ (np.asarray(point, dtype=float) - pose.position)
    if rel[0] <= 0.0:
        return None
    u = intrinsics.center_x - intrinsics.focal_x * rel[1] / rel[0]
    v = intrinsics.center_y - intrinsics.focal_y * rel[2] / rel[0]
    return u, v, float(np.linalg.norm(rel))


@dataclass(frozen=True)
class Ray:
    """Half-line with a draw-distance cap. Direction is normalized on
    construction; a zero direction is rejected."""

    origin: np.ndarray
    direction: np.ndarray
    max_range: float = math.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = float(np.linalg.norm(d))
        if n < 1e-12:
            raise ValueError("ray direction must be non-zero")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d / n)
        if self.max_range <= 0:
            raise ValueError("ray max_range must be positive")


@dataclass(frozen=True)
class PlannerState:
    """Planar robot state (x, y, yaw)."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def to_pose(self, z: float) -> CameraPose:
        return CameraPose(position=np.array([self.x, self.y, z]),
                          roll=0.0, pitch=0.0, yaw=self.yaw)


@dataclass(frozen=True)
class ControlLimits:
    """Velocity box limits for the planar single integrator with heading."""

    max_speed: float
    max_yaw_rate: float
    dt: float

    def __post_init__(self):
        if self.max_speed <= 0 or self.max_yaw_rate <= 0 or self.dt <= 0:
            raise ValueError("control limits must be strictly positive")

    @property
    def step_distance(self) -> float:
        return self.max_speed * self.dt

    @property
    def step_yaw(self) -> float:
        return self.max_yaw_rate * self.dt
