"""Information-gain scoring.

Per-pixel view-diversity gain compares a candidate ray direction with the
directions already stored in the voxel it hits; image-level gains average
over pixels; the trajectory score combines discounted geometric and
semantic image gains along a candidate path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .codebook import ViewDirectionSet
from .geometry import CameraPose


def pixel_gain(stored, candidate_direction) -> float:
    """View-diversity gain of a candidate direction against stored views.

    gain = (min over stored v of -v . d + 1) / 2: 0 when the candidate
    repeats a stored direction exactly, 1 when it is antipodal to every
    stored direction, 0.5 at right angles.
    """
    if isinstance(stored, ViewDirectionSet):
        dirs = stored.directions()
    else:
        dirs = np.atleast_2d(np.asarray(stored, dtype=float))
    if dirs.shape[0] == 0:
        raise ValueError("stored direction set is empty")
    d = np.asarray(candidate_direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("candidate direction must be unit-norm")
    return float(((-dirs @ d).min() + 1.0) * 0.5)


def image_geometric_gain(gain_image: np.ndarray) -> float:
    """Mean pixel gain over the rendered gain image."""
    img = np.asarray(gain_image, dtype=float)
    if img.size == 0:
        raise ValueError("empty gain image")
    return float(img.mean())


def image_semantic_gain(semantic_image: np.ndarray) -> float:
    """Mean pixel value over the rendered semantic image."""
    img = np.asarray(semantic_image, dtype=float)
    if img.size == 0:
        raise ValueError("empty semantic image")
    return float(img.mean())


@dataclass(frozen=True)
class WaypointScore:
    """Image-level gains evaluated at one candidate pose."""

    geometric: float
    semantic: float
    pose: CameraPose | None = None


@dataclass(frozen=True)
class ScoreWeights:
    """Weights of the trajectory score.

    c weighs the geometric term and is decayed multiplicatively by
    beta**replan_index every planning cycle; gamma discounts waypoints by
    position in the path.
    """

    c: float = 2.0
    gamma: float = 0.9
    beta: float = 0.99
    replan_index: int = 0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must be in (0, 1]")
        if self.replan_index < 0:
            raise ValueError("replan_index must be nonnegative")


def trajectory_score(waypoints, weights: ScoreWeights) -> float:
    """Discounted sum of per-waypoint gains along a path.

    score = sum_k gamma^(K-k) * (c * geometric_k + semantic_k) with k the
    1-based waypoint index and K the path length, so the final waypoint
    carries full weight. The caller passes weights whose c has already
    been decayed for the current replanning cycle.
    """
    wps = list(waypoints)
    if not wps:
        raise ValueError("trajectory has no waypoints")
    big_k = len(wps)
    total = 0.0
    for k, wp in enumerate(wps, start=1):
        total += (weights.gamma ** (big_k - k)) * (
            weights.c * wp.geometric + wp.semantic)
    return total


def decay_weight(weights: ScoreWeights) -> ScoreWeights:
    """One replanning-cycle decay: c <- beta**i * c, then i <- i + 1."""
    return replace(weights,
                   c=weights.c * weights.beta ** weights.replan_index,
                   replan_index=weights.replan_index + 1)
