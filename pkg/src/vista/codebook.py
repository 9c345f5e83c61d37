"""Spherical direction codebook and per-voxel view-direction sets.

Occupied voxels remember the directions from which sensor rays have hit
them. The default storage quantizes each direction onto a fixed codebook
of unit vectors built from an octahedral map of the sphere, so a voxel's
whole direction history fits in a small bitmask. An exact mode that keeps
the raw unit vectors is available for verification.
"""

from __future__ import annotations

import numpy as np

# Octahedral-map grid. DIRECTION_COUNT = GRID_U * GRID_V bins cover the
# full sphere; bitmask storage uses ceil(96 / 64) = 2 words per voxel.
GRID_U = 12
GRID_V = 8
DIRECTION_COUNT = GRID_U * GRID_V
MASK_WORDS = 2

# Largest angle between any unit vector and the center of the bin it
# quantizes to, for the 12x8 grid (measured by dense per-bin sweeps and
# rounded up). Quantizing a stored direction therefore perturbs it by at
# most this angle.
MAX_BIN_HALF_ANGLE = 0.4360  # radians (~24.98 degrees)


def octahedral_encode(dirs: np.ndarray) -> np.ndarray:
    """Map unit vectors to the octahedral uv square [0, 1]^2. (n, 3) -> (n, 2)."""
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    p = d / np.abs(d).sum(axis=1, keepdims=True)
    px, py, pz = p[:, 0].copy(), p[:, 1].copy(), p[:, 2]
    neg = pz < 0
    fx = (1.0 - np.abs(py)) * np.where(px >= 0, 1.0, -1.0)
    fy = (1.0 - np.abs(px)) * np.where(py >= 0, 1.0, -1.0)
    px[neg] = fx[neg]
    py[neg] = fy[neg]
    return np.stack([px * 0.5 + 0.5, py * 0.5 + 0.5], axis=1)


def octahedral_decode(uv: np.ndarray) -> np.ndarray:
    """Inverse of octahedral_encode; returns unit vectors. (n, 2) -> (n, 3)."""
    f = np.asarray(uv, dtype=float).reshape(-1, 2) * 2.0 - 1.0
    x, y = f[:, 0].copy(), f[:, 1].copy()
    z = 1.0 - np.abs(x) - np.abs(y)
    t = np.maximum(-z, 0.0)
    x += np.where(x >= 0, -t, t)
    y += np.where(y >= 0, -t, t)
    d = np.stack([x, y, z], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _build_codebook() -> np.ndarray:
    us = (np.arange(GRID_U) + 0.5) / GRID_U
    vs = (np.arange(GRID_V) + 0.5) / GRID_V
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    cb = octahedral_decode(np.stack([uu.ravel(), vv.ravel()], axis=1))
    cb.setflags(write=False)
    return cb


#: (DIRECTION_COUNT, 3) unit vectors; bin index iu * GRID_V + iv.
CODEBOOK: np.ndarray = _build_codebook()


def quantize_directions(dirs: np.ndarray) -> np.ndarray:
    """Codebook bin index for each unit vector. (n, 3) -> (n,) int64."""
    uv = octahedral_encode(dirs)
    iu = np.minimum((uv[:, 0] * GRID_U).astype(np.int64), GRID_U - 1)
    iv = np.minimum((uv[:, 1] * GRID_V).astype(np.int64), GRID_V - 1)
    return iu * GRID_V + iv


def bins_to_mask(bins: np.ndarray) -> np.ndarray:
    """Pack bin indices into a (MASK_WORDS,) uint64 bitmask."""
    mask = np.zeros(MASK_WORDS, dtype=np.uint64)
    for b in np.unique(np.asarray(bins, dtype=np.int64)):
        mask[b >> 6] |= np.uint64(1) << np.uint64(b & 63)
    return mask


def mask_to_bins(mask: np.ndarray) -> np.ndarray:
    """Unpack a bitmask into sorted bin indices."""
    out = []
    for w in range(MASK_WORDS):
        word = int(mask[w])
        while word:
            low = word & -word
            out.append(w * 64 + low.bit_length() - 1)
            word ^= low
    return np.array(out, dtype=np.int64)


class ViewDirectionSet:
    """Monotone set of unit view directions for one voxel.

    In the default bitmask mode directions are quantized onto CODEBOOK and
    only bin occupancy is kept. With exact=True the raw vectors are stored
    as well, which is the verification oracle for the quantized gain.
    """

    __slots__ = ("mask", "_exact", "exact")

    def __init__(self, exact: bool = False):
        self.mask = np.zeros(MASK_WORDS, dtype=np.uint64)
        self.exact = bool(exact)
        self._exact: list = [] if exact else None

    def add(self, direction: np.ndarray) -> None:
        d = np.asarray(direction, dtype=float).reshape(3)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-6:
            raise ValueError("view direction must be unit-norm")
        b = int(quantize_directions(d[None, :])[0])
        self.mask[b >> 6] |= np.uint64(1) << np.uint64(b & 63)
        if self.exact:
            self._exact.append(d.copy())

    def directions(self) -> np.ndarray:
        """Stored directions: raw vectors in exact mode, bin centers otherwise."""
        if self.exact:
            if not self._exact:
                return np.zeros((0, 3))
            return np.array(self._exact)
        bins = mask_to_bins(self.mask)
        return CODEBOOK[bins] if bins.size else np.zeros((0, 3))

    def quantized_directions(self) -> np.ndarray:
        """Bin-center directions for the occupied bins."""
        bins = mask_to_bins(self.mask)
        return CODEBOOK[bins] if bins.size else np.zeros((0, 3))

    def __len__(self) -> int:
        if self.exact:
            return len(self._exact)
        return sum(int(w).bit_count() for w in self.mask)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "ViewDirectionSet":
        s = cls(exact=False)
        s.mask = np.asarray(mask, dtype=np.uint64).reshape(MASK_WORDS).copy()
        return s

    @classmethod
    def from_directions(cls, dirs: np.ndarray,
                        exact: bool = False) -> "ViewDirectionSet":
        s = cls(exact=exact)
        for d in np.asarray(dirs, dtype=float).reshape(-1, 3):
            s.add(d)
        return s
