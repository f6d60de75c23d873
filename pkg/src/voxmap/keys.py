"""Voxel addressing: point -> (region, local) keys and back.

Region (0,0,0) spans [0, region_dim*voxel_size)^3; floor semantics make the
arithmetic branch-free for negative coordinates.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .config import MapConfig

# Region coordinates are packed into a single int64 for hashing in the
# native kernels: 21 bits per axis, biased.  Keeps |coord| < 2**20.
_PACK_BIAS = 1 << 20
_PACK_MASK = (1 << 21) - 1


class VoxelKey(NamedTuple):
    region: tuple[int, int, int]
    local: tuple[int, int, int]


def key_for_point(p, cfg: MapConfig) -> VoxelKey:
    """Key of the voxel containing point `p` (3-vector, meters)."""
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise ValueError(f"non-finite point {p!r}")
    d = cfg.region_dim
    gx = math.floor(x / cfg.voxel_size)
    gy = math.floor(y / cfg.voxel_size)
    gz = math.floor(z / cfg.voxel_size)
    rx, lx = divmod(gx, d)
    ry, ly = divmod(gy, d)
    rz, lz = divmod(gz, d)
    return VoxelKey((rx, ry, rz), (lx, ly, lz))


def key_for_global(g, cfg: MapConfig) -> VoxelKey:
    """Key for a global integer voxel coordinate."""
    d = cfg.region_dim
    rx, lx = divmod(int(g[0]), d)
    ry, ly = divmod(int(g[1]), d)
    rz, lz = divmod(int(g[2]), d)
    return VoxelKey((rx, ry, rz), (lx, ly, lz))


def global_coord(key: VoxelKey, cfg: MapConfig) -> tuple[int, int, int]:
    d = cfg.region_dim
    return (
        key.region[0] * d + key.local[0],
        key.region[1] * d + key.local[1],
        key.region[2] * d + key.local[2],
    )


def voxel_center(key: VoxelKey, cfg: MapConfig) -> np.ndarray:
    """World-space center of the voxel addressed by `key`."""
    g = global_coord(key, cfg)
    return (np.asarray(g, dtype=np.float64) + 0.5) * cfg.voxel_size


def voxel_min_corner(key: VoxelKey, cfg: MapConfig) -> np.ndarray:
    g = global_coord(key, cfg)
    return np.asarray(g, dtype=np.float64) * cfg.voxel_size


def local_index(local, region_dim: int) -> int:
    """Linear buffer index of a local coordinate (x fastest)."""
    lx, ly, lz = local
    return lx + region_dim * (ly + region_dim * lz)


def pack_region_coord(r) -> int:
    """Bias-pack a region coordinate triple into one int64."""
    rx, ry, rz = int(r[0]), int(r[1]), int(r[2])
    for c in (rx, ry, rz):
        if not -_PACK_BIAS < c < _PACK_BIAS:
            raise ValueError(f"region coordinate {r!r} out of packable range")
    return (
        ((rx + _PACK_BIAS) & _PACK_MASK) << 42
        | ((ry + _PACK_BIAS) & _PACK_MASK) << 21
        | ((rz + _PACK_BIAS) & _PACK_MASK)
    )


def unpack_region_coord(packed: int) -> tuple[int, int, int]:
    return (
        ((packed >> 42) & _PACK_MASK) - _PACK_BIAS,
        ((packed >> 21) & _PACK_MASK) - _PACK_BIAS,
        (packed & _PACK_MASK) - _PACK_BIAS,
    )
