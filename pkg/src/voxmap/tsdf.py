"""Projective truncated signed distance integration helpers."""
from __future__ import annotations

import numpy as np

from .config import MapConfig
from .keys import key_for_point
from .store import VoxelMap


def projective_distance(sample_range: float, center_projection: float,
                        cfg: MapConfig) -> float:
    """Signed distance of a voxel from the surface sample along the ray.

    Positive between sensor and surface, clamped to the truncation band.
    """
    d = sample_range - center_projection
    return float(np.clip(d, -cfg.tsdf_truncation, cfg.tsdf_truncation))


def merge(distance: float, weight: float, new_distance: float, cfg: MapConfig,
          new_weight: float = 1.0) -> tuple[float, float]:
    """Weighted running average of TSDF observations, weight capped."""
    w = min(weight + new_weight, cfg.tsdf_max_weight)
    d = (weight * distance + new_weight * new_distance) / (weight + new_weight)
    return d, w


def tsdf_query(vmap: VoxelMap, point):
    """(distance, weight) of the voxel containing `point`; None if unobserved."""
    values = vmap.voxel_values("tsdf", key_for_point(point, vmap.cfg))
    if values is None or values[1] == 0.0:
        return None
    return float(values[0]), float(values[1])
