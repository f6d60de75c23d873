"""Log-odds occupancy model and the decay-rate layer queries."""
from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .config import MapConfig
from .keys import VoxelKey
from .store import VoxelMap


class OccupancyState(Enum):
    UNKNOWN = "unknown"
    FREE = "free"
    OCCUPIED = "occupied"


def prob_to_logodds(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    return math.log(p / (1.0 - p))


def logodds_to_prob(l: float) -> float:
    return 1.0 / (1.0 + math.exp(-l))


def hit_delta(cfg: MapConfig) -> float:
    return prob_to_logodds(cfg.p_hit)


def miss_delta(cfg: MapConfig) -> float:
    return prob_to_logodds(cfg.p_miss)


def logodds_delta(hit: bool, cfg: MapConfig) -> float:
    return hit_delta(cfg) if hit else miss_delta(cfg)


def apply_occupancy_update(logodds: float, delta: float, cfg: MapConfig) -> float:
    """Clamped log-odds accumulation, in float32 like the stored layer."""
    value = np.float32(logodds) + np.float32(delta)
    return float(np.clip(value, np.float32(cfg.clamp_min), np.float32(cfg.clamp_max)))


def occupancy_state(vmap: VoxelMap, key: VoxelKey) -> OccupancyState:
    """Three-state classification of one voxel.

    A voxel is unknown only if never updated: log-odds exactly 0 and, when
    the mean layer is enabled, a zero sample count (a hit/miss sequence can
    legitimately return the log-odds to near 0).
    """
    l = vmap.voxel_values("occupancy", key)
    if l is None:
        return OccupancyState.UNKNOWN
    if l == 0.0:
        if "mean_count" not in vmap.layer_names:
            return OccupancyState.UNKNOWN
        if vmap.voxel_values("mean_count", key) == 0:
            return OccupancyState.UNKNOWN
    threshold = prob_to_logodds(vmap.cfg.occupied_threshold)
    return OccupancyState.OCCUPIED if l > threshold else OccupancyState.FREE


def decay_rate(vmap: VoxelMap, key: VoxelKey) -> float | None:
    """Reflections per meter of ray path: H / sum(d); None when untraversed."""
    hits = vmap.voxel_values("decay_hits", key)
    dist = vmap.voxel_values("decay_distance", key)
    if hits is None or dist is None or dist == 0.0:
        if hits is not None and hits > 0 and (dist is None or dist == 0.0):
            raise ValueError("decay layer invariant violated: hits without path length")
        return None
    return float(hits) / float(dist)
