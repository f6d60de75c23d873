"""Map configuration shared by the store, traversal and integrators."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class MapConfig:
    """Geometry and sensor-model parameters for a voxel map.

    All distances are in meters, occupancy values in log-odds.
    """

    voxel_size: float = 0.1
    region_dim: int = 32
    p_hit: float = 0.7
    p_miss: float = 0.4
    clamp_min: float = -2.0
    clamp_max: float = 3.5
    occupied_threshold: float = 0.5
    max_ray_range: float = 20.0
    segment_length: float = 10.0
    tsdf_truncation: float = 0.3
    tsdf_max_weight: float = 100.0
    ndt_sensor_noise: float = 0.05
    ndt_reset_threshold: float = -1.0
    ndt_miss_likelihood_threshold: float = 0.2

    def __post_init__(self):
        if not (self.voxel_size > 0 and math.isfinite(self.voxel_size)):
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        if self.region_dim < 1:
            raise ValueError(f"region_dim must be >= 1, got {self.region_dim}")
        if not self.clamp_min < 0 < self.clamp_max:
            raise ValueError(
                f"clamp band must straddle 0, got [{self.clamp_min}, {self.clamp_max}]"
            )
        if not 0.5 < self.p_hit < 1.0:
            raise ValueError(f"p_hit must be in (0.5, 1), got {self.p_hit}")
        if not 0.0 < self.p_miss < 0.5:
            raise ValueError(f"p_miss must be in (0, 0.5), got {self.p_miss}")
        if not self.segment_length > self.voxel_size:
            raise ValueError("segment_length must exceed voxel_size")
        if not self.tsdf_truncation >= self.voxel_size:
            raise ValueError("tsdf_truncation must be at least one voxel")
        if not self.ndt_sensor_noise > 0:
            raise ValueError("ndt_sensor_noise must be positive")
        if not 0.0 < self.occupied_threshold < 1.0:
            raise ValueError("occupied_threshold must be a probability in (0, 1)")
        if self.max_ray_range <= 0:
            raise ValueError("max_ray_range must be positive")

    @property
    def region_size(self) -> float:
        """Edge length of one region in meters."""
        return self.region_dim * self.voxel_size

    @property
    def voxels_per_region(self) -> int:
        return self.region_dim ** 3
