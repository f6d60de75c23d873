"""voxmap: a parallel occupancy voxel-mapping engine.

Region-hashed layered voxel storage with exact grid-walk ray traversal
and a family of probabilistic integrators (occupancy, decay rate,
NDT occupancy / traversability, TSDF), updated lock-free by a
multi-threaded batch engine with a sequential reference executor.
"""
from .config import MapConfig
from .engine import (
    MODES,
    BatchStats,
    ConfigurationError,
    ExecutorOptions,
    sequential_reference,
    submit_batch,
)
from .exporters import EXPORT_FORMATS, export_map
from .keys import VoxelKey, key_for_point, voxel_center
from .occupancy import OccupancyState, decay_rate, logodds_to_prob, occupancy_state, prob_to_logodds
from .ndt import voxel_gaussian, voxel_intensity_stats, voxel_permeability
from .rayset import read_rayset, records_from_arrays, to_ray_samples, write_rayset
from .scenes import SCENE_KINDS, SceneSpec, generate_scene
from .store import Region, VoxelMap
from .traversal import RaySample, clip_ray, segment_ray, walk_voxels
from .tsdf import tsdf_query

__version__ = "0.1.0"

__all__ = [
    "MODES",
    "MapConfig",
    "BatchStats",
    "ConfigurationError",
    "ExecutorOptions",
    "sequential_reference",
    "submit_batch",
    "EXPORT_FORMATS",
    "export_map",
    "VoxelKey",
    "key_for_point",
    "voxel_center",
    "OccupancyState",
    "decay_rate",
    "logodds_to_prob",
    "occupancy_state",
    "prob_to_logodds",
    "voxel_gaussian",
    "voxel_intensity_stats",
    "voxel_permeability",
    "read_rayset",
    "records_from_arrays",
    "to_ray_samples",
    "write_rayset",
    "SCENE_KINDS",
    "SceneSpec",
    "generate_scene",
    "Region",
    "VoxelMap",
    "RaySample",
    "clip_ray",
    "segment_ray",
    "walk_voxels",
    "tsdf_query",
    "__version__",
]
