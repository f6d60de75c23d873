"""Per-voxel data layers.

Each region carries one contiguous buffer per enabled layer; a layer stores
a fixed number of scalar components per voxel.  Layer ids are stable and
appear in the on-disk map format.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LayerSpec:
    name: str
    layer_id: int
    dtype: np.dtype
    components: int


OCCUPANCY = LayerSpec("occupancy", 1, np.dtype(np.float32), 1)
MEAN = LayerSpec("mean", 2, np.dtype(np.uint32), 1)
MEAN_COUNT = LayerSpec("mean_count", 3, np.dtype(np.uint32), 1)
COV_SQRT = LayerSpec("cov_sqrt", 4, np.dtype(np.float32), 6)
HIT_COUNT = LayerSpec("hit_count", 5, np.dtype(np.uint32), 1)
MISS_COUNT = LayerSpec("miss_count", 6, np.dtype(np.uint32), 1)
INTENSITY = LayerSpec("intensity", 7, np.dtype(np.float32), 2)
DECAY_HITS = LayerSpec("decay_hits", 8, np.dtype(np.uint32), 1)
DECAY_DISTANCE = LayerSpec("decay_distance", 9, np.dtype(np.float64), 1)
TSDF = LayerSpec("tsdf", 10, np.dtype(np.float32), 2)

ALL_LAYERS = (
    OCCUPANCY,
    MEAN,
    MEAN_COUNT,
    COV_SQRT,
    HIT_COUNT,
    MISS_COUNT,
    INTENSITY,
    DECAY_HITS,
    DECAY_DISTANCE,
    TSDF,
)

BY_NAME = {spec.name: spec for spec in ALL_LAYERS}
BY_ID = {spec.layer_id: spec for spec in ALL_LAYERS}

# Layers each integrator mode requires on the map.
MODE_LAYERS = {
    "occupancy": ("occupancy", "mean", "mean_count"),
    "decay": ("occupancy", "mean", "mean_count", "decay_hits", "decay_distance"),
    "ndt-om": ("occupancy", "mean", "mean_count", "cov_sqrt"),
    "ndt-tm": (
        "occupancy",
        "mean",
        "mean_count",
        "cov_sqrt",
        "hit_count",
        "miss_count",
        "intensity",
    ),
    "tsdf": ("tsdf",),
}


def resolve(names) -> tuple[LayerSpec, ...]:
    specs = []
    for name in names:
        if name not in BY_NAME:
            raise KeyError(f"unknown layer {name!r}")
        specs.append(BY_NAME[name])
    return tuple(specs)
