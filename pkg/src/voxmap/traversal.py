"""Exact 3D grid traversal and ray preprocessing.

The walk enumerates every voxel whose interior the segment crosses, in
order, with per-voxel entry/exit ray parameters.  Tie-breaks at exact
face/edge/corner crossings step axes in fixed order x, then y, then z;
grazed corner voxels are emitted with zero path length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .config import MapConfig
from .keys import VoxelKey, key_for_global


@dataclass(frozen=True)
class RaySample:
    """One sensor ray: origin to endpoint, plus return metadata.

    has_sample is False for miss-only rays (truncated rays and the leading
    segments of a split ray), whose endpoint is not a real sensor return.
    """

    origin: np.ndarray
    end: np.ndarray
    intensity: float = 0.0
    has_sample: bool = True
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "end", np.asarray(self.end, dtype=np.float64))
        if not (np.all(np.isfinite(self.origin)) and np.all(np.isfinite(self.end))):
            raise ValueError("ray endpoints must be finite")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.origin))


class VoxelVisit(NamedTuple):
    key: VoxelKey
    entry_t: float
    exit_t: float
    path_length: float


def _walk_grid(origin, end, cell: float):
    """Core DDA on a grid of edge `cell`.

    Returns (coords, entry_t, exit_t): integer cell coordinates in visit
    order and normalized ray parameters in [0, 1].
    """
    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])
    ex, ey, ez = float(end[0]), float(end[1]), float(end[2])
    vx, vy, vz = ex - ox, ey - oy, ez - oz

    cur = [math.floor(ox / cell), math.floor(oy / cell), math.floor(oz / cell)]
    last = (math.floor(ex / cell), math.floor(ey / cell), math.floor(ez / cell))

    step = [0, 0, 0]
    t_max = [math.inf, math.inf, math.inf]
    t_delta = [math.inf, math.inf, math.inf]
    o = (ox, oy, oz)
    v = (vx, vy, vz)
    for a in range(3):
        if v[a] > 0:
            step[a] = 1
            t_max[a] = ((cur[a] + 1) * cell - o[a]) / v[a]
            t_delta[a] = cell / v[a]
        elif v[a] < 0:
            step[a] = -1
            t_max[a] = (cur[a] * cell - o[a]) / v[a]
            t_delta[a] = -cell / v[a]

    coords = []
    entries = []
    exits = []
    t_prev = 0.0
    remaining = sum(abs(cur[a] - last[a]) for a in range(3))
    while True:
        if tuple(cur) == last:
            coords.append(tuple(cur))
            entries.append(t_prev)
            exits.append(1.0)
            break
        if remaining <= 0:
            # Numerical fallback: terminate at the end cell.
            coords.append(last)
            entries.append(t_prev)
            exits.append(1.0)
            break
        axis = 0
        if t_max[1] < t_max[axis]:
            axis = 1
        if t_max[2] < t_max[axis]:
            axis = 2
        t_next = min(max(t_max[axis], t_prev), 1.0)
        coords.append(tuple(cur))
        entries.append(t_prev)
        exits.append(t_next)
        cur[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        t_prev = t_next
        remaining -= 1

    return coords, entries, exits


def walk_voxels(ray: RaySample, cfg: MapConfig) -> list[VoxelVisit]:
    """All voxels crossed by the ray, origin to end, with path lengths."""
    coords, entries, exits = _walk_grid(ray.origin, ray.end, cfg.voxel_size)
    length = ray.length
    return [
        VoxelVisit(key_for_global(c, cfg), t0, t1, (t1 - t0) * length)
        for c, t0, t1 in zip(coords, entries, exits)
    ]


def walk_voxels_global(origin, end, cfg: MapConfig):
    """Array form of walk_voxels: (global coords [n,3], entry_t, exit_t)."""
    coords, entries, exits = _walk_grid(origin, end, cfg.voxel_size)
    return (
        np.asarray(coords, dtype=np.int64),
        np.asarray(entries, dtype=np.float64),
        np.asarray(exits, dtype=np.float64),
    )


def walk_regions(ray: RaySample, cfg: MapConfig) -> list[tuple[int, int, int]]:
    """Region coordinates crossed by the ray (coarse DDA for prefetch)."""
    coords, _, _ = _walk_grid(ray.origin, ray.end, cfg.region_size)
    return coords


def clip_ray(ray: RaySample, cfg: MapConfig) -> RaySample:
    """Shorten rays beyond max_ray_range; clipped rays become miss-only."""
    length = ray.length
    if length <= cfg.max_ray_range:
        return ray
    direction = (ray.end - ray.origin) / length
    return replace(
        ray,
        end=ray.origin + direction * cfg.max_ray_range,
        has_sample=False,
    )


def segment_ray(ray: RaySample, cfg: MapConfig) -> list[RaySample]:
    """Split a ray into contiguous segments of at most segment_length.

    Only the final segment keeps the original has_sample flag; leading
    segments contribute miss evidence only.
    """
    length = ray.length
    seg = cfg.segment_length
    if length <= seg:
        return [ray]
    count = math.ceil(length / seg)
    direction = (ray.end - ray.origin) / length
    out = []
    for i in range(count):
        t0 = i * seg
        t1 = min((i + 1) * seg, length)
        is_last = i == count - 1
        out.append(
            replace(
                ray,
                origin=ray.origin + direction * t0,
                end=ray.end if is_last else ray.origin + direction * t1,
                has_sample=ray.has_sample if is_last else False,
            )
        )
    return out
