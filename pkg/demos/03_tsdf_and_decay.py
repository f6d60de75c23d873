"""TSDF surface reconstruction and decay-rate occupancy.

Observes a flat wall with perpendicular rays and reads the signed-distance
profile through it, then runs the same evidence through the decay-rate
integrator and prints reflections-per-meter for wall and free voxels.
"""
import numpy as np

from voxmap import (
    MapConfig,
    RaySample,
    VoxelMap,
    decay_rate,
    key_for_point,
    submit_batch,
    tsdf_query,
)
from voxmap.layers import MODE_LAYERS

cfg = MapConfig()
wall_x = 2.02  # just inside voxel [2.0, 2.1) so returns land off the grid line
rays = [
    RaySample((0.5, 0.05 + 0.1 * iy, 0.05), (wall_x, 0.05 + 0.1 * iy, 0.05),
              has_sample=True)
    for iy in range(10)
    for _ in range(20)
]

tsdf_map = VoxelMap(cfg, MODE_LAYERS["tsdf"])
submit_batch(tsdf_map, rays, "tsdf")
print(f"TSDF profile along y = 0.05 (wall at x = {wall_x}):")
for x in np.arange(1.65, 2.36, 0.1):
    q = tsdf_query(tsdf_map, (x, 0.05, 0.05))
    if q:
        print(f"  x={x:4.2f}  d={q[0]:+.3f} m  w={q[1]:.0f}")

decay_map = VoxelMap(cfg, MODE_LAYERS["decay"])
submit_batch(decay_map, rays, "decay")
print("\ndecay rate (reflections per meter of ray path):")
for x, label in [(1.0, "free space"), (2.05, "wall voxel")]:
    lam = decay_rate(decay_map, key_for_point((x, 0.05, 0.05), cfg))
    print(f"  {label:11s} x={x:4.2f}  lambda={lam:.1f} /m")
