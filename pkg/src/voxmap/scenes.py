"""Synthetic scanning-sensor scenes for benchmarks and tests.

Each generator simulates a moving sensor against analytic geometry and is
deterministic for a given seed.  The corridor scene is constructed so
that sensor returns land strictly inside the first voxel row behind each
wall plane and the in-wall portion of every ray stays inside its endpoint
voxel; wall voxels therefore only ever receive hits and interior voxels
only misses, which keeps concurrent update order immaterial.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rayset import records_from_arrays

SCENE_KINDS = ("corridor", "open-field", "thin-poles", "mixed-indoor-outdoor")

# Clearance kept between a nudged endpoint and any voxel boundary, meters.
_BOUNDARY_SLACK = 1e-3


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "corridor"
    extents: tuple[float, float, float] = (20.0, 4.0, 3.0)
    rate: float = 300_000.0
    duration: float = 0.1
    noise: float = 0.0
    seed: int = 0
    max_range: float = 20.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.rate <= 0 or self.duration <= 0:
            raise ValueError("rate and duration must be positive")

    @property
    def ray_count(self) -> int:
        return int(round(self.rate * self.duration))


def generate_scene(spec: SceneSpec) -> np.ndarray:
    """Ray records for the scene (OHMB1 layout), deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    n = spec.ray_count
    if spec.kind == "corridor":
        return _corridor(spec, rng, n, t_offset=0.0)
    if spec.kind == "open-field":
        return _open_field(spec, rng, n, t_offset=0.0)
    if spec.kind == "thin-poles":
        return _thin_poles(spec, rng, n)
    return _mixed(spec, rng)


# -- corridor ------------------------------------------------------------

def _wall_hit_2d(oy, oz, dy, dz, half_w, half_h):
    """First wall hit of a cross-sectional ray from (oy, oz); returns
    (axis, t) with axis 1 = side wall, 2 = floor/ceiling."""
    t_side = math.inf if dy == 0 else (math.copysign(half_w, dy) - oy) / dy
    t_vert = math.inf if dz == 0 else (math.copysign(half_h, dz) - oz) / dz
    return (1, t_side) if t_side <= t_vert else (2, t_vert)


def _nudge_depth(p, d, wall_axis, voxel=0.1):
    """Depth past the wall plane such that the in-wall path stays inside
    the endpoint voxel with slack to spare; 0 if infeasible."""
    depth = 0.05 - _BOUNDARY_SLACK
    na = abs(d[wall_axis])
    if na <= 0:
        return 0.0
    for axis in range(3):
        if axis == wall_axis:
            continue
        da = d[axis]
        if da == 0:
            continue
        # distance from the crossing point to the next boundary ahead
        frac = (p[axis] / voxel) % 1.0
        margin = (1.0 - frac) * voxel if da > 0 else frac * voxel
        margin -= _BOUNDARY_SLACK
        if margin <= 0:
            return 0.0
        depth = min(depth, 0.9 * margin * na / abs(da))
    return depth if depth >= 1.5e-3 else 0.0


def _corridor(spec: SceneSpec, rng, n, t_offset):
    """Spinning cross-sectional fan moving along the corridor axis."""
    length, width, height = spec.extents
    half_w, half_h = width / 2.0, height / 2.0
    speed = 0.5
    origins = np.empty((n, 3))
    ends = np.empty((n, 3))
    timestamps = t_offset + np.arange(n) / spec.rate
    for i in range(n):
        t = timestamps[i] - t_offset
        x = (speed * t) % max(length - 1.0, 1.0) + 0.5
        o = np.array([x, 0.0, 0.0])
        while True:
            phi = rng.uniform(0.0, 2.0 * math.pi)
            dy, dz = math.cos(phi), math.sin(phi)
            axis2d, t_hit = _wall_hit_2d(0.0, 0.0, dy, dz, half_w, half_h)
            d = np.array([0.0, dy, dz])
            p = o + t_hit * d
            if spec.noise > 0.0:
                # aim jitter along the corridor axis, re-aimed from the sensor
                p[0] = min(max(p[0] + rng.normal(0.0, spec.noise), 0.3), length - 0.3)
                d = p - o
                d /= np.linalg.norm(d)
                axis2d, t_hit = _wall_hit_2d(o[1], o[2], d[1], d[2], half_w, half_h)
                p = o + t_hit * d
            depth = _nudge_depth(p, d, axis2d)
            if depth <= 0.0:
                continue
            e = p + d * (depth / abs(d[axis2d]))
            break
        origins[i] = o
        ends[i] = e
    intensities = rng.uniform(5.0, 50.0, n).astype(np.float32)
    return records_from_arrays(timestamps, origins, ends, intensities,
                               np.ones(n, dtype=bool))


# -- open field ----------------------------------------------------------

def _open_field(spec: SceneSpec, rng, n, t_offset):
    """Ground plane under an elevated sensor: steep rays return, the rest
    fly out to max range as miss-only."""
    length = spec.extents[0]
    sensor_z = 1.5
    speed = 0.5
    timestamps = t_offset + np.arange(n) / spec.rate
    x = (speed * (timestamps - t_offset)) % max(length, 1.0)
    origins = np.stack([x, np.zeros(n), np.full(n, sensor_z)], axis=1)

    # uniform directions on the sphere
    u = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    s = np.sqrt(1.0 - u * u)
    d = np.stack([s * np.cos(phi), s * np.sin(phi), u], axis=1)

    t_ground = np.where(d[:, 2] < -1e-6, -sensor_z / np.minimum(d[:, 2], -1e-6),
                        np.inf)
    if spec.noise > 0.0:
        t_ground = t_ground + rng.normal(0.0, spec.noise, n)
    hit = t_ground < spec.max_range
    reach = np.where(hit, t_ground + 0.03, spec.max_range)
    ends = origins + d * reach[:, None]
    intensities = rng.uniform(5.0, 50.0, n).astype(np.float32)
    return records_from_arrays(timestamps, origins, ends, intensities, hit)


# -- thin poles ----------------------------------------------------------

def _thin_poles(spec: SceneSpec, rng, n):
    """Sub-voxel-width vertical cylinders: interleaved returns and
    pass-throughs through the same voxels (erosion testbed)."""
    length, width, _ = spec.extents
    radius = 0.03
    pole_count = max(3, int(length))
    poles = np.stack(
        [
            rng.uniform(1.5, max(length - 1.5, 2.0), pole_count),
            rng.uniform(-width / 2.0 + 0.5, width / 2.0 - 0.5, pole_count),
        ],
        axis=1,
    )
    sensor = np.array([0.3, 0.0, 1.2])
    timestamps = np.arange(n) / spec.rate
    origins = np.tile(sensor, (n, 1))
    ends = np.empty((n, 3))
    has_sample = np.zeros(n, dtype=bool)
    for i in range(n):
        az = rng.uniform(-0.5, 0.5)
        el = rng.uniform(-0.15, 0.15)
        d = np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )
        t_best = spec.max_range
        hit = False
        for px, py in poles:
            t = _ray_circle(sensor[0], sensor[1], d[0], d[1], px, py, radius)
            if t is not None and t < t_best:
                t_best = t
                hit = True
        if hit and spec.noise > 0.0:
            t_best = max(0.1, t_best + rng.normal(0.0, spec.noise))
        ends[i] = sensor + d * t_best
        has_sample[i] = hit
    intensities = rng.uniform(5.0, 50.0, n).astype(np.float32)
    return records_from_arrays(timestamps, origins, ends, intensities, has_sample)


def _ray_circle(ox, oy, dx, dy, cx, cy, r):
    """Smallest positive 2D ray parameter hitting the circle, or None."""
    fx, fy = ox - cx, oy - cy
    a = dx * dx + dy * dy
    if a <= 0:
        return None
    b = 2.0 * (fx * dx + fy * dy)
    c = fx * fx + fy * fy - r * r
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return None
    t = (-b - math.sqrt(disc)) / (2.0 * a)
    return t if t > 1e-6 else None


# -- mixed indoor/outdoor ------------------------------------------------

def _mixed(spec: SceneSpec, rng):
    """Alternating 1 s episodes of corridor (short rays) and open field
    (many maximum-length rays), mimicking indoor/outdoor transitions."""
    episode = 1.0
    total = spec.duration
    chunks = []
    t0 = 0.0
    indoor = True
    while t0 < total - 1e-12:
        dt = min(episode, total - t0)
        sub = SceneSpec(
            kind="corridor" if indoor else "open-field",
            extents=spec.extents,
            rate=spec.rate,
            duration=dt,
            noise=spec.noise,
            seed=spec.seed,
            max_range=spec.max_range,
        )
        count = sub.ray_count
        if count > 0:
            if indoor:
                chunks.append(_corridor(sub, rng, count, t_offset=t0))
            else:
                chunks.append(_open_field(sub, rng, count, t_offset=t0))
        t0 += dt
        indoor = not indoor
    return np.concatenate(chunks)
