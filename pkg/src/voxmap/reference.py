"""Pure-Python integration paths.

These implement the integrator semantics directly on top of the Python
walk and the math modules, processing rays strictly in input order with
no CAS machinery.  They are the canonical result the native parallel
executor is checked against, and the backend of the sequential executor.
"""
from __future__ import annotations

import numpy as np

from . import ndt as ndtmod
from . import occupancy as occ
from .config import MapConfig
from .store import VoxelMap
from .subvoxel import pack_mean, unpack_mean, update_packed_mean
from .traversal import RaySample, walk_voxels_global

_F32 = np.float32


def _clamped_add(buf, idx, delta32, cfg: MapConfig):
    buf[idx] = np.clip(buf[idx] + delta32, _F32(cfg.clamp_min), _F32(cfg.clamp_max))


def _region_and_local(g, vmap: VoxelMap):
    d = vmap.cfg.region_dim
    rx, lx = divmod(int(g[0]), d)
    ry, ly = divmod(int(g[1]), d)
    rz, lz = divmod(int(g[2]), d)
    region = vmap.get_or_create_region((rx, ry, rz))
    return region, lx + d * (ly + d * lz)


def integrate_occupancy_segment(vmap: VoxelMap, seg: RaySample,
                                decay: bool = False) -> int:
    """Hit/miss (+ mean, + decay) updates for one ray segment; returns visits."""
    cfg = vmap.cfg
    coords, t0, t1 = walk_voxels_global(seg.origin, seg.end, cfg)
    n = len(coords)
    hit32 = _F32(occ.hit_delta(cfg))
    miss32 = _F32(occ.miss_delta(cfg))
    length = seg.length
    for i in range(n):
        region, li = _region_and_local(coords[i], vmap)
        obuf = region.buffers["occupancy"]
        sample_hit = seg.has_sample and i == n - 1
        if sample_hit:
            _clamped_add(obuf, li, hit32, cfg)
            if "mean" in region.buffers:
                g = coords[i]
                offset = seg.end / cfg.voxel_size - g
                mbuf = region.buffers["mean"]
                cbuf = region.buffers["mean_count"]
                packed, count = update_packed_mean(int(mbuf[li]), int(cbuf[li]), offset)
                mbuf[li] = packed
                cbuf[li] = count
        else:
            _clamped_add(obuf, li, miss32, cfg)
        if decay:
            region.buffers["decay_distance"][li] += (t1[i] - t0[i]) * length
            if sample_hit:
                region.buffers["decay_hits"][li] += 1
    return n


def ndt_phase1_segment(vmap: VoxelMap, seg: RaySample, tm: bool = False) -> int:
    """Likelihood-scaled miss pass for one segment (NDT phase 1)."""
    cfg = vmap.cfg
    coords, t0, t1 = walk_voxels_global(seg.origin, seg.end, cfg)
    n = len(coords)
    miss = occ.miss_delta(cfg)
    for i in range(n):
        if seg.has_sample and i == n - 1:
            continue
        region, li = _region_and_local(coords[i], vmap)
        obuf = region.buffers["occupancy"]
        cbuf = region.buffers["mean_count"]
        nsamples = int(cbuf[li])
        g = 1.0
        if nsamples >= ndtmod.MIN_SAMPLES_FOR_GAUSSIAN:
            offset = unpack_mean(int(region.buffers["mean"][li]))
            mu = (coords[i] + offset) * cfg.voxel_size
            S = ndtmod.sqrt_to_matrix(region.buffers["cov_sqrt"][li * 6:li * 6 + 6])
            g, _ = ndtmod.gaussian_miss_weight(
                mu, S @ S.T, seg.origin, seg.end, t0[i], t1[i], cfg.ndt_sensor_noise
            )
        _clamped_add(obuf, li, _F32(g * miss), cfg)
        if tm and (nsamples < ndtmod.MIN_SAMPLES_FOR_GAUSSIAN
                   or g >= cfg.ndt_miss_likelihood_threshold):
            region.buffers["miss_count"][li] += 1
        if obuf[li] < cfg.ndt_reset_threshold and cbuf[li] > 0:
            _reset_voxel_buffers(region, li, tm)
    return n


def _reset_voxel_buffers(region, li: int, tm: bool) -> None:
    region.buffers["mean_count"][li] = 0
    region.buffers["mean"][li] = 0
    region.buffers["cov_sqrt"][li * 6:li * 6 + 6] = 0
    if tm:
        region.buffers["hit_count"][li] = 0
        region.buffers["miss_count"][li] = 0
        region.buffers["intensity"][li * 2:li * 2 + 2] = 0


def apply_ndt_hits(vmap: VoxelMap, buckets, tm: bool = False) -> None:
    """NDT phase 2: fold all samples of each voxel in with one exclusive owner.

    `buckets` maps a global voxel coordinate triple to the list of
    (sample position, intensity) pairs that fell in that voxel, in ray
    order.  Mean and covariance are accumulated in full precision for the
    batch and written back packed / float32 at the end.
    """
    cfg = vmap.cfg
    hit32 = _F32(occ.hit_delta(cfg))
    for g in sorted(buckets):
        samples = buckets[g]
        region, li = _region_and_local(g, vmap)
        obuf = region.buffers["occupancy"]
        mbuf = region.buffers["mean"]
        cbuf = region.buffers["mean_count"]
        covbuf = region.buffers["cov_sqrt"]

        n = int(cbuf[li])
        if n > 0:
            offset = unpack_mean(int(mbuf[li]))
            mu = (np.asarray(g, dtype=np.float64) + offset) * cfg.voxel_size
        else:
            mu = np.zeros(3)
        S = ndtmod.sqrt_to_matrix(covbuf[li * 6:li * 6 + 6])

        for pos, intensity in samples:
            _clamped_add(obuf, li, hit32, cfg)
            if tm:
                ibuf = region.buffers["intensity"]
                _, imean, im2 = ndtmod.update_intensity(
                    n, float(ibuf[li * 2]), float(ibuf[li * 2 + 1]), float(intensity)
                )
                ibuf[li * 2] = imean
                ibuf[li * 2 + 1] = im2
            n, mu, S = ndtmod.update_gaussian(n, mu, S, pos)

        if tm:
            region.buffers["hit_count"][li] += len(samples)

        cbuf[li] = min(n, 2**32 - 1)
        frac = mu / cfg.voxel_size - np.asarray(g, dtype=np.float64)
        mbuf[li] = pack_mean(np.clip(frac, 0.0, 1.0 - 2**-11))
        covbuf[li * 6:li * 6 + 6] = ndtmod.matrix_to_sqrt(S).astype(np.float32)


def integrate_tsdf_ray(vmap: VoxelMap, ray: RaySample) -> int:
    """Projective TSDF band update around one sample; returns visits."""
    cfg = vmap.cfg
    length = ray.length
    if not ray.has_sample or length == 0.0:
        return 0
    d = (ray.end - ray.origin) / length
    t_start = max(0.0, length - cfg.tsdf_truncation)
    t_end = length + cfg.tsdf_truncation
    p0 = ray.origin + d * t_start
    p1 = ray.origin + d * t_end
    coords, _, _ = walk_voxels_global(p0, p1, cfg)
    for g in coords:
        region, li = _region_and_local(g, vmap)
        buf = region.buffers["tsdf"]
        center = (np.asarray(g, dtype=np.float64) + 0.5) * cfg.voxel_size
        proj = float((center - ray.origin) @ d)
        dv = np.clip(length - proj, -cfg.tsdf_truncation, cfg.tsdf_truncation)
        w = float(buf[li * 2 + 1])
        nd = _F32((w * float(buf[li * 2]) + dv) / (w + 1.0))
        buf[li * 2] = nd
        buf[li * 2 + 1] = _F32(min(w + 1.0, cfg.tsdf_max_weight))
    return len(coords)


def sample_buckets(segments, cfg: MapConfig) -> dict:
    """Group sample-carrying segment endpoints by global voxel coordinate."""
    buckets: dict[tuple[int, int, int], list] = {}
    for seg in segments:
        if not seg.has_sample:
            continue
        g = tuple(int(np.floor(c / cfg.voxel_size)) for c in seg.end)
        buckets.setdefault(g, []).append((seg.end, seg.intensity))
    return buckets
