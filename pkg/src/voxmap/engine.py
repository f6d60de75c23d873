"""Batch scheduler: prefetch, dispatch, CAS retry policy and statistics.

A batch is integrated as: clip -> segment -> region prefetch -> one task
per ray segment across workers.  Region topology is frozen while tasks
run; voxel payloads are updated through the native CAS kernels.  NDT runs
as two phases with a full barrier between them, phase 2 owning each
sample voxel exclusively.  A sequential pure-Python executor provides the
canonical reference result.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels, layers, reference
from . import occupancy as occ
from .config import MapConfig
from .keys import pack_region_coord
from .store import VoxelMap
from .traversal import RaySample, clip_ray, segment_ray, walk_regions

MODES = tuple(layers.MODE_LAYERS)


class ConfigurationError(Exception):
    """Map layers do not match what the requested integrator needs."""


@dataclass
class BatchStats:
    rays_in: int = 0
    rays_processed: int = 0
    segments: int = 0
    voxel_visits: int = 0
    cas_retries: int = 0
    cas_failures: int = 0
    region_misses: int = 0
    regions_touched: int = 0
    wall_time: float = 0.0

    @property
    def rays_per_second(self) -> float:
        if self.wall_time <= 0.0:
            return 0.0
        return self.rays_processed / self.wall_time

    def csv_row(self) -> str:
        return ",".join(
            str(v)
            for v in (
                self.rays_in,
                self.rays_processed,
                self.segments,
                self.voxel_visits,
                self.cas_retries,
                self.cas_failures,
                f"{self.wall_time:.6f}",
                f"{self.rays_per_second:.1f}",
            )
        )


@dataclass
class ExecutorOptions:
    worker_count: int = 1
    cas_retry_limit: int = 20
    kind: str = "parallel"

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.kind not in ("sequential", "parallel"):
            raise ValueError(f"unknown executor kind {self.kind!r}")
        if self.kind == "sequential" and self.worker_count != 1:
            raise ValueError("sequential executor requires worker_count == 1")


def _preprocess(rays, cfg: MapConfig, segment: bool):
    """Clip, drop degenerate rays, optionally segment.  Returns
    (segments, processed_ray_count)."""
    out = []
    processed = 0
    for ray in rays:
        if ray.length == 0.0:
            continue
        processed += 1
        clipped = clip_ray(ray, cfg)
        if segment:
            out.extend(segment_ray(clipped, cfg))
        else:
            out.append(clipped)
    return out, processed


def prefetch_regions(vmap: VoxelMap, segments, extra_reach: float = 0.0) -> int:
    """Create every region the segments can touch; returns touched count.

    extra_reach extends each segment past its endpoint (used by TSDF for
    the behind-surface truncation band).
    """
    cfg = vmap.cfg
    touched = set()
    for seg in segments:
        if extra_reach > 0.0 and seg.has_sample and seg.length > 0.0:
            d = (seg.end - seg.origin) / seg.length
            probe = RaySample(seg.origin, seg.end + d * extra_reach,
                              has_sample=seg.has_sample)
        else:
            probe = seg
        for rk in walk_regions(probe, cfg):
            touched.add(rk)
    for rk in touched:
        vmap.get_or_create_region(rk)
    return len(touched)


def _build_region_table(vmap: VoxelMap):
    """Open-addressing hash table over all live regions plus per-layer
    buffer pointer arrays for the native kernels."""
    region_list = [vmap.regions[rk] for rk in sorted(vmap.regions)]
    n = len(region_list)
    size = 8
    while size < 2 * max(n, 1):
        size <<= 1
    tkeys = np.full(size, -1, dtype=np.int64)
    tvals = np.full(size, -1, dtype=np.int32)
    mask = size - 1
    for idx, region in enumerate(region_list):
        key = pack_region_coord(region.key)
        h = _kernels.hash_mix(key) & mask
        while tkeys[h] != -1:
            h = (h + 1) & mask
        tkeys[h] = key
        tvals[h] = idx

    def ptrs(layer_name):
        if n == 0 or layer_name not in vmap.layer_names:
            return np.empty(0, dtype=np.intp)
        return np.array(
            [r.buffers[layer_name].ctypes.data for r in region_list], dtype=np.intp
        )

    return region_list, tkeys, tvals, ptrs


_EMPTY_PTRS = np.empty(0, dtype=np.intp)


def _segment_arrays(segments):
    n = len(segments)
    origins = np.empty((n, 3), dtype=np.float64)
    ends = np.empty((n, 3), dtype=np.float64)
    has_sample = np.empty(n, dtype=np.uint8)
    for i, seg in enumerate(segments):
        origins[i] = seg.origin
        ends[i] = seg.end
        has_sample[i] = 1 if seg.has_sample else 0
    return origins, ends, has_sample


def _walk_cap(segments, cfg: MapConfig, extra: float = 0.0) -> int:
    max_len = max((s.length for s in segments), default=0.0) + extra
    return 3 * (int(math.ceil(max_len / cfg.voxel_size)) + 2) + 8


def _chunk_bounds(n: int, chunks: int):
    edges = np.linspace(0, n, chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def submit_batch(vmap: VoxelMap, rays, mode: str,
                 opts: ExecutorOptions | None = None) -> BatchStats:
    """Integrate one batch of rays with the given integrator mode."""
    if opts is None:
        opts = ExecutorOptions()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    required = layers.MODE_LAYERS[mode]
    if not vmap.has_layers(required):
        missing = set(required) - set(vmap.layer_names)
        raise ConfigurationError(
            f"map lacks layers {sorted(missing)} required by mode {mode!r}"
        )

    stats = BatchStats(rays_in=len(rays))
    vmap.batch_counter += 1
    start = time.perf_counter()

    segment = mode != "tsdf"
    segments, processed = _preprocess(rays, vmap.cfg, segment)
    stats.rays_processed = processed
    stats.segments = len(segments)
    if not segments:
        stats.wall_time = time.perf_counter() - start
        return stats

    extra = vmap.cfg.tsdf_truncation if mode == "tsdf" else 0.0
    stats.regions_touched = prefetch_regions(vmap, segments, extra_reach=extra)

    if opts.kind == "sequential":
        _run_sequential(vmap, segments, mode, stats)
    else:
        _run_parallel(vmap, segments, mode, opts, stats)

    stats.wall_time = time.perf_counter() - start
    return stats


def sequential_reference(vmap: VoxelMap, rays, mode: str = "occupancy") -> BatchStats:
    """Deterministic single-worker reference executor (test oracle)."""
    return submit_batch(vmap, rays, mode,
                        ExecutorOptions(worker_count=1, kind="sequential"))


# -- executors -----------------------------------------------------------


def _run_sequential(vmap: VoxelMap, segments, mode: str, stats: BatchStats):
    if mode in ("occupancy", "decay"):
        decay = mode == "decay"
        for seg in segments:
            stats.voxel_visits += reference.integrate_occupancy_segment(
                vmap, seg, decay=decay
            )
    elif mode in ("ndt-om", "ndt-tm"):
        tm = mode == "ndt-tm"
        for seg in segments:
            stats.voxel_visits += reference.ndt_phase1_segment(vmap, seg, tm=tm)
        buckets = reference.sample_buckets(segments, vmap.cfg)
        reference.apply_ndt_hits(vmap, buckets, tm=tm)
    elif mode == "tsdf":
        for seg in segments:
            stats.voxel_visits += reference.integrate_tsdf_ray(vmap, seg)


def _run_parallel(vmap: VoxelMap, segments, mode: str, opts: ExecutorOptions,
                  stats: BatchStats):
    cfg = vmap.cfg
    region_list, tkeys, tvals, ptrs = _build_region_table(vmap)
    origins, ends, has_sample = _segment_arrays(segments)
    cap = _walk_cap(segments, cfg, extra=2 * cfg.tsdf_truncation if mode == "tsdf" else 0.0)
    bounds = _chunk_bounds(len(segments), opts.worker_count * 4)

    hit = occ.hit_delta(cfg)
    miss = occ.miss_delta(cfg)

    if mode in ("occupancy", "decay"):
        decay = mode == "decay"

        def task(a, b):
            return _kernels.integrate_occupancy(
                origins[a:b], ends[a:b], has_sample[a:b], tkeys, tvals,
                ptrs("occupancy"), ptrs("mean"), ptrs("mean_count"),
                ptrs("decay_hits") if decay else _EMPTY_PTRS,
                ptrs("decay_distance") if decay else _EMPTY_PTRS,
                cfg.voxel_size, cfg.region_dim, hit, miss,
                cfg.clamp_min, cfg.clamp_max, opts.cas_retry_limit, cap,
            )

        _dispatch(task, bounds, opts.worker_count, stats)

    elif mode in ("ndt-om", "ndt-tm"):
        tm = mode == "ndt-tm"

        def task(a, b):
            return _kernels.integrate_ndt_phase1(
                origins[a:b], ends[a:b], has_sample[a:b], tkeys, tvals,
                ptrs("occupancy"), ptrs("mean"), ptrs("mean_count"),
                ptrs("cov_sqrt"),
                ptrs("hit_count") if tm else _EMPTY_PTRS,
                ptrs("miss_count") if tm else _EMPTY_PTRS,
                ptrs("intensity") if tm else _EMPTY_PTRS,
                cfg.voxel_size, cfg.region_dim, miss,
                cfg.clamp_min, cfg.clamp_max, cfg.ndt_sensor_noise,
                cfg.ndt_reset_threshold, cfg.ndt_miss_likelihood_threshold,
                opts.cas_retry_limit, cap,
            )

        _dispatch(task, bounds, opts.worker_count, stats)

        # barrier: phase 2 starts only after every miss task has finished
        buckets = reference.sample_buckets(segments, cfg)
        keys = sorted(buckets)
        if opts.worker_count == 1 or len(keys) < 2:
            reference.apply_ndt_hits(vmap, buckets, tm=tm)
        else:
            shards = [
                {k: buckets[k] for k in keys[w::opts.worker_count]}
                for w in range(opts.worker_count)
            ]
            with ThreadPoolExecutor(max_workers=opts.worker_count) as pool:
                futures = [
                    pool.submit(reference.apply_ndt_hits, vmap, shard, tm)
                    for shard in shards
                    if shard
                ]
                for f in futures:
                    f.result()

    elif mode == "tsdf":

        def task(a, b):
            return _kernels.integrate_tsdf(
                origins[a:b], ends[a:b], has_sample[a:b], tkeys, tvals,
                ptrs("tsdf"), cfg.voxel_size, cfg.region_dim,
                cfg.tsdf_truncation, cfg.tsdf_max_weight,
                opts.cas_retry_limit, cap,
            )

        _dispatch(task, bounds, opts.worker_count, stats)

    # keep region buffers alive until all tasks finished
    del region_list


def _dispatch(task, bounds, workers: int, stats: BatchStats):
    if workers == 1 or len(bounds) <= 1:
        results = [task(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(task, a, b) for a, b in bounds]
            results = [f.result() for f in futures]
    for retries, failures, misses, visits in results:
        stats.cas_retries += retries
        stats.cas_failures += failures
        stats.region_misses += misses
        stats.voxel_visits += visits
