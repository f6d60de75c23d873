"""Map exporters: occupied-voxel PLY and per-integrator CSV dumps."""
from __future__ import annotations

from . import ndt as ndtmod
from . import occupancy as occ
from .engine import ConfigurationError
from .keys import VoxelKey, voxel_center, voxel_min_corner
from .store import VoxelMap
from .subvoxel import unpack_mean

EXPORT_FORMATS = ("occupied-ply", "ndt-csv", "tsdf-csv", "decay-csv")


def export_map(vmap: VoxelMap, fmt: str, path) -> int:
    """Write the map in the given format; returns the record count."""
    if fmt == "occupied-ply":
        return export_occupied_ply(vmap, path)
    if fmt == "ndt-csv":
        return export_ndt_csv(vmap, path)
    if fmt == "tsdf-csv":
        return export_tsdf_csv(vmap, path)
    if fmt == "decay-csv":
        return export_decay_csv(vmap, path)
    raise ValueError(f"unknown export format {fmt!r}")


def _require_layers(vmap: VoxelMap, names, fmt: str):
    if not vmap.has_layers(names):
        missing = sorted(set(names) - set(vmap.layer_names))
        raise ConfigurationError(f"{fmt} export needs layers {missing}")


def _iter_voxels(vmap: VoxelMap):
    """(key, linear index, region) for every voxel, in deterministic order."""
    d = vmap.cfg.region_dim
    for rk in sorted(vmap.regions):
        region = vmap.regions[rk]
        for li in range(d ** 3):
            lz, rem = divmod(li, d * d)
            ly, lx = divmod(rem, d)
            yield VoxelKey(rk, (lx, ly, lz)), li, region


def export_occupied_ply(vmap: VoxelMap, path) -> int:
    """One ASCII PLY vertex per occupied voxel, at its voxel-mean position
    (voxel center when the mean layer is disabled)."""
    _require_layers(vmap, ("occupancy",), "occupied-ply")
    vmap._reload_all_spilled()
    cfg = vmap.cfg
    threshold = occ.prob_to_logodds(cfg.occupied_threshold)
    has_mean = vmap.has_layers(("mean", "mean_count"))
    vertices = []
    for key, li, region in _iter_voxels(vmap):
        l = region.buffers["occupancy"][li]
        if l <= threshold:
            continue
        if has_mean and region.buffers["mean_count"][li] > 0:
            offset = unpack_mean(int(region.buffers["mean"][li]))
            pos = voxel_min_corner(key, cfg) + offset * cfg.voxel_size
        else:
            pos = voxel_center(key, cfg)
        vertices.append(pos)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(vertices)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for p in vertices:
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
    return len(vertices)


def export_ndt_csv(vmap: VoxelMap, path) -> int:
    """NDT feature rows: center, n, mean, covariance upper triangle,
    log-odds, hit/miss counts, permeability, intensity moments."""
    _require_layers(vmap, ("occupancy", "mean", "mean_count", "cov_sqrt"), "ndt-csv")
    vmap._reload_all_spilled()
    cfg = vmap.cfg
    tm = vmap.has_layers(("hit_count", "miss_count", "intensity"))
    count = 0
    with open(path, "w") as fh:
        fh.write(
            "cx,cy,cz,n,mx,my,mz,cxx,cxy,cxz,cyy,cyz,czz,"
            "logodds,hits,misses,permeability,intensity_mean,intensity_var\n"
        )
        for key, li, region in _iter_voxels(vmap):
            n = int(region.buffers["mean_count"][li])
            if n == 0:
                continue
            center = voxel_center(key, cfg)
            offset = unpack_mean(int(region.buffers["mean"][li]))
            mu = voxel_min_corner(key, cfg) + offset * cfg.voxel_size
            S = ndtmod.sqrt_to_matrix(region.buffers["cov_sqrt"][li * 6:li * 6 + 6])
            cov = S @ S.T
            l = float(region.buffers["occupancy"][li])
            if tm:
                h = int(region.buffers["hit_count"][li])
                m = int(region.buffers["miss_count"][li])
                perm = ndtmod.permeability(h, m)
                stats = ndtmod.intensity_stats(
                    n,
                    float(region.buffers["intensity"][li * 2]),
                    float(region.buffers["intensity"][li * 2 + 1]),
                )
                imean, ivar = stats if stats else (0.0, 0.0)
            else:
                h = m = 0
                perm = None
                imean = ivar = 0.0
            fh.write(
                f"{center[0]:.6f},{center[1]:.6f},{center[2]:.6f},{n},"
                f"{mu[0]:.6f},{mu[1]:.6f},{mu[2]:.6f},"
                f"{cov[0, 0]:.9g},{cov[0, 1]:.9g},{cov[0, 2]:.9g},"
                f"{cov[1, 1]:.9g},{cov[1, 2]:.9g},{cov[2, 2]:.9g},"
                f"{l:.6f},{h},{m},"
                f"{'' if perm is None else f'{perm:.6f}'},"
                f"{imean:.6f},{ivar:.6f}\n"
            )
            count += 1
    return count


def export_tsdf_csv(vmap: VoxelMap, path) -> int:
    _require_layers(vmap, ("tsdf",), "tsdf-csv")
    vmap._reload_all_spilled()
    cfg = vmap.cfg
    count = 0
    with open(path, "w") as fh:
        fh.write("cx,cy,cz,distance,weight\n")
        for key, li, region in _iter_voxels(vmap):
            w = float(region.buffers["tsdf"][li * 2 + 1])
            if w == 0.0:
                continue
            d = float(region.buffers["tsdf"][li * 2])
            c = voxel_center(key, cfg)
            fh.write(f"{c[0]:.6f},{c[1]:.6f},{c[2]:.6f},{d:.6g},{w:.6g}\n")
            count += 1
    return count


def export_decay_csv(vmap: VoxelMap, path) -> int:
    _require_layers(vmap, ("decay_hits", "decay_distance"), "decay-csv")
    vmap._reload_all_spilled()
    cfg = vmap.cfg
    count = 0
    with open(path, "w") as fh:
        fh.write("cx,cy,cz,hits,distance,decay_rate\n")
        for key, li, region in _iter_voxels(vmap):
            dist = float(region.buffers["decay_distance"][li])
            hits = int(region.buffers["decay_hits"][li])
            if dist == 0.0 and hits == 0:
                continue
            rate = hits / dist if dist > 0 else 0.0
            c = voxel_center(key, cfg)
            fh.write(
                f"{c[0]:.6f},{c[1]:.6f},{c[2]:.6f},{hits},{dist:.6g},{rate:.6g}\n"
            )
            count += 1
    return count
