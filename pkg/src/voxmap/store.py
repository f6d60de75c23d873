"""Region-hashed voxel store.

Space is divided into cubic regions of region_dim^3 voxels.  Regions live
in a hash map (a dict keyed by region coordinate) and are created on
demand; each region owns one contiguous numpy buffer per enabled layer.
Stale regions can be spilled to disk (zlib, lossless) and are reloaded
transparently on next access.
"""
from __future__ import annotations

import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from . import layers as layermod
from .config import MapConfig
from .keys import VoxelKey, key_for_point, local_index

log = logging.getLogger(__name__)

MAP_MAGIC = b"OHMR1"
_SPILL_MAGIC = b"OHMS1"


class Region:
    """One dense block of voxels: a buffer per layer plus access bookkeeping."""

    __slots__ = ("key", "buffers", "last_access")

    def __init__(self, key, specs, voxels: int, last_access: int = 0):
        self.key = key
        self.buffers = {
            spec.name: np.zeros(voxels * spec.components, dtype=spec.dtype)
            for spec in specs
        }
        self.last_access = last_access


class VoxelMap:
    """Layered sparse voxel map with O(1) region-hash addressing."""

    def __init__(self, cfg: MapConfig, layer_names=("occupancy", "mean", "mean_count"),
                 spill_dir=None):
        self.cfg = cfg
        self.layers = layermod.resolve(layer_names)
        self.regions: dict[tuple[int, int, int], Region] = {}
        self.batch_counter = 0
        self._spill_dir = Path(spill_dir) if spill_dir is not None else None
        self._spilled: set[tuple[int, int, int]] = set()

    # -- region access ---------------------------------------------------

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.layers)

    def has_layers(self, names) -> bool:
        return set(names) <= set(self.layer_names)

    @property
    def region_count(self) -> int:
        return len(self.regions)

    def get_region(self, rk, create: bool = False) -> Region | None:
        rk = (int(rk[0]), int(rk[1]), int(rk[2]))
        region = self.regions.get(rk)
        if region is None and rk in self._spilled:
            region = self._reload_region(rk)
        if region is None and create:
            region = Region(rk, self.layers, self.cfg.voxels_per_region)
            self.regions[rk] = region
        if region is not None:
            region.last_access = self.batch_counter
        return region

    def get_or_create_region(self, rk) -> Region:
        return self.get_region(rk, create=True)

    # -- voxel access ----------------------------------------------------

    def voxel_values(self, layer_name: str, key: VoxelKey):
        """Raw layer components for one voxel, or None if its region is absent."""
        region = self.get_region(key.region)
        if region is None:
            return None
        spec = layermod.BY_NAME[layer_name]
        idx = local_index(key.local, self.cfg.region_dim)
        buf = region.buffers[layer_name]
        if spec.components == 1:
            return buf[idx]
        return buf[idx * spec.components:(idx + 1) * spec.components]

    def set_voxel_values(self, layer_name: str, key: VoxelKey, values) -> None:
        region = self.get_or_create_region(key.region)
        spec = layermod.BY_NAME[layer_name]
        idx = local_index(key.local, self.cfg.region_dim)
        buf = region.buffers[layer_name]
        if spec.components == 1:
            buf[idx] = values
        else:
            buf[idx * spec.components:(idx + 1) * spec.components] = values

    def voxel_values_at(self, layer_name: str, point):
        return self.voxel_values(layer_name, key_for_point(point, self.cfg))

    # -- eviction --------------------------------------------------------

    def spill_dir(self) -> Path:
        if self._spill_dir is None:
            raise RuntimeError("map was created without a spill directory")
        self._spill_dir.mkdir(parents=True, exist_ok=True)
        return self._spill_dir

    def _spill_path(self, rk) -> Path:
        return self.spill_dir() / f"region_{rk[0]}_{rk[1]}_{rk[2]}.bin"

    def evict_stale_regions(self, age: int) -> int:
        """Spill regions not touched within the last `age` batches to disk."""
        cutoff = self.batch_counter - age
        stale = [rk for rk, r in self.regions.items() if r.last_access < cutoff]
        evicted = 0
        for rk in stale:
            region = self.regions[rk]
            try:
                self._write_spill(region)
            except OSError as exc:
                log.warning("spill of region %s failed, keeping in memory: %s", rk, exc)
                continue
            del self.regions[rk]
            self._spilled.add(rk)
            evicted += 1
        return evicted

    def _write_spill(self, region: Region) -> None:
        payload = b"".join(region.buffers[s.name].tobytes() for s in self.layers)
        blob = zlib.compress(payload, 6)
        header = _SPILL_MAGIC + struct.pack(
            "<3q I", *region.key, len(self.layers)
        ) + b"".join(struct.pack("<I", s.layer_id) for s in self.layers)
        self._spill_path(region.key).write_bytes(header + blob)

    def _reload_region(self, rk) -> Region | None:
        path = self._spill_path(rk)
        if not path.exists():
            return None
        raw = path.read_bytes()
        if raw[:5] != _SPILL_MAGIC:
            raise ValueError(f"bad spill file {path}")
        off = 5
        kx, ky, kz, nlayers = struct.unpack_from("<3q I", raw, off)
        off += 28
        ids = struct.unpack_from(f"<{nlayers}I", raw, off)
        off += 4 * nlayers
        if (kx, ky, kz) != rk or ids != tuple(s.layer_id for s in self.layers):
            raise ValueError(f"spill file {path} does not match map layout")
        payload = zlib.decompress(raw[off:])
        region = Region(rk, self.layers, self.cfg.voxels_per_region)
        pos = 0
        for spec in self.layers:
            buf = region.buffers[spec.name]
            n = buf.nbytes
            buf[:] = np.frombuffer(payload[pos:pos + n], dtype=spec.dtype)
            pos += n
        self.regions[rk] = region
        self._spilled.discard(rk)
        path.unlink()
        return region

    def _reload_all_spilled(self) -> None:
        for rk in sorted(self._spilled):
            self._reload_region(rk)

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        """Write the map in the OHMR1 binary format (bit-exact round-trip)."""
        self._reload_all_spilled()
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(MAP_MAGIC)
            fh.write(struct.pack("<d I I", self.cfg.voxel_size, self.cfg.region_dim,
                                 len(self.layers)))
            for spec in self.layers:
                fh.write(struct.pack("<I", spec.layer_id))
            fh.write(struct.pack("<Q", len(self.regions)))
            for rk in sorted(self.regions):
                region = self.regions[rk]
                fh.write(struct.pack("<3q", *rk))
                for spec in self.layers:
                    fh.write(region.buffers[spec.name].tobytes())

    @classmethod
    def load(cls, path, cfg: MapConfig | None = None, spill_dir=None) -> "VoxelMap":
        path = Path(path)
        raw = path.read_bytes()
        if raw[:5] != MAP_MAGIC:
            raise ValueError(f"{path} is not a voxel map file")
        off = 5
        voxel_size, region_dim, nlayers = struct.unpack_from("<d I I", raw, off)
        off += 16
        ids = struct.unpack_from(f"<{nlayers}I", raw, off)
        off += 4 * nlayers
        names = tuple(layermod.BY_ID[i].name for i in ids)
        if cfg is None:
            cfg = MapConfig(voxel_size=voxel_size, region_dim=region_dim)
        elif cfg.voxel_size != voxel_size or cfg.region_dim != region_dim:
            raise ValueError("config does not match file geometry")
        vmap = cls(cfg, names, spill_dir=spill_dir)
        (nregions,) = struct.unpack_from("<Q", raw, off)
        off += 8
        voxels = cfg.voxels_per_region
        for _ in range(nregions):
            rk = struct.unpack_from("<3q", raw, off)
            off += 24
            region = Region(rk, vmap.layers, voxels)
            for spec in vmap.layers:
                buf = region.buffers[spec.name]
                n = buf.nbytes
                buf[:] = np.frombuffer(raw[off:off + n], dtype=spec.dtype)
                off += n
            vmap.regions[rk] = region
        return vmap
