"""Region store, eviction and persistence."""
import numpy as np
import pytest

from voxmap.config import MapConfig
from voxmap.keys import VoxelKey, key_for_point
from voxmap.store import VoxelMap

CFG = MapConfig()


def populated_map(spill_dir=None):
    vmap = VoxelMap(CFG, ("occupancy", "mean", "mean_count"), spill_dir=spill_dir)
    rng = np.random.default_rng(11)
    for rk in [(0, 0, 0), (1, 0, 0), (-1, -1, 2)]:
        region = vmap.get_or_create_region(rk)
        region.buffers["occupancy"][:] = rng.normal(size=CFG.voxels_per_region).astype(np.float32)
        region.buffers["mean"][:] = rng.integers(0, 2 ** 30, CFG.voxels_per_region, dtype=np.uint32)
        region.buffers["mean_count"][:] = rng.integers(0, 100, CFG.voxels_per_region, dtype=np.uint32)
    return vmap


def test_region_created_on_demand():
    vmap = VoxelMap(CFG)
    assert vmap.region_count == 0
    assert vmap.get_region((5, 5, 5)) is None
    region = vmap.get_or_create_region((5, 5, 5))
    assert vmap.region_count == 1
    assert region.buffers["occupancy"].shape == (CFG.voxels_per_region,)
    assert region.buffers["occupancy"].dtype == np.float32
    assert not region.buffers["occupancy"].any()


def test_voxel_get_set():
    vmap = VoxelMap(CFG)
    key = key_for_point((1.23, -4.56, 7.89), CFG)
    assert vmap.voxel_values("occupancy", key) is None
    vmap.set_voxel_values("occupancy", key, 1.25)
    assert vmap.voxel_values("occupancy", key) == np.float32(1.25)
    assert vmap.voxel_values_at("occupancy", (1.23, -4.56, 7.89)) == np.float32(1.25)


def test_multi_component_voxel_access():
    vmap = VoxelMap(CFG, ("occupancy", "mean", "mean_count", "cov_sqrt"))
    key = VoxelKey((0, 0, 0), (3, 4, 5))
    vmap.set_voxel_values("cov_sqrt", key, [1, 2, 3, 4, 5, 6])
    np.testing.assert_array_equal(vmap.voxel_values("cov_sqrt", key), [1, 2, 3, 4, 5, 6])


def test_eviction_round_trip_bit_exact(tmp_path):
    vmap = populated_map(spill_dir=tmp_path / "spill")
    before = {rk: {n: b.copy() for n, b in r.buffers.items()}
              for rk, r in vmap.regions.items()}
    vmap.batch_counter = 10
    evicted = vmap.evict_stale_regions(age=2)
    assert evicted == 3
    assert vmap.region_count == 0
    assert len(list((tmp_path / "spill").glob("*.bin"))) == 3
    for rk, bufs in before.items():
        region = vmap.get_region(rk)
        assert region is not None
        for name, buf in bufs.items():
            assert np.array_equal(region.buffers[name], buf)
    # spill files are consumed on reload
    assert not list((tmp_path / "spill").glob("*.bin"))


def test_eviction_respects_recency(tmp_path):
    vmap = VoxelMap(CFG, spill_dir=tmp_path)
    vmap.get_or_create_region((0, 0, 0))
    vmap.batch_counter = 5
    vmap.get_or_create_region((1, 0, 0))  # fresh access
    assert vmap.evict_stale_regions(age=2) == 1
    assert (1, 0, 0) in vmap.regions


def test_eviction_without_spill_dir_raises():
    vmap = populated_map()
    vmap.batch_counter = 10
    with pytest.raises(RuntimeError):
        vmap.evict_stale_regions(age=1)


def test_save_load_round_trip(tmp_path):
    vmap = populated_map()
    path = tmp_path / "map.bin"
    vmap.save(path)
    loaded = VoxelMap.load(path)
    assert loaded.cfg.voxel_size == CFG.voxel_size
    assert loaded.layer_names == vmap.layer_names
    assert set(loaded.regions) == set(vmap.regions)
    for rk, region in vmap.regions.items():
        for name, buf in region.buffers.items():
            assert np.array_equal(loaded.regions[rk].buffers[name], buf)


def test_save_load_save_byte_identical(tmp_path):
    vmap = populated_map()
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    vmap.save(p1)
    VoxelMap.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_save_includes_spilled_regions(tmp_path):
    vmap = populated_map(spill_dir=tmp_path / "spill")
    vmap.batch_counter = 10
    vmap.evict_stale_regions(age=2)
    path = tmp_path / "map.bin"
    vmap.save(path)
    assert len(VoxelMap.load(path).regions) == 3


def test_load_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a map at all")
    with pytest.raises(ValueError):
        VoxelMap.load(bad)


def test_load_rejects_mismatched_config(tmp_path):
    vmap = populated_map()
    path = tmp_path / "map.bin"
    vmap.save(path)
    with pytest.raises(ValueError):
        VoxelMap.load(path, cfg=MapConfig(voxel_size=0.2))
