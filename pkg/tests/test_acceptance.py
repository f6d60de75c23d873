"""Acceptance gate: one test per documented criterion.

Each test prints a single summary line with the measured quantities next
to its threshold.  Timing-trend tests that need real hardware parallelism
are skipped (with the reason) on machines without enough cores.
"""
import math
import os
import struct
import time

import numpy as np
import pytest
from numba import njit

from voxmap import (
    ExecutorOptions,
    MapConfig,
    RaySample,
    SceneSpec,
    VoxelMap,
    generate_scene,
    sequential_reference,
    submit_batch,
    to_ray_samples,
    tsdf_query,
)
from voxmap import cli as vcli
from voxmap import ndt as ndtmod
from voxmap import occupancy as occ
from voxmap.keys import key_for_point
from voxmap.layers import ALL_LAYERS, MODE_LAYERS
from voxmap.traversal import walk_voxels_global

CFG = MapConfig()
VOXEL = CFG.voxel_size
CORES = os.cpu_count() or 1

_B = 1 << 20  # voxel-code packing bias


@njit(cache=True)
def _dense_codes(ox, oy, oz, ex, ey, ez, step):
    """Voxel codes seen by marching the ray at fixed arc-length steps."""
    vx, vy, vz = ex - ox, ey - oy, ez - oz
    length = math.sqrt(vx * vx + vy * vy + vz * vz)
    n = int(length / step) + 1
    out = np.empty(n + 1, np.int64)
    m = 0
    prev = np.int64(-1)
    for i in range(n + 1):
        t = i * step
        if t > length:
            t = length
        f = t / length if length > 0 else 0.0
        gx = np.int64(math.floor((ox + vx * f) / 0.1))
        gy = np.int64(math.floor((oy + vy * f) / 0.1))
        gz = np.int64(math.floor((oz + vz * f) / 0.1))
        code = ((gx + _B) << 42) | ((gy + _B) << 21) | (gz + _B)
        if code != prev:
            out[m] = code
            m += 1
            prev = code
    return out[:m]


def _decode(codes):
    g = np.empty((len(codes), 3), dtype=np.int64)
    g[:, 0] = (codes >> 42) - _B
    g[:, 1] = ((codes >> 21) & ((1 << 21) - 1)) - _B
    g[:, 2] = (codes & ((1 << 21) - 1)) - _B
    return g


def _encode(coords):
    c = np.asarray(coords, dtype=np.int64)
    return ((c[:, 0] + _B) << 42) | ((c[:, 1] + _B) << 21) | (c[:, 2] + _B)


def _exact_chords(origin, end, coords):
    """Slab-clipped chord length of the ray inside each voxel (meters)."""
    origin = np.asarray(origin, float)
    end = np.asarray(end, float)
    v = end - origin
    length = float(np.linalg.norm(v))
    lo = coords * VOXEL
    hi = (coords + 1) * VOXEL
    t0 = np.zeros(len(coords))
    t1 = np.ones(len(coords))
    for a in range(3):
        if v[a] == 0.0:
            inside = (origin[a] >= lo[:, a] - 1e-12) & (origin[a] <= hi[:, a] + 1e-12)
            t1 = np.where(inside, t1, -1.0)
            continue
        ta = (lo[:, a] - origin[a]) / v[a]
        tb = (hi[:, a] - origin[a]) / v[a]
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    return np.maximum(t1 - t0, 0.0) * length, t1 - t0


def _random_rays(n, seed):
    rng = np.random.default_rng(seed)
    origins = rng.uniform(-2.0, 2.0, size=(n, 3))
    u = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    s = np.sqrt(1.0 - u * u)
    d = np.stack([s * np.cos(phi), s * np.sin(phi), u], axis=1)
    lengths = rng.uniform(0.05, 20.0, n)
    return origins, origins + d * lengths[:, None]


def test_01_traversal_against_dense_sampling_oracle():
    n = 10_000
    step, graze_eps = 1e-4, 1e-6
    origins, ends = _random_rays(n, seed=101)
    start = time.perf_counter()
    worst_rel = 0.0
    mismatches = 0
    for o, e in zip(origins, ends):
        coords, t0, t1 = walk_voxels_global(o, e, CFG)
        length = float(np.linalg.norm(e - o))
        total = float(np.sum(t1 - t0)) * length
        worst_rel = max(worst_rel, abs(total - length) / length)

        walk = set(_encode(coords).tolist())
        dense = set(np.unique(_dense_codes(*o, *e, step)).tolist())
        # the walk may not miss any voxel the dense march found
        assert dense <= walk
        # extra walk voxels must be genuine sub-step corner crossings
        extra = np.array(sorted(walk - dense), dtype=np.int64)
        if len(extra):
            chords, raw = _exact_chords(o, e, _decode(extra))
            assert np.all(raw >= -1e-9)           # ray really touches them
            assert np.all(chords <= step + graze_eps)
            mismatches += int(np.sum(chords > graze_eps))
    elapsed = time.perf_counter() - start
    assert worst_rel < 1e-9
    assert elapsed < 60.0
    print(f"\n[criterion 1] {n} rays: dense-oracle sets contained, "
          f"{mismatches} sub-step corner voxels beyond graze eps, "
          f"path-length worst rel err {worst_rel:.2e} (< 1e-9), {elapsed:.1f}s")


def test_02_parallel_equivalence_100k_corridor():
    spec = SceneSpec(kind="corridor", rate=300_000, duration=1 / 3, seed=2)
    rays = to_ray_samples(generate_scene(spec))
    assert len(rays) == 100_000
    start = time.perf_counter()
    m_seq = VoxelMap(CFG, MODE_LAYERS["occupancy"])
    m_par = VoxelMap(CFG, MODE_LAYERS["occupancy"])
    sequential_reference(m_seq, rays, "occupancy")
    stats = submit_batch(m_par, rays, "occupancy", ExecutorOptions(worker_count=8))
    elapsed = time.perf_counter() - start

    assert set(m_seq.regions) == set(m_par.regions)
    worst = 0.0
    hits_seq = hits_par = 0
    for rk in m_seq.regions:
        b1, b2 = m_seq.regions[rk].buffers, m_par.regions[rk].buffers
        worst = max(worst, float(np.max(np.abs(b1["occupancy"] - b2["occupancy"]))))
        assert np.array_equal(b1["mean_count"], b2["mean_count"])
        hits_seq += int(b1["mean_count"].sum())
        hits_par += int(b2["mean_count"].sum())
    expected_hits = sum(1 for r in rays if r.has_sample)
    assert worst <= 1e-4
    assert hits_seq == hits_par == expected_hits  # zero lost hit updates
    assert stats.region_misses == 0
    assert elapsed < 60.0
    print(f"\n[criterion 2] 1e5 rays: log-odds max |diff| {worst:.2e} (<= 1e-4), "
          f"hits {hits_par}/{expected_hits} (no losses), {elapsed:.1f}s")


def test_03_ndt_covariance_oracle():
    rng = np.random.default_rng(33)
    sizes = np.concatenate([
        rng.integers(2, 50, 900),
        rng.integers(50, 1000, 99),
        [1000],
    ])
    worst_frob = 0.0
    worst_eig = 0.0
    for size in sizes:
        mu_true = rng.uniform(-1, 1, 3)
        scale = rng.uniform(0.005, 0.05, 3)
        pts = rng.normal(mu_true, scale, size=(size, 3))
        n, mu, S = 0, np.zeros(3), np.zeros((3, 3))
        for p in pts:
            n, mu, S = ndtmod.update_gaussian(n, mu, S, p)
            min_eig = float(np.linalg.eigvalsh(S @ S.T).min())
            worst_eig = min(worst_eig, min_eig)
            assert min_eig >= -1e-10
        batch_mu = pts.mean(axis=0)
        batch_cov = (pts - batch_mu).T @ (pts - batch_mu) / size
        cov = S @ S.T
        rel = np.linalg.norm(cov - batch_cov) / np.linalg.norm(batch_cov)
        worst_frob = max(worst_frob, rel)
        assert rel <= 1e-5
        np.testing.assert_allclose(mu, batch_mu, rtol=1e-9, atol=1e-12)
    print(f"\n[criterion 3] {len(sizes)} voxels (max n=1000): worst Frobenius rel "
          f"{worst_frob:.2e} (<= 1e-5), min eigenvalue {worst_eig:.2e} (>= -1e-10)")


def _pole_fixture():
    """Scripted thin-pole evidence: clustered returns low in one voxel,
    then pass-through rays grazing the top of the same voxel."""
    rng = np.random.default_rng(4)
    pole = np.array([0.55, 0.05, 0.0])
    hits = []
    for _ in range(6):
        end = pole + [rng.uniform(-0.003, 0.003), rng.uniform(-0.003, 0.003),
                      0.008 + rng.uniform(-0.002, 0.002)]
        hits.append(RaySample((-0.95, 0.05, 0.008), end, has_sample=True))
    passes = [
        RaySample((-0.95, 0.05, 0.095), (1.95, 0.05, 0.095), has_sample=False)
        for _ in range(4)
    ]
    return hits, passes


def test_04_ndt_reduces_erosion():
    hits, passes = _pole_fixture()
    key = key_for_point((0.55, 0.05, 0.05), CFG)
    m_plain = VoxelMap(CFG, MODE_LAYERS["occupancy"])
    m_ndt = VoxelMap(CFG, MODE_LAYERS["ndt-om"])
    sequential_reference(m_plain, hits, "occupancy")
    sequential_reference(m_ndt, hits, "ndt-om")
    threshold = occ.prob_to_logodds(CFG.occupied_threshold)

    total_batches = 5
    plain_dropped = False
    rounds = 0
    for _ in range(total_batches):
        sequential_reference(m_plain, passes, "occupancy")
        sequential_reference(m_ndt, passes, "ndt-om")
        rounds += 1
        l_plain = float(m_plain.voxel_values("occupancy", key))
        l_ndt = float(m_ndt.voxel_values("occupancy", key))
        assert l_ndt > l_plain  # strictly less erosion after equal evidence
        if l_plain <= threshold:
            plain_dropped = True
            break
    assert plain_dropped, "plain occupancy never dropped below the threshold"
    # continue the bombardment: NDT must hold the voxel occupied throughout
    for _ in range(total_batches - rounds):
        sequential_reference(m_ndt, passes, "ndt-om")
    l_ndt = float(m_ndt.voxel_values("occupancy", key))
    assert l_ndt > threshold
    print(f"\n[criterion 4] after {rounds * len(passes)} pass-throughs plain "
          f"log-odds {l_plain:.2f} <= {threshold:.2f} < NDT-OM {l_ndt:.2f} "
          f"(still occupied after {total_batches * len(passes)})")


def _throughput(rays, mode, workers, repeats=3):
    best = 0.0
    for _ in range(repeats):
        vmap = VoxelMap(CFG, MODE_LAYERS[mode])
        stats = submit_batch(vmap, rays, mode, ExecutorOptions(worker_count=workers))
        best = max(best, stats.rays_per_second)
    return best


@pytest.mark.skipif(CORES < 4, reason=f"thread-scaling trend needs >= 4 hardware "
                                      f"threads, found {CORES}")
def test_05_thread_scaling_trend():
    spec = SceneSpec(kind="corridor", rate=300_000, duration=0.1, seed=5)
    rays = to_ray_samples(generate_scene(spec))
    r1 = _throughput(rays, "occupancy", 1)
    r2 = _throughput(rays, "occupancy", 2)
    r4 = _throughput(rays, "occupancy", 4)
    print(f"\n[criterion 5] rays/s 1w={r1:.0f} 2w={r2:.0f} 4w={r4:.0f}")
    assert r1 < r2 < r4
    assert (r4 - r2) < (r2 - r1)  # diminishing returns


def test_06_integrator_cost_ordering():
    spec = SceneSpec(kind="corridor", rate=300_000, duration=0.05, seed=6)
    rays = to_ray_samples(generate_scene(spec))
    rates = {mode: _throughput(rays, mode, workers=1)
             for mode in ("occupancy", "ndt-om", "ndt-tm", "tsdf")}
    line = " ".join(f"{m}={r:.0f}" for m, r in rates.items())
    rel = {m: f"{100 * r / rates['occupancy']:.0f}%" for m, r in rates.items()}
    print(f"\n[criterion 6] rays/s {line} | vs occupancy {rel}")
    assert rates["occupancy"] > rates["ndt-om"] > rates["ndt-tm"]
    assert rates["tsdf"] > rates["ndt-om"]


def test_07_decay_rate_exactness():
    o = (0.05, 0.05, 0.05)
    rays = [
        RaySample(o, (0.575, 0.05, 0.05), has_sample=True),   # r1
        RaySample(o, (0.595, 0.05, 0.05), has_sample=True),   # r2
        RaySample(o, (0.555, 0.05, 0.05), has_sample=True),   # r3
        RaySample(o, (0.75, 0.05, 0.05), has_sample=False),   # r4 pass
        RaySample(o, (0.05, 0.275, 0.05), has_sample=True),   # r5
        RaySample(o, (0.05, 0.295, 0.05), has_sample=True),   # r6
        RaySample(o, (0.05, 0.05, 0.36), has_sample=True),    # r7
        RaySample(o, (-0.175, 0.05, 0.05), has_sample=False), # r8 pass
        RaySample(o, (0.555, 0.05, 0.05), has_sample=True),   # r9
        RaySample(o, (0.475, 0.05, 0.05), has_sample=True),   # r10
    ]
    # hand-computed per-voxel path sums d and hit counts H
    # (voxel k spans [0.1 k, 0.1 (k+1)) on each axis)
    expected = {
        (0.05, 0.05, 0.05): (10 * 0.05, 0),                       # shared origin voxel
        (0.45, 0.05, 0.05): (5 * 0.1 + 0.075, 1),                 # r1,r2,r3,r4,r9 + r10 end
        (0.55, 0.05, 0.05): (0.075 + 0.095 + 0.055 + 0.1 + 0.055, 4),
        (0.05, 0.25, 0.05): (0.075 + 0.095, 2),
        (0.05, 0.05, 0.35): (0.06, 1),
        (-0.15, 0.05, 0.05): (0.075, 0),
        (0.75, 0.05, 0.05): (0.05, 0),                            # r4 terminal voxel
    }
    for kind in ("sequential", "parallel"):
        vmap = VoxelMap(CFG, MODE_LAYERS["decay"])
        if kind == "sequential":
            sequential_reference(vmap, rays, "decay")
        else:
            submit_batch(vmap, rays, "decay", ExecutorOptions(worker_count=4))
        worst = 0.0
        for point, (d_hand, h_hand) in expected.items():
            key = key_for_point(point, CFG)
            d = float(vmap.voxel_values("decay_distance", key))
            h = int(vmap.voxel_values("decay_hits", key))
            assert h == h_hand, (kind, point)
            rel = abs(d - d_hand) / d_hand
            worst = max(worst, rel)
            assert rel <= 1e-9, (kind, point)
            lam = occ.decay_rate(vmap, key)
            assert abs(lam - h_hand / d_hand) <= 1e-9 * max(h_hand / d_hand, 1.0)
    print(f"\n[criterion 7] 10-ray fixture, {len(expected)} checked voxels: "
          f"worst lambda rel err {worst:.2e} (<= 1e-9), both executors")


def test_08_tsdf_wall():
    wall_x = 2.0
    rays = []
    for iy in range(32):
        for iz in range(32):
            y, z = 0.05 + 0.1 * iy, 0.05 + 0.1 * iz
            rays.append(RaySample((0.5, y, z), (wall_x, y, z), has_sample=True))
    # a repeated row to exercise the weight cap
    rays += [RaySample((0.5, 0.05, 0.05), (wall_x, 0.05, 0.05), has_sample=True)
             for _ in range(150)]
    vmap = VoxelMap(CFG, MODE_LAYERS["tsdf"])
    submit_batch(vmap, rays, "tsdf", ExecutorOptions(worker_count=4))

    max_w = 0.0
    worst_cross = 0.0
    for iy in range(32):
        for iz in range(32):
            y, z = 0.05 + 0.1 * iy, 0.05 + 0.1 * iz
            xs = np.arange(wall_x - 0.25, wall_x + 0.3, VOXEL)
            ds = []
            for x in xs:
                q = tsdf_query(vmap, (x, y, z))
                assert q is not None
                assert abs(q[0]) <= CFG.tsdf_truncation + 1e-6
                assert q[1] <= CFG.tsdf_max_weight
                max_w = max(max_w, q[1])
                ds.append(q[0])
            ds = np.array(ds)
            crossing = None
            for i in range(len(xs) - 1):
                if ds[i] > 0.0 >= ds[i + 1]:
                    crossing = xs[i] + VOXEL * ds[i] / (ds[i] - ds[i + 1])
                    break
            assert crossing is not None, (y, z)
            worst_cross = max(worst_cross, abs(crossing - wall_x))
    assert worst_cross <= VOXEL / 2.0
    assert max_w == CFG.tsdf_max_weight  # cap reached on the repeated row
    print(f"\n[criterion 8] 1024 rays: worst zero-crossing err {worst_cross:.4f} m "
          f"(<= {VOXEL / 2}), |d| <= truncation, max weight {max_w:.0f} (capped)")


def test_09_bayes_logodds_equivalence():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        p_hit = rng.uniform(0.55, 0.95)
        p_miss = rng.uniform(0.05, 0.45)
        obs = rng.random(rng.integers(1, 60)) < 0.5
        prob = 0.5
        logodds = 0.0
        for hit in obs:
            p = p_hit if hit else p_miss
            prob = p * prob / (p * prob + (1.0 - p) * (1.0 - prob))
            logodds += math.log(p / (1.0 - p))
        worst = max(worst, abs(occ.logodds_to_prob(logodds) - prob))
        assert abs(occ.logodds_to_prob(logodds) - prob) <= 1e-9
    print(f"\n[criterion 9] 1000 sequences: worst posterior diff {worst:.2e} (<= 1e-9)")


def test_10_persistence_round_trips(tmp_path):
    vmap = VoxelMap(CFG, tuple(s.name for s in ALL_LAYERS),
                    spill_dir=tmp_path / "spill")
    rays = to_ray_samples(generate_scene(
        SceneSpec(kind="corridor", rate=20_000, duration=0.1, seed=10)))
    for mode in ("decay", "ndt-tm", "tsdf"):
        submit_batch(vmap, rays, mode, ExecutorOptions(worker_count=2))

    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    vmap.save(p1)
    VoxelMap.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()

    before = {rk: {n: b.copy() for n, b in r.buffers.items()}
              for rk, r in vmap.regions.items()}
    vmap.batch_counter += 10
    evicted = vmap.evict_stale_regions(age=1)
    assert evicted == len(before)
    for rk, bufs in before.items():
        region = vmap.get_region(rk)
        for name, buf in bufs.items():
            assert np.array_equal(region.buffers[name].view(np.uint8),
                                  buf.view(np.uint8))
    print(f"\n[criterion 10] save/load/save byte-identical "
          f"({p1.stat().st_size} bytes, {len(before)} regions); "
          f"eviction round-trip bit-exact")


def _online_drop_pct(batches, workers):
    vmap = VoxelMap(CFG, MODE_LAYERS["ndt-om"])
    rows, dropped = vcli._run_online(vmap, batches, "ndt-om",
                                     ExecutorOptions(worker_count=workers))
    total = sum(len(b) for b in batches)
    return 100.0 * dropped / total


@pytest.fixture(scope="module")
def mixed_batches():
    spec = SceneSpec(kind="mixed-indoor-outdoor", rate=60_000, duration=2.4, seed=11)
    records = generate_scene(spec)
    ts = records["timestamp"]
    edges = np.searchsorted(ts, ts[0] + 0.1 * np.arange(1, 26))
    batches, start = [], 0
    for edge in edges:
        if edge > start:
            batches.append(to_ray_samples(records[start:edge]))
            start = edge
    return batches


def test_11_online_mode_drops_under_overload(mixed_batches):
    drop1 = _online_drop_pct(mixed_batches, workers=1)
    print(f"\n[criterion 11] mixed scene @60k rays/s, 1 worker: "
          f"{drop1:.1f}% rays dropped (> 0 required)")
    assert drop1 > 0.0


@pytest.mark.skipif(CORES < 4, reason=f"drop-rate reduction with extra workers "
                                      f"needs >= 4 hardware threads, found {CORES}")
def test_11_online_drop_decreases_with_workers(mixed_batches):
    drop1 = _online_drop_pct(mixed_batches, workers=1)
    drop4 = _online_drop_pct(mixed_batches, workers=4)
    print(f"\n[criterion 11] drop% 1w={drop1:.1f} 4w={drop4:.1f}")
    assert drop4 < drop1
