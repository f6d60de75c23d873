"""Command-line benchmark and export front end.

`voxmap bench` replays a ray-set file (or a synthetic scene) through the
engine in 0.1 s sensor batches and reports a per-second throughput CSV.
In online mode batches are pushed through a bounded queue at sensor rate
and dropped when integration falls behind.  `voxmap export` converts a
saved map into one of the analysis formats.

Exit codes: 0 success, 1 runtime failure, 2 bad arguments/configuration.
"""
from __future__ import annotations

import argparse
import logging
import queue
import sys
import threading
import time

import numpy as np

from .config import MapConfig
from .engine import MODES, BatchStats, ConfigurationError, ExecutorOptions, submit_batch
from .exporters import EXPORT_FORMATS, export_map
from .layers import MODE_LAYERS
from .rayset import read_rayset, to_ray_samples, write_rayset
from .scenes import SCENE_KINDS, SceneSpec, generate_scene
from .store import VoxelMap


BATCH_PERIOD = 0.1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxmap")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="replay rays through an integrator")
    src = bench.add_mutually_exclusive_group(required=True)
    src.add_argument("--rays", help="ray-set file to replay")
    src.add_argument("--scene", choices=SCENE_KINDS, help="synthetic scene")
    bench.add_argument("--mode", choices=MODES, default="occupancy")
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--voxel-size", type=float, default=0.1)
    bench.add_argument("--max-range", type=float, default=20.0)
    bench.add_argument("--segment-length", type=float, default=10.0)
    bench.add_argument("--duration", type=float, default=1.0,
                       help="scene duration in seconds (synthetic scenes)")
    bench.add_argument("--rate", type=float, default=300_000.0,
                       help="sensor ray rate for synthetic scenes")
    bench.add_argument("--noise", type=float, default=0.0)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--online", action="store_true",
                       help="real-time replay with a bounded queue; late batches drop")
    bench.add_argument("--out", help="write the per-second CSV report here")
    bench.add_argument("--save-map", help="save the resulting map (OHMR1)")
    bench.add_argument("--save-rays", help="save the generated scene (OHMB1)")
    bench.add_argument("--export", nargs=2, metavar=("FORMAT", "PATH"),
                       help="export the final map; FORMAT is one of "
                            + ", ".join(EXPORT_FORMATS))

    export = sub.add_parser("export", help="convert a saved map")
    export.add_argument("map", help="OHMR1 map file")
    export.add_argument("format", choices=EXPORT_FORMATS)
    export.add_argument("out", help="output path")
    return parser


def _load_batches(args):
    """Ray batches of BATCH_PERIOD sensor seconds, in timestamp order."""
    if args.rays:
        records = read_rayset(args.rays)
    else:
        spec = SceneSpec(kind=args.scene, rate=args.rate, duration=args.duration,
                         noise=args.noise, seed=args.seed, max_range=args.max_range)
        records = generate_scene(spec)
        if args.save_rays:
            write_rayset(args.save_rays, records)
    if len(records) == 0:
        return []
    ts = records["timestamp"]
    t0 = ts[0]
    edges = np.searchsorted(ts, t0 + BATCH_PERIOD * np.arange(
        1, int(np.ceil((ts[-1] - t0) / BATCH_PERIOD)) + 2))
    batches = []
    start = 0
    for edge in edges:
        if edge > start:
            batches.append(to_ray_samples(records[start:edge]))
            start = edge
        if start >= len(records):
            break
    return batches


def _report(rows, dropped_rays: int, out_path):
    header = ("second,rays_in,rays_processed,segments,voxel_visits,"
              "cas_retries,cas_failures,wall_time,rays_per_second")
    lines = [header]
    total = BatchStats()
    for second, stats in rows:
        lines.append(f"{second},{stats.csv_row()}")
        total.rays_in += stats.rays_in
        total.rays_processed += stats.rays_processed
        total.segments += stats.segments
        total.voxel_visits += stats.voxel_visits
        total.cas_retries += stats.cas_retries
        total.cas_failures += stats.cas_failures
        total.wall_time += stats.wall_time
    lines.append(f"total,{total.csv_row()}")
    drop_pct = 100.0 * dropped_rays / total.rays_in if total.rays_in else 0.0
    lines.append(f"# dropped_rays={dropped_rays} ({drop_pct:.2f}%)")
    text = "\n".join(lines)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return total


def _run_offline(vmap, batches, mode, opts):
    rows = []
    for i, batch in enumerate(batches):
        stats = submit_batch(vmap, batch, mode, opts)
        rows.append((f"{i * BATCH_PERIOD:.1f}", stats))
    return rows, 0


def _run_online(vmap, batches, mode, opts):
    """Producer releases batches on the sensor clock into a 2-slot queue;
    whatever cannot be queued in time is dropped."""
    q: queue.Queue = queue.Queue(maxsize=2)
    dropped = 0
    rows = []

    def consumer():
        while True:
            item = q.get()
            if item is None:
                return
            i, batch = item
            stats = submit_batch(vmap, batch, mode, opts)
            rows.append((f"{i * BATCH_PERIOD:.1f}", stats))

    worker = threading.Thread(target=consumer)
    worker.start()
    start = time.perf_counter()
    try:
        for i, batch in enumerate(batches):
            release = start + i * BATCH_PERIOD
            now = time.perf_counter()
            if release > now:
                time.sleep(release - now)
            try:
                q.put_nowait((i, batch))
            except queue.Full:
                dropped += len(batch)
    finally:
        q.put(None)
        worker.join()
    return rows, dropped


def cmd_bench(args) -> int:
    try:
        cfg = MapConfig(voxel_size=args.voxel_size, max_ray_range=args.max_range,
                        segment_length=args.segment_length)
        opts = ExecutorOptions(worker_count=args.workers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    batches = _load_batches(args)
    if not batches:
        print("error: no rays to integrate", file=sys.stderr)
        return 2
    vmap = VoxelMap(cfg, MODE_LAYERS[args.mode])
    runner = _run_online if args.online else _run_offline
    rows, dropped = runner(vmap, batches, args.mode, opts)
    _report(rows, dropped, args.out)
    if args.save_map:
        vmap.save(args.save_map)
    if args.export:
        fmt, path = args.export
        if fmt not in EXPORT_FORMATS:
            print(f"error: unknown export format {fmt!r}", file=sys.stderr)
            return 2
        export_map(vmap, fmt, path)
    return 0


def cmd_export(args) -> int:
    vmap = VoxelMap.load(args.map)
    count = export_map(vmap, args.format, args.out)
    print(f"wrote {count} records to {args.out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_export(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
