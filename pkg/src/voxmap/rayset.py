"""Binary ray-set file format (OHMB1).

A pre-resolved origin/end record stream: fixed 40-byte little-endian
records after a small header.  Flags: bit 0 = has_sample, bit 1 = second
return.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .traversal import RaySample

MAGIC = b"OHMB1"
VERSION = 1

RAY_DTYPE = np.dtype(
    [
        ("timestamp", "<f8"),
        ("origin", "<f4", (3,)),
        ("end", "<f4", (3,)),
        ("intensity", "<f4"),
        ("flags", "<u4"),
    ]
)

FLAG_HAS_SAMPLE = 1 << 0
FLAG_SECOND_RETURN = 1 << 1


def write_rayset(path, records: np.ndarray) -> None:
    records = np.ascontiguousarray(records, dtype=RAY_DTYPE)
    ts = records["timestamp"]
    if len(ts) > 1 and np.any(np.diff(ts) < 0):
        raise ValueError("ray timestamps must be non-decreasing")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I Q", VERSION, len(records)))
        fh.write(records.tobytes())


def read_rayset(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path} is not a ray-set file")
    version, count = struct.unpack_from("<I Q", raw, 5)
    if version != VERSION:
        raise ValueError(f"unsupported ray-set version {version}")
    records = np.frombuffer(raw, dtype=RAY_DTYPE, count=count, offset=17)
    if len(records) != count:
        raise ValueError("ray-set record count does not match header")
    return records


def records_from_arrays(timestamps, origins, ends, intensities, has_sample,
                        second_return=None) -> np.ndarray:
    n = len(timestamps)
    records = np.zeros(n, dtype=RAY_DTYPE)
    records["timestamp"] = timestamps
    records["origin"] = origins
    records["end"] = ends
    records["intensity"] = intensities
    flags = np.where(np.asarray(has_sample, dtype=bool), FLAG_HAS_SAMPLE, 0)
    if second_return is not None:
        flags = flags | np.where(
            np.asarray(second_return, dtype=bool), FLAG_SECOND_RETURN, 0
        )
    records["flags"] = flags
    return records


def to_ray_samples(records: np.ndarray) -> list[RaySample]:
    return [
        RaySample(
            origin=rec["origin"].astype(np.float64),
            end=rec["end"].astype(np.float64),
            intensity=float(rec["intensity"]),
            has_sample=bool(rec["flags"] & FLAG_HAS_SAMPLE),
            timestamp=float(rec["timestamp"]),
        )
        for rec in records
    ]
