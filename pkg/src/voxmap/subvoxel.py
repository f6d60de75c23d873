"""Packed 10-bit-per-axis sub-voxel mean.

The mean sample position within a voxel is stored as a fraction of the
voxel edge, quantized to 10 bits per axis and packed into one 32-bit word
(x in bits 0-9, y in 10-19, z in 20-29).  Decoding returns the bucket
midpoint (q + 0.5)/1024, halving worst-case quantization error.
"""
from __future__ import annotations

import numpy as np

QUANT = 1024
COUNT_MAX = 2**32 - 1


def pack_mean(offset) -> int:
    """Pack a per-axis voxel fraction triple (components in [0, 1)) into 32 bits."""
    packed = 0
    for axis in range(3):
        q = int(np.floor(float(offset[axis]) * QUANT))
        q = min(max(q, 0), QUANT - 1)
        packed |= q << (10 * axis)
    return packed


def unpack_mean(packed: int) -> np.ndarray:
    """Inverse of pack_mean; returns bucket midpoints in [0, 1)."""
    q = np.array(
        [(packed >> (10 * axis)) & (QUANT - 1) for axis in range(3)], dtype=np.float64
    )
    return (q + 0.5) / QUANT


def update_packed_mean(packed: int, count: int, sample_offset) -> tuple[int, int]:
    """Fold one sample offset into a packed running mean.

    Returns the new (packed, count).  The count saturates at 2**32 - 1,
    freezing the mean.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count >= COUNT_MAX:
        return packed, COUNT_MAX
    if count == 0:
        return pack_mean(sample_offset), 1
    m = unpack_mean(packed)
    s = np.asarray(sample_offset, dtype=np.float64)
    m = m + (s - m) / (count + 1)
    return pack_mean(m), count + 1
